//! Brute-force reference computations, deliberately independent of the
//! library's own algorithms.

use nalgebra::{DMatrix, SymmetricEigen};

/// Within-cluster sum of squares of a partition of 2D points.
pub fn sse(points: &[[f64; 2]], blocks: &[Vec<usize>]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let n = b.len() as f64;
            let mx = b.iter().map(|&i| points[i][0]).sum::<f64>() / n;
            let my = b.iter().map(|&i| points[i][1]).sum::<f64>() / n;
            b.iter()
                .map(|&i| (points[i][0] - mx).powi(2) + (points[i][1] - my).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Every partition of `0..n` into exactly `k` non-empty blocks (restricted growth strings).
pub fn partitions(n: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    fn rec(
        i: usize,
        n: usize,
        k: usize,
        labels: &mut Vec<usize>,
        used: usize,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if i == n {
            if used == k {
                let mut blocks = vec![Vec::new(); k];
                for (p, &l) in labels.iter().enumerate() {
                    blocks[l].push(p);
                }
                out.push(blocks);
            }
            return;
        }
        for l in 0..(used + 1).min(k) {
            labels.push(l);
            rec(i + 1, n, k, labels, used.max(l + 1), out);
            labels.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), 0, &mut out);
    out
}

/// Minimum SSE over all 4-partitions, and the minimizing partition.
pub fn best_partition(points: &[[f64; 2]], k: usize) -> (Vec<Vec<usize>>, f64, usize) {
    let all = partitions(points.len(), k);
    let count = all.len();
    let (b, s) = all
        .into_iter()
        .map(|b| {
            let s = sse(points, &b);
            (b, s)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    (b, s, count)
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Largest diagonal sum over all row permutations of a square table.
pub fn brute_matched(counts: &[Vec<u64>]) -> u64 {
    brute_matched_over(&permutations(counts.len()), counts)
}

/// As `brute_matched`, with the permutations supplied by the caller.
pub fn brute_matched_over(perms: &[Vec<usize>], counts: &[Vec<u64>]) -> u64 {
    perms
        .iter()
        .map(|p| p.iter().enumerate().map(|(r, &c)| counts[r][c]).sum())
        .max()
        .unwrap()
}

/// Rows scaled to unit length, in f64.
pub fn unit_rows(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Eigenpairs of the sample covariance, sorted by decreasing eigenvalue.
pub fn covariance_eigen(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for r in rows {
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    cov /= (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    (
        order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect(),
    )
}

/// 50 x 6 data with a well separated spectrum.
pub fn anisotropic_rows(seed: u64) -> Vec<Vec<f32>> {
    let mut rows = super::random_rows(50, 6, seed);
    for r in &mut rows {
        for (j, x) in r.iter_mut().enumerate() {
            *x = *x * (6 - j) as f32 + 3.0;
        }
    }
    rows
}
