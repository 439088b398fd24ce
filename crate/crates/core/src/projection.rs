//! Cosine PCA: rows are L2-normalized, mean-centered, and projected onto the
//! top right singular vectors of the centered matrix.

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::EmbeddingSet;
use crate::error::{Error, Result};
use crate::kmeans::normalize_in_place;

pub const DEFAULT_SAMPLE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Components are fitted on a seeded uniform subsample when n exceeds this.
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            sample_cap: DEFAULT_SAMPLE_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub d: usize,
    pub dim: usize,
    /// Row-major `n x d`.
    pub coordinates: Vec<f64>,
    /// Row-major `d x dim`, orthonormal rows.
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Singular values of the centered fit matrix, descending (top `d`).
    pub singular_values: Vec<f64>,
    /// Rows used to fit the components.
    pub n_fit: usize,
    pub item_ids: Vec<u64>,
    pub domain_ids: Vec<i32>,
}

impl ProjectionResult {
    pub fn coordinate(&self, i: usize) -> &[f64] {
        &self.coordinates[i * self.d..(i + 1) * self.d]
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j * self.dim..(j + 1) * self.dim]
    }

    /// TSV with `item_id, domain_id, x, y, ...` columns.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut header = String::from("item_id\tdomain_id");
        for j in 0..self.d {
            header.push('\t');
            header.push_str(&axis_name(j));
        }
        writeln!(w, "{header}").map_err(io)?;
        for i in 0..self.item_ids.len() {
            write!(w, "{}\t{}", self.item_ids[i], self.domain_ids[i]).map_err(io)?;
            for x in self.coordinate(i) {
                write!(w, "\t{x:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn summary(&self, options: &PcaOptions) -> ProjectionSummary {
        ProjectionSummary {
            dims: self.d,
            n: self.item_ids.len(),
            n_fit: self.n_fit,
            sample_cap: options.sample_cap,
            seed: options.seed,
            explained_variance_ratio: self.explained_variance_ratio.clone(),
        }
    }
}

fn axis_name(j: usize) -> String {
    match j {
        0 => "x".into(),
        1 => "y".into(),
        _ => format!("pc{}", j + 1),
    }
}

/// Contents of the `<out>.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub dims: usize,
    pub n: usize,
    pub n_fit: usize,
    pub sample_cap: usize,
    pub seed: u64,
    pub explained_variance_ratio: Vec<f64>,
}

pub fn pca_project(data: &EmbeddingSet, d: usize) -> Result<ProjectionResult> {
    pca_project_with(data, d, &PcaOptions::default())
}

pub fn pca_project_with(
    data: &EmbeddingSet,
    d: usize,
    options: &PcaOptions,
) -> Result<ProjectionResult> {
    let n = data.len();
    let dim = data.dim();
    if n < 2 {
        return Err(Error::TooFewPointsPca(n));
    }

    let fit_rows: Vec<usize> = if n > options.sample_cap.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, options.sample_cap.max(2)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let n_fit = fit_rows.len();
    let max_d = (n_fit - 1).min(dim);
    if d == 0 || d > max_d {
        return Err(Error::DimsOutOfRange { d, max: max_d });
    }

    let unit_row = |i: usize| -> Vec<f64> {
        let mut v: Vec<f64> = data.vector(i).iter().map(|&x| x as f64).collect();
        normalize_in_place(&mut v);
        v
    };

    let mut mean = vec![0.0f64; dim];
    let mut fit = DMatrix::<f64>::zeros(n_fit, dim);
    for (r, &i) in fit_rows.iter().enumerate() {
        let v = unit_row(i);
        for (j, x) in v.iter().enumerate() {
            fit[(r, j)] = *x;
            mean[j] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_fit as f64);
    for r in 0..n_fit {
        for j in 0..dim {
            fit[(r, j)] -= mean[j];
        }
    }

    let (sigma, right) = right_singular_vectors(fit)?;
    let total: f64 = sigma.iter().map(|s| s * s).sum();

    let mut components = Vec::with_capacity(d * dim);
    for r in right.iter().take(d) {
        let mut v: Vec<f64> = r.clone();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend_from_slice(&v);
    }
    let explained_variance_ratio = sigma[..d]
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();

    let mut coordinates = vec![0.0f64; n * d];
    coordinates
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out)| {
            let mut v = unit_row(i);
            v.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
            for (j, o) in out.iter_mut().enumerate() {
                let c = &components[j * dim..(j + 1) * dim];
                *o = v.iter().zip(c).map(|(a, b)| a * b).sum();
            }
        });

    Ok(ProjectionResult {
        d,
        dim,
        coordinates,
        components,
        explained_variance_ratio,
        singular_values: sigma[..d].to_vec(),
        n_fit,
        item_ids: data.sentence_ids().to_vec(),
        domain_ids: data.domain_ids().to_vec(),
    })
}

/// Singular values (descending) and matching right singular vectors of `x`.
/// Tall matrices are reduced to their `R` factor first, which has the same
/// singular values and right singular vectors.
fn right_singular_vectors(x: DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let reduced = if x.nrows() > x.ncols() { x.qr().r() } else { x };
    let svd = reduced
        .try_svd(false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Internal("SVD did not converge".into()))?;
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rows = order
        .iter()
        .map(|&i| vt.row(i).iter().copied().collect())
        .collect();
    Ok((sigma, rows))
}
