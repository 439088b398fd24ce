//! Clustering purity against oracle domains.
//!
//! Two alignments are reported. The majority variant maps each cluster to its
//! most frequent domain. The matched variant uses the best one-to-one
//! cluster/domain matching (Hungarian method), which also orders confusion
//! tables so each cluster sits against its matched domain.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embstore::{read_embeddings, EmbeddingSet};
use crate::error::{Error, Result};
use crate::kmeans::{assign, fit, ClusterAssignment, KMeansConfig};

/// Cluster x domain counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub cluster_ids: Vec<usize>,
    pub domain_ids: Vec<i32>,
    /// `counts[c][d]`, indexed by position in `cluster_ids` / `domain_ids`.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ContingencyTable {
    /// Table over clusters `0..k` and the given domain axis.
    pub fn from_counts(counts: Vec<Vec<u64>>, domain_ids: Vec<i32>) -> Self {
        let total = counts.iter().flatten().sum();
        ContingencyTable {
            cluster_ids: (0..counts.len()).collect(),
            domain_ids,
            counts,
            total,
        }
    }

    pub fn k(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_ids.len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.num_domains()];
        for row in &self.counts {
            sums.iter_mut().zip(row).for_each(|(s, c)| *s += c);
        }
        sums
    }

    /// Raw counts as TSV: header `cluster` then one column per domain id.
    pub fn write_counts_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<(usize, Vec<String>)> = self
            .cluster_ids
            .iter()
            .zip(&self.counts)
            .map(|(&c, r)| (c, r.iter().map(u64::to_string).collect()))
            .collect();
        write_table(path.as_ref(), &self.domain_header(&BTreeMap::new()), &rows)
    }

    fn domain_header(&self, names: &BTreeMap<i32, String>) -> Vec<String> {
        self.domain_ids
            .iter()
            .map(|d| names.get(d).cloned().unwrap_or_else(|| d.to_string()))
            .collect()
    }
}

fn write_table(path: &Path, header: &[String], rows: &[(usize, Vec<String>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "cluster\t{}", header.join("\t")).map_err(io)?;
    for (c, cells) in rows {
        writeln!(w, "{c}\t{}", cells.join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub purity_majority: f64,
    pub purity_matched: f64,
    /// One-to-one cluster -> domain pairs from the matched variant.
    pub matching: BTreeMap<usize, i32>,
    pub table: ContingencyTable,
}

/// Cross-tabulates cluster labels against the oracle domains of `data`,
/// pairing items by id. Rows cover clusters `0..=max label`.
pub fn contingency(
    assignment: &ClusterAssignment,
    data: &EmbeddingSet,
) -> Result<ContingencyTable> {
    if assignment.len() != data.len() {
        return Err(Error::IdMismatch(format!(
            "{} labels for {} records",
            assignment.len(),
            data.len()
        )));
    }
    let domain_of: HashMap<u64, i32> = data
        .sentence_ids()
        .iter()
        .copied()
        .zip(data.domain_ids().iter().copied())
        .collect();
    if domain_of.len() != data.len() {
        return Err(Error::IdMismatch("duplicate item ids in data".into()));
    }
    if let Some(r) = data.iter().find(|r| r.domain_id < 0) {
        return Err(Error::UnlabeledItem(r.sentence_id));
    }
    let domains: Vec<i32> = data
        .domain_ids()
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col: HashMap<i32, usize> = domains.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let k = assignment.label_count();
    let mut counts = vec![vec![0u64; domains.len()]; k];
    let mut seen = BTreeSet::new();
    for (&id, &label) in assignment.item_ids.iter().zip(&assignment.labels) {
        let d = domain_of
            .get(&id)
            .ok_or_else(|| Error::IdMismatch(format!("item {id} not present in data")))?;
        if !seen.insert(id) {
            return Err(Error::IdMismatch(format!("item {id} labeled twice")));
        }
        counts[label][col[d]] += 1;
    }
    Ok(ContingencyTable::from_counts(counts, domains))
}

pub fn purity(table: &ContingencyTable) -> Result<PurityReport> {
    if table.total == 0 || table.k() == 0 || table.num_domains() == 0 {
        return Err(Error::EmptyTable);
    }
    let total = table.total as f64;
    let majority: u64 = table
        .counts
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    let pairs = max_weight_matching(&table.counts);
    let matched: u64 = pairs.iter().map(|&(c, d)| table.counts[c][d]).sum();
    let matching = pairs
        .into_iter()
        .map(|(c, d)| (table.cluster_ids[c], table.domain_ids[d]))
        .collect();
    Ok(PurityReport {
        purity_majority: majority as f64 / total,
        purity_matched: matched as f64 / total,
        matching,
        table: table.clone(),
    })
}

/// Column-normalized percentages: each domain column sums to 100.
pub fn confusion_percent(table: &ContingencyTable) -> Result<Vec<Vec<f64>>> {
    let sums = table.column_sums();
    if let Some(j) = sums.iter().position(|&s| s == 0) {
        return Err(Error::EmptyDomainColumn(table.domain_ids[j]));
    }
    Ok(table
        .counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&sums)
                .map(|(&c, &s)| 100.0 * c as f64 / s as f64)
                .collect()
        })
        .collect())
}

/// Cluster display order: the cluster matched to each domain, in domain order,
/// then any unmatched clusters ascending.
pub fn matched_row_order(report: &PurityReport) -> Vec<usize> {
    let t = &report.table;
    let mut order = Vec::with_capacity(t.k());
    for d in &t.domain_ids {
        if let Some((&c, _)) = report.matching.iter().find(|(_, md)| *md == d) {
            order.push(t.cluster_ids.iter().position(|&x| x == c).unwrap());
        }
    }
    for i in 0..t.k() {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    order
}

/// Percent confusion table as TSV, rows in matched order.
pub fn write_confusion_tsv(
    report: &PurityReport,
    domain_names: &BTreeMap<i32, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let pct = confusion_percent(&report.table)?;
    let rows: Vec<(usize, Vec<String>)> = matched_row_order(report)
        .into_iter()
        .map(|i| {
            (
                report.table.cluster_ids[i],
                pct[i].iter().map(|x| format!("{x:?}")).collect(),
            )
        })
        .collect();
    write_table(
        path.as_ref(),
        &report.table.domain_header(domain_names),
        &rows,
    )
}

/// Maximum-weight one-to-one matching between rows and columns, covering
/// `min(rows, cols)` pairs. Returns `(row, col)` pairs sorted by row.
pub fn max_weight_matching(weights: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut pairs = if rows <= cols {
        let cost: Vec<Vec<i64>> = weights
            .iter()
            .map(|r| r.iter().map(|&w| -(w as i64)).collect())
            .collect();
        hungarian(&cost).into_iter().enumerate().collect::<Vec<_>>()
    } else {
        let cost: Vec<Vec<i64>> = (0..cols)
            .map(|c| (0..rows).map(|r| -(weights[r][c] as i64)).collect())
            .collect();
        hungarian(&cost)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>()
    };
    pairs.sort_unstable();
    pairs
}

/// Minimum-cost assignment for an `n x m` cost matrix with `n <= m`, using
/// row/column potentials and shortest augmenting paths. Returns the column
/// assigned to each row.
fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based; index 0 is the virtual source column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    /// Position in the input file list.
    pub index: usize,
    pub file: PathBuf,
    /// Layer number from the file's metadata sidecar.
    pub layer: u32,
    pub inertia: f64,
    pub report: PurityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub config: KMeansConfig,
    pub layers: Vec<LayerResult>,
}

impl LayerSweep {
    /// Layer with the highest majority purity; earliest wins ties.
    pub fn best(&self) -> Option<&LayerResult> {
        self.layers
            .iter()
            .fold(None, |best: Option<&LayerResult>, l| match best {
                Some(b) if b.report.purity_majority >= l.report.purity_majority => Some(b),
                _ => Some(l),
            })
    }
}

/// Fits, assigns and scores one embedding set.
pub fn evaluate_set(data: &EmbeddingSet, config: &KMeansConfig) -> Result<(f64, PurityReport)> {
    if let Some(r) = data.iter().find(|r| r.domain_id < 0) {
        return Err(Error::UnlabeledItem(r.sentence_id));
    }
    let model = fit(data, config)?;
    let labels = assign(&model, data)?;
    let table = contingency(&labels, data)?;
    Ok((model.inertia, purity(&table)?))
}

/// Runs fit + assign + purity for each file, in input order. Every file must
/// carry the same (item id, domain) pairs; dimensions may differ.
pub fn layer_sweep<P: AsRef<Path>>(files: &[P], config: &KMeansConfig) -> Result<LayerSweep> {
    config.validate()?;
    let mut reference: Option<Vec<(u64, i32)>> = None;
    let mut layers = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let path = path.as_ref();
        let wrap = |e: Error| Error::Layer {
            layer: index,
            path: path.to_path_buf(),
            source: Box::new(e),
        };
        let data = read_embeddings(path).map_err(wrap)?;
        let mut items: Vec<(u64, i32)> = data
            .sentence_ids()
            .iter()
            .copied()
            .zip(data.domain_ids().iter().copied())
            .collect();
        items.sort_unstable();
        match &reference {
            None => reference = Some(items),
            Some(r) if *r != items => return Err(Error::InconsistentItems { layer: index }),
            Some(_) => {}
        }
        let (inertia, report) = evaluate_set(&data, config).map_err(wrap)?;
        layers.push(LayerResult {
            index,
            file: path.to_path_buf(),
            layer: data.meta.layer,
            inertia,
            report,
        });
    }
    Ok(LayerSweep {
        config: config.clone(),
        layers,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
