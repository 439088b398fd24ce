//! Lloyd's k-means with k-means++ seeding and best-of-N restarts.
//!
//! All arithmetic runs in f64 over a working copy of the input (L2-normalized
//! rows when `normalize` is set). Parallel loops work on fixed-size row chunks
//! and reduce chunk results in order, so fitted models do not depend on the
//! rayon worker count.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::EmbeddingSet;
use crate::error::{Error, Result};

const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once the relative inertia improvement of an iteration drops below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_restarts() -> usize {
    10
}
fn default_max_iters() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-6
}
fn default_normalize() -> bool {
    true
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 4,
            restarts: default_restarts(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed: 0,
            normalize: default_normalize(),
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tol must be finite and >= 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Per-item cluster labels, aligned by position with `item_ids`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub item_ids: Vec<u64>,
    /// Squared distance to the chosen centroid.
    pub distances: Vec<f64>,
}

impl ClusterAssignment {
    pub fn with_capacity(n: usize) -> Self {
        ClusterAssignment {
            labels: Vec::with_capacity(n),
            item_ids: Vec::with_capacity(n),
            distances: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, item_id: u64, label: usize, distance: f64) {
        self.item_ids.push(item_id);
        self.labels.push(label);
        self.distances.push(distance);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of clusters implied by the labels (max label + 1).
    pub fn label_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Sum of squared distances, reduced in item order.
    pub fn inertia(&self) -> f64 {
        self.distances.iter().sum()
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "item_id\tcluster\tsqdist").map_err(io)?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{}\t{}\t{:?}",
                self.item_ids[i], self.labels[i], self.distances[i]
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = ClusterAssignment::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if n == 0 {
                if line.trim_end() != "item_id\tcluster\tsqdist" {
                    return Err(Error::Parse(format!(
                        "{}: expected header 'item_id<TAB>cluster<TAB>sqdist'",
                        path.display()
                    )));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = || {
                Error::Parse(format!(
                    "{}:{}: malformed line {line:?}",
                    path.display(),
                    n + 1
                ))
            };
            let mut f = line.split('\t');
            let id = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let label = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let dist = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            out.push(id, label, dist);
        }
        Ok(out)
    }
}

/// A fitted model. Centroids are stored row-major, `k x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct KMeansModel {
    dim: usize,
    centroids: Vec<f64>,
    pub config: KMeansConfig,
    /// Within-cluster sum of squared distances of the winning restart.
    pub inertia: f64,
    pub iterations_run: usize,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    dim: usize,
    config: KMeansConfig,
    inertia: f64,
    iterations_run: usize,
    #[serde(default)]
    warnings: Vec<String>,
    centroids: Vec<Vec<f64>>,
}

impl From<KMeansModel> for ModelFile {
    fn from(m: KMeansModel) -> Self {
        ModelFile {
            k: m.k(),
            dim: m.dim,
            centroids: m.centroids.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            config: m.config,
            inertia: m.inertia,
            iterations_run: m.iterations_run,
            warnings: m.warnings,
        }
    }
}

impl TryFrom<ModelFile> for KMeansModel {
    type Error = String;

    fn try_from(f: ModelFile) -> std::result::Result<Self, String> {
        if f.k == 0 {
            return Err("k must be at least 1".into());
        }
        f.config.validate().map_err(|e| e.to_string())?;
        if f.config.k != f.k || f.centroids.len() != f.k {
            return Err(format!(
                "k = {} but config.k = {} and {} centroid rows",
                f.k,
                f.config.k,
                f.centroids.len()
            ));
        }
        if f.dim == 0 {
            return Err("dim must be at least 1".into());
        }
        let mut centroids = Vec::with_capacity(f.k * f.dim);
        for (i, row) in f.centroids.iter().enumerate() {
            if row.len() != f.dim {
                return Err(format!(
                    "centroid {i} has length {}, expected {}",
                    row.len(),
                    f.dim
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(format!("centroid {i} has a non-finite entry"));
            }
            centroids.extend_from_slice(row);
        }
        if f.inertia.is_nan() || f.inertia < 0.0 {
            return Err("inertia must be non-negative".into());
        }
        Ok(KMeansModel {
            dim: f.dim,
            centroids,
            config: f.config,
            inertia: f.inertia,
            iterations_run: f.iterations_run,
            warnings: f.warnings,
        })
    }
}

impl KMeansModel {
    /// Builds a model from explicit centroids, e.g. for routing tests.
    pub fn from_centroids(centroids: Vec<Vec<f64>>, config: KMeansConfig) -> Result<Self> {
        let dim = centroids.first().map_or(0, Vec::len);
        KMeansModel::try_from(ModelFile {
            k: centroids.len(),
            dim,
            config: KMeansConfig {
                k: centroids.len(),
                ..config
            },
            inertia: 0.0,
            iterations_run: 0,
            warnings: Vec::new(),
            centroids,
        })
        .map_err(Error::Parse)
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.chunks(self.dim)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Nearest centroid for one raw vector, normalizing first when the model
    /// was fitted on normalized rows. Ties go to the lowest index.
    pub fn nearest(&self, vector: &[f32]) -> Result<(usize, f64)> {
        self.check_dim(vector.len())?;
        let mut p: Vec<f64> = vector.iter().map(|&v| v as f64).collect();
        if self.config.normalize {
            normalize_in_place(&mut p);
        }
        Ok(nearest_centroid(&p, &self.centroids, self.dim))
    }

    /// As [`KMeansModel::nearest`], for a vector already in f64.
    pub fn nearest_f64(&self, vector: &[f64]) -> Result<(usize, f64)> {
        self.check_dim(vector.len())?;
        let mut p = vector.to_vec();
        if self.config.normalize {
            normalize_in_place(&mut p);
        }
        Ok(nearest_centroid(&p, &self.centroids, self.dim))
    }

    pub fn assign_matrix(&self, vectors: &[f32], item_ids: &[u64]) -> Result<ClusterAssignment> {
        self.check_dim(if item_ids.is_empty() {
            self.dim
        } else {
            vectors.len() / item_ids.len()
        })?;
        if vectors.len() != item_ids.len() * self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vectors.len() / item_ids.len().max(1),
            });
        }
        let points = Points::from_f32(vectors, self.dim, self.config.normalize);
        let (labels, distances) = points.assign(&self.centroids);
        Ok(ClusterAssignment {
            labels,
            item_ids: item_ids.to_vec(),
            distances,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

pub fn save_model(model: &KMeansModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KMeansModel> {
    KMeansModel::load(path)
}

/// Labels every record with its nearest centroid.
pub fn assign(model: &KMeansModel, data: &EmbeddingSet) -> Result<ClusterAssignment> {
    model.check_dim(data.dim())?;
    model.assign_matrix(data.vectors(), data.sentence_ids())
}

/// What happened inside one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub final_inertia: f64,
    pub iterations: usize,
    pub empty_cluster_repairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub restarts: Vec<RestartTrace>,
    pub best: usize,
}

pub fn fit(data: &EmbeddingSet, config: &KMeansConfig) -> Result<KMeansModel> {
    fit_with_trace(data, config).map(|(m, _)| m)
}

pub fn fit_with_trace(
    data: &EmbeddingSet,
    config: &KMeansConfig,
) -> Result<(KMeansModel, FitTrace)> {
    fit_matrix(data.vectors(), data.dim(), config)
}

/// Fits on a row-major `n x dim` f32 matrix.
pub fn fit_matrix(
    vectors: &[f32],
    dim: usize,
    config: &KMeansConfig,
) -> Result<(KMeansModel, FitTrace)> {
    config.validate()?;
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::InvalidConfig(format!(
            "matrix of {} values is not a multiple of dim {dim}",
            vectors.len()
        )));
    }
    let n = vectors.len() / dim;
    if n < config.k {
        return Err(Error::TooFewPoints { n, k: config.k });
    }
    let points = Points::from_f32(vectors, dim, config.normalize);

    let mut traces: Vec<RestartTrace> = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, Vec<f64>)> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let (centroids, trace) = points.lloyd(config, &mut rng);
        let better = match &best {
            None => true,
            Some((b, _)) => trace.final_inertia < traces[*b].final_inertia,
        };
        traces.push(trace);
        if better {
            best = Some((restart, centroids));
        }
    }
    let (best_idx, centroids) = best.expect("restarts >= 1");
    let winner: &RestartTrace = &traces[best_idx];

    let mut warnings = Vec::new();
    let rows: Vec<&[f64]> = centroids.chunks(dim).collect();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i] == rows[j] {
                warnings.push(format!(
                    "duplicate centroids {i} and {j} (degenerate input)"
                ));
            }
        }
    }

    let model = KMeansModel {
        dim,
        centroids,
        config: config.clone(),
        inertia: winner.final_inertia,
        iterations_run: winner.iterations,
        warnings,
    };
    Ok((
        model,
        FitTrace {
            restarts: traces,
            best: best_idx,
        },
    ))
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn nearest_centroid(p: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Working matrix in f64.
struct Points {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    fn from_f32(vectors: &[f32], dim: usize, normalize: bool) -> Self {
        let mut data: Vec<f64> = vec![0.0; vectors.len()];
        data.par_chunks_mut(dim * CHUNK_ROWS)
            .zip(vectors.par_chunks(dim * CHUNK_ROWS))
            .for_each(|(dst, src)| {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s as f64;
                }
                if normalize {
                    dst.chunks_mut(dim).for_each(normalize_in_place);
                }
            });
        Points {
            n: vectors.len() / dim,
            dim,
            data,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest-centroid labels and squared distances for every row.
    fn assign(&self, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let dim = self.dim;
        let mut labels = vec![0usize; self.n];
        let mut dists = vec![0.0f64; self.n];
        self.data
            .par_chunks(dim * CHUNK_ROWS)
            .zip(labels.par_chunks_mut(CHUNK_ROWS))
            .zip(dists.par_chunks_mut(CHUNK_ROWS))
            .for_each(|((rows, l), d)| {
                for ((p, l), d) in rows.chunks_exact(dim).zip(l).zip(d) {
                    let (c, dist) = nearest_centroid(p, centroids, dim);
                    *l = c;
                    *d = dist;
                }
            });
        (labels, dists)
    }

    /// Sum in fixed chunk order.
    fn total(dists: &[f64]) -> f64 {
        dists
            .par_chunks(CHUNK_ROWS)
            .map(|c| c.iter().sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    }

    /// k-means++ seeding.
    fn init_plus_plus(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.dim;
        let mut centroids = Vec::with_capacity(k * dim);
        let first = rng.random_range(0..self.n);
        centroids.extend_from_slice(self.row(first));
        let mut d2: Vec<f64> = vec![0.0; self.n];
        self.update_min_dist(&mut d2, self.row(first), true);
        for _ in 1..k {
            let total = Points::total(&d2);
            let pick = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = None;
                for (i, &w) in d2.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    acc += w;
                    chosen = Some(i);
                    if acc > target {
                        break;
                    }
                }
                chosen.expect("positive total weight")
            } else {
                rng.random_range(0..self.n)
            };
            centroids.extend_from_slice(self.row(pick));
            let c = self.row(pick).to_vec();
            self.update_min_dist(&mut d2, &c, false);
        }
        centroids
    }

    fn update_min_dist(&self, d2: &mut [f64], centroid: &[f64], first: bool) {
        let dim = self.dim;
        self.data
            .par_chunks(dim * CHUNK_ROWS)
            .zip(d2.par_chunks_mut(CHUNK_ROWS))
            .for_each(|(rows, d)| {
                for (p, d) in rows.chunks_exact(dim).zip(d) {
                    let nd = sq_dist(p, centroid);
                    if first || nd < *d {
                        *d = nd;
                    }
                }
            });
    }

    /// Means of the current assignment; empty clusters move to the points
    /// farthest from their centroids. Returns the number of repairs.
    fn update(&self, labels: &[usize], dists: &[f64], k: usize, centroids: &mut [f64]) -> usize {
        let dim = self.dim;
        let partials: Vec<(Vec<f64>, Vec<usize>)> = self
            .data
            .par_chunks(dim * CHUNK_ROWS)
            .zip(labels.par_chunks(CHUNK_ROWS))
            .map(|(rows, l)| {
                let mut sums = vec![0.0f64; k * dim];
                let mut counts = vec![0usize; k];
                for (p, &c) in rows.chunks_exact(dim).zip(l) {
                    counts[c] += 1;
                    for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                        *s += x;
                    }
                }
                (sums, counts)
            })
            .collect();
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (s, c) in partials {
            sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }

        let mut taken: Vec<usize> = Vec::new();
        let mut repairs = 0;
        for c in 0..k {
            let row = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s / inv;
                }
            } else {
                let mut far: Option<(usize, f64)> = None;
                for (i, &d) in dists.iter().enumerate() {
                    if taken.contains(&i) {
                        continue;
                    }
                    if far.is_none_or(|(_, fd)| d > fd) {
                        far = Some((i, d));
                    }
                }
                if let Some((i, _)) = far {
                    taken.push(i);
                    row.copy_from_slice(self.row(i));
                }
                repairs += 1;
            }
        }
        repairs
    }

    fn lloyd(&self, config: &KMeansConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, RestartTrace) {
        let k = config.k;
        let mut centroids = self.init_plus_plus(k, rng);
        let (mut labels, mut dists) = self.assign(&centroids);
        let mut inertia = Points::total(&dists);
        let mut history = vec![inertia];
        let mut iterations = 0;
        let mut repairs_total = 0;
        while iterations < config.max_iters {
            let mut next = centroids.clone();
            let repairs = self.update(&labels, &dists, k, &mut next);
            repairs_total += repairs;
            iterations += 1;
            let (next_labels, next_dists) = self.assign(&next);
            let next_inertia = Points::total(&next_dists);
            history.push(next_inertia);
            let unchanged = repairs == 0 && next_labels == labels;
            let improvement = inertia - next_inertia;
            centroids = next;
            labels = next_labels;
            dists = next_dists;
            let prev = inertia;
            inertia = next_inertia;
            if unchanged || prev <= 0.0 || improvement < config.tol * prev {
                break;
            }
        }
        (
            centroids,
            RestartTrace {
                inertia_history: history,
                final_inertia: inertia,
                iterations,
                empty_cluster_repairs: repairs_total,
            },
        )
    }
}

/// Human-readable one-line summary of a fit, for CLI diagnostics.
pub fn describe(model: &KMeansModel, trace: &FitTrace) -> String {
    let mut s = format!(
        "k={} dim={} inertia={} (restart {} of {}, {} iterations)",
        model.k(),
        model.dim(),
        model.inertia,
        trace.best + 1,
        trace.restarts.len(),
        model.iterations_run
    );
    for w in &model.warnings {
        let _ = write!(s, "; warning: {w}");
    }
    s
}
