//! End-to-end pipelines driven by a JSON config.
//!
//! `analyze` sweeps layers, then exports the best layer's model, labels,
//! purity report, confusion table and PCA coordinates. `adapt` clusters a
//! corpus at sentence or document level and partitions it into per-cluster
//! sub-corpora with a model and routing-table skeleton for runtime use.
//! Both write a `run.json` recording config, input checksums and version.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpusprep::{
    corpus_paths, partition_by_cluster, ParallelCorpus, PartitionPlan, PlanLevel,
};
use crate::embstore::{read_embeddings, EmbeddingSet, Level};
use crate::error::{Error, Result};
use crate::evaluation::{contingency, layer_sweep, purity, write_confusion_tsv, write_json};
use crate::kmeans::{assign, fit, KMeansConfig};
use crate::pooling::pool_documents;
use crate::projection::{pca_project_with, PcaOptions, DEFAULT_SAMPLE_CAP};
use crate::router::RoutingTable;

pub const TOOL: &str = "domclust";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_k() -> usize {
    4
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
fn default_true() -> bool {
    true
}
fn default_dims() -> usize {
    2
}
fn default_cap() -> usize {
    DEFAULT_SAMPLE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Embedding files, one per layer, in layer order.
    pub layers: Vec<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_dims")]
    pub pca_dims: usize,
    #[serde(default = "default_cap")]
    pub pca_sample_cap: usize,
    pub out_dir: PathBuf,
}

impl AnalyzeConfig {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            normalize: self.normalize,
        }
    }

    pub fn pca_options(&self) -> PcaOptions {
        PcaOptions {
            sample_cap: self.pca_sample_cap,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// Corpus prefix (`<prefix>.src`, `.tgt`, `.ids.tsv`).
    pub corpus: PathBuf,
    /// Sentence-level embeddings of the corpus source side, or document-level
    /// embeddings keyed by doc_id.
    pub embeddings: PathBuf,
    #[serde(default)]
    pub level: PlanLevel,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub out_dir: PathBuf,
}

impl AdaptConfig {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            normalize: self.normalize,
        }
    }
}

/// Loads a pipeline config; relative paths resolve against the config's directory.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl AnalyzeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Self = load_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.layers = c.layers.iter().map(|p| resolve(base, p)).collect();
        c.out_dir = resolve(base, &c.out_dir);
        Ok(c)
    }
}

impl AdaptConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Self = load_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.corpus = resolve(base, &c.corpus);
        c.embeddings = resolve(base, &c.embeddings);
        c.out_dir = resolve(base, &c.out_dir);
        Ok(c)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputChecksum {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<C> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: C,
    pub inputs: Vec<InputChecksum>,
}

fn checksums<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<Vec<InputChecksum>> {
    paths
        .into_iter()
        .map(|p| {
            Ok(InputChecksum {
                path: p.to_path_buf(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub index: usize,
    pub file: PathBuf,
    pub layer: u32,
    pub purity_majority: f64,
    pub purity_matched: f64,
    pub inertia: f64,
    pub counts_table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub best_layer: usize,
    pub layers: Vec<LayerSummary>,
    pub explained_variance_ratio: Vec<f64>,
}

/// File names inside an analyze bundle.
pub mod bundle {
    pub const REPORT: &str = "report.json";
    pub const LAYER_SWEEP: &str = "layer_sweep.json";
    pub const MODEL: &str = "model.json";
    pub const LABELS: &str = "labels.tsv";
    pub const PURITY: &str = "purity.json";
    pub const CONFUSION: &str = "confusion.tsv";
    pub const PCA: &str = "pca.tsv";
    pub const RUN: &str = "run.json";

    pub fn layer_counts(index: usize) -> String {
        format!("layer_{index:02}_counts.tsv")
    }
}

pub fn write_pca(
    data: &EmbeddingSet,
    dims: usize,
    options: &PcaOptions,
    out: &Path,
) -> Result<Vec<f64>> {
    let p = pca_project_with(data, dims, options)?;
    p.write_tsv(out)?;
    write_json(&p.summary(options), crate::embstore::sidecar_path(out))?;
    Ok(p.explained_variance_ratio)
}

pub fn analyze(config: &AnalyzeConfig) -> Result<AnalyzeReport> {
    let km = config.kmeans();
    km.validate()?;
    if config.layers.is_empty() {
        return Err(Error::Config("no layer files given".into()));
    }
    let sweep = layer_sweep(&config.layers, &km)?;
    let best = sweep.best().expect("non-empty sweep").index;
    let best_path = &config.layers[best];
    let data = read_embeddings(best_path)?;
    let model = fit(&data, &km)?;
    let labels = assign(&model, &data)?;
    let report = purity(&contingency(&labels, &data)?)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&sweep, out.join(bundle::LAYER_SWEEP))?;
    let mut layers = Vec::with_capacity(sweep.layers.len());
    for l in &sweep.layers {
        let name = bundle::layer_counts(l.index);
        l.report.table.write_counts_tsv(out.join(&name))?;
        layers.push(LayerSummary {
            index: l.index,
            file: l.file.clone(),
            layer: l.layer,
            purity_majority: l.report.purity_majority,
            purity_matched: l.report.purity_matched,
            inertia: l.inertia,
            counts_table: name,
        });
    }
    model.save(out.join(bundle::MODEL))?;
    labels.write_tsv(out.join(bundle::LABELS))?;
    write_json(&report, out.join(bundle::PURITY))?;
    write_confusion_tsv(
        &report,
        &data.meta.domain_names,
        out.join(bundle::CONFUSION),
    )?;
    let ratios = write_pca(
        &data,
        config.pca_dims,
        &config.pca_options(),
        &out.join(bundle::PCA),
    )?;

    let summary = AnalyzeReport {
        best_layer: best,
        layers,
        explained_variance_ratio: ratios,
    };
    write_json(&summary, out.join(bundle::REPORT))?;
    let run = RunRecord {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: "analyze".into(),
        seed: config.seed,
        config: config.clone(),
        inputs: checksums(config.layers.iter().map(PathBuf::as_path))?,
    };
    write_json(&run, out.join(bundle::RUN))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub level: PlanLevel,
    pub k: usize,
    pub inertia: f64,
    pub cluster_sizes: Vec<usize>,
}

/// Checks that embeddings and corpus describe the same sentences (or
/// documents) and returns the set to cluster. Nothing is written.
fn embeddings_for_level(
    corpus: &ParallelCorpus,
    emb: EmbeddingSet,
    level: PlanLevel,
) -> Result<EmbeddingSet> {
    let corpus_doc: HashMap<u64, u64> = corpus
        .pairs
        .iter()
        .map(|p| (p.sentence_id, p.doc_id))
        .collect();
    match (emb.meta.level, level) {
        (Level::Document, PlanLevel::Sentence) => Err(Error::Config(
            "sentence-level adaptation needs sentence-level embeddings".into(),
        )),
        (Level::Document, PlanLevel::Document) => {
            let docs: std::collections::BTreeSet<u64> = corpus_doc.values().copied().collect();
            let have: std::collections::BTreeSet<u64> =
                emb.sentence_ids().iter().copied().collect();
            if docs != have {
                return Err(Error::Config(format!(
                    "document embeddings cover {} documents, corpus has {}",
                    have.len(),
                    docs.len()
                )));
            }
            Ok(emb)
        }
        (Level::TokenPooledSentence, level) => {
            if emb.len() != corpus.len() {
                return Err(Error::Config(format!(
                    "{} embedding records for {} corpus pairs",
                    emb.len(),
                    corpus.len()
                )));
            }
            for r in emb.iter() {
                match corpus_doc.get(&r.sentence_id) {
                    None => {
                        return Err(Error::Config(format!(
                            "embedding sentence {} not in corpus",
                            r.sentence_id
                        )))
                    }
                    Some(&d) if d != r.doc_id => {
                        return Err(Error::Config(format!(
                            "sentence {}: doc_id {} in embeddings, {d} in corpus",
                            r.sentence_id, r.doc_id
                        )))
                    }
                    Some(_) => {}
                }
            }
            match level {
                PlanLevel::Sentence => Ok(emb),
                PlanLevel::Document => pool_documents(&emb),
            }
        }
    }
}

pub fn adapt(config: &AdaptConfig) -> Result<AdaptReport> {
    let km = config.kmeans();
    km.validate()?;
    let corpus = ParallelCorpus::read(&config.corpus)?;
    let emb = read_embeddings(&config.embeddings)?;
    let data = embeddings_for_level(&corpus, emb, config.level)?;
    let model = fit(&data, &km)?;
    let labels = assign(&model, &data)?;
    let plan = match config.level {
        PlanLevel::Sentence => PartitionPlan::from_sentence_labels(&labels, km.k)?,
        PlanLevel::Document => PartitionPlan::from_document_labels(&labels, &corpus, km.k)?,
    };
    plan.check(&corpus)?;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    model.save(out.join("model.json"))?;
    labels.write_tsv(out.join("labels.tsv"))?;
    write_json(&plan, out.join("plan.json"))?;
    RoutingTable::skeleton(km.k).save(out.join("routing.json"))?;
    let manifest = partition_by_cluster(&corpus, &plan, out.join("partition"))?;

    let mut inputs: Vec<PathBuf> = corpus_paths(&config.corpus).into();
    inputs.push(config.embeddings.clone());
    let run = RunRecord {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: "adapt".into(),
        seed: config.seed,
        config: config.clone(),
        inputs: checksums(inputs.iter().map(PathBuf::as_path))?,
    };
    write_json(&run, out.join("run.json"))?;
    Ok(AdaptReport {
        level: config.level,
        k: km.k,
        inertia: model.inertia,
        cluster_sizes: manifest.clusters.iter().map(|c| c.pairs).collect(),
    })
}
