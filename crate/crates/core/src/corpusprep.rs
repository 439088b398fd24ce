//! Parallel-corpus hygiene and partitioning.
//!
//! On disk a corpus is three aligned files sharing a prefix: `<prefix>.src`
//! and `<prefix>.tgt` (UTF-8, one sentence per line) and `<prefix>.ids.tsv`
//! with columns `sentence_id, doc_id, domain_id, line_number` (1-based).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kmeans::ClusterAssignment;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub sentence_id: u64,
    pub doc_id: u64,
    pub domain_id: i32,
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(sentence_id: u64, doc_id: u64, domain_id: i32, source: &str, target: &str) -> Self {
        SentencePair {
            sentence_id,
            doc_id,
            domain_id,
            source: source.to_owned(),
            target: target.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

pub fn corpus_paths(prefix: &Path) -> [PathBuf; 3] {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    [with(".src"), with(".tgt"), with(".ids.tsv")]
}

const IDS_HEADER: &str = "sentence_id\tdoc_id\tdomain_id\tline_number";

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Result<Self> {
        let c = ParallelCorpus { pairs };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for p in &self.pairs {
            if !seen.insert(p.sentence_id) {
                return Err(Error::Corpus(format!(
                    "duplicate sentence_id {}",
                    p.sentence_id
                )));
            }
            if p.source.contains('\n') || p.target.contains('\n') {
                return Err(Error::Corpus(format!(
                    "sentence {} contains a line break",
                    p.sentence_id
                )));
            }
        }
        Ok(())
    }

    /// Distinct document ids in first-appearance order.
    pub fn documents(&self) -> Vec<u64> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .filter(|p| seen.insert(p.doc_id))
            .map(|p| p.doc_id)
            .collect()
    }

    /// The exact bytes of the `.src`, `.tgt` and `.ids.tsv` files.
    pub fn serialize(&self) -> [String; 3] {
        let mut src = String::new();
        let mut tgt = String::new();
        let mut ids = String::from(IDS_HEADER);
        ids.push('\n');
        for (i, p) in self.pairs.iter().enumerate() {
            src.push_str(&p.source);
            src.push('\n');
            tgt.push_str(&p.target);
            tgt.push('\n');
            ids.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                p.sentence_id,
                p.doc_id,
                p.domain_id,
                i + 1
            ));
        }
        [src, tgt, ids]
    }

    /// SHA-256 of each serialized file, in `.src`, `.tgt`, `.ids.tsv` order.
    pub fn checksums(&self) -> [String; 3] {
        self.serialize().map(|s| sha256_hex(s.as_bytes()))
    }

    pub fn write(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let paths = corpus_paths(prefix.as_ref());
        for (path, body) in paths.iter().zip(self.serialize()) {
            std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read(prefix: impl AsRef<Path>) -> Result<Self> {
        let [src_p, tgt_p, ids_p] = corpus_paths(prefix.as_ref());
        let read = |p: &PathBuf| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let src = read(&src_p)?;
        let tgt = read(&tgt_p)?;
        let ids = read(&ids_p)?;
        let src_lines = split_lines(&src);
        let tgt_lines = split_lines(&tgt);
        if src_lines.len() != tgt_lines.len() {
            return Err(Error::Corpus(format!(
                "{} has {} lines but {} has {}",
                src_p.display(),
                src_lines.len(),
                tgt_p.display(),
                tgt_lines.len()
            )));
        }
        let mut rows = split_lines(&ids).into_iter();
        match rows.next() {
            Some(h) if h == IDS_HEADER => {}
            _ => {
                return Err(Error::Corpus(format!(
                    "{}: expected header '{}'",
                    ids_p.display(),
                    IDS_HEADER.replace('\t', "<TAB>")
                )))
            }
        }
        let mut pairs = Vec::with_capacity(src_lines.len());
        let mut used = vec![false; src_lines.len()];
        for (n, row) in rows.enumerate() {
            let bad = || {
                Error::Corpus(format!(
                    "{}:{}: malformed row {row:?}",
                    ids_p.display(),
                    n + 2
                ))
            };
            let f: Vec<&str> = row.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let sentence_id = f[0].parse().map_err(|_| bad())?;
            let doc_id = f[1].parse().map_err(|_| bad())?;
            let domain_id = f[2].parse().map_err(|_| bad())?;
            let line: usize = f[3].parse().map_err(|_| bad())?;
            if line == 0 || line > src_lines.len() || std::mem::replace(&mut used[line - 1], true) {
                return Err(Error::Corpus(format!(
                    "{}:{}: line_number {line} out of range or reused",
                    ids_p.display(),
                    n + 2
                )));
            }
            pairs.push(SentencePair::new(
                sentence_id,
                doc_id,
                domain_id,
                src_lines[line - 1],
                tgt_lines[line - 1],
            ));
        }
        if pairs.len() != src_lines.len() {
            return Err(Error::Corpus(format!(
                "{} maps {} lines, text files have {}",
                ids_p.display(),
                pairs.len(),
                src_lines.len()
            )));
        }
        ParallelCorpus::new(pairs)
    }
}

/// Lines split on `\n` only; a final newline does not start an empty line.
fn split_lines(s: &str) -> Vec<&str> {
    let body = s.strip_suffix('\n').unwrap_or(s);
    if s.is_empty() {
        return Vec::new();
    }
    body.split('\n').collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub max_tokens: usize,
    pub ratio: f64,
    pub alpha_frac: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            max_tokens: 100,
            ratio: 9.0,
            alpha_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscardRule {
    Empty,
    TooLong,
    LengthRatio,
    NonAlphabetic,
}

/// Discards per rule; a pair counts under the first rule it breaks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub kept: usize,
    pub empty: usize,
    pub too_long: usize,
    pub length_ratio: usize,
    pub non_alphabetic: usize,
}

fn non_alpha_fraction(s: &str) -> f64 {
    let (mut counted, mut non_alpha) = (0usize, 0usize);
    for c in s.chars().filter(|c| !c.is_whitespace()) {
        counted += 1;
        if !c.is_alphabetic() {
            non_alpha += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        non_alpha as f64 / counted as f64
    }
}

/// The first cleaning rule the pair breaks, if any.
pub fn discard_rule(source: &str, target: &str, cfg: &CleanConfig) -> Option<DiscardRule> {
    let s_tok = source.split_whitespace().count();
    let t_tok = target.split_whitespace().count();
    if s_tok == 0 || t_tok == 0 {
        return Some(DiscardRule::Empty);
    }
    if s_tok > cfg.max_tokens || t_tok > cfg.max_tokens {
        return Some(DiscardRule::TooLong);
    }
    let (long, short) = (s_tok.max(t_tok) as f64, s_tok.min(t_tok) as f64);
    if long >= cfg.ratio * short {
        return Some(DiscardRule::LengthRatio);
    }
    if non_alpha_fraction(source) > cfg.alpha_frac || non_alpha_fraction(target) > cfg.alpha_frac {
        return Some(DiscardRule::NonAlphabetic);
    }
    None
}

pub fn clean(corpus: &ParallelCorpus, cfg: &CleanConfig) -> (ParallelCorpus, CleanStats) {
    let mut stats = CleanStats::default();
    let mut kept = Vec::with_capacity(corpus.len());
    for p in &corpus.pairs {
        match discard_rule(&p.source, &p.target, cfg) {
            None => {
                stats.kept += 1;
                kept.push(p.clone());
            }
            Some(DiscardRule::Empty) => stats.empty += 1,
            Some(DiscardRule::TooLong) => stats.too_long += 1,
            Some(DiscardRule::LengthRatio) => stats.length_ratio += 1,
            Some(DiscardRule::NonAlphabetic) => stats.non_alphabetic += 1,
        }
    }
    (ParallelCorpus { pairs: kept }, stats)
}

fn trim_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

fn pair_key(p: &SentencePair) -> (&str, &str) {
    (trim_newline(&p.source), trim_newline(&p.target))
}

/// Drops evaluation pairs whose (source, target) also occurs in training.
pub fn dedup_eval(train: &ParallelCorpus, eval: &ParallelCorpus) -> ParallelCorpus {
    let seen: HashSet<(&str, &str)> = train.pairs.iter().map(pair_key).collect();
    ParallelCorpus {
        pairs: eval
            .pairs
            .iter()
            .filter(|p| !seen.contains(&pair_key(p)))
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Shuffles documents by seed and hands each to the split furthest below
/// its sentence-count target. Documents are never divided.
pub fn split_documents(corpus: &ParallelCorpus, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidFractions(format!(
            "{fractions:?}: all must be positive"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!(
            "{fractions:?} sums to {sum}"
        )));
    }
    let mut docs: Vec<u64> = corpus.documents();
    if docs.len() < 3 {
        return Err(Error::TooFewDocuments(docs.len()));
    }
    docs.sort_unstable();
    let mut sizes: HashMap<u64, usize> = HashMap::new();
    for p in &corpus.pairs {
        *sizes.entry(p.doc_id).or_default() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);

    let n = corpus.len() as f64;
    let targets: Vec<f64> = fractions.iter().map(|f| f * n).collect();
    let mut filled = [0usize; 3];
    let mut split_of: HashMap<u64, usize> = HashMap::with_capacity(docs.len());
    for doc in docs {
        let mut best = 0;
        for s in 1..3 {
            if targets[s] - filled[s] as f64 > targets[best] - filled[best] as f64 {
                best = s;
            }
        }
        filled[best] += sizes[&doc];
        split_of.insert(doc, best);
    }

    let mut parts: [Vec<SentencePair>; 3] = Default::default();
    for p in &corpus.pairs {
        parts[split_of[&p.doc_id]].push(p.clone());
    }
    let [train, dev, test] = parts;
    Ok(Splits {
        train: ParallelCorpus { pairs: train },
        dev: ParallelCorpus { pairs: dev },
        test: ParallelCorpus { pairs: test },
    })
}

/// Exactly `n_per_domain` pairs from every domain, uniformly at random,
/// kept in corpus order.
pub fn sample_per_domain(
    corpus: &ParallelCorpus,
    n_per_domain: usize,
    seed: u64,
) -> Result<ParallelCorpus> {
    let mut by_domain: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.pairs.iter().enumerate() {
        by_domain.entry(p.domain_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n_per_domain * by_domain.len());
    for (&domain, rows) in &by_domain {
        if rows.len() < n_per_domain {
            return Err(Error::InsufficientDomain {
                domain,
                available: rows.len(),
                requested: n_per_domain,
            });
        }
        chosen.extend(
            rand::seq::index::sample(&mut rng, rows.len(), n_per_domain)
                .into_iter()
                .map(|i| rows[i]),
        );
    }
    chosen.sort_unstable();
    Ok(ParallelCorpus {
        pairs: chosen
            .into_iter()
            .map(|i| corpus.pairs[i].clone())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlanLevel {
    #[default]
    Sentence,
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub assignment: BTreeMap<u64, usize>,
    pub k: usize,
    pub level: PlanLevel,
}

impl PartitionPlan {
    /// Sentence-level plan from sentence labels.
    pub fn from_sentence_labels(labels: &ClusterAssignment, k: usize) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (&id, &c) in labels.item_ids.iter().zip(&labels.labels) {
            if c >= k {
                return Err(Error::Corpus(format!(
                    "label {c} for sentence {id} is not below k = {k}"
                )));
            }
            if assignment.insert(id, c).is_some() {
                return Err(Error::Corpus(format!("sentence {id} labeled twice")));
            }
        }
        Ok(PartitionPlan {
            assignment,
            k,
            level: PlanLevel::Sentence,
        })
    }

    /// Document-level plan: every sentence takes its document's label.
    pub fn from_document_labels(
        doc_labels: &ClusterAssignment,
        corpus: &ParallelCorpus,
        k: usize,
    ) -> Result<Self> {
        let by_doc: HashMap<u64, usize> = doc_labels
            .item_ids
            .iter()
            .copied()
            .zip(doc_labels.labels.iter().copied())
            .collect();
        let mut assignment = BTreeMap::new();
        for p in &corpus.pairs {
            let &c = by_doc.get(&p.doc_id).ok_or(Error::MissingDocument {
                sentence_id: p.sentence_id,
                doc_id: p.doc_id,
            })?;
            if c >= k {
                return Err(Error::Corpus(format!(
                    "label {c} for document {} is not below k = {k}",
                    p.doc_id
                )));
            }
            assignment.insert(p.sentence_id, c);
        }
        Ok(PartitionPlan {
            assignment,
            k,
            level: PlanLevel::Document,
        })
    }

    /// Checks coverage of `corpus` and, for document plans, that no document
    /// is split across clusters.
    pub fn check(&self, corpus: &ParallelCorpus) -> Result<()> {
        let mut doc_cluster: HashMap<u64, usize> = HashMap::new();
        for p in &corpus.pairs {
            let &c = self
                .assignment
                .get(&p.sentence_id)
                .ok_or(Error::UnassignedSentence(p.sentence_id))?;
            if c >= self.k {
                return Err(Error::Corpus(format!(
                    "cluster {c} is not below k = {}",
                    self.k
                )));
            }
            if self.level == PlanLevel::Document {
                let prev = *doc_cluster.entry(p.doc_id).or_insert(c);
                if prev != c {
                    return Err(Error::Corpus(format!(
                        "document {} spans clusters {prev} and {c}",
                        p.doc_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterFiles {
    pub cluster: usize,
    pub pairs: usize,
    pub documents: usize,
    pub prefix: String,
    pub sha256: [String; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub k: usize,
    pub level: PlanLevel,
    pub total_pairs: usize,
    /// SHA-256 of the input corpus as `.src`, `.tgt`, `.ids.tsv`.
    pub input_sha256: [String; 3],
    pub clusters: Vec<ClusterFiles>,
}

/// Splits the corpus into one sub-corpus per cluster in memory, input order kept.
pub fn split_by_cluster(
    corpus: &ParallelCorpus,
    plan: &PartitionPlan,
) -> Result<Vec<ParallelCorpus>> {
    plan.check(corpus)?;
    let mut parts = vec![ParallelCorpus::default(); plan.k];
    for p in &corpus.pairs {
        parts[plan.assignment[&p.sentence_id]].pairs.push(p.clone());
    }
    Ok(parts)
}

/// Writes `cluster_<c>.{src,tgt,ids.tsv}` for every cluster plus `manifest.json`.
pub fn partition_by_cluster(
    corpus: &ParallelCorpus,
    plan: &PartitionPlan,
    out_dir: impl AsRef<Path>,
) -> Result<PartitionManifest> {
    let out_dir = out_dir.as_ref();
    let parts = split_by_cluster(corpus, plan)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut clusters = Vec::with_capacity(parts.len());
    for (c, part) in parts.iter().enumerate() {
        let prefix = format!("cluster_{c}");
        part.write(out_dir.join(&prefix))?;
        clusters.push(ClusterFiles {
            cluster: c,
            pairs: part.len(),
            documents: part.documents().len(),
            prefix,
            sha256: part.checksums(),
        });
    }
    let manifest = PartitionManifest {
        k: plan.k,
        level: plan.level,
        total_pairs: corpus.len(),
        input_sha256: corpus.checksums(),
        clusters,
    };
    crate::evaluation::write_json(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}
