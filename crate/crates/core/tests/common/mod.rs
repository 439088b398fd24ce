#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use domclust::corpusprep::{DiscardRule, ParallelCorpus, SentencePair};
use domclust::embstore::EmbeddingWriter;
use domclust::{EmbeddingMeta, EmbeddingRecord, EmbeddingSet, Level};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn meta_with_domains(n: usize) -> EmbeddingMeta {
    EmbeddingMeta {
        model_name: "synthetic".into(),
        layer: 0,
        level: Level::TokenPooledSentence,
        language: "xx".into(),
        domain_names: (0..n as i32).map(|d| (d, format!("domain{d}"))).collect(),
    }
}

/// Isotropic Gaussian blobs: domain `d` has mean `offset * e_d`, noise `sigma`
/// per coordinate, so domain means are `offset * sqrt(2)` apart.
/// Records are interleaved by domain; doc_id groups `doc_size` consecutive
/// sentences of one domain.
pub fn gaussian_domains(
    n_domains: usize,
    per_domain: usize,
    dim: usize,
    offset: f64,
    sigma: f64,
    doc_size: usize,
    seed: u64,
) -> EmbeddingSet {
    let mut r = rng(seed);
    let mut set =
        EmbeddingSet::with_capacity(dim, n_domains * per_domain, meta_with_domains(n_domains))
            .unwrap();
    let docs_per_domain = per_domain.div_ceil(doc_size);
    let mut v = vec![0f32; dim];
    for i in 0..per_domain {
        for d in 0..n_domains {
            for (j, x) in v.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut r);
                *x = (sigma * z + if j == d { offset } else { 0.0 }) as f32;
            }
            let sid = (i * n_domains + d) as u64;
            let doc = (d * docs_per_domain + i / doc_size) as u64;
            set.push(domclust::embstore::RecordRef {
                sentence_id: sid,
                doc_id: doc,
                domain_id: d as i32,
                vector: &v,
            })
            .unwrap();
        }
    }
    set
}

/// Generator for the sentence-versus-document comparison. Constants come from
/// a Monte Carlo nearest-true-mean oracle (see `bayes_accuracy`): with unit
/// offsets in 32 dimensions and noise 0.6 the oracle accuracy is ~0.74 per
/// sentence and ~1.0 for 20-sentence document means.
pub const TREND_DIM: usize = 32;
pub const TREND_OFFSET: f64 = 1.0;
pub const TREND_SIGMA: f64 = 0.6;
pub const TREND_DOC_SIZE: usize = 20;
pub const TREND_DOCS_PER_DOMAIN: usize = 30;

pub fn trend_set(seed: u64) -> EmbeddingSet {
    gaussian_domains(
        4,
        TREND_DOCS_PER_DOMAIN * TREND_DOC_SIZE,
        TREND_DIM,
        TREND_OFFSET,
        TREND_SIGMA,
        TREND_DOC_SIZE,
        seed,
    )
}

/// Fraction of samples whose nearest true domain mean is their own domain,
/// when averaging `pool` noise draws (pool = 1 for sentences).
pub fn bayes_accuracy(
    dim: usize,
    offset: f64,
    sigma: f64,
    pool: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let mut correct = 0usize;
    let s = sigma / (pool as f64).sqrt();
    for t in 0..trials {
        let d = t % 4;
        let x: Vec<f64> = (0..dim)
            .map(|j| {
                let z: f64 = StandardNormal.sample(&mut r);
                s * z + if j == d { offset } else { 0.0 }
            })
            .collect();
        let best = (0..4)
            .map(|m| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let mu = if j == m { offset } else { 0.0 };
                        (v - mu) * (v - mu)
                    })
                    .sum::<f64>()
            })
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        correct += (best == d) as usize;
    }
    correct as f64 / trials as f64
}

/// Two points at each corner (+-10, +-10) with jitter 0.01.
pub fn planted_pairs(seed: u64) -> Vec<[f32; 2]> {
    let mut r = rng(seed);
    let mut pts = Vec::new();
    for (cx, cy) in [(10.0, 10.0), (-10.0, 10.0), (-10.0, -10.0), (10.0, -10.0)] {
        for _ in 0..2 {
            pts.push([
                cx + r.random_range(-0.01..0.01f32),
                cy + r.random_range(-0.01..0.01f32),
            ]);
        }
    }
    pts
}

pub fn set_from_rows(rows: &[Vec<f32>]) -> EmbeddingSet {
    EmbeddingSet::from_records(
        rows[0].len(),
        EmbeddingMeta::default(),
        rows.iter().enumerate().map(|(i, v)| EmbeddingRecord {
            sentence_id: i as u64,
            doc_id: i as u64,
            domain_id: 0,
            vector: v.clone(),
        }),
    )
    .unwrap()
}

pub fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0f32)).collect())
        .collect()
}

/// Streams `n` Gaussian-blob records straight to disk without holding them.
pub fn write_large_blobs(path: &Path, n: usize, dim: usize, k: usize, seed: u64) {
    let mut r = rng(seed);
    let mut w = EmbeddingWriter::create(path, dim).unwrap();
    let mut v = vec![0f32; dim];
    for i in 0..n {
        let c = i % k;
        for (j, x) in v.iter_mut().enumerate() {
            let z: f32 = StandardNormal.sample(&mut r);
            *x = z + if j % k == c { 8.0 } else { 0.0 };
        }
        w.write(domclust::embstore::RecordRef {
            sentence_id: i as u64,
            doc_id: (i / 10) as u64,
            domain_id: c as i32,
            vector: &v,
        })
        .unwrap();
    }
    w.finish(&meta_with_domains(k)).unwrap();
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_domclust"))
}

pub fn domclust(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut c = Command::new(bin());
    for a in args {
        c.arg(a);
    }
    c.output().expect("spawn domclust")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "domclust failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn words(n: usize) -> String {
    vec!["word"; n].join(" ")
}

/// Twelve pairs on the edges of every cleaning rule, with the rule each
/// one should fall under (`None` = kept).
pub fn cleaning_fixture() -> (ParallelCorpus, Vec<Option<DiscardRule>>) {
    use DiscardRule::*;
    let cases: Vec<(String, String, Option<DiscardRule>)> = vec![
        (words(100), words(100), None),
        (words(101), words(101), Some(TooLong)),
        (words(8), "word".into(), None),
        (words(9), "word".into(), Some(LengthRatio)),
        ("ab 12".into(), "hello there".into(), None),
        ("1234 56".into(), "numbers only".into(), Some(NonAlphabetic)),
        ("".into(), "nothing on the left".into(), Some(Empty)),
        ("nothing on the right".into(), "   ".into(), Some(Empty)),
        ("the cat sat".into(), "le chat".into(), None),
        ("one".into(), words(9), Some(LengthRatio)),
        ("héllo wörld".into(), "ça va".into(), None),
        ("fine text".into(), "a1!".into(), Some(NonAlphabetic)),
    ];
    let expected = cases.iter().map(|c| c.2).collect();
    let pairs = cases
        .iter()
        .enumerate()
        .map(|(i, (s, t, _))| SentencePair::new(i as u64 + 1, i as u64 / 2, 0, s, t))
        .collect();
    (ParallelCorpus::new(pairs).unwrap(), expected)
}

/// `n_docs` documents of 1..=max_doc sentences each, spread over 4 domains.
pub fn random_corpus(n_docs: usize, max_doc: usize, seed: u64) -> ParallelCorpus {
    let mut r = rng(seed);
    let mut pairs = Vec::new();
    let mut id = 0u64;
    for d in 0..n_docs as u64 {
        let size = r.random_range(1..=max_doc);
        for s in 0..size {
            pairs.push(SentencePair::new(
                id,
                d,
                (d % 4) as i32,
                &format!("source {d} {s} {}", r.random_range(0..1000u32)),
                &format!("target {d} {s}"),
            ));
            id += 1;
        }
    }
    ParallelCorpus::new(pairs).unwrap()
}

/// Pairs as a sorted multiset, for losslessness checks.
pub fn multiset(parts: &[&ParallelCorpus]) -> Vec<SentencePair> {
    let mut all: Vec<SentencePair> = parts.iter().flat_map(|c| c.pairs.iter().cloned()).collect();
    all.sort_by_key(|p| p.sentence_id);
    all
}
