//! Sentence-to-document mean pooling and label broadcasting.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::embstore::{EmbeddingSet, Level, RecordRef};
use crate::error::{Error, Result};
use crate::kmeans::ClusterAssignment;

/// Document means kept in f64, before narrowing to the f32 storage type.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDocuments {
    pub dim: usize,
    /// Ascending.
    pub doc_ids: Vec<u64>,
    pub domain_ids: Vec<i32>,
    pub member_counts: Vec<usize>,
    /// Row-major `doc_ids.len() x dim`.
    pub means: Vec<f64>,
}

impl PooledDocuments {
    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }
}

/// Groups row indices by document, ascending doc_id, rows in file order.
pub fn group_by_document(set: &EmbeddingSet) -> BTreeMap<u64, Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &doc) in set.doc_ids().iter().enumerate() {
        groups.entry(doc).or_default().push(i);
    }
    groups
}

/// Most frequent non-negative domain; ties go to the smallest id, -1 if none.
pub fn majority_domain(domains: impl IntoIterator<Item = i32>) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for d in domains.into_iter().filter(|&d| d >= 0) {
        *counts.entry(d).or_default() += 1;
    }
    let mut best = (-1, 0usize);
    for (d, c) in counts {
        if c > best.1 {
            best = (d, c);
        }
    }
    best.0
}

/// Arithmetic mean of equal-length vectors, accumulated in f64 in input order.
pub fn mean_vector<'a>(
    dim: usize,
    vectors: impl IntoIterator<Item = &'a [f32]>,
) -> Option<Vec<f64>> {
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let inv = n as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Some(acc)
}

pub fn pool_documents_f64(sentences: &EmbeddingSet) -> Result<PooledDocuments> {
    if sentences.meta.level == Level::Document {
        return Err(Error::WrongLevel);
    }
    if sentences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = sentences.dim();
    let groups: Vec<(u64, Vec<usize>)> = group_by_document(sentences).into_iter().collect();
    let pooled: Vec<(Vec<f64>, i32)> = groups
        .par_iter()
        .map(|(_, rows)| {
            let mean = mean_vector(dim, rows.iter().map(|&i| sentences.vector(i)))
                .expect("document groups are non-empty");
            let domain = majority_domain(rows.iter().map(|&i| sentences.domain_ids()[i]));
            (mean, domain)
        })
        .collect();

    let mut out = PooledDocuments {
        dim,
        doc_ids: Vec::with_capacity(groups.len()),
        domain_ids: Vec::with_capacity(groups.len()),
        member_counts: Vec::with_capacity(groups.len()),
        means: Vec::with_capacity(groups.len() * dim),
    };
    for ((doc, rows), (mean, domain)) in groups.iter().zip(pooled) {
        out.doc_ids.push(*doc);
        out.domain_ids.push(domain);
        out.member_counts.push(rows.len());
        out.means.extend_from_slice(&mean);
    }
    Ok(out)
}

/// One record per document: mean vector, `sentence_id = doc_id`, majority domain.
pub fn pool_documents(sentences: &EmbeddingSet) -> Result<EmbeddingSet> {
    let pooled = pool_documents_f64(sentences)?;
    let mut meta = sentences.meta.clone();
    meta.level = Level::Document;
    let mut out = EmbeddingSet::with_capacity(pooled.dim, pooled.doc_ids.len(), meta)?;
    let mut v32 = vec![0f32; pooled.dim];
    for (i, &doc) in pooled.doc_ids.iter().enumerate() {
        for (dst, &src) in v32.iter_mut().zip(pooled.mean(i)) {
            *dst = src as f32;
        }
        out.push(RecordRef {
            sentence_id: doc,
            doc_id: doc,
            domain_id: pooled.domain_ids[i],
            vector: &v32,
        })?;
    }
    Ok(out)
}

/// Gives every sentence the label of its document. Distances are the
/// document's distance to its centroid.
pub fn broadcast_labels(
    doc_assignment: &ClusterAssignment,
    sentences: &EmbeddingSet,
) -> Result<ClusterAssignment> {
    let by_doc: HashMap<u64, (usize, f64)> = doc_assignment
        .item_ids
        .iter()
        .zip(doc_assignment.labels.iter().zip(&doc_assignment.distances))
        .map(|(&id, (&l, &d))| (id, (l, d)))
        .collect();
    let mut out = ClusterAssignment::with_capacity(sentences.len());
    for r in sentences.iter() {
        let &(label, dist) = by_doc.get(&r.doc_id).ok_or(Error::MissingDocument {
            sentence_id: r.sentence_id,
            doc_id: r.doc_id,
        })?;
        out.push(r.sentence_id, label, dist);
    }
    Ok(out)
}
