//! Picks the cluster-specific translation model for incoming embeddings.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embstore::{read_frame, EmbeddingSet, RecordRef};
use crate::error::{Error, Result};
use crate::kmeans::KMeansModel;
use crate::pooling::mean_vector;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub model_for_cluster: BTreeMap<usize, String>,
    #[serde(default)]
    pub default_model: Option<String>,
}

impl RoutingTable {
    /// One entry per cluster, named `cluster-<c>`.
    pub fn skeleton(k: usize) -> Self {
        RoutingTable {
            model_for_cluster: (0..k).map(|c| (c, format!("cluster-{c}"))).collect(),
            default_model: None,
        }
    }

    pub fn lookup(&self, cluster: usize) -> Result<&str> {
        self.model_for_cluster
            .get(&cluster)
            .or(self.default_model.as_ref())
            .map(String::as_str)
            .ok_or(Error::UnmappedCluster(cluster))
    }

    /// Every cluster below `k` must resolve to some model.
    pub fn check_covers(&self, k: usize) -> Result<()> {
        (0..k).try_for_each(|c| self.lookup(c).map(|_| ()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::evaluation::write_json(self, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub item_id: u64,
    pub cluster: usize,
    pub model_id: String,
    pub sqdist: f64,
}

impl Route {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:?}",
            self.item_id, self.cluster, self.model_id, self.sqdist
        )
    }
}

pub const ROUTE_TSV_HEADER: &str = "item_id\tcluster\tmodel_id\tsqdist";

pub fn route(model: &KMeansModel, table: &RoutingTable, item: RecordRef<'_>) -> Result<Route> {
    let (cluster, sqdist) = model.nearest(item.vector)?;
    Ok(Route {
        item_id: item.sentence_id,
        cluster,
        model_id: table.lookup(cluster)?.to_owned(),
        sqdist,
    })
}

/// Mean-pools the sentences and routes the pooled vector. The item id is the
/// first sentence's doc_id.
pub fn route_document(
    model: &KMeansModel,
    table: &RoutingTable,
    sentences: &[RecordRef<'_>],
) -> Result<Route> {
    let first = sentences.first().ok_or(Error::EmptyDocument)?;
    let dim = first.vector.len();
    if let Some(bad) = sentences.iter().find(|s| s.vector.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: bad.vector.len(),
        });
    }
    let mean = mean_vector(dim, sentences.iter().map(|s| s.vector)).ok_or(Error::EmptyDocument)?;
    let (cluster, sqdist) = model.nearest_f64(&mean)?;
    Ok(Route {
        item_id: first.doc_id,
        cluster,
        model_id: table.lookup(cluster)?.to_owned(),
        sqdist,
    })
}

pub fn route_set(
    model: &KMeansModel,
    table: &RoutingTable,
    set: &EmbeddingSet,
) -> Result<Vec<Route>> {
    let labels = crate::kmeans::assign(model, set)?;
    (0..labels.len())
        .map(|i| {
            Ok(Route {
                item_id: labels.item_ids[i],
                cluster: labels.labels[i],
                model_id: table.lookup(labels.labels[i])?.to_owned(),
                sqdist: labels.distances[i],
            })
        })
        .collect()
}

/// Reads length-prefixed records until end of input, writing one TSV
/// decision per record and flushing after each. Returns the record count.
pub fn route_stream(
    model: &KMeansModel,
    table: &RoutingTable,
    mut input: impl Read,
    mut output: impl Write,
) -> Result<u64> {
    let mut n = 0;
    while let Some(rec) = read_frame(&mut input)? {
        let r = route(model, table, (&rec).into())?;
        writeln!(output, "{}", r.tsv_line())?;
        output.flush()?;
        n += 1;
    }
    Ok(n)
}
