//! Exact cosine retrieval over frozen embeddings and ranking metrics.
//!
//! Embeddings are unit-normalized when inserted, so a candidate's score is
//! the dot product with the normalized query. Ranking is by descending
//! score with ties broken by ascending tuple id.

mod metrics;

pub use metrics::{jaccard, ndcg_at_k, pair_f1};

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::data::{LabelSet, TupleDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{dot, l2_normalize, Tensor};

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub tuple_id: u64,
    /// Unit-norm embedding.
    pub embedding: Vec<f64>,
    pub labels: LabelSet,
}

/// Per-modality lists of normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    modalities: Vec<Vec<IndexEntry>>,
    ids: Vec<HashSet<u64>>,
}

impl EmbeddingIndex {
    pub fn new(num_modalities: usize, dim: usize) -> Self {
        Self {
            dim,
            modalities: vec![Vec::new(); num_modalities],
            ids: vec![HashSet::new(); num_modalities],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    fn check_modality(&self, modality: usize) -> Result<()> {
        if modality >= self.modalities.len() {
            return Err(Error::Index(format!(
                "modality {modality} of {}",
                self.modalities.len()
            )));
        }
        Ok(())
    }

    pub fn entries(&self, modality: usize) -> &[IndexEntry] {
        &self.modalities[modality]
    }

    pub fn len(&self, modality: usize) -> usize {
        self.modalities[modality].len()
    }

    pub fn is_empty(&self) -> bool {
        self.modalities.iter().all(Vec::is_empty)
    }

    /// Normalizes and stores one embedding.
    pub fn insert(
        &mut self,
        modality: usize,
        tuple_id: u64,
        embedding: &[f64],
        labels: LabelSet,
    ) -> Result<()> {
        self.check_modality(modality)?;
        if embedding.len() != self.dim {
            return Err(Error::dim(
                "index insert",
                format!(
                    "embedding of length {}, index dim {}",
                    embedding.len(),
                    self.dim
                ),
            ));
        }
        if !self.ids[modality].insert(tuple_id) {
            return Err(Error::Validation(format!(
                "tuple {tuple_id} already indexed for modality {modality}"
            )));
        }
        let normalized = l2_normalize(&Tensor::vector(embedding.to_vec())?);
        if normalized.degenerate {
            self.ids[modality].remove(&tuple_id);
            return Err(Error::Degenerate { op: "index insert" });
        }
        self.modalities[modality].push(IndexEntry {
            tuple_id,
            embedding: normalized.tensor.into_data(),
            labels,
        });
        Ok(())
    }
}

fn embed_all(params: &ModelParams, ds: &TupleDataset, modality: usize) -> Result<Tensor> {
    if ds.dims() != params.config().input_dims.as_slice() {
        return Err(Error::contract(format!(
            "dataset widths {:?} do not match model inputs {:?}",
            ds.dims(),
            params.config().input_dims
        )));
    }
    params.embed(modality, &ds.full_matrix(modality)?)
}

/// Embeds every tuple of `ds` in every modality.
pub fn build_index(params: &ModelParams, ds: &TupleDataset) -> Result<EmbeddingIndex> {
    let mut index = EmbeddingIndex::new(ds.num_modalities(), params.config().embedding_dim);
    for j in 0..ds.num_modalities() {
        let z = embed_all(params, ds, j)?;
        for (t, row) in ds.tuples().iter().zip(z.rows()) {
            index.insert(j, t.id, row, t.labels.clone())?;
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub tuple_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub query_id: Option<u64>,
    pub target_modality: usize,
    pub k: usize,
    pub hits: Vec<Hit>,
    /// Fewer than `k` candidates were available.
    pub short: bool,
}

fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tuple_id.cmp(&b.tuple_id))
}

/// Exact top-`k` search of one modality, skipping `exclude` if given.
pub fn retrieve(
    index: &EmbeddingIndex,
    query: &[f64],
    target_modality: usize,
    k: usize,
    exclude: Option<u64>,
) -> Result<RankedResult> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    index.check_modality(target_modality)?;
    if query.len() != index.dim {
        return Err(Error::dim(
            "retrieve",
            format!("query of length {}, index dim {}", query.len(), index.dim),
        ));
    }
    let q = l2_normalize(&Tensor::vector(query.to_vec())?);
    if q.degenerate {
        return Err(Error::Degenerate { op: "retrieve" });
    }
    let q = q.tensor.into_data();
    let mut hits: Vec<Hit> = index.modalities[target_modality]
        .iter()
        .filter(|e| Some(e.tuple_id) != exclude)
        .map(|e| Hit {
            tuple_id: e.tuple_id,
            score: dot(&q, &e.embedding),
        })
        .collect();
    let short = hits.len() < k;
    if !short {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    Ok(RankedResult {
        query_id: exclude,
        target_modality,
        k,
        hits,
        short,
    })
}

/// `query_id,rank,candidate_id,score` rows.
pub fn ranked_csv(results: &[RankedResult]) -> String {
    let mut out = String::from("query_id,rank,candidate_id,score\n");
    for r in results {
        let q = r.query_id.map(|q| q.to_string()).unwrap_or_default();
        for (i, h) in r.hits.iter().enumerate() {
            writeln!(out, "{q},{},{},{}", i + 1, h.tuple_id, h.score).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: u64,
    pub f1: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub source_modality: usize,
    pub target_modality: usize,
    pub k: usize,
    pub mean_f1: f64,
    pub mean_ndcg: f64,
    pub rows: Vec<QueryMetrics>,
}

impl MetricsReport {
    pub fn direction(&self) -> String {
        format!("{}->{}", self.source_modality, self.target_modality)
    }
}

/// A query for [`evaluate_queries`]: id, embedding and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub tuple_id: u64,
    pub embedding: Vec<f64>,
    pub labels: LabelSet,
}

/// Top-`k` F1 (Dice, averaged over the retrieved items) and NDCG with
/// Jaccard gains, averaged over queries.
pub fn evaluate_queries(
    index: &EmbeddingIndex,
    queries: &[Query],
    source_modality: usize,
    target_modality: usize,
    k: usize,
    exclude_self_tuple: bool,
) -> Result<MetricsReport> {
    if queries.is_empty() {
        return Err(Error::contract("no queries to evaluate"));
    }
    index.check_modality(target_modality)?;
    let labels_of: HashMap<u64, &LabelSet> = index
        .entries(target_modality)
        .iter()
        .map(|e| (e.tuple_id, &e.labels))
        .collect();
    let mut rows = Vec::with_capacity(queries.len());
    for q in queries {
        let exclude = exclude_self_tuple.then_some(q.tuple_id);
        let res = retrieve(index, &q.embedding, target_modality, k, exclude)?;
        if res.hits.is_empty() {
            return Err(Error::contract("index has no candidates for the query"));
        }
        let mut f1 = 0.0;
        let mut rel = Vec::with_capacity(res.hits.len());
        for h in &res.hits {
            let item = labels_of[&h.tuple_id];
            f1 += pair_f1(&q.labels, item)?;
            rel.push(jaccard(&q.labels, item));
        }
        rows.push(QueryMetrics {
            query_id: q.tuple_id,
            f1: f1 / res.hits.len() as f64,
            ndcg: ndcg_at_k(&rel, k)?,
        });
    }
    let n = rows.len() as f64;
    Ok(MetricsReport {
        source_modality,
        target_modality,
        k,
        mean_f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        mean_ndcg: rows.iter().map(|r| r.ndcg).sum::<f64>() / n,
        rows,
    })
}

/// Embeds `queries` in `source_modality` and evaluates retrieval from the
/// index's `target_modality`.
pub fn evaluate_cross_modal(
    params: &ModelParams,
    index: &EmbeddingIndex,
    queries: &TupleDataset,
    source_modality: usize,
    target_modality: usize,
    k: usize,
    exclude_self_tuple: bool,
) -> Result<MetricsReport> {
    if queries.is_empty() {
        return Err(Error::contract("query set is empty"));
    }
    if source_modality == target_modality {
        return Err(Error::contract(
            "cross-modal evaluation needs two different modalities",
        ));
    }
    if source_modality >= queries.num_modalities() {
        return Err(Error::Index(format!(
            "modality {source_modality} of {}",
            queries.num_modalities()
        )));
    }
    let z = embed_all(params, queries, source_modality)?;
    let qs: Vec<Query> = queries
        .tuples()
        .iter()
        .zip(z.rows())
        .map(|(t, row)| Query {
            tuple_id: t.id,
            embedding: row.to_vec(),
            labels: t.labels.clone(),
        })
        .collect();
    evaluate_queries(
        index,
        &qs,
        source_modality,
        target_modality,
        k,
        exclude_self_tuple,
    )
}

/// Per-query rows followed by a `mean` summary row for each report.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("query_id,direction,f1_at_k,ndcg_at_k\n");
    for r in reports {
        let dir = r.direction();
        for q in &r.rows {
            writeln!(out, "{},{dir},{},{}", q.query_id, q.f1, q.ndcg).unwrap();
        }
        writeln!(out, "mean,{dir},{},{}", r.mean_f1, r.mean_ndcg).unwrap();
    }
    out
}

/// Aligned table of per-direction means, with an average row when more
/// than one direction is given.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let k = reports.first().map(|r| r.k).unwrap_or(DEFAULT_K);
    let mut out = format!(
        "{:<10} {:>10} {:>10}\n",
        "direction",
        format!("F1@{k}"),
        format!("NDCG@{k}")
    );
    for r in reports {
        writeln!(
            out,
            "{:<10} {:>10.4} {:>10.4}",
            r.direction(),
            r.mean_f1,
            r.mean_ndcg
        )
        .unwrap();
    }
    if reports.len() > 1 {
        let n = reports.len() as f64;
        let f1 = reports.iter().map(|r| r.mean_f1).sum::<f64>() / n;
        let ndcg = reports.iter().map(|r| r.mean_ndcg).sum::<f64>() / n;
        writeln!(out, "{:<10} {:>10.4} {:>10.4}", "average", f1, ndcg).unwrap();
    }
    out
}

/// Mean fraction of each entry's `k` nearest same-modality neighbors that
/// share at least one label with it.
pub fn neighbor_purity(index: &EmbeddingIndex, modality: usize, k: usize) -> Result<f64> {
    index.check_modality(modality)?;
    let entries = index.entries(modality);
    if entries.len() < 2 {
        return Err(Error::contract("neighbor purity needs at least 2 entries"));
    }
    let labels_of: HashMap<u64, &LabelSet> =
        entries.iter().map(|e| (e.tuple_id, &e.labels)).collect();
    let mut total = 0.0;
    for e in entries {
        let res = retrieve(index, &e.embedding, modality, k, Some(e.tuple_id))?;
        let shared = res
            .hits
            .iter()
            .filter(|h| !e.labels.is_disjoint(labels_of[&h.tuple_id]))
            .count();
        total += shared as f64 / res.hits.len() as f64;
    }
    Ok(total / entries.len() as f64)
}
