//! Nearest-neighbor retrieval over the training corpus.
//!
//! Candidates come from an exact dense cosine scan (or an inverted index over
//! source tokens) and are reranked by exact TF-IDF cosine against the query.

pub mod datastore;
pub mod svd;
pub mod table_match;
pub mod tfidf;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use datastore::{build_datastore, Datastore, DatastoreConfig, DenseProjector, ExternalVectors, VectorSource};
pub use table_match::table_match;
pub use tfidf::{fit_tfidf, tfidf_cosine, SparseVec, TfidfModel};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSearch {
    DenseScan,
    /// Only entries sharing at least one source token are scored.
    InvertedIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k_candidates: usize,
    pub exclude_self: bool,
    pub search: CandidateSearch,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_candidates: 50,
            exclude_self: false,
            search: CandidateSearch::DenseScan,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_candidates == 0 {
            return Err(Error::Config("k_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position of the entry in the datastore.
    pub index: usize,
    pub pair_id: u64,
    pub rerank_score: f64,
    pub dense_score: f64,
}

/// Top `k` indices by score, ties broken by lower index.
fn top_k(scored: &mut Vec<(usize, f32)>, k: usize) {
    let cmp = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
}

/// Candidate entries with their dense scores, best first.
pub fn dense_candidates(
    ds: &Datastore,
    query_source: &[TokenId],
    query_vec: &[f32],
    cfg: &RetrievalConfig,
    query_id: Option<u64>,
) -> Vec<(usize, f32)> {
    let excluded = |i: usize| {
        cfg.exclude_self && (Some(ds.entries[i].id) == query_id || ds.entries[i].source == query_source)
    };
    let score = |i: usize| {
        let row = ds.dense_row(i);
        row.iter().zip(query_vec).map(|(a, b)| a * b).sum::<f32>()
    };
    let mut pool: Vec<usize> = match cfg.search {
        CandidateSearch::DenseScan => (0..ds.len()).collect(),
        CandidateSearch::InvertedIndex => {
            let mut hits: Vec<usize> = query_source
                .iter()
                .filter_map(|t| ds.postings.get(t))
                .flatten()
                .map(|&i| i as usize)
                .collect();
            hits.sort_unstable();
            hits.dedup();
            if hits.is_empty() {
                (0..ds.len()).collect()
            } else {
                hits
            }
        }
    };
    pool.retain(|&i| !excluded(i));
    let mut scored: Vec<(usize, f32)> = pool.into_iter().map(|i| (i, score(i))).collect();
    top_k(&mut scored, cfg.k_candidates);
    scored
}

/// Nearest neighbor of `query_source`. `query_vec` supplies an external dense
/// vector for datastores built from external vectors.
pub fn retrieve(
    ds: &Datastore,
    query_source: &[TokenId],
    query_vec: Option<&[f32]>,
    cfg: &RetrievalConfig,
    query_id: Option<u64>,
) -> Result<Neighbor> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let qv = ds.query_vector(query_source, query_vec)?;
    let candidates = dense_candidates(ds, query_source, &qv, cfg, query_id);
    let query_sparse = ds.tfidf.vectorize(query_source);
    let mut best: Option<Neighbor> = None;
    for (i, dense) in candidates {
        let s = query_sparse.dot(&ds.sparse[i]).clamp(0.0, 1.0);
        let better = match &best {
            None => true,
            Some(b) => s > b.rerank_score || (s == b.rerank_score && i < b.index),
        };
        if better {
            best = Some(Neighbor {
                index: i,
                pair_id: ds.entries[i].id,
                rerank_score: s,
                dense_score: dense as f64,
            });
        }
    }
    best.ok_or(Error::NoNeighbor)
}

/// Exhaustive exact TF-IDF argmax, honoring the same exclusion rule.
pub fn brute_force(ds: &Datastore, query_source: &[TokenId], exclude_self: bool, query_id: Option<u64>) -> Option<(usize, f64)> {
    let q = ds.tfidf.vectorize(query_source);
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in ds.entries.iter().enumerate() {
        if exclude_self && (Some(e.id) == query_id || e.source == query_source) {
            continue;
        }
        let s = q.dot(&ds.sparse[i]).clamp(0.0, 1.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// One query of a batch: its id, source tokens and optional external vector.
pub struct Query<'a> {
    pub id: u64,
    pub source: &'a [TokenId],
    pub vector: Option<&'a [f32]>,
}

pub fn retrieve_all(ds: &Datastore, queries: &[Query], cfg: &RetrievalConfig) -> Vec<Result<NeighborRecord>> {
    queries
        .par_iter()
        .map(|q| {
            retrieve(ds, q.source, q.vector, cfg, Some(q.id)).map(|n| NeighborRecord {
                query_id: q.id,
                neighbor_pair_id: n.pair_id,
                rerank_score: n.rerank_score,
                dense_score: n.dense_score,
            })
        })
        .collect()
}

/// One row of a neighbor file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub query_id: u64,
    pub neighbor_pair_id: u64,
    pub rerank_score: f64,
    pub dense_score: f64,
}

pub fn write_neighbor_file(path: &Path, records: &[NeighborRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.query_id, r.neighbor_pair_id, r.rerank_score, r.dense_score
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_neighbor_file(path: &Path) -> Result<Vec<NeighborRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::parse(path, i + 1, what.to_string());
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        out.push(NeighborRecord {
            query_id: cols[0].parse().map_err(|_| bad("bad query id"))?,
            neighbor_pair_id: cols[1].parse().map_err(|_| bad("bad neighbor id"))?,
            rerank_score: cols[2].parse().map_err(|_| bad("bad rerank score"))?,
            dense_score: cols[3].parse().map_err(|_| bad("bad dense score"))?,
        });
    }
    Ok(out)
}
