//! Neighbor similarity against per-sentence BLEU.

use serde::{Deserialize, Serialize};

use super::bleu::sentence_bleu;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterMode {
    /// TF-IDF cosine between the reference and the neighbor's target.
    TargetTfidf,
    /// Table-match score between the source and the neighbor's source.
    SourceTableMatch,
}

impl ScatterMode {
    pub fn max_similarity(self) -> f64 {
        match self {
            ScatterMode::TargetTfidf => 1.0,
            ScatterMode::SourceTableMatch => 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub pair_id: u64,
    pub similarity: f64,
    pub sentence_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_sentence_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    pub n_records: usize,
    pub n_skipped: usize,
    pub mean_similarity: f64,
    pub bins: Vec<ScatterBin>,
}

/// One record per sentence with a neighbor. `similarity(i)` returns `None`
/// for sentences without one; those are skipped and counted.
pub fn similarity_scatter<S: AsRef<str>>(
    pair_ids: &[u64],
    hyps: &[S],
    refs: &[S],
    mut similarity: impl FnMut(usize) -> Result<Option<f64>>,
) -> Result<(Vec<ScatterRecord>, usize)> {
    if hyps.len() != refs.len() || pair_ids.len() != refs.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: hyps.len().min(pair_ids.len()),
        });
    }
    let mut records = Vec::with_capacity(refs.len());
    let mut skipped = 0;
    for i in 0..refs.len() {
        match similarity(i)? {
            Some(s) => records.push(ScatterRecord {
                pair_id: pair_ids[i],
                similarity: s,
                sentence_bleu: sentence_bleu(hyps[i].as_ref(), refs[i].as_ref()),
            }),
            None => skipped += 1,
        }
    }
    Ok((records, skipped))
}

/// Mean similarity and mean sentence-BLEU per similarity bin of width 0.1.
pub fn summarize(records: &[ScatterRecord], skipped: usize, mode: ScatterMode) -> Result<ScatterSummary> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let width = 0.1;
    let n_bins = (mode.max_similarity() / width).round() as usize;
    let mut sums = vec![(0usize, 0.0f64); n_bins];
    for r in records {
        let b = ((r.similarity / width).floor().max(0.0) as usize).min(n_bins - 1);
        sums[b].0 += 1;
        sums[b].1 += r.sentence_bleu;
    }
    let bins = sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, total))| ScatterBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count,
            mean_sentence_bleu: (count > 0).then(|| total / count as f64),
        })
        .collect();
    let mean_similarity = records.iter().map(|r| r.similarity).sum::<f64>() / records.len() as f64;
    Ok(ScatterSummary {
        n_records: records.len(),
        n_skipped: skipped,
        mean_similarity,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_neighbors_have_mean_one() {
        let refs = ["a b", "c d e"];
        let (recs, skipped) = similarity_scatter(&[0, 1], &refs, &refs, |_| Ok(Some(1.0))).unwrap();
        assert_eq!(skipped, 0);
        let s = summarize(&recs, skipped, ScatterMode::TargetTfidf).unwrap();
        assert_eq!(s.mean_similarity, 1.0);
        assert_eq!(s.bins.len(), 10);
        assert_eq!(s.bins[9].count, 2);
        assert_eq!(s.bins[9].mean_sentence_bleu, Some(100.0));
    }

    #[test]
    fn missing_neighbors_are_skipped() {
        let refs = ["a", "b", "c"];
        let (recs, skipped) =
            similarity_scatter(&[5, 6, 7], &refs, &refs, |i| Ok((i != 1).then_some(0.25))).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(recs.iter().map(|r| r.pair_id).collect::<Vec<_>>(), vec![5, 7]);
        let s = summarize(&recs, skipped, ScatterMode::SourceTableMatch).unwrap();
        assert_eq!(s.bins.len(), 11);
        assert_eq!(s.bins[2].count, 2);
    }

    #[test]
    fn empty_input() {
        let none: [&str; 0] = [];
        let (recs, _) = similarity_scatter(&[], &none, &none, |_| Ok(Some(1.0))).unwrap();
        assert!(recs.is_empty());
        assert!(summarize(&recs, 0, ScatterMode::TargetTfidf).is_err());
    }
}
