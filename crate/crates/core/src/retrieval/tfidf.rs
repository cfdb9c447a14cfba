//! Smoothed TF-IDF over token ids.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// L2-normalized sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<TokenId>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.val.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.idx.len() && j < other.idx.len() {
            match self.idx[i].cmp(&other.idx[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.val[i] * other.val[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub n_docs: u64,
    pub df: Vec<u64>,
    pub idf: Vec<f64>,
}

impl TfidfModel {
    pub fn vocab_size(&self) -> usize {
        self.df.len()
    }

    pub fn idf_of(&self, t: TokenId) -> f64 {
        match self.idf.get(t as usize) {
            Some(&w) => w,
            // never seen in the corpus
            None => ((1.0 + self.n_docs as f64) / 1.0).ln() + 1.0,
        }
    }

    pub fn vectorize(&self, tokens: &[TokenId]) -> SparseVec {
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let mut v = SparseVec::default();
        for t in sorted {
            if v.idx.last() == Some(&t) {
                *v.val.last_mut().unwrap() += 1.0;
            } else {
                v.idx.push(t);
                v.val.push(1.0);
            }
        }
        for (t, w) in v.idx.iter().zip(v.val.iter_mut()) {
            *w *= self.idf_of(*t);
        }
        let norm = v.val.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.val.iter_mut().for_each(|w| *w /= norm);
        }
        v
    }
}

pub fn fit_tfidf<S: AsRef<[TokenId]>>(docs: &[S], vocab_size: usize) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df = vec![0u64; vocab_size];
    let mut last_seen = vec![usize::MAX; vocab_size];
    for (d, doc) in docs.iter().enumerate() {
        for &t in doc.as_ref() {
            let slot = df.get_mut(t as usize).ok_or(Error::InvalidId {
                id: t,
                size: vocab_size,
            })?;
            if last_seen[t as usize] != d {
                last_seen[t as usize] = d;
                *slot += 1;
            }
        }
    }
    let n = docs.len() as f64;
    let idf = df
        .iter()
        .map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel {
        n_docs: docs.len() as u64,
        df,
        idf,
    })
}

pub fn tfidf_cosine(m: &TfidfModel, a: &[TokenId], b: &[TokenId]) -> f64 {
    m.vectorize(a).dot(&m.vectorize(b)).clamp(0.0, 1.0)
}
