//! BLEU-4 over 13a-tokenized, case-sensitive text with a single reference,
//! exponential smoothing of zero-match orders and the effective-order rule.

use std::collections::HashMap;

use rayon::prelude::*;

use super::tok13a::tokenize_13a;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one or more segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub sys_len: usize,
    pub ref_len: usize,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        self.sys_len += o.sys_len;
        self.ref_len += o.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += o.correct[n];
            self.total[n] += o.total[n];
        }
    }
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn segment_stats(hyp: &str, reference: &str) -> BleuStats {
    let h = tokenize_13a(hyp);
    let r = tokenize_13a(reference);
    let ht: Vec<&str> = h.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    let mut stats = BleuStats {
        sys_len: ht.len(),
        ref_len: rt.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&ht, n);
        let rc = ngram_counts(&rt, n);
        stats.total[n - 1] = ht.len().saturating_sub(n - 1);
        stats.correct[n - 1] = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// BLEU in [0, 100] from aggregated statistics.
pub fn score_from_stats(s: &BleuStats) -> f64 {
    let bp = if s.sys_len < s.ref_len {
        if s.sys_len > 0 {
            (1.0 - s.ref_len as f64 / s.sys_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    if s.correct.iter().all(|&c| c == 0) {
        return 0.0;
    }
    // precisions as fractions, so a perfect match gives exactly 100
    let mut precisions = [0.0f64; MAX_ORDER];
    let mut smooth = 1.0;
    let mut order = MAX_ORDER;
    for n in 0..MAX_ORDER {
        if s.total[n] == 0 {
            order = n;
            break;
        }
        precisions[n] = if s.correct[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * s.total[n] as f64)
        } else {
            s.correct[n] as f64 / s.total[n] as f64
        };
    }
    let log_sum: f64 = precisions[..order].iter().map(|p| p.ln()).sum();
    100.0 * bp * (log_sum / order as f64).exp()
}

pub fn corpus_stats<H: AsRef<str> + Sync, R: AsRef<str> + Sync>(hyps: &[H], refs: &[R]) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    Ok(hyps
        .par_iter()
        .zip(refs)
        .map(|(h, r)| segment_stats(h.as_ref(), r.as_ref()))
        .collect())
}

pub fn corpus_bleu<H: AsRef<str> + Sync, R: AsRef<str> + Sync>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for s in corpus_stats(hyps, refs)? {
        total += s;
    }
    Ok(score_from_stats(&total))
}

pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    score_from_stats(&segment_stats(hyp, reference))
}
