//! Character n-gram F-score (orders 1..=6, beta = 2), whitespace included.
//! Statistics are summed over the corpus before the F-score is taken, and
//! orders for which either side has no n-grams are left out of the averages.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const CHAR_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

/// Per order: hypothesis n-grams, reference n-grams, clipped matches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChrfStats(pub [[usize; 3]; CHAR_ORDER]);

impl std::ops::AddAssign for ChrfStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..CHAR_ORDER {
            for k in 0..3 {
                self.0[n][k] += o.0[n][k];
            }
        }
    }
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn segment_stats(hyp: &str, reference: &str) -> ChrfStats {
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let mut s = ChrfStats::default();
    for n in 1..=CHAR_ORDER {
        let hc = char_ngrams(&h, n);
        let rc = char_ngrams(&r, n);
        let matches = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
        s.0[n - 1] = [
            h.len().saturating_sub(n - 1),
            r.len().saturating_sub(n - 1),
            matches,
        ];
    }
    s
}

pub fn score_from_stats(s: &ChrfStats) -> f64 {
    let eps = 1e-16;
    let factor = BETA * BETA;
    let (mut avg_prec, mut avg_rec, mut order) = (0.0, 0.0, 0usize);
    for &[n_hyp, n_ref, n_match] in &s.0 {
        if n_hyp > 0 && n_ref > 0 {
            avg_prec += n_match as f64 / n_hyp as f64;
            avg_rec += n_match as f64 / n_ref as f64;
            order += 1;
        }
    }
    if order == 0 {
        return 0.0;
    }
    avg_prec /= order as f64;
    avg_rec /= order as f64;
    if avg_prec + avg_rec < eps {
        return 0.0;
    }
    100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
}

pub fn corpus_chrf<H: AsRef<str> + Sync, R: AsRef<str> + Sync>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let stats: Vec<ChrfStats> = hyps
        .par_iter()
        .zip(refs)
        .map(|(h, r)| segment_stats(h.as_ref(), r.as_ref()))
        .collect();
    let mut total = ChrfStats::default();
    for s in stats {
        total += s;
    }
    Ok(score_from_stats(&total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(corpus_chrf(&["a b c", "Zürich"], &["a b c", "Zürich"]).unwrap(), 100.0);
        assert_eq!(corpus_chrf(&["abc"], &["xyz"]).unwrap(), 0.0);
        assert_eq!(corpus_chrf(&[""], &["xyz"]).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_fixture() {
        // hyp "ab", ref "abc":
        //   order 1: 2 hyp, 3 ref, 2 match -> P 1, R 2/3
        //   order 2: 1 hyp, 2 ref, 1 match -> P 1, R 1/2
        //   order 3: no hyp n-grams, excluded
        // avg P = 1, avg R = 7/12, F2 = 5 * 7/12 / (4 + 7/12) = 35/55
        let got = corpus_chrf(&["ab"], &["abc"]).unwrap();
        assert!((got - 100.0 * 35.0 / 55.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn two_sentence_fixture() {
        let got = corpus_chrf(&["the cat sat", "he reads"], &["the cat sat on", "she reads"]).unwrap();
        assert!((got - 80.645_846_3).abs() < 1e-4, "{got}");
    }

    #[test]
    fn whitespace_counts() {
        let a = corpus_chrf(&["ab cd"], &["abcd"]).unwrap();
        assert!(a < 100.0);
    }

    #[test]
    fn errors() {
        assert!(corpus_chrf(&["a"], &["a", "b"]).is_err());
    }
}
