//! Paired bootstrap resampling over corpus BLEU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bleu::{corpus_stats, score_from_stats, BleuStats};
use crate::error::{Error, Result};

pub const MIN_RESAMPLES: usize = 100;

/// Fraction of resamples in which system `b` scores at least as well as
/// system `a`. Small values mean `a` is significantly better.
pub fn bootstrap_significance<S: AsRef<str> + Sync>(
    hyps_a: &[S],
    hyps_b: &[S],
    refs: &[S],
    n_resamples: usize,
    seed: u64,
) -> Result<f64> {
    if hyps_b.len() != hyps_a.len() {
        return Err(Error::LengthMismatch {
            expected: hyps_a.len(),
            actual: hyps_b.len(),
        });
    }
    if hyps_a.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Config(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    let sa = corpus_stats(hyps_a, refs)?;
    let sb = corpus_stats(hyps_b, refs)?;
    Ok(paired_bootstrap(&sa, &sb, n_resamples, seed))
}

pub fn paired_bootstrap(sa: &[BleuStats], sb: &[BleuStats], n_resamples: usize, seed: u64) -> f64 {
    let n = sa.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b_wins = 0usize;
    for _ in 0..n_resamples {
        let (mut ta, mut tb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            ta += sa[i];
            tb += sb[i];
        }
        if score_from_stats(&tb) >= score_from_stats(&ta) {
            b_wins += 1;
        }
    }
    b_wins as f64 / n_resamples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs() -> Vec<String> {
        (0..40)
            .map(|i| format!("the quick brown fox {i} jumps over the lazy dog number {}", i * 7 % 13))
            .collect()
    }

    #[test]
    fn identical_systems_give_one() {
        let r = refs();
        let p = bootstrap_significance(&r, &r, &r, 200, 3).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn dominant_system_gives_small_p() {
        let r = refs();
        let worse: Vec<String> = r.iter().map(|s| s.replacen("quick", "slow", 1).replacen("lazy", "sleepy", 1)).collect();
        let p = bootstrap_significance(&r, &worse, &r, 500, 1).unwrap();
        assert!(p < 0.01, "{p}");
    }

    #[test]
    fn deterministic_and_bounded() {
        let r = refs();
        let a: Vec<String> = r.iter().enumerate().map(|(i, s)| if i % 3 == 0 { s.replacen("fox", "cat", 1) } else { s.clone() }).collect();
        let b: Vec<String> = r.iter().enumerate().map(|(i, s)| if i % 2 == 0 { s.replacen("dog", "cow", 1) } else { s.clone() }).collect();
        let p1 = bootstrap_significance(&a, &b, &r, 300, 9).unwrap();
        let p2 = bootstrap_significance(&a, &b, &r, 300, 9).unwrap();
        assert_eq!(p1, p2);
        assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn monotone_in_improvement_of_a() {
        // a is repaired on a growing prefix of sentences; p must not increase
        let r = refs();
        let broken: Vec<String> = r.iter().map(|s| s.replacen("brown", "red", 1)).collect();
        let b: Vec<String> = r.iter().enumerate().map(|(i, s)| if i % 2 == 0 { broken[i].clone() } else { s.clone() }).collect();
        let mut last = f64::INFINITY;
        for fixed in [0, 10, 20, 30, 40] {
            let a: Vec<String> = (0..r.len()).map(|i| if i < fixed { r[i].clone() } else { broken[i].clone() }).collect();
            let p = bootstrap_significance(&a, &b, &r, 300, 5).unwrap();
            assert!(p <= last, "p rose from {last} to {p} at {fixed}");
            last = p;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let r = refs();
        assert!(bootstrap_significance(&r, &r[..3], &r, 200, 0).is_err());
        assert!(bootstrap_significance(&r, &r, &r, 10, 0).is_err());
    }
}
