//! Truncated SVD of a sparse row matrix by randomized subspace iteration.
//!
//! The small projected problem is solved through the eigen-decomposition of
//! its Gram matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tfidf::SparseVec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdOptions {
    pub oversample: usize,
    pub min_iters: usize,
    pub max_iters: usize,
    /// Stop once the leading Ritz values move by less than this, relative to the largest.
    pub tol: f64,
    /// Singular values below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            oversample: 16,
            min_iters: 4,
            max_iters: 8,
            tol: 1e-8,
            rank_tol: 1e-9,
        }
    }
}

pub struct SparseRows<'a> {
    pub rows: &'a [SparseVec],
    pub ncols: usize,
}

impl SparseRows<'_> {
    fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// `A x` for one column `x` of length `ncols`.
    fn mul_col(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.idx.iter().zip(&r.val).map(|(&j, &v)| v * x[j as usize]).sum())
            .collect()
    }

    /// `A^T q` for one column `q` of length `nrows`.
    fn mul_t_col(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &qi) in self.rows.iter().zip(q) {
            if qi != 0.0 {
                for (&j, &v) in r.idx.iter().zip(&r.val) {
                    out[j as usize] += v * qi;
                }
            }
        }
        out
    }

    /// `A X` for a block `X` with `ncols` rows.
    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..x.ncols()).into_par_iter().map(|c| self.mul_col(x.column(c).as_slice())).collect();
        DMatrix::from_fn(self.nrows(), x.ncols(), |r, c| cols[c][r])
    }

    /// `A^T Q` for a block `Q` with `nrows` rows.
    fn mul_t(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..q.ncols()).into_par_iter().map(|c| self.mul_t_col(q.column(c).as_slice())).collect();
        DMatrix::from_fn(self.ncols, q.ncols(), |r, c| cols[c][r])
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.val.iter()).map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// Descending, length = returned rank.
    pub singular_values: Vec<f64>,
    /// One unit-norm right singular vector of length `ncols` per singular value.
    pub right_vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn random_block(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Orthonormal basis of the column span (Householder QR, thin Q).
fn orthonormalize(block: DMatrix<f64>) -> DMatrix<f64> {
    block.qr().q()
}

/// Leading `k` singular triplets of `a` (right vectors only). The result may
/// hold fewer than `k` values when the numerical rank is smaller.
pub fn truncated_svd(a: &SparseRows, k: usize, opts: &SvdOptions, seed: u64) -> TruncatedSvd {
    let (n, m) = (a.nrows(), a.ncols);
    let l = (k + opts.oversample).min(n).min(m);
    if l == 0 || k == 0 {
        return TruncatedSvd {
            singular_values: vec![],
            right_vectors: vec![],
            iterations: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = orthonormalize(a.mul(&random_block(m, l, &mut rng)));

    let kk = k.min(l);
    let mut prev: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let (w, values, vecs) = loop {
        // W = A^T Q; the Gram matrix of W is B B^T with B = Q^T A
        let w = a.mul_t(&q);
        let eig = SymmetricEigen::new(w.tr_mul(&w));
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let sig: Vec<f64> = values[..kk].iter().map(|&x| x.max(0.0).sqrt()).collect();
        let converged = prev.as_ref().is_some_and(|p| {
            let scale = sig[0].max(f64::MIN_POSITIVE);
            p.iter().zip(&sig).all(|(x, y)| (x - y).abs() <= opts.tol * scale)
        });
        if (iterations >= opts.min_iters && converged) || iterations >= opts.max_iters {
            let vecs = DMatrix::from_fn(l, l, |r, c| eig.eigenvectors[(r, order[c])]);
            break (w, values, vecs);
        }
        prev = Some(sig);
        q = orthonormalize(a.mul(&orthonormalize(w)));
        iterations += 1;
    };

    let sigma_max = values[0].max(0.0).sqrt();
    let mut singular_values = Vec::new();
    let mut right_vectors = Vec::new();
    for (i, &value) in values.iter().enumerate().take(kk) {
        let s = value.max(0.0).sqrt();
        if s <= opts.rank_tol * sigma_max || s == 0.0 {
            break;
        }
        // v_i = W u_i / s
        let v = &w * vecs.column(i);
        singular_values.push(s);
        right_vectors.push((&v / v.norm()).as_slice().to_vec());
    }
    TruncatedSvd {
        singular_values,
        right_vectors,
        iterations,
    }
}
