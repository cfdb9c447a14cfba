//! The canvas environment: boundary-wrapped sequences, the three edit
//! operations, and the sequence algorithms the oracle is built on.

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, BOS, EOS, PAD, PLH};
use crate::error::{Error, Result};

/// A token sequence framed by BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Canvas(Vec<TokenId>);

impl Canvas {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        let n = tokens.len();
        if n < 2 || tokens[0] != BOS || tokens[n - 1] != EOS {
            return Err(Error::InvalidCanvas("canvas must start with BOS and end with EOS".into()));
        }
        if tokens[1..n - 1].iter().any(|&t| t == BOS || t == EOS || t == PAD) {
            return Err(Error::InvalidCanvas("interior holds a boundary or PAD token".into()));
        }
        Ok(Canvas(tokens))
    }

    /// Wraps an interior sequence with BOS/EOS.
    pub fn wrap(interior: &[TokenId]) -> Result<Self> {
        let mut tokens = Vec::with_capacity(interior.len() + 2);
        tokens.push(BOS);
        tokens.extend_from_slice(interior);
        tokens.push(EOS);
        Canvas::new(tokens)
    }

    pub fn empty() -> Self {
        Canvas(vec![BOS, EOS])
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn interior(&self) -> &[TokenId] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 2
    }

    pub fn num_gaps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn placeholder_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == PLH)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Keep flags for the interior positions 1..n-1 (`true` keeps the token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeletionMask(pub Vec<bool>);

/// Placeholder counts per gap; gap i sits between tokens i and i+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlaceholderPlan(pub Vec<usize>);

impl PlaceholderPlan {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// One token per placeholder, left to right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenFill(pub Vec<TokenId>);

/// A source of edit decisions for a canvas: the model's heads at inference and
/// roll-in time, or a scripted stand-in in tests.
pub trait EditPolicy {
    fn deletions(&self, canvas: &Canvas) -> Result<DeletionMask>;
    fn placeholders(&self, canvas: &Canvas) -> Result<PlaceholderPlan>;
    fn fills(&self, canvas: &Canvas) -> Result<TokenFill>;
}

pub fn apply_deletion(canvas: &Canvas, mask: &DeletionMask) -> Result<Canvas> {
    let interior = canvas.interior();
    if mask.0.len() != interior.len() {
        return Err(Error::LengthMismatch {
            expected: interior.len(),
            actual: mask.0.len(),
        });
    }
    let mut out = Vec::with_capacity(canvas.len());
    out.push(BOS);
    out.extend(interior.iter().zip(&mask.0).filter(|(_, &k)| k).map(|(&t, _)| t));
    out.push(EOS);
    Ok(Canvas(out))
}

pub fn apply_placeholder_insertion(canvas: &Canvas, plan: &PlaceholderPlan, k_max: usize) -> Result<Canvas> {
    if plan.0.len() != canvas.num_gaps() {
        return Err(Error::LengthMismatch {
            expected: canvas.num_gaps(),
            actual: plan.0.len(),
        });
    }
    if let Some((gap, &count)) = plan.0.iter().enumerate().find(|(_, &c)| c > k_max) {
        return Err(Error::PlaceholderOverflow { gap, count, k_max });
    }
    let mut out = Vec::with_capacity(canvas.len() + plan.total());
    for (i, &tok) in canvas.tokens().iter().enumerate() {
        out.push(tok);
        if let Some(&count) = plan.0.get(i) {
            out.extend(std::iter::repeat_n(PLH, count));
        }
    }
    Ok(Canvas(out))
}

pub fn apply_token_fill(canvas: &Canvas, fill: &TokenFill) -> Result<Canvas> {
    let n_plh = canvas.0.iter().filter(|&&t| t == PLH).count();
    if fill.0.len() != n_plh {
        return Err(Error::LengthMismatch {
            expected: n_plh,
            actual: fill.0.len(),
        });
    }
    let mut fills = fill.0.iter();
    let out = canvas
        .0
        .iter()
        .map(|&t| if t == PLH { *fills.next().unwrap() } else { t })
        .collect();
    Canvas::new(out)
}

/// Unit-cost edit distance (insert, delete, substitute).
pub fn levenshtein_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.len() < b.len() {
        return levenshtein_distance(b, a);
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Index pairs `(i, j)` with `a[i] == b[j]` forming a longest common
/// subsequence. Among optimal alignments the earliest positions of `a` are
/// matched first: the backtrace takes a match when possible and, when both
/// skips keep the optimum, skips in `b`.
pub fn lcs_alignment(a: &[TokenId], b: &[TokenId]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // suffix table: table[i*w + j] = LCS length of a[i..], b[j..]
    let mut table = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * w + j] = if a[i] == b[j] {
                table[(i + 1) * w + j + 1] + 1
            } else {
                table[(i + 1) * w + j].max(table[i * w + j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(table[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if table[i * w + j + 1] >= table[(i + 1) * w + j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    pairs
}

/// A longest common subsequence of `a` and `b`.
pub fn common_subsequence(a: &[TokenId], b: &[TokenId]) -> Vec<TokenId> {
    lcs_alignment(a, b).into_iter().map(|(i, _)| a[i]).collect()
}

/// Multiset overlap of `z` with `y`, divided by `|z|`.
pub fn token_overlap_sim(z: &[TokenId], y: &[TokenId]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Format("token overlap of an empty sequence".into()));
    }
    let mut remaining: std::collections::HashMap<TokenId, usize> = std::collections::HashMap::new();
    for &t in y {
        *remaining.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in z {
        if let Some(c) = remaining.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    Ok(overlap as f64 / z.len() as f64)
}
