//! Expert edit actions and the mixed neighbor-/target-centric oracle policy.
//!
//! Deletion labels keep exactly the canvas tokens that take part in a longest
//! common subsequence with the target; insertion labels fill the gaps of a
//! target subsequence back up to the full target. Which canvas each head is
//! trained on is decided by [`choose_policy`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelPair, TokenId};
use crate::edit_env::{
    apply_deletion, apply_placeholder_insertion, apply_token_fill, lcs_alignment, Canvas, DeletionMask,
    EditPolicy, PlaceholderPlan, TokenFill,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Probability that a batch uses the neighbor-centric policy.
    pub alpha: f64,
    /// Token-overlap threshold below which insertion falls back to target-centric.
    pub beta: f64,
    pub rnd_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            alpha: 0.6,
            beta: 0.3,
            rnd_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicySide {
    Neighbor,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyChoice {
    pub deletion: PolicySide,
    pub insertion: PolicySide,
}

impl PolicyChoice {
    pub const NEIGHBOR: PolicyChoice = PolicyChoice {
        deletion: PolicySide::Neighbor,
        insertion: PolicySide::Neighbor,
    };
    pub const MIXED: PolicyChoice = PolicyChoice {
        deletion: PolicySide::Neighbor,
        insertion: PolicySide::Target,
    };
    pub const TARGET: PolicyChoice = PolicyChoice {
        deletion: PolicySide::Target,
        insertion: PolicySide::Target,
    };

    pub fn uses_neighbor(&self) -> bool {
        self.deletion == PolicySide::Neighbor || self.insertion == PolicySide::Neighbor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub del_canvas: Canvas,
    pub del_labels: DeletionMask,
    pub ins_canvas: Canvas,
    pub plh_labels: PlaceholderPlan,
    pub fill_canvas: Canvas,
    pub tok_labels: TokenFill,
    pub policy: PolicyChoice,
}

/// Keeps the interior positions of `y_del` that align to `target` under the
/// deterministic LCS alignment.
pub fn oracle_deletion(y_del: &Canvas, target: &[TokenId]) -> DeletionMask {
    let interior = y_del.interior();
    let mut keep = vec![false; interior.len()];
    for (i, _) in lcs_alignment(interior, target) {
        keep[i] = true;
    }
    DeletionMask(keep)
}

/// Placeholder counts and fill tokens that grow `y_ins` into the target.
/// Counts are not clipped to any `k_max` here.
pub fn oracle_insertion(y_ins: &Canvas, target: &[TokenId]) -> Result<(PlaceholderPlan, TokenFill)> {
    let interior = y_ins.interior();
    let alignment = lcs_alignment(interior, target);
    if alignment.len() != interior.len() {
        return Err(Error::NotASubsequence);
    }
    let mut counts = Vec::with_capacity(interior.len() + 1);
    let mut fill = Vec::with_capacity(target.len() - interior.len());
    let mut next = 0;
    for &(_, j) in &alignment {
        counts.push(j - next);
        fill.extend_from_slice(&target[next..j]);
        next = j + 1;
    }
    counts.push(target.len() - next);
    fill.extend_from_slice(&target[next..]);
    Ok((PlaceholderPlan(counts), TokenFill(fill)))
}

/// Random corruption of the target: draw a drop rate uniformly, then drop each
/// token independently with that probability.
pub fn random_deletion<R: Rng + ?Sized>(target: &[TokenId], rng: &mut R) -> Result<Canvas> {
    let rate: f64 = rng.gen();
    random_deletion_at_rate(target, rate, rng)
}

pub fn random_deletion_at_rate<R: Rng + ?Sized>(target: &[TokenId], rate: f64, rng: &mut R) -> Result<Canvas> {
    if target.is_empty() {
        return Err(Error::Format("random deletion of an empty target".into()));
    }
    let kept: Vec<TokenId> = target
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= rate)
        .collect();
    Canvas::wrap(&kept)
}

/// The switching rule between neighbor- and target-centric oracles.
pub fn choose_policy(u: f64, sim_zy: f64, cfg: &OracleConfig) -> PolicyChoice {
    if u < cfg.alpha {
        if sim_zy > cfg.beta {
            PolicyChoice::NEIGHBOR
        } else {
            PolicyChoice::MIXED
        }
    } else {
        PolicyChoice::TARGET
    }
}

/// Builds one supervised instance.
///
/// `model` supplies roll-in predictions; `None` substitutes the oracle's own
/// decisions and is meant for tests.
pub fn make_training_instance<R: Rng + ?Sized>(
    pair: &ParallelPair,
    neighbor_target: Option<&[TokenId]>,
    model: Option<&dyn EditPolicy>,
    policy: PolicyChoice,
    rng: &mut R,
) -> Result<TrainingInstance> {
    build_instance(pair, neighbor_target, model, policy, None, rng)
}

/// As [`make_training_instance`], with an optional fixed drop rate for the
/// random-deletion roll-in.
pub fn build_instance<R: Rng + ?Sized>(
    pair: &ParallelPair,
    neighbor_target: Option<&[TokenId]>,
    model: Option<&dyn EditPolicy>,
    policy: PolicyChoice,
    drop_rate: Option<f64>,
    rng: &mut R,
) -> Result<TrainingInstance> {
    let target = &pair.target;
    let neighbor = match (policy.uses_neighbor(), neighbor_target) {
        (true, None) => return Err(Error::NoNeighbor),
        (_, n) => n,
    };

    let ins_canvas = match policy.insertion {
        PolicySide::Neighbor => {
            let z0 = Canvas::wrap(neighbor.expect("checked above"))?;
            let mask = match model {
                Some(m) => m.deletions(&z0)?,
                None => oracle_deletion(&z0, target),
            };
            let deleted = apply_deletion(&z0, &mask)?;
            let kept: Vec<TokenId> = lcs_alignment(target, deleted.interior())
                .into_iter()
                .map(|(i, _)| target[i])
                .collect();
            Canvas::wrap(&kept)?
        }
        PolicySide::Target => match drop_rate {
            Some(rate) => random_deletion_at_rate(target, rate, rng)?,
            None => random_deletion(target, rng)?,
        },
    };
    let (plh_labels, tok_labels) = oracle_insertion(&ins_canvas, target)?;
    let fill_canvas = apply_placeholder_insertion(&ins_canvas, &plh_labels, usize::MAX)?;

    let del_canvas = match policy.deletion {
        PolicySide::Neighbor => Canvas::wrap(neighbor.expect("checked above"))?,
        PolicySide::Target => {
            let predicted = match model {
                Some(m) => m.fills(&fill_canvas)?,
                None => tok_labels.clone(),
            };
            apply_token_fill(&fill_canvas, &predicted)?
        }
    };
    let del_labels = oracle_deletion(&del_canvas, target);

    Ok(TrainingInstance {
        del_canvas,
        del_labels,
        ins_canvas,
        plh_labels,
        fill_canvas,
        tok_labels,
        policy,
    })
}
