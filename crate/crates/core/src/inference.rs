//! Iterative delete → insert-placeholders → fill decoding from a neighbor or
//! an empty canvas.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::edit_env::{
    apply_deletion, apply_placeholder_insertion, apply_token_fill, token_overlap_sim, Canvas, EditPolicy, PlaceholderPlan,
};
use crate::error::{Error, Result};
use crate::model::tensor::Scalar;
use crate::model::{ModelParameters, ModelPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Neighbor,
    Empty,
}

/// Which similarity decides between neighbor and empty initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSimilarity {
    /// The retrieval (rerank) score between the query and the neighbor's source.
    #[default]
    Retrieval,
    /// Token overlap of the neighbor's target against the query source.
    TargetSourceOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub max_iterations: usize,
    pub beta: f64,
    /// Upper bound on placeholders per gap, applied on top of the model's k_max.
    pub k_max: usize,
    pub init_similarity: InitSimilarity,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            max_iterations: 10,
            beta: 0.3,
            k_max: 255,
            init_similarity: InitSimilarity::Retrieval,
        }
    }
}

/// Canvases around the three passes of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub before: Canvas,
    pub after_deletion: Canvas,
    pub after_placeholders: Canvas,
    pub after_fill: Canvas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub output: Vec<TokenId>,
    pub iterations: usize,
    pub steps: Vec<IterationRecord>,
    pub init_kind: InitKind,
    pub latency_ms: f64,
    pub retrieval_ms: f64,
}

/// A retrieved neighbor as seen by the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedNeighbor {
    pub target: Vec<TokenId>,
    pub score: f64,
    pub retrieval_ms: f64,
}

pub fn select_init(score: f64, neighbor_target: &[TokenId], beta: f64) -> Result<(Canvas, InitKind)> {
    if score > beta && !neighbor_target.is_empty() {
        Ok((Canvas::wrap(neighbor_target)?, InitKind::Neighbor))
    } else {
        Ok((Canvas::empty(), InitKind::Empty))
    }
}

/// Cuts a placeholder plan from the right until the canvas fits.
fn truncate_plan(plan: &mut PlaceholderPlan, canvas_len: usize, max_positions: usize) {
    let mut excess = (canvas_len + plan.total()).saturating_sub(max_positions);
    if excess == 0 {
        return;
    }
    log::warn!("placeholder plan exceeds max_positions by {excess}; truncating from the right");
    for count in plan.0.iter_mut().rev() {
        let cut = excess.min(*count);
        *count -= cut;
        excess -= cut;
        if excess == 0 {
            break;
        }
    }
}

/// One full iteration: greedy deletion, placeholder insertion, then fill,
/// each pass consulting the policy on the current canvas.
pub fn decode_iteration(
    policy: &dyn EditPolicy,
    canvas: &Canvas,
    max_positions: usize,
    k_max: usize,
) -> Result<IterationRecord> {
    let mask = policy.deletions(canvas)?;
    let after_deletion = apply_deletion(canvas, &mask)?;
    let mut plan = policy.placeholders(&after_deletion)?;
    for c in plan.0.iter_mut() {
        *c = (*c).min(k_max);
    }
    truncate_plan(&mut plan, after_deletion.len(), max_positions);
    let after_placeholders = apply_placeholder_insertion(&after_deletion, &plan, k_max)?;
    let fill = policy.fills(&after_placeholders)?;
    let after_fill = apply_token_fill(&after_placeholders, &fill)?;
    Ok(IterationRecord {
        before: canvas.clone(),
        after_deletion,
        after_placeholders,
        after_fill,
    })
}

/// Runs iterations from `init` until an iteration leaves the canvas unchanged
/// or `max_iterations` is reached. `retrieval_ms` is folded into the latency.
pub fn generate(
    policy: &dyn EditPolicy,
    init: Canvas,
    init_kind: InitKind,
    cfg: &InferConfig,
    max_positions: usize,
    retrieval_ms: f64,
) -> Result<GenerationTrace> {
    let start = Instant::now();
    let trace = run_iterations(policy, init, init_kind, cfg, max_positions)?;
    Ok(GenerationTrace {
        latency_ms: retrieval_ms + start.elapsed().as_secs_f64() * 1e3,
        retrieval_ms,
        ..trace
    })
}

fn run_iterations(
    policy: &dyn EditPolicy,
    init: Canvas,
    init_kind: InitKind,
    cfg: &InferConfig,
    max_positions: usize,
) -> Result<GenerationTrace> {
    if cfg.max_iterations == 0 {
        return Err(Error::Config("max_iterations must be >= 1".into()));
    }
    let mut canvas = init;
    let mut steps = Vec::new();
    while steps.len() < cfg.max_iterations {
        let record = decode_iteration(policy, &canvas, max_positions, cfg.k_max)?;
        let converged = record.after_fill == canvas;
        canvas = record.after_fill.clone();
        steps.push(record);
        if converged {
            break;
        }
    }
    Ok(GenerationTrace {
        output: canvas.interior().to_vec(),
        iterations: steps.len(),
        steps,
        init_kind,
        latency_ms: 0.0,
        retrieval_ms: 0.0,
    })
}

/// Full pipeline for one sentence with a model: encode, pick the initial
/// canvas, decode. Latency covers encoding and all iterations plus retrieval.
pub fn translate<T: Scalar>(
    params: &ModelParameters<T>,
    source: &[TokenId],
    neighbor: Option<&RetrievedNeighbor>,
    cfg: &InferConfig,
) -> Result<GenerationTrace> {
    let start = Instant::now();
    let policy = ModelPolicy::new(params, source, cfg.k_max)?;
    let (init, kind) = match neighbor {
        Some(n) => {
            let score = match cfg.init_similarity {
                InitSimilarity::Retrieval => n.score,
                InitSimilarity::TargetSourceOverlap if !n.target.is_empty() => token_overlap_sim(&n.target, source)?,
                InitSimilarity::TargetSourceOverlap => 0.0,
            };
            select_init(score, &n.target, cfg.beta)?
        }
        None => (Canvas::empty(), InitKind::Empty),
    };
    let retrieval_ms = neighbor.map_or(0.0, |n| n.retrieval_ms);
    let trace = run_iterations(&policy, init, kind, cfg, params.config.max_positions)?;
    Ok(GenerationTrace {
        latency_ms: retrieval_ms + start.elapsed().as_secs_f64() * 1e3,
        retrieval_ms,
        ..trace
    })
}
