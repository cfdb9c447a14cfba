//! Deletion, placeholder and token losses of one training instance.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::Result;
use crate::model::graph::{Graph, NodeId};
use crate::model::tensor::{Scalar, Tensor};
use crate::model::{DropoutRng, ModelParameters};
use crate::oracle::TrainingInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Each head's summed NLL is divided by that head's label count.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub del_loss: f64,
    pub plh_loss: f64,
    pub tok_loss: f64,
    pub n_del: usize,
    pub n_plh: usize,
    pub n_tok: usize,
}

impl LossBreakdown {
    pub fn ins_loss(&self) -> f64 {
        self.plh_loss + self.tok_loss
    }
}

/// Label counts per head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeadCounts {
    pub del: usize,
    pub plh: usize,
    pub tok: usize,
}

impl HeadCounts {
    pub fn of(inst: &TrainingInstance) -> Self {
        Self {
            del: inst.del_labels.0.len(),
            plh: inst.plh_labels.0.len(),
            tok: inst.tok_labels.0.len(),
        }
    }

    pub fn add(&mut self, o: HeadCounts) {
        self.del += o.del;
        self.plh += o.plh;
        self.tok += o.tok;
    }

    /// Multipliers that turn per-head sums into the reduced loss.
    pub fn weights(&self, reduction: LossReduction) -> [f64; 3] {
        let w = |n: usize| match reduction {
            LossReduction::Sum => 1.0,
            LossReduction::Mean if n == 0 => 0.0,
            LossReduction::Mean => 1.0 / n as f64,
        };
        [w(self.del), w(self.plh), w(self.tok)]
    }
}

/// Summed NLL nodes per head (absent when the head has no labels).
pub struct HeadSums {
    pub del: Option<NodeId>,
    pub plh: Option<NodeId>,
    pub tok: Option<NodeId>,
    /// Placeholder labels that exceeded `k_max` and were clipped.
    pub clipped: usize,
}

/// Records the three heads' cross-entropies for one instance into `g`.
pub fn record_instance<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParameters<T>,
    source: &[TokenId],
    inst: &TrainingInstance,
    smoothing: f64,
    drop: &mut DropoutRng,
) -> Result<HeadSums> {
    let enc = params.encode_graph(g, source, drop)?;

    let del = if inst.del_labels.0.is_empty() {
        None
    } else {
        let h = params.decode_graph(g, &inst.del_canvas, enc, drop)?;
        let logits = params.deletion_logits_graph(g, h);
        let targets = inst.del_labels.0.iter().map(|&k| k as usize).collect();
        Some(g.cross_entropy(logits, targets, smoothing))
    };

    let k_max = params.config.k_max;
    let mut clipped = 0;
    let plh = {
        let h = params.decode_graph(g, &inst.ins_canvas, enc, drop)?;
        let logits = params.placeholder_logits_graph(g, h);
        let targets = inst
            .plh_labels
            .0
            .iter()
            .map(|&c| {
                if c > k_max {
                    clipped += 1;
                }
                c.min(k_max)
            })
            .collect();
        Some(g.cross_entropy(logits, targets, smoothing))
    };

    let tok = if inst.tok_labels.0.is_empty() {
        None
    } else {
        let h = params.decode_graph(g, &inst.fill_canvas, enc, drop)?;
        let positions = inst.fill_canvas.placeholder_positions();
        let logits = params.token_logits_graph(g, h, &inst.fill_canvas, &positions)?;
        let targets = inst.tok_labels.0.iter().map(|&t| t as usize).collect();
        Some(g.cross_entropy(logits, targets, smoothing))
    };

    Ok(HeadSums { del, plh, tok, clipped })
}

/// Weighted sum of the head nodes, plus each head's raw summed value.
pub fn combine<T: Scalar>(g: &mut Graph<T>, sums: &HeadSums, weights: [f64; 3]) -> (Option<NodeId>, [f64; 3]) {
    let mut parts = Vec::new();
    let mut raw = [0.0; 3];
    for (k, node) in [sums.del, sums.plh, sums.tok].into_iter().enumerate() {
        if let Some(n) = node {
            raw[k] = g.scalar(n).to_f64().unwrap();
            if weights[k] != 0.0 {
                parts.push(g.scale(n, T::of(weights[k])));
            }
        }
    }
    let root = if parts.is_empty() { None } else { Some(g.sum(parts)) };
    (root, raw)
}

/// Per-head losses of a single instance, dropout off.
pub fn compute_losses<T: Scalar>(
    params: &ModelParameters<T>,
    source: &[TokenId],
    inst: &TrainingInstance,
    smoothing: f64,
    reduction: LossReduction,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(params.tensors());
    let sums = record_instance(&mut g, params, source, inst, smoothing, &mut None)?;
    let counts = HeadCounts::of(inst);
    let w = counts.weights(reduction);
    let (_, raw) = combine(&mut g, &sums, w);
    Ok(breakdown(raw, w, counts))
}

pub(crate) fn breakdown(raw: [f64; 3], w: [f64; 3], counts: HeadCounts) -> LossBreakdown {
    let (d, p, t) = (raw[0] * w[0], raw[1] * w[1], raw[2] * w[2]);
    LossBreakdown {
        total: d + p + t,
        del_loss: d,
        plh_loss: p,
        tok_loss: t,
        n_del: counts.del,
        n_plh: counts.plh,
        n_tok: counts.tok,
    }
}

/// Loss and parameter gradients of one instance under fixed head weights.
pub fn instance_gradients<T: Scalar>(
    params: &ModelParameters<T>,
    source: &[TokenId],
    inst: &TrainingInstance,
    smoothing: f64,
    weights: [f64; 3],
    drop: &mut DropoutRng,
) -> Result<(Option<Vec<Tensor<T>>>, [f64; 3], usize)> {
    let mut g = Graph::new(params.tensors());
    let sums = record_instance(&mut g, params, source, inst, smoothing, drop)?;
    let (root, raw) = combine(&mut g, &sums, weights);
    Ok((root.map(|r| g.backward(r)), raw, sums.clipped))
}
