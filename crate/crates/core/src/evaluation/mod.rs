//! Translation metrics and analysis.

pub mod bleu;
pub mod bootstrap;
pub mod chrf;
pub mod scatter;
pub mod tok13a;

use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu, sentence_bleu};
pub use bootstrap::bootstrap_significance;
pub use chrf::corpus_chrf;
pub use scatter::{similarity_scatter, summarize, ScatterMode, ScatterRecord, ScatterSummary};
pub use tok13a::tokenize_13a;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub chrf: f64,
    pub mean_iterations: f64,
    pub mean_latency_ms: f64,
    pub n_sentences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_p: Option<f64>,
}

/// Per-sentence decoding cost, as recorded by the generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeCost {
    pub iterations: usize,
    pub latency_ms: f64,
}

pub fn evaluate<H: AsRef<str> + Sync, R: AsRef<str> + Sync>(
    hyps: &[H],
    refs: &[R],
    costs: &[DecodeCost],
) -> Result<MetricReport> {
    if !costs.is_empty() && costs.len() != hyps.len() {
        return Err(Error::LengthMismatch {
            expected: hyps.len(),
            actual: costs.len(),
        });
    }
    let bleu = corpus_bleu(hyps, refs)?;
    let chrf = corpus_chrf(hyps, refs)?;
    let (mean_iterations, mean_latency_ms) = if costs.is_empty() {
        (0.0, 0.0)
    } else {
        let n = costs.len() as f64;
        (
            costs.iter().map(|c| c.iterations as f64).sum::<f64>() / n,
            costs.iter().map(|c| c.latency_ms).sum::<f64>() / n,
        )
    };
    Ok(MetricReport {
        bleu,
        chrf,
        mean_iterations,
        mean_latency_ms,
        n_sentences: hyps.len(),
        bootstrap_p: None,
    })
}
