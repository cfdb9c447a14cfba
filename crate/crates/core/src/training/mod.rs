//! Imitation-learning loop: roll in with the current model, label with the
//! oracle, and optimize the summed head losses.

pub mod batching;
pub mod losses;
pub mod optim;

use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use losses::{compute_losses, HeadCounts, LossBreakdown, LossReduction};
pub use optim::{lr_schedule, AdamConfig, AdamW};

use crate::corpus::{ParallelPair, TokenId};
use crate::edit_env::token_overlap_sim;
use crate::error::{Error, Result};
use crate::model::checkpoint::save_checkpoint;
use crate::model::tensor::Tensor;
use crate::model::{ModelParameters, ModelPolicy, RollInMode};
use crate::oracle::{build_instance, choose_policy, OracleConfig, PolicyChoice, TrainingInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: u64,
    /// Token budget per batch, counting source plus target tokens.
    pub batch_tokens: usize,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub oracle: OracleConfig,
    pub loss_reduction: LossReduction,
    pub roll_in: RollInMode,
    /// Dev evaluation and checkpointing interval.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch_tokens: 1024,
            lr_peak: 5e-4,
            warmup_steps: 500,
            adam_betas: (0.9, 0.98),
            adam_eps: 1e-8,
            weight_decay: 0.01,
            dropout: 0.3,
            label_smoothing: 0.0,
            seed: 0,
            oracle: OracleConfig::default(),
            loss_reduction: LossReduction::Mean,
            roll_in: RollInMode::Greedy,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.warmup_steps < 1 {
            return bad("warmup_steps must be >= 1");
        }
        if self.batch_tokens == 0 || self.eval_every == 0 {
            return bad("batch_tokens and eval_every must be >= 1");
        }
        let rates = [self.lr_peak, self.adam_eps, self.weight_decay, self.dropout, self.label_smoothing];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("rates must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("dropout and label_smoothing must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_betas.0) || !(0.0..1.0).contains(&self.adam_betas.1) {
            return bad("adam betas must lie in [0, 1)");
        }
        self.oracle.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// A training pair with the target of its retrieved neighbor, if any.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub pair: &'a ParallelPair,
    pub neighbor: Option<&'a [TokenId]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyCounts {
    pub neighbor: usize,
    pub mixed: usize,
    pub target: usize,
}

impl PolicyCounts {
    fn record(&mut self, p: PolicyChoice) {
        match p {
            PolicyChoice::NEIGHBOR => self.neighbor += 1,
            PolicyChoice::MIXED => self.mixed += 1,
            _ => self.target += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub policies: PolicyCounts,
    pub plh_clipped: usize,
    pub n_instances: usize,
}

/// Deterministic seed from a base seed and two counters.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Oracle instances for a batch, rolled in with `params`. The policy draw `u`
/// is shared by the whole batch.
pub fn build_batch_instances(
    params: &ModelParameters<f32>,
    batch: &[TrainingExample],
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<TrainingInstance>> {
    let u: f64 = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, step, u64::MAX)).gen();
    batch
        .par_iter()
        .map(|ex| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, step, ex.pair.id));
            let policy = match ex.neighbor {
                Some(z) => choose_policy(u, token_overlap_sim(z, &ex.pair.target)?, &cfg.oracle),
                None => PolicyChoice::TARGET,
            };
            let model = ModelPolicy::new(params, &ex.pair.source, params.config.k_max)?.with_mode(cfg.roll_in, rng.gen());
            build_instance(ex.pair, ex.neighbor, Some(&model), policy, None, &mut rng)
        })
        .collect()
}

/// One optimizer update on one batch.
pub fn train_step(
    params: &mut ModelParameters<f32>,
    opt: &mut AdamW,
    batch: &[TrainingExample],
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let instances = build_batch_instances(params, batch, cfg, step)?;
    let mut counts = HeadCounts::default();
    let mut policies = PolicyCounts::default();
    for inst in &instances {
        counts.add(HeadCounts::of(inst));
        policies.record(inst.policy);
    }
    let weights = counts.weights(cfg.loss_reduction);

    let p: &ModelParameters<f32> = params;
    let results: Vec<_> = batch
        .par_iter()
        .zip(&instances)
        .map(|(ex, inst)| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0xD20F, step, ex.pair.id));
            losses::instance_gradients(p, &ex.pair.source, inst, cfg.label_smoothing, weights, &mut Some(&mut drop_rng))
        })
        .collect();

    let mut grads: Vec<Tensor<f64>> = params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let mut raw = [0.0; 3];
    let mut clipped = 0;
    for r in results {
        let (g, head_sums, c) = r?;
        for k in 0..3 {
            raw[k] += head_sums[k];
        }
        clipped += c;
        if let Some(g) = g {
            for (acc, t) in grads.iter_mut().zip(&g) {
                acc.data.iter_mut().zip(&t.data).for_each(|(a, &x)| *a += x as f64);
            }
        }
    }
    let report_losses = losses::breakdown(raw, weights, counts);
    if !report_losses.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step,
            detail: format!(
                "loss {} (del {}, plh {}, tok {})",
                report_losses.total, report_losses.del_loss, report_losses.plh_loss, report_losses.tok_loss
            ),
        });
    }
    if clipped > 0 {
        log::warn!("step {step}: {clipped} placeholder labels clipped to k_max");
    }
    let lr = lr_schedule(step, cfg.lr_peak, cfg.warmup_steps);
    opt.update(params, &grads, lr);
    Ok(StepReport {
        step,
        lr,
        losses: report_losses,
        policies,
        plh_clipped: clipped,
        n_instances: batch.len(),
    })
}

/// Where the loop writes its log and checkpoints.
#[derive(Default)]
pub struct TrainIo {
    /// Receives one JSON object per step.
    pub log: Option<Box<dyn Write>>,
    /// `step_<n>/` and `best/` checkpoints are written below this directory.
    pub checkpoint_dir: Option<PathBuf>,
    pub vocab_hash: u64,
}

pub type EvalHook<'a> = dyn FnMut(&ModelParameters<f32>, u64) -> Result<f64> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters<f32>,
    pub best_step: u64,
    pub best_metric: Option<f64>,
    pub last_step: u64,
    pub history: Vec<StepReport>,
    /// Examples dropped for exceeding the model's position limit.
    pub skipped_overlong: usize,
}

/// Trains from `init`. With an eval hook, the returned parameters are those
/// with the highest metric among the evaluation points; otherwise the last.
pub fn train_loop(
    init: ModelParameters<f32>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    mut eval: Option<&mut EvalHook>,
    io: &mut TrainIo,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init;
    params.config.dropout = cfg.dropout;
    let max_pos = params.config.max_positions;
    let fits = |n: usize| n + 2 <= max_pos;
    let usable: Vec<TrainingExample> = examples
        .iter()
        .filter(|ex| ex.pair.source.len() <= max_pos && fits(ex.pair.target.len()))
        .map(|ex| TrainingExample {
            pair: ex.pair,
            neighbor: ex.neighbor.filter(|z| !z.is_empty() && fits(z.len())),
        })
        .collect();
    let skipped_overlong = examples.len() - usable.len();
    if skipped_overlong > 0 {
        log::warn!("skipping {skipped_overlong} training pairs longer than max_positions");
    }

    let mut outcome = TrainOutcome {
        params: params.clone(),
        best_step: 0,
        best_metric: None,
        last_step: 0,
        history: Vec::new(),
        skipped_overlong,
    };
    if cfg.max_steps == 0 {
        if let Some(e) = eval.as_mut() {
            outcome.best_metric = Some(e(&params, 0)?);
        }
        save_points(io, &params, 0, outcome.best_metric, true)?;
        return Ok(outcome);
    }
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let costs: Vec<usize> = usable.iter().map(|e| e.pair.source.len() + e.pair.target.len()).collect();
    let mut opt = AdamW::new(&params, cfg.adam());
    let mut step = 0;
    let mut epoch = 0;
    'outer: loop {
        for batch in batching::make_batches(&costs, cfg.batch_tokens, mix_seed(cfg.seed, epoch, 0xBA7C)) {
            step += 1;
            let exs: Vec<TrainingExample> = batch.iter().map(|&i| usable[i]).collect();
            let report = train_step(&mut params, &mut opt, &exs, cfg, step)?;
            if let Some(w) = io.log.as_mut() {
                let line = serde_json::to_string(&report)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            outcome.history.push(report);
            if step % cfg.eval_every == 0 || step == cfg.max_steps {
                let metric = match eval.as_mut() {
                    Some(e) => Some(e(&params, step)?),
                    None => None,
                };
                let improved = match (metric, outcome.best_metric) {
                    (Some(m), Some(b)) => m > b,
                    (Some(_), None) => true,
                    (None, _) => true,
                };
                if improved {
                    outcome.params = params.clone();
                    outcome.best_step = step;
                    outcome.best_metric = metric;
                }
                save_points(io, &params, step, metric, improved)?;
            }
            if step >= cfg.max_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }
    if let Some(w) = io.log.as_mut() {
        w.flush().map_err(|e| Error::io("training log", e))?;
    }
    outcome.last_step = step;
    Ok(outcome)
}

fn save_points(io: &TrainIo, params: &ModelParameters<f32>, step: u64, metric: Option<f64>, best: bool) -> Result<()> {
    if let Some(dir) = &io.checkpoint_dir {
        save_checkpoint(&dir.join(format!("step_{step}")), params, io.vocab_hash, step, metric)?;
        if best {
            save_checkpoint(&dir.join("best"), params, io.vocab_hash, step, metric)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            d_hidden: 32,
            n_head: 2,
            n_layer: 1,
            k_max: 8,
            vocab_size: 20,
            max_positions: 16,
            dropout: 0.0,
            tie_token_head: false,
        }
    }

    fn copy_pairs(seed: u64) -> Vec<ParallelPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..16)
            .map(|i| {
                let s: Vec<u32> = (0..rng.gen_range(2..6)).map(|_| rng.gen_range(5..20)).collect();
                ParallelPair::new(i, s.clone(), s).unwrap()
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            max_steps: 10,
            batch_tokens: 64,
            lr_peak: 3e-3,
            warmup_steps: 5,
            dropout: 0.0,
            eval_every: 5,
            ..Default::default()
        }
    }

    #[test]
    fn step_is_deterministic_and_decomposes() {
        let pairs = copy_pairs(0);
        let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: Some(&p.target) }).collect();
        let run = || {
            let mut p = ModelParameters::<f32>::init(&tiny(), 1).unwrap();
            let mut opt = AdamW::new(&p, cfg().adam());
            train_step(&mut p, &mut opt, &exs[..4], &cfg(), 1).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let l = a.losses;
        assert!((l.total - (l.del_loss + l.plh_loss + l.tok_loss)).abs() <= 1e-6 * l.total.abs());
    }

    #[test]
    fn alpha_controls_neighbor_usage() {
        let pairs = copy_pairs(1);
        let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: Some(&p.target) }).collect();
        let p = ModelParameters::<f32>::init(&tiny(), 1).unwrap();
        for step in 1..=20 {
            let c0 = TrainConfig { oracle: OracleConfig { alpha: 0.0, ..Default::default() }, ..cfg() };
            let inst = build_batch_instances(&p, &exs, &c0, step).unwrap();
            assert!(inst.iter().all(|i| i.policy == PolicyChoice::TARGET));
            let c1 = TrainConfig { oracle: OracleConfig { alpha: 1.0, ..Default::default() }, ..cfg() };
            let inst = build_batch_instances(&p, &exs, &c1, step).unwrap();
            assert!(inst.iter().all(|i| i.policy == PolicyChoice::NEIGHBOR));
        }
    }

    #[test]
    fn zero_steps_returns_initial() {
        let pairs = copy_pairs(2);
        let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: None }).collect();
        let init = ModelParameters::<f32>::init(&tiny(), 1).unwrap();
        let out = train_loop(init.clone(), &exs, &TrainConfig { max_steps: 0, ..cfg() }, None, &mut TrainIo::default()).unwrap();
        assert_eq!(out.params.tensors(), init.tensors());
        assert_eq!(out.best_step, 0);
    }

    #[test]
    fn loop_selects_best_metric_and_logs() {
        let pairs = copy_pairs(3);
        let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: None }).collect();
        let init = ModelParameters::<f32>::init(&tiny(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut io = TrainIo {
            log: Some(Box::new(std::fs::File::create(dir.path().join("log.jsonl")).unwrap())),
            checkpoint_dir: Some(dir.path().join("ckpt")),
            vocab_hash: 7,
        };
        // metric peaks at step 5
        let mut hook = |_: &ModelParameters<f32>, step: u64| Ok(if step == 5 { 10.0 } else { 1.0 });
        let out = train_loop(init, &exs, &cfg(), Some(&mut hook), &mut io).unwrap();
        drop(io);
        assert_eq!(out.best_step, 5);
        assert_eq!(out.last_step, 10);
        let (best, m) = crate::model::checkpoint::load_checkpoint::<f32>(&dir.path().join("ckpt/best")).unwrap();
        assert_eq!(m.step, 5);
        assert_eq!(best.tensors(), out.params.tensors());
        let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 10);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for key in ["step", "lr", "del_loss", "plh_loss", "tok_loss", "policies"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn diverged_loss_aborts() {
        let pairs = copy_pairs(4);
        let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: None }).collect();
        let mut p = ModelParameters::<f32>::init(&tiny(), 1).unwrap();
        p.tensor_mut("head_plh").unwrap().data[0] = f32::NAN;
        let mut opt = AdamW::new(&p, cfg().adam());
        assert!(matches!(train_step(&mut p, &mut opt, &exs[..2], &cfg(), 1), Err(Error::Diverged { .. })));
    }

    #[test]
    fn copy_task_loss_decreases() {
        let mut decreasing = 0;
        let runs = 20;
        for seed in 0..runs {
            let pairs = copy_pairs(100 + seed);
            let exs: Vec<TrainingExample> = pairs.iter().map(|p| TrainingExample { pair: p, neighbor: Some(&p.target) }).collect();
            let c = TrainConfig { seed, max_steps: 50, batch_tokens: 1000, ..cfg() };
            let out = train_loop(ModelParameters::<f32>::init(&tiny(), seed).unwrap(), &exs, &c, None, &mut TrainIo::default()).unwrap();
            let first = out.history[0].losses.total;
            let last = out.history.last().unwrap().losses.total;
            if last < first {
                decreasing += 1;
            }
        }
        assert!(decreasing * 100 >= 95 * runs, "{decreasing}/{runs}");
    }
}
