//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use neighboredit::corpus::{build_vocab, ParallelPair, TokenId};
use neighboredit::edit_env::{
    apply_deletion, apply_placeholder_insertion, apply_token_fill, levenshtein_distance, Canvas, DeletionMask, EditPolicy,
    PlaceholderPlan, TokenFill,
};
use neighboredit::evaluation::bleu::corpus_bleu;
use neighboredit::evaluation::{bootstrap_significance, corpus_chrf, tokenize_13a};
use neighboredit::inference::{generate, translate, InferConfig, InitKind, RetrievedNeighbor};
use neighboredit::model::{ModelConfig, ModelParameters};
use neighboredit::oracle::{
    choose_policy, make_training_instance, oracle_deletion, oracle_insertion, OracleConfig, PolicyChoice, PolicySide,
    TrainingInstance,
};
use neighboredit::retrieval::{brute_force, build_datastore, retrieve, Datastore, DatastoreConfig, RetrievalConfig};
use neighboredit::synthetic::{templated_corpus, SyntheticCorpus};
use neighboredit::training::losses::instance_gradients;
use neighboredit::training::{train_loop, HeadCounts, LossReduction, TrainConfig, TrainIo, TrainingExample};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn all_sequences(alphabet: &[TokenId], max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut t: Vec<TokenId> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn random_seq(rng: &mut ChaCha8Rng, len: usize, alphabet: &[TokenId]) -> Vec<TokenId> {
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn subsequences(seq: &[TokenId]) -> Vec<Vec<TokenId>> {
    (0u32..1 << seq.len())
        .map(|m| seq.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, &t)| t).collect())
        .collect()
}

/// Distance reached by the oracle mask against the best over every mask.
fn deletion_gap(canvas: &[TokenId], subs: &[Vec<TokenId>], target: &[TokenId]) -> Result<(usize, usize), String> {
    let c = Canvas::wrap(canvas).map_err(|e| e.to_string())?;
    let kept = apply_deletion(&c, &oracle_deletion(&c, target)).map_err(|e| e.to_string())?;
    let got = levenshtein_distance(target, kept.interior());
    let best = subs.iter().map(|s| levenshtein_distance(target, s)).min().unwrap();
    Ok((got, best))
}

fn deletion_optimality() -> Outcome {
    let alphabet = [10, 11, 12, 13];
    let canvases = all_sequences(&alphabet, 7);
    let short_targets = all_sequences(&alphabet, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs = 0usize;
    for canvas in &canvases {
        let subs = subsequences(canvas);
        let long_targets: Vec<Vec<TokenId>> = (0..20)
            .map(|_| {
                let n = rng.gen_range(4..=7);
                random_seq(&mut rng, n, &alphabet)
            })
            .collect();
        for target in short_targets.iter().chain(&long_targets) {
            let (got, best) = deletion_gap(canvas, &subs, target)?;
            ensure(got == best, || format!("canvas {canvas:?} target {target:?}: {got} > {best}"))?;
            pairs += 1;
        }
    }
    for _ in 0..500 {
        let n = rng.gen_range(8..=12);
        let canvas = random_seq(&mut rng, n, &alphabet);
        let m = rng.gen_range(0..=12);
        let target = random_seq(&mut rng, m, &alphabet);
        let (got, best) = deletion_gap(&canvas, &subsequences(&canvas), &target)?;
        ensure(got == best, || format!("canvas {canvas:?} target {target:?}: {got} > {best}"))?;
        pairs += 1;
    }
    Ok(format!("{pairs} pairs, all canvases up to length 7 over 4 symbols"))
}

fn reconstruct(canvas: &Canvas, target: &[TokenId]) -> Result<(Vec<TokenId>, usize), String> {
    let (plan, fill) = oracle_insertion(canvas, target).map_err(|e| e.to_string())?;
    let with_plh = apply_placeholder_insertion(canvas, &plan, usize::MAX).map_err(|e| e.to_string())?;
    let filled = apply_token_fill(&with_plh, &fill).map_err(|e| e.to_string())?;
    Ok((filled.interior().to_vec(), fill.0.len()))
}

fn insertion_reconstruction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphabet: Vec<TokenId> = (10..16).collect();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=40);
        let target = random_seq(&mut rng, n, &alphabet);
        let keep = rng.gen::<f64>();
        let sub: Vec<TokenId> = target.iter().copied().filter(|_| rng.gen::<f64>() < keep).collect();
        let canvas = Canvas::wrap(&sub).map_err(|e| e.to_string())?;
        let (got, _) = reconstruct(&canvas, &target)?;
        ensure(got == target, || format!("{sub:?} -> {got:?}, want {target:?}"))?;
    }
    Ok("1000 pairs".into())
}

fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] { dp[i - 1][j - 1] + 1 } else { dp[i - 1][j].max(dp[i][j - 1]) };
        }
    }
    dp[a.len()][b.len()]
}

fn neighbor_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alphabet: Vec<TokenId> = (10..18).collect();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=30);
        let target = random_seq(&mut rng, n, &alphabet);
        let m = rng.gen_range(1..=30);
        let neighbor = random_seq(&mut rng, m, &alphabet);
        let z = Canvas::wrap(&neighbor).map_err(|e| e.to_string())?;
        let kept = apply_deletion(&z, &oracle_deletion(&z, &target)).map_err(|e| e.to_string())?;
        let (got, inserted) = reconstruct(&kept, &target)?;
        ensure(got == target, || format!("neighbor {neighbor:?} target {target:?} -> {got:?}"))?;
        let expected = target.len() - lcs_len(&neighbor, &target);
        ensure(inserted == expected, || format!("inserted {inserted}, expected {expected}"))?;
    }
    Ok("1000 pairs".into())
}

/// Plain exponential recursion over the three edit operations.
fn naive_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = naive_distance(ra, rb) + usize::from(x != y);
            let del = naive_distance(ra, b) + 1;
            let ins = naive_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

fn levenshtein_exhaustive() -> Outcome {
    let seqs = all_sequences(&[10, 11, 12], 6);
    for a in &seqs {
        for b in &seqs {
            let (got, want) = (levenshtein_distance(a, b), naive_distance(a, b));
            ensure(got == want, || format!("{a:?} vs {b:?}: {got} != {want}"))?;
        }
    }
    Ok(format!("{} pairs over 3 symbols", seqs.len() * seqs.len()))
}

fn gradient_instances() -> Vec<(ParallelPair, TrainingInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = ParallelPair::new(0, vec![5, 6, 7, 8], vec![9, 10, 11, 12, 13]).unwrap();
    let b = ParallelPair::new(1, vec![14, 6, 15], vec![10, 10, 12, 7, 9, 11]).unwrap();
    let inst_a = make_training_instance(&a, Some(&[9, 14, 11, 15, 13]), None, PolicyChoice::NEIGHBOR, &mut rng).unwrap();
    let inst_b = make_training_instance(&b, Some(&[10, 5]), None, PolicyChoice::MIXED, &mut rng).unwrap();
    let inst_c = make_training_instance(&b, None, None, PolicyChoice::TARGET, &mut rng).unwrap();
    vec![(a, inst_a), (b.clone(), inst_b), (b, inst_c)]
}

/// Pooled-mean loss and its analytic gradient over a fixed set of instances.
fn batch_loss(p: &ModelParameters<f64>, batch: &[(ParallelPair, TrainingInstance)], grad: bool) -> (f64, Vec<Vec<f64>>) {
    let mut counts = HeadCounts::default();
    batch.iter().for_each(|(_, i)| counts.add(HeadCounts::of(i)));
    let w = counts.weights(LossReduction::Mean);
    let mut total = 0.0;
    let mut g: Vec<Vec<f64>> = p.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
    for (pair, inst) in batch {
        let (gi, raw, _) = instance_gradients(p, &pair.source, inst, 0.0, w, &mut None).unwrap();
        total += raw.iter().zip(&w).map(|(r, w)| r * w).sum::<f64>();
        if grad {
            for (acc, t) in g.iter_mut().zip(gi.unwrap()) {
                acc.iter_mut().zip(&t.data).for_each(|(a, x)| *a += x);
            }
        }
    }
    (total, g)
}

fn gradient_check() -> Outcome {
    let batch = gradient_instances();
    let mut counts = HeadCounts::default();
    batch.iter().for_each(|(_, i)| counts.add(HeadCounts::of(i)));
    ensure(counts.del > 0 && counts.plh > 0 && counts.tok > 0, || format!("{counts:?}"))?;
    let mut worst = 0.0f64;
    for tie in [false, true] {
        let cfg = ModelConfig {
            d_model: 8,
            d_hidden: 16,
            n_head: 2,
            n_layer: 1,
            k_max: 4,
            vocab_size: 16,
            max_positions: 16,
            dropout: 0.0,
            tie_token_head: tie,
        };
        let mut p = ModelParameters::<f64>::init(&cfg, 11).map_err(|e| e.to_string())?;
        // Larger weights than the default init keep gradients well above rounding noise.
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= 10.0);
        }
        let (_, analytic) = batch_loss(&p, &batch, true);
        let h = 1e-5;
        for k in 0..analytic.len() {
            let mut numeric = vec![0.0; analytic[k].len()];
            for i in 0..numeric.len() {
                let x0 = p.tensors()[k].data[i];
                p.tensors_mut()[k].data[i] = x0 + h;
                let (fp, _) = batch_loss(&p, &batch, false);
                p.tensors_mut()[k].data[i] = x0 - h;
                let (fm, _) = batch_loss(&p, &batch, false);
                p.tensors_mut()[k].data[i] = x0;
                numeric[i] = (fp - fm) / (2.0 * h);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = analytic[k].iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let scale = norm(&analytic[k]).max(norm(&numeric));
            let name = &p.names()[k];
            if scale < 1e-9 {
                ensure(norm(&diff) < 1e-9, || format!("{name}: zero gradient mismatch"))?;
                continue;
            }
            let rel = norm(&diff) / scale;
            worst = worst.max(rel);
            ensure(rel < 1e-4, || format!("{name} (tied={tie}): relative error {rel:.3e}"))?;
        }
    }
    Ok(format!("max per-tensor relative error {worst:.2e}"))
}

const OVERFIT_STEPS: u64 = 2000;

struct Overfit {
    corpus: SyntheticCorpus,
    datastore: Datastore,
    params: ModelParameters<f32>,
    seconds: f64,
}

fn overfit_model() -> Result<Overfit, String> {
    let err = |e: neighboredit::Error| e.to_string();
    let start = Instant::now();
    let corpus = templated_corpus(0).map_err(err)?;
    let ds_cfg = DatastoreConfig { dim: 32, ..Default::default() };
    let datastore = build_datastore(&corpus.train.pairs, corpus.vocab.len(), &ds_cfg, None).map_err(err)?;
    let exclude = RetrievalConfig { exclude_self: true, ..Default::default() };
    let mut neighbors = Vec::new();
    for p in &corpus.train.pairs {
        let n = retrieve(&datastore, &p.source, None, &exclude, Some(p.id)).map_err(err)?;
        neighbors.push(n.index);
    }
    let examples: Vec<TrainingExample> = corpus
        .train
        .pairs
        .iter()
        .zip(&neighbors)
        .map(|(pair, &i)| TrainingExample { pair, neighbor: Some(&datastore.entries[i].target) })
        .collect();
    let model_cfg = ModelConfig { vocab_size: corpus.vocab.len(), ..Default::default() };
    let init = ModelParameters::<f32>::init(&model_cfg, 0).map_err(err)?;
    let train_cfg = TrainConfig {
        max_steps: OVERFIT_STEPS,
        batch_tokens: 512,
        lr_peak: 1e-3,
        warmup_steps: 200,
        dropout: 0.1,
        eval_every: OVERFIT_STEPS,
        ..Default::default()
    };
    let out = train_loop(init, &examples, &train_cfg, None, &mut TrainIo::default()).map_err(err)?;
    Ok(Overfit { corpus, datastore, params: out.params, seconds: start.elapsed().as_secs_f64() })
}

struct Decoded {
    bleu: f64,
    mean_iterations: f64,
    neighbor_inits: usize,
}

fn decode(m: &Overfit, pairs: &[ParallelPair], refs: &[String], with_neighbor: bool) -> Result<Decoded, String> {
    let err = |e: neighboredit::Error| e.to_string();
    let cfg = InferConfig::default();
    let mut hyps = Vec::new();
    let mut iterations = 0;
    let mut neighbor_inits = 0;
    for p in pairs {
        let neighbor = if with_neighbor {
            let n = retrieve(&m.datastore, &p.source, None, &RetrievalConfig::default(), None).map_err(err)?;
            Some(RetrievedNeighbor {
                target: m.datastore.entries[n.index].target.clone(),
                score: n.rerank_score,
                retrieval_ms: 0.0,
            })
        } else {
            None
        };
        let trace = translate(&m.params, &p.source, neighbor.as_ref(), &cfg).map_err(err)?;
        iterations += trace.iterations;
        neighbor_inits += usize::from(trace.init_kind == InitKind::Neighbor);
        hyps.push(m.corpus.vocab.decode(&trace.output).map_err(err)?);
    }
    Ok(Decoded {
        bleu: corpus_bleu(&hyps, refs).map_err(err)?,
        mean_iterations: iterations as f64 / pairs.len() as f64,
        neighbor_inits,
    })
}

fn overfit_run(m: &Result<Overfit, String>) -> Outcome {
    let m = m.as_ref().map_err(|e| e.clone())?;
    ensure(m.corpus.train.pairs.len() == 256 && m.corpus.vocab.len() <= 60, || "corpus shape".into())?;
    let d = decode(m, &m.corpus.train.pairs, &m.corpus.train.tgt, false)?;
    let detail = format!(
        "train BLEU {:.2}, mean iterations {:.2} (empty init), {OVERFIT_STEPS} steps in {:.0}s",
        d.bleu, d.mean_iterations, m.seconds
    );
    ensure(d.bleu >= 95.0 && d.mean_iterations <= 3.0, || detail.clone())?;
    Ok(detail)
}

fn neighbor_benefit(m: &Result<Overfit, String>) -> Outcome {
    let m = m.as_ref().map_err(|e| e.clone())?;
    let held = &m.corpus.heldout;
    ensure(held.pairs.len() == 64, || "held-out size".into())?;
    let with = decode(m, &held.pairs, &held.tgt, true)?;
    let without = decode(m, &held.pairs, &held.tgt, false)?;
    let detail = format!(
        "neighbor BLEU {:.2} / {:.2} iterations ({} neighbor inits) vs empty BLEU {:.2} / {:.2} iterations",
        with.bleu, with.mean_iterations, with.neighbor_inits, without.bleu, without.mean_iterations
    );
    ensure(with.bleu >= without.bleu && with.mean_iterations < without.mean_iterations, || detail.clone())?;
    Ok(detail)
}

fn policy_calibration() -> Outcome {
    let cfg = OracleConfig { alpha: 0.6, beta: 0.3, rnd_seed: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let mut neighbor_del = 0;
    let mut low_sim_neighbor_del = 0;
    let mut low_sim_target_ins = 0;
    for _ in 0..n {
        let u: f64 = rng.gen();
        let sim: f64 = rng.gen();
        let c = choose_policy(u, sim, &cfg);
        if c.deletion == PolicySide::Neighbor {
            neighbor_del += 1;
            if sim <= cfg.beta {
                low_sim_neighbor_del += 1;
                low_sim_target_ins += usize::from(c.insertion == PolicySide::Target);
            }
        }
    }
    let frac = neighbor_del as f64 / n as f64;
    let detail = format!("neighbor-deletion fraction {frac:.4}, low-similarity target insertion {low_sim_target_ins}/{low_sim_neighbor_del}");
    ensure((frac - 0.6).abs() <= 0.02 && low_sim_neighbor_del > 0 && low_sim_target_ins == low_sim_neighbor_del, || detail.clone())?;
    Ok(detail)
}

fn retrieval_fidelity() -> Outcome {
    let err = |e: neighboredit::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vocab = 3000usize;
    let zipf = Zipf::new(vocab as u64 - 5, 1.1).unwrap();
    let draw = |rng: &mut ChaCha8Rng| 4 + zipf.sample(rng) as TokenId;
    let mut pairs = Vec::new();
    for id in 0..5000u64 {
        let n = rng.gen_range(8..=24);
        let src: Vec<TokenId> = (0..n).map(|_| draw(&mut rng)).collect();
        pairs.push(ParallelPair::new(id, src, vec![5]).map_err(err)?);
    }
    let ds = build_datastore(&pairs, vocab, &DatastoreConfig { seed: 9, ..Default::default() }, None).map_err(err)?;
    let queries: Vec<Vec<TokenId>> = (0..500)
        .map(|_| {
            let base = &pairs[rng.gen_range(0..pairs.len())].source;
            base.iter().map(|&t| if rng.gen::<f64>() < 0.3 { draw(&mut rng) } else { t }).collect()
        })
        .collect();
    let agree = |k: usize| -> Result<usize, String> {
        let cfg = RetrievalConfig { k_candidates: k, ..Default::default() };
        let mut hits = 0;
        for q in &queries {
            let got = retrieve(&ds, q, None, &cfg, None).map_err(err)?;
            let (want, _) = brute_force(&ds, q, false, None).unwrap();
            hits += usize::from(got.index == want);
        }
        Ok(hits)
    };
    let top50 = agree(50)?;
    let full = agree(ds.len())?;
    let detail = format!("k=50: {top50}/500, k=all: {full}/500");
    ensure(top50 * 100 >= 99 * 500 && full == 500, || detail.clone())?;
    Ok(detail)
}

fn metric_correctness() -> Outcome {
    let err = |e: neighboredit::Error| e.to_string();
    let sents = ["Das ist ein Test.", "( 48 ) Die Kapazitätsauslastung stieg um 56 %.", "Hallo, Welt!"];
    let (b, c) = (corpus_bleu(&sents, &sents).map_err(err)?, corpus_chrf(&sents, &sents).map_err(err)?);
    ensure(b == 100.0 && c == 100.0, || format!("identity BLEU {b} ChrF {c}"))?;

    let hyps: Vec<&str> = include_str!("data/bleu_fixture.hyp").lines().collect();
    let refs: Vec<&str> = include_str!("data/bleu_fixture.ref").lines().collect();
    // 1-4 gram matches 7/8, 4/6, 2/4, 1/3; hypothesis length 8, reference length 9
    let expected = (1.0f64 - 9.0 / 8.0).exp() * (7.0 / 8.0 * 4.0 / 6.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25) * 100.0;
    let got = corpus_bleu(&hyps, &refs).map_err(err)?;
    ensure((got - expected).abs() < 1e-4, || format!("fixture BLEU {got} vs {expected}"))?;

    let input = include_str!("data/tok13a_input.txt");
    let golden = include_str!("data/tok13a_expected.txt");
    let produced: String = input.lines().map(|l| tokenize_13a(l) + "\n").collect();
    ensure(produced == golden, || "13a tokenizer output differs from the golden file".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let words = ["der", "die", "das", "haus", "ist", "gross", "klein", "und", "nicht", "rot"];
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(3..10);
        (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let refs: Vec<String> = (0..50).map(|_| sentence(&mut rng)).collect();
    let hyps: Vec<String> = (0..50).map(|_| sentence(&mut rng)).collect();
    let mut flagged = 0;
    for seed in 0..100 {
        let p = bootstrap_significance(&hyps, &hyps, &refs, 100, seed).map_err(err)?;
        flagged += usize::from(p < 0.05);
    }
    ensure(flagged <= 1, || format!("self-vs-self flagged {flagged}/100"))?;
    Ok(format!("fixture BLEU {got:.6}, 13a golden byte-exact, self-vs-self flagged {flagged}/100"))
}

const WORKED_TARGET: &str = "( 48 ) Die Kapazitätsauslastung stieg von 1996 bis zum UZ um 56 % .";
// The displayed neighbor lacks the final "." that its own deletion output
// keeps; it is restored here so the trace is reachable.
const WORKED_NEIGHBOR: &str =
    "( 56 ) Die Ausfuhrpreise der beiden kooperierenden thailänd@@ ischen Hersteller stiegen von 1996 bis zum Untersuchungszeitraum um 6 % .";
const WORKED_DELETED: &str = "( ) Die von 1996 bis zum um % .";
const WORKED_PLACEHOLDERS: &str = "( [PLH] ) Die [PLH] [PLH] von 1996 bis zum [PLH] um [PLH] % .";
const WORKED_DROPPED: [&str; 11] = [
    "56", "Ausfuhrpreise", "der", "beiden", "kooperierenden", "thailänd@@", "ischen", "Hersteller", "stiegen",
    "Untersuchungszeitraum", "6",
];
const WORKED_FILL: [&str; 5] = ["48", "Kapazitätsauslastung", "stieg", "UZ", "56"];

/// Plays back the decisions shown in the worked example, then holds still.
struct Displayed {
    neighbor: Vec<TokenId>,
    deleted: Vec<TokenId>,
    dropped: Vec<TokenId>,
    plan: Vec<usize>,
    fill: Vec<TokenId>,
}

impl EditPolicy for Displayed {
    fn deletions(&self, c: &Canvas) -> neighboredit::Result<DeletionMask> {
        let first = c.interior() == self.neighbor.as_slice();
        Ok(DeletionMask(c.interior().iter().map(|t| !(first && self.dropped.contains(t))).collect()))
    }
    fn placeholders(&self, c: &Canvas) -> neighboredit::Result<PlaceholderPlan> {
        if c.interior() == self.deleted.as_slice() {
            Ok(PlaceholderPlan(self.plan.clone()))
        } else {
            Ok(PlaceholderPlan(vec![0; c.num_gaps()]))
        }
    }
    fn fills(&self, c: &Canvas) -> neighboredit::Result<TokenFill> {
        let n = c.placeholder_positions().len();
        Ok(TokenFill(self.fill.iter().copied().take(n).collect()))
    }
}

fn worked_trace() -> Outcome {
    let err = |e: neighboredit::Error| e.to_string();
    let vocab = build_vocab(&[WORKED_TARGET, WORKED_NEIGHBOR], 100).map_err(err)?;
    let ids = |s: &[&str]| s.iter().map(|t| vocab.id(t).unwrap()).collect::<Vec<_>>();
    let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let neighbor = vocab.encode(WORKED_NEIGHBOR);
    let policy = Displayed {
        neighbor: neighbor.clone(),
        deleted: vocab.encode(WORKED_DELETED),
        dropped: ids(&WORKED_DROPPED),
        // one count per gap of the deleted canvas, boundaries included
        plan: vec![0, 1, 0, 2, 0, 0, 0, 1, 1, 0, 0],
        fill: ids(&WORKED_FILL),
    };
    let render = |c: &Canvas| -> Vec<String> {
        c.interior().iter().map(|&t| vocab.token(t).unwrap_or("?").to_string()).collect()
    };
    let init = Canvas::wrap(&neighbor).map_err(err)?;
    let trace = generate(&policy, init.clone(), InitKind::Neighbor, &InferConfig::default(), 256, 0.0).map_err(err)?;
    let first = &trace.steps[0];
    for (stage, canvas, want) in [
        ("deletion", &first.after_deletion, WORKED_DELETED),
        ("placeholders", &first.after_placeholders, WORKED_PLACEHOLDERS),
        ("fill", &first.after_fill, WORKED_TARGET),
    ] {
        let got = render(canvas);
        ensure(got == words(want), || format!("{stage}: {}", got.join(" ")))?;
    }
    let output = vocab.decode(&trace.output).map_err(err)?;
    ensure(words(&output) == words(WORKED_TARGET), || format!("output {output}"))?;

    let capped = InferConfig { max_iterations: 1, ..Default::default() };
    let once = generate(&policy, init, InitKind::Neighbor, &capped, 256, 0.0).map_err(err)?;
    ensure(once.iterations == 1 && once.output == trace.output, || "single capped iteration differs".into())?;
    Ok(format!(
        "target reached by iteration 1; fixed point confirmed after {} iterations",
        trace.iterations
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS #{id} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL #{id} {name}: {detail} [{secs:.1}s]");
            }
        }
    };
    report(1, "oracle deletion optimality", &mut deletion_optimality);
    report(2, "insertion reconstruction", &mut insertion_reconstruction);
    report(3, "neighbor round-trip", &mut neighbor_round_trip);
    report(4, "levenshtein distance", &mut levenshtein_exhaustive);
    report(5, "gradient check", &mut gradient_check);
    let overfit = catch_unwind(overfit_model).unwrap_or_else(|_| Err("training panicked".into()));
    report(6, "overfit run", &mut || overfit_run(&overfit));
    report(7, "neighbor benefit", &mut || neighbor_benefit(&overfit));
    report(8, "policy-mix calibration", &mut policy_calibration);
    report(9, "retrieval fidelity", &mut retrieval_fidelity);
    report(10, "metric correctness", &mut metric_correctness);
    report(11, "worked edit trace", &mut worked_trace);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
