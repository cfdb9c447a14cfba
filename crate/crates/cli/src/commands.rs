use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use neighboredit::corpus::{build_vocab, encode_pairs, read_lines, read_parallel_text, with_suffix, ParallelPair, TokenId, Vocabulary};
use neighboredit::evaluation::{
    bootstrap_significance, corpus_bleu, evaluate, similarity_scatter, summarize, DecodeCost, ScatterMode,
};
use neighboredit::inference::{translate, GenerationTrace, InitKind, RetrievedNeighbor};
use neighboredit::model::checkpoint::load_checkpoint;
use neighboredit::model::ModelParameters;
use neighboredit::retrieval::{
    build_datastore, fit_tfidf, read_neighbor_file, retrieve_all, table_match, tfidf_cosine, write_neighbor_file, Datastore,
    ExternalVectors, NeighborRecord, Query, VectorSource,
};
use neighboredit::training::{train_loop, TrainIo, TrainingExample};

use crate::config::{RunConfig, Split};

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    create_parent(path)?;
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// Text and encoded pairs of one split. Pair ids are 0-based line numbers.
struct SplitData {
    src: Vec<String>,
    tgt: Vec<String>,
    pairs: Vec<ParallelPair>,
}

fn load_split(cfg: &RunConfig, vocab: &Vocabulary, split: Split) -> Result<SplitData> {
    let prefix = cfg.split_prefix(split)?;
    let (src, tgt) = read_parallel_text(prefix)?;
    let pairs = encode_pairs(vocab, &src, &tgt)?;
    Ok(SplitData { src, tgt, pairs })
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = cfg.vocab_path();
    Vocabulary::load(&path).with_context(|| format!("loading {} (run build-datastore first)", path.display()))
}

fn load_datastore(cfg: &RunConfig) -> Result<Datastore> {
    let dir = cfg.datastore_dir();
    Datastore::load(&dir).with_context(|| format!("loading datastore {} (run build-datastore first)", dir.display()))
}

/// Neighbor target per query id, looked up in the datastore.
fn neighbor_map(ds: &Datastore, records: &[NeighborRecord]) -> Result<HashMap<u64, (Vec<TokenId>, f64)>> {
    let by_id: HashMap<u64, usize> = ds.entries.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let mut out = HashMap::with_capacity(records.len());
    for r in records {
        let &i = by_id
            .get(&r.neighbor_pair_id)
            .with_context(|| format!("neighbor pair id {} is not in the datastore", r.neighbor_pair_id))?;
        out.insert(r.query_id, (ds.entries[i].target.clone(), r.rerank_score));
    }
    Ok(out)
}

fn hypothesis_text(vocab: &Vocabulary, trace: &GenerationTrace) -> Result<String> {
    Ok(vocab.decode(&trace.output)?)
}

pub fn build_datastore_cmd(cfg: &RunConfig) -> Result<()> {
    let (src, tgt) = read_parallel_text(&cfg.paths.train)?;
    let lines: Vec<&String> = src.iter().chain(&tgt).collect();
    let vocab = build_vocab(&lines, cfg.vocab.max_size)?;
    fs::create_dir_all(&cfg.paths.work_dir).with_context(|| format!("creating {}", cfg.paths.work_dir.display()))?;
    vocab.save(&cfg.vocab_path())?;
    let pairs = encode_pairs(&vocab, &src, &tgt)?;
    let external = cfg.paths.train_vectors.as_deref().map(ExternalVectors::load).transpose()?;
    let ds = build_datastore(&pairs, vocab.len(), &cfg.datastore, external.as_ref())?;
    ds.save(&cfg.datastore_dir())?;
    emit(&json!({
        "entries": ds.len(),
        "dim": ds.dim,
        "vocab_size": vocab.len(),
        "datastore": cfg.datastore_dir(),
    }))
}

pub fn retrieve_cmd(cfg: &RunConfig, split: Split) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let ds = load_datastore(cfg)?;
    let data = load_split(cfg, &vocab, split)?;
    let external = match ds.source {
        VectorSource::ExternalSentVec => {
            let path = cfg
                .split_vectors(split)
                .with_context(|| format!("datastore uses external vectors; set paths.{}_vectors", split.name()))?;
            Some(ExternalVectors::load(path)?)
        }
        VectorSource::Tfidf => None,
    };
    let mut queries = Vec::with_capacity(data.pairs.len());
    for p in &data.pairs {
        let vector = match &external {
            Some(e) => Some(e.get(p.id)?),
            None => None,
        };
        queries.push(Query { id: p.id, source: &p.source, vector });
    }
    let mut rcfg = cfg.retrieval;
    rcfg.exclude_self = split == Split::Train;
    let mut records = Vec::with_capacity(queries.len());
    let mut missing = 0;
    for (q, r) in queries.iter().zip(retrieve_all(&ds, &queries, &rcfg)) {
        match r {
            Ok(rec) => records.push(rec),
            Err(neighboredit::Error::NoNeighbor) => {
                log::warn!("query {} has no neighbor", q.id);
                missing += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let path = cfg.neighbor_path(split);
    create_parent(&path)?;
    write_neighbor_file(&path, &records)?;
    emit(&json!({
        "split": split.name(),
        "queries": queries.len(),
        "rows": records.len(),
        "without_neighbor": missing,
        "exclude_self": rcfg.exclude_self,
        "neighbors": path,
    }))
}

/// Neighbor targets for a split, or `None` per pair when no file or row exists.
fn split_neighbors(cfg: &RunConfig, ds: Option<&Datastore>, split: Split, n: usize, required: bool) -> Result<Vec<Option<(Vec<TokenId>, f64)>>> {
    let path = cfg.neighbor_path(split);
    if !path.exists() {
        if required {
            bail!("{} not found (run retrieve --split {} first)", path.display(), split.name());
        }
        log::warn!("{} not found; using empty initialization", path.display());
        return Ok(vec![None; n]);
    }
    let ds = ds.context("datastore required for neighbor targets")?;
    let mut map = neighbor_map(ds, &read_neighbor_file(&path)?)?;
    Ok((0..n as u64).map(|id| map.remove(&id)).collect())
}

fn decode_all(
    params: &ModelParameters<f32>,
    pairs: &[ParallelPair],
    neighbors: &[Option<(Vec<TokenId>, f64)>],
    cfg: &RunConfig,
) -> Result<Vec<GenerationTrace>> {
    pairs
        .par_iter()
        .zip(neighbors)
        .map(|(p, n)| {
            let rn = n.as_ref().map(|(t, s)| RetrievedNeighbor { target: t.clone(), score: *s, retrieval_ms: 0.0 });
            Ok(translate(params, &p.source, rn.as_ref(), &cfg.infer)?)
        })
        .collect()
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let ds = load_datastore(cfg)?;
    let train = load_split(cfg, &vocab, Split::Train)?;
    let train_nb = split_neighbors(cfg, Some(&ds), Split::Train, train.pairs.len(), true)?;
    let examples: Vec<TrainingExample> = train
        .pairs
        .iter()
        .zip(&train_nb)
        .map(|(pair, n)| TrainingExample { pair, neighbor: n.as_ref().map(|(t, _)| t.as_slice()) })
        .collect();

    let dev = match cfg.paths.dev {
        Some(_) => {
            let d = load_split(cfg, &vocab, Split::Dev)?;
            let nb = split_neighbors(cfg, Some(&ds), Split::Dev, d.pairs.len(), false)?;
            Some((d, nb))
        }
        None => None,
    };
    let mut hook = |params: &ModelParameters<f32>, step: u64| -> neighboredit::Result<f64> {
        let (d, nb) = dev.as_ref().unwrap();
        let traces = decode_all(params, &d.pairs, nb, cfg).map_err(|e| neighboredit::Error::Config(e.to_string()))?;
        let hyps: Vec<String> = traces.iter().map(|t| vocab.decode(&t.output)).collect::<neighboredit::Result<_>>()?;
        let bleu = corpus_bleu(&hyps, &d.tgt)?;
        log::info!("step {step}: dev BLEU {bleu:.2}");
        Ok(bleu)
    };

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let init = ModelParameters::<f32>::init(&model_cfg, cfg.seed)?;
    let log_path = cfg.paths.work_dir.join("train_log.jsonl");
    create_parent(&log_path)?;
    let log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let ckpt = cfg.checkpoint_dir();
    let mut io = TrainIo {
        log: Some(Box::new(BufWriter::new(log_file))),
        checkpoint_dir: Some(ckpt.clone()),
        vocab_hash: vocab.fingerprint(),
    };
    let outcome = match dev {
        Some(_) => train_loop(init, &examples, &cfg.train, Some(&mut hook), &mut io)?,
        None => train_loop(init, &examples, &cfg.train, None, &mut io)?,
    };
    drop(io);
    let best = ckpt.join("best");
    vocab.save(&best.join("vocab.txt"))?;
    emit(&json!({
        "best_step": outcome.best_step,
        "best_dev_bleu": outcome.best_metric,
        "last_step": outcome.last_step,
        "skipped_overlong": outcome.skipped_overlong,
        "checkpoint": best,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitMode {
    Neighbor,
    Empty,
}

pub struct GenerateArgs {
    pub split: Split,
    pub init: InitMode,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    id: u64,
    hypothesis: &'a str,
    #[serde(flatten)]
    trace: &'a GenerationTrace,
}

pub fn generate_cmd(cfg: &RunConfig, args: &GenerateArgs) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_dir().join("best"));
    let (params, manifest) =
        load_checkpoint::<f32>(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let expected = format!("{:016x}", vocab.fingerprint());
    if manifest.vocab_hash != expected {
        bail!(
            "checkpoint {} was trained with vocabulary {}, but {} has {}",
            ckpt.display(),
            manifest.vocab_hash,
            cfg.vocab_path().display(),
            expected
        );
    }
    let data = load_split(cfg, &vocab, args.split)?;
    let n = data.pairs.len();
    let neighbors = match args.init {
        InitMode::Empty => vec![None; n],
        InitMode::Neighbor => {
            let ds = load_datastore(cfg)?;
            split_neighbors(cfg, Some(&ds), args.split, n, true)?
        }
    };
    let fallbacks = match args.init {
        InitMode::Neighbor => neighbors.iter().filter(|x| x.is_none()).count(),
        InitMode::Empty => 0,
    };
    if fallbacks > 0 {
        log::warn!("{fallbacks} sentences have no neighbor and start from an empty canvas");
    }
    let traces = decode_all(&params, &data.pairs, &neighbors, cfg)?;
    let hyps: Vec<String> = traces.iter().map(|t| hypothesis_text(&vocab, t)).collect::<Result<_>>()?;

    let mode = match args.init {
        InitMode::Neighbor => "neighbor",
        InitMode::Empty => "empty",
    };
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| cfg.outputs_dir().join(format!("{}.{mode}.txt", args.split.name())));
    write_lines(&out, &hyps)?;
    if let Some(path) = &args.trace {
        let mut lines = Vec::with_capacity(n);
        for ((p, t), h) in data.pairs.iter().zip(&traces).zip(&hyps) {
            lines.push(serde_json::to_string(&TraceLine { id: p.id, hypothesis: h, trace: t })?);
        }
        write_lines(path, &lines)?;
    }
    let denom = n.max(1) as f64;
    emit(&json!({
        "split": args.split.name(),
        "init": mode,
        "sentences": n,
        "mean_iterations": traces.iter().map(|t| t.iterations as f64).sum::<f64>() / denom,
        "mean_latency_ms": traces.iter().map(|t| t.latency_ms).sum::<f64>() / denom,
        "neighbor_inits": traces.iter().filter(|t| t.init_kind == InitKind::Neighbor).count(),
        "fallbacks": fallbacks,
        "checkpoint_step": manifest.step,
        "hypotheses": out,
    }))
}

pub struct EvaluateArgs {
    pub hyps: PathBuf,
    pub refs: Option<PathBuf>,
    pub hyps_b: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub bootstrap_samples: usize,
    pub output: Option<PathBuf>,
}

fn read_costs(path: &Path) -> Result<Vec<DecodeCost>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: bad trace line", path.display(), i + 1)))
        .collect()
}

pub fn evaluate_cmd(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let refs_path = match &args.refs {
        Some(p) => p.clone(),
        None => with_suffix(cfg.split_prefix(Split::Test)?, "tgt"),
    };
    let hyps = read_lines(&args.hyps)?;
    let refs = read_lines(&refs_path)?;
    if hyps.len() != refs.len() {
        bail!(
            "{} has {} lines but {} has {}",
            args.hyps.display(),
            hyps.len(),
            refs_path.display(),
            refs.len()
        );
    }
    let costs = match &args.trace {
        Some(p) => read_costs(p)?,
        None => Vec::new(),
    };
    let mut report = evaluate(&hyps, &refs, &costs)?;
    if let Some(b) = &args.hyps_b {
        let hyps_b = read_lines(b)?;
        report.bootstrap_p = Some(bootstrap_significance(&hyps, &hyps_b, &refs, args.bootstrap_samples, cfg.seed)?);
    }
    if let Some(out) = &args.output {
        write_lines(out, &[serde_json::to_string(&report)?])?;
    }
    emit(&report)
}

pub struct AnalyzeArgs {
    pub split: Split,
    pub hyps: PathBuf,
    pub mode: ScatterMode,
    pub output: Option<PathBuf>,
}

pub fn analyze_cmd(cfg: &RunConfig, args: &AnalyzeArgs) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let ds = load_datastore(cfg)?;
    let data = load_split(cfg, &vocab, args.split)?;
    let hyps = read_lines(&args.hyps)?;
    let path = cfg.neighbor_path(args.split);
    let records = read_neighbor_file(&path)?;
    let by_entry: HashMap<u64, usize> = ds.entries.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let mut neighbor_of: HashMap<u64, usize> = HashMap::new();
    for r in &records {
        let &i = by_entry
            .get(&r.neighbor_pair_id)
            .with_context(|| format!("neighbor pair id {} is not in the datastore", r.neighbor_pair_id))?;
        neighbor_of.insert(r.query_id, i);
    }
    let ids: Vec<u64> = data.pairs.iter().map(|p| p.id).collect();
    let (train_src, _) = match args.mode {
        ScatterMode::SourceTableMatch => read_parallel_text(&cfg.paths.train)?,
        ScatterMode::TargetTfidf => (Vec::new(), Vec::new()),
    };
    let targets: Vec<&[TokenId]> = ds.entries.iter().map(|e| e.target.as_slice()).collect();
    let target_model = fit_tfidf(&targets, vocab.len())?;
    let (scatter, skipped) = similarity_scatter(&ids, &hyps, &data.tgt, |i| {
        let Some(&j) = neighbor_of.get(&ids[i]) else {
            return Ok(None);
        };
        Ok(Some(match args.mode {
            ScatterMode::TargetTfidf => tfidf_cosine(&target_model, &ds.entries[j].target, &data.pairs[i].target),
            ScatterMode::SourceTableMatch => {
                let neighbor_src = train_src.get(ds.entries[j].id as usize).ok_or(neighboredit::Error::NoNeighbor)?;
                table_match(&data.src[i], neighbor_src)?
            }
        }))
    })?;
    let mut lines: Vec<String> = scatter.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
    let summary = summarize(&scatter, skipped, args.mode)?;
    lines.push(serde_json::to_string(&json!({ "summary": summary }))?);
    match &args.output {
        Some(out) => write_lines(out, &lines)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            for l in &lines {
                writeln!(stdout, "{l}")?;
            }
        }
    }
    Ok(())
}
