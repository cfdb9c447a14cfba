//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use neighboredit::inference::InferConfig;
use neighboredit::model::ModelConfig;
use neighboredit::retrieval::{DatastoreConfig, RetrievalConfig};
use neighboredit::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Corpus prefixes; `<prefix>.src` and `<prefix>.tgt` must exist.
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub work_dir: PathBuf,
    /// External sentence vectors per split (`dim N` files).
    pub train_vectors: Option<PathBuf>,
    pub dev_vectors: Option<PathBuf>,
    pub test_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { max_size: 32_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub datastore: DatastoreConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key {key:?}: {p:?} is not a table"),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.train.seed = cfg.seed;
        cfg.datastore.seed = cfg.seed;
        cfg.train.oracle.rnd_seed = cfg.seed;
        cfg.train.validate()?;
        cfg.retrieval.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.train);
        fix(&mut p.work_dir);
        for o in [&mut p.dev, &mut p.test, &mut p.train_vectors, &mut p.dev_vectors, &mut p.test_vectors] {
            if let Some(x) = o.as_mut() {
                fix(x);
            }
        }
    }

    pub fn split_prefix(&self, split: Split) -> Result<&Path> {
        match split {
            Split::Train => Some(self.paths.train.as_path()),
            Split::Dev => self.paths.dev.as_deref(),
            Split::Test => self.paths.test.as_deref(),
        }
        .with_context(|| format!("paths.{} is not configured", split.name()))
    }

    pub fn split_vectors(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => self.paths.train_vectors.as_deref(),
            Split::Dev => self.paths.dev_vectors.as_deref(),
            Split::Test => self.paths.test_vectors.as_deref(),
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.work_dir.join("vocab.txt")
    }

    pub fn datastore_dir(&self) -> PathBuf {
        self.paths.work_dir.join("datastore")
    }

    pub fn neighbor_path(&self, split: Split) -> PathBuf {
        self.paths.work_dir.join("neighbors").join(format!("{}.tsv", split.name()))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths.work_dir.join("checkpoints")
    }

    pub fn outputs_dir(&self) -> PathBuf {
        self.paths.work_dir.join("outputs")
    }
}
