//! The retrieval datastore and its on-disk form.
//!
//! Directory layout:
//! * `meta.json`: vector source, dimension, entry count
//! * `entries.jsonl`: one `{"id", "source", "target"}` object per line
//! * `tfidf.json`: the fitted TF-IDF model
//! * `projector.bin`: SVD basis (absent for external vectors)
//! * `dense.bin`: 8-byte magic, `u32` version, `u64` rows, `u64` cols, then
//!   little-endian `f32` values in row-major order

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svd::{truncated_svd, SparseRows, SvdOptions};
use super::tfidf::{fit_tfidf, SparseVec, TfidfModel};
use crate::corpus::{ParallelPair, TokenId};
use crate::error::{Error, Result};

pub const DENSE_MAGIC: &[u8; 8] = b"NEDDENS\0";
pub const PROJECTOR_MAGIC: &[u8; 8] = b"NEDPROJ\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    Tfidf,
    ExternalSentVec,
}

/// Projects sparse TF-IDF vectors onto the leading right singular vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseProjector {
    pub dim: usize,
    pub vocab_size: usize,
    /// `dim x vocab_size`, row-major.
    pub basis: Vec<f32>,
    pub singular_values: Vec<f64>,
    /// Squared Frobenius norm of the fitted matrix.
    pub total_energy: f64,
}

impl DenseProjector {
    pub fn project(&self, v: &SparseVec) -> Vec<f32> {
        (0..self.dim)
            .map(|k| {
                let row = &self.basis[k * self.vocab_size..(k + 1) * self.vocab_size];
                v.idx
                    .iter()
                    .zip(&v.val)
                    .filter(|(&t, _)| (t as usize) < self.vocab_size)
                    .map(|(&t, &w)| row[t as usize] as f64 * w)
                    .sum::<f64>() as f32
            })
            .collect()
    }

    /// Fraction of the fitted matrix's energy captured by the first `k` directions.
    pub fn captured_energy(&self, k: usize) -> f64 {
        if self.total_energy == 0.0 {
            return 0.0;
        }
        self.singular_values.iter().take(k).map(|s| s * s).sum::<f64>() / self.total_energy
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(PROJECTOR_MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.dim as u64).to_le_bytes());
        b.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        b.extend_from_slice(&self.total_energy.to_le_bytes());
        for s in &self.singular_values {
            b.extend_from_slice(&s.to_le_bytes());
        }
        for x in &self.basis {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        let bad = || Error::Format("projector file is malformed".into());
        if b.len() < 36 || &b[..8] != PROJECTOR_MAGIC {
            return Err(bad());
        }
        if u32::from_le_bytes(b[8..12].try_into().unwrap()) != FORMAT_VERSION {
            return Err(Error::Format("unsupported projector version".into()));
        }
        let dim = u64::from_le_bytes(b[12..20].try_into().unwrap()) as usize;
        let vocab_size = u64::from_le_bytes(b[20..28].try_into().unwrap()) as usize;
        let total_energy = f64::from_le_bytes(b[28..36].try_into().unwrap());
        let sv_end = 36 + 8 * dim;
        if b.len() != sv_end + 4 * dim * vocab_size {
            return Err(bad());
        }
        let singular_values = b[36..sv_end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let basis = b[sv_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            dim,
            vocab_size,
            basis,
            singular_values,
            total_energy,
        })
    }
}

/// Truncated SVD of the corpus TF-IDF matrix. `dim` shrinks to the numerical
/// rank when the matrix has fewer independent directions.
pub fn fit_projector<S: AsRef<[TokenId]> + Sync>(
    m: &TfidfModel,
    sources: &[S],
    dim: usize,
    opts: &SvdOptions,
    seed: u64,
) -> Result<DenseProjector> {
    if dim == 0 {
        return Err(Error::Config("projection dim must be >= 1".into()));
    }
    let rows: Vec<SparseVec> = sources.par_iter().map(|s| m.vectorize(s.as_ref())).collect();
    let a = SparseRows {
        rows: &rows,
        ncols: m.vocab_size(),
    };
    let svd = truncated_svd(&a, dim, opts, seed);
    if svd.singular_values.len() < dim {
        log::warn!(
            "projection dim {dim} exceeds the numerical rank; using {}",
            svd.singular_values.len()
        );
    }
    if svd.singular_values.is_empty() {
        return Err(Error::Config("TF-IDF matrix has rank 0".into()));
    }
    let basis = svd.right_vectors.iter().flatten().map(|&x| x as f32).collect();
    Ok(DenseProjector {
        dim: svd.singular_values.len(),
        vocab_size: m.vocab_size(),
        basis,
        singular_values: svd.singular_values,
        total_energy: a.frobenius_sq(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub id: u64,
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    source: VectorSource,
    dim: usize,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct Datastore {
    pub source: VectorSource,
    pub tfidf: TfidfModel,
    pub projector: Option<DenseProjector>,
    pub entries: Vec<Entry>,
    /// TF-IDF vectors of the entry sources.
    pub sparse: Vec<SparseVec>,
    /// L2-normalized dense vectors, `entries.len() x dim`, row-major.
    pub dense: Vec<f32>,
    pub dim: usize,
    /// Token -> entries whose source contains it.
    pub(crate) postings: HashMap<TokenId, Vec<u32>>,
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
}

/// Dense vectors keyed by pair id, from a `dim N` header file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalVectors {
    pub dim: usize,
    pub vectors: HashMap<u64, Vec<f32>>,
}

impl ExternalVectors {
    pub fn get(&self, id: u64) -> Result<&[f32]> {
        self.vectors.get(&id).map(|v| v.as_slice()).ok_or(Error::MissingVector(id))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing `dim N` header"))?
            .map_err(|e| Error::io(path, e))?;
        let dim = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["dim", n] => n.parse::<usize>().ok().filter(|&d| d > 0),
            _ => None,
        }
        .ok_or_else(|| Error::parse(path, 1, format!("expected `dim N`, got {header:?}")))?;
        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id: u64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::parse(path, lineno, "pair id is not an integer"))?;
            let v: Vec<f32> = fields
                .map(|f| f.parse::<f32>().ok().filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::parse(path, lineno, format!("pair id {id}: vector value is not a finite number")))?;
            if v.len() != dim {
                return Err(Error::parse(path, lineno, format!("pair id {id}: expected {dim} values, found {}", v.len())));
            }
            if vectors.insert(id, v).is_some() {
                return Err(Error::parse(path, lineno, format!("duplicate pair id {id}")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ids: Vec<&u64> = self.vectors.keys().collect();
        ids.sort();
        let mut out = format!("dim {}\n", self.dim);
        for id in ids {
            out.push_str(&id.to_string());
            for x in &self.vectors[id] {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatastoreConfig {
    /// Dense dimension for TF-IDF projection.
    pub dim: usize,
    pub seed: u64,
    pub svd: SvdOptions,
}

impl Default for DatastoreConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            seed: 0,
            svd: SvdOptions::default(),
        }
    }
}

impl Datastore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dense_row(&self, i: usize) -> &[f32] {
        &self.dense[i * self.dim..(i + 1) * self.dim]
    }

    /// Normalized dense query vector for a source sentence.
    pub fn query_vector(&self, source: &[TokenId], external: Option<&[f32]>) -> Result<Vec<f32>> {
        let mut v = match (external, &self.projector) {
            (Some(e), _) => {
                if e.len() != self.dim {
                    return Err(Error::LengthMismatch {
                        expected: self.dim,
                        actual: e.len(),
                    });
                }
                e.to_vec()
            }
            (None, Some(p)) => p.project(&self.tfidf.vectorize(source)),
            (None, None) => return Err(Error::Config("external query vector required".into())),
        };
        normalize(&mut v);
        Ok(v)
    }

    fn from_parts(
        source: VectorSource,
        tfidf: TfidfModel,
        projector: Option<DenseProjector>,
        entries: Vec<Entry>,
        dense: Vec<f32>,
        dim: usize,
    ) -> Self {
        let sparse = entries.par_iter().map(|e| tfidf.vectorize(&e.source)).collect();
        let mut postings: HashMap<TokenId, Vec<u32>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let mut seen = HashSet::new();
            for &t in &e.source {
                if seen.insert(t) {
                    postings.entry(t).or_default().push(i as u32);
                }
            }
        }
        Self {
            source,
            tfidf,
            projector,
            entries,
            sparse,
            dense,
            dim,
            postings,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        let meta = Meta {
            source: self.source,
            dim: self.dim,
            count: self.entries.len(),
        };
        write("meta.json", (serde_json::to_string_pretty(&meta)? + "\n").as_bytes())?;
        let mut lines = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut lines, e)?;
            lines.push(b'\n');
        }
        write("entries.jsonl", &lines)?;
        write("tfidf.json", serde_json::to_string(&self.tfidf)?.as_bytes())?;
        let proj_path = dir.join("projector.bin");
        match &self.projector {
            Some(p) => write("projector.bin", &p.encode())?,
            None if proj_path.exists() => fs::remove_file(&proj_path).map_err(|e| Error::io(&proj_path, e))?,
            None => {}
        }
        let mut dense = Vec::with_capacity(28 + 4 * self.dense.len());
        dense.extend_from_slice(DENSE_MAGIC);
        dense.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        dense.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        dense.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for x in &self.dense {
            dense.write_all(&x.to_le_bytes()).unwrap();
        }
        write("dense.bin", &dense)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let meta: Meta = serde_json::from_slice(&read("meta.json")?)?;
        let entries_path = dir.join("entries.jsonl");
        let mut entries = Vec::with_capacity(meta.count);
        for (i, line) in String::from_utf8_lossy(&read("entries.jsonl")?).lines().enumerate() {
            let e: Entry = serde_json::from_str(line).map_err(|e| Error::parse(&entries_path, i + 1, e.to_string()))?;
            entries.push(e);
        }
        let tfidf: TfidfModel = serde_json::from_slice(&read("tfidf.json")?)?;
        let projector = match meta.source {
            VectorSource::Tfidf => Some(DenseProjector::decode(&read("projector.bin")?)?),
            VectorSource::ExternalSentVec => None,
        };
        let b = read("dense.bin")?;
        if b.len() < 28 || &b[..8] != DENSE_MAGIC {
            return Err(Error::Format("dense.bin: bad magic".into()));
        }
        if u32::from_le_bytes(b[8..12].try_into().unwrap()) != FORMAT_VERSION {
            return Err(Error::Format("dense.bin: unsupported version".into()));
        }
        let rows = u64::from_le_bytes(b[12..20].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(b[20..28].try_into().unwrap()) as usize;
        if rows != entries.len() || rows != meta.count || cols != meta.dim || b.len() != 28 + 4 * rows * cols {
            return Err(Error::Format("dense.bin does not match the entries".into()));
        }
        let dense = b[28..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::from_parts(meta.source, tfidf, projector, entries, dense, cols))
    }
}

/// Build a datastore over all pairs. TF-IDF is fitted on the sources.
pub fn build_datastore(
    pairs: &[ParallelPair],
    vocab_size: usize,
    cfg: &DatastoreConfig,
    external: Option<&ExternalVectors>,
) -> Result<Datastore> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ids = HashSet::new();
    for p in pairs {
        if !ids.insert(p.id) {
            return Err(Error::Config(format!("duplicate pair id {}", p.id)));
        }
    }
    let sources: Vec<&[TokenId]> = pairs.iter().map(|p| p.source.as_slice()).collect();
    let tfidf = fit_tfidf(&sources, vocab_size)?;
    let entries: Vec<Entry> = pairs
        .iter()
        .map(|p| Entry {
            id: p.id,
            source: p.source.clone(),
            target: p.target.clone(),
        })
        .collect();
    let (source, projector, dim, rows): (_, _, _, Vec<Vec<f32>>) = match external {
        Some(ext) => {
            let rows = pairs.iter().map(|p| ext.get(p.id).map(|v| v.to_vec())).collect::<Result<_>>()?;
            (VectorSource::ExternalSentVec, None, ext.dim, rows)
        }
        None => {
            let proj = fit_projector(&tfidf, &sources, cfg.dim, &cfg.svd, cfg.seed)?;
            let rows = sources.par_iter().map(|s| proj.project(&tfidf.vectorize(s))).collect();
            let dim = proj.dim;
            (VectorSource::Tfidf, Some(proj), dim, rows)
        }
    };
    let mut dense = Vec::with_capacity(rows.len() * dim);
    for mut r in rows {
        normalize(&mut r);
        dense.extend_from_slice(&r);
    }
    Ok(Datastore::from_parts(source, tfidf, projector, entries, dense, dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs() -> Vec<ParallelPair> {
        vec![
            ParallelPair::new(10, vec![5, 6, 7], vec![8, 9]).unwrap(),
            ParallelPair::new(11, vec![5, 7, 7, 9], vec![9]).unwrap(),
            ParallelPair::new(12, vec![6, 8], vec![5, 6]).unwrap(),
        ]
    }

    fn cfg() -> DatastoreConfig {
        DatastoreConfig {
            dim: 2,
            ..Default::default()
        }
    }

    #[test]
    fn one_entry_per_pair() {
        let ds = build_datastore(&pairs(), 12, &cfg(), None).unwrap();
        assert_eq!(ds.entries.iter().map(|e| e.id).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert_eq!(ds.dense.len(), 3 * ds.dim);
        assert_eq!(ds.sparse.len(), 3);
        assert!(ds.dense.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rebuild_is_byte_identical_and_round_trips() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_datastore(&pairs(), 12, &cfg(), None).unwrap().save(a.path()).unwrap();
        build_datastore(&pairs(), 12, &cfg(), None).unwrap().save(b.path()).unwrap();
        for f in ["meta.json", "entries.jsonl", "tfidf.json", "projector.bin", "dense.bin"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let loaded = Datastore::load(a.path()).unwrap();
        let built = build_datastore(&pairs(), 12, &cfg(), None).unwrap();
        assert_eq!(loaded.entries, built.entries);
        assert_eq!(loaded.dense, built.dense);
        assert_eq!(loaded.projector, built.projector);
    }

    #[test]
    fn external_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(&path, "dim 2\n10 1 0\n11 0 1\n12 0.5 0.5\n").unwrap();
        let ext = ExternalVectors::load(&path).unwrap();
        let ds = build_datastore(&pairs(), 12, &cfg(), Some(&ext)).unwrap();
        assert_eq!(ds.source, VectorSource::ExternalSentVec);
        assert_eq!(ds.dim, 2);
        ds.save(dir.path().join("ds").as_path()).unwrap();
        let back = Datastore::load(&dir.path().join("ds")).unwrap();
        assert_eq!(back.dense, ds.dense);

        fs::write(&path, "dim 2\n10 1 0\n11 0 1\n").unwrap();
        let partial = ExternalVectors::load(&path).unwrap();
        assert!(matches!(
            build_datastore(&pairs(), 12, &cfg(), Some(&partial)),
            Err(Error::MissingVector(12))
        ));

        fs::write(&path, "dim 2\n10 1 0 3\n").unwrap();
        let err = ExternalVectors::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        fs::write(&path, "dims 2\n").unwrap();
        assert!(ExternalVectors::load(&path).is_err());
    }

    #[test]
    fn projector_shrinks_to_rank() {
        let docs = vec![vec![5u32, 6]; 4];
        let m = fit_tfidf(&docs, 8).unwrap();
        let p = fit_projector(&m, &docs, 3, &SvdOptions::default(), 0).unwrap();
        assert_eq!(p.dim, 1);
        assert!((p.captured_energy(1) - 1.0).abs() < 1e-9);
    }
}
