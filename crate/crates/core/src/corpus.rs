//! Vocabulary construction and id conversion for pre-tokenized parallel text.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PLH: TokenId = 2;
pub const UNK: TokenId = 3;
pub const PAD: TokenId = 4;
pub const NUM_SPECIALS: usize = 5;

/// Surface strings of the reserved ids, in id order.
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<s>", "</s>", "[PLH]", "<unk>", "<pad>"];

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for tok in SPECIAL_TOKENS {
            vocab.push(tok.to_string());
        }
        vocab
    }

    fn push(&mut self, token: String) -> TokenId {
        let id = self.id_to_token.len() as TokenId;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        if SPECIAL_TOKENS.contains(&token) {
            return None;
        }
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Encodes a whitespace-tokenized line. Unknown tokens and literal special
    /// strings map to UNK.
    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace()
            .map(|tok| self.id(tok).unwrap_or(UNK))
            .collect()
    }

    /// Renders ids as a whitespace-joined line. Specials other than UNK are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out: Vec<&str> = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(Error::InvalidId {
                id,
                size: self.len(),
            })?;
            if id == UNK || !is_special(id) {
                out.push(tok);
            }
        }
        Ok(out.join(" "))
    }

    /// FNV-1a hash over the token list, used to tie checkpoints to a vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for tok in &self.id_to_token {
            for b in tok.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for tok in &self.id_to_token {
            writeln!(buf, "{tok}").expect("write to vec");
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a vocabulary file: a fixed five-line special header followed by one
    /// token per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS {
            return Err(Error::parse(path, lines.len() + 1, "truncated special header"));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *expected {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected special token {expected:?}, found {:?}", lines[i]),
                ));
            }
        }
        let mut vocab = Vocabulary::with_specials();
        for (i, tok) in lines.iter().enumerate().skip(NUM_SPECIALS) {
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::parse(path, i + 1, "token must be a non-empty word"));
            }
            if vocab.token_to_id.contains_key(*tok) {
                return Err(Error::parse(path, i + 1, format!("duplicate token {tok:?}")));
            }
            vocab.push(tok.to_string());
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from token lines: the five specials, then up to
/// `max_size - 5` corpus tokens by descending frequency, ties by first appearance.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], max_size: usize) -> Result<Vocabulary> {
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::Config(format!("max_size must be >= 6, got {max_size}")));
    }
    // token -> (count, first appearance)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            if SPECIAL_TOKENS.contains(&tok) {
                continue;
            }
            let next = counts.len();
            counts.entry(tok).or_insert((0, next)).0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut vocab = Vocabulary::with_specials();
    for (tok, _, _) in ranked.into_iter().take(max_size - NUM_SPECIALS) {
        vocab.push(tok.to_string());
    }
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: u64,
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl ParallelPair {
    /// Both sides must be non-empty and free of structural specials. UNK is
    /// tolerated since held-out text may contain unseen tokens.
    pub fn new(id: u64, source: Vec<TokenId>, target: Vec<TokenId>) -> Result<Self> {
        for side in [&source, &target] {
            if side.is_empty() {
                return Err(Error::Format(format!("pair {id}: empty sequence")));
            }
            if side.iter().any(|&t| is_special(t) && t != UNK) {
                return Err(Error::Format(format!("pair {id}: reserved id in sequence")));
            }
        }
        Ok(ParallelPair { id, source, target })
    }
}

/// Reads a whitespace-tokenized text file, one sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads `<prefix>.src` / `<prefix>.tgt` as raw aligned lines.
pub fn read_parallel_text(prefix: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let src_path = with_suffix(prefix, "src");
    let tgt_path = with_suffix(prefix, "tgt");
    let src = read_lines(&src_path)?;
    let tgt = read_lines(&tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::parse(
            &tgt_path,
            tgt.len().min(src.len()) + 1,
            format!("{} source lines but {} target lines", src.len(), tgt.len()),
        ));
    }
    for (path, lines) in [(&src_path, &src), (&tgt_path, &tgt)] {
        if let Some(i) = lines.iter().position(|l| l.trim().is_empty()) {
            return Err(Error::parse(path, i + 1, "empty line"));
        }
    }
    Ok((src, tgt))
}

/// Encodes aligned lines into pairs whose ids are the 0-based line numbers.
pub fn encode_pairs(vocab: &Vocabulary, src: &[String], tgt: &[String]) -> Result<Vec<ParallelPair>> {
    src.iter()
        .zip(tgt)
        .enumerate()
        .map(|(i, (s, t))| ParallelPair::new(i as u64, vocab.encode(s), vocab.encode(t)))
        .collect()
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    s.into()
}
