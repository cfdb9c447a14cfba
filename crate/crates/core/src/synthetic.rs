//! A small templated parallel corpus for end-to-end training checks.
//!
//! Each of eight templates has a number slot (tokens shared by both sides)
//! and a noun slot (translated word by word). Every held-out sentence shares
//! its template and one slot filler with at least one training sentence, so
//! the training set holds a near-duplicate for retrieval to find.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, encode_pairs, with_suffix, ParallelPair, Vocabulary};
use crate::error::{Error, Result};

const NUMBERS: [&str; 8] = ["1", "2", "3", "4", "5", "6", "7", "8"];
const SRC_NOUNS: [&str; 8] = ["cat", "dog", "house", "tree", "car", "bird", "book", "lamp"];
const TGT_NOUNS: [&str; 8] = ["katze", "hund", "haus", "baum", "auto", "vogel", "buch", "lampe"];

/// `{A}` is the number slot, `{N}` the noun slot.
const TEMPLATES: [(&str, &str); 8] = [
    ("the {N} is near {A} .", "der {N} ist bei {A} ."),
    ("a big {N} has {A} .", "es hat {A} gross {N} ."),
    ("{A} red {N} is on the big .", "{A} rot {N} ist auf der gross ."),
    ("the {N} sees {A} and a .", "die {N} sieht {A} und es ."),
    ("with {A} the {N} is red .", "mit {A} ist die {N} rot ."),
    ("a {N} and {A} is big .", "{A} und die {N} ist nicht gross ."),
    ("the red {N} has {A} with a .", "der rot {N} hat mit {A} es ."),
    ("{A} is near a big {N} on the .", "{A} ist bei es gross {N} auf die nicht ."),
];

pub const TRAIN_PER_TEMPLATE: usize = 32;
pub const HELDOUT_PER_TEMPLATE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combo {
    pub template: usize,
    pub number: usize,
    pub noun: usize,
}

impl Combo {
    pub fn render(&self) -> (String, String) {
        let (s, t) = TEMPLATES[self.template];
        let fill = |x: &str, noun: &str| x.replace("{A}", NUMBERS[self.number]).replace("{N}", noun);
        (fill(s, SRC_NOUNS[self.noun]), fill(t, TGT_NOUNS[self.noun]))
    }

    /// Same template and exactly one shared slot filler.
    pub fn is_near_duplicate(&self, o: &Combo) -> bool {
        self.template == o.template && ((self.number == o.number) != (self.noun == o.noun))
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub combos: Vec<Combo>,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub pairs: Vec<ParallelPair>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub train: Split,
    pub heldout: Split,
}

fn split(vocab: &Vocabulary, combos: Vec<Combo>) -> Result<Split> {
    let (src, tgt): (Vec<String>, Vec<String>) = combos.iter().map(|c| c.render()).unzip();
    let pairs = encode_pairs(vocab, &src, &tgt)?;
    Ok(Split { combos, src, tgt, pairs })
}

pub fn templated_corpus(seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for template in 0..TEMPLATES.len() {
        let mut all: Vec<Combo> = (0..NUMBERS.len())
            .flat_map(|number| (0..SRC_NOUNS.len()).map(move |noun| Combo { template, number, noun }))
            .collect();
        all.shuffle(&mut rng);
        let (tr, rest) = all.split_at(TRAIN_PER_TEMPLATE);
        let ho: Vec<Combo> = rest
            .iter()
            .filter(|c| tr.iter().any(|t| c.is_near_duplicate(t)))
            .take(HELDOUT_PER_TEMPLATE)
            .copied()
            .collect();
        if ho.len() < HELDOUT_PER_TEMPLATE {
            return Err(Error::Config("synthetic split has too few near-duplicates".into()));
        }
        train.extend_from_slice(tr);
        heldout.extend(ho);
    }
    let mut lines: Vec<String> = Vec::new();
    for c in train.iter().chain(&heldout) {
        let (s, t) = c.render();
        lines.push(s);
        lines.push(t);
    }
    let vocab = build_vocab(&lines, 1000)?;
    Ok(SyntheticCorpus {
        train: split(&vocab, train)?,
        heldout: split(&vocab, heldout)?,
        vocab,
    })
}

/// Writes `<prefix>.src` and `<prefix>.tgt`.
pub fn write_split(prefix: &Path, split: &Split) -> Result<()> {
    for (suffix, lines) in [("src", &split.src), ("tgt", &split.tgt)] {
        let path = with_suffix(prefix, suffix);
        fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

impl SyntheticCorpus {
    pub fn distinct_combos(&self) -> usize {
        self.train.combos.iter().chain(&self.heldout.combos).collect::<HashSet<_>>().len()
    }
}
