//! Non-autoregressive transformer encoder-decoder with deletion, placeholder
//! and token heads sharing one decoder stack.
//!
//! Blocks are pre-norm with learned absolute positions. Source and canvas
//! tokens share one embedding table. The decoder attends bidirectionally over
//! the canvas and cross-attends to the encoder output.

pub mod checkpoint;
pub mod graph;
pub mod tensor;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, NUM_SPECIALS, PLH};
use crate::edit_env::{Canvas, DeletionMask, EditPolicy, PlaceholderPlan, TokenFill};
use crate::error::{Error, Result};
use graph::{Graph, NodeId};
use tensor::{argmax, softmax_in_place, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_head: usize,
    pub n_layer: usize,
    pub k_max: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// Use the transposed token embedding as the token head.
    pub tie_token_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_hidden: 256,
            n_head: 4,
            n_layer: 2,
            k_max: 32,
            vocab_size: 0,
            max_positions: 256,
            dropout: 0.3,
            tie_token_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_head == 0 || !self.d_model.is_multiple_of(self.n_head) {
            return fail("d_model must be a positive multiple of n_head");
        }
        if self.k_max < 1 {
            return fail("k_max must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.vocab_size <= NUM_SPECIALS {
            return fail("vocab_size must exceed the reserved ids");
        }
        if self.max_positions < 2 || self.d_hidden == 0 {
            return fail("max_positions must be >= 2 and d_hidden >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    q: LinearIdx,
    k: LinearIdx,
    v: LinearIdx,
    o: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    self_norm: NormIdx,
    self_attn: AttnIdx,
    cross: Option<(NormIdx, AttnIdx)>,
    ff_norm: NormIdx,
    ff1: LinearIdx,
    ff2: LinearIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    token_embedding: usize,
    position_embedding: usize,
    encoder: Vec<BlockIdx>,
    encoder_norm: NormIdx,
    decoder: Vec<BlockIdx>,
    decoder_norm: NormIdx,
    head_del: usize,
    head_plh: usize,
    head_tok: Option<usize>,
}

struct LayoutBuilder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name, rows, cols, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> LinearIdx {
        LinearIdx {
            w: self.add(format!("{name}.weight"), i, o, Init::Normal),
            b: self.add(format!("{name}.bias"), 1, o, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn block(&mut self, name: &str, cfg: &ModelConfig, cross: bool) -> BlockIdx {
        let d = cfg.d_model;
        let self_norm = self.norm(&format!("{name}.self_norm"), d);
        let self_attn = self.attn(&format!("{name}.self_attn"), d);
        let cross = cross.then(|| {
            (
                self.norm(&format!("{name}.cross_norm"), d),
                self.attn(&format!("{name}.cross_attn"), d),
            )
        });
        BlockIdx {
            self_norm,
            self_attn,
            cross,
            ff_norm: self.norm(&format!("{name}.ff_norm"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, cfg.d_hidden),
            ff2: self.linear(&format!("{name}.ff2"), cfg.d_hidden, d),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, usize, usize, Init)>) {
    let mut b = LayoutBuilder { specs: Vec::new() };
    let d = cfg.d_model;
    let token_embedding = b.add("token_embedding".into(), cfg.vocab_size, d, Init::Normal);
    let position_embedding = b.add("position_embedding".into(), cfg.max_positions, d, Init::Normal);
    let encoder = (0..cfg.n_layer).map(|l| b.block(&format!("encoder.{l}"), cfg, false)).collect();
    let encoder_norm = b.norm("encoder.norm", d);
    let decoder = (0..cfg.n_layer).map(|l| b.block(&format!("decoder.{l}"), cfg, true)).collect();
    let decoder_norm = b.norm("decoder.norm", d);
    let head_del = b.add("head_del".into(), d, 2, Init::Normal);
    let head_plh = b.add("head_plh".into(), 2 * d, cfg.k_max + 1, Init::Normal);
    let head_tok = (!cfg.tie_token_head).then(|| b.add("head_tok".into(), d, cfg.vocab_size, Init::Normal));
    let layout = Layout {
        token_embedding,
        position_embedding,
        encoder,
        encoder_norm,
        decoder,
        decoder_norm,
        head_del,
        head_plh,
        head_tok,
    };
    (layout, b.specs)
}

/// Decoder output for a canvas, one row per canvas position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T>(pub Tensor<T>);

#[derive(Debug, Clone)]
pub struct ModelParameters<T = f32> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    layout: Layout,
}

/// Dropout settings for a forward pass; `None` disables dropout.
pub type DropoutRng<'r> = Option<&'r mut ChaCha8Rng>;

pub const INIT_STD: f64 = 0.02;

impl<T: Scalar> ModelParameters<T> {
    /// Truncated-normal(0, 0.02²) weights cut at two standard deviations,
    /// zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, rows, cols, init) in specs {
            let data = match init {
                Init::Zeros => vec![T::zero(); rows * cols],
                Init::Ones => vec![T::one(); rows * cols],
                Init::Normal => (0..rows * cols)
                    .map(|_| loop {
                        let x: f64 = normal.sample(&mut rng);
                        if x.abs() <= 2.0 * INIT_STD {
                            break T::of(x);
                        }
                    })
                    .collect(),
            };
            names.push(name);
            tensors.push(Tensor::from_vec(rows, cols, data));
        }
        Ok(ModelParameters {
            config: config.clone(),
            names,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_tensors(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        if named.len() != specs.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, rows, cols, _), (got_name, t)) in specs.into_iter().zip(named) {
            if name != got_name || t.shape() != (rows, cols) {
                return Err(Error::Format(format!(
                    "tensor {got_name} {:?} does not match {name} ({rows}, {cols})",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParameters {
            config: config.clone(),
            names,
            tensors,
            layout,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn head_del(&self) -> &Tensor<T> {
        &self.tensors[self.layout.head_del]
    }

    pub fn head_plh(&self) -> &Tensor<T> {
        &self.tensors[self.layout.head_plh]
    }

    pub fn head_tok(&self) -> Option<&Tensor<T>> {
        self.layout.head_tok.map(|i| &self.tensors[i])
    }

    pub fn token_embedding(&self) -> &Tensor<T> {
        &self.tensors[self.layout.token_embedding]
    }

    // ---- graph builders -------------------------------------------------

    fn embed(&self, g: &mut Graph<T>, ids: &[TokenId], drop: &mut DropoutRng) -> Result<NodeId> {
        if ids.len() > self.config.max_positions {
            return Err(Error::Overlength {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidId {
                id: bad,
                size: self.config.vocab_size,
            });
        }
        let emb = g.param(self.layout.token_embedding);
        let pos = g.param(self.layout.position_embedding);
        let tok = g.gather(emb, ids.iter().map(|&t| t as usize).collect());
        let p = g.gather(pos, (0..ids.len()).collect());
        let x = g.add(tok, p);
        Ok(self.dropout(g, x, drop))
    }

    fn dropout(&self, g: &mut Graph<T>, x: NodeId, drop: &mut DropoutRng) -> NodeId {
        match drop {
            Some(rng) => g.dropout(x, self.config.dropout, *rng),
            None => x,
        }
    }

    fn linear(&self, g: &mut Graph<T>, x: NodeId, l: LinearIdx) -> NodeId {
        let w = g.param(l.w);
        let b = g.param(l.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }

    fn norm(&self, g: &mut Graph<T>, x: NodeId, n: NormIdx) -> NodeId {
        let gain = g.param(n.gain);
        let bias = g.param(n.bias);
        g.layer_norm(x, gain, bias)
    }

    fn attend(&self, g: &mut Graph<T>, query: NodeId, memory: NodeId, a: AttnIdx) -> NodeId {
        let q = self.linear(g, query, a.q);
        let k = self.linear(g, memory, a.k);
        let v = self.linear(g, memory, a.v);
        let o = g.attention(q, k, v, self.config.n_head);
        self.linear(g, o, a.o)
    }

    fn block(&self, g: &mut Graph<T>, mut x: NodeId, memory: Option<NodeId>, b: &BlockIdx, drop: &mut DropoutRng) -> NodeId {
        let h = self.norm(g, x, b.self_norm);
        let a = self.attend(g, h, h, b.self_attn);
        let a = self.dropout(g, a, drop);
        x = g.add(x, a);
        if let (Some((norm, attn)), Some(mem)) = (b.cross, memory) {
            let h = self.norm(g, x, norm);
            let a = self.attend(g, h, mem, attn);
            let a = self.dropout(g, a, drop);
            x = g.add(x, a);
        }
        let h = self.norm(g, x, b.ff_norm);
        let f = self.linear(g, h, b.ff1);
        let f = g.gelu(f);
        let f = self.linear(g, f, b.ff2);
        let f = self.dropout(g, f, drop);
        g.add(x, f)
    }

    /// Records the encoder over `source` into `g`.
    pub fn encode_graph(&self, g: &mut Graph<T>, source: &[TokenId], drop: &mut DropoutRng) -> Result<NodeId> {
        let mut x = self.embed(g, source, drop)?;
        for b in &self.layout.encoder {
            x = self.block(g, x, None, b, drop);
        }
        Ok(self.norm(g, x, self.layout.encoder_norm))
    }

    /// Records the decoder over a canvas, attending to `enc`.
    pub fn decode_graph(&self, g: &mut Graph<T>, canvas: &Canvas, enc: NodeId, drop: &mut DropoutRng) -> Result<NodeId> {
        let mut x = self.embed(g, canvas.tokens(), drop)?;
        for b in &self.layout.decoder {
            x = self.block(g, x, Some(enc), b, drop);
        }
        Ok(self.norm(g, x, self.layout.decoder_norm))
    }

    /// `(n-1) × 2` logits over interior positions; column 1 means keep.
    pub fn deletion_logits_graph(&self, g: &mut Graph<T>, h: NodeId) -> NodeId {
        let n = g.value(h).rows;
        let interior = g.gather(h, (1..n.saturating_sub(1)).collect());
        let a = g.param(self.layout.head_del);
        g.matmul(interior, a)
    }

    /// `n × (k_max+1)` logits over gaps from concatenated neighbor states.
    pub fn placeholder_logits_graph(&self, g: &mut Graph<T>, h: NodeId) -> NodeId {
        let pairs = g.pair_rows(h);
        let b = g.param(self.layout.head_plh);
        g.matmul(pairs, b)
    }

    pub fn token_logits_graph(&self, g: &mut Graph<T>, h: NodeId, canvas: &Canvas, positions: &[usize]) -> Result<NodeId> {
        if let Some(&bad) = positions.iter().find(|&&p| canvas.tokens().get(p) != Some(&PLH)) {
            return Err(Error::NotPlaceholder(bad));
        }
        let rows = g.gather(h, positions.to_vec());
        Ok(match self.layout.head_tok {
            Some(c) => {
                let c = g.param(c);
                g.matmul(rows, c)
            }
            None => {
                let emb = g.param(self.layout.token_embedding);
                g.matmul_bt(rows, emb)
            }
        })
    }

    // ---- gradient-free convenience wrappers -----------------------------

    pub fn encode(&self, source: &[TokenId]) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.tensors);
        let enc = self.encode_graph(&mut g, source, &mut None)?;
        Ok(g.value(enc).clone())
    }

    pub fn decode(&self, canvas: &Canvas, enc: &Tensor<T>) -> Result<HiddenStates<T>> {
        let mut g = Graph::new(&self.tensors);
        let e = g.input(enc.clone());
        let h = self.decode_graph(&mut g, canvas, e, &mut None)?;
        Ok(HiddenStates(g.value(h).clone()))
    }

    pub fn deletion_logits(&self, h: &HiddenStates<T>) -> Tensor<T> {
        let mut g = Graph::new(&self.tensors);
        let x = g.input(h.0.clone());
        let l = self.deletion_logits_graph(&mut g, x);
        g.value(l).clone()
    }

    pub fn placeholder_logits(&self, h: &HiddenStates<T>) -> Tensor<T> {
        let mut g = Graph::new(&self.tensors);
        let x = g.input(h.0.clone());
        let l = self.placeholder_logits_graph(&mut g, x);
        g.value(l).clone()
    }

    pub fn token_logits(&self, h: &HiddenStates<T>, canvas: &Canvas, positions: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.tensors);
        let x = g.input(h.0.clone());
        let l = self.token_logits_graph(&mut g, x, canvas, positions)?;
        Ok(g.value(l).clone())
    }
}

/// How roll-in and inference turn head distributions into decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RollInMode {
    #[default]
    Greedy,
    Sample,
}

/// The model's heads as an [`EditPolicy`] for one source sentence.
pub struct ModelPolicy<'a, T: Scalar> {
    params: &'a ModelParameters<T>,
    enc: Tensor<T>,
    k_max: usize,
    sampler: Option<RefCell<ChaCha8Rng>>,
}

impl<'a, T: Scalar> ModelPolicy<'a, T> {
    /// Greedy policy; placeholder counts are additionally capped at `k_max_clip`.
    pub fn new(params: &'a ModelParameters<T>, source: &[TokenId], k_max_clip: usize) -> Result<Self> {
        Ok(ModelPolicy {
            params,
            enc: params.encode(source)?,
            k_max: k_max_clip.min(params.config.k_max),
            sampler: None,
        })
    }

    pub fn with_mode(mut self, mode: RollInMode, seed: u64) -> Self {
        self.sampler = match mode {
            RollInMode::Greedy => None,
            RollInMode::Sample => Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
        };
        self
    }

    pub fn encoder_states(&self) -> &Tensor<T> {
        &self.enc
    }

    fn hidden(&self, canvas: &Canvas) -> Result<HiddenStates<T>> {
        self.params.decode(canvas, &self.enc)
    }

    fn pick(&self, row: &[T]) -> usize {
        match &self.sampler {
            None => argmax(row),
            Some(rng) => {
                let mut p = row.to_vec();
                softmax_in_place(&mut p);
                let u: f64 = rng.borrow_mut().gen();
                let mut acc = 0.0;
                for (i, x) in p.iter().enumerate() {
                    acc += x.to_f64().unwrap();
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            }
        }
    }
}

impl<T: Scalar> EditPolicy for ModelPolicy<'_, T> {
    fn deletions(&self, canvas: &Canvas) -> Result<DeletionMask> {
        let h = self.hidden(canvas)?;
        let logits = self.params.deletion_logits(&h);
        Ok(DeletionMask(
            (0..logits.rows)
                .map(|r| {
                    let row = logits.row(r);
                    match self.sampler {
                        None => row[1] >= row[0],
                        Some(_) => self.pick(row) == 1,
                    }
                })
                .collect(),
        ))
    }

    fn placeholders(&self, canvas: &Canvas) -> Result<PlaceholderPlan> {
        let h = self.hidden(canvas)?;
        let logits = self.params.placeholder_logits(&h);
        Ok(PlaceholderPlan(
            (0..logits.rows)
                .map(|r| self.pick(&logits.row(r)[..=self.k_max]))
                .collect(),
        ))
    }

    fn fills(&self, canvas: &Canvas) -> Result<TokenFill> {
        let positions = canvas.placeholder_positions();
        if positions.is_empty() {
            return Ok(TokenFill(Vec::new()));
        }
        let h = self.hidden(canvas)?;
        let logits = self.params.token_logits(&h, canvas, &positions)?;
        Ok(TokenFill(
            (0..logits.rows)
                .map(|r| (self.pick(&logits.row(r)[NUM_SPECIALS..]) + NUM_SPECIALS) as TokenId)
                .collect(),
        ))
    }
}
