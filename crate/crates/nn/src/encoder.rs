//! Input embedding and the contextual encoders: a stacked BiLSTM and a
//! multi-head self-attention stack with selectable position mechanism.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use ordfree_core::conllu::{Sentence, UD_UPOS};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParamId, ParameterStore, Real, Tensor, Var};
use crate::embeddings::WordEmbeddings;
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    Rnn,
    /// Relative positions with the sign discarded: `min(|j - i|, k)`.
    SelfAttRelative,
    /// Signed relative positions, `2k + 1` buckets.
    SelfAttRelativeDir,
    /// Sinusoidal absolute positions added to the input.
    SelfAttAbsolute,
    /// No position information at all.
    SelfAttNoPosi,
}

impl EncoderVariant {
    pub fn is_self_attention(self) -> bool {
        self != EncoderVariant::Rnn
    }

    pub fn relative_directed(self) -> Option<bool> {
        match self {
            EncoderVariant::SelfAttRelative => Some(false),
            EncoderVariant::SelfAttRelativeDir => Some(true),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub layers: usize,
    /// Self-attention model width; always `word_dim + pos_dim`.
    pub d_model: usize,
    /// LSTM hidden size per direction.
    pub rnn_hidden: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub clip_k: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Standard sizes: 300-d words, 50-d POS, 3x300 BiLSTM or 6 layers of
    /// 350-d self-attention with 512-d feed-forward.
    pub fn standard(variant: EncoderVariant) -> Self {
        let rnn = variant == EncoderVariant::Rnn;
        EncoderConfig {
            variant,
            word_dim: 300,
            pos_dim: 50,
            layers: if rnn { 3 } else { 6 },
            d_model: 350,
            rnn_hidden: 300,
            d_ff: 512,
            heads: 7,
            clip_k: 10,
            dropout: if rnn { 0.33 } else { 0.2 },
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.word_dim + self.pos_dim != self.d_model {
            return Err(NnError::Config(format!(
                "d_model {} must equal word_dim {} + pos_dim {}",
                self.d_model, self.word_dim, self.pos_dim
            )));
        }
        let attention = self.variant.is_self_attention();
        if attention && (self.heads == 0 || self.d_model % self.heads != 0) {
            return Err(NnError::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.clip_k < 1 {
            return Err(NnError::Config("clip_k must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(NnError::Config("encoder needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.variant {
            EncoderVariant::Rnn => 2 * self.rnn_hidden,
            _ => self.d_model,
        }
    }

    fn keep(&self) -> f64 {
        1.0 - self.dropout
    }
}

/// Concatenation of a frozen word vector and a trainable POS vector.
#[derive(Clone, Debug)]
pub struct InputEmbedder<T> {
    words: Arc<WordEmbeddings<T>>,
    pos_table: ParamId,
    pos_index: HashMap<String, usize>,
    pub delexicalized: bool,
}

impl<T: Real> InputEmbedder<T> {
    /// Registers a POS table over the universal tag set.
    pub fn new(
        store: &mut ParameterStore<T>,
        words: Arc<WordEmbeddings<T>>,
        pos_dim: usize,
        delexicalized: bool,
    ) -> Result<Self, NnError> {
        let pos_index: HashMap<String, usize> =
            UD_UPOS.iter().enumerate().map(|(i, p)| (p.to_string(), i)).collect();
        let pos_table = store.add("embed.pos", pos_index.len(), pos_dim, Init::Normal { std: 0.01 })?;
        Ok(InputEmbedder {
            words,
            pos_table,
            pos_index,
            delexicalized,
        })
    }

    pub fn words(&self) -> &Arc<WordEmbeddings<T>> {
        &self.words
    }

    pub fn pos_id(&self, upos: &str) -> Result<usize, NnError> {
        self.pos_index
            .get(upos)
            .copied()
            .ok_or_else(|| NnError::UnknownPos(upos.to_string()))
    }

    /// `n x (word_dim + pos_dim)`; the word part is zero for unknown words
    /// and in delexicalized mode.
    pub fn embed(&self, g: &mut Graph<'_, T>, s: &Sentence) -> Result<Var, NnError> {
        if s.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let dim = self.words.dim();
        let mut word_part = Tensor::zeros(s.len(), dim);
        if !self.delexicalized {
            for (r, tok) in s.tokens.iter().enumerate() {
                if let Some(v) = self.words.vector(&tok.form) {
                    word_part.row_mut(r).copy_from_slice(v);
                }
            }
        }
        let ids: Vec<usize> = s.tokens.iter().map(|t| self.pos_id(&t.upos)).collect::<Result<_, _>>()?;
        let w = g.constant(word_part);
        let table = g.param(self.pos_table);
        let p = g.embedding(table, &ids)?;
        g.concat_cols(&[w, p])
    }
}

/// Row of the relative-position table used for query `i`, key `j`.
pub fn relative_index(i: usize, j: usize, k: usize, directed: bool) -> usize {
    let diff = j as i64 - i as i64;
    if directed {
        (diff.clamp(-(k as i64), k as i64) + k as i64) as usize
    } else {
        (diff.unsigned_abs() as usize).min(k)
    }
}

/// Row-major `n x n` table of [`relative_index`] values.
pub fn relative_index_table(n: usize, k: usize, directed: bool) -> Rc<[usize]> {
    (0..n)
        .flat_map(|i| (0..n).map(move |j| relative_index(i + 1, j + 1, k, directed)))
        .collect()
}

/// `n x d` fixed sinusoidal position signal.
pub fn sinusoidal_positions<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(n, d);
    for pos in 0..n {
        for c in 0..d {
            let rate = 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            t.set(pos, c, T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self, NnError> {
        Ok(LstmCell {
            input: store.weight(&format!("{name}.w_input"), input, 4 * hidden)?,
            recurrent: store.weight(&format!("{name}.w_recurrent"), hidden, 4 * hidden)?,
            bias: store.bias(&format!("{name}.bias"), 4 * hidden)?,
            hidden,
        })
    }

    /// Input projection of a whole sequence, `n x 4h`, bias included.
    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.input);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }

    /// One step from a projected input row; gate order is input, forget,
    /// candidate, output. `state` is `None` at the first step.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        projected: Var,
        state: Option<(Var, Var)>,
    ) -> Result<(Var, Var), NnError> {
        let h = self.hidden;
        let gates = match state {
            Some((h_prev, _)) => {
                let u = g.param(self.recurrent);
                let hu = g.matmul(h_prev, u)?;
                g.add(projected, hu)?
            }
            None => projected,
        };
        let parts = g.split_cols(gates, &[h, h, h, h])?;
        let i = g.sigmoid(parts[0])?;
        let f = g.sigmoid(parts[1])?;
        let cand = g.tanh(parts[2])?;
        let o = g.sigmoid(parts[3])?;
        let ic = g.mul(i, cand)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = g.mul(f, c_prev)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c)?;
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c))
    }

    /// Runs over the rows of `x` (reversed when `backward`) and returns the
    /// hidden states in original row order.
    pub fn run<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, backward: bool) -> Result<Var, NnError> {
        let n = g.shape(x)[0];
        let xw = self.project(g, x)?;
        let mut outputs = vec![None; n];
        let mut state = None;
        let order: Vec<usize> = if backward { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let row = g.slice_rows(xw, t, 1)?;
            let (h, c) = self.step(g, row, state)?;
            outputs[t] = Some(h);
            state = Some((h, c));
        }
        let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step ran")).collect();
        g.concat_rows(&rows)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    layers: Vec<(LstmCell, LstmCell)>,
    keep: f64,
}

impl BiLstm {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &EncoderConfig) -> Result<Self, NnError> {
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut input = cfg.d_model;
        for l in 0..cfg.layers {
            let fwd = LstmCell::new(store, &format!("rnn.{l}.fwd"), input, cfg.rnn_hidden)?;
            let bwd = LstmCell::new(store, &format!("rnn.{l}.bwd"), input, cfg.rnn_hidden)?;
            layers.push((fwd, bwd));
            input = 2 * cfg.rnn_hidden;
        }
        Ok(BiLstm { layers, keep: cfg.keep() })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        if g.shape(x)[0] == 0 {
            return Err(NnError::EmptySequence);
        }
        let mut h = g.dropout(x, self.keep)?;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                h = g.dropout(h, self.keep)?;
            }
            let f = fwd.run(g, h, false)?;
            let b = bwd.run(g, h, true)?;
            h = g.concat_cols(&[f, b])?;
        }
        g.dropout(h, self.keep)
    }
}

/// Parameters of one self-attention layer. Projections are stored fused
/// (`d_model x d_model`); column block `h` is head `h`'s projection.
#[derive(Clone, Debug)]
pub struct SelfAttLayer {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub ff_in: ParamId,
    pub ff_in_bias: ParamId,
    pub ff_out: ParamId,
    pub ff_out_bias: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    /// Relative key/value tables, shared by all heads of the layer.
    pub relative: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
pub struct SelfAttEncoder {
    layers: Vec<SelfAttLayer>,
    heads: usize,
    d_model: usize,
    clip_k: usize,
    variant: EncoderVariant,
    keep: f64,
}

impl SelfAttEncoder {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &EncoderConfig) -> Result<Self, NnError> {
        let d = cfg.d_model;
        let dz = d / cfg.heads;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("selfatt.{l}.{s}");
            let relative = match cfg.variant.relative_directed() {
                Some(directed) => {
                    let rows = if directed { 2 * cfg.clip_k + 1 } else { cfg.clip_k + 1 };
                    Some((
                        store.weight(&p("relative_key"), rows, dz)?,
                        store.weight(&p("relative_value"), rows, dz)?,
                    ))
                }
                None => None,
            };
            layers.push(SelfAttLayer {
                query: store.weight(&p("query"), d, d)?,
                key: store.weight(&p("key"), d, d)?,
                value: store.weight(&p("value"), d, d)?,
                output: store.weight(&p("output"), d, d)?,
                ff_in: store.weight(&p("ff_in"), d, cfg.d_ff)?,
                ff_in_bias: store.bias(&p("ff_in_bias"), cfg.d_ff)?,
                ff_out: store.weight(&p("ff_out"), cfg.d_ff, d)?,
                ff_out_bias: store.bias(&p("ff_out_bias"), d)?,
                norm1_gain: store.add(&p("norm1_gain"), 1, d, Init::Ones)?,
                norm1_bias: store.bias(&p("norm1_bias"), d)?,
                norm2_gain: store.add(&p("norm2_gain"), 1, d, Init::Ones)?,
                norm2_bias: store.bias(&p("norm2_bias"), d)?,
                relative,
            });
        }
        Ok(SelfAttEncoder {
            layers,
            heads: cfg.heads,
            d_model: d,
            clip_k: cfg.clip_k,
            variant: cfg.variant,
            keep: cfg.keep(),
        })
    }

    pub fn layers(&self) -> &[SelfAttLayer] {
        &self.layers
    }

    /// One attention head: `e_ij = q_i·(k_j + a^K_ij) / sqrt(d_z)`,
    /// `z_i = Σ_j α_ij (v_j + a^V_ij)`. Returns `(z, α)`.
    pub fn attention_head<T: Real>(
        g: &mut Graph<'_, T>,
        q: Var,
        k: Var,
        v: Var,
        relative: Option<(Var, Var, &Rc<[usize]>)>,
    ) -> Result<(Var, Var), NnError> {
        let [n, dz] = g.shape(q);
        let mut logits = g.matmul_nt(q, k)?;
        if let Some((rel_k, _, idx)) = relative {
            let buckets = g.shape(rel_k)[0];
            let per_bucket = g.matmul_nt(q, rel_k)?; // n x buckets
            let _ = buckets;
            let rel = g.gather_cols(per_bucket, Rc::clone(idx), n)?;
            logits = g.add(logits, rel)?;
        }
        let logits = g.scale(logits, T::of(1.0 / (dz as f64).sqrt()))?;
        let alpha = g.row_softmax(logits)?;
        let mut z = g.matmul(alpha, v)?;
        if let Some((_, rel_v, idx)) = relative {
            let buckets = g.shape(rel_v)[0];
            let mass = g.scatter_cols(alpha, Rc::clone(idx), buckets)?; // n x buckets
            let rel = g.matmul(mass, rel_v)?;
            z = g.add(z, rel)?;
        }
        Ok((z, alpha))
    }

    fn sublayer_norm<T: Real>(
        g: &mut Graph<'_, T>,
        residual: Var,
        update: Var,
        gain: ParamId,
        bias: ParamId,
        keep: f64,
    ) -> Result<Var, NnError> {
        let update = g.dropout(update, keep)?;
        let sum = g.add(residual, update)?;
        let normed = g.layer_norm(sum)?;
        let gain = g.param(gain);
        let bias = g.param(bias);
        let scaled = g.mul_row(normed, gain)?;
        g.add_row(scaled, bias)
    }

    /// Encodes `x` and also returns every head's attention matrix.
    pub fn forward_with_attention<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
    ) -> Result<(Var, Vec<Var>), NnError> {
        let n = g.shape(x)[0];
        if n == 0 {
            return Err(NnError::EmptySequence);
        }
        let dz = self.d_model / self.heads;
        let mut h = x;
        if self.variant == EncoderVariant::SelfAttAbsolute {
            let pe = g.constant(sinusoidal_positions(n, self.d_model));
            h = g.add(h, pe)?;
        }
        h = g.dropout(h, self.keep)?;
        let index = self
            .variant
            .relative_directed()
            .map(|directed| relative_index_table(n, self.clip_k, directed));
        let mut attention = Vec::new();
        for layer in &self.layers {
            let wq = g.param(layer.query);
            let wk = g.param(layer.key);
            let wv = g.param(layer.value);
            let q = g.matmul(h, wq)?;
            let k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let rel = match (layer.relative, &index) {
                (Some((rk, rv)), Some(idx)) => Some((g.param(rk), g.param(rv), idx)),
                _ => None,
            };
            let mut heads = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let qh = g.slice_cols(q, head * dz, dz)?;
                let kh = g.slice_cols(k, head * dz, dz)?;
                let vh = g.slice_cols(v, head * dz, dz)?;
                let (z, alpha) = Self::attention_head(g, qh, kh, vh, rel)?;
                heads.push(z);
                attention.push(alpha);
            }
            let z = g.concat_cols(&heads)?;
            let wo = g.param(layer.output);
            let attended = g.matmul(z, wo)?;
            h = Self::sublayer_norm(g, h, attended, layer.norm1_gain, layer.norm1_bias, self.keep)?;

            let w1 = g.param(layer.ff_in);
            let b1 = g.param(layer.ff_in_bias);
            let w2 = g.param(layer.ff_out);
            let b2 = g.param(layer.ff_out_bias);
            let f = g.matmul(h, w1)?;
            let f = g.add_row(f, b1)?;
            let f = g.tanh(f)?;
            let f = g.dropout(f, self.keep)?;
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, b2)?;
            h = Self::sublayer_norm(g, h, f, layer.norm2_gain, layer.norm2_bias, self.keep)?;
        }
        Ok((h, attention))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        Ok(self.forward_with_attention(g, x)?.0)
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Rnn(BiLstm),
    SelfAtt(SelfAttEncoder),
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &EncoderConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        Ok(match cfg.variant {
            EncoderVariant::Rnn => Encoder::Rnn(BiLstm::new(store, cfg)?),
            _ => Encoder::SelfAtt(SelfAttEncoder::new(store, cfg)?),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        match self {
            Encoder::Rnn(e) => e.forward(g, x),
            Encoder::SelfAtt(e) => e.forward(g, x),
        }
    }
}
