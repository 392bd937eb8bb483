//! Structured decoders over encoder output: a first-order biaffine graph
//! decoder searched with MST, and a top-down stack-pointer decoder.

pub mod mst;
pub mod transition;

use serde::{Deserialize, Serialize};

pub use mst::{brute_force_mst, decode_mst, greedy_heads, ArcScores};
pub use transition::{gold_derivation, run_transitions, StackPtrState, Step};

use crate::autodiff::{Graph, ParamId, ParameterStore, Real, Tensor, Var};
use crate::encoder::LstmCell;
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderVariant {
    Graph,
    StackPointer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub arc_mlp: usize,
    pub label_mlp: usize,
    /// Hidden size of the stack-pointer recurrence.
    pub pointer_hidden: usize,
}

impl DecoderConfig {
    pub fn standard(variant: DecoderVariant) -> Self {
        DecoderConfig {
            variant,
            arc_mlp: 512,
            label_mlp: 128,
            pointer_hidden: 512,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.arc_mlp == 0 || self.label_mlp == 0 || self.pointer_hidden == 0 {
            return Err(NnError::Config("decoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Single-layer `tanh` projection.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Mlp {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, input: usize, output: usize) -> Result<Self, NnError> {
        Ok(Mlp {
            weight: store.weight(&format!("{name}.weight"), input, output)?,
            bias: store.bias(&format!("{name}.bias"), output)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(x, w)?;
        let z = g.add_row(z, b)?;
        g.tanh(z)
    }
}

#[derive(Clone, Debug)]
pub struct ArcScorer {
    pub head: Mlp,
    pub dep: Mlp,
    pub bilinear: ParamId,
    pub head_bias: ParamId,
}

impl ArcScorer {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, input: usize, size: usize) -> Result<Self, NnError> {
        Ok(ArcScorer {
            head: Mlp::new(store, &format!("{name}.head_mlp"), input, size)?,
            dep: Mlp::new(store, &format!("{name}.dep_mlp"), input, size)?,
            bilinear: store.weight(&format!("{name}.bilinear"), size, size)?,
            head_bias: store.weight(&format!("{name}.head_bias"), size, 1)?,
        })
    }

    /// `score[h][m] = head_h · U · dep_m + head_h · b`.
    pub fn biaffine<T: Real>(
        g: &mut Graph<'_, T>,
        heads: Var,
        deps: Var,
        u: Var,
        b: Var,
    ) -> Result<Var, NnError> {
        let hu = g.matmul(heads, u)?;
        let s = g.matmul_nt(hu, deps)?;
        let hb = g.matmul(heads, b)?;
        g.add_col(s, hb)
    }

    /// Scores over a root-prefixed sequence `x` of `n + 1` rows.
    pub fn score<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let h = self.head.forward(g, x)?;
        let d = self.dep.forward(g, x)?;
        let u = g.param(self.bilinear);
        let b = g.param(self.head_bias);
        Self::biaffine(g, h, d, u, b)
    }
}

#[derive(Clone, Debug)]
pub struct LabelScorer {
    pub head: Mlp,
    pub dep: Mlp,
    /// `k x (labels * k)`; column block `l` is label `l`'s bilinear map.
    pub bilinear: ParamId,
    pub linear: ParamId,
    pub bias: ParamId,
    pub labels: usize,
}

impl LabelScorer {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        size: usize,
        labels: usize,
    ) -> Result<Self, NnError> {
        if labels == 0 {
            return Err(NnError::Config("empty label inventory".into()));
        }
        Ok(LabelScorer {
            head: Mlp::new(store, &format!("{name}.head_mlp"), input, size)?,
            dep: Mlp::new(store, &format!("{name}.dep_mlp"), input, size)?,
            bilinear: store.weight(&format!("{name}.bilinear"), size, labels * size)?,
            linear: store.weight(&format!("{name}.linear"), 2 * size, labels)?,
            bias: store.bias(&format!("{name}.bias"), labels)?,
            labels,
        })
    }

    /// `n x labels` scores for each token `m` attached to `heads[m-1]`:
    /// `s_l = h·U_l·d + W_l·[h; d] + b_l`.
    pub fn score<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, heads: &[usize]) -> Result<Var, NnError> {
        let n = heads.len();
        if g.shape(x)[0] != n + 1 {
            return Err(NnError::Shape {
                op: "score_labels",
                left: g.shape(x),
                right: [n + 1, 0],
            });
        }
        let hl = self.head.forward(g, x)?;
        let dl = self.dep.forward(g, x)?;
        let h = g.select_rows(hl, heads)?;
        let d = g.slice_rows(dl, 1, n)?;
        let u = g.param(self.bilinear);
        let hu = g.matmul(h, u)?;
        let bil = g.chunk_dot(hu, d)?;
        let hd = g.concat_cols(&[h, d])?;
        let w = g.param(self.linear);
        let lin = g.matmul(hd, w)?;
        let s = g.add(bil, lin)?;
        let b = g.param(self.bias);
        g.add_row(s, b)
    }
}

/// Row-wise argmax, smaller index on ties.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    (0..t.rows)
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn with_root<T: Real>(g: &mut Graph<'_, T>, root: ParamId, enc: Var) -> Result<Var, NnError> {
    if g.shape(enc)[0] == 0 {
        return Err(NnError::EmptySequence);
    }
    let r = g.param(root);
    g.concat_rows(&[r, enc])
}

fn check_gold(heads: &[usize], labels: &[usize], n: usize) -> Result<(), NnError> {
    if heads.len() != n || labels.len() != n {
        return Err(NnError::Config(format!(
            "gold tree has {} heads and {} labels for {n} tokens",
            heads.len(),
            labels.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GraphDecoder {
    pub root: ParamId,
    pub arcs: ArcScorer,
    pub labels: LabelScorer,
}

impl GraphDecoder {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        cfg: &DecoderConfig,
        input: usize,
        labels: usize,
    ) -> Result<Self, NnError> {
        Ok(GraphDecoder {
            root: store.weight("graph.root", 1, input)?,
            arcs: ArcScorer::new(store, "graph.arc", input, cfg.arc_mlp)?,
            labels: LabelScorer::new(store, "graph.label", input, cfg.label_mlp, labels)?,
        })
    }

    pub fn score_arcs<T: Real>(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<Var, NnError> {
        let x = with_root(g, self.root, enc)?;
        self.arcs.score(g, x)
    }

    pub fn score_labels<T: Real>(&self, g: &mut Graph<'_, T>, enc: Var, heads: &[usize]) -> Result<Var, NnError> {
        let x = with_root(g, self.root, enc)?;
        self.labels.score(g, x, heads)
    }

    /// Summed head and label cross-entropy of one sentence; the head
    /// distribution of token `m` is the softmax over column `m`.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: Var,
        heads: &[usize],
        labels: &[usize],
    ) -> Result<Var, NnError> {
        let n = g.shape(enc)[0];
        check_gold(heads, labels, n)?;
        let x = with_root(g, self.root, enc)?;
        let s = self.arcs.score(g, x)?;
        let st = g.transpose(s)?;
        let cols = g.slice_rows(st, 1, n)?;
        let head_loss = g.cross_entropy(cols, heads)?;
        let ls = self.labels.score(g, x, heads)?;
        let label_loss = g.cross_entropy(ls, labels)?;
        g.add(head_loss, label_loss)
    }

    pub fn parse<T: Real>(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<(Vec<usize>, Vec<usize>), NnError> {
        let x = with_root(g, self.root, enc)?;
        let s = self.arcs.score(g, x)?;
        let heads = decode_mst(&ArcScores::from_tensor(g.value(s))?);
        let ls = self.labels.score(g, x, &heads)?;
        Ok((heads, argmax_rows(g.value(ls))))
    }
}

#[derive(Clone, Debug)]
pub struct StackPtrDecoder {
    pub root: ParamId,
    pub recurrence: LstmCell,
    pub query: Mlp,
    pub key: Mlp,
    pub bilinear: ParamId,
    pub key_bias: ParamId,
    pub labels: LabelScorer,
}

/// Added to the scores of invalid pointer outcomes.
const MASKED: f64 = f64::NEG_INFINITY;

impl StackPtrDecoder {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        cfg: &DecoderConfig,
        input: usize,
        labels: usize,
    ) -> Result<Self, NnError> {
        Ok(StackPtrDecoder {
            root: store.weight("stackptr.root", 1, input)?,
            recurrence: LstmCell::new(store, "stackptr.recurrence", input, cfg.pointer_hidden)?,
            query: Mlp::new(store, "stackptr.query_mlp", cfg.pointer_hidden, cfg.arc_mlp)?,
            key: Mlp::new(store, "stackptr.key_mlp", input, cfg.arc_mlp)?,
            bilinear: store.weight("stackptr.bilinear", cfg.arc_mlp, cfg.arc_mlp)?,
            key_bias: store.weight("stackptr.key_bias", 1, cfg.arc_mlp)?,
            labels: LabelScorer::new(store, "stackptr.label", input, cfg.label_mlp, labels)?,
        })
    }

    /// Per-position pointer terms that do not depend on the decoder state:
    /// `key · Uᵀ` and the key bias row.
    fn pointer_keys<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var), NnError> {
        let keys = self.key.forward(g, x)?;
        let u = g.param(self.bilinear);
        let ku = g.matmul_nt(keys, u)?;
        let b = g.param(self.key_bias);
        let kb = g.matmul_nt(b, keys)?;
        Ok((ku, kb))
    }

    /// `states` is `T x hidden`; returns `T x (n+1)` unmasked scores.
    fn pointer_scores<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        states: Var,
        keys: (Var, Var),
    ) -> Result<Var, NnError> {
        let q = self.query.forward(g, states)?;
        let s = g.matmul_nt(q, keys.0)?;
        g.add_row(s, keys.1)
    }

    /// Teacher-forced loss: pointer cross-entropy over the gold derivation
    /// plus label cross-entropy at the gold heads, both summed.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: Var,
        heads: &[usize],
        labels: &[usize],
    ) -> Result<Var, NnError> {
        let n = g.shape(enc)[0];
        check_gold(heads, labels, n)?;
        let x = with_root(g, self.root, enc)?;
        let steps = gold_derivation(heads);

        let mut state = StackPtrState::new(n);
        let mut mask = Tensor::zeros(steps.len(), n + 1);
        for (t, step) in steps.iter().enumerate() {
            for (c, ok) in state.valid_mask().into_iter().enumerate() {
                if !ok {
                    mask.set(t, c, T::of(MASKED));
                }
            }
            state.apply(step.choice)?;
        }

        let tops: Vec<usize> = steps.iter().map(|s| s.top).collect();
        let inputs = g.select_rows(x, &tops)?;
        let projected = self.recurrence.project(g, inputs)?;
        let mut hidden = Vec::with_capacity(steps.len());
        let mut lstm_state = None;
        for t in 0..steps.len() {
            let row = g.slice_rows(projected, t, 1)?;
            let (h, c) = self.recurrence.step(g, row, lstm_state)?;
            hidden.push(h);
            lstm_state = Some((h, c));
        }
        let states = g.concat_rows(&hidden)?;
        let keys = self.pointer_keys(g, x)?;
        let scores = self.pointer_scores(g, states, keys)?;
        let mask = g.constant(mask);
        let masked = g.add(scores, mask)?;
        let targets: Vec<usize> = steps.iter().map(|s| s.choice).collect();
        let pointer_loss = g.cross_entropy(masked, &targets)?;

        let ls = self.labels.score(g, x, heads)?;
        let label_loss = g.cross_entropy(ls, labels)?;
        g.add(pointer_loss, label_loss)
    }

    /// Greedy top-down decoding.
    pub fn parse<T: Real>(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<(Vec<usize>, Vec<usize>), NnError> {
        let n = g.shape(enc)[0];
        let x = with_root(g, self.root, enc)?;
        let keys = self.pointer_keys(g, x)?;
        let mut lstm_state = None;
        let (heads, _) = run_transitions(n, |s| {
            let top = s.top().expect("called only while the stack is non-empty");
            let input = g.slice_rows(x, top, 1)?;
            let projected = self.recurrence.project(g, input)?;
            let (h, c) = self.recurrence.step(g, projected, lstm_state)?;
            lstm_state = Some((h, c));
            let scores = self.pointer_scores(g, h, keys)?;
            Ok(g.value(scores).data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        })?;
        let ls = self.labels.score(g, x, &heads)?;
        Ok((heads, argmax_rows(g.value(ls))))
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Graph(GraphDecoder),
    StackPtr(StackPtrDecoder),
}

impl Decoder {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        cfg: &DecoderConfig,
        input: usize,
        labels: usize,
    ) -> Result<Self, NnError> {
        cfg.validate()?;
        Ok(match cfg.variant {
            DecoderVariant::Graph => Decoder::Graph(GraphDecoder::new(store, cfg, input, labels)?),
            DecoderVariant::StackPointer => Decoder::StackPtr(StackPtrDecoder::new(store, cfg, input, labels)?),
        })
    }

    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: Var,
        heads: &[usize],
        labels: &[usize],
    ) -> Result<Var, NnError> {
        match self {
            Decoder::Graph(d) => d.loss(g, enc, heads, labels),
            Decoder::StackPtr(d) => d.loss(g, enc, heads, labels),
        }
    }

    pub fn parse<T: Real>(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<(Vec<usize>, Vec<usize>), NnError> {
        match self {
            Decoder::Graph(d) => d.parse(g, enc),
            Decoder::StackPtr(d) => d.parse(g, enc),
        }
    }
}
