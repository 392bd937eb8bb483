//! Loss assembly, Adam, and the epoch loop.

use std::sync::Arc;
use std::time::Instant;

use ordfree_core::conllu::{Sentence, Token, Treebank, UD_UPOS};
use ordfree_core::{attachment_scores, EvalReport};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckReport, Gradients, Graph, ParameterStore, Real, Tensor, Var};
use crate::decoder::{Decoder, DecoderConfig, DecoderVariant};
use crate::embeddings::WordEmbeddings;
use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::model::{ModelConfig, Parser};
use crate::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_sentence_length: usize,
    /// Cap on training sentences, applied after length filtering.
    #[serde(default)]
    pub max_train_sentences: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainConfig {
    /// Standard settings for the given encoder family.
    pub fn standard(encoder: EncoderVariant) -> Self {
        let rnn = encoder == EncoderVariant::Rnn;
        TrainConfig {
            learning_rate: if rnn { 1e-3 } else { 1e-4 },
            batch_size: if rnn { 32 } else { 80 },
            max_sentence_length: 140,
            max_train_sentences: None,
            epochs: 10,
            seed: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_sentence_length == 0 {
            return Err(NnError::Config("batch size and length bound must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(NnError::Config("invalid Adam constants".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows, p.value.cols))
                .collect::<Vec<_>>()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn for_config(store: &ParameterStore<T>, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.beta1, cfg.beta2, cfg.epsilon)
    }
}

/// Bias-corrected Adam update of every parameter in `store`. The frozen
/// word table lives outside the store and is never touched.
pub fn adam_step<T: Real>(
    store: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), NnError> {
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        if grads.get(id).is_none() {
            return Err(NnError::MissingGradient(store.get(id).name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for id in ids {
        let g = grads.get(id).expect("checked above");
        let m = &mut state.first[id.index()];
        let v = &mut state.second[id.index()];
        let p = store.value_mut(id);
        for k in 0..p.data.len() {
            let gk = g.data[k].to_f64().unwrap_or(f64::NAN);
            let mk = b1 * m.data[k].to_f64().unwrap_or(0.0) + (1.0 - b1) * gk;
            let vk = b2 * v.data[k].to_f64().unwrap_or(0.0) + (1.0 - b2) * gk * gk;
            m.data[k] = T::of(mk);
            v.data[k] = T::of(vk);
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + state.epsilon);
            p.data[k] = T::of(p.data[k].to_f64().unwrap_or(f64::NAN) - update);
        }
    }
    Ok(())
}

/// Decoder loss of a batch, averaged over its tokens.
pub fn batch_loss<T: Real>(parser: &Parser<T>, g: &mut Graph<'_, T>, batch: &[&Sentence]) -> Result<Var, NnError> {
    let tokens: usize = batch.iter().map(|s| s.len()).sum();
    if tokens == 0 {
        return Err(NnError::EmptySequence);
    }
    let mut total: Option<Var> = None;
    for s in batch {
        let l = parser.sentence_loss(g, s)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty batch");
    g.scale(total, T::of(1.0 / tokens as f64))
}

/// Head plus label cross-entropy of a graph-decoder parser, averaged over
/// the batch's tokens.
pub fn graph_loss<T: Real>(parser: &Parser<T>, g: &mut Graph<'_, T>, batch: &[&Sentence]) -> Result<Var, NnError> {
    if !matches!(parser.decoder(), Decoder::Graph(_)) {
        return Err(NnError::Config("graph_loss needs a graph decoder".into()));
    }
    batch_loss(parser, g, batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_uas: Option<f64>,
    pub dev_las: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best dev UAS, else the last).
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tdev_UAS\tdev_LAS\twall_seconds\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\t{:.3}\n",
                e.epoch,
                e.train_loss,
                opt(e.dev_uas),
                opt(e.dev_las),
                e.wall_seconds
            ));
        }
        out
    }
}

pub fn evaluate<T: Real>(parser: &Parser<T>, tb: &Treebank, exclude_punct: bool) -> Result<EvalReport, NnError> {
    let pred = parser.parse(tb.sentences())?;
    attachment_scores(&pred, tb.sentences(), exclude_punct).map_err(|e| NnError::Config(e.to_string()))
}

/// One training run: seeded shuffling and dropout, Adam, optional dev
/// evaluation. With a dev set the best-UAS parameters are kept.
pub fn train<T: Real>(
    parser: &mut Parser<T>,
    train_tb: &Treebank,
    dev: Option<&Treebank>,
    cfg: &TrainConfig,
) -> Result<TrainLog, NnError> {
    cfg.validate()?;
    let mut data = train_tb.filter_by_length(cfg.max_sentence_length);
    if let Some(cap) = cfg.max_train_sentences {
        data = data.truncate(cap);
    }
    if data.is_empty() {
        return Err(NnError::EmptyTreebank);
    }
    let sentences = data.sentences();
    for s in sentences {
        for t in &s.tokens {
            parser.label_id(&t.deprel)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::for_config(parser.store(), cfg);
    let mut log = TrainLog::default();
    let mut best: Option<((f64, f64), ParameterStore<T>)> = None;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..sentences.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            let tokens: usize = batch.iter().map(|s| s.len()).sum();
            let dropout_seed = rng.next_u64();
            let (value, grads) = {
                let mut g = Graph::training(parser.store(), dropout_seed);
                let l = batch_loss(parser, &mut g, &batch)?;
                (g.value(l).item().to_f64().unwrap_or(f64::NAN), g.backward(l)?)
            };
            adam_step(parser.store_mut(), &grads, &mut adam, cfg.learning_rate)?;
            loss_sum += value * tokens as f64;
            token_sum += tokens;
        }
        let (dev_uas, dev_las) = match dev {
            Some(d) if !d.is_empty() => {
                let r = evaluate(parser, d, true)?;
                // best UAS, LAS breaking ties
                if best.as_ref().map_or(true, |(b, _)| (r.uas, r.las) > *b) {
                    best = Some(((r.uas, r.las), parser.store().clone()));
                    log.best_epoch = Some(epoch);
                }
                (Some(r.uas), Some(r.las))
            }
            _ => {
                log.best_epoch = Some(epoch);
                (None, None)
            }
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / token_sum as f64,
            dev_uas,
            dev_las,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let Some((_, store)) = best {
        parser.store_mut().load_values_from(&store)?;
    }
    Ok(log)
}

/// Small random treebank for smoke tests: random projective-or-not trees
/// over synthetic words `w0..`, labels determined by the modifier's tag.
pub fn synthetic_treebank(count: usize, max_len: usize, vocab: usize, seed: u64) -> Treebank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tags = &UD_UPOS[..8];
    let labels = ["nsubj", "obj", "det", "amod", "case", "advmod", "obl", "nmod"];
    let sentences = (0..count)
        .map(|_| {
            let n = rng.gen_range(2..=max_len.max(2));
            let mut order: Vec<usize> = (1..=n).collect();
            order.shuffle(&mut rng);
            let mut heads = vec![0usize; n];
            for i in 1..n {
                heads[order[i] - 1] = order[rng.gen_range(0..i)];
            }
            let tokens = (1..=n)
                .map(|id| {
                    let tag = rng.gen_range(0..tags.len());
                    let form = format!("w{}", rng.gen_range(0..vocab));
                    let label = if heads[id - 1] == 0 { "root" } else { labels[tag] };
                    Token::new(id, form, tags[tag], heads[id - 1], label)
                })
                .collect();
            Sentence::new(tokens)
        })
        .collect();
    Treebank::new("synthetic", sentences).expect("generated trees are valid")
}

/// Random vectors for the synthetic vocabulary `w0..w{vocab-1}`.
pub fn synthetic_embeddings<T: Real>(vocab: usize, dim: usize, seed: u64) -> WordEmbeddings<T> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    WordEmbeddings::random(&refs, dim, seed)
}

/// Toy-sized model for exhaustive gradient checks: every width is a few
/// units and the label inventory holds only the labels of `batch`.
pub fn toy_config(encoder: EncoderVariant, decoder: DecoderVariant, labels: Vec<String>) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            variant: encoder,
            word_dim: 4,
            pos_dim: 2,
            layers: 2,
            d_model: 6,
            rnn_hidden: 3,
            d_ff: 5,
            heads: 2,
            clip_k: 2,
            dropout: 0.0,
        },
        decoder: DecoderConfig {
            variant: decoder,
            arc_mlp: 4,
            label_mlp: 3,
            pointer_hidden: 4,
        },
        labels,
        delexicalized: false,
    }
}

/// Finite-difference check of the full batch loss of one architecture on a
/// fixed two-sentence toy batch, in double precision with dropout off.
///
/// Parameters are redrawn from N(0, 0.5^2) instead of the training init so
/// that gradient entries stay above the rounding noise of the differences.
pub fn architecture_grad_check(
    encoder: EncoderVariant,
    decoder: DecoderVariant,
    eps: f64,
) -> Result<GradCheckReport, NnError> {
    let tb = synthetic_treebank(2, 4, 6, 11);
    let mut labels: Vec<String> = tb
        .sentences()
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.deprel.clone()))
        .collect();
    labels.sort();
    labels.dedup();
    let words = Arc::new(synthetic_embeddings::<f64>(6, 4, 3));
    let parser = Parser::new(toy_config(encoder, decoder, labels), words, 21)?;
    let batch: Vec<&Sentence> = tb.sentences().iter().collect();
    let mut store = parser.store().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.5).expect("valid scale");
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.value_mut(id).data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    grad_check(&mut store, eps, |g| batch_loss(&parser, g, &batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::label_inventory;

    fn tiny_config(encoder: EncoderVariant, decoder: DecoderVariant, labels: Vec<String>) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                variant: encoder,
                word_dim: 6,
                pos_dim: 4,
                layers: 1,
                d_model: 10,
                rnn_hidden: 6,
                d_ff: 12,
                heads: 2,
                clip_k: 3,
                dropout: 0.0,
            },
            decoder: DecoderConfig {
                variant: decoder,
                arc_mlp: 8,
                label_mlp: 6,
                pointer_hidden: 8,
            },
            labels,
            delexicalized: false,
        }
    }

    fn tiny_parser(encoder: EncoderVariant, decoder: DecoderVariant, tb: &Treebank, seed: u64) -> Parser<f64> {
        let words = Arc::new(synthetic_embeddings::<f64>(12, 6, 99));
        let cfg = tiny_config(encoder, decoder, label_inventory(tb.sentences()));
        Parser::new(cfg, words, seed).unwrap()
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs,
            ..TrainConfig::standard(EncoderVariant::Rnn)
        }
    }

    #[test]
    fn standard_settings() {
        let rnn = TrainConfig::standard(EncoderVariant::Rnn);
        assert_eq!((rnn.learning_rate, rnn.batch_size), (1e-3, 32));
        let sa = TrainConfig::standard(EncoderVariant::SelfAttRelative);
        assert_eq!((sa.learning_rate, sa.batch_size, sa.max_sentence_length), (1e-4, 80, 140));
        assert_eq!((sa.beta1, sa.beta2, sa.epsilon), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = ParameterStore::<f64>::new(1);
        let w = s.weight("w", 3, 3).unwrap();
        let before = s.clone();
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(w);
            let l = g.scale(p, 0.0).unwrap();
            let l = g.sum(l).unwrap();
            g.backward(l).unwrap()
        };
        let mut adam = AdamState::new(&s, 0.9, 0.999, 1e-8);
        adam_step(&mut s, &grads, &mut adam, 0.1).unwrap();
        assert!(s.same_values(&before));
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParameterStore::<f64>::new(1);
        let w = s.insert("w", Tensor::scalar(2.0), crate::autodiff::Init::Given).unwrap();
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(w);
            let l = g.scale(p, 3.0).unwrap();
            g.backward(l).unwrap()
        };
        let mut adam = AdamState::new(&s, 0.9, 0.999, 1e-8);
        adam_step(&mut s, &grads, &mut adam, 1e-3).unwrap();
        // hand formula at step 1: -lr * g / (sqrt(g^2) + eps)
        let expected = 2.0 - 1e-3 * 3.0 / (3.0 + 1e-8);
        assert!((s.value(w).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParameterStore::<f64>::new(1);
        let used = s.weight("used", 2, 2).unwrap();
        s.weight("unused", 2, 2).unwrap();
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(used);
            let l = g.sum(p).unwrap();
            g.backward(l).unwrap()
        };
        let mut adam = AdamState::new(&s, 0.9, 0.999, 1e-8);
        assert!(matches!(adam_step(&mut s, &grads, &mut adam, 0.1), Err(NnError::MissingGradient(n)) if n == "unused"));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let tb = synthetic_treebank(4, 5, 12, 1);
        let mut p = tiny_parser(EncoderVariant::Rnn, DecoderVariant::Graph, &tb, 3);
        let before = p.store().clone();
        let log = train(&mut p, &tb, None, &tiny_train(0)).unwrap();
        assert!(log.epochs.is_empty());
        assert!(p.store().same_values(&before));
    }

    #[test]
    fn empty_after_filtering_is_an_error() {
        let tb = synthetic_treebank(4, 5, 12, 1);
        let mut p = tiny_parser(EncoderVariant::Rnn, DecoderVariant::Graph, &tb, 3);
        let cfg = TrainConfig {
            max_sentence_length: 1,
            ..tiny_train(1)
        };
        assert!(matches!(train(&mut p, &tb, None, &cfg), Err(NnError::EmptyTreebank)));
    }

    #[test]
    fn same_seed_same_parameters() {
        let tb = synthetic_treebank(6, 6, 12, 2);
        let run = || {
            let mut p = tiny_parser(EncoderVariant::SelfAttRelative, DecoderVariant::StackPointer, &tb, 5);
            let mut cfg = tiny_train(2);
            cfg.seed = 8;
            let log = train(&mut p, &tb, Some(&tb), &cfg).unwrap();
            (p, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert!(a.store().same_values(b.store()));
        let strip = |l: &TrainLog| l.epochs.iter().map(|e| (e.train_loss, e.dev_uas, e.dev_las)).collect::<Vec<_>>();
        assert_eq!(strip(&la), strip(&lb));
    }

    #[test]
    fn word_table_is_frozen() {
        let tb = synthetic_treebank(6, 6, 12, 4);
        let mut p = tiny_parser(EncoderVariant::Rnn, DecoderVariant::Graph, &tb, 1);
        let before = p.words().table().clone();
        train(&mut p, &tb, None, &tiny_train(3)).unwrap();
        let after = p.words().table();
        assert!(before
            .data
            .iter()
            .zip(&after.data)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let tb = synthetic_treebank(8, 7, 12, 5);
        let mut p = tiny_parser(EncoderVariant::SelfAttRelative, DecoderVariant::Graph, &tb, 2);
        let batch: Vec<&Sentence> = tb.sentences().iter().collect();
        let mut adam = AdamState::new(p.store(), 0.9, 0.999, 1e-8);
        let mut previous = f64::INFINITY;
        for _ in 0..10 {
            let (value, grads) = {
                let mut g = Graph::new(p.store());
                let l = graph_loss(&p, &mut g, &batch).unwrap();
                (g.value(l).item(), g.backward(l).unwrap())
            };
            assert!(value <= previous, "{value} > {previous}");
            previous = value;
            adam_step(p.store_mut(), &grads, &mut adam, 1e-3).unwrap();
        }
    }

    #[test]
    fn uniform_graph_loss_is_analytic() {
        let tb = synthetic_treebank(2, 5, 12, 6);
        let mut p = tiny_parser(EncoderVariant::SelfAttNoPosi, DecoderVariant::Graph, &tb, 2);
        let ids: Vec<_> = p.store().ids().collect();
        for id in ids {
            p.store_mut().value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch: Vec<&Sentence> = tb.sentences().iter().collect();
        let mut g = Graph::new(p.store());
        let l = graph_loss(&p, &mut g, &batch).unwrap();
        let labels = p.config().labels.len() as f64;
        let tokens: usize = batch.iter().map(|s| s.len()).sum();
        let expected: f64 = batch
            .iter()
            .map(|s| s.len() as f64 * (((s.len() + 1) as f64).ln() + labels.ln()))
            .sum::<f64>()
            / tokens as f64;
        assert!((g.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let tb = synthetic_treebank(3, 5, 12, 7);
        let p = tiny_parser(EncoderVariant::SelfAttRelativeDir, DecoderVariant::StackPointer, &tb, 4);
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let q = Parser::load(dir.path(), Arc::clone(p.words())).unwrap();
        assert!(p.store().same_values(q.store()));
        assert_eq!(p.parse(tb.sentences()).unwrap(), q.parse(tb.sentences()).unwrap());
    }
}
