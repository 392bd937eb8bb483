//! A complete parser: input embedding, encoder and decoder over one
//! parameter store, with config and checkpoint persistence.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ordfree_core::conllu::{Sentence, UD_DEPRELS};
use ordfree_core::ParseTree;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, Real, Var};
use crate::decoder::{Decoder, DecoderConfig, DecoderVariant};
use crate::embeddings::WordEmbeddings;
use crate::encoder::{Encoder, EncoderConfig, EncoderVariant, InputEmbedder};
use crate::NnError;

pub const CONFIG_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.ofpc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub labels: Vec<String>,
    #[serde(default)]
    pub delexicalized: bool,
}

impl ModelConfig {
    pub fn standard(encoder: EncoderVariant, decoder: DecoderVariant, labels: Vec<String>) -> Self {
        ModelConfig {
            encoder: EncoderConfig::standard(encoder),
            decoder: DecoderConfig::standard(decoder),
            labels,
            delexicalized: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.labels.is_empty() {
            return Err(NnError::Config("empty label inventory".into()));
        }
        let unique: BTreeSet<&String> = self.labels.iter().collect();
        if unique.len() != self.labels.len() {
            return Err(NnError::Config("duplicate labels in inventory".into()));
        }
        Ok(())
    }
}

/// The universal relation inventory followed by any other base relation
/// found in `sentences`, sorted.
pub fn label_inventory<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Vec<String> {
    let mut labels: Vec<String> = UD_DEPRELS.iter().map(|s| s.to_string()).collect();
    let known: BTreeSet<String> = labels.iter().cloned().collect();
    let extra: BTreeSet<String> = sentences
        .into_iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.deprel.clone()))
        .filter(|d| !known.contains(d))
        .collect();
    labels.extend(extra);
    labels
}

#[derive(Clone, Debug)]
pub struct Parser<T: Real> {
    config: ModelConfig,
    store: ParameterStore<T>,
    embedder: InputEmbedder<T>,
    encoder: Encoder,
    decoder: Decoder,
    label_index: HashMap<String, usize>,
}

impl<T: Real> Parser<T> {
    pub fn new(config: ModelConfig, words: Arc<WordEmbeddings<T>>, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        if words.dim() != config.encoder.word_dim {
            return Err(NnError::Config(format!(
                "word vectors have {} dimensions, config expects {}",
                words.dim(),
                config.encoder.word_dim
            )));
        }
        let mut store = ParameterStore::new(seed);
        let embedder = InputEmbedder::new(&mut store, words, config.encoder.pos_dim, config.delexicalized)?;
        let encoder = Encoder::new(&mut store, &config.encoder)?;
        let decoder = Decoder::new(
            &mut store,
            &config.decoder,
            config.encoder.output_width(),
            config.labels.len(),
        )?;
        let label_index = config.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Ok(Parser {
            config,
            store,
            embedder,
            encoder,
            decoder,
            label_index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.store
    }

    pub fn words(&self) -> &Arc<WordEmbeddings<T>> {
        self.embedder.words()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn label_id(&self, label: &str) -> Result<usize, NnError> {
        self.label_index
            .get(label)
            .copied()
            .ok_or_else(|| NnError::UnknownLabel(label.to_string()))
    }

    /// Contextual vectors, one row per token.
    pub fn encode(&self, g: &mut Graph<'_, T>, s: &Sentence) -> Result<Var, NnError> {
        let x = self.embedder.embed(g, s)?;
        self.encoder.forward(g, x)
    }

    /// Summed decoder loss of one gold sentence.
    pub fn sentence_loss(&self, g: &mut Graph<'_, T>, s: &Sentence) -> Result<Var, NnError> {
        let heads = s.heads();
        let labels: Vec<usize> = s.tokens.iter().map(|t| self.label_id(&t.deprel)).collect::<Result<_, _>>()?;
        let enc = self.encode(g, s)?;
        self.decoder.loss(g, enc, &heads, &labels)
    }

    pub fn parse_sentence(&self, s: &Sentence) -> Result<ParseTree, NnError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, s)?;
        let (heads, labels) = self.decoder.parse(&mut g, enc)?;
        let labels = labels.into_iter().map(|l| self.config.labels[l].clone()).collect();
        Ok(ParseTree::new(heads, labels))
    }

    pub fn parse(&self, sentences: &[Sentence]) -> Result<Vec<ParseTree>, NnError> {
        sentences.iter().map(|s| self.parse_sentence(s)).collect()
    }

    /// Writes the model config and parameters into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.config)?)?;
        let f = fs::File::create(dir.join(PARAMS_FILE))?;
        self.store.save(std::io::BufWriter::new(f))
    }

    pub fn load(dir: &Path, words: Arc<WordEmbeddings<T>>) -> Result<Self, NnError> {
        let config: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let mut parser = Parser::new(config, words, 0)?;
        let f = fs::File::open(dir.join(PARAMS_FILE))?;
        let stored = ParameterStore::load(std::io::BufReader::new(f))?;
        if stored.len() != parser.store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                stored.len(),
                parser.store.len()
            )));
        }
        parser.store.load_values_from(&stored)?;
        Ok(parser)
    }
}
