//! Run configuration for `train`: a JSON document, overridable by flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ordfree_nn::decoder::{DecoderConfig, DecoderVariant};
use ordfree_nn::encoder::{EncoderConfig, EncoderVariant};
use ordfree_nn::training::TrainConfig;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageData {
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub dev: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
    /// Aligned word vectors in text format; absent means zero word vectors.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Use POS tags only for this language.
    #[serde(default)]
    pub delexicalized: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Language whose training data is used.
    pub source: String,
    pub languages: BTreeMap<String, LanguageData>,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub training: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub precision: Precision,
    /// Evaluate without PUNCT/SYM tokens.
    #[serde(default = "default_true")]
    pub exclude_punct: bool,
}

fn default_true() -> bool {
    true
}

/// Config file shape: architecture sections may be omitted and are then
/// filled with the standard settings for the chosen variants.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    source: String,
    languages: BTreeMap<String, LanguageData>,
    #[serde(default)]
    encoder_variant: Option<EncoderVariant>,
    #[serde(default)]
    decoder_variant: Option<DecoderVariant>,
    #[serde(default)]
    encoder: Option<serde_json::Value>,
    #[serde(default)]
    decoder: Option<serde_json::Value>,
    #[serde(default)]
    training: Option<serde_json::Value>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    precision: Precision,
    #[serde(default = "default_true")]
    exclude_punct: bool,
}

/// Flag overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub encoder: Option<EncoderVariant>,
    pub decoder: Option<DecoderVariant>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_train_sentences: Option<usize>,
    pub dropout: Option<f64>,
}

/// Merges `patch` into the serialized `base`, key by key.
fn merged<T: Serialize + DeserializeOwned>(base: &T, patch: Option<serde_json::Value>, what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(patch) = patch {
        let serde_json::Value::Object(fields) = patch else {
            bail!("{what} must be a JSON object");
        };
        let target = value.as_object_mut().expect("config sections are objects");
        for (k, v) in fields {
            if !target.contains_key(&k) {
                bail!("unknown {what} field {k:?}");
            }
            target.insert(k, v);
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid {what} section"))
}

impl RunConfig {
    pub fn from_json(text: &str, overrides: &Overrides) -> Result<Self> {
        let mut raw: RawConfig = serde_json::from_str(text).context("parsing run config")?;
        let enc_variant = overrides
            .encoder
            .or(raw.encoder_variant)
            .unwrap_or(EncoderVariant::SelfAttRelative);
        let dec_variant = overrides.decoder.or(raw.decoder_variant).unwrap_or(DecoderVariant::Graph);
        let mut encoder = merged(&EncoderConfig::standard(enc_variant), raw.encoder.take(), "encoder")?;
        encoder.variant = enc_variant;
        let mut decoder = merged(&DecoderConfig::standard(dec_variant), raw.decoder.take(), "decoder")?;
        decoder.variant = dec_variant;
        let mut training = merged(&TrainConfig::standard(enc_variant), raw.training.take(), "training")?;

        if let Some(v) = overrides.epochs {
            training.epochs = v;
        }
        if let Some(v) = overrides.learning_rate {
            training.learning_rate = v;
        }
        if let Some(v) = overrides.batch_size {
            training.batch_size = v;
        }
        if overrides.max_train_sentences.is_some() {
            training.max_train_sentences = overrides.max_train_sentences;
        }
        if let Some(v) = overrides.dropout {
            encoder.dropout = v;
        }
        let seeds = overrides.seeds.clone().or(raw.seeds).unwrap_or_else(|| vec![training.seed]);
        let cfg = RunConfig {
            source: raw.source,
            languages: raw.languages,
            encoder,
            decoder,
            training,
            seeds,
            precision: raw.precision,
            exclude_punct: raw.exclude_punct,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks seeds, sections and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        let Some(src) = self.languages.get(&self.source) else {
            bail!("source language {:?} has no entry under languages", self.source);
        };
        if src.train.is_empty() {
            bail!("source language {:?} lists no training files", self.source);
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.training.validate()?;
        for (lang, data) in &self.languages {
            for p in data.train.iter().chain(&data.dev).chain(&data.test).chain(&data.embeddings) {
                if !p.exists() {
                    bail!("{lang}: path {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.languages
            .values()
            .flat_map(|d| d.train.iter().chain(&d.dev).chain(&d.test).chain(&d.embeddings).cloned())
            .collect()
    }
}

/// Parses a kebab-case variant name the way config files spell it.
pub fn parse_variant<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}
