//! `train` and `parse`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use ordfree_core::conllu::{read_treebank_file, write_sentences};
use ordfree_core::tsv::fixed4;
use ordfree_core::{EvalReport, Sentence, Treebank};
use ordfree_nn::autodiff::Real;
use ordfree_nn::decoder::DecoderVariant;
use ordfree_nn::embeddings::WordEmbeddings;
use ordfree_nn::encoder::EncoderVariant;
use ordfree_nn::model::{label_inventory, ModelConfig, Parser};
use ordfree_nn::training::{evaluate, train as train_parser, TrainConfig};
use serde::Serialize;

use crate::config::{parse_variant, LanguageData, Overrides, Precision, RunConfig};
use crate::data::load_language;
use crate::run_dir::RunDir;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds, one run each
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_variant::<EncoderVariant>)]
    pub encoder: Option<EncoderVariant>,
    #[arg(long, value_parser = parse_variant::<DecoderVariant>)]
    pub decoder: Option<DecoderVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_train_sentences: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ParseArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Word vectors for the input language; zero vectors when absent
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_split(language: &str, files: &[PathBuf]) -> Result<Option<Treebank>> {
    if files.is_empty() {
        return Ok(None);
    }
    load_language(language, files).map(Some)
}

fn load_words<T: Real>(data: &LanguageData, dim: usize) -> Result<Arc<WordEmbeddings<T>>> {
    match (&data.embeddings, data.delexicalized) {
        (Some(p), false) => {
            let w = WordEmbeddings::read_file(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(Arc::new(w))
        }
        _ => Ok(Arc::new(WordEmbeddings::empty(dim))),
    }
}

#[derive(Clone, Debug, Serialize)]
struct TargetResult {
    seed: u64,
    language: String,
    model: &'static str,
    report: EvalReport,
}

/// Trains one model and evaluates it on the test data of `targets`.
#[allow(clippy::too_many_arguments)]
fn run_model<T: Real>(
    cfg: &RunConfig,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    source_data: &LanguageData,
    train_tb: &Treebank,
    dev_tb: Option<&Treebank>,
    targets: &[(&String, &LanguageData, &Treebank)],
    dir: &mut RunDir,
    prefix: &str,
) -> Result<Vec<(String, EvalReport)>> {
    let words = load_words::<T>(source_data, model_cfg.encoder.word_dim)?;
    let mut parser = Parser::<T>::new(model_cfg, words, train_cfg.seed)?;
    let log = train_parser(&mut parser, train_tb, dev_tb, train_cfg)?;
    dir.write(&format!("{prefix}/train_log.tsv"), log.to_tsv())?;
    let model_dir = dir.path(&format!("{prefix}/model"));
    parser.save(&model_dir)?;
    dir.record(&format!("{prefix}/model/{}", ordfree_nn::model::CONFIG_FILE));
    dir.record(&format!("{prefix}/model/{}", ordfree_nn::model::PARAMS_FILE));

    let mut results = Vec::new();
    for (lang, data, test) in targets {
        // a target is read through its own aligned vectors
        let words = load_words::<T>(data, cfg.encoder.word_dim)?;
        let target_parser = Parser::<T>::load(&model_dir, words)?;
        let report = evaluate(&target_parser, test, cfg.exclude_punct)?;
        results.push(((*lang).clone(), report));
    }
    Ok(results)
}

fn run_seed<T: Real>(cfg: &RunConfig, seed: u64, dir: &mut RunDir) -> Result<Vec<TargetResult>> {
    let source_data = &cfg.languages[&cfg.source];
    let train_tb = load_language(&cfg.source, &source_data.train)?;
    let dev_tb = load_split(&cfg.source, &source_data.dev)?;
    let labels = label_inventory(train_tb.sentences());
    let mut tests = Vec::new();
    for (lang, data) in &cfg.languages {
        if let Some(tb) = load_split(lang, &data.test)? {
            tests.push((lang, data, tb));
        }
    }
    let train_cfg = TrainConfig {
        seed,
        ..cfg.training.clone()
    };
    let model_cfg = ModelConfig {
        encoder: cfg.encoder.clone(),
        decoder: cfg.decoder.clone(),
        labels,
        delexicalized: source_data.delexicalized,
    };

    // languages flagged delexicalized are parsed by a POS-only model
    let (lex, delex): (Vec<_>, Vec<_>) = tests
        .iter()
        .map(|(l, d, tb)| (*l, *d, tb))
        .partition(|(_, d, _)| !d.delexicalized || source_data.delexicalized);
    let mut out = Vec::new();
    let prefix = format!("seed-{seed}");
    let reports = run_model::<T>(
        cfg,
        model_cfg.clone(),
        &train_cfg,
        source_data,
        &train_tb,
        dev_tb.as_ref(),
        &lex,
        dir,
        &prefix,
    )?;
    out.extend(reports.into_iter().map(|(language, report)| TargetResult {
        seed,
        language,
        model: "lexicalized",
        report,
    }));
    if !delex.is_empty() {
        let delex_source = LanguageData {
            delexicalized: true,
            ..source_data.clone()
        };
        let reports = run_model::<T>(
            cfg,
            ModelConfig {
                delexicalized: true,
                ..model_cfg
            },
            &train_cfg,
            &delex_source,
            &train_tb,
            dev_tb.as_ref(),
            &delex,
            dir,
            &format!("{prefix}/delex"),
        )?;
        out.extend(reports.into_iter().map(|(language, report)| TargetResult {
            seed,
            language,
            model: "delexicalized",
            report,
        }));
    }
    out.sort_by(|a, b| a.language.cmp(&b.language));
    Ok(out)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn results_tsv(results: &[TargetResult]) -> String {
    let mut out = String::from("seed\tlanguage\tmodel\tuas\tlas\tevaluated_tokens\n");
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.seed,
            r.language,
            r.model,
            fixed4(r.report.uas),
            fixed4(r.report.las),
            r.report.evaluated_tokens
        ));
    }
    out
}

/// Mean and sample standard deviation over seeds, per target language.
fn summary_tsv(results: &[TargetResult]) -> String {
    let mut by_lang: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let e = by_lang.entry(&r.language).or_default();
        e.0.push(r.report.uas);
        e.1.push(r.report.las);
    }
    let mut out = String::from("language\truns\tuas_mean\tuas_sd\tlas_mean\tlas_sd\n");
    for (lang, (uas, las)) in by_lang {
        let (um, us) = mean_sd(&uas);
        let (lm, ls) = mean_sd(&las);
        out.push_str(&format!(
            "{lang}\t{}\t{}\t{}\t{}\t{}\n",
            uas.len(),
            fixed4(um),
            fixed4(us),
            fixed4(lm),
            fixed4(ls)
        ));
    }
    out
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let overrides = Overrides {
        encoder: args.encoder,
        decoder: args.decoder,
        seeds: args.seeds.clone(),
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        max_train_sentences: args.max_train_sentences,
        dropout: args.dropout,
    };
    let cfg = RunConfig::from_json(&text, &overrides)?;
    let mut inputs = cfg.input_paths();
    inputs.push(args.config.clone());
    let mut dir = RunDir::create(&args.out, &inputs)?;
    dir.write_json("config.json", &cfg)?;

    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let r = match cfg.precision {
            Precision::F32 => run_seed::<f32>(&cfg, seed, &mut dir)?,
            Precision::F64 => run_seed::<f64>(&cfg, seed, &mut dir)?,
        };
        for t in &r {
            println!(
                "seed {seed} {}: UAS {} LAS {}",
                t.language,
                fixed4(t.report.uas),
                fixed4(t.report.las)
            );
        }
        results.extend(r);
    }
    dir.write("results.tsv", results_tsv(&results))?;
    let summary = summary_tsv(&results);
    dir.write("summary.tsv", &summary)?;
    print!("{summary}");
    dir.finish("train", &serde_json::to_value(&cfg)?, &cfg.seeds)
}

fn parse_with<T: Real>(args: &ParseArgs, sentences: &[Sentence]) -> Result<String> {
    let config: ModelConfig = serde_json::from_str(
        &std::fs::read_to_string(args.model.join(ordfree_nn::model::CONFIG_FILE)).context("reading model config")?,
    )?;
    let words = match &args.embeddings {
        Some(p) if !config.delexicalized => Arc::new(WordEmbeddings::<T>::read_file(p)?),
        _ => Arc::new(WordEmbeddings::empty(config.encoder.word_dim)),
    };
    let parser = Parser::<T>::load(&args.model, words)?;
    let trees = parser.parse(sentences)?;
    let parsed: Vec<Sentence> = trees.iter().zip(sentences).map(|(t, s)| t.apply_to(s)).collect();
    Ok(write_sentences(&parsed))
}

pub fn parse(args: &ParseArgs) -> Result<()> {
    let mut inputs = vec![args.model.clone(), args.input.clone()];
    inputs.extend(args.embeddings.iter().cloned());
    let mut dir = RunDir::create(&args.out, &inputs)?;
    let language = crate::data::language_of(&args.input).unwrap_or_else(|| "xx".to_string());
    let tb = read_treebank_file(&args.input, &language).with_context(|| format!("loading {}", args.input.display()))?;
    let text = parse_with::<f32>(args, tb.sentences())?;
    dir.write("parsed.conllu", text)?;
    println!("parsed {} sentences", tb.len());
    dir.finish("parse", &serde_json::to_value(args)?, &[])
}
