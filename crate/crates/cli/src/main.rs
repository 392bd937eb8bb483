//! `ordfree`: word-order typology, parser training and transfer analysis.

mod analyze;
mod config;
mod data;
mod evaluate;
mod gradcheck;
mod run_dir;
mod train;
mod typology;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure that is not the input's fault: a numerical or structural check
/// did not hold. Exits with status 2.
#[derive(Debug)]
pub struct InvariantViolation(pub String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

#[derive(Parser)]
#[command(name = "ordfree", version, about = "Cross-lingual dependency parsing and word-order typology")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Word-order vectors, distances, clustering and distance histograms
    #[command(subcommand)]
    Typology(TypologyCommand),
    /// Train a parser on the source language and evaluate on every target
    Train(train::TrainArgs),
    /// Parse a CoNLL-U file with a trained checkpoint
    Parse(train::ParseArgs),
    /// Attachment scores of predicted against gold trees
    Eval(evaluate::EvalArgs),
    /// Relate transfer scores to word-order distance
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Finite-difference gradient check of one architecture
    Gradcheck(gradcheck::GradcheckArgs),
}

#[derive(Subcommand)]
enum TypologyCommand {
    /// Selected types and per-language direction vectors
    Vectors(typology::TypologyArgs),
    /// Manhattan distance matrix between languages
    Distance(typology::TypologyArgs),
    /// Single-linkage clustering of the languages
    Cluster(typology::ClusterArgs),
    /// Relative frequencies of signed dependency distances
    Depdist(typology::DepdistArgs),
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Correlate performance distance with word-order distance
    Correlate(analyze::CorrelateArgs),
    /// Order-free minus order-sensitive component scores per language
    Contrast(analyze::ContrastArgs),
    /// As-source and as-target means of an all-pairs transfer matrix
    Pairs(analyze::PairsArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Typology(TypologyCommand::Vectors(a)) => typology::vectors(&a),
        Command::Typology(TypologyCommand::Distance(a)) => typology::distance(&a),
        Command::Typology(TypologyCommand::Cluster(a)) => typology::cluster(&a),
        Command::Typology(TypologyCommand::Depdist(a)) => typology::depdist(&a),
        Command::Train(a) => train::train(&a),
        Command::Parse(a) => train::parse(&a),
        Command::Eval(a) => evaluate::eval(&a),
        Command::Analyze(AnalyzeCommand::Correlate(a)) => analyze::correlate(&a),
        Command::Analyze(AnalyzeCommand::Contrast(a)) => analyze::contrast(&a),
        Command::Analyze(AnalyzeCommand::Pairs(a)) => analyze::pairs(&a),
        Command::Gradcheck(a) => gradcheck::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<InvariantViolation>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
