use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ordfree_core::conllu::read_treebank_file;
use ordfree_core::evaluation::{breakdown_by_distance, breakdown_by_type};
use ordfree_core::tsv::fixed4;
use ordfree_core::{attachment_scores, ParseTree};
use serde::Serialize;

use crate::run_dir::RunDir;

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Predicted trees (CoNLL-U)
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold trees (CoNLL-U), same sentences and tokens
    #[arg(long)]
    pub gold: PathBuf,
    /// Score PUNCT and SYM tokens too
    #[arg(long)]
    pub include_punct: bool,
    /// Write scores and breakdowns to this run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let gold = read_treebank_file(&args.gold, "gold").with_context(|| format!("loading {}", args.gold.display()))?;
    let pred = read_treebank_file(&args.pred, "pred").with_context(|| format!("loading {}", args.pred.display()))?;
    for (i, (p, g)) in pred.sentences().iter().zip(gold.sentences()).enumerate() {
        let forms = |s: &ordfree_core::Sentence| s.tokens.iter().map(|t| t.form.clone()).collect::<Vec<_>>();
        if p.len() == g.len() && forms(p) != forms(g) {
            bail!("sentence {}: predicted and gold word forms differ", i + 1);
        }
    }
    let trees: Vec<ParseTree> = pred.sentences().iter().map(ParseTree::from_sentence).collect();
    let report = attachment_scores(&trees, gold.sentences(), !args.include_punct)?;
    println!(
        "UAS {} LAS {} ({} of {} tokens scored)",
        fixed4(report.uas),
        fixed4(report.las),
        report.evaluated_tokens,
        report.total_tokens
    );
    if let Some(out) = &args.out {
        let mut dir = RunDir::create(out, &[args.pred.clone(), args.gold.clone()])?;
        dir.write_json("eval.json", &report.to_json())?;
        dir.write("eval.tsv", report.to_tsv())?;
        let by_type = breakdown_by_type(&trees, gold.sentences())?;
        dir.write("breakdown_type.tsv", by_type.to_tsv())?;
        let by_distance = breakdown_by_distance(&trees, gold.sentences())?;
        dir.write("breakdown_distance.tsv", by_distance.to_tsv())?;
        dir.finish("eval", &serde_json::to_value(args)?, &[])?;
    }
    Ok(())
}
