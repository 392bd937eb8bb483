use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use ordfree_nn::decoder::DecoderVariant;
use ordfree_nn::encoder::EncoderVariant;
use ordfree_nn::training::architecture_grad_check;
use serde::Serialize;

use crate::run_dir::RunDir;
use crate::InvariantViolation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    SelfattGraph,
    SelfattStack,
    RnnGraph,
    RnnStack,
}

impl Arch {
    fn variants(self) -> (EncoderVariant, DecoderVariant) {
        match self {
            Arch::SelfattGraph => (EncoderVariant::SelfAttRelative, DecoderVariant::Graph),
            Arch::SelfattStack => (EncoderVariant::SelfAttRelative, DecoderVariant::StackPointer),
            Arch::RnnGraph => (EncoderVariant::Rnn, DecoderVariant::Graph),
            Arch::RnnStack => (EncoderVariant::Rnn, DecoderVariant::StackPointer),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let (encoder, decoder) = args.arch.variants();
    let report = architecture_grad_check(encoder, decoder, args.eps)?;
    println!(
        "max relative error {:.3e} over {} entries",
        report.max_rel_error, report.entries_checked
    );
    if let Some((name, index)) = &report.worst {
        println!("worst entry: {name}[{index}]");
    }
    if let Some(out) = &args.out {
        let mut dir = RunDir::create(out, &[])?;
        dir.write_json(
            "gradcheck.json",
            &serde_json::json!({
                "max_rel_error": report.max_rel_error,
                "entries_checked": report.entries_checked,
                "worst": report.worst,
            }),
        )?;
        dir.finish("gradcheck", &serde_json::to_value(args)?, &[])?;
    }
    if !(report.max_rel_error < args.threshold) {
        return Err(InvariantViolation(format!(
            "gradient check error {:.3e} is not below {:.1e}",
            report.max_rel_error, args.threshold
        ))
        .into());
    }
    Ok(())
}
