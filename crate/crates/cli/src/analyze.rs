use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use ordfree_core::analysis::{
    component_contrast, correlate as correlate_samples, transfer_summaries, DecoderFamily, EncoderFamily,
    TransferMatrix,
};
use ordfree_core::tsv::{fixed4, fixed6};
use ordfree_core::typology::DistanceMatrix;
use serde::Serialize;

use crate::run_dir::RunDir;

#[derive(Args, Debug, Serialize)]
pub struct CorrelateArgs {
    /// TSV with `language`, `uas` and `las` columns; repeated languages are averaged
    #[arg(long)]
    pub scores: PathBuf,
    /// Word-order distance matrix
    #[arg(long)]
    pub distances: PathBuf,
    /// Source language the scores were transferred from
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ContrastArgs {
    /// TSV with `encoder`, `decoder`, `language` and either `score` or `uas`/`las`
    #[arg(long)]
    pub results: PathBuf,
    /// Orders languages by distance to `--source` when given
    #[arg(long, requires = "source")]
    pub distances: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PairsArgs {
    /// Square transfer matrix: rows are sources, columns targets
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub distances: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
        let columns = header.split('\t').enumerate().map(|(i, c)| (c.trim().to_string(), i)).collect();
        let rows = lines.map(|l| l.split('\t').map(|c| c.trim().to_string()).collect()).collect();
        Ok(Table { columns, rows })
    }

    fn has(&self, column: &str) -> bool {
        self.columns.contains_key(column)
    }

    fn get<'a>(&self, row: &'a [String], column: &str) -> Result<&'a str> {
        let i = *self.columns.get(column).ok_or_else(|| anyhow!("missing column {column:?}"))?;
        row.get(i).map(String::as_str).ok_or_else(|| anyhow!("short row, no {column:?} value"))
    }

    fn number(&self, row: &[String], column: &str) -> Result<f64> {
        let v = self.get(row, column)?;
        v.parse().map_err(|_| anyhow!("column {column:?}: {v:?} is not a number"))
    }

    /// `score` when present, else the mean of `uas` and `las`.
    fn score(&self, row: &[String]) -> Result<f64> {
        if self.has("score") {
            self.number(row, "score")
        } else {
            Ok((self.number(row, "uas")? + self.number(row, "las")?) / 2.0)
        }
    }
}

fn read_distances(path: &Path) -> Result<DistanceMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DistanceMatrix::from_tsv(&text)?)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let mut dir = RunDir::create(&args.out, &[args.scores.clone(), args.distances.clone()])?;
    let table = Table::read(&args.scores)?;
    let dm = read_distances(&args.distances)?;
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        let lang = table.get(row, "language")?.to_string();
        scores.entry(lang).or_default().push(table.score(row)?);
    }
    let source_score = scores
        .get(&args.source)
        .map(|s| mean(s))
        .ok_or_else(|| anyhow!("no score for source language {:?}", args.source))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut points = String::from("language\tdistance\tmetric\tvalue\n");
    for (lang, s) in scores.iter().filter(|(l, _)| **l != args.source) {
        let d = dm
            .get(&args.source, lang)
            .ok_or_else(|| anyhow!("no distance between {:?} and {lang:?}", args.source))?;
        let gap = source_score - mean(s);
        xs.push(d);
        ys.push(gap);
        points.push_str(&format!("{lang}\t{}\tperformance_distance\t{}\n", fixed6(d), fixed6(gap)));
    }
    let report = correlate_samples(&xs, &ys)?;
    dir.write("points.tsv", points)?;
    dir.write_json("correlation.json", &report)?;
    println!(
        "pearson {} spearman {} (n = {})",
        fixed4(report.pearson),
        fixed4(report.spearman),
        report.n
    );
    dir.finish("analyze correlate", &serde_json::to_value(args)?, &[])
}

fn encoder_family(name: &str) -> Result<EncoderFamily> {
    match name {
        "rnn" => Ok(EncoderFamily::Rnn),
        n if n == "self-attention" || n.starts_with("self-att") => Ok(EncoderFamily::SelfAttention),
        _ => bail!("unknown encoder {name:?}"),
    }
}

fn decoder_family(name: &str) -> Result<DecoderFamily> {
    match name {
        "graph" => Ok(DecoderFamily::Graph),
        "stack-pointer" => Ok(DecoderFamily::StackPointer),
        _ => bail!("unknown decoder {name:?}"),
    }
}

pub fn contrast(args: &ContrastArgs) -> Result<()> {
    let mut inputs = vec![args.results.clone()];
    inputs.extend(args.distances.iter().cloned());
    let mut dir = RunDir::create(&args.out, &inputs)?;
    let table = Table::read(&args.results)?;
    let mut cells: BTreeMap<(EncoderFamily, DecoderFamily, String), Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        let key = (
            encoder_family(table.get(row, "encoder")?)?,
            decoder_family(table.get(row, "decoder")?)?,
            table.get(row, "language")?.to_string(),
        );
        cells.entry(key).or_default().push(table.score(row)?);
    }
    let results = cells.into_iter().map(|(k, v)| (k, mean(&v))).collect();
    let mut to_source = HashMap::new();
    if let (Some(p), Some(src)) = (&args.distances, &args.source) {
        let dm = read_distances(p)?;
        for l in &dm.languages {
            if let Some(d) = dm.get(src, l) {
                to_source.insert(l.clone(), d);
            }
        }
    }
    let contrasts = component_contrast(&results, &to_source)?;
    let mut tsv = String::from("language\tdistance\tencoder_contrast\tdecoder_contrast\n");
    for c in &contrasts {
        let d = c.distance.map_or_else(|| "NA".to_string(), fixed6);
        tsv.push_str(&format!("{}\t{d}\t{}\t{}\n", c.language, fixed4(c.encoder), fixed4(c.decoder)));
    }
    dir.write("contrast.tsv", &tsv)?;
    dir.write_json("contrast.json", &contrasts)?;
    print!("{tsv}");
    dir.finish("analyze contrast", &serde_json::to_value(args)?, &[])
}

pub fn pairs(args: &PairsArgs) -> Result<()> {
    let mut dir = RunDir::create(&args.out, &[args.matrix.clone(), args.distances.clone()])?;
    let text = std::fs::read_to_string(&args.matrix).with_context(|| format!("reading {}", args.matrix.display()))?;
    let a = TransferMatrix::from_tsv(&text)?;
    let dm = read_distances(&args.distances)?;
    let summary = transfer_summaries(&a, &dm)?;
    let mut means = String::from("language\tas_source\tas_target\tmean_distance\n");
    for l in &summary.languages {
        means.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            l.language,
            fixed4(l.as_source),
            fixed4(l.as_target),
            fixed6(l.mean_distance.unwrap_or(f64::NAN))
        ));
    }
    dir.write("means.tsv", means)?;
    dir.write("pairs_long.tsv", summary.to_long_tsv())?;
    dir.write_json("summary.json", &summary)?;
    println!(
        "as-source vs distance: pearson {} spearman {}",
        fixed4(summary.source_vs_distance.pearson),
        fixed4(summary.source_vs_distance.spearman)
    );
    println!(
        "as-target vs distance: pearson {} spearman {}",
        fixed4(summary.target_vs_distance.pearson),
        fixed4(summary.target_vs_distance.spearman)
    );
    dir.finish("analyze pairs", &serde_json::to_value(args)?, &[])
}
