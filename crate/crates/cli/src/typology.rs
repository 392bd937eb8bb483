use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ordfree_core::typology::{
    cluster_single_linkage, collect_type_stats_opts, dep_distance_histogram, distance_matrix,
    histograms_to_tsv, order_vector, vectors_to_tsv, DistanceMatrix, TypeSelection, WordOrderVector,
};
use ordfree_core::tsv::fixed6;
use ordfree_core::Treebank;
use serde::Serialize;

use crate::data::{discover, load_directory};
use crate::run_dir::RunDir;

#[derive(Args, Debug, Serialize)]
pub struct TypologyArgs {
    /// Directory of `<lang>_*.conllu` files
    #[arg(long)]
    pub treebanks: PathBuf,
    /// Keep types whose mean edge frequency exceeds this
    #[arg(long, default_value_t = 0.001)]
    pub min_freq: f64,
    /// Keep types seen in at least this many languages
    #[arg(long, default_value_t = 20)]
    pub min_langs: usize,
    /// Count root edges, with head tag ROOT
    #[arg(long)]
    pub include_root: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ClusterArgs {
    /// Directory of `<lang>_*.conllu` files
    #[arg(long, required_unless_present = "distances")]
    pub treebanks: Option<PathBuf>,
    /// Cluster a precomputed distance matrix instead of treebanks
    #[arg(long, conflicts_with = "treebanks")]
    pub distances: Option<PathBuf>,
    #[arg(long, default_value_t = 0.001)]
    pub min_freq: f64,
    #[arg(long, default_value_t = 20)]
    pub min_langs: usize,
    #[arg(long)]
    pub include_root: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct DepdistArgs {
    #[arg(long)]
    pub treebanks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// The `.conllu` files read from a treebank directory.
fn treebank_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(discover(dir)?.into_values().flatten().collect())
}

struct Vectors {
    selection: TypeSelection,
    vectors: Vec<WordOrderVector>,
}

fn compute_vectors(treebanks: &[Treebank], min_freq: f64, min_langs: usize, include_root: bool) -> Result<Vectors> {
    let stats: BTreeMap<String, _> = treebanks
        .iter()
        .map(|tb| (tb.language().to_string(), collect_type_stats_opts(tb, include_root)))
        .collect();
    let selection = ordfree_core::typology::select_types(&stats, min_freq, min_langs)?;
    if selection.is_empty() {
        bail!(
            "no type passes frequency > {min_freq} in at least {min_langs} of {} languages",
            stats.len()
        );
    }
    let types = selection.type_list().into();
    let vectors = stats.iter().map(|(lang, s)| order_vector(lang, s, &types)).collect();
    Ok(Vectors { selection, vectors })
}

fn selection_tsv(sel: &TypeSelection) -> String {
    let mut out = String::from("type\tavg_frequency\tlanguages\n");
    for t in &sel.types {
        out.push_str(&format!("{}\t{}\t{}\n", t.ty, fixed6(t.avg_frequency), t.languages));
    }
    out
}

fn imputed_tsv(vectors: &[WordOrderVector]) -> String {
    let mut out = String::from("language\timputed_share\n");
    for v in vectors {
        out.push_str(&format!("{}\t{}\n", v.language, fixed6(v.imputed_share())));
    }
    out
}

fn write_vectors(dir: &mut RunDir, v: &Vectors) -> Result<()> {
    dir.write("types.tsv", selection_tsv(&v.selection))?;
    dir.write("vectors.tsv", vectors_to_tsv(&v.vectors))?;
    dir.write("imputed.tsv", imputed_tsv(&v.vectors))
}

fn from_treebanks(
    path: &Path,
    min_freq: f64,
    min_langs: usize,
    include_root: bool,
    dir: &mut RunDir,
) -> Result<DistanceMatrix> {
    let treebanks = load_directory(path)?;
    let v = compute_vectors(&treebanks, min_freq, min_langs, include_root)?;
    write_vectors(dir, &v)?;
    let dm = distance_matrix(&v.vectors)?;
    dir.write("distance.tsv", dm.to_tsv())?;
    println!("{} languages, {} selected types", dm.len(), v.selection.len());
    Ok(dm)
}

pub fn vectors(args: &TypologyArgs) -> Result<()> {
    let mut dir = RunDir::create(&args.out, &treebank_files(&args.treebanks)?)?;
    let treebanks = load_directory(&args.treebanks)?;
    let v = compute_vectors(&treebanks, args.min_freq, args.min_langs, args.include_root)?;
    write_vectors(&mut dir, &v)?;
    println!("{} languages, {} selected types", v.vectors.len(), v.selection.len());
    dir.finish("typology vectors", &serde_json::to_value(args)?, &[])
}

pub fn distance(args: &TypologyArgs) -> Result<()> {
    let mut dir = RunDir::create(&args.out, &treebank_files(&args.treebanks)?)?;
    from_treebanks(&args.treebanks, args.min_freq, args.min_langs, args.include_root, &mut dir)?;
    dir.finish("typology distance", &serde_json::to_value(args)?, &[])
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let mut inputs: Vec<PathBuf> = args.distances.iter().cloned().collect();
    if let Some(tb) = &args.treebanks {
        inputs.extend(treebank_files(tb)?);
    }
    let mut dir = RunDir::create(&args.out, &inputs)?;
    let dm = match (&args.distances, &args.treebanks) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            DistanceMatrix::from_tsv(&text)?
        }
        (None, Some(tb)) => from_treebanks(tb, args.min_freq, args.min_langs, args.include_root, &mut dir)?,
        (None, None) => bail!("give either --treebanks or --distances"),
    };
    let dendrogram = cluster_single_linkage(&dm)?;
    dir.write("dendrogram.tsv", dendrogram.to_tsv())?;
    dir.write("dendrogram.nwk", dendrogram.to_newick() + "\n")?;
    println!("{}", dendrogram.to_newick());
    dir.finish("typology cluster", &serde_json::to_value(args)?, &[])
}

pub fn depdist(args: &DepdistArgs) -> Result<()> {
    let mut dir = RunDir::create(&args.out, &treebank_files(&args.treebanks)?)?;
    let rows: Vec<_> = load_directory(&args.treebanks)?
        .iter()
        .map(|tb| (tb.language().to_string(), dep_distance_histogram(tb)))
        .collect();
    let tsv = histograms_to_tsv(&rows);
    dir.write("depdist.tsv", &tsv)?;
    print!("{tsv}");
    dir.finish("typology depdist", &serde_json::to_value(args)?, &[])
}
