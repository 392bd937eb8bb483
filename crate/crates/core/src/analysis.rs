//! Relating transfer performance to word-order distance.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalReport;
use crate::tsv::{fixed4, fixed6};
use crate::typology::DistanceMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need equal-length samples of at least 3 values, got {0} and {1}")]
    SampleSize(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("missing score for {encoder:?}/{decoder:?} on {language}")]
    MissingCell {
        encoder: EncoderFamily,
        decoder: DecoderFamily,
        language: String,
    },
    #[error("language sets differ between transfer and distance matrices")]
    Misaligned,
    #[error("transfer matrix is not square over its languages")]
    Malformed,
}

/// Mean of UAS and LAS of `source` minus that of `target`.
pub fn performance_distance(target: &EvalReport, source: &EvalReport) -> f64 {
    source.mean_score() - target.mean_score()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

fn pearson_unchecked(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(AnalysisError::ZeroVariance("ys"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson on values and Spearman as Pearson on fractional ranks.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport, AnalysisError> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(AnalysisError::SampleSize(xs.len(), ys.len()));
    }
    let pearson = pearson_unchecked(xs, ys)?;
    let spearman = pearson_unchecked(&fractional_ranks(xs), &fractional_ranks(ys))?;
    Ok(CorrelationReport {
        pearson,
        spearman,
        n: xs.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EncoderFamily {
    SelfAttention,
    Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DecoderFamily {
    Graph,
    StackPointer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentContrast {
    pub language: String,
    pub distance: Option<f64>,
    /// Best self-attention score minus best RNN score.
    pub encoder: f64,
    /// Best graph-decoder score minus best stack-pointer score.
    pub decoder: f64,
}

/// Order-free minus order-sensitive differences per language, each side
/// taking the best score over the other component. Output is sorted by
/// distance to the source (ascending, unknown distances last), then code.
pub fn component_contrast(
    results: &BTreeMap<(EncoderFamily, DecoderFamily, String), f64>,
    distance_to_source: &HashMap<String, f64>,
) -> Result<Vec<ComponentContrast>, AnalysisError> {
    use DecoderFamily::*;
    use EncoderFamily::*;
    let languages: BTreeSet<&String> = results.keys().map(|(_, _, l)| l).collect();
    let mut out = Vec::with_capacity(languages.len());
    for lang in languages {
        let get = |e: EncoderFamily, d: DecoderFamily| {
            results
                .get(&(e, d, lang.clone()))
                .copied()
                .ok_or_else(|| AnalysisError::MissingCell {
                    encoder: e,
                    decoder: d,
                    language: lang.clone(),
                })
        };
        let (sg, ss, rg, rs) = (
            get(SelfAttention, Graph)?,
            get(SelfAttention, StackPointer)?,
            get(Rnn, Graph)?,
            get(Rnn, StackPointer)?,
        );
        out.push(ComponentContrast {
            language: lang.clone(),
            distance: distance_to_source.get(lang).copied(),
            encoder: sg.max(ss) - rg.max(rs),
            decoder: sg.max(rg) - ss.max(rs),
        });
    }
    out.sort_by(|a, b| {
        let da = a.distance.unwrap_or(f64::INFINITY);
        let db = b.distance.unwrap_or(f64::INFINITY);
        da.total_cmp(&db).then_with(|| a.language.cmp(&b.language))
    });
    Ok(out)
}

/// `entries[i][j]`: score of a model trained on language `i` evaluated on `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub languages: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn new(languages: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, AnalysisError> {
        let n = languages.len();
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(AnalysisError::Malformed);
        }
        Ok(TransferMatrix { languages, entries })
    }

    pub fn from_tsv(text: &str) -> Result<Self, crate::tsv::TsvError> {
        let (languages, entries) = crate::tsv::parse_square_matrix(text)?;
        TransferMatrix::new(languages, entries).map_err(|e| crate::tsv::TsvError::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageTransfer {
    pub language: String,
    pub as_source: f64,
    pub as_target: f64,
    pub mean_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub languages: Vec<LanguageTransfer>,
    pub source_vs_distance: CorrelationReport,
    pub target_vs_distance: CorrelationReport,
}

/// Row and column means of `a`, excluding the diagonal.
pub fn transfer_means(a: &TransferMatrix) -> Vec<LanguageTransfer> {
    let n = a.languages.len();
    let denom = (n.saturating_sub(1)).max(1) as f64;
    (0..n)
        .map(|i| {
            let row: f64 = (0..n).filter(|&j| j != i).map(|j| a.entries[i][j]).sum();
            let col: f64 = (0..n).filter(|&j| j != i).map(|j| a.entries[j][i]).sum();
            LanguageTransfer {
                language: a.languages[i].clone(),
                as_source: row / denom,
                as_target: col / denom,
                mean_distance: None,
            }
        })
        .collect()
}

/// As-source / as-target means against each language's mean word-order
/// distance to all others.
pub fn transfer_summaries(
    a: &TransferMatrix,
    distances: &DistanceMatrix,
) -> Result<TransferSummary, AnalysisError> {
    let la: BTreeSet<&String> = a.languages.iter().collect();
    let ld: BTreeSet<&String> = distances.languages.iter().collect();
    if la != ld || la.len() != a.languages.len() {
        return Err(AnalysisError::Misaligned);
    }
    let mut rows = transfer_means(a);
    let n = a.languages.len();
    for row in rows.iter_mut() {
        let i = distances.index_of(&row.language).ok_or(AnalysisError::Misaligned)?;
        let sum: f64 = (0..n).filter(|&j| j != i).map(|j| distances.entries[i][j]).sum();
        row.mean_distance = Some(sum / (n.saturating_sub(1)).max(1) as f64);
    }
    let dist: Vec<f64> = rows.iter().map(|r| r.mean_distance.unwrap_or(0.0)).collect();
    let src: Vec<f64> = rows.iter().map(|r| r.as_source).collect();
    let tgt: Vec<f64> = rows.iter().map(|r| r.as_target).collect();
    Ok(TransferSummary {
        source_vs_distance: correlate(&src, &dist)?,
        target_vs_distance: correlate(&tgt, &dist)?,
        languages: rows,
    })
}

impl TransferSummary {
    /// Long format: language, distance, metric, value.
    pub fn to_long_tsv(&self) -> String {
        let mut out = String::from("language\tdistance\tmetric\tvalue\n");
        for r in &self.languages {
            let d = fixed6(r.mean_distance.unwrap_or(f64::NAN));
            out.push_str(&format!("{}\t{}\tas_source\t{}\n", r.language, d, fixed4(r.as_source)));
            out.push_str(&format!("{}\t{}\tas_target\t{}\n", r.language, d, fixed4(r.as_target)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(uas: f64, las: f64) -> EvalReport {
        EvalReport {
            uas,
            las,
            evaluated_tokens: 1,
            total_tokens: 1,
            correct_heads: 0,
            correct_labels: 0,
            punct_excluded: true,
        }
    }

    #[test]
    fn performance_distance_examples() {
        let s = report(0.9, 0.88);
        let t = report(0.6, 0.5);
        assert!((performance_distance(&t, &s) - 0.34).abs() < 1e-12);
        assert_eq!(performance_distance(&s, &s), 0.0);
        assert_eq!(performance_distance(&s, &t), -performance_distance(&t, &s));
    }

    #[test]
    fn exact_linear_and_reversed() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let c = correlate(&xs, &ys).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-15);
        assert!((c.spearman - 1.0).abs() < 1e-15);

        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rev: Vec<f64> = sorted.iter().rev().copied().collect();
        assert!((correlate(&sorted, &rev).unwrap().spearman + 1.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_errors() {
        assert_eq!(correlate(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::SampleSize(2, 2)));
        assert_eq!(
            correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::ZeroVariance("xs"))
        );
    }

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    fn table(sg: f64, ss: f64, rg: f64, rs: f64) -> BTreeMap<(EncoderFamily, DecoderFamily, String), f64> {
        use DecoderFamily::*;
        use EncoderFamily::*;
        let mut m = BTreeMap::new();
        m.insert((SelfAttention, Graph, "xx".to_string()), sg);
        m.insert((SelfAttention, StackPointer, "xx".to_string()), ss);
        m.insert((Rnn, Graph, "xx".to_string()), rg);
        m.insert((Rnn, StackPointer, "xx".to_string()), rs);
        m
    }

    #[test]
    fn contrast_examples() {
        let none = HashMap::new();
        let c = component_contrast(&table(70.0, 68.0, 66.0, 69.0), &none).unwrap();
        assert_eq!((c[0].encoder, c[0].decoder), (1.0, 1.0));
        let c = component_contrast(&table(5.0, 5.0, 5.0, 5.0), &none).unwrap();
        assert_eq!((c[0].encoder, c[0].decoder), (0.0, 0.0));
        let shifted = component_contrast(&table(80.0, 78.0, 76.0, 79.0), &none).unwrap();
        assert_eq!((shifted[0].encoder, shifted[0].decoder), (1.0, 1.0));
        // swapping encoder labels flips the encoder sign
        let swapped = component_contrast(&table(66.0, 69.0, 70.0, 68.0), &none).unwrap();
        assert_eq!(swapped[0].encoder, -1.0);

        let mut partial = table(1.0, 1.0, 1.0, 1.0);
        partial.remove(&(EncoderFamily::Rnn, DecoderFamily::Graph, "xx".to_string()));
        assert!(matches!(
            component_contrast(&partial, &none),
            Err(AnalysisError::MissingCell { .. })
        ));
    }

    #[test]
    fn contrast_sorted_by_distance() {
        let mut m = table(1.0, 1.0, 1.0, 1.0);
        for ((e, d, _), v) in table(2.0, 2.0, 2.0, 2.0) {
            m.insert((e, d, "aa".to_string()), v);
        }
        let dist: HashMap<String, f64> = [("xx".to_string(), 0.5), ("aa".to_string(), 2.0)].into();
        let c = component_contrast(&m, &dist).unwrap();
        assert_eq!(c[0].language, "xx");
        assert_eq!(c[1].distance, Some(2.0));
    }

    fn langs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn transfer_means_hand_matrix() {
        let a = TransferMatrix::new(
            langs(3),
            vec![vec![90.0, 60.0, 50.0], vec![70.0, 85.0, 40.0], vec![30.0, 20.0, 80.0]],
        )
        .unwrap();
        let m = transfer_means(&a);
        assert_eq!(m[0].as_source, 55.0);
        assert_eq!(m[1].as_source, 55.0);
        assert_eq!(m[2].as_source, 25.0);
        assert_eq!(m[0].as_target, 50.0);
        assert_eq!(m[1].as_target, 40.0);
        assert_eq!(m[2].as_target, 45.0);

        let mut changed = a.clone();
        for i in 0..3 {
            changed.entries[i][i] = -1000.0;
        }
        assert_eq!(transfer_means(&changed), m);
    }

    #[test]
    fn constant_matrix_surfaces_zero_variance() {
        let a = TransferMatrix::new(langs(3), vec![vec![7.0; 3]; 3]).unwrap();
        assert!(transfer_means(&a).iter().all(|r| r.as_source == 7.0 && r.as_target == 7.0));
        let d = DistanceMatrix::new(
            langs(3),
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]],
        )
        .unwrap();
        assert_eq!(transfer_summaries(&a, &d), Err(AnalysisError::ZeroVariance("xs")));
        let other = DistanceMatrix::new(vec!["a".into(), "b".into(), "c".into()], d.entries.clone()).unwrap();
        assert_eq!(transfer_summaries(&a, &other), Err(AnalysisError::Misaligned));
    }
}
