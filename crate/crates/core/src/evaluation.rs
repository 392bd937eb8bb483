//! Attachment scores and gold-conditioned breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::Sentence;
use crate::tree::ParseTree;
use crate::tsv::fixed4;
use crate::typology::{
    augmented_type, dep_distance_bucket, dependency_distance, edges, AugmentedType,
    DEP_DIST_BUCKETS,
};

/// Default floor below which a breakdown cell is flagged unstable.
pub const UNSTABLE_FLOOR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predicted trees for {gold} gold sentences")]
    SentenceCount { pred: usize, gold: usize },
    #[error("sentence {sentence}: predicted length {pred}, gold length {gold}")]
    Length {
        sentence: usize,
        pred: usize,
        gold: usize,
    },
}

fn check_aligned(pred: &[ParseTree], gold: &[Sentence]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::SentenceCount {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() || p.labels.len() != g.len() {
            return Err(EvalError::Length {
                sentence: i + 1,
                pred: p.len(),
                gold: g.len(),
            });
        }
    }
    Ok(())
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub evaluated_tokens: u64,
    pub total_tokens: u64,
    pub correct_heads: u64,
    pub correct_labels: u64,
    pub punct_excluded: bool,
}

impl EvalReport {
    pub fn mean_score(&self) -> f64 {
        (self.uas + self.las) / 2.0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "uas": round4(self.uas),
            "las": round4(self.las),
            "evaluated_tokens": self.evaluated_tokens,
            "total_tokens": self.total_tokens,
            "punct_excluded": self.punct_excluded,
        })
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "uas\tlas\tevaluated_tokens\ttotal_tokens\tpunct_excluded\n{}\t{}\t{}\t{}\t{}\n",
            fixed4(self.uas),
            fixed4(self.las),
            self.evaluated_tokens,
            self.total_tokens,
            self.punct_excluded
        )
    }
}

/// Micro-averaged UAS/LAS over the corpus. With `exclude_punct`, tokens
/// tagged PUNCT or SYM in the gold data are not evaluated.
pub fn attachment_scores(
    pred: &[ParseTree],
    gold: &[Sentence],
    exclude_punct: bool,
) -> Result<EvalReport, EvalError> {
    check_aligned(pred, gold)?;
    let mut evaluated = 0;
    let mut total = 0;
    let mut heads = 0;
    let mut labels = 0;
    for (p, g) in pred.iter().zip(gold) {
        for (i, tok) in g.tokens.iter().enumerate() {
            total += 1;
            if exclude_punct && !tok.is_content() {
                continue;
            }
            evaluated += 1;
            if p.heads[i] == tok.head {
                heads += 1;
                if p.labels[i] == tok.deprel {
                    labels += 1;
                }
            }
        }
    }
    Ok(EvalReport {
        uas: ratio(heads, evaluated),
        las: ratio(labels, evaluated),
        evaluated_tokens: evaluated,
        total_tokens: total,
        correct_heads: heads,
        correct_labels: labels,
        punct_excluded: exclude_punct,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ModFirst,
    HeadFirst,
    All,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::ModFirst => "mod-first",
            Direction::HeadFirst => "head-first",
            Direction::All => "all",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub count: u64,
    pub correct_heads: u64,
    pub correct_labels: u64,
    pub uas: f64,
    pub las: f64,
    /// Share of the enclosing population (see the report types).
    pub frequency: f64,
    pub unstable: bool,
}

impl BreakdownCell {
    fn add(&mut self, head_ok: bool, label_ok: bool) {
        self.count += 1;
        if head_ok {
            self.correct_heads += 1;
            if label_ok {
                self.correct_labels += 1;
            }
        }
    }

    fn finish(&mut self, population: u64, floor: f64) {
        self.uas = ratio(self.correct_heads, self.count);
        self.las = ratio(self.correct_labels, self.count);
        self.frequency = ratio(self.count, population);
        self.unstable = self.frequency < floor;
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "count": self.count,
            "uas": round4(self.uas),
            "las": round4(self.las),
            "frequency": round4(self.frequency),
            "unstable": self.unstable,
        })
    }
}

/// Per gold augmented type, scores split by gold direction. Direction
/// cells carry their share within the type; the `all` cell carries the
/// type's share of all non-root gold edges.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeBreakdown {
    pub cells: BTreeMap<AugmentedType, BTreeMap<Direction, BreakdownCell>>,
    pub floor: f64,
}

impl TypeBreakdown {
    pub fn cell(&self, t: &AugmentedType, d: Direction) -> Option<&BreakdownCell> {
        self.cells.get(t)?.get(&d)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .cells
            .iter()
            .map(|(t, dirs)| {
                let inner: serde_json::Map<String, serde_json::Value> = dirs
                    .iter()
                    .map(|(d, c)| (d.label().to_string(), c.to_json()))
                    .collect();
                (t.to_string(), serde_json::Value::Object(inner))
            })
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("type\tdirection\tcount\tfrequency\tuas\tlas\tunstable\n");
        for (t, dirs) in &self.cells {
            for (d, c) in dirs {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    t,
                    d.label(),
                    c.count,
                    fixed4(c.frequency),
                    fixed4(c.uas),
                    fixed4(c.las),
                    c.unstable
                ));
            }
        }
        out
    }
}

pub fn breakdown_by_type(pred: &[ParseTree], gold: &[Sentence]) -> Result<TypeBreakdown, EvalError> {
    breakdown_by_type_with_floor(pred, gold, UNSTABLE_FLOOR)
}

pub fn breakdown_by_type_with_floor(
    pred: &[ParseTree],
    gold: &[Sentence],
    floor: f64,
) -> Result<TypeBreakdown, EvalError> {
    check_aligned(pred, gold)?;
    let mut cells: BTreeMap<AugmentedType, BTreeMap<Direction, BreakdownCell>> = BTreeMap::new();
    let mut population = 0;
    for (p, g) in pred.iter().zip(gold) {
        for (m, h) in edges(g, false) {
            let i = m.id - 1;
            let head_ok = p.heads[i] == m.head;
            let label_ok = p.labels[i] == m.deprel;
            let dir = if m.id < m.head {
                Direction::ModFirst
            } else {
                Direction::HeadFirst
            };
            let entry = cells.entry(augmented_type(m, h)).or_default();
            entry.entry(dir).or_default().add(head_ok, label_ok);
            entry.entry(Direction::All).or_default().add(head_ok, label_ok);
            population += 1;
        }
    }
    for dirs in cells.values_mut() {
        let type_total = dirs[&Direction::All].count;
        for d in [Direction::ModFirst, Direction::HeadFirst] {
            dirs.entry(d).or_default().finish(type_total, floor);
        }
        if let Some(all) = dirs.get_mut(&Direction::All) {
            all.finish(population, floor);
        }
    }
    Ok(TypeBreakdown { cells, floor })
}

/// Scores per signed dependency-distance bucket of the gold edge; cell
/// frequency is the bucket's share of all non-root gold edges.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceBreakdown {
    pub buckets: [BreakdownCell; 6],
}

impl DistanceBreakdown {
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = DEP_DIST_BUCKETS
            .iter()
            .zip(&self.buckets)
            .map(|(b, c)| (b.to_string(), c.to_json()))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("d\tcount\tfrequency\tuas\tlas\n");
        for (b, c) in DEP_DIST_BUCKETS.iter().zip(&self.buckets) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                b,
                c.count,
                fixed4(c.frequency),
                fixed4(c.uas),
                fixed4(c.las)
            ));
        }
        out
    }
}

pub fn breakdown_by_distance(
    pred: &[ParseTree],
    gold: &[Sentence],
) -> Result<DistanceBreakdown, EvalError> {
    check_aligned(pred, gold)?;
    let mut report = DistanceBreakdown::default();
    let mut population = 0;
    for (p, g) in pred.iter().zip(gold) {
        for t in g.tokens.iter().filter(|t| t.head != 0) {
            let i = t.id - 1;
            let bucket = dep_distance_bucket(dependency_distance(t.id, t.head));
            report.buckets[bucket].add(p.heads[i] == t.head, p.labels[i] == t.deprel);
            population += 1;
        }
    }
    for c in report.buckets.iter_mut() {
        c.finish(population, 0.0);
    }
    Ok(report)
}
