//! Word-order typology: directional statistics over augmented dependency
//! types, language distance, single-linkage clustering and signed
//! dependency-distance histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{Sentence, Treebank};
use crate::tsv::fixed6;

/// Feature value used for a selected type the language never exhibits.
pub const IMPUTED_VALUE: f64 = 0.5;

/// Head POS assigned to root edges when they are counted.
pub const ROOT_POS: &str = "ROOT";

#[derive(Debug, Error, PartialEq)]
pub enum TypologyError {
    #[error("no languages supplied")]
    NoLanguages,
    #[error("word-order vectors are aligned to different type selections")]
    Misaligned,
    #[error("duplicate language code {0:?}")]
    DuplicateLanguage(String),
    #[error("need at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("distance matrix is not square over its languages")]
    MalformedMatrix,
}

/// `(modifier UPOS, head UPOS, relation)`; ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AugmentedType {
    pub modifier_upos: String,
    pub head_upos: String,
    pub deprel: String,
}

impl AugmentedType {
    pub fn new(modifier: &str, head: &str, deprel: &str) -> Self {
        AugmentedType {
            modifier_upos: modifier.to_string(),
            head_upos: head.to_string(),
            deprel: deprel.to_string(),
        }
    }
}

impl fmt::Display for AugmentedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.modifier_upos, self.head_upos, self.deprel)
    }
}

/// Iterates the non-root edges of a sentence as `(modifier, head)` token
/// pairs, optionally including root attachments with `head = None`.
pub(crate) fn edges(
    s: &Sentence,
    include_root: bool,
) -> impl Iterator<Item = (&crate::conllu::Token, Option<&crate::conllu::Token>)> {
    s.tokens.iter().filter_map(move |t| {
        if t.head == 0 {
            include_root.then_some((t, None))
        } else {
            Some((t, Some(&s.tokens[t.head - 1])))
        }
    })
}

pub(crate) fn augmented_type(
    modifier: &crate::conllu::Token,
    head: Option<&crate::conllu::Token>,
) -> AugmentedType {
    AugmentedType::new(
        &modifier.upos,
        head.map(|h| h.upos.as_str()).unwrap_or(ROOT_POS),
        &modifier.deprel,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionCount {
    pub total: u64,
    /// Edges whose modifier precedes its head.
    pub left: u64,
}

impl DirectionCount {
    pub fn left_frequency(&self) -> Option<f64> {
        (self.total > 0).then(|| self.left as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub counts: BTreeMap<AugmentedType, DirectionCount>,
    pub total_edges: u64,
}

impl TypeStats {
    pub fn get(&self, t: &AugmentedType) -> DirectionCount {
        self.counts.get(t).copied().unwrap_or_default()
    }

    pub fn merge(&mut self, other: &TypeStats) {
        for (t, c) in &other.counts {
            let e = self.counts.entry(t.clone()).or_default();
            e.total += c.total;
            e.left += c.left;
        }
        self.total_edges += other.total_edges;
    }

    fn add_sentence(&mut self, s: &Sentence, include_root: bool) {
        for (m, h) in edges(s, include_root) {
            let entry = self.counts.entry(augmented_type(m, h)).or_default();
            entry.total += 1;
            if h.is_some_and(|h| m.id < h.id) {
                entry.left += 1;
            }
            self.total_edges += 1;
        }
    }
}

/// Directional statistics over non-root edges.
pub fn collect_type_stats(tb: &Treebank) -> TypeStats {
    collect_type_stats_opts(tb, false)
}

/// As [`collect_type_stats`]; with `include_root` the root attachment of
/// every sentence is counted under head POS [`ROOT_POS`] and never as
/// left-directed.
pub fn collect_type_stats_opts(tb: &Treebank, include_root: bool) -> TypeStats {
    let mut stats = TypeStats::default();
    for s in tb.sentences() {
        stats.add_sentence(s, include_root);
    }
    stats
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedType {
    pub ty: AugmentedType,
    pub avg_frequency: f64,
    pub languages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSelection {
    pub types: Vec<SelectedType>,
    pub min_avg_freq: f64,
    pub min_langs: usize,
}

impl TypeSelection {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn type_list(&self) -> Vec<AugmentedType> {
        self.types.iter().map(|s| s.ty.clone()).collect()
    }
}

/// Keeps types whose mean per-language edge frequency exceeds
/// `min_avg_freq` and that occur in at least `min_langs` languages.
pub fn select_types(
    stats_by_language: &BTreeMap<String, TypeStats>,
    min_avg_freq: f64,
    min_langs: usize,
) -> Result<TypeSelection, TypologyError> {
    if stats_by_language.is_empty() {
        return Err(TypologyError::NoLanguages);
    }
    let n_langs = stats_by_language.len() as f64;
    let all_types: BTreeSet<&AugmentedType> = stats_by_language
        .values()
        .flat_map(|s| s.counts.keys())
        .collect();

    let mut selected: Vec<SelectedType> = all_types
        .into_iter()
        .filter_map(|t| {
            let mut freq_sum = 0.0;
            let mut present = 0;
            for stats in stats_by_language.values() {
                let c = stats.get(t);
                if c.total > 0 {
                    present += 1;
                    freq_sum += c.total as f64 / stats.total_edges as f64;
                }
            }
            let avg = freq_sum / n_langs;
            (avg > min_avg_freq && present >= min_langs).then(|| SelectedType {
                ty: t.clone(),
                avg_frequency: avg,
                languages: present,
            })
        })
        .collect();
    selected.sort_by(|a, b| {
        b.avg_frequency
            .total_cmp(&a.avg_frequency)
            .then_with(|| a.ty.cmp(&b.ty))
    });
    Ok(TypeSelection {
        types: selected,
        min_avg_freq,
        min_langs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordOrderVector {
    pub language: String,
    pub types: Arc<[AugmentedType]>,
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
}

impl WordOrderVector {
    /// Share of components filled with [`IMPUTED_VALUE`].
    pub fn imputed_share(&self) -> f64 {
        if self.imputed.is_empty() {
            return 0.0;
        }
        self.imputed.iter().filter(|&&b| b).count() as f64 / self.imputed.len() as f64
    }
}

/// Per selected type, the relative frequency of modifier-before-head edges.
pub fn order_vector(language: &str, stats: &TypeStats, types: &Arc<[AugmentedType]>) -> WordOrderVector {
    let (values, imputed) = types
        .iter()
        .map(|t| match stats.get(t).left_frequency() {
            Some(f) => (f, false),
            None => (IMPUTED_VALUE, true),
        })
        .unzip();
    WordOrderVector {
        language: language.to_string(),
        types: Arc::clone(types),
        values,
        imputed,
    }
}

/// Convenience wrapper collecting statistics from `tb` first.
pub fn order_vector_for(tb: &Treebank, sel: &TypeSelection) -> WordOrderVector {
    let types: Arc<[AugmentedType]> = sel.type_list().into();
    order_vector(tb.language(), &collect_type_stats(tb), &types)
}

pub fn manhattan_distance(a: &WordOrderVector, b: &WordOrderVector) -> Result<f64, TypologyError> {
    if a.values.len() != b.values.len() || (!Arc::ptr_eq(&a.types, &b.types) && a.types != b.types) {
        return Err(TypologyError::Misaligned);
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub languages: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn new(languages: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, TypologyError> {
        let n = languages.len();
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(TypologyError::MalformedMatrix);
        }
        let mut seen = BTreeSet::new();
        for l in &languages {
            if !seen.insert(l) {
                return Err(TypologyError::DuplicateLanguage(l.clone()));
            }
        }
        Ok(DistanceMatrix { languages, entries })
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn index_of(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.entries[self.index_of(a)?][self.index_of(b)?])
    }

    /// Tab-separated with a header row and a leading language column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("language");
        for l in &self.languages {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.languages.iter().zip(&self.entries) {
            out.push_str(l);
            for v in row {
                out.push('\t');
                out.push_str(&fixed6(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, crate::tsv::TsvError> {
        let (languages, entries) = crate::tsv::parse_square_matrix(text)?;
        DistanceMatrix::new(languages, entries)
            .map_err(|e| crate::tsv::TsvError::Format(e.to_string()))
    }
}

pub fn distance_matrix(vectors: &[WordOrderVector]) -> Result<DistanceMatrix, TypologyError> {
    if vectors.len() < 2 {
        return Err(TypologyError::TooFewLanguages(vectors.len()));
    }
    let n = vectors.len();
    let mut entries = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = manhattan_distance(&vectors[i], &vectors[j])?;
            entries[i][j] = d;
            entries[j][i] = d;
        }
    }
    DistanceMatrix::new(vectors.iter().map(|v| v.language.clone()).collect(), entries)
}

/// One agglomeration step. Leaves are clusters `0..L`; the merge at step
/// `s` creates cluster `L + s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub height: f64,
    pub new_cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Leaf indices under `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        let l = self.leaves.len();
        if cluster < l {
            return vec![cluster];
        }
        let m = &self.merges[cluster - l];
        let mut out = self.members(m.cluster_a);
        out.extend(self.members(m.cluster_b));
        out.sort_unstable();
        out
    }

    fn height_of(&self, cluster: usize) -> f64 {
        let l = self.leaves.len();
        if cluster < l {
            0.0
        } else {
            self.merges[cluster - l].height
        }
    }

    fn newick_node(&self, cluster: usize, parent_height: f64, out: &mut String) {
        let l = self.leaves.len();
        if cluster < l {
            out.push_str(&self.leaves[cluster]);
        } else {
            let m = &self.merges[cluster - l];
            out.push('(');
            self.newick_node(m.cluster_a, m.height, out);
            out.push(',');
            self.newick_node(m.cluster_b, m.height, out);
            out.push(')');
        }
        out.push(':');
        out.push_str(&fixed6(parent_height - self.height_of(cluster)));
    }

    /// Newick string with branch lengths (height differences).
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        match self.merges.last() {
            None => {
                if let Some(leaf) = self.leaves.first() {
                    out.push_str(leaf);
                }
            }
            Some(top) => {
                let root = top.new_cluster;
                let m = &self.merges[root - self.leaves.len()];
                out.push('(');
                self.newick_node(m.cluster_a, m.height, &mut out);
                out.push(',');
                self.newick_node(m.cluster_b, m.height, &mut out);
                out.push(')');
            }
        }
        out.push(';');
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tcluster_a\tcluster_b\theight\tnew_cluster\tmembers\n");
        for (step, m) in self.merges.iter().enumerate() {
            let members: Vec<&str> = self
                .members(m.new_cluster)
                .into_iter()
                .map(|i| self.leaves[i].as_str())
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                step + 1,
                m.cluster_a,
                m.cluster_b,
                fixed6(m.height),
                m.new_cluster,
                members.join(",")
            ));
        }
        out
    }
}

/// Agglomerative clustering where the distance between clusters is the
/// minimum pairwise distance between their members. Ties go to the
/// smallest `(cluster_a, cluster_b)` id pair.
pub fn cluster_single_linkage(dm: &DistanceMatrix) -> Result<Dendrogram, TypologyError> {
    let l = dm.len();
    if l < 2 {
        return Err(TypologyError::TooFewLanguages(l));
    }
    // active cluster ids and their distance rows, indexed by cluster id
    let mut active: Vec<usize> = (0..l).collect();
    let mut dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..l {
        for j in (i + 1)..l {
            dist.insert((i, j), dm.entries[i][j]);
        }
    }
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut merges = Vec::with_capacity(l - 1);
    for step in 0..(l - 1) {
        let mut best: Option<((usize, usize), f64)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let d = dist[&key(a, b)];
                // iteration is in ascending (a, b) order, so strict < keeps the smallest pair
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some(((a, b), d));
                }
            }
        }
        let ((a, b), height) = best.expect("at least two active clusters");
        let new_cluster = l + step;
        active.retain(|&c| c != a && c != b);
        for &c in &active {
            let d = dist[&key(a, c)].min(dist[&key(b, c)]);
            dist.insert(key(c, new_cluster), d);
        }
        active.push(new_cluster);
        merges.push(Merge {
            cluster_a: a,
            cluster_b: b,
            height,
            new_cluster,
        });
    }
    Ok(Dendrogram {
        leaves: dm.languages.clone(),
        merges,
    })
}

/// Signed-distance buckets, `d = modifier position - head position`.
pub const DEP_DIST_BUCKETS: [&str; 6] = ["<-2", "-2", "-1", "1", "2", ">2"];

pub fn dep_distance_bucket(d: i64) -> usize {
    match d {
        i64::MIN..=-3 => 0,
        -2 => 1,
        -1 => 2,
        1 => 3,
        2 => 4,
        _ => {
            debug_assert!(d > 2, "zero dependency distance");
            5
        }
    }
}

pub fn dependency_distance(modifier_id: usize, head_id: usize) -> i64 {
    modifier_id as i64 - head_id as i64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepDistHistogram {
    pub counts: [u64; 6],
    /// Percentages per bucket; all zero when `empty`.
    pub percent: [f64; 6],
    pub empty: bool,
}

impl DepDistHistogram {
    pub fn from_counts(counts: [u64; 6]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut percent = [0.0; 6];
        if total > 0 {
            for (p, &c) in percent.iter_mut().zip(&counts) {
                *p = 100.0 * c as f64 / total as f64;
            }
        }
        DepDistHistogram {
            counts,
            percent,
            empty: total == 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn dep_distance_histogram(tb: &Treebank) -> DepDistHistogram {
    dep_distance_histogram_of(tb.sentences())
}

pub fn dep_distance_histogram_of(sentences: &[Sentence]) -> DepDistHistogram {
    let mut counts = [0u64; 6];
    for s in sentences {
        for t in s.tokens.iter().filter(|t| t.head != 0) {
            counts[dep_distance_bucket(dependency_distance(t.id, t.head))] += 1;
        }
    }
    DepDistHistogram::from_counts(counts)
}

/// Rows are languages, columns the six distance buckets (percent).
pub fn histograms_to_tsv(rows: &[(String, DepDistHistogram)]) -> String {
    let mut out = String::from("language");
    for b in DEP_DIST_BUCKETS {
        out.push('\t');
        out.push_str(b);
    }
    out.push_str("\tedges\n");
    for (lang, h) in rows {
        out.push_str(lang);
        for p in h.percent {
            out.push('\t');
            out.push_str(&fixed6(p));
        }
        out.push_str(&format!("\t{}\n", h.total()));
    }
    out
}

/// Rows are selected types, columns languages.
pub fn vectors_to_tsv(vectors: &[WordOrderVector]) -> String {
    let mut out = String::from("type");
    for v in vectors {
        out.push('\t');
        out.push_str(&v.language);
    }
    out.push('\n');
    if let Some(first) = vectors.first() {
        for (t, ty) in first.types.iter().enumerate() {
            out.push_str(&ty.to_string());
            for v in vectors {
                out.push('\t');
                out.push_str(&fixed6(v.values[t]));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Token;

    fn sentence(rows: &[(&str, usize, &str)]) -> Sentence {
        Sentence::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(upos, head, rel))| Token::new(i + 1, format!("w{i}"), upos, head, rel))
                .collect(),
        )
    }

    fn tb(sentences: Vec<Sentence>) -> Treebank {
        Treebank::new("xx", sentences).unwrap()
    }

    #[test]
    fn amod_direction() {
        let left = tb(vec![sentence(&[("ADJ", 2, "amod"), ("NOUN", 0, "root")])]);
        let stats = collect_type_stats(&left);
        let t = AugmentedType::new("ADJ", "NOUN", "amod");
        assert_eq!(stats.get(&t), DirectionCount { total: 1, left: 1 });
        assert_eq!(stats.counts.len(), 1, "root edge must not be counted");
        assert_eq!(stats.total_edges, 1);

        let right = tb(vec![sentence(&[("NOUN", 0, "root"), ("ADJ", 1, "amod")])]);
        assert_eq!(collect_type_stats(&right).get(&t), DirectionCount { total: 1, left: 0 });
    }

    #[test]
    fn case_left_frequency_over_five_sentences() {
        let prep = || sentence(&[("ADP", 2, "case"), ("NOUN", 0, "root")]);
        let post = || sentence(&[("NOUN", 0, "root"), ("ADP", 1, "case")]);
        let other = || sentence(&[("VERB", 0, "root")]);
        let stats = collect_type_stats(&tb(vec![prep(), other(), prep(), post(), prep()]));
        let c = stats.get(&AugmentedType::new("ADP", "NOUN", "case"));
        assert_eq!((c.left, c.total), (3, 4));
        assert_eq!(c.left_frequency(), Some(0.75));
    }

    #[test]
    fn root_edges_optionally_counted() {
        let t = tb(vec![sentence(&[("ADJ", 2, "amod"), ("NOUN", 0, "root")])]);
        let stats = collect_type_stats_opts(&t, true);
        let root = stats.get(&AugmentedType::new("NOUN", ROOT_POS, "root"));
        assert_eq!(root, DirectionCount { total: 1, left: 0 });
        assert_eq!(stats.total_edges, 2);
    }

    fn stats_from(pairs: &[(&str, u64, u64)]) -> TypeStats {
        let mut s = TypeStats::default();
        for &(rel, total, left) in pairs {
            s.counts
                .insert(AugmentedType::new("X", "Y", rel), DirectionCount { total, left });
            s.total_edges += total;
        }
        s
    }

    #[test]
    fn selection_single_language_keeps_everything_sorted() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), stats_from(&[("x", 1, 0), ("y", 5, 2), ("z", 1, 1)]));
        let sel = select_types(&m, 0.0, 1).unwrap();
        let rels: Vec<&str> = sel.types.iter().map(|t| t.ty.deprel.as_str()).collect();
        assert_eq!(rels, vec!["y", "x", "z"]);
    }

    #[test]
    fn selection_language_count_criterion() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), stats_from(&[("common", 10, 5), ("rare", 10, 5)]));
        m.insert("b".to_string(), stats_from(&[("common", 10, 5), ("rare", 10, 5)]));
        m.insert("c".to_string(), stats_from(&[("common", 10, 5)]));
        let sel = select_types(&m, 0.0, 3).unwrap();
        let rels: Vec<&str> = sel.types.iter().map(|t| t.ty.deprel.as_str()).collect();
        assert_eq!(rels, vec!["common"]);
        // avg freq of "rare": (0.5 + 0.5 + 0) / 3
        let sel = select_types(&m, 0.0, 2).unwrap();
        assert!((sel.types[1].avg_frequency - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(select_types(&BTreeMap::new(), 0.0, 1), Err(TypologyError::NoLanguages));
    }

    #[test]
    fn vector_values_and_imputation() {
        let stats = stats_from(&[("a", 3, 2)]);
        let types: Arc<[AugmentedType]> =
            vec![AugmentedType::new("X", "Y", "a"), AugmentedType::new("X", "Y", "b")].into();
        let v = order_vector("l", &stats, &types);
        assert!((v.values[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.values[1], 0.5);
        assert_eq!(v.imputed, vec![false, true]);
        assert_eq!(v.imputed_share(), 0.5);
    }

    fn vec_of(lang: &str, values: &[f64], types: &Arc<[AugmentedType]>) -> WordOrderVector {
        WordOrderVector {
            language: lang.into(),
            types: types.clone(),
            values: values.to_vec(),
            imputed: vec![false; values.len()],
        }
    }

    #[test]
    fn manhattan_examples() {
        let types: Arc<[AugmentedType]> =
            vec![AugmentedType::new("A", "B", "c"), AugmentedType::new("D", "E", "f")].into();
        let a = vec_of("a", &[0.2, 0.8], &types);
        let b = vec_of("b", &[0.5, 0.4], &types);
        assert!((manhattan_distance(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(manhattan_distance(&a, &a).unwrap(), 0.0);
        let other: Arc<[AugmentedType]> = vec![AugmentedType::new("A", "B", "c")].into();
        let c = vec_of("c", &[0.1], &other);
        assert_eq!(manhattan_distance(&a, &c), Err(TypologyError::Misaligned));
    }

    #[test]
    fn duplicate_languages_rejected() {
        let types: Arc<[AugmentedType]> = vec![AugmentedType::new("A", "B", "c")].into();
        let v = vec![vec_of("a", &[0.1], &types), vec_of("a", &[0.2], &types)];
        assert_eq!(
            distance_matrix(&v),
            Err(TypologyError::DuplicateLanguage("a".into()))
        );
        assert_eq!(distance_matrix(&v[..1]), Err(TypologyError::TooFewLanguages(1)));
    }

    fn dm(langs: &[&str], entries: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::new(langs.iter().map(|s| s.to_string()).collect(), entries).unwrap()
    }

    #[test]
    fn two_language_cluster() {
        let d = cluster_single_linkage(&dm(&["a", "b"], vec![vec![0.0, 0.7], vec![0.7, 0.0]])).unwrap();
        assert_eq!(
            d.merges,
            vec![Merge {
                cluster_a: 0,
                cluster_b: 1,
                height: 0.7,
                new_cluster: 2
            }]
        );
        assert_eq!(d.to_newick(), "(a:0.700000,b:0.700000);");
    }

    #[test]
    fn three_point_trace() {
        let m = dm(
            &["A", "B", "C"],
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]],
        );
        let d = cluster_single_linkage(&m).unwrap();
        let steps: Vec<(usize, usize, f64)> =
            d.merges.iter().map(|m| (m.cluster_a, m.cluster_b, m.height)).collect();
        assert_eq!(steps, vec![(0, 1, 1.0), (2, 3, 2.0)]);
        assert_eq!(d.to_newick(), "(C:2.000000,(A:1.000000,B:1.000000):1.000000);");
        assert_eq!(cluster_single_linkage(&dm(&["A"], vec![vec![0.0]])).unwrap_err(), TypologyError::TooFewLanguages(1));
    }

    #[test]
    fn tie_break_prefers_smallest_pair() {
        let m = dm(
            &["a", "b", "c", "d"],
            vec![
                vec![0.0, 1.0, 1.0, 1.0],
                vec![1.0, 0.0, 1.0, 1.0],
                vec![1.0, 1.0, 0.0, 1.0],
                vec![1.0, 1.0, 1.0, 0.0],
            ],
        );
        let d = cluster_single_linkage(&m).unwrap();
        let pairs: Vec<(usize, usize)> = d.merges.iter().map(|m| (m.cluster_a, m.cluster_b)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn histogram_examples() {
        let t = tb(vec![sentence(&[("A", 2, "x"), ("B", 0, "root"), ("C", 2, "y")])]);
        let h = dep_distance_histogram(&t);
        assert_eq!(h.counts, [0, 0, 1, 1, 0, 0]);
        assert_eq!(h.percent, [0.0, 0.0, 50.0, 50.0, 0.0, 0.0]);
        assert!(!h.empty);

        let single = dep_distance_histogram(&tb(vec![sentence(&[("A", 0, "root")])]));
        assert!(single.empty);
        assert_eq!(single.percent, [0.0; 6]);
    }

    #[test]
    fn bucket_boundaries() {
        let got: Vec<usize> = [-5, -3, -2, -1, 1, 2, 3, 9].iter().map(|&d| dep_distance_bucket(d)).collect();
        assert_eq!(got, vec![0, 0, 1, 2, 3, 4, 5, 5]);
    }
}
