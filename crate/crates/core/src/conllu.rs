//! Reading, validating and writing Universal Dependencies treebanks in
//! CoNLL-U format.
//!
//! Only the columns the toolkit models are retained: ID, FORM, UPOS, HEAD
//! and DEPREL. Multiword-token ranges (`3-4`) and empty nodes (`5.1`) are
//! skipped, and relation subtypes (`nmod:poss`) are truncated to their
//! universal part.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Universal POS tags that are not counted as content tokens.
pub const NON_CONTENT_UPOS: [&str; 2] = ["PUNCT", "SYM"];

/// The 17 universal POS tags of UD v2.
pub const UD_UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// The 37 universal dependency relations of UD v2.
pub const UD_DEPRELS: [&str; 37] = [
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp", "clf", "compound",
    "conj", "cop", "csubj", "dep", "det", "discourse", "dislocated", "expl", "fixed", "flat",
    "goeswith", "iobj", "list", "mark", "nmod", "nsubj", "nummod", "obj", "obl", "orphan",
    "parataxis", "punct", "reparandum", "root", "vocative", "xcomp",
];

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("sentence {sentence}, line {line}: {message}")]
    Parse {
        sentence: usize,
        line: usize,
        message: String,
    },
    #[error("sentence {sentence}, line {line}: {violation}")]
    Invalid {
        sentence: usize,
        line: usize,
        violation: Violation,
    },
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub upos: String,
    pub head: usize,
    pub deprel: String,
}

impl Token {
    pub fn new(
        id: usize,
        form: impl Into<String>,
        upos: impl Into<String>,
        head: usize,
        deprel: impl Into<String>,
    ) -> Self {
        Token {
            id,
            form: form.into(),
            upos: upos.into(),
            head,
            deprel: deprel.into(),
        }
    }

    /// True unless the token is punctuation or a symbol.
    pub fn is_content(&self) -> bool {
        !NON_CONTENT_UPOS.contains(&self.upos.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub sent_id: Option<String>,
}

/// A single broken well-formedness rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Token at 1-based `position` carries id `found`.
    NonConsecutiveId { position: usize, found: usize },
    SelfLoop { id: usize },
    HeadOutOfRange { id: usize, head: usize },
    EmptyField { id: usize, field: &'static str },
    NoRoot,
    MultipleRoots { ids: Vec<usize> },
    /// Token ids on a head cycle that never reaches the root.
    Cycle { ids: Vec<usize> },
}

impl Violation {
    /// Short rule name.
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::NonConsecutiveId { .. } => "non-consecutive ids",
            Violation::SelfLoop { .. } => "self loop",
            Violation::HeadOutOfRange { .. } => "head out of range",
            Violation::EmptyField { .. } => "empty field",
            Violation::NoRoot => "no root",
            Violation::MultipleRoots { .. } => "multiple roots",
            Violation::Cycle { .. } => "cycle",
        }
    }

    /// The token the violation is reported against, if any.
    pub fn token_id(&self) -> Option<usize> {
        match self {
            Violation::NonConsecutiveId { position, .. } => Some(*position),
            Violation::SelfLoop { id }
            | Violation::HeadOutOfRange { id, .. }
            | Violation::EmptyField { id, .. } => Some(*id),
            Violation::NoRoot => None,
            Violation::MultipleRoots { ids } | Violation::Cycle { ids } => ids.first().copied(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonConsecutiveId { position, found } => {
                write!(f, "non-consecutive ids: position {position} has id {found}")
            }
            Violation::SelfLoop { id } => write!(f, "self loop at token {id}"),
            Violation::HeadOutOfRange { id, head } => {
                write!(f, "head out of range: token {id} has head {head}")
            }
            Violation::EmptyField { id, field } => write!(f, "empty field {field} at token {id}"),
            Violation::NoRoot => write!(f, "no root"),
            Violation::MultipleRoots { ids } => write!(f, "multiple roots: tokens {ids:?}"),
            Violation::Cycle { ids } => write!(f, "cycle through tokens {ids:?}"),
        }
    }
}

/// Checks well-formedness of a head sequence (`heads[i]` is the head of
/// token `i + 1`, 0 is the root). Shared by sentences and predicted trees.
pub fn validate_heads(heads: &[usize]) -> Vec<Violation> {
    let n = heads.len();
    let mut violations = Vec::new();
    let mut structural = true;
    for (i, &h) in heads.iter().enumerate() {
        let id = i + 1;
        if h == id {
            violations.push(Violation::SelfLoop { id });
            structural = false;
        } else if h > n {
            violations.push(Violation::HeadOutOfRange { id, head: h });
            structural = false;
        }
    }
    let roots: Vec<usize> = (1..=n).filter(|&id| heads[id - 1] == 0).collect();
    if roots.len() > 1 {
        violations.push(Violation::MultipleRoots { ids: roots.clone() });
    }
    let mut found_cycle = false;
    if structural {
        // 0 = unvisited, 1 = on current path, 2 = reaches root
        let mut state = vec![0u8; n + 1];
        state[0] = 2;
        let mut reported = vec![false; n + 1];
        for start in 1..=n {
            let mut path = Vec::new();
            let mut cur = start;
            while state[cur] == 0 {
                state[cur] = 1;
                path.push(cur);
                cur = heads[cur - 1];
            }
            if state[cur] == 1 && !reported[cur] {
                let pos = path.iter().position(|&t| t == cur).unwrap_or(0);
                let mut ids: Vec<usize> = path[pos..].to_vec();
                ids.sort_unstable();
                for &t in &ids {
                    reported[t] = true;
                }
                violations.push(Violation::Cycle { ids });
                found_cycle = true;
            }
            for t in path {
                state[t] = 2;
            }
        }
    }
    // without a root every in-range head chain ends in a cycle, which is
    // the more specific report
    if n > 0 && roots.is_empty() && !found_cycle {
        violations.push(Violation::NoRoot);
    }
    violations
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            tokens,
            sent_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn deprels(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.deprel.clone()).collect()
    }

    /// Returns every broken invariant; empty iff the sentence is a
    /// well-formed single-rooted tree with consecutive ids.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.id != i + 1 {
                violations.push(Violation::NonConsecutiveId {
                    position: i + 1,
                    found: tok.id,
                });
            }
            if tok.upos.is_empty() {
                violations.push(Violation::EmptyField {
                    id: tok.id,
                    field: "upos",
                });
            }
            if tok.deprel.is_empty() {
                violations.push(Violation::EmptyField {
                    id: tok.id,
                    field: "deprel",
                });
            }
        }
        violations.extend(validate_heads(&self.heads()));
        violations
    }

    /// `mask[i]` is true iff token `i + 1` is neither PUNCT nor SYM.
    pub fn content_mask(&self) -> Vec<bool> {
        self.tokens.iter().map(Token::is_content).collect()
    }
}

/// Free-function form of [`Sentence::validate`].
pub fn validate_sentence(s: &Sentence) -> Vec<Violation> {
    s.validate()
}

/// Free-function form of [`Sentence::content_mask`].
pub fn content_mask(s: &Sentence) -> Vec<bool> {
    s.content_mask()
}

/// A validated treebank for one language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Treebank {
    language: String,
    sentences: Vec<Sentence>,
    token_count: usize,
    content_token_count: usize,
}

impl Treebank {
    /// Builds a treebank, rejecting the first sentence that violates a tree
    /// invariant.
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Result<Self, ConlluError> {
        for (i, s) in sentences.iter().enumerate() {
            if let Some(v) = s.validate().into_iter().next() {
                return Err(ConlluError::Invalid {
                    sentence: i + 1,
                    line: 0,
                    violation: v,
                });
            }
        }
        Ok(Self::from_valid(language.into(), sentences))
    }

    fn from_valid(language: String, sentences: Vec<Sentence>) -> Self {
        let token_count = sentences.iter().map(Sentence::len).sum();
        let content_token_count = sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .filter(|t| t.is_content())
            .count();
        Treebank {
            language,
            sentences,
            token_count,
            content_token_count,
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn into_sentences(self) -> Vec<Sentence> {
        self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn content_token_count(&self) -> usize {
        self.content_token_count
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Drops sentences longer than `max_len` tokens, preserving order.
    pub fn filter_by_length(&self, max_len: usize) -> Treebank {
        let kept = self
            .sentences
            .iter()
            .filter(|s| s.len() <= max_len)
            .cloned()
            .collect();
        Self::from_valid(self.language.clone(), kept)
    }

    /// Keeps the first `count` sentences.
    pub fn truncate(&self, count: usize) -> Treebank {
        let kept = self.sentences.iter().take(count).cloned().collect();
        Self::from_valid(self.language.clone(), kept)
    }
}

/// Free-function form of [`Treebank::filter_by_length`].
pub fn filter_by_length(tb: &Treebank, max_len: usize) -> Treebank {
    tb.filter_by_length(max_len)
}

struct PendingSentence {
    tokens: Vec<Token>,
    lines: Vec<usize>,
    sent_id: Option<String>,
}

impl PendingSentence {
    fn new() -> Self {
        PendingSentence {
            tokens: Vec::new(),
            lines: Vec::new(),
            sent_id: None,
        }
    }

    fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.sent_id.is_none()
    }

    fn finish(self, ordinal: usize, first_line: usize) -> Result<Sentence, ConlluError> {
        if self.tokens.is_empty() {
            return Err(ConlluError::Parse {
                sentence: ordinal,
                line: first_line,
                message: "sentence without tokens".into(),
            });
        }
        let sentence = Sentence {
            tokens: self.tokens,
            sent_id: self.sent_id,
        };
        if let Some(v) = sentence.validate().into_iter().next() {
            let line = v
                .token_id()
                .and_then(|id| self.lines.get(id.saturating_sub(1)))
                .copied()
                .unwrap_or(first_line);
            return Err(ConlluError::Invalid {
                sentence: ordinal,
                line,
                violation: v,
            });
        }
        Ok(sentence)
    }
}

/// Parses a CoNLL-U document into a validated treebank.
pub fn read_treebank(text: &str, language: &str) -> Result<Treebank, ConlluError> {
    let mut sentences = Vec::new();
    let mut pending = PendingSentence::new();
    let mut first_line = 1;

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !pending.is_empty() {
                let p = std::mem::replace(&mut pending, PendingSentence::new());
                sentences.push(p.finish(sentences.len() + 1, first_line)?);
            }
            first_line = line_no + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                if let Some(value) = id.trim_start().strip_prefix('=') {
                    pending.sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let ordinal = sentences.len() + 1;
        let parse_err = |message: String| ConlluError::Parse {
            sentence: ordinal,
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_err(format!("expected 10 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("invalid token id {:?}", cols[0])))?;
        if id == 0 {
            return Err(parse_err("token id 0".into()));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(format!("non-integer head {:?}", cols[6])))?;
        let deprel = cols[7].split(':').next().unwrap_or_default();
        pending.tokens.push(Token::new(id, cols[1], cols[3], head, deprel));
        pending.lines.push(line_no);
    }
    if !pending.is_empty() {
        sentences.push(pending.finish(sentences.len() + 1, first_line)?);
    }
    Ok(Treebank::from_valid(language.to_string(), sentences))
}

/// Reads and parses a CoNLL-U file.
pub fn read_treebank_file(path: impl AsRef<Path>, language: &str) -> Result<Treebank, ConlluError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConlluError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_treebank(&text, language)
}

/// Serializes sentences as CoNLL-U; unmodeled columns are written as `_`.
pub fn write_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for s in sentences {
        if let Some(id) = &s.sent_id {
            out.push_str("# sent_id = ");
            out.push_str(id);
            out.push('\n');
        }
        for t in &s.tokens {
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                t.id, t.form, t.upos, t.head, t.deprel
            ));
        }
        out.push('\n');
    }
    out
}

pub fn write_treebank(tb: &Treebank) -> String {
    write_sentences(tb.sentences())
}
