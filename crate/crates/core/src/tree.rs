use serde::{Deserialize, Serialize};

use crate::conllu::{validate_heads, Sentence, Token, Violation};

/// A predicted dependency tree: `heads[i]` and `labels[i]` belong to token
/// `i + 1`; head 0 is the artificial root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParseTree {
    pub fn new(heads: Vec<usize>, labels: Vec<String>) -> Self {
        debug_assert_eq!(heads.len(), labels.len());
        ParseTree { heads, labels }
    }

    pub fn from_sentence(s: &Sentence) -> Self {
        ParseTree {
            heads: s.heads(),
            labels: s.deprels(),
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_heads(&self.heads)
    }

    /// Copies `template` with heads and labels replaced by this tree.
    pub fn apply_to(&self, template: &Sentence) -> Sentence {
        let tokens = template
            .tokens
            .iter()
            .zip(self.heads.iter().zip(&self.labels))
            .map(|(t, (&head, label))| Token {
                head,
                deprel: label.clone(),
                ..t.clone()
            })
            .collect();
        Sentence {
            tokens,
            sent_id: template.sent_id.clone(),
        }
    }
}
