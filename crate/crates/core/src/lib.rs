//! Treebank handling and the language-distance side of cross-lingual
//! dependency parsing: CoNLL-U I/O, word-order typology, attachment
//! scoring and transfer analysis.

pub mod analysis;
pub mod conllu;
pub mod evaluation;
pub mod tree;
pub mod tsv;
pub mod typology;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use conllu::{read_treebank, write_treebank, Sentence, Token, Treebank};
pub use evaluation::{attachment_scores, EvalReport};
pub use tree::ParseTree;
