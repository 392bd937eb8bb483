//! Frozen, pre-aligned word vectors.

use std::collections::HashMap;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tensor};
use crate::NnError;

/// Word vectors in the text format `"<vocab_size> <dim>"` followed by one
/// `"word v1 … v_dim"` line per entry. Never updated by training.
#[derive(Clone, Debug)]
pub struct WordEmbeddings<T> {
    vocab: HashMap<String, usize>,
    table: Tensor<T>,
}

impl<T: Real> WordEmbeddings<T> {
    pub fn new(words: Vec<String>, table: Tensor<T>) -> Result<Self, NnError> {
        if words.len() != table.rows {
            return Err(NnError::Config(format!(
                "{} words for {} vectors",
                words.len(),
                table.rows
            )));
        }
        let vocab = words.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(WordEmbeddings { vocab, table })
    }

    /// An empty table of the given width; every lookup is out of vocabulary.
    pub fn empty(dim: usize) -> Self {
        WordEmbeddings {
            vocab: HashMap::new(),
            table: Tensor::zeros(0, dim),
        }
    }

    /// Uniform random vectors in `[-1, 1)` for the given words.
    pub fn random(words: &[&str], dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..words.len() * dim).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
        let table = Tensor::from_vec(words.len(), dim, data);
        Self::new(words.iter().map(|w| w.to_string()).collect(), table).expect("matching sizes")
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, NnError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or(NnError::Embedding { line: 1, message: "empty file".into() })??;
        let mut parts = header.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|v| v.parse::<usize>().ok());
        let (count, dim) = match (parse(parts.next()), parse(parts.next())) {
            (Some(c), Some(d)) if d > 0 => (c, d),
            _ => {
                return Err(NnError::Embedding {
                    line: 1,
                    message: format!("expected \"<vocab_size> <dim>\", found {header:?}"),
                })
            }
        };
        let mut words = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default().to_string();
            let before = data.len();
            for f in fields {
                let v: f64 = f.parse().map_err(|_| NnError::Embedding {
                    line: line_no,
                    message: format!("not a number: {f:?}"),
                })?;
                data.push(T::of(v));
            }
            if data.len() - before != dim {
                return Err(NnError::Embedding {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", data.len() - before),
                });
            }
            words.push(word);
        }
        if words.len() != count {
            return Err(NnError::Embedding {
                line: 1,
                message: format!("header announces {count} words, file has {}", words.len()),
            });
        }
        let table = Tensor::from_vec(count, dim, data);
        Self::new(words, table)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self, NnError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn dim(&self) -> usize {
        self.table.cols
    }

    pub fn len(&self) -> usize {
        self.table.rows
    }

    pub fn is_empty(&self) -> bool {
        self.table.rows == 0
    }

    pub fn table(&self) -> &Tensor<T> {
        &self.table
    }

    /// Row of `form`, falling back to its lowercase form.
    pub fn index_of(&self, form: &str) -> Option<usize> {
        self.vocab
            .get(form)
            .or_else(|| self.vocab.get(&form.to_lowercase()))
            .copied()
    }

    pub fn vector(&self, form: &str) -> Option<&[T]> {
        self.index_of(form).map(|i| self.table.row(i))
    }

    pub fn cast<U: Real>(&self) -> WordEmbeddings<U> {
        WordEmbeddings {
            vocab: self.vocab.clone(),
            table: self.table.cast(),
        }
    }
}
