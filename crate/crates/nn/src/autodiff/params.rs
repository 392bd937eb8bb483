use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Precision, Real, Tensor};
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter was initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Normal { std: f64 },
    /// Values supplied by the caller.
    Given,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub init: Init,
}

/// Named trainable tensors plus the generator used to initialize them.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId, NnError> {
        let value = match init {
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| T::of(self.rng.gen_range(-bound..bound)))
                    .collect();
                Tensor::from_vec(rows, cols, data)
            }
            Init::Zeros | Init::Given => Tensor::zeros(rows, cols),
            Init::Ones => Tensor::from_vec(rows, cols, vec![T::one(); rows * cols]),
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| NnError::Config(e.to_string()))?;
                let data = (0..rows * cols)
                    .map(|_| T::of(dist.sample(&mut self.rng)))
                    .collect();
                Tensor::from_vec(rows, cols, data)
            }
        };
        self.insert(name, value, init)
    }

    /// Weight matrix with Glorot-uniform initialization.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId, NnError> {
        self.add(name, fan_in, fan_out, Init::Glorot { fan_in, fan_out })
    }

    pub fn bias(&mut self, name: &str, width: usize) -> Result<ParamId, NnError> {
        self.add(name, 1, width, Init::Zeros)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: Init) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            init,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Same names, shapes and values in another precision.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    init: p.init,
                })
                .collect(),
            index: self.index.clone(),
            rng: self.rng.clone(),
            seed: self.seed,
        }
    }

    /// Bitwise equality of all names, shapes and values.
    pub fn same_values(&self, other: &ParameterStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data
                        .iter()
                        .zip(&b.value.data)
                        .all(|(x, y)| x.to_f64().map(f64::to_bits) == y.to_f64().map(f64::to_bits))
            })
    }

    /// Copies values from `other` for every parameter with the same name
    /// and shape.
    pub fn load_values_from(&mut self, other: &ParameterStore<T>) -> Result<(), NnError> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value.data.clone_from(&src.value.data);
        }
        Ok(())
    }

    /// Writes the checkpoint format: magic, version, precision, count, then
    /// per entry a length-prefixed name, rank, dims and little-endian values.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(match T::PRECISION {
            Precision::Single => 4,
            Precision::Double => 8,
        });
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            buf.extend_from_slice(&2u32.to_le_bytes());
            buf.extend_from_slice(&(p.value.rows as u64).to_le_bytes());
            buf.extend_from_slice(&(p.value.cols as u64).to_le_bytes());
            for v in &p.value.data {
                v.write_le(&mut buf);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParameterStore::save`] in either
    /// precision, converting to `T`.
    pub fn load<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let width = cur.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(NnError::Checkpoint(format!("bad value width {width}")));
        }
        let count = cur.u32()? as usize;
        let mut store = ParameterStore::new(0);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let (rows, cols) = match dims.as_slice() {
                [c] => (1, *c),
                [r, c] => (*r, *c),
                _ => return Err(NnError::Checkpoint(format!("unsupported rank {rank} for {name}"))),
            };
            let raw = cur.take(rows * cols * width)?;
            let data = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        T::of(f32::read_le(c) as f64)
                    } else {
                        T::of(f64::read_le(c))
                    }
                })
                .collect();
            store.insert(&name, Tensor::from_vec(rows, cols, data), Init::Given)?;
        }
        Ok(store)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OFPC";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
