use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

const CHECKPOINT_MAGIC: &[u8; 8] = b"DLCKPT\0\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named dense array together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Adam moment buffers, aligned index-for-index with the store's parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct MomentState {
    pub(crate) step: u64,
    pub(crate) first: Vec<Vec<f64>>,
    pub(crate) second: Vec<Vec<f64>>,
}

/// Ordered collection of named parameters.
///
/// Parameters are created in a fixed order and each draws its initial
/// values from the store's seeded generator, so two stores built with the
/// same seed and the same sequence of `add` calls are identical.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
    pub(crate) moments: MomentState,
}

impl PartialEq for ParameterStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.seed == other.seed
    }
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: Vec::new(),
            index: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            moments: MomentState::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adds a parameter initialized uniformly in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let count: usize = shape.iter().product();
        let values = (0..count)
            .map(|_| self.rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        self.insert(name, shape, values)
    }

    /// Adds a zero-initialized parameter.
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let count: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; count])
    }

    fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        let grad = vec![0.0; values.len()];
        self.moments.first.push(vec![0.0; values.len()]);
        self.moments.second.push(vec![0.0; values.len()]);
        self.params.push(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            grad,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Sets every value (not the gradients) to `v`.
    pub fn fill(&mut self, v: f64) {
        for p in &mut self.params {
            p.values.iter_mut().for_each(|x| *x = v);
        }
    }

    /// Copies of every parameter's values, in store order.
    pub fn snapshot_values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.values.clone()).collect()
    }

    pub fn restore_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot holds {} parameters, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.values.len() != v.len() {
                return Err(Error::Checkpoint(format!(
                    "snapshot size mismatch for `{}`",
                    p.name
                )));
            }
            p.values.copy_from_slice(v);
        }
        Ok(())
    }

    /// Writes the checkpoint container: magic, version, metadata, then each
    /// parameter's name, shape and raw little-endian f64 values.
    pub fn write_checkpoint<W: Write>(
        &self,
        mut out: W,
        metadata: &BTreeMap<String, String>,
    ) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&(metadata.len() as u32).to_le_bytes())?;
        for (k, v) in metadata {
            write_str(&mut out, k)?;
            write_str(&mut out, v)?;
        }
        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(&mut out, &p.name)?;
            out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for d in &p.shape {
                out.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in &p.values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`ParameterStore::write_checkpoint`].
    /// The returned store has zero gradients and fresh moment buffers.
    pub fn read_checkpoint<R: Read>(
        mut input: R,
    ) -> Result<(ParameterStore, BTreeMap<String, String>)> {
        let mut magic = [0u8; 8];
        read_exact(&mut input, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let seed = read_u64(&mut input)?;
        let mut metadata = BTreeMap::new();
        for _ in 0..read_u32(&mut input)? {
            let k = read_str(&mut input)?;
            let v = read_str(&mut input)?;
            metadata.insert(k, v);
        }
        let mut store = ParameterStore::new(seed);
        for _ in 0..read_u32(&mut input)? {
            let name = read_str(&mut input)?;
            let ndim = read_u32(&mut input)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let mut buf = [0u8; 8];
                read_exact(&mut input, &mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            store.insert(&name, &shape, values)?;
        }
        Ok((store, metadata))
    }
}

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(input, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str<R: Read>(input: &mut R) -> Result<String> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(input, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new(1);
        store.add("w", &[2, 2]).unwrap();
        assert!(matches!(store.add("w", &[1]), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_values() {
        let build = || {
            let mut s = ParameterStore::new(7);
            s.add("a", &[3, 4]).unwrap();
            s.add("b", &[5]).unwrap();
            s
        };
        assert_eq!(build(), build());
        let a = build();
        assert!(a.iter().flat_map(|p| &p.values).all(|v| v.abs() <= INIT_SCALE));
    }

    #[test]
    fn bad_magic_is_reported() {
        let err = ParameterStore::read_checkpoint(&b"NOTACKPTxxxx"[..]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            seed in any::<u64>(),
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..3), 1..5),
            weird in proptest::collection::vec(any::<f64>(), 1..4),
        ) {
            let mut store = ParameterStore::new(seed);
            for (i, shape) in shapes.iter().enumerate() {
                store.add(&format!("p{i}"), shape).unwrap();
            }
            // arbitrary bit patterns, including NaN payloads and subnormals
            let first = &mut store.iter_mut().next().unwrap().values;
            for (slot, w) in first.iter_mut().zip(&weird) {
                *slot = *w;
            }
            let mut meta = BTreeMap::new();
            meta.insert("model_kind".to_string(), "attention-seq2seq".to_string());
            let mut buf = Vec::new();
            store.write_checkpoint(&mut buf, &meta).unwrap();
            let (back, meta_back) = ParameterStore::read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(meta_back, meta);
            prop_assert_eq!(back.seed(), store.seed());
            for (a, b) in store.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
