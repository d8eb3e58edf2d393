use indexmap::IndexMap;

use super::ModelError;
use crate::numcore::{Tape, Tensor, Var};

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), ModelError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(ModelError::DuplicateParam(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Replaces an existing tensor of the same shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), ModelError> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if slot.shape() != t.shape() {
            return Err(crate::numcore::NumError::shape("set", slot.shape(), t.shape()).into());
        }
        *slot = t;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on the tape; `trainable` selects leaves that
    /// receive gradients over constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// FNV-1a over names, shapes and the little-endian bytes of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            feed(name.as_bytes());
            for &d in t.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                feed(&v.to_le_bytes());
            }
        }
        h
    }

    /// Copies the tensors whose names start with `prefix`, with the prefix
    /// stripped.
    pub fn with_prefix_stripped(&self, prefix: &str) -> ParameterStore {
        let tensors = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParameterStore { tensors }
    }

    /// Gradients of the bound parameters, shaped like the parameters; zero
    /// where the tape holds no gradient.
    pub fn gradients(&self, tape: &Tape, bound: &BoundParams) -> Result<ParameterStore, ModelError> {
        let mut out = ParameterStore::new();
        for (name, t) in &self.tensors {
            let v = bound.get(name)?;
            let g = match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.len()],
            };
            out.insert(name.clone(), Tensor::new(t.shape().to_vec(), g)?)?;
        }
        Ok(out)
    }
}

/// Tape handles for a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Substitutes a different tape node for one parameter.
    pub fn replace(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }
}
