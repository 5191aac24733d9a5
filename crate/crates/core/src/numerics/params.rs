use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NumericsError, Tensor};

/// Handle to one named array inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub frozen: bool,
}

/// Named dense arrays with gradient buffers and a frozen flag per array.
///
/// Insertion order is the canonical order for serialization and
/// optimizer state, so two stores built by the same code line up.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: vec![0.0; value.numel()],
            value,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from N(0, std²).
    pub fn add_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let normal = Normal::new(0.0, std).map_err(|_| NumericsError::Shape("bad std".into()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::filled(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    /// Replaces the value of `name`, checking the shape against the existing array.
    pub fn load(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<(), NumericsError> {
        let id = self
            .id(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != shape {
            return Err(NumericsError::Shape(alloc::format!(
                "parameter {} expects shape {:?}, got {:?}",
                name,
                p.value.shape(),
                shape
            )));
        }
        p.value = Tensor::new(shape.to_vec(), data)?;
        Ok(())
    }

    /// Copies every parameter of `other` whose name and shape match.
    /// Returns the names that were copied.
    pub fn copy_matching(&mut self, other: &ParameterStore) -> Vec<String> {
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(src) = other.id(&p.name).map(|id| other.get(id)) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }

    /// Order-sensitive digest of all values, used for byte-identity checks.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Digest restricted to parameters whose name starts with `prefix`.
    pub fn fingerprint_prefix(&self, prefix: &str) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
