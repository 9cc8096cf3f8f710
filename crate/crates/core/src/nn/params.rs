use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, each paired with a gradient slot of the same shape.
///
/// Insertion order is preserved so that iteration, optimizer state and
/// checkpoints are deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
    index: HashMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        if !value.is_finite() {
            return Err(NnError::NonFinite(name.to_string()));
        }
        let id = self.values.len();
        self.grads.push(Tensor2::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from `uniform(-1/sqrt(fan), 1/sqrt(fan))` where
    /// `fan` is the row count for weights and the column count for
    /// embedding-like tables (pass `fan` explicitly).
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, fan: usize) -> Result<ParamId, NnError> {
        self.insert_bounded(name, rows, cols, 1.0 / (fan.max(1) as f64).sqrt())
    }

    /// Entries drawn from `U(-bound, bound)`.
    pub fn insert_bounded(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<ParamId, NnError> {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor2::from_vec(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NnError> {
        self.insert(name, Tensor2::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor2::sq_norm).sum::<f64>().sqrt()
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &ParamStore, tau: f64) -> Result<(), NnError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(NnError::InvalidArgument(format!("soft update rate {} outside (0, 1]", tau)));
        }
        self.check_mirrors(online)?;
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            if tau == 1.0 {
                t.data_mut().copy_from_slice(o.data());
            } else {
                for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                    *tv = tau * ov + (1.0 - tau) * *tv;
                }
            }
        }
        Ok(())
    }

    pub fn check_mirrors(&self, other: &ParamStore) -> Result<(), NnError> {
        if self.names != other.names {
            return Err(NnError::Shape("parameter stores have different layouts".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.shape() != b.shape() {
                return Err(NnError::Shape(format!("parameter {} differs in shape", self.names[i])));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_grads_mirror_values() {
        let mut store = ParamStore::new(3);
        let w = store.insert_uniform("w", 3, 4, 3).unwrap();
        assert!(matches!(store.insert_zeros("w", 1, 1), Err(NnError::DuplicateParam(_))));
        assert_eq!(store.grad(w).shape(), store.value(w).shape());
        let bound = 1.0 / 3f64.sqrt();
        assert!(store.value(w).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(9);
        let mut b = ParamStore::new(9);
        let ia = a.insert_uniform("x", 5, 5, 5).unwrap();
        let ib = b.insert_uniform("x", 5, 5, 5).unwrap();
        assert_eq!(a.value(ia), b.value(ib));
    }

    #[test]
    fn soft_update_rejects_bad_tau() {
        let mut a = ParamStore::new(1);
        a.insert_zeros("x", 1, 1).unwrap();
        let b = a.clone();
        assert!(a.soft_update_from(&b, 0.0).is_err());
        assert!(a.soft_update_from(&b, 1.5).is_err());
        assert!(a.soft_update_from(&b, 1.0).is_ok());
    }
}
