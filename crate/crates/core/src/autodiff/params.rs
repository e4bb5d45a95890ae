use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered set of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// He-normal tensor with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Copies every parameter whose name starts with `prefix` from `src`.
    /// Missing names or shape differences are collected into one error.
    pub fn load_prefix(&mut self, src: &[(String, Tensor<T>)], prefix: &str) -> Result<usize> {
        let lookup: HashMap<&str, &Tensor<T>> = src.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut bad = Vec::new();
        let mut updates = Vec::new();
        for (i, name) in self.names.iter().enumerate() {
            if !name.starts_with(prefix) {
                continue;
            }
            match lookup.get(name.as_str()) {
                Some(t) if t.shape() == self.values[i].shape() => updates.push((i, (*t).clone())),
                Some(t) => bad.push(format!(
                    "{name} (shape {:?} vs {:?})",
                    t.shape(),
                    self.values[i].shape()
                )),
                None => bad.push(format!("{name} (missing)")),
            }
        }
        if !bad.is_empty() {
            return Err(Error::CheckpointMismatch { names: bad });
        }
        if updates.is_empty() {
            return Err(Error::CheckpointMismatch {
                names: vec![format!("no parameters with prefix '{prefix}'")],
            });
        }
        let n = updates.len();
        for (i, t) in updates {
            self.values[i] = t;
        }
        Ok(n)
    }

    /// Ordered (name, tensor) pairs, the checkpoint payload.
    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}
