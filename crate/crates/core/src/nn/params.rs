use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Graph, Real, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialisation rule for a new parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// A learnable tensor with its Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T: Real = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
    step: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let len = tensor.numel();
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let data = (0..shape.numel())
                    .map(|_| T::from_f64(normal.sample(rng)))
                    .collect();
                Tensor::new(shape, data)?
            }
        };
        self.add(name, tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Adam step counter (number of updates applied so far).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Records every parameter as a differentiable leaf on `g`, in store order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.entries.iter().map(|e| g.leaf(e.tensor.clone())).collect()
    }

    /// Records every parameter as a constant; used for inference.
    pub fn bind_constants(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.entries.iter().map(|e| g.input(e.tensor.clone())).collect()
    }

    /// Adds the gradients of the bound leaves into each entry's grad buffer.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.entries.len() {
            return Err(Error::invalid(
                "accumulate_grads",
                format!("{} bound vars for {} parameters", bound.len(), self.entries.len()),
            ));
        }
        for (entry, &var) in self.entries.iter_mut().zip(bound) {
            if let Some(g) = grads.get(var) {
                entry.tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            if let Some(g) = e.tensor.grad_mut() {
                g.fill(T::zero());
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            let _ = e.tensor.set_grad(None);
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    m: e.m.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    v: e.v.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

impl ParamId {
    /// The tape variable this parameter was bound to by [`ParameterStore::bind`].
    pub fn var(self, bound: &[Var]) -> Var {
        bound[self.0]
    }
}
