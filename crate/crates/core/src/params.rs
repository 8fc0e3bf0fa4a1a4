//! Named, ordered trainable tensors with gradient slots.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Shape, Tensor};

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Whether weight decay applies to this entry.
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

/// Tape variables for every entry of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Binds entries to caller-created variables, one per entry in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value,
            grad: None,
            decay,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.by_name.get(name).map(|&i| &mut self.entries[i])
    }

    /// Total number of scalars across all entries.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Scalar count of entries whose name starts with `prefix.`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.strip_prefix(prefix).is_some_and(|r| r.starts_with('.')))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Records every entry as a tape variable.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.entries.iter().map(|e| tape.variable(e.value.clone())).collect())
    }

    /// Records every entry as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.entries.iter().map(|e| tape.constant(e.value.clone())).collect())
    }

    /// Copies gradients out of `tape` into the gradient slots. Entries the loss
    /// did not reach get a zero gradient.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (e, &v) in self.entries.iter_mut().zip(&bound.0) {
            e.grad = Some(tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(e.value.shape())));
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.as_ref().map(|g| g.cast()),
                    decay: e.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Deterministic initializer: fan-in scaled normal kernels, zero biases.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `std = √(2 / fan_in)`, for kernels that read ReLU-activated input.
    pub fn kaiming<T: Element>(&mut self, shape: Shape) -> Tensor<T> {
        self.scaled(shape, 2.0, 1)
    }

    /// `std = √(gain / (fan_in · fan_multiplier))`. `gain` is 2 after ReLU,
    /// `2 / (1 + a²)` after a leaky slope `a`, 1 on linear input;
    /// `fan_multiplier` counts kernels whose outputs are summed into one neuron.
    pub fn scaled<T: Element>(&mut self, shape: Shape, gain: f64, fan_multiplier: usize) -> Tensor<T> {
        let fan_in = (shape.c * shape.h * shape.w * fan_multiplier).max(1) as f64;
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(normal.sample(&mut self.rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("sized")
    }
}
