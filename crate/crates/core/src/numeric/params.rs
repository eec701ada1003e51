use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{invalid, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable parameters with their gradient and ADAM moment slots.
///
/// Parameters keep insertion order, which is also the order used for every
/// reduction over the store (global norm, serialization).
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    pub(crate) first_moment: Vec<Tensor<F>>,
    pub(crate) second_moment: Vec<Tensor<F>>,
    pub(crate) step: u64,
    pub(crate) grads_ready: bool,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            lookup: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
            grads_ready: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return invalid(format!("duplicate parameter name `{name}`"));
        }
        if !value.is_finite() {
            return invalid(format!("parameter `{name}` has non-finite values"));
        }
        let idx = self.values.len();
        let zeros = Tensor::zeros(value.shape());
        self.lookup.insert(name.clone(), idx);
        self.names.push(name);
        self.grads.push(zeros.clone());
        self.first_moment.push(zeros.clone());
        self.second_moment.push(zeros);
        self.values.push(value);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    /// Value, gradient and both moment slots of one parameter.
    pub(crate) fn slots_mut(
        &mut self,
        id: ParamId,
    ) -> (&mut Tensor<F>, &Tensor<F>, &mut Tensor<F>, &mut Tensor<F>) {
        let i = id.0;
        (
            &mut self.values[i],
            &self.grads[i],
            &mut self.first_moment[i],
            &mut self.second_moment[i],
        )
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Marks externally written gradients as usable by the optimizer.
    pub fn set_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(F::zero());
        }
        self.grads_ready = false;
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.ids()
            .filter(|&id| self.name(id).starts_with(prefix))
            .map(|id| self.value(id).len())
            .sum()
    }

    /// Whether any parameter under `prefix` holds a nonzero gradient.
    pub fn has_nonzero_grad(&self, prefix: &str) -> bool {
        self.ids()
            .filter(|&id| self.name(id).starts_with(prefix))
            .any(|id| self.grad(id).data().iter().any(|v| *v != F::zero()))
    }

    /// Copies values of every parameter under `prefix` from `other` by name.
    /// Returns how many parameters were copied.
    pub fn load_prefix(&mut self, other: &ParamStore<F>, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for id in other.ids() {
            let name = other.name(id);
            if !name.starts_with(prefix) {
                continue;
            }
            let Some(dst) = self.id(name) else {
                return invalid(format!("parameter `{name}` missing from destination"));
            };
            if !self.value(dst).same_shape(other.value(id)) {
                return invalid(format!(
                    "parameter `{name}` has shape {:?}, source has {:?}",
                    self.value(dst).shape(),
                    other.value(id).shape()
                ));
            }
            self.values[dst.0] = other.value(id).clone();
            copied += 1;
        }
        Ok(copied)
    }

    /// Same parameters in another precision, with fresh optimizer state.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for id in self.ids() {
            out.add(self.name(id), self.value(id).cast())
                .expect("names are unique");
        }
        out
    }
}
