use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Gradients, Tensor};
use crate::error::{Error, Result};

/// Handle to one trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors together with their gradient buffers.
///
/// Values are reference counted so a graph can hold them as leaves without
/// copying; an optimizer update copies on write only if a graph is still
/// alive. Every fetch into a graph bumps a read counter, which lets callers
/// verify that a code path never touched a given parameter.
#[derive(Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    grads: Vec<Tensor>,
    reads: Vec<AtomicU64>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            reads: self
                .reads
                .iter()
                .map(|r| AtomicU64::new(r.load(Ordering::Relaxed)))
                .collect(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.values.len());
        self.names.push(name.into());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(Arc::new(value));
        self.reads.push(AtomicU64::new(0));
        id
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor> {
        self.reads[id.0].fetch_add(1, Ordering::Relaxed);
        Arc::clone(&self.values[id.0])
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a value, keeping the declared shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Dimension {
                op: "ParamStore::set_value",
                left: self.values[id.0].shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    /// How many times the parameter has been fetched into a graph.
    pub fn reads(&self, id: ParamId) -> u64 {
        self.reads[id.0].load(Ordering::Relaxed)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds the parameter gradients of one backward pass into the buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            for (acc, v) in self.grads[id.0].data_mut().iter_mut().zip(g.data()) {
                *acc += v;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `p <- p - lr * grad` for every parameter.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        for (value, grad) in self.values.iter_mut().zip(&self.grads) {
            let value = Arc::make_mut(value);
            for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *p -= learning_rate * g;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}
