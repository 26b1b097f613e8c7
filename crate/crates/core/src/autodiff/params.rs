use std::collections::HashMap;

use super::{lit, Gradients, Scalar, Shape};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub requires_grad: bool,
    /// Row (of a 2-D parameter) held at zero: its gradient is discarded on
    /// every accumulation. Used for the padding embedding.
    pub pinned_zero_row: Option<usize>,
}

/// Registry of named parameters. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: impl Into<Shape>, value: Vec<T>) -> Result<ParamId> {
        let shape = shape.into();
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        if shape.numel() != value.len() {
            return Err(Error::ShapeMismatch {
                op: "param",
                left: shape.0.clone(),
                right: vec![value.len()],
            });
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_owned(),
            grad: vec![T::zero(); value.len()],
            shape,
            value,
            requires_grad: true,
            pinned_zero_row: None,
        });
        self.by_name.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Adds a parameter drawn from `uniform(-k, k)` with `k = 1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: impl Into<Shape>,
        fan_in: usize,
        rng: &mut RngStream,
    ) -> Result<ParamId> {
        let shape = shape.into();
        let value = init_uniform(shape.numel(), fan_in, rng);
        self.add(name, shape, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: impl Into<Shape>) -> Result<ParamId> {
        let shape = shape.into();
        let n = shape.numel();
        self.add(name, shape, vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Adds the gradients of one backward pass into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            if !p.requires_grad {
                continue;
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc = *acc + *v;
            }
            if let Some(row) = p.pinned_zero_row {
                let cols = p.shape.as_matrix().map(|(_, c)| c).unwrap_or(0);
                for v in &mut p.grad[row * cols..(row + 1) * cols] {
                    *v = T::zero();
                }
            }
        }
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// `n` draws from `uniform(-k, k)`, `k = 1/sqrt(fan_in)`.
pub fn init_uniform<T: Scalar>(n: usize, fan_in: usize, rng: &mut RngStream) -> Vec<T> {
    let k = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| lit(rng.uniform_range(-k, k))).collect()
}
