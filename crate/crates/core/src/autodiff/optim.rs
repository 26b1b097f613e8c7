//! Parameter updates.

use super::{lit, ParamStore, Scalar};

/// Which update rule the training loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// `p <- p - lr * grad` for every trainable parameter.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, lr: f64) {
    let lr: T = lit(lr);
    for p in store.iter_mut().filter(|p| p.requires_grad) {
        for (v, g) in p.value.iter_mut().zip(&p.grad) {
            *v = *v - lr * *g;
        }
    }
}

pub fn zero_grads<T: Scalar>(store: &mut ParamStore<T>) {
    for p in store.iter_mut() {
        p.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let total: f64 = store
        .iter()
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(0.0);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s: T = lit(max_norm / total);
        for p in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = *g * s);
        }
    }
    total
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let (b1, b2): (T, T) = (lit(self.beta1), lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step: T = lit(lr * c2.sqrt() / c1);
        let eps: T = lit(self.eps * c2.sqrt());
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                p.value[i] = p.value[i] - step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Optimizer state owned by a training run.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd,
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(store)),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        match self {
            Optimizer::Sgd => sgd_step(store, lr),
            Optimizer::Adam(a) => a.step(store, lr),
        }
    }
}
