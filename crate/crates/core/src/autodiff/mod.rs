//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records operations on [`NodeId`]s during the forward pass.
//! Learnable tensors live in a [`ParamStore`] outside the graph; the graph
//! borrows their values without copying, and [`Graph::backward`] returns a
//! [`Gradients`] set that the store accumulates. Everything is generic over
//! [`Scalar`] so the same model code runs in `f32` for training and in `f64`
//! for tight finite-difference checks.

mod gradcheck;
mod graph;
mod linear;
mod optim;
mod params;
mod shape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, BCE_EPS};
pub use linear::Linear;
pub use optim::{clip_grad_norm, sgd_step, zero_grads, Adam, Optimizer, OptimizerKind};
pub use params::{init_uniform, Param, ParamId, ParamStore};
pub use shape::Shape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type of the kernel.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Little-endian encoding used by checkpoints.
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
}

/// Converts an `f64` literal into the scalar type.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite literal")
}

/// Forward-pass mode. Dropout is active only in [`Mode::Train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}
