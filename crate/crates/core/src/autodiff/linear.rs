use super::{Graph, NodeId, ParamId, ParamStore, Scalar};
use crate::rng::RngStream;
use crate::Result;

/// Fully connected map `y = x Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Registers `{prefix}.weight` and `{prefix}.bias`, both uniform in
    /// `±1/sqrt(input)`.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = store.add_uniform(&format!("{prefix}.weight"), [output, input], input, rng)?;
        let bias = store.add_uniform(&format!("{prefix}.bias"), [output], input, rng)?;
        Ok(Self {
            weight,
            bias: Some(bias),
            input,
            output,
        })
    }

    /// Same as [`Linear::register`] but with a zero-initialized bias.
    pub fn register_zero_bias<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = store.add_uniform(&format!("{prefix}.weight"), [output, input], input, rng)?;
        let bias = store.add_zeros(&format!("{prefix}.bias"), [output])?;
        Ok(Self {
            weight,
            bias: Some(bias),
            input,
            output,
        })
    }

    /// `x [n, input] -> [n, output]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let y = g.matmul_t(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.broadcast_add(y, b)
            }
            None => Ok(y),
        }
    }
}
