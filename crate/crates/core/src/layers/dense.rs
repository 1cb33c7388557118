use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine layer `x Wᵀ + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out × in`.
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("dense", "dimensions must be positive"));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Dense {
            in_dim,
            out_dim,
            weight: store.add(format!("{name}.weight"), Tensor::new(out_dim, in_dim, w)?, ParamRole::Weights, true),
            bias: store.add(format!("{name}.bias"), Tensor::new(1, out_dim, b)?, ParamRole::Bias, true),
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape { op: "dense", lhs: x.shape(), rhs: (x.rows(), self.in_dim) });
        }
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let y = ctx.tape.matmul_nt(x, &w)?;
        ctx.tape.add_row(&y, &b)
    }
}
