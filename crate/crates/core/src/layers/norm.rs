//! Layer and batch normalization with learnable affine parameters.

use serde::{Deserialize, Serialize};

use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalizes each row across its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            dim,
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, dim, 1.0), ParamRole::NormAffine, true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim), ParamRole::NormAffine, true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim {
            return Err(Error::Shape { op: "layer_norm", lhs: x.shape(), rhs: (x.rows(), self.dim) });
        }
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        normalize(&mut ctx.tape, "layer_norm", x, &g, &b, Axis::Row, None)
    }
}

/// Normalizes each feature across the batch; running statistics are used
/// in evaluation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub dim: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        BatchNorm {
            dim,
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, dim, 1.0), ParamRole::NormAffine, true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim), ParamRole::NormAffine, true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(1, dim), ParamRole::Buffer, false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(1, dim, 1.0), ParamRole::Buffer, false),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.shape();
        if d != self.dim {
            return Err(Error::Shape { op: "batch_norm", lhs: x.shape(), rhs: (n, self.dim) });
        }
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        if ctx.is_training() {
            if n < 2 {
                return Err(Error::invalid("batch_norm", "batch size 1 in training mode"));
            }
            let (mean, var) = column_stats(x);
            let store = ctx.store();
            let rm = store.value(self.running_mean).data();
            let rv = store.value(self.running_var).data();
            let unbias = n as f64 / (n - 1) as f64;
            let new_m = rm.iter().zip(&mean).map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m).collect();
            let new_v = rv.iter().zip(&var).map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbias).collect();
            ctx.push_update(self.running_mean, Tensor::new(1, d, new_m)?);
            ctx.push_update(self.running_var, Tensor::new(1, d, new_v)?);
            normalize(&mut ctx.tape, "batch_norm", x, &g, &b, Axis::Column, None)
        } else {
            let store = ctx.store();
            let stats = (
                store.value(self.running_mean).data().to_vec(),
                store.value(self.running_var).data().to_vec(),
            );
            normalize(&mut ctx.tape, "batch_norm", x, &g, &b, Axis::Column, Some(stats))
        }
    }
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(x.row_slice(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row_slice(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// Statistics over each row.
    Row,
    /// Statistics over each column.
    Column,
}

/// `γ (x - μ) / √(σ² + ε) + β` along `axis`. With `fixed` statistics the
/// mean and variance are constants (inference-mode batch norm).
fn normalize(
    tape: &mut Tape,
    op: &'static str,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    axis: Axis,
    fixed: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<Tensor> {
    let (n, d) = x.shape();
    if gamma.shape() != (1, d) || beta.shape() != (1, d) {
        return Err(Error::Shape { op, lhs: x.shape(), rhs: gamma.shape() });
    }
    let xd = x.data();
    // index helpers: group g, member m -> flat index
    let (groups, members) = match axis {
        Axis::Row => (n, d),
        Axis::Column => (d, n),
    };
    let at = move |g: usize, m: usize| match axis {
        Axis::Row => g * d + m,
        Axis::Column => m * d + g,
    };
    let mut xhat = vec![0.0; n * d];
    let mut inv = vec![0.0; groups];
    for g in 0..groups {
        let (mu, var) = match &fixed {
            Some((m, v)) => (m[g], v[g]),
            None => {
                let mu = (0..members).map(|m| xd[at(g, m)]).sum::<f64>() / members as f64;
                let var = (0..members).map(|m| (xd[at(g, m)] - mu).powi(2)).sum::<f64>() / members as f64;
                (mu, var)
            }
        };
        inv[g] = 1.0 / (var + NORM_EPS).sqrt();
        for m in 0..members {
            xhat[at(g, m)] = (xd[at(g, m)] - mu) * inv[g];
        }
    }
    let (gd, bd) = (gamma.shared_data(), beta.data());
    let out = xhat
        .iter()
        .enumerate()
        .map(|(e, v)| gd[e % d] * v + bd[e % d])
        .collect();
    let batch_stats = fixed.is_none();
    tape.custom(
        op,
        &[x, gamma, beta],
        (n, d),
        out,
        Box::new(move |g, needs| {
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for (e, gv) in g.iter().enumerate() {
                gg[e % d] += gv * xhat[e];
                gb[e % d] += gv;
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; n * d];
                for grp in 0..groups {
                    if batch_stats {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for m in 0..members {
                            let e = at(grp, m);
                            let dx = g[e] * gd[e % d];
                            s1 += dx;
                            s2 += dx * xhat[e];
                        }
                        let k = members as f64;
                        for m in 0..members {
                            let e = at(grp, m);
                            let dx = g[e] * gd[e % d];
                            gx[e] = inv[grp] / k * (k * dx - s1 - xhat[e] * s2);
                        }
                    } else {
                        for m in 0..members {
                            let e = at(grp, m);
                            gx[e] = g[e] * gd[e % d] * inv[grp];
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then_some(gg), needs[2].then_some(gb)]
        }),
    )
}
