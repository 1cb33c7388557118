//! SineKAN layer: edge `(o, i)` is `Σ_j A_{o,ij} sin(f_j x + φ_ij)`, with
//! frequencies shared by all edges and phases shared across outputs.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::edge::EdgeLayer;
use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use crate::basis::activation::sine_basis;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineKanConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Number of sine terms per edge.
    pub grid: usize,
}

impl SineKanConfig {
    pub fn param_count(&self) -> usize {
        let (i, o, g) = (self.in_dim, self.out_dim, self.grid);
        o * i * g + g + i * g + o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineKanLayer {
    pub config: SineKanConfig,
    /// `1 × g`.
    pub freqs: ParamId,
    /// `in × g`.
    pub phases: ParamId,
    /// `out × (in·g)`.
    pub amplitudes: ParamId,
    pub bias: ParamId,
    pub edge_mask: Vec<bool>,
}

impl SineKanLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: SineKanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (inp, out, g) = (config.in_dim, config.out_dim, config.grid);
        if inp == 0 || out == 0 || g == 0 {
            return Err(Error::invalid("sinekan", "dimensions and grid must be positive"));
        }
        let freqs = Tensor::new(1, g, (1..=g).map(|j| j as f64).collect())?;
        let pi = std::f64::consts::PI;
        let phases = (0..inp * g)
            .map(|e| pi * ((e / g) as f64 / inp as f64 + (e % g) as f64 / g as f64) / 2.0)
            .collect();
        let sd = 1.0 / ((inp * g) as f64).sqrt();
        let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid("sinekan", e.to_string()))?;
        let amps = (0..out * inp * g).map(|_| normal.sample(rng)).collect();
        Ok(SineKanLayer {
            freqs: store.add(format!("{name}.freqs"), freqs, ParamRole::SineFrequencies, true),
            phases: store.add(format!("{name}.phases"), Tensor::new(inp, g, phases)?, ParamRole::SinePhases, true),
            amplitudes: store.add(format!("{name}.amplitudes"), Tensor::new(out, inp * g, amps)?, ParamRole::Weights, true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, out), ParamRole::Bias, true),
            edge_mask: vec![true; out * inp],
            config,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.config.in_dim {
            return Err(Error::Shape { op: "sinekan", lhs: x.shape(), rhs: (x.rows(), self.config.in_dim) });
        }
        let f = ctx.param(self.freqs);
        let p = ctx.param(self.phases);
        let a = ctx.param(self.amplitudes);
        let b = ctx.param(self.bias);
        let s = sine_basis(&mut ctx.tape, x, &f, &p)?;
        let y = ctx.tape.matmul_nt(&s, &a)?;
        ctx.tape.add_row(&y, &b)
    }
}

impl EdgeLayer for SineKanLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params_per_edge(&self) -> usize {
        self.config.grid
    }

    fn edge_value(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> Result<f64> {
        let g = self.config.grid;
        let f = store.value(self.freqs).data();
        let p = store.value(self.phases).row_slice(i);
        let a = &store.value(self.amplitudes).row_slice(o)[i * g..(i + 1) * g];
        Ok((0..g).map(|j| a[j] * (f[j] * x + p[j]).sin()).sum())
    }

    fn edge_active(&self, o: usize, i: usize) -> bool {
        self.edge_mask[o * self.config.in_dim + i]
    }

    fn remove_edge(&mut self, store: &mut ParamStore, o: usize, i: usize) {
        let (inp, g) = (self.config.in_dim, self.config.grid);
        self.edge_mask[o * inp + i] = false;
        store.value_mut(self.amplitudes).data_mut()[o * inp * g + i * g..o * inp * g + (i + 1) * g].fill(0.0);
    }

    fn has_bias(&self) -> bool {
        true
    }

    fn shared_params(&self) -> usize {
        self.config.grid * (1 + self.config.in_dim)
    }
}
