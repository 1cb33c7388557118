//! B-spline KAN layer with a SiLU base branch.
//!
//! Edge `(o, i)` computes `s_b w_b SiLU(x) + s_s Σ_j c_j B_j(x)` on a fixed
//! uniform grid extended by `k` cells on both sides. The scales `s_b`,
//! `s_s` are trainable in the PBT variant and frozen at `1/√in` in PBF.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::edge::EdgeLayer;
use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use crate::basis::activation::{silu, silu_value};
use crate::basis::bspline::{uniform_extended_grid, BSplineScratch};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Trainable scales.
    Pbt,
    /// Scales fixed at `1/√in`.
    Pbf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KanConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Number of grid intervals on `range`.
    pub grid: usize,
    pub order: usize,
    pub range: (f64, f64),
    pub scales: ScaleMode,
}

impl KanConfig {
    pub fn new(in_dim: usize, out_dim: usize, grid: usize, order: usize, scales: ScaleMode) -> Self {
        KanConfig { in_dim, out_dim, grid, order, range: (-1.0, 1.0), scales }
    }

    pub fn n_basis(&self) -> usize {
        self.grid + self.order
    }

    pub fn knots(&self) -> Vec<f64> {
        uniform_extended_grid(self.range.0, self.range.1, self.grid, self.order)
    }

    pub fn params_per_edge(&self) -> usize {
        self.n_basis() + 1 + if self.scales == ScaleMode::Pbt { 2 } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim * self.params_per_edge()
    }
}

/// Count under the reference KAN package's convention: per edge `G + k`
/// spline coefficients, the two scales, and the four affine parameters of
/// the symbolic branch.
pub fn reference_convention_count(widths: &[usize], grid: usize, order: usize) -> usize {
    widths
        .windows(2)
        .map(|w| w[0] * w[1] * (grid + order + 6))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub config: KanConfig,
    pub knots: Vec<f64>,
    /// `out × in`.
    pub base_weight: ParamId,
    /// `out × (in·n)`, column `i·n + j`.
    pub coeffs: ParamId,
    pub scale_base: ParamId,
    pub scale_spline: ParamId,
    pub edge_mask: Vec<bool>,
}

impl KanLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: KanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (inp, out, n) = (config.in_dim, config.out_dim, config.n_basis());
        if inp == 0 || out == 0 || config.grid == 0 {
            return Err(Error::invalid("kan", "dimensions and grid must be positive"));
        }
        let normal = Normal::new(0.0, 0.1).map_err(|e| Error::invalid("kan", e.to_string()))?;
        let coeffs = (0..out * inp * n).map(|_| normal.sample(rng)).collect();
        let base = (0..out * inp).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::from_values(
            store,
            name,
            config,
            Tensor::new(out, inp, base)?,
            Tensor::new(out, inp * n, coeffs)?,
        )
    }

    pub fn from_values(
        store: &mut ParamStore,
        name: &str,
        config: KanConfig,
        base_weight: Tensor,
        coeffs: Tensor,
    ) -> Result<Self> {
        let (inp, out, n) = (config.in_dim, config.out_dim, config.n_basis());
        if base_weight.shape() != (out, inp) || coeffs.shape() != (out, inp * n) {
            return Err(Error::Shape { op: "kan", lhs: coeffs.shape(), rhs: (out, inp * n) });
        }
        let trainable = config.scales == ScaleMode::Pbt;
        let s0 = 1.0 / (inp as f64).sqrt();
        let base_weight = store.add(format!("{name}.base"), base_weight, ParamRole::BaseWeights, true);
        let coeffs = store.add(format!("{name}.coeffs"), coeffs, ParamRole::SplineCoeffs, true);
        let scale_base = store.add(format!("{name}.scale_base"), Tensor::full(out, inp, s0), ParamRole::Scales, trainable);
        let scale_spline =
            store.add(format!("{name}.scale_spline"), Tensor::full(out, inp, s0), ParamRole::Scales, trainable);
        Ok(KanLayer {
            knots: config.knots(),
            config,
            base_weight,
            coeffs,
            scale_base,
            scale_spline,
            edge_mask: vec![true; out * inp],
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if x.cols() != cfg.in_dim {
            return Err(Error::Shape { op: "kan", lhs: x.shape(), rhs: (x.rows(), cfg.in_dim) });
        }
        let wb = ctx.param(self.base_weight);
        let sb = ctx.param(self.scale_base);
        let c = ctx.param(self.coeffs);
        let ss = ctx.param(self.scale_spline);
        let base_w = ctx.tape.mul(&wb, &sb)?;
        let spline_w = scale_blocks(&mut ctx.tape, &c, &ss)?;
        let act = silu(&mut ctx.tape, x)?;
        let yb = ctx.tape.matmul_nt(&act, &base_w)?;
        let phi = bspline_features(&mut ctx.tape, x, &self.knots, cfg.order)?;
        let ys = ctx.tape.matmul_nt(&phi, &spline_w)?;
        ctx.tape.add(&yb, &ys)
    }

    /// `(SiLU branch, spline branch)` of edge `(o, i)` at `x`.
    pub fn edge_components(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> (f64, f64) {
        let n = self.config.n_basis();
        let k = self.config.order;
        let wb = store.value(self.base_weight).get(o, i);
        let sb = store.value(self.scale_base).get(o, i);
        let ss = store.value(self.scale_spline).get(o, i);
        let c = &store.value(self.coeffs).row_slice(o)[i * n..(i + 1) * n];
        let mut scratch = BSplineScratch::new(k);
        let mut vals = vec![0.0; k + 1];
        let mut spline = 0.0;
        if let Some(first) = scratch.eval(&self.knots, x, &mut vals, None) {
            for (q, v) in vals.iter().enumerate() {
                let j = first + q as isize;
                if j >= 0 && (j as usize) < n {
                    spline += v * c[j as usize];
                }
            }
        }
        (sb * wb * silu_value(x), ss * spline)
    }
}

impl EdgeLayer for KanLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params_per_edge(&self) -> usize {
        self.config.params_per_edge()
    }

    fn edge_value(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> Result<f64> {
        let (b, s) = self.edge_components(store, o, i, x);
        Ok(b + s)
    }

    fn edge_parts(&self, store: &ParamStore, o: usize, i: usize, xs: &[f64]) -> Result<Vec<(&'static str, Vec<f64>)>> {
        let (b, s): (Vec<f64>, Vec<f64>) = xs.iter().map(|&x| self.edge_components(store, o, i, x)).unzip();
        Ok(vec![("silu", b), ("spline", s)])
    }

    fn edge_active(&self, o: usize, i: usize) -> bool {
        self.edge_mask[o * self.config.in_dim + i]
    }

    fn remove_edge(&mut self, store: &mut ParamStore, o: usize, i: usize) {
        let (inp, n) = (self.config.in_dim, self.config.n_basis());
        self.edge_mask[o * inp + i] = false;
        store.value_mut(self.base_weight).data_mut()[o * inp + i] = 0.0;
        store.value_mut(self.coeffs).data_mut()[o * inp * n + i * n..o * inp * n + (i + 1) * n].fill(0.0);
    }
}

/// `W[o, i·n + j] = s[o, i] · c[o, i·n + j]`.
pub fn scale_blocks(tape: &mut Tape, c: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (out, inp) = s.shape();
    if c.rows() != out || inp == 0 || c.cols() % inp != 0 {
        return Err(Error::Shape { op: "scale_blocks", lhs: c.shape(), rhs: s.shape() });
    }
    let n = c.cols() / inp;
    let (cd, sd) = (c.shared_data(), s.shared_data());
    let out_data = cd.iter().enumerate().map(|(e, v)| v * sd[e / n]).collect();
    tape.custom(
        "scale_blocks",
        &[c, s],
        c.shape(),
        out_data,
        Box::new(move |g, needs| {
            let gc = needs[0].then(|| g.iter().enumerate().map(|(e, gv)| gv * sd[e / n]).collect());
            let gs = needs[1].then(|| {
                let mut gs = vec![0.0; out * inp];
                for (e, gv) in g.iter().enumerate() {
                    gs[e / n] += gv * cd[e];
                }
                gs
            });
            vec![gc, gs]
        }),
    )
}

/// Dense B-spline feature matrix `batch × (in·n)`, differentiable in `x`.
/// Points outside the extended grid get all-zero features.
pub fn bspline_features(tape: &mut Tape, x: &Tensor, knots: &[f64], k: usize) -> Result<Tensor> {
    let n = crate::basis::bspline::validate_knots(knots, k)?;
    let (batch, inp) = x.shape();
    let xd = x.shared_data();
    let knots: std::sync::Arc<Vec<f64>> = std::sync::Arc::new(knots.to_vec());
    let mut out = vec![0.0; batch * inp * n];
    let mut scratch = BSplineScratch::new(k);
    let mut vals = vec![0.0; k + 1];
    for (xv, row) in xd.iter().zip(out.chunks_mut(n)) {
        if let Some(first) = scratch.eval(&knots, *xv, &mut vals, None) {
            scatter(row, first, &vals);
        }
    }
    tape.custom(
        "bspline_features",
        &[x],
        (batch, inp * n),
        out,
        Box::new(move |g, _| {
            let mut scratch = BSplineScratch::new(k);
            let mut vals = vec![0.0; k + 1];
            let mut ders = vec![0.0; k + 1];
            let gx = xd
                .iter()
                .zip(g.chunks(n))
                .map(|(xv, grow)| match scratch.eval(&knots, *xv, &mut vals, Some(&mut ders)) {
                    Some(first) => ders
                        .iter()
                        .enumerate()
                        .filter_map(|(q, d)| {
                            let j = first + q as isize;
                            (j >= 0 && (j as usize) < n).then(|| d * grow[j as usize])
                        })
                        .sum(),
                    None => 0.0,
                })
                .collect();
            vec![Some(gx)]
        }),
    )
}

fn scatter(row: &mut [f64], first: isize, vals: &[f64]) {
    let n = row.len();
    for (q, v) in vals.iter().enumerate() {
        let j = first + q as isize;
        if j >= 0 && (j as usize) < n {
            row[j as usize] = *v;
        }
    }
}
