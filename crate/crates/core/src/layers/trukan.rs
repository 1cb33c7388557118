//! TruKAN layer: every edge is `Σ_j c_j (x - t_j)_+^k + Σ_r a_r x^r`.
//!
//! With shared knots the truncated-power features are computed once per
//! input and contracted with all outputs by a single matrix product. With
//! individual knots every output sees its own feature tensor; those are
//! materialized in output blocks bounded by `block_bytes` and recomputed
//! in the backward pass.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::edge::EdgeLayer;
use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use crate::basis::activation::{silu, silu_value};
use crate::basis::knots::{KnotMode, KnotSet, KnotSharing};
use crate::basis::poly::poly_value;
use crate::basis::truncated::trunc_pow;
use crate::error::{Error, Result};
use crate::tensor::linalg::gemm;
use crate::tensor::{Tape, Tensor};

fn default_block_bytes() -> usize {
    256 << 20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruKanConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Number of knots `G`.
    pub grid: usize,
    pub order: usize,
    pub range: (f64, f64),
    pub knot_mode: KnotMode,
    pub individual: bool,
    /// Per-output additive bias.
    #[serde(default)]
    pub bias: bool,
    /// Extra `w · SiLU(x)` term per edge (kept when converting B-spline KANs).
    #[serde(default)]
    pub silu_base: bool,
    /// Memory budget for individual-knot feature blocks.
    #[serde(default = "default_block_bytes")]
    pub block_bytes: usize,
}

impl TruKanConfig {
    pub fn new(in_dim: usize, out_dim: usize, grid: usize, order: usize) -> Self {
        TruKanConfig {
            in_dim,
            out_dim,
            grid,
            order,
            range: (-1.0, 1.0),
            knot_mode: KnotMode::Fixed,
            individual: false,
            bias: false,
            silu_base: false,
            block_bytes: default_block_bytes(),
        }
    }

    pub fn knot_set(&self) -> Result<KnotSet> {
        let sharing = if self.individual {
            KnotSharing::Individual(self.out_dim)
        } else {
            KnotSharing::Shared
        };
        KnotSet::new(self.knot_mode, sharing, self.range, self.grid)
    }

    /// Trainable scalars of a layer with every edge active.
    pub fn param_count(&self) -> usize {
        let edges = self.in_dim * self.out_dim;
        let per_edge = self.grid + self.order + 1 + self.silu_base as usize;
        let knots = self.knot_set().map(|k| k.param_count()).unwrap_or(0);
        edges * per_edge + knots + if self.bias { self.out_dim } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruKanLayer {
    pub config: TruKanConfig,
    pub knots: KnotSet,
    /// `out × (in·G)`, column `i·G + j`.
    pub trunc: ParamId,
    /// `out × (in·(k+1))`, column `i·(k+1) + r`.
    pub poly: ParamId,
    pub raw_knots: Option<ParamId>,
    pub bias: Option<ParamId>,
    /// `out × in` SiLU weights.
    pub base: Option<ParamId>,
    pub edge_mask: Vec<bool>,
}

impl TruKanLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: TruKanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (inp, out, g, k) = (config.in_dim, config.out_dim, config.grid, config.order);
        if inp == 0 || out == 0 {
            return Err(Error::invalid("trukan", "dimensions must be positive"));
        }
        let knots = config.knot_set()?;
        let sd = 0.1 / ((inp * g) as f64).sqrt();
        let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid("trukan", e.to_string()))?;
        let trunc: Vec<f64> = (0..out * inp * g).map(|_| normal.sample(rng)).collect();
        let mut poly = vec![0.0; out * inp * (k + 1)];
        if k >= 1 {
            let a1 = 1.0 / (inp as f64).sqrt();
            for o in 0..out {
                for i in 0..inp {
                    poly[o * inp * (k + 1) + i * (k + 1) + 1] = a1;
                }
            }
        }
        Self::from_values(
            store,
            name,
            config,
            Tensor::new(out, inp * g, trunc)?,
            Tensor::new(out, inp * (k + 1), poly)?,
            knots.init_raw(),
        )
    }

    /// Builds a layer around explicit coefficient values.
    pub fn from_values(
        store: &mut ParamStore,
        name: &str,
        config: TruKanConfig,
        trunc: Tensor,
        poly: Tensor,
        raw_knots: Tensor,
    ) -> Result<Self> {
        let (inp, out, g, k) = (config.in_dim, config.out_dim, config.grid, config.order);
        let knots = config.knot_set()?;
        if trunc.shape() != (out, inp * g) {
            return Err(Error::Shape { op: "trukan", lhs: trunc.shape(), rhs: (out, inp * g) });
        }
        if poly.shape() != (out, inp * (k + 1)) {
            return Err(Error::Shape { op: "trukan", lhs: poly.shape(), rhs: (out, inp * (k + 1)) });
        }
        let trunc = store.add(format!("{name}.trunc"), trunc, ParamRole::SplineCoeffs, true);
        let poly = store.add(format!("{name}.poly"), poly, ParamRole::PolyCoeffs, true);
        let raw_knots = (config.knot_mode == KnotMode::Learnable)
            .then(|| store.add(format!("{name}.knots"), raw_knots, ParamRole::Knots, true));
        let bias = config
            .bias
            .then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out), ParamRole::Bias, true));
        let base = config
            .silu_base
            .then(|| store.add(format!("{name}.base"), Tensor::zeros(out, inp), ParamRole::BaseWeights, true));
        Ok(TruKanLayer {
            config,
            knots,
            trunc,
            poly,
            raw_knots,
            bias,
            base,
            edge_mask: vec![true; out * inp],
        })
    }

    /// Materialized knots (`1 × G` shared, `out × G` individual) as plain values.
    pub fn knot_values(&self, store: &ParamStore) -> Result<Tensor> {
        self.knots.values(self.raw_knots.map(|id| store.value(id)))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if x.cols() != cfg.in_dim {
            return Err(Error::Shape { op: "trukan", lhs: x.shape(), rhs: (x.rows(), cfg.in_dim) });
        }
        let raw = self.raw_knots.map(|id| ctx.param(id));
        let knots = self.knots.materialize(&mut ctx.tape, raw.as_ref())?;
        let c = ctx.param(self.trunc);
        let a = ctx.param(self.poly);
        let k = cfg.order;
        let mut y = if cfg.individual {
            let yt = individual_trunc(&mut ctx.tape, x, &knots, &c, k, cfg.block_bytes)?;
            let yp = poly_part(&mut ctx.tape, x, &a, k)?;
            ctx.tape.add(&yt, &yp)?
        } else {
            shared_trunc_poly(&mut ctx.tape, x, &knots, &c, &a, k)?
        };
        if let Some(id) = self.base {
            let w = ctx.param(id);
            let s = silu(&mut ctx.tape, x)?;
            let yb = ctx.tape.matmul_nt(&s, &w)?;
            y = ctx.tape.add(&y, &yb)?;
        }
        if let Some(id) = self.bias {
            let b = ctx.param(id);
            y = ctx.tape.add_row(&y, &b)?;
        }
        Ok(y)
    }

    /// `(polynomial, truncated-power, SiLU)` parts of edge `(o, i)` at `x`.
    pub fn edge_components(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> Result<(f64, f64, f64)> {
        let knots = self.knot_values(store)?;
        Ok(self.components_with(store, &knots, o, i, x))
    }

    fn components_with(&self, store: &ParamStore, knots: &Tensor, o: usize, i: usize, x: f64) -> (f64, f64, f64) {
        let cfg = &self.config;
        let (g, k) = (cfg.grid, cfg.order);
        let row = if cfg.individual { o } else { 0 };
        let t = knots.row_slice(row);
        let c = &store.value(self.trunc).row_slice(o)[i * g..(i + 1) * g];
        let a = &store.value(self.poly).row_slice(o)[i * (k + 1)..(i + 1) * (k + 1)];
        let trunc: f64 = t.iter().zip(c).map(|(&tj, &cj)| cj * trunc_pow(x, tj, k as u32)).sum();
        let poly = poly_value(a, x);
        let base = self
            .base
            .map(|id| store.value(id).get(o, i) * silu_value(x))
            .unwrap_or(0.0);
        (poly, trunc, base)
    }
}

impl EdgeLayer for TruKanLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params_per_edge(&self) -> usize {
        self.config.grid + self.config.order + 1 + self.config.silu_base as usize
    }

    fn edge_value(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> Result<f64> {
        let (p, t, b) = self.edge_components(store, o, i, x)?;
        Ok(p + t + b)
    }

    fn edge_values(&self, store: &ParamStore, o: usize, i: usize, xs: &[f64]) -> Result<Vec<f64>> {
        let knots = self.knot_values(store)?;
        Ok(xs
            .iter()
            .map(|&x| {
                let (p, t, b) = self.components_with(store, &knots, o, i, x);
                p + t + b
            })
            .collect())
    }

    fn edge_parts(&self, store: &ParamStore, o: usize, i: usize, xs: &[f64]) -> Result<Vec<(&'static str, Vec<f64>)>> {
        let knots = self.knot_values(store)?;
        let (mut p, mut t, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for &x in xs {
            let c = self.components_with(store, &knots, o, i, x);
            p.push(c.0);
            t.push(c.1);
            b.push(c.2);
        }
        let mut parts = vec![("polynomial", p), ("truncated", t)];
        if self.base.is_some() {
            parts.push(("silu", b));
        }
        Ok(parts)
    }

    fn edge_active(&self, o: usize, i: usize) -> bool {
        self.edge_mask[o * self.config.in_dim + i]
    }

    fn remove_edge(&mut self, store: &mut ParamStore, o: usize, i: usize) {
        let (inp, g, k) = (self.config.in_dim, self.config.grid, self.config.order);
        self.edge_mask[o * inp + i] = false;
        let c = store.value_mut(self.trunc).data_mut();
        c[o * inp * g + i * g..o * inp * g + (i + 1) * g].fill(0.0);
        let a = store.value_mut(self.poly).data_mut();
        a[o * inp * (k + 1) + i * (k + 1)..o * inp * (k + 1) + (i + 1) * (k + 1)].fill(0.0);
        if let Some(id) = self.base {
            store.value_mut(id).data_mut()[o * inp + i] = 0.0;
        }
    }

    fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    fn shared_params(&self) -> usize {
        self.knots.param_count()
    }
}

/// `(d)_+^k`, branch-free for the common orders.
#[inline(always)]
fn tp(d: f64, k: u32) -> f64 {
    match k {
        0 => (d >= 0.0) as u8 as f64,
        3 => {
            let p = d.max(0.0);
            p * p * p
        }
        _ => d.max(0.0).powi(k as i32),
    }
}

#[inline(always)]
fn tp_dx(d: f64, k: u32) -> f64 {
    match k {
        0 => 0.0,
        1 => (d > 0.0) as u8 as f64,
        3 => {
            let p = d.max(0.0);
            3.0 * p * p
        }
        _ => k as f64 * d.max(0.0).powi(k as i32 - 1),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() / 4 * 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// `(x_bi - t_j)_+^k` laid out as `batch × (in·G)`, differentiable in `x`
/// and in the shared `1 × G` knot row.
pub fn trunc_features(tape: &mut Tape, x: &Tensor, knots: &Tensor, k: usize) -> Result<Tensor> {
    let (batch, inp) = x.shape();
    if knots.rows() != 1 {
        return Err(Error::invalid("trunc_features", "expects a single shared knot row"));
    }
    let g = knots.cols();
    let f = inp * g;
    let ku = k as u32;
    let (xd, td) = (x.shared_data(), knots.shared_data());
    let mut out = vec![0.0; batch * f];
    for (xv, row) in xd.iter().zip(out.chunks_mut(g)) {
        for (slot, &t) in row.iter_mut().zip(td.iter()) {
            *slot = tp(xv - t, ku);
        }
    }
    tape.custom(
        "trunc_features",
        &[x, knots],
        (batch, f),
        out,
        Box::new(move |gr, needs| {
            let mut gx = needs[0].then(|| vec![0.0; batch * inp]);
            let mut gt = needs[1].then(|| vec![0.0; g]);
            for (e, (&xv, grow)) in xd.iter().zip(gr.chunks(g)).enumerate() {
                let mut acc = 0.0;
                for (j, (&t, &gv)) in td.iter().zip(grow).enumerate() {
                    let d = tp_dx(xv - t, ku) * gv;
                    acc += d;
                    if let Some(gt) = gt.as_mut() {
                        gt[j] -= d;
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    gx[e] = acc;
                }
            }
            vec![gx, gt]
        }),
    )
}

/// Polynomial part `y_bo = Σ_i Σ_r a_{o,i(k+1)+r} x_bi^r`. The constant
/// terms collapse to a per-output sum, so only the `k` non-constant
/// monomials go through the matrix product.
pub fn poly_part(tape: &mut Tape, x: &Tensor, a: &Tensor, k: usize) -> Result<Tensor> {
    let (batch, inp) = x.shape();
    let w = k + 1;
    let out = a.rows();
    if a.cols() != inp * w {
        return Err(Error::Shape { op: "trukan_poly", lhs: a.shape(), rhs: (out, inp * w) });
    }
    let f = inp * k;
    let xd = x.shared_data();
    let ad = a.shared_data();
    let mut feats = vec![0.0; batch * f];
    if k > 0 {
        for (xv, row) in xd.iter().zip(feats.chunks_mut(k)) {
            let mut p = *xv;
            for slot in row.iter_mut() {
                *slot = p;
                p *= xv;
            }
        }
    }
    // non-constant coefficients, out × in·k
    let mut a_nc = vec![0.0; out * f];
    let mut a0 = vec![0.0; out];
    for o in 0..out {
        for i in 0..inp {
            let src = &ad[o * inp * w + i * w..o * inp * w + (i + 1) * w];
            a0[o] += src[0];
            a_nc[o * f + i * k..o * f + (i + 1) * k].copy_from_slice(&src[1..]);
        }
    }
    let mut y = vec![0.0; batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(&a0);
    }
    if f > 0 {
        gemm(false, true, batch, out, f, 1.0, &feats, &a_nc, 1.0, &mut y);
    }
    tape.custom(
        "trukan_poly",
        &[x, a],
        (batch, out),
        y,
        Box::new(move |gr, needs| {
            let gx = needs[0].then(|| {
                let mut gp = vec![0.0; batch * f];
                if f > 0 {
                    gemm(false, false, batch, f, out, 1.0, gr, &a_nc, 0.0, &mut gp);
                }
                let mut gx = vec![0.0; batch * inp];
                for (e, gxe) in gx.iter_mut().enumerate() {
                    let xv = xd[e];
                    let mut p = 1.0;
                    let mut acc = 0.0;
                    for (r, gv) in gp[e * k..(e + 1) * k].iter().enumerate() {
                        acc += gv * (r + 1) as f64 * p;
                        p *= xv;
                    }
                    *gxe = acc;
                }
                gx
            });
            let ga = needs[1].then(|| {
                let mut gnc = vec![0.0; out * f];
                if f > 0 {
                    gemm(true, false, out, f, batch, 1.0, gr, &feats, 0.0, &mut gnc);
                }
                let mut g0 = vec![0.0; out];
                for row in gr.chunks(out) {
                    g0.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                let mut ga = vec![0.0; out * inp * w];
                for o in 0..out {
                    for i in 0..inp {
                        let dst = &mut ga[o * inp * w + i * w..o * inp * w + (i + 1) * w];
                        dst[0] = g0[o];
                        dst[1..].copy_from_slice(&gnc[o * f + i * k..o * f + (i + 1) * k]);
                    }
                }
                ga
            });
            vec![gx, ga]
        }),
    )
}

/// Shared-knot edge sums, both parts through one matrix product:
/// per input the feature row `[(x - t_1)_+^k .. (x - t_G)_+^k, x, .., x^k]`
/// against the matching columns of `c` and the non-constant columns of `a`.
/// Constant terms collapse to a per-output sum.
pub fn shared_trunc_poly(tape: &mut Tape, x: &Tensor, knots: &Tensor, c: &Tensor, a: &Tensor, k: usize) -> Result<Tensor> {
    let (batch, inp) = x.shape();
    if knots.rows() != 1 {
        return Err(Error::invalid("shared_trunc_poly", "expects a single shared knot row"));
    }
    let g = knots.cols();
    let out = c.rows();
    let (per, w) = (g + k, k + 1);
    if c.cols() != inp * g {
        return Err(Error::Shape { op: "trukan_trunc", lhs: c.shape(), rhs: (out, inp * g) });
    }
    if a.shape() != (out, inp * w) {
        return Err(Error::Shape { op: "trukan_poly", lhs: a.shape(), rhs: (out, inp * w) });
    }
    let f = inp * per;
    let ku = k as u32;
    let (xd, td) = (x.shared_data(), knots.shared_data());
    let (cd, ad) = (c.data(), a.data());
    let mut feats = vec![0.0; batch * f];
    for (xv, row) in xd.iter().zip(feats.chunks_mut(per)) {
        let (tr, po) = row.split_at_mut(g);
        for (slot, &t) in tr.iter_mut().zip(td.iter()) {
            *slot = tp(xv - t, ku);
        }
        let mut p = *xv;
        for slot in po.iter_mut() {
            *slot = p;
            p *= xv;
        }
    }
    let mut wt = vec![0.0; out * f];
    let mut a0 = vec![0.0; out];
    for o in 0..out {
        for i in 0..inp {
            let dst = &mut wt[o * f + i * per..o * f + (i + 1) * per];
            dst[..g].copy_from_slice(&cd[o * inp * g + i * g..o * inp * g + (i + 1) * g]);
            let src = &ad[o * inp * w + i * w..o * inp * w + (i + 1) * w];
            a0[o] += src[0];
            dst[g..].copy_from_slice(&src[1..]);
        }
    }
    let mut y = vec![0.0; batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(&a0);
    }
    gemm(false, true, batch, out, f, 1.0, &feats, &wt, 1.0, &mut y);
    tape.custom(
        "trukan_shared",
        &[x, knots, c, a],
        (batch, out),
        y,
        Box::new(move |gr, needs| {
            let (mut gx, mut gt) = (None, None);
            if needs[0] || needs[1] {
                let mut gf = vec![0.0; batch * f];
                gemm(false, false, batch, f, out, 1.0, gr, &wt, 0.0, &mut gf);
                let mut gxv = vec![0.0; batch * inp];
                let mut gtv = vec![0.0; g];
                for (e, (&xv, grow)) in xd.iter().zip(gf.chunks(per)).enumerate() {
                    let mut acc = 0.0;
                    for (j, (&t, &gv)) in td.iter().zip(&grow[..g]).enumerate() {
                        let d = tp_dx(xv - t, ku) * gv;
                        acc += d;
                        gtv[j] -= d;
                    }
                    let mut p = 1.0;
                    for (r, gv) in grow[g..].iter().enumerate() {
                        acc += gv * (r + 1) as f64 * p;
                        p *= xv;
                    }
                    gxv[e] = acc;
                }
                gx = needs[0].then_some(gxv);
                gt = needs[1].then_some(gtv);
            }
            let (mut gc, mut ga) = (None, None);
            if needs[2] || needs[3] {
                let mut gw = vec![0.0; out * f];
                gemm(true, false, out, f, batch, 1.0, gr, &feats, 0.0, &mut gw);
                if needs[2] {
                    let mut v = vec![0.0; out * inp * g];
                    for o in 0..out {
                        for i in 0..inp {
                            v[o * inp * g + i * g..o * inp * g + (i + 1) * g]
                                .copy_from_slice(&gw[o * f + i * per..o * f + i * per + g]);
                        }
                    }
                    gc = Some(v);
                }
                if needs[3] {
                    let mut g0 = vec![0.0; out];
                    for row in gr.chunks(out) {
                        g0.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    let mut v = vec![0.0; out * inp * w];
                    for o in 0..out {
                        for i in 0..inp {
                            let dst = &mut v[o * inp * w + i * w..o * inp * w + (i + 1) * w];
                            dst[0] = g0[o];
                            dst[1..].copy_from_slice(&gw[o * f + i * per + g..o * f + (i + 1) * per]);
                        }
                    }
                    ga = Some(v);
                }
            }
            vec![gx, gt, gc, ga]
        }),
    )
}

/// Outputs per block so that `buffers` feature blocks fit the budget.
fn block_outputs(out: usize, per_output: usize, block_bytes: usize, buffers: usize) -> usize {
    let per = (per_output * buffers * std::mem::size_of::<f64>()).max(1);
    (block_bytes / per).clamp(1, out.max(1))
}

/// Truncated-power part with one knot row per output:
/// `y_bo = Σ_i Σ_j c_{o,iG+j} (x_bi - t_oj)_+^k`.
fn individual_trunc(
    tape: &mut Tape,
    x: &Tensor,
    knots: &Tensor,
    c: &Tensor,
    k: usize,
    block_bytes: usize,
) -> Result<Tensor> {
    let (batch, inp) = x.shape();
    let (out, g) = knots.shape();
    let f = inp * g;
    if c.shape() != (out, f) {
        return Err(Error::Shape { op: "trukan_individual", lhs: c.shape(), rhs: (out, f) });
    }
    let ku = k as u32;
    let per_output = batch * f;
    let (xd, td, cd) = (x.shared_data(), knots.shared_data(), c.shared_data());

    let fill = move |block: &mut [f64], xd: &[f64], t: &[f64], deriv: bool| {
        if deriv {
            for (xv, row) in xd.iter().zip(block.chunks_mut(g)) {
                for (slot, &tj) in row.iter_mut().zip(t) {
                    *slot = tp_dx(xv - tj, ku);
                }
            }
        } else {
            for (xv, row) in xd.iter().zip(block.chunks_mut(g)) {
                for (slot, &tj) in row.iter_mut().zip(t) {
                    *slot = tp(xv - tj, ku);
                }
            }
        }
    };

    let chunk = block_outputs(out, per_output, block_bytes, 1);
    let mut block = vec![0.0; chunk * per_output];
    let mut y = vec![0.0; batch * out];
    for o0 in (0..out).step_by(chunk) {
        let oc = chunk.min(out - o0);
        for ol in 0..oc {
            let o = o0 + ol;
            fill(&mut block[ol * per_output..(ol + 1) * per_output], &xd, &td[o * g..(o + 1) * g], false);
        }
        for ol in 0..oc {
            let o = o0 + ol;
            let phi = &block[ol * per_output..(ol + 1) * per_output];
            let crow = &cd[o * f..(o + 1) * f];
            for (b, prow) in phi.chunks_exact(f).enumerate() {
                y[b * out + o] = dot(prow, crow);
            }
        }
    }
    drop(block);

    tape.custom(
        "trukan_individual",
        &[x, knots, c],
        (batch, out),
        y,
        Box::new(move |gr, needs| {
            let mut gx = needs[0].then(|| vec![0.0; batch * inp]);
            let mut gt = needs[1].then(|| vec![0.0; out * g]);
            let mut gc = needs[2].then(|| vec![0.0; out * f]);
            let chunk = block_outputs(out, per_output, block_bytes, 2);
            let mut phi = vec![0.0; chunk * per_output];
            let mut dphi = vec![0.0; chunk * per_output];
            for o0 in (0..out).step_by(chunk) {
                let oc = chunk.min(out - o0);
                for ol in 0..oc {
                    let o = o0 + ol;
                    let t = &td[o * g..(o + 1) * g];
                    let range = ol * per_output..(ol + 1) * per_output;
                    if gc.is_some() {
                        fill(&mut phi[range.clone()], &xd, t, false);
                    }
                    fill(&mut dphi[range], &xd, t, true);
                }
                for ol in 0..oc {
                    let o = o0 + ol;
                    let crow = &cd[o * f..(o + 1) * f];
                    let p = &phi[ol * per_output..(ol + 1) * per_output];
                    let d = &dphi[ol * per_output..(ol + 1) * per_output];
                    let mut gt_row = vec![0.0; g];
                    for b in 0..batch {
                        let gb = gr[b * out + o];
                        if gb == 0.0 {
                            continue;
                        }
                        if let Some(gc) = gc.as_mut() {
                            for (acc, v) in gc[o * f..(o + 1) * f].iter_mut().zip(&p[b * f..(b + 1) * f]) {
                                *acc += gb * v;
                            }
                        }
                        let drow = &d[b * f..(b + 1) * f];
                        for i in 0..inp {
                            let cr = &crow[i * g..(i + 1) * g];
                            let dr = &drow[i * g..(i + 1) * g];
                            let mut acc = 0.0;
                            for j in 0..g {
                                let v = cr[j] * dr[j];
                                acc += v;
                                gt_row[j] += gb * v;
                            }
                            if let Some(gx) = gx.as_mut() {
                                gx[b * inp + i] += gb * acc;
                            }
                        }
                    }
                    if let Some(gt) = gt.as_mut() {
                        for (dst, v) in gt[o * g..(o + 1) * g].iter_mut().zip(&gt_row) {
                            *dst -= v;
                        }
                    }
                }
            }
            vec![gx, gt, gc]
        }),
    )
}
