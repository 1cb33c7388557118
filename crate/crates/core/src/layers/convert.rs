//! Rewrites B-spline KAN layers as TruKAN layers.
//!
//! Every KAN edge `w_b s_b SiLU(x) + s_s Σ_j c_j B_j(x)` becomes a TruKAN
//! edge with a SiLU base weight `w_b s_b` and the truncated-power plus
//! polynomial form of `s_s Σ c_j B_j`, exact on the KAN grid range. The
//! TruKAN knots are the interior grid points; a single-interval grid,
//! which has none, gets one knot at the upper end of the range with a zero
//! coefficient. Other layers are copied unchanged.

use serde::{Deserialize, Serialize};

use super::edge::EdgeLayer;
use super::kan::KanLayer;
use super::network::{Layer, Network};
use super::params::ParamStore;
use super::trukan::{TruKanConfig, TruKanLayer};
use crate::basis::convert::{bspline_to_truncated, ConversionDomain};
use crate::basis::knots::KnotMode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub layer: usize,
    pub domain: (f64, f64),
    /// Largest condition estimate among the layer's edge conversions.
    pub condition: f64,
    /// Largest `|φ_kan(x) - φ_trukan(x)|` over all edges and samples.
    pub max_abs_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub n_samples: usize,
    pub layers: Vec<LayerDeviation>,
    pub max_abs_dev: f64,
}

fn convert_layer(kan: &KanLayer, store: &ParamStore, scratch: &mut ParamStore, name: &str) -> Result<(TruKanLayer, f64)> {
    let cfg = &kan.config;
    let (inp, out, k, n) = (cfg.in_dim, cfg.out_dim, cfg.order, cfg.n_basis());
    let (lo, hi) = cfg.range;
    let h = (hi - lo) / cfg.grid as f64;
    let (grid, range) = match cfg.grid {
        // a single knot sits at the lower end of its range
        1 => (1, (hi, hi + h)),
        2 => (1, (lo + h, hi)),
        g => (g - 1, (lo + h, hi - h)),
    };
    let mut tcfg = TruKanConfig::new(inp, out, grid, k);
    tcfg.range = range;
    tcfg.knot_mode = KnotMode::Fixed;
    tcfg.silu_base = true;
    let mut trunc = vec![0.0; out * inp * grid];
    let mut poly = vec![0.0; out * inp * (k + 1)];
    let mut base = vec![0.0; out * inp];
    let mut condition: f64 = 0.0;
    let wb = store.value(kan.base_weight);
    let sb = store.value(kan.scale_base);
    let ss = store.value(kan.scale_spline);
    let c = store.value(kan.coeffs);
    for o in 0..out {
        for i in 0..inp {
            let e = o * inp + i;
            base[e] = wb.get(o, i) * sb.get(o, i);
            let coeffs: Vec<f64> = c.row_slice(o)[i * n..(i + 1) * n].iter().map(|v| v * ss.get(o, i)).collect();
            let exp = bspline_to_truncated(&coeffs, &kan.knots, k, ConversionDomain::Interior)?;
            condition = condition.max(exp.condition);
            if exp.knots.len() != cfg.grid - 1 {
                return Err(Error::invalid("convert", "unexpected interior knot count"));
            }
            trunc[e * grid..e * grid + exp.trunc_coeffs.len()].copy_from_slice(&exp.trunc_coeffs);
            poly[e * (k + 1)..(e + 1) * (k + 1)].copy_from_slice(&exp.poly);
        }
    }
    let knots = tcfg.knot_set()?;
    let mut layer = TruKanLayer::from_values(
        scratch,
        name,
        tcfg,
        Tensor::new(out, inp * grid, trunc)?,
        Tensor::new(out, inp * (k + 1), poly)?,
        knots.init_raw(),
    )?;
    let base_id = layer.base.expect("silu base requested");
    scratch.value_mut(base_id).data_mut().copy_from_slice(&base);
    for o in 0..out {
        for i in 0..inp {
            if !kan.edge_active(o, i) {
                layer.remove_edge(scratch, o, i);
            }
        }
    }
    Ok((layer, condition))
}

/// Converts every KAN layer of `net` and measures each converted layer's
/// edges against the originals at `n_samples` equally spaced points of the
/// KAN grid range. Sample sets with `n_samples = m (n0 - 1) + 1` contain
/// the `n0` set, so refining the grid never lowers the reported deviation.
pub fn kan_to_trukan(net: &Network, n_samples: usize) -> Result<(Network, ConversionReport)> {
    if !net.layers.iter().any(|l| matches!(l, Layer::Kan(_))) {
        return Err(Error::invalid("convert", "network has no B-spline KAN layers"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("convert", "need at least 2 samples"));
    }
    let mut out = net.clone();
    let mut report = ConversionReport { n_samples, layers: Vec::new(), max_abs_dev: 0.0 };
    for (idx, layer) in net.layers.iter().enumerate() {
        let Layer::Kan(kan) = layer else { continue };
        let (t, condition) = convert_layer(kan, &net.store, &mut out.store, &format!("layer{idx}.converted"))?;
        let domain = kan.config.range;
        let xs = crate::analysis::curves::linspace(domain.0, domain.1, n_samples);
        let mut dev: f64 = 0.0;
        for o in 0..kan.config.out_dim {
            for i in 0..kan.config.in_dim {
                let a = kan.edge_values(&net.store, o, i, &xs)?;
                let b = t.edge_values(&out.store, o, i, &xs)?;
                dev = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(dev, f64::max);
            }
        }
        report.max_abs_dev = report.max_abs_dev.max(dev);
        report.layers.push(LayerDeviation { layer: idx, domain, condition, max_abs_dev: dev });
        out.layers[idx] = Layer::Trukan(t);
    }
    out.compact();
    Ok((out, report))
}
