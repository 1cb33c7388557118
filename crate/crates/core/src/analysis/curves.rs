//! Sampled edge functions and their additive components.
//!
//! Files written by [`write_curves`] (schema version [`CURVES_SCHEMA`]):
//! - `curves.csv`: long format, header
//!   `edge_layer,edge_out,edge_in,x,series,value`, one row per sample and
//!   series. The `composite` series is the edge function itself; the other
//!   series are its components (`polynomial`, `truncated`, `silu`,
//!   `spline`, or `value` for layers without a decomposition). Numbers are
//!   written in shortest round-trip form.
//! - `curves.json`: manifest `{schema_version, n_samples, range, edges:
//!   [{layer, out, inp, series, svg}]}`.
//! - `edge_<layer>_<out>_<in>.svg`: standalone plot, composite solid
//!   black, components dashed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Network;

pub const CURVES_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationCurve {
    pub layer: usize,
    pub out: usize,
    pub inp: usize,
    pub xs: Vec<f64>,
    pub composite: Vec<f64>,
    pub components: Vec<(String, Vec<f64>)>,
}

impl ActivationCurve {
    /// Largest `|composite - Σ components|` over the samples.
    pub fn decomposition_error(&self) -> f64 {
        (0..self.xs.len())
            .map(|n| {
                let parts: f64 = self.components.iter().map(|(_, v)| v[n]).sum();
                (self.composite[n] - parts).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Selects edges; `None` matches anything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFilter {
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub out: Option<usize>,
    #[serde(default)]
    pub inp: Option<usize>,
    /// Also export pruned edges.
    #[serde(default)]
    pub include_removed: bool,
}

impl EdgeFilter {
    pub fn matches(&self, layer: usize, out: usize, inp: usize) -> bool {
        self.layer.is_none_or(|l| l == layer) && self.out.is_none_or(|o| o == out) && self.inp.is_none_or(|i| i == inp)
    }
}

/// `n` equally spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Samples every edge selected by `filter` at `n_samples` points of `range`.
pub fn export_curves(
    net: &Network,
    filter: &EdgeFilter,
    n_samples: usize,
    range: (f64, f64),
) -> Result<Vec<ActivationCurve>> {
    if n_samples < 2 || !(range.0 < range.1) {
        return Err(Error::invalid("export_curves", "need at least 2 samples on a non-empty range"));
    }
    let xs = linspace(range.0, range.1, n_samples);
    let mut curves = Vec::new();
    for (layer, l) in net.layers.iter().enumerate() {
        let Some(e) = l.as_edge() else { continue };
        for out in 0..e.out_dim() {
            for inp in 0..e.in_dim() {
                if !filter.matches(layer, out, inp) || !(filter.include_removed || e.edge_active(out, inp)) {
                    continue;
                }
                let composite = e.edge_values(&net.store, out, inp, &xs)?;
                let components = e
                    .edge_parts(&net.store, out, inp, &xs)?
                    .into_iter()
                    .map(|(name, v)| (name.to_string(), v))
                    .collect();
                curves.push(ActivationCurve { layer, out, inp, xs: xs.clone(), composite, components });
            }
        }
    }
    if curves.is_empty() {
        return Err(Error::invalid("export_curves", format!("edge filter {filter:?} matches no edge")));
    }
    Ok(curves)
}

pub fn curves_csv(curves: &[ActivationCurve]) -> String {
    let mut s = String::from("edge_layer,edge_out,edge_in,x,series,value\n");
    for c in curves {
        let series = std::iter::once(("composite", &c.composite))
            .chain(c.components.iter().map(|(n, v)| (n.as_str(), v)));
        for (name, ys) in series {
            for (x, y) in c.xs.iter().zip(ys) {
                let _ = writeln!(s, "{},{},{},{x:?},{name},{y:?}", c.layer, c.out, c.inp);
            }
        }
    }
    s
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// Standalone SVG plot of one curve.
pub fn curve_svg(c: &ActivationCurve) -> String {
    let (w, h, pad) = (360.0, 260.0, 36.0);
    let all = c.composite.iter().chain(c.components.iter().flat_map(|(_, v)| v.iter()));
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !(hi - lo > 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    }
    let (x0, x1) = (c.xs[0], c.xs[c.xs.len() - 1]);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - lo) / (hi - lo) * (h - 2.0 * pad);
    let path = |ys: &[f64]| {
        c.xs.iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##);
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#999" stroke-width="0.5"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    if lo < 0.0 && hi > 0.0 {
        let y = py(0.0);
        let _ = writeln!(s, r##"<line x1="{pad}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ccc" stroke-width="0.5"/>"##, w - pad);
    }
    for (n, (name, ys)) in c.components.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2" stroke-dasharray="5,3"><title>{name}</title></polyline>"##,
            path(ys)
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{name}</text>"##,
            pad + 4.0,
            pad + 12.0 * (n + 2) as f64
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="black" stroke-width="2"><title>composite</title></polyline>"##,
        path(&c.composite)
    );
    let _ = writeln!(s, r##"<text x="{}" y="{}" font-family="sans-serif" font-size="10">composite</text>"##, pad + 4.0, pad + 12.0);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">layer {} edge {} → {}</text>"##,
        w / 2.0,
        pad - 10.0,
        c.layer,
        c.inp,
        c.out
    );
    let _ = writeln!(
        s,
        r##"<text x="{pad}" y="{}" font-family="sans-serif" font-size="9">{x0:.3}</text><text x="{}" y="{}" font-family="sans-serif" font-size="9" text-anchor="end">{x1:.3}</text>"##,
        h - pad + 12.0,
        w - pad,
        h - pad + 12.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="9" text-anchor="end">{hi:.3}</text><text x="{}" y="{}" font-family="sans-serif" font-size="9" text-anchor="end">{lo:.3}</text>"##,
        pad - 2.0,
        pad + 4.0,
        pad - 2.0,
        h - pad
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Serialize)]
struct ManifestEdge {
    layer: usize,
    out: usize,
    inp: usize,
    series: Vec<String>,
    svg: String,
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    n_samples: usize,
    range: (f64, f64),
    edges: Vec<ManifestEdge>,
}

/// Writes the CSV, manifest and per-edge SVGs into `dir`; returns the
/// paths written.
pub fn write_curves(curves: &[ActivationCurve], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv = dir.join("curves.csv");
    std::fs::write(&csv, curves_csv(curves))?;
    written.push(csv);
    let mut edges = Vec::new();
    for c in curves {
        let name = format!("edge_{}_{}_{}.svg", c.layer, c.out, c.inp);
        let path = dir.join(&name);
        std::fs::write(&path, curve_svg(c))?;
        written.push(path);
        let series = std::iter::once("composite".to_string()).chain(c.components.iter().map(|(n, _)| n.clone()));
        edges.push(ManifestEdge { layer: c.layer, out: c.out, inp: c.inp, series: series.collect(), svg: name });
    }
    let first = curves.first();
    let manifest = Manifest {
        schema_version: CURVES_SCHEMA,
        n_samples: first.map_or(0, |c| c.xs.len()),
        range: first.map_or((0.0, 0.0), |c| (c.xs[0], c.xs[c.xs.len() - 1])),
        edges,
    };
    let path = dir.join("curves.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(path);
    Ok(written)
}
