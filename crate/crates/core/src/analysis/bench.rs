//! Training-step micro-benchmark.
//!
//! Each model is a single edge layer at a common input width, with its
//! output width chosen so its trainable count is as close as possible to
//! the shared-knot TruKAN layer of the requested shape. A step is forward,
//! MSE loss, backward and one AdamW update on a fixed random batch. Every
//! trial builds a fresh model, discards `warmup` steps and times `steps`
//! steps with a monotonic clock; mean and median run over all timed steps
//! of all trials. Runs on the calling thread only.
//!
//! Peak transient allocation needs [`CountingAlloc`] installed as the
//! global allocator of the binary:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: trukan_core::analysis::bench::CountingAlloc = trukan_core::analysis::bench::CountingAlloc;
//! ```
//!
//! Without it `peak_alloc_bytes` is `None`.
//!
//! Report files (schema version [`BENCH_SCHEMA`]): `bench.json` holds
//! `{schema_version, config, shape, reports}`; `bench.csv` has one row per
//! model with the [`BenchReport`] fields as columns.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flops::estimate_flops;
use crate::basis::knots::KnotMode;
use crate::data::loss::mse_loss;
use crate::error::{Error, Result};
use crate::layers::kan::{KanConfig, KanLayer, ScaleMode};
use crate::layers::sinekan::{SineKanConfig, SineKanLayer};
use crate::layers::trukan::{TruKanConfig, TruKanLayer};
use crate::layers::{Ctx, Grads, Layer, Network, ParamStore};
use crate::optim::{build_groups, AdamW, AdamWConfig, LrPreset, DEFAULT_WEIGHT_DECAY};
use crate::tensor::{Tape, Tensor};

pub const BENCH_SCHEMA: u32 = 1;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ENABLED: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live and high-water bytes.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
            grow(new_size);
        }
        p
    }
}

fn grow(n: usize) {
    ENABLED.store(true, Ordering::Relaxed);
    let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

/// Whether [`CountingAlloc`] is the active global allocator.
pub fn alloc_tracking_enabled() -> bool {
    drop(std::hint::black_box(Box::new(0u64)));
    ENABLED.load(Ordering::Relaxed)
}

/// Resets the high-water mark to the current live bytes and returns them.
pub fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchModel {
    KanPbt,
    KanPbf,
    Sinekan,
    /// Shared fixed knots.
    TrukanFs,
    /// Individual fixed knots.
    TrukanFi,
    /// Shared learnable knots.
    TrukanLs,
    /// Individual learnable knots.
    TrukanLi,
}

impl BenchModel {
    pub const ALL: [BenchModel; 7] = [
        BenchModel::KanPbt,
        BenchModel::KanPbf,
        BenchModel::Sinekan,
        BenchModel::TrukanFs,
        BenchModel::TrukanFi,
        BenchModel::TrukanLs,
        BenchModel::TrukanLi,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BenchModel::KanPbt => "kan-pbt",
            BenchModel::KanPbf => "kan-pbf",
            BenchModel::Sinekan => "sinekan",
            BenchModel::TrukanFs => "trukan-fs",
            BenchModel::TrukanFi => "trukan-fi",
            BenchModel::TrukanLs => "trukan-ls",
            BenchModel::TrukanLi => "trukan-li",
        }
    }

    fn build_with(self, shape: &BenchShape, out: usize, seed: u64) -> Result<Network> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, g, k) = (shape.in_dim, shape.grid, shape.order);
        let layer = match self {
            BenchModel::KanPbt | BenchModel::KanPbf => {
                let scales = if self == BenchModel::KanPbt { ScaleMode::Pbt } else { ScaleMode::Pbf };
                Layer::Kan(KanLayer::new(&mut store, "l", KanConfig::new(i, out, g, k, scales), &mut rng)?)
            }
            BenchModel::Sinekan => {
                let cfg = SineKanConfig { in_dim: i, out_dim: out, grid: sine_terms(shape) };
                Layer::Sinekan(SineKanLayer::new(&mut store, "l", cfg, &mut rng)?)
            }
            _ => {
                let mut cfg = TruKanConfig::new(i, out, g, k);
                cfg.individual = matches!(self, BenchModel::TrukanFi | BenchModel::TrukanLi);
                if matches!(self, BenchModel::TrukanLs | BenchModel::TrukanLi) {
                    cfg.knot_mode = KnotMode::Learnable;
                }
                Layer::Trukan(TruKanLayer::new(&mut store, "l", cfg, &mut rng)?)
            }
        };
        Network::new(i, vec![layer], store)
    }

    /// The benchmark network: output width matched to the shared-knot
    /// TruKAN budget of `shape`.
    pub fn build(self, shape: &BenchShape, seed: u64) -> Result<Network> {
        let out = self.matched_out(shape)?;
        self.build_with(shape, out, seed)
    }

    pub fn matched_out(self, shape: &BenchShape) -> Result<usize> {
        let budget = param_count_at(BenchModel::TrukanFs, shape, shape.out_dim);
        let best = (1..=4 * shape.out_dim)
            .min_by_key(|&o| param_count_at(self, shape, o).abs_diff(budget))
            .ok_or_else(|| Error::invalid("bench", "output width must be positive"))?;
        let got = param_count_at(self, shape, best);
        if got.abs_diff(budget) as f64 > 0.1 * budget as f64 {
            return Err(Error::invalid(
                "bench",
                format!("{} cannot match the budget {budget} within 10% (best {got})", self.id()),
            ));
        }
        Ok(best)
    }
}

fn sine_terms(shape: &BenchShape) -> usize {
    shape.grid + shape.order + 1
}

/// Trainable count of `model` at output width `out`, by formula.
fn param_count_at(model: BenchModel, s: &BenchShape, out: usize) -> usize {
    let (i, g, k) = (s.in_dim, s.grid, s.order);
    match model {
        BenchModel::KanPbt => KanConfig::new(i, out, g, k, ScaleMode::Pbt).param_count(),
        BenchModel::KanPbf => KanConfig::new(i, out, g, k, ScaleMode::Pbf).param_count(),
        BenchModel::Sinekan => SineKanConfig { in_dim: i, out_dim: out, grid: sine_terms(s) }.param_count(),
        BenchModel::TrukanFs | BenchModel::TrukanFi => i * out * (g + k + 1),
        BenchModel::TrukanLs => i * out * (g + k + 1) + g - 1,
        BenchModel::TrukanLi => i * out * (g + k + 1) + out * (g - 1),
    }
}

impl FromStr for BenchModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchModel::ALL.into_iter().find(|m| m.id() == s).ok_or_else(|| {
            let ids: Vec<_> = BenchModel::ALL.iter().map(|m| m.id()).collect();
            Error::invalid("bench", format!("unknown model '{s}' (expected one of {})", ids.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchShape {
    pub in_dim: usize,
    /// Output width of the shared-knot TruKAN reference.
    pub out_dim: usize,
    pub batch: usize,
    pub grid: usize,
    pub order: usize,
}

impl Default for BenchShape {
    fn default() -> Self {
        BenchShape { in_dim: 512, out_dim: 256, batch: 512, grid: 8, order: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub lr: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { warmup: 20, steps: 100, trials: 5, seed: 0, lr: 1e-3 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 {
            return Err(Error::invalid("bench", "insufficient warmup: at least one discarded step is required"));
        }
        if self.steps == 0 || self.trials == 0 {
            return Err(Error::invalid("bench", "steps and trials must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub out_dim: usize,
    pub params: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub forward_flops: u64,
    /// High-water bytes above the live baseline during one timed step.
    pub peak_alloc_bytes: Option<usize>,
    pub trials: usize,
    pub warmup: usize,
    pub steps: usize,
    pub threads: usize,
}

struct Bench {
    net: Network,
    groups: Vec<crate::optim::ParamGroup>,
    lrs: Vec<f64>,
    adam: AdamW,
    x: Tensor,
    y: Tensor,
}

impl Bench {
    fn new(net: Network, batch: usize, lr: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe4c);
        let mut random = |r, c| Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let x = random(batch, net.in_dim)?;
        let y = random(batch, net.out_dim)?;
        let groups = build_groups(&net.store, LrPreset::Single { lr }, DEFAULT_WEIGHT_DECAY, &[])?;
        let lrs = groups.iter().map(|g| g.lr).collect();
        Ok(Bench { net, groups, lrs, adam: AdamW::new(AdamWConfig::default()), x, y })
    }

    fn step(&mut self) -> Result<f64> {
        let grads = {
            let mut ctx = Ctx::new(&self.net.store, Tape::new(), crate::layers::Mode::Train, 0);
            let pred = self.net.forward(&mut ctx, &self.x)?;
            let loss = mse_loss(&mut ctx.tape, &pred, &self.y)?;
            ctx.tape.backward(&loss)?;
            let value = loss.item()?;
            let tape = ctx.into_parts().0;
            (Grads::from_tape(&tape, &self.net.store), value)
        };
        self.adam.step(&mut self.net.store, &self.groups, &self.lrs, &grads.0)?;
        Ok(grads.1)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Benchmarks one model.
pub fn bench_model(model: BenchModel, shape: &BenchShape, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let tracking = alloc_tracking_enabled();
    let mut times = Vec::with_capacity(cfg.trials * cfg.steps);
    let mut peak = 0usize;
    let mut meta = None;
    for trial in 0..cfg.trials {
        let net = model.build(shape, cfg.seed + trial as u64)?;
        if meta.is_none() {
            meta = Some((net.out_dim, net.param_count().total, estimate_flops(&net, shape.batch)));
        }
        let mut b = Bench::new(net, shape.batch, cfg.lr, cfg.seed + trial as u64)?;
        for _ in 0..cfg.warmup {
            b.step()?;
        }
        for _ in 0..cfg.steps {
            let base = reset_peak();
            let t = Instant::now();
            let loss = b.step()?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            peak = peak.max(peak_bytes().saturating_sub(base));
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "bench".into() });
            }
        }
    }
    let (out_dim, params, forward_flops) = meta.expect("at least one trial");
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    Ok(BenchReport {
        model: model.id().to_string(),
        out_dim,
        params,
        mean_ms,
        median_ms: median(&mut times),
        forward_flops,
        peak_alloc_bytes: tracking.then_some(peak),
        trials: cfg.trials,
        warmup: cfg.warmup,
        steps: cfg.steps,
        threads: 1,
    })
}

/// Benchmarks `models` in order, sequentially.
pub fn bench(models: &[BenchModel], shape: &BenchShape, cfg: &BenchConfig) -> Result<Vec<BenchReport>> {
    cfg.validate()?;
    models.iter().map(|&m| bench_model(m, shape, cfg)).collect()
}

pub fn reports_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from("model,out_dim,params,mean_ms,median_ms,forward_flops,peak_alloc_bytes,trials,warmup,steps,threads\n");
    for r in reports {
        let peak = r.peak_alloc_bytes.map_or(String::new(), |p| p.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{},{peak},{},{},{},{}",
            r.model, r.out_dim, r.params, r.mean_ms, r.median_ms, r.forward_flops, r.trials, r.warmup, r.steps, r.threads
        );
    }
    s
}

pub fn reports_json(reports: &[BenchReport], shape: &BenchShape, cfg: &BenchConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": BENCH_SCHEMA,
        "config": cfg,
        "shape": shape,
        "reports": reports,
    }))?)
}

/// Human-readable comparison table, step time and memory relative to the
/// first row.
pub fn comparison_table(reports: &[BenchReport]) -> String {
    let mut s = format!(
        "{:<10} {:>9} {:>11} {:>11} {:>8} {:>9} {:>12} {:>8}\n",
        "model", "params", "mean ms", "median ms", "rel", "GFLOPs", "peak MiB", "rel"
    );
    let Some(first) = reports.first() else { return s };
    for r in reports {
        let mem = r.peak_alloc_bytes.map(|p| p as f64 / (1 << 20) as f64);
        let rel_mem = match (r.peak_alloc_bytes, first.peak_alloc_bytes) {
            (Some(a), Some(b)) if b > 0 => format!("{:.2}", a as f64 / b as f64),
            _ => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>11.3} {:>11.3} {:>8.2} {:>9.3} {:>12} {:>8}",
            r.model,
            r.params,
            r.mean_ms,
            r.median_ms,
            r.median_ms / first.median_ms,
            r.forward_flops as f64 / 1e9,
            mem.map_or("-".into(), |m| format!("{m:.1}")),
            rel_mem
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchShape {
        BenchShape { in_dim: 16, out_dim: 8, batch: 32, grid: 8, order: 3 }
    }

    #[test]
    fn budgets_match_within_ten_percent() {
        for shape in [small(), BenchShape::default()] {
            let budget = BenchModel::TrukanFs.build(&shape, 0).unwrap().param_count().total;
            for m in BenchModel::ALL {
                let net = m.build(&shape, 0).unwrap();
                let p = net.param_count().total;
                assert_eq!(p, param_count_at(m, &shape, net.out_dim), "{}", m.id());
                assert!((p as f64 / budget as f64 - 1.0).abs() <= 0.1, "{} {p} vs {budget}", m.id());
            }
        }
    }

    #[test]
    fn ids_round_trip() {
        for m in BenchModel::ALL {
            assert_eq!(m.id().parse::<BenchModel>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.id()));
        }
        assert!("kan".parse::<BenchModel>().is_err());
    }

    #[test]
    fn runs_and_reports() {
        let cfg = BenchConfig { warmup: 2, steps: 3, trials: 2, ..Default::default() };
        let reports = bench(&BenchModel::ALL, &small(), &cfg).unwrap();
        assert_eq!(reports.len(), 7);
        for r in &reports {
            assert!(r.mean_ms > 0.0 && r.median_ms > 0.0);
            assert!(r.forward_flops > 0);
            assert_eq!(r.threads, 1);
        }
        let csv = reports_csv(&reports);
        assert_eq!(csv.lines().count(), 8);
        let json: serde_json::Value =
            serde_json::from_str(&reports_json(&reports, &small(), &cfg).unwrap()).unwrap();
        assert_eq!(json["schema_version"], BENCH_SCHEMA);
        assert!(comparison_table(&reports).contains("trukan-fi"));
    }

    #[test]
    fn insufficient_warmup_rejected() {
        let cfg = BenchConfig { warmup: 0, ..Default::default() };
        let err = bench(&[BenchModel::TrukanFs], &small(), &cfg).unwrap_err();
        assert!(err.to_string().contains("warmup"));
    }

    #[test]
    fn training_step_lowers_loss() {
        let net = BenchModel::TrukanFs.build(&small(), 0).unwrap();
        let mut b = Bench::new(net, 32, 1e-2, 0).unwrap();
        let first = b.step().unwrap();
        let mut last = first;
        for _ in 0..20 {
            last = b.step().unwrap();
        }
        assert!(last < first);
    }
}
