//! Finite-difference check of every layer kind and both losses.
//!
//! Each trial draws fresh shapes, hyperparameters, parameters and inputs
//! from its seed and checks every parameter tensor and the input through
//! [`check_layer`]. Spline orders are at least 2 so that the checked
//! functions are differentiable everywhere, and ReLU inputs stay at least
//! 0.1 away from the kink.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::knots::KnotMode;
use crate::data::loss::{cross_entropy, mse_loss};
use crate::error::Result;
use crate::layers::dense::Dense;
use crate::layers::dropout::Dropout;
use crate::layers::kan::{KanConfig, KanLayer, ScaleMode};
use crate::layers::norm::{BatchNorm, LayerNorm};
use crate::layers::sinekan::{SineKanConfig, SineKanLayer};
use crate::layers::trukan::{TruKanConfig, TruKanLayer};
use crate::layers::{check_layer, Layer, ParamStore};
use crate::tensor::{check_gradients, GradCheckOptions, Tensor};

pub const CASES: [&str; 15] = [
    "trukan_shared_fixed",
    "trukan_shared_learnable",
    "trukan_individual_fixed",
    "trukan_individual_learnable",
    "trukan_silu_base",
    "kan_pbt",
    "kan_pbf",
    "sinekan",
    "dense",
    "layer_norm",
    "batch_norm",
    "dropout",
    "relu",
    "mse_loss",
    "cross_entropy",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.cases.iter().all(|c| c.max_rel_err < tol)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>7} {:>9} {:>12}\n", "case", "trials", "checked", "max rel err");
        for c in &self.cases {
            s += &format!("{:<28} {:>7} {:>9} {:>12.3e}\n", c.case, c.trials, c.checked, c.max_rel_err);
        }
        s
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.trainable_ids() {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
}

/// One trial of one case.
pub fn check_case(case: &str, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { seed, ..Default::default() };
    let batch = rng.random_range(3..6);
    let inp = rng.random_range(1..5);
    let out = rng.random_range(1..5);
    let mut store = ParamStore::new();
    let layer = match case {
        c if c.starts_with("trukan") => {
            let mut cfg = TruKanConfig::new(inp, out, rng.random_range(2..9), rng.random_range(2..4));
            cfg.individual = c.contains("individual");
            if c.contains("learnable") {
                cfg.knot_mode = KnotMode::Learnable;
            }
            cfg.silu_base = c.ends_with("silu_base");
            cfg.bias = rng.random_bool(0.5);
            Layer::Trukan(TruKanLayer::new(&mut store, "l", cfg, &mut rng)?)
        }
        "kan_pbt" | "kan_pbf" => {
            let scales = if case == "kan_pbt" { ScaleMode::Pbt } else { ScaleMode::Pbf };
            let cfg = KanConfig::new(inp, out, rng.random_range(2..7), rng.random_range(2..4), scales);
            Layer::Kan(KanLayer::new(&mut store, "l", cfg, &mut rng)?)
        }
        "sinekan" => {
            let cfg = SineKanConfig { in_dim: inp, out_dim: out, grid: rng.random_range(1..6) };
            Layer::Sinekan(SineKanLayer::new(&mut store, "l", cfg, &mut rng)?)
        }
        "dense" => Layer::Dense(Dense::new(&mut store, "l", inp, out, &mut rng)?),
        "layer_norm" => Layer::LayerNorm(LayerNorm::new(&mut store, "l", inp + 1)),
        "batch_norm" => Layer::BatchNorm(BatchNorm::new(&mut store, "l", inp)),
        "dropout" => Layer::Dropout(Dropout::new(rng.random_range(0.1..0.6))?),
        "relu" => Layer::Relu,
        "mse_loss" => {
            let pred = uniform(&mut rng, batch, out, -2.0, 2.0);
            let target = uniform(&mut rng, batch, out, -2.0, 2.0);
            let r = check_gradients(&[pred], |t, xs| mse_loss(t, &xs[0], &target), &opts)?;
            return Ok((r.max_rel_err, r.checked));
        }
        "cross_entropy" => {
            let classes = out + 1;
            let logits = uniform(&mut rng, batch, classes, -3.0, 3.0);
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
            let r = check_gradients(&[logits], |t, xs| cross_entropy(t, &xs[0], &labels), &opts)?;
            return Ok((r.max_rel_err, r.checked));
        }
        other => return Err(crate::error::Error::invalid("gradsuite", format!("unknown case '{other}'"))),
    };
    randomize(&mut store, &mut rng);
    let width = match &layer {
        Layer::LayerNorm(l) => l.dim,
        _ => inp,
    };
    let x = if case == "relu" {
        let data = (0..batch * width)
            .map(|_| rng.random_range(0.1..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(batch, width, data)?
    } else {
        uniform(&mut rng, batch, width, -0.95, 0.95)
    };
    let r = check_layer(&store, &x, seed, &opts, |ctx, x| layer.forward(ctx, x))?;
    Ok((r.max_rel_err, r.checked))
}

/// Runs every case for `trials` seeds starting at `seed`.
pub fn gradient_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    run_cases(&CASES, trials, seed)
}

/// Runs the named cases for `trials` seeds starting at `seed`.
pub fn run_cases(names: &[&str], trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut cases = Vec::new();
    for &case in names {
        let mut res = CaseResult { case: case.to_string(), trials, max_rel_err: 0.0, checked: 0 };
        for t in 0..trials as u64 {
            let (err, n) = check_case(case, seed.wrapping_add(t))?;
            res.max_rel_err = res.max_rel_err.max(err);
            res.checked += n;
        }
        cases.push(res);
    }
    Ok(SuiteReport { cases, elapsed_s: start.elapsed().as_secs_f64() })
}
