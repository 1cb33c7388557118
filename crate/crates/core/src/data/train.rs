//! Mini-batch training loop.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{epoch_batches, Dataset, Targets};
use super::loss::{argmax_rows, cross_entropy, mse_loss, LossKind};
use super::metrics::{metrics, Metrics};
use crate::error::{Error, Result};
use crate::layers::params::apply_updates;
use crate::layers::{Ctx, Grads, ModelSpec, Network, ParamId};
use crate::optim::{build_groups, AdamWConfig, LookAheadConfig, LrPreset, Optimizer, Schedule};
use crate::tensor::Tensor;

fn d_batch() -> usize {
    512
}
fn d_epochs() -> usize {
    30
}
fn d_wd() -> f64 {
    crate::optim::DEFAULT_WEIGHT_DECAY
}
fn d_lookahead() -> Option<LookAheadConfig> {
    Some(LookAheadConfig::default())
}
fn d_true() -> bool {
    true
}
fn d_warmup() -> f64 {
    10.0
}
fn d_min_lr() -> f64 {
    1e-5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    WarmupCosine {
        #[serde(default = "d_warmup")]
        warmup_epochs: f64,
        #[serde(default = "d_min_lr")]
        min_lr: f64,
    },
    Constant,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::WarmupCosine { warmup_epochs: d_warmup(), min_lr: d_min_lr() }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self, epochs: usize) -> Schedule {
        match *self {
            ScheduleConfig::Constant => Schedule::Constant,
            ScheduleConfig::WarmupCosine { warmup_epochs, min_lr } => {
                Schedule::WarmupCosine { warmup_epochs, total_epochs: epochs as f64, min_lr }
            }
        }
    }
}

/// Training hyperparameters. Defaults: batch 512, peak rate 5e-4 with a
/// 10-epoch warmup, AdamW (weight decay 1e-4) under LookAhead, and a
/// cubic, 8-knot model on `(-1, 1)` with dropout 0.1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Rows per step; `0` trains full-batch.
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr: LrPreset,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "d_lookahead")]
    pub lookahead: Option<LookAheadConfig>,
    #[serde(default)]
    pub adam: AdamWConfig,
    /// Inferred from the targets when absent.
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "d_true")]
    pub shuffle: bool,
    /// Evaluate the training split after every epoch.
    #[serde(default = "d_true")]
    pub epoch_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train", "epochs must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("train", "weight_decay must be non-negative"));
        }
        self.schedule.schedule(self.epochs).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Rate of the first parameter group.
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    pub metrics: Option<Metrics>,
}

pub fn resolve_loss(cfg: Option<LossKind>, targets: &Targets) -> Result<LossKind> {
    let natural = match targets {
        Targets::Values(_) => LossKind::Mse,
        Targets::Classes { .. } => LossKind::CrossEntropy,
    };
    match cfg {
        Some(k) if k != natural => {
            Err(Error::invalid("train", format!("loss {k:?} does not fit {natural:?}-style targets")))
        }
        _ => Ok(natural),
    }
}

/// Parameters of the last layer that owns any; the "head" under the
/// fine-tuning preset.
pub fn head_params(net: &Network) -> Vec<ParamId> {
    net.layers
        .iter()
        .rev()
        .map(|l| l.param_entries())
        .find(|e| !e.is_empty())
        .map(|e| e.into_iter().map(|(id, _)| id).collect())
        .unwrap_or_default()
}

/// Optimizer matching `cfg` for `net`.
pub fn build_optimizer(net: &Network, cfg: &TrainConfig) -> Result<Optimizer> {
    let groups = build_groups(&net.store, cfg.lr, cfg.weight_decay, &head_params(net))?;
    Optimizer::new(&net.store, groups, cfg.adam, cfg.lookahead, cfg.schedule.schedule(cfg.epochs))
}

/// Per-step RNG seed for dropout, derived from the run seed.
fn step_seed(seed: u64, step: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn batch_loss(ctx: &mut Ctx, kind: LossKind, out: &Tensor, targets: &Targets) -> Result<Tensor> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(t)) => mse_loss(&mut ctx.tape, out, t),
        (LossKind::CrossEntropy, Targets::Classes { labels, .. }) => cross_entropy(&mut ctx.tape, out, labels),
        _ => Err(Error::invalid("train", "loss kind does not match targets")),
    }
}

/// Trains `net` on `data` with a fresh optimizer.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainingLog> {
    let mut opt = build_optimizer(net, cfg)?;
    train_with(net, data, cfg, &mut opt, &mut |_| {})
}

/// Training loop with a caller-owned optimizer; `on_step` sees every
/// record as it is produced. Fully deterministic for a fixed seed apart
/// from `wall_ms`.
pub fn train_with(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainingLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    let kind = resolve_loss(cfg.loss, &data.targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainingLog::default();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let batches = epoch_batches(data.len(), cfg.batch_size, cfg.shuffle, &mut rng);
        let per_epoch = batches.len();
        let mut sum = 0.0;
        let mut seen = 0;
        for (b, idx) in batches.iter().enumerate() {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let start = Instant::now();
            let x = data.features.select_rows(idx);
            let y = data.targets.select(idx);
            let (loss, grads, updates) = {
                let mut ctx = Ctx::train(&net.store, step_seed(cfg.seed, step));
                let out = net.forward(&mut ctx, &x)?;
                let loss = batch_loss(&mut ctx, kind, &out, &y)?;
                let value = loss.item()?;
                if value.is_finite() {
                    ctx.tape.backward(&loss)?;
                }
                let (tape, updates) = ctx.into_parts();
                (value, Grads::from_tape(&tape, &net.store), updates)
            };
            let frac_epoch = epoch as f64 + b as f64 / per_epoch as f64;
            let grads_finite = opt
                .groups
                .iter()
                .flat_map(|g| &g.params)
                .all(|&id| grads.get(id).is_none_or(|g| g.iter().all(|v| v.is_finite())));
            if !loss.is_finite() || !grads_finite {
                return Err(divergence(step, loss, opt, &grads, frac_epoch));
            }
            apply_updates(&mut net.store, updates)?;
            let lrs = opt.step(&mut net.store, &grads, frac_epoch)?;
            if !net.store.all_finite() {
                return Err(divergence(step, loss, opt, &grads, frac_epoch));
            }
            let rec = StepRecord {
                step,
                epoch,
                lr: lrs.first().copied().unwrap_or(0.0),
                loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            on_step(&rec);
            log.steps.push(rec);
            sum += loss;
            seen += 1;
            step += 1;
        }
        let eval = if cfg.epoch_metrics { Some(evaluate(net, data)?) } else { None };
        log.epochs.push(EpochRecord { epoch, mean_loss: sum / seen.max(1) as f64, eval });
    }
    Ok(log)
}

fn divergence(step: usize, loss: f64, opt: &Optimizer, grads: &Grads, epoch: f64) -> Error {
    let lrs = opt.lrs(epoch);
    let parts: Vec<String> = opt
        .groups
        .iter()
        .zip(&lrs)
        .map(|(g, lr)| format!("{} (lr {lr:.3e}, grad norm {:.3e})", g.name, grads.norm(&g.params)))
        .collect();
    Error::Diverged { step, diagnostic: format!("loss {loss}; {}", parts.join(", ")) }
}

const EVAL_CHUNK: usize = 4096;

/// Loss plus RMSE (regression) or accuracy and macro F1 (classification),
/// computed in evaluation mode.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let kind = resolve_loss(None, &data.targets)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = data.features.select_rows(chunk);
        let y = data.targets.select(chunk);
        let mut ctx = Ctx::eval(&net.store);
        let out = net.forward(&mut ctx, &x)?;
        let l = batch_loss(&mut ctx, kind, &out, &y)?.item()?;
        loss_sum += l * chunk.len() as f64;
        if kind == LossKind::CrossEntropy {
            preds.extend(argmax_rows(&out));
        }
    }
    let loss = loss_sum / data.len() as f64;
    Ok(match &data.targets {
        Targets::Values(_) => EvalReport { loss, rmse: Some(loss.sqrt()), metrics: None },
        Targets::Classes { labels, names } => {
            EvalReport { loss, rmse: None, metrics: Some(metrics(&preds, labels, names.len())?) }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate::gen_alignment_target;

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 0,
            epochs: 40,
            lr: LrPreset::Single { lr: 1e-2 },
            model: ModelSpec::toy_trukan(),
            epoch_metrics: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 512);
        assert_eq!(c.lr, LrPreset::Single { lr: 5e-4 });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epocs": 3}"#).is_err());
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let data = gen_alignment_target(64, 0).unwrap();
        let mut cfg = toy_cfg();
        cfg.lr = LrPreset::Single { lr: 0.0 };
        let mut net = cfg.model.build(2, 1, 0).unwrap();
        let log = train(&mut net, &data, &cfg).unwrap();
        let l = log.losses();
        assert!(l.iter().all(|&v| v == l[0]), "{:?}", &l[..5]);
    }

    #[test]
    fn same_seed_same_losses() {
        let data = gen_alignment_target(64, 0).unwrap();
        let cfg = TrainConfig { batch_size: 16, ..toy_cfg() };
        let run = || {
            let mut net = cfg.model.build(2, 1, 3).unwrap();
            let log = train(&mut net, &data, &cfg).unwrap();
            (log.losses(), net.content_hash().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss() {
        let data = gen_alignment_target(128, 1).unwrap();
        let cfg = toy_cfg();
        let mut net = cfg.model.build(2, 1, 0).unwrap();
        let log = train(&mut net, &data, &cfg).unwrap();
        assert!(log.final_loss().unwrap() < log.steps[0].loss);
    }

    #[test]
    fn nan_aborts_with_diagnostic() {
        let mut data = gen_alignment_target(16, 0).unwrap();
        data.features.data_mut()[0] = f64::NAN;
        let cfg = toy_cfg();
        let mut net = cfg.model.build(2, 1, 0).unwrap();
        match train(&mut net, &data, &cfg).unwrap_err() {
            Error::Diverged { step, diagnostic } => {
                assert_eq!(step, 0);
                assert!(diagnostic.contains("grad norm") && diagnostic.contains("lr"), "{diagnostic}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn max_steps_stops_early() {
        let data = gen_alignment_target(32, 0).unwrap();
        let cfg = TrainConfig { max_steps: Some(7), ..toy_cfg() };
        let mut net = cfg.model.build(2, 1, 0).unwrap();
        assert_eq!(train(&mut net, &data, &cfg).unwrap().steps.len(), 7);
    }

    #[test]
    fn mismatched_loss_rejected() {
        let data = gen_alignment_target(8, 0).unwrap();
        let cfg = TrainConfig { loss: Some(LossKind::CrossEntropy), ..toy_cfg() };
        let mut net = cfg.model.build(2, 1, 0).unwrap();
        assert!(train(&mut net, &data, &cfg).is_err());
    }
}
