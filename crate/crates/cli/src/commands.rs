//! Subcommand implementations. Each writes its artifacts through [`Run`].

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use trukan_core::analysis::{
    bench, comparison_table, export_curves, gradient_suite, prune, reports_csv, reports_json, run_cases, write_curves,
    BenchConfig, BenchModel, CASES,
};
use trukan_core::data::{build_optimizer, evaluate, train_with, NormStats};
use trukan_core::layers::convert::kan_to_trukan;
use trukan_core::layers::Checkpoint;

use crate::config::{self, DataConfig, Loaded, Prepared};
use crate::run::Run;
use crate::{Cli, CliError, Command};

const SEED_KEYS: [&str; 3] = ["train.seed", "bench.timing.seed", "gradcheck.seed"];

fn out_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os("TRUKAN_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command)
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(s) = g.seed {
        overrides.extend(SEED_KEYS.iter().map(|k| format!("{k}={s}")));
    }
    let loaded = config::load(g.config.as_deref(), &overrides)?;
    let name = cli.command.name();
    let cfg = &loaded.config;
    let seed = match &cli.command {
        Command::Bench { .. } => Some(cfg.bench.timing.seed),
        Command::Gradcheck { .. } => Some(cfg.gradcheck.seed),
        Command::Train => Some(cfg.train.seed),
        _ => None,
    };
    let mut run = Run::create(out_dir(g.out.as_deref(), name), name, seed)?;
    log::info!("{name}: writing to {}", run.dir.display());
    run.write_json("effective_config.json", &loaded.effective, true)?;
    let result = match &cli.command {
        Command::Train => train(&loaded, &mut run),
        Command::Eval { checkpoint } => eval(&loaded, checkpoint, &mut run),
        Command::Bench { heads, warmup, steps, trials } => {
            let mut timing = cfg.bench.timing.clone();
            timing.warmup = warmup.unwrap_or(timing.warmup);
            timing.steps = steps.unwrap_or(timing.steps);
            timing.trials = trials.unwrap_or(timing.trials);
            let models = if heads.is_empty() { cfg.bench.models.clone() } else { heads.clone() };
            run_bench(&loaded, &models, &timing, &mut run)
        }
        Command::Prune { checkpoint, threshold } => {
            run_prune(&loaded, checkpoint, threshold.unwrap_or(cfg.prune.threshold), &mut run)
        }
        Command::ExportCurves { checkpoint, layer, edge_out, edge_in, include_removed, samples, range } => {
            let mut c = cfg.curves.clone();
            c.filter.layer = layer.or(c.filter.layer);
            c.filter.out = edge_out.or(c.filter.out);
            c.filter.inp = edge_in.or(c.filter.inp);
            c.filter.include_removed |= include_removed;
            c.n_samples = samples.unwrap_or(c.n_samples);
            c.range = range.unwrap_or(c.range);
            curves(checkpoint, &c, &mut run)
        }
        Command::Gradcheck { all, cases, trials } => {
            let names: Vec<&str> =
                if *all || cases.is_empty() { CASES.to_vec() } else { cases.iter().map(String::as_str).collect() };
            gradcheck(&loaded, &names, trials.unwrap_or(cfg.gradcheck.trials), &mut run)
        }
        Command::ConvertBasis { checkpoint, samples } => {
            convert(checkpoint, samples.unwrap_or(cfg.convert.n_samples), &mut run)
        }
    };
    match result {
        Ok(()) => {
            run.finish(None)?;
            Ok(())
        }
        Err(e) => {
            if let Err(m) = run.finish(Some(&e)) {
                log::warn!("could not write manifest: {m}");
            }
            Err(e)
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::validation(format!("checkpoint {}: {e}", path.display())))
}

fn meta<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<Option<T>, CliError> {
    match ck.metadata.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::validation(format!("checkpoint metadata.{key}: {e}"))),
    }
}

/// The checkpoint's data, prepared with its stored normalization. A `data`
/// section given on the command line takes precedence over the stored one.
fn checkpoint_data(loaded: &Loaded, ck: &Checkpoint) -> Result<Prepared, CliError> {
    let data: DataConfig = match (loaded.explicit.get("data"), meta(ck, "data")?) {
        (None, Some(d)) => d,
        _ => loaded.config.data.clone(),
    };
    let stats: Option<NormStats> = meta(ck, "norm_stats")?;
    let p = data.prepare(stats.as_ref())?;
    let net = &ck.network;
    if p.train.dim() != net.in_dim || p.train.targets.width() != net.out_dim {
        return Err(CliError::validation(format!(
            "data is {}→{} but the checkpoint network is {}→{}",
            p.train.dim(),
            p.train.targets.width(),
            net.in_dim,
            net.out_dim
        )));
    }
    Ok(p)
}

fn train(loaded: &Loaded, run: &mut Run) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let data = cfg.data.prepare(None)?;
    let ds = &data.train;
    log::info!("data: {} rows, {} features, target width {}", ds.len(), ds.dim(), ds.targets.width());
    let mut net = cfg.train.model.build(ds.dim(), ds.targets.width(), cfg.train.seed)?;
    log::info!("model: {} trainable parameters", net.param_count().total);
    let mut opt = build_optimizer(&net, &cfg.train)?;
    let mut lines = String::new();
    let result = train_with(&mut net, ds, &cfg.train, &mut opt, &mut |rec| {
        log::trace!("step {} epoch {} lr {:.3e} loss {:.6e}", rec.step, rec.epoch, rec.lr, rec.loss);
        if let Ok(s) = serde_json::to_string(rec) {
            lines.push_str(&s);
            lines.push('\n');
        }
    });
    run.write("train_log.jsonl", lines.as_bytes(), false)?;
    let log = result?;
    for e in &log.epochs {
        log::debug!("epoch {} mean loss {:.6e}", e.epoch, e.mean_loss);
    }
    let final_loss = log.final_loss().ok_or_else(|| CliError::runtime("no training steps ran"))?;
    let train_eval = evaluate(&net, ds)?;
    let test_eval = data.test.as_ref().map(|t| evaluate(&net, t)).transpose()?;
    if !train_eval.loss.is_finite() {
        return Err(CliError::runtime(format!(
            "training diverged: evaluation loss {} after {} steps (final step loss {final_loss:e})",
            train_eval.loss,
            log.steps.len()
        )));
    }
    let params = net.param_count();
    run.write_json("losses.json", &log.losses(), true)?;
    run.write_json(
        "metrics.json",
        &json!({
            "final_loss": final_loss,
            "steps": log.steps.len(),
            "params": params,
            "train": train_eval,
            "test": test_eval,
            "epochs": log.epochs,
        }),
        true,
    )?;
    let network_hash = net.content_hash()?;
    let mut ck = Checkpoint::new(net);
    ck.optimizer = Some(serde_json::to_value(&opt)?);
    ck.metadata.insert("data".into(), serde_json::to_value(&cfg.data)?);
    ck.metadata.insert("norm_stats".into(), serde_json::to_value(&data.stats)?);
    ck.metadata.insert("train".into(), serde_json::to_value(&cfg.train)?);
    ck.metadata.insert("final_loss".into(), final_loss.into());
    ck.metadata.insert("steps".into(), log.steps.len().into());
    run.write("checkpoint.json", ck.to_json()?.as_bytes(), true)?;
    run.set("final_loss", final_loss);
    run.set("steps", log.steps.len());
    run.set("network_hash", &network_hash);
    println!("trained {} steps, final loss {final_loss:.6e}, {} parameters", log.steps.len(), params.total);
    println!("train: {}", serde_json::to_string(&train_eval)?);
    if let Some(t) = &test_eval {
        println!("test:  {}", serde_json::to_string(t)?);
    }
    Ok(())
}

fn eval(loaded: &Loaded, checkpoint: &Path, run: &mut Run) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let data = checkpoint_data(loaded, &ck)?;
    let train_eval = evaluate(&ck.network, &data.train)?;
    let test_eval = data.test.as_ref().map(|t| evaluate(&ck.network, t)).transpose()?;
    run.write_json(
        "eval.json",
        &json!({
            "checkpoint": checkpoint,
            "network_hash": ck.network.content_hash()?,
            "params": ck.network.param_count(),
            "train": train_eval,
            "test": test_eval,
        }),
        true,
    )?;
    println!("train: {}", serde_json::to_string(&train_eval)?);
    if let Some(t) = &test_eval {
        println!("test:  {}", serde_json::to_string(t)?);
    }
    Ok(())
}

fn run_bench(
    loaded: &Loaded,
    models: &[BenchModel],
    timing: &BenchConfig,
    run: &mut Run,
) -> Result<(), CliError> {
    let shape = &loaded.config.bench.shape;
    timing.validate()?;
    log::info!(
        "bench: {} models, {}→{} batch {}, {} trials of {} steps after {} warmup",
        models.len(),
        shape.in_dim,
        shape.out_dim,
        shape.batch,
        timing.trials,
        timing.steps,
        timing.warmup
    );
    let reports = bench(models, shape, timing)?;
    run.write("bench.csv", reports_csv(&reports).as_bytes(), false)?;
    run.write("bench.json", reports_json(&reports, shape, timing)?.as_bytes(), false)?;
    print!("{}", comparison_table(&reports));
    Ok(())
}

fn run_prune(loaded: &Loaded, checkpoint: &Path, threshold: f64, run: &mut Run) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let data = checkpoint_data(loaded, &ck)?;
    let (net, report) = prune(&ck.network, &data.train.features, threshold)?;
    let mut out = Checkpoint::new(net);
    out.metadata = ck.metadata.clone();
    out.metadata.insert("pruned_from".into(), ck.network.content_hash()?.into());
    out.metadata.insert("prune_threshold".into(), threshold.into());
    run.write("checkpoint.json", out.to_json()?.as_bytes(), true)?;
    run.write_json("prune_report.json", &report, true)?;
    run.set("params_before", report.params_before);
    run.set("params_after", report.params_after);
    run.set("network_hash", out.network.content_hash()?);
    println!(
        "threshold {threshold}: removed {} edges ({} below threshold, {} disconnected), parameters {} -> {}",
        report.edges_removed(),
        report.removed.len(),
        report.cascaded.len(),
        report.params_before,
        report.params_after
    );
    Ok(())
}

fn curves(checkpoint: &Path, c: &config::CurvesSection, run: &mut Run) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let curves = export_curves(&ck.network, &c.filter, c.n_samples, c.range)?;
    let dev = curves.iter().map(|c| c.decomposition_error()).fold(0.0, f64::max);
    for p in write_curves(&curves, &run.dir)? {
        run.adopt(&p, true)?;
    }
    run.set("edges", curves.len());
    run.set("max_decomposition_error", dev);
    println!("exported {} edges, max |composite - sum of parts| {dev:.3e}", curves.len());
    Ok(())
}

fn gradcheck(loaded: &Loaded, names: &[&str], trials: usize, run: &mut Run) -> Result<(), CliError> {
    let g = &loaded.config.gradcheck;
    if trials == 0 {
        return Err(CliError::validation("gradcheck: trials must be positive"));
    }
    let report = if names.len() == CASES.len() && names.iter().zip(CASES).all(|(a, b)| *a == b) {
        gradient_suite(trials, g.seed)?
    } else {
        run_cases(names, trials, g.seed)?
    };
    run.write_json("gradcheck.json", &json!({"tolerance": g.tolerance, "report": report}), false)?;
    run.set("max_rel_err", report.max_rel_err());
    print!("{}", report.table());
    println!("max rel err {:.3e} (tolerance {:.0e}) in {:.2} s", report.max_rel_err(), g.tolerance, report.elapsed_s);
    if !report.passes(g.tolerance) {
        return Err(CliError::runtime(format!(
            "gradient check failed: max rel err {:.3e} >= {:.0e}",
            report.max_rel_err(),
            g.tolerance
        )));
    }
    Ok(())
}

fn convert(checkpoint: &Path, n_samples: usize, run: &mut Run) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let (net, report) = kan_to_trukan(&ck.network, n_samples)?;
    let mut out = Checkpoint::new(net);
    out.metadata = ck.metadata.clone();
    out.metadata.insert("converted_from".into(), ck.network.content_hash()?.into());
    run.write("checkpoint.json", out.to_json()?.as_bytes(), true)?;
    run.write_json("conversion_report.json", &report, true)?;
    run.set("max_abs_dev", report.max_abs_dev);
    run.set("network_hash", out.network.content_hash()?);
    for l in &report.layers {
        println!(
            "layer {}: domain [{}, {}], condition {:.3e}, max |deviation| {:.3e}",
            l.layer, l.domain.0, l.domain.1, l.condition, l.max_abs_dev
        );
    }
    println!("max |deviation| {:.3e} over {} samples per layer", report.max_abs_dev, report.n_samples);
    Ok(())
}
