use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use trukan_core::layers::kan::{KanConfig, ScaleMode};
use trukan_core::layers::{Checkpoint, Network, ParamRole};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.json")
}

fn trukan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trukan")).args(args).env_remove("TRUKAN_OUT").output().expect("spawn trukan")
}

fn ok(args: &[&str]) -> Output {
    let out = trukan(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toy_train_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = toy_config();
    for dir in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--set", "train.seed=7", "--out", s(dir)]);
    }
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["status"], "ok");
    assert_eq!(ma["seed"], 7);
    assert!(ma["final_loss"].is_f64());
    assert_eq!(ma["final_loss"], mb["final_loss"]);
    assert_eq!(ma["deterministic_hash"], mb["deterministic_hash"]);
    assert_eq!(ma["network_hash"], mb["network_hash"]);
    let metrics = json(&a.join("metrics.json"));
    assert!(metrics["train"]["rmse"].as_f64().unwrap() <= 0.1, "{metrics}");
    assert_eq!(metrics["params"]["total"], 67);
    let lines = std::fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1000);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["step", "epoch", "lr", "loss", "wall_ms"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn effective_config_reproduces_the_manifest_hash() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&toy_config()), "--set", "train.epochs=50", "--seed", "3", "--out", s(&a)]);
    ok(&["train", "--config", s(&a.join("effective_config.json")), "--out", s(&b)]);
    assert_eq!(json(&a.join("manifest.json"))["deterministic_hash"], json(&b.join("manifest.json"))["deterministic_hash"]);
    assert_eq!(json(&a.join("effective_config.json")), json(&b.join("effective_config.json")));
}

#[test]
fn seeds_change_the_run() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = toy_config();
    ok(&["train", "--config", s(&cfg), "--set", "train.epochs=20", "--seed", "1", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--set", "train.epochs=20", "--seed", "2", "--out", s(&b)]);
    assert_ne!(json(&a.join("manifest.json"))["network_hash"], json(&b.join("manifest.json"))["network_hash"]);
}

#[test]
fn gradcheck_all_passes() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["gradcheck", "--all", "--out", s(tmp.path())]);
    let table = String::from_utf8_lossy(&out.stdout);
    for case in ["trukan_shared_fixed", "kan_pbf", "sinekan", "cross_entropy", "mse_loss"] {
        assert!(table.contains(case), "{table}");
    }
    let m = json(&tmp.path().join("manifest.json"));
    assert!(m["max_rel_err"].as_f64().unwrap() < 1e-4);
    let report = json(&tmp.path().join("gradcheck.json"));
    assert!(report["report"]["cases"].as_array().unwrap().iter().all(|c| c["trials"] == 100));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("never");
    let o = trukan(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--no-such-flag"));

    let o = trukan(&["train", "--set", "train.sed=7", "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.sed"), "{}", stderr(&o));

    let o = trukan(&["train", "--set", "train.model.gird=3", "--set", "train.model.kind=trukan", "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.model"), "{}", stderr(&o));

    let o = trukan(&["train", "--config", s(&tmp.path().join("missing.json")), "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));

    let o = trukan(&["eval", "--checkpoint", s(&tmp.path().join("missing.json")), "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));

    let o = trukan(&["bench", "--heads", "mlp", "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trukan-fs"), "{}", stderr(&o));

    let o = trukan(&["bench", "--warmup", "0", "--out", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warmup"), "{}", stderr(&o));

    assert_eq!(trukan(&["--help"]).status.code(), Some(0));
    assert_eq!(trukan(&["--version"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_2_with_failed_manifest() {
    let tmp = TempDir::new().unwrap();
    let o = trukan(&[
        "train",
        "--config",
        s(&toy_config()),
        "--set",
        "train.epochs=5",
        "--set",
        "train.schedule.kind=constant",
        "--set",
        r#"train.lr={"preset":"single","lr":1e300}"#,
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
    let m = json(&tmp.path().join("manifest.json"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_trukan"))
        .args(["gradcheck", "--case", "dense", "--trials", "2"])
        .env("TRUKAN_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("gradcheck/manifest.json").exists());
}

#[test]
fn json_logs_are_line_delimited_json() {
    let tmp = TempDir::new().unwrap();
    let o = ok(&["--json-logs", "gradcheck", "--case", "relu", "--trials", "2", "--out", s(tmp.path())]);
    let err = stderr(&o);
    assert!(!err.trim().is_empty());
    for line in err.lines() {
        let v: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert!(v["level"].is_string() && v["msg"].is_string());
    }
}

#[test]
fn train_eval_prune_curves_pipeline() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("train");
    ok(&["train", "--config", s(&toy_config()), "--out", s(&run)]);
    let ck = run.join("checkpoint.json");

    let eval = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ck), "--out", s(&eval)]);
    let trained = json(&run.join("metrics.json"));
    assert_eq!(json(&eval.join("eval.json"))["train"], trained["train"]);

    let pruned = tmp.path().join("prune");
    ok(&["prune", "--checkpoint", s(&ck), "--threshold", "0.3", "--out", s(&pruned)]);
    let r = json(&pruned.join("prune_report.json"));
    let (before, after) = (r["params_before"].as_u64().unwrap(), r["params_after"].as_u64().unwrap());
    assert_eq!(before, 67);
    assert!(after < before);
    let again = tmp.path().join("prune2");
    ok(&["prune", "--checkpoint", s(&pruned.join("checkpoint.json")), "--threshold", "0.3", "--out", s(&again)]);
    assert_eq!(json(&again.join("prune_report.json"))["params_after"].as_u64().unwrap(), after);

    let curves = tmp.path().join("curves");
    ok(&["export-curves", "--checkpoint", s(&ck), "--layer", "0", "--edge-in", "1", "--samples", "21", "--range=-1,1", "--out", s(&curves)]);
    let manifest = json(&curves.join("curves.json"));
    assert_eq!(manifest["edges"].as_array().unwrap().len(), 3);
    assert!(json(&curves.join("manifest.json"))["max_decomposition_error"].as_f64().unwrap() < 1e-10);
    assert!(curves.join("edge_0_2_1.svg").exists());
    let csv = std::fs::read_to_string(curves.join("curves.csv")).unwrap();
    assert!(csv.starts_with("edge_layer,edge_out,edge_in,x,series,value"));
}

fn kan_checkpoint(path: &Path, zero: bool) {
    let mut net = Network::kan_stack(&[2, 3, 1], &KanConfig::new(1, 1, 6, 3, ScaleMode::Pbt), 4).unwrap();
    if zero {
        for (id, p) in net.store.clone().iter() {
            if matches!(p.role, ParamRole::SplineCoeffs | ParamRole::BaseWeights) {
                net.store.value_mut(id).data_mut().fill(0.0);
            }
        }
    }
    Checkpoint::new(net).save(path).unwrap();
}

#[test]
fn convert_basis_reports_deviation() {
    let tmp = TempDir::new().unwrap();
    let ck = tmp.path().join("kan.json");
    kan_checkpoint(&ck, false);
    let out = tmp.path().join("conv");
    ok(&["convert-basis", "--checkpoint", s(&ck), "--samples", "1000", "--out", s(&out)]);
    let r = json(&out.join("conversion_report.json"));
    assert!(r["max_abs_dev"].as_f64().unwrap() < 1e-8, "{r}");
    let converted = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    assert!(converted.network.layers.iter().all(|l| l.name() == "trukan_shared"));

    let zero = tmp.path().join("zero.json");
    kan_checkpoint(&zero, true);
    let out = tmp.path().join("conv0");
    ok(&["convert-basis", "--checkpoint", s(&zero), "--out", s(&out)]);
    assert_eq!(json(&out.join("conversion_report.json"))["max_abs_dev"].as_f64().unwrap(), 0.0);

    let o = trukan(&["convert-basis", "--checkpoint", s(&ck), "--samples", "1", "--out", s(&tmp.path().join("bad"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_writes_reports() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&[
        "bench",
        "--heads",
        "kan-pbf,trukan-fs,trukan-fi,sinekan",
        "--set",
        r#"bench.shape={"in_dim":16,"out_dim":8,"batch":8,"grid":4,"order":3}"#,
        "--warmup",
        "1",
        "--steps",
        "2",
        "--trials",
        "1",
        "--out",
        s(tmp.path()),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("trukan-fi"));
    let csv = std::fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let report = json(&tmp.path().join("bench.json"));
    assert_eq!(report["schema_version"], 1);
    assert!(report["reports"].as_array().unwrap().iter().all(|r| r["peak_alloc_bytes"].is_u64()));
}
