use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freqadv_cli::output::RunManifest;

fn freqadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqadv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = freqadv(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small synthetic setup that trains in well under a second.
const TINY: &str = "\
seed = 3

[data]
train_per_class = 32
test_per_class = 8

[train]
epochs = 2
lr = 0.02
eval_every = 2
eval_samples = 16

[attack]
epsilon = 8/255
alpha = 2/255
steps = 2
samples = 16

[analysis]
samples = 8
";

/// The setup used for the end-to-end frequency pipeline.
const PIPELINE: &str = "\
seed = 1

[model]
init_seed = 1

[train]
epochs = 15
lr = 0.02
weight_decay = 0
eval_every = 15
eval_samples = 200

[attack]
epsilon = 8/255
alpha = 2/255
steps = 10
samples = 200

[analysis]
samples = 200
";

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file in `dir` is listed in its manifest and vice versa.
fn assert_no_orphans(dir: &Path) {
    let on_disk: BTreeSet<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let listed: BTreeSet<String> = manifest(dir).files.into_iter().collect();
    assert_eq!(on_disk, listed);
}

#[test]
fn lambda_sweep_emits_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", &format!("{TINY}\n[sweep]\nlambdas = 0, 0.5, 1\n"));
    let out = dir.path().join("sweep");
    run_ok(&["sweep", "lambda", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let (header, rows) = read_csv(&out.join("lambda_sweep.csv"));
    assert_eq!(header, ["lambda", "clean_acc", "adv_acc"]);
    assert_eq!(rows.len(), 3);
    let lambdas: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(lambdas, [0.0, 0.5, 1.0]);
    for r in &rows {
        for v in &r[1..] {
            let acc: f64 = v.parse().unwrap();
            assert!((0.0..=100.0).contains(&acc));
        }
    }
    assert_no_orphans(&out);
    assert_eq!(manifest(&out).command, "sweep");
}

#[test]
fn attack_on_absent_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", TINY);
    let missing = dir.path().join("nope.ckpt");
    let out = freqadv(&["attack", "--config", &cfg, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    let out = freqadv(&[
        "analyze",
        "occlusion",
        "--config",
        &cfg,
        "--checkpoint",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_and_usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "[attack]\nepsilon = 0\n");
    let out = freqadv(&["train", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let unknown = write_config(dir.path(), "unknown.cfg", "[train]\nepoch = 3\n");
    let out = freqadv(&["train", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));

    assert_eq!(freqadv(&["train"]).status.code(), Some(1));
    assert_eq!(freqadv(&["frobnicate"]).status.code(), Some(1));
    let cfg = write_config(dir.path(), "c.cfg", TINY);
    assert_eq!(freqadv(&["attack", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(freqadv(&["--help"]).status.code(), Some(0));
}

#[test]
fn same_config_and_seed_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", TINY);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = out.to_str().unwrap().to_string();
        run_ok(&["train", "--config", &cfg, "--out", &o]);
        let ck = out.join("model.ckpt").display().to_string();
        run_ok(&["attack", "--config", &cfg, "--out", &o, "--checkpoint", &ck]);
        run_ok(&[
            "analyze",
            "occlusion",
            "--config",
            &cfg,
            "--out",
            &o,
            "--checkpoint",
            &ck,
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    for f in [
        "attack.csv",
        "attack_summary.csv",
        "occlusion.csv",
        "occlusion.pgm",
        "model.ckpt",
    ] {
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // Wall-clock seconds are the only column allowed to differ.
    let strip = |p: PathBuf| -> Vec<Vec<String>> {
        let (h, rows) = read_csv(&p);
        assert_eq!(h.last().unwrap(), "seconds");
        rows.into_iter()
            .map(|mut r| {
                r.pop();
                r
            })
            .collect()
    };
    assert_eq!(strip(a.join("train_log.csv")), strip(b.join("train_log.csv")));

    let c = dir.path().join("c");
    run_ok(&["train", "--config", &cfg, "--seed", "4", "--out", c.to_str().unwrap()]);
    assert!(std::fs::read(a.join("model.ckpt")).unwrap() != std::fs::read(c.join("model.ckpt")).unwrap());
    assert_ne!(manifest(&a).config_hash, manifest(&c).config_hash);
    assert_eq!(manifest(&c).seed, 4);
}

#[test]
fn heatmap_leaves_missing_models_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", TINY);
    let m = dir.path().join("m");
    run_ok(&["train", "--config", &cfg, "--out", m.to_str().unwrap()]);
    let ck = m.join("model.ckpt").display().to_string();
    let gone = dir.path().join("gone.ckpt").display().to_string();
    let h = dir.path().join("h");
    run_ok(&[
        "analyze",
        "heatmap",
        "--config",
        &cfg,
        "--out",
        h.to_str().unwrap(),
        "--checkpoint",
        &ck,
        "--checkpoint",
        &gone,
    ]);
    let (header, rows) = read_csv(&h.join("heatmap.csv"));
    assert_eq!(header, ["model", "b0-15", "b16-31", "b32-47", "b48-63"]);
    assert_eq!(rows.len(), 2);
    assert!(rows[0][1..].iter().all(|c| c.parse::<f64>().is_ok()));
    assert!(rows[1][1..].iter().all(String::is_empty));
    assert_no_orphans(&h);

    let out = freqadv(&["analyze", "heatmap", "--config", &cfg, "--checkpoint", &gone]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn drop_and_eta_sweeps_emit_full_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.cfg",
        &format!("{TINY}\n[sweep]\ndrop_rates = 0, 1\ndrop_bands = 4\neta_k = 2, 4\n"),
    );
    let out = dir.path().join("s");
    let o = out.to_str().unwrap();
    run_ok(&["sweep", "drop", "--config", &cfg, "--out", o]);
    let (header, rows) = read_csv(&out.join("drop_grid.csv"));
    assert_eq!(header, ["drop_rate", "band", "clean_acc"]);
    assert_eq!(rows.len(), 8);
    run_ok(&["sweep", "eta", "--config", &cfg, "--out", o]);
    let (header, rows) = read_csv(&out.join("eta_sweep.csv"));
    assert_eq!(header, ["k", "reversed", "clean_acc", "adv_acc"]);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(
        keys,
        [("2", "false"), ("2", "true"), ("4", "false"), ("4", "true")].map(|(a, b)| (a.to_string(), b.to_string()))
    );
}

#[test]
fn synthetic_pipeline_finds_vulnerability_minimum_in_informative_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", PIPELINE);
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    run_ok(&["train", "--config", &cfg, "--out", o]);
    let ck = out.join("model.ckpt").display().to_string();

    run_ok(&["attack", "--config", &cfg, "--out", o, "--checkpoint", &ck]);
    let (_, summary) = read_csv(&out.join("attack_summary.csv"));
    let metric = |k: &str| -> f64 { summary.iter().find(|r| r[0] == k).unwrap()[1].parse().unwrap() };
    assert!(metric("clean_acc") >= 90.0, "clean {}", metric("clean_acc"));
    assert!(metric("robust_acc") < metric("clean_acc"));
    assert!(metric("mean_linf") <= 8.0 / 255.0 + 1e-12);

    run_ok(&[
        "analyze",
        "vulnerability",
        "--config",
        &cfg,
        "--out",
        o,
        "--checkpoint",
        &ck,
    ]);
    let (header, rows) = read_csv(&out.join("vulnerability.csv"));
    assert_eq!(header, ["zigzag_index", "value", "n"]);
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().all(|r| r[2] == "200"));
    let values: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let argmin = (0..64).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    assert!((1..=8).contains(&argmin), "minimum at zigzag {argmin}: {values:?}");
    let pgm = std::fs::read(out.join("vulnerability.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n") && pgm.len() == 75);
    assert_no_orphans(&out);
}
