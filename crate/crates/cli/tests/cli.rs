use std::path::Path;
use std::process::{Command, Output};

use pheno_core::runs::RunConfig;
use pheno_core::synthgen::{CohortConfig, GenotypeSpec, SynthConfig};

fn pheno(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pheno"));
    c.args(args).env_remove("PHENO_LOG");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    pheno(args, &[]).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One 12-session cohort with short sessions and a matching quick run
/// config.
fn small_inputs(dir: &Path) -> (String, String) {
    let mut c = CohortConfig::new(
        "mini",
        vec![GenotypeSpec::new("WT", 4), GenotypeSpec::new("HET", 4), GenotypeSpec::new("HOM", 4)],
        0,
    );
    c.session_frames = 320;
    let synth = dir.join("synth.toml");
    std::fs::write(&synth, SynthConfig { cohorts: vec![c] }.to_toml().unwrap()).unwrap();
    let mut run = RunConfig::with_seed(3);
    run.pretrain.epochs = 1;
    run.stage1.max_epochs = 2;
    run.stage2.max_epochs = 1;
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, run.to_toml().unwrap()).unwrap();
    (s(&synth).to_string(), s(&cfg).to_string())
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_one_with_usage_text() {
    let out = pheno(&["frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["eval", "--data", "d", "--out", "o", "--seed", "1"]), 1);
    assert_eq!(code(&["synth", "--out", "o", "--seed", "1", "--bogus"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let bad_log = pheno(&["split", "--data", "d", "--out", "o", "--seed", "1"], &[("PHENO_LOG", "loud")]);
    assert_eq!(bad_log.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (synth, _) = small_inputs(dir.path());
    for out in ["a", "b"] {
        assert_eq!(code(&["synth", "--config", &synth, "--out", s(&dir.path().join(out)), "--seed", "7"]), 0);
    }
    let strip = |root: &str| -> Vec<(String, Vec<u8>)> {
        files(&dir.path().join(root))
            .into_iter()
            .map(|(p, b)| (p.replacen(s(&dir.path().join(root)), "", 1), b))
            .collect()
    };
    let (a, b) = (strip("a"), strip("b"));
    assert_eq!(a.len(), 14, "12 sessions, cohort.toml, synth.toml");
    assert_eq!(a, b);
}

#[test]
fn malformed_session_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("x.pose"), "not a session\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["split", "--data", s(&data), "--out", s(&out), "--seed", "1"]), 2);
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (synth, _) = small_inputs(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&["synth", "--config", &synth, "--out", s(&data), "--seed", "7"]), 0);
    let mut run = RunConfig::with_seed(3);
    run.pretrain.epochs = 0;
    run.stage1.lr = 1e38;
    let cfg = dir.path().join("hot.toml");
    std::fs::write(&cfg, run.to_toml().unwrap()).unwrap();
    let out = dir.path().join("out");
    let args = ["train-behavior", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--seed", "3"];
    assert_eq!(code(&args), 3);
}

#[test]
fn staged_pipeline_populates_every_report_section() {
    let dir = tempfile::tempdir().unwrap();
    let (synth, cfg) = small_inputs(dir.path());
    let p = |n: &str| dir.path().join(n).display().to_string();
    assert_eq!(code(&["synth", "--config", &synth, "--out", &p("data"), "--seed", "7"]), 0);
    let common = ["--config", cfg.as_str(), "--data", &p("data"), "--seed", "3"];
    let run = |cmd: &str, out: &str, ckpt: Option<&str>| {
        let mut args = vec![cmd, "--out", out];
        args.extend_from_slice(&common);
        if let Some(c) = ckpt {
            args.extend_from_slice(&["--checkpoint", c]);
        }
        code(&args)
    };
    assert_eq!(run("train-behavior", &p("s1"), None), 0);
    assert_eq!(run("finetune-genotype", &p("s2"), Some(&p("s1/checkpoint"))), 0);
    assert_eq!(run("eval", &p("ev"), Some(&p("s2/checkpoint"))), 0);

    for d in ["s1", "s2", "ev"] {
        assert!(dir.path().join(d).join("config.toml").exists(), "{d} has no snapshot");
    }
    assert!(dir.path().join("s1/splits/mini.split").exists());
    let text = std::fs::read_to_string(dir.path().join("ev/eval_report.json")).unwrap();
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(r["behavior"]["accuracy"].is_number());
    assert_eq!(r["genotype"]["classes"].as_array().unwrap().len(), 3);
    assert!(r["clustering"]["nmi_vs_behavior"].is_number());
    assert!(r["enrichment_by_behavior"]["mse"].is_number());
    assert_eq!(r["enrichment_by_cluster"]["fractions"].as_array().unwrap().len(), 9);
    assert_eq!(r["manifold"].as_array().unwrap().len(), r["test"]["windows"].as_u64().unwrap() as usize);
}
