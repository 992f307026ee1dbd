//! The `pheno` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 numerical failure. Every run directory receives a
//! `config.toml` snapshot; passing it back with `--config` (and the same
//! inputs) reproduces the run's outputs byte for byte.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pheno_core::dataio::write_split_manifest;
use pheno_core::encoder::{load_bundle, save_bundle, ModelBundle};
use pheno_core::fsutil::{atomic_write, read_to_string, write_json};
use pheno_core::pipeline::{load_cohorts, CohortData};
use pheno_core::runs::{
    attach_manifold, evaluate, joint_train, prepare, prepare_with_norm, pretrain_encoder, run_baseline,
    run_behavior, run_genotype, split_cohorts, starting_encoder, transfer_grid, BaselineMethod, GenotypeTarget,
    ProbeTask, RunConfig,
};
use pheno_core::synthgen::{write_cohort, SynthConfig};
use pheno_core::transfer::format_grid;
use pheno_core::{CoreError, ErrorKind};

pub const SNAPSHOT: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoint";
const RUN_CONFIG_KEY: &str = "run_config";

/// Seeds must fit a signed 64-bit TOML integer.
const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Parser)]
#[command(name = "pheno", version, about = "Pose-sequence behavior and genotype phenotyping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Args)]
struct RunArgs {
    /// Run config TOML or a previous run's config.toml snapshot.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory, or a directory of cohort directories.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: u64,
    /// Restrict to one cohort id.
    #[arg(long)]
    cohort: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic cohorts.
    Synth {
        /// Synthesis config TOML; defaults to the three built-in cohorts.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
        seed: u64,
    },
    /// Write each cohort's session split manifest.
    Split(RunArgs),
    /// Masked-patch pretraining of the encoder.
    Pretrain(RunArgs),
    /// Stage 1: behavior head on a frozen encoder.
    TrainBehavior {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this checkpoint's encoder instead of pretraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage 2: genotype head with the encoder unfrozen.
    FinetuneGenotype {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Linear probe on raw, PCA, wavelet or frozen random-encoder features.
    Baseline {
        #[arg(value_parser = ["raw", "pca", "wavelet", "frozen-encoder", "all"])]
        method: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// k-means, 2-D projection and genotype enrichment of embeddings.
    Cluster {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cross-cohort transfer grid.
    Transfer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        label_frac: Option<f64>,
    },
    /// One model over every cohort, with a unified genotype head.
    Joint(RunArgs),
    /// HTTP inference service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = pheno_service::DEFAULT_PORT)]
        port: u16,
        /// Static UI assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Keep uploads here and reload them at startup.
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Inputs recorded next to the run config so a snapshot documents the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub command: String,
    pub inputs: Inputs,
    pub run: RunConfig,
}

/// Reads `--config`: a snapshot, else a bare run config. The seed flag
/// wins; sub-seeds are re-derived only when it differs.
fn run_config(path: Option<&Path>, seed: u64) -> CliResult<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::with_seed(seed),
        Some(p) => {
            let text = read_to_string(p)?;
            match toml::from_str::<Snapshot>(&text) {
                Ok(s) => s.run,
                Err(_) => RunConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?,
            }
        }
    };
    if cfg.seed != seed {
        cfg.reseed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_snapshot(out: &Path, command: &str, inputs: Inputs, run: &RunConfig) -> CliResult<()> {
    let snap = Snapshot {
        command: command.to_string(),
        inputs,
        run: run.clone(),
    };
    let text = toml::to_string(&snap).map_err(|e| usage(format!("serialize snapshot: {e}")))?;
    atomic_write(&out.join(SNAPSHOT), text.as_bytes())?;
    Ok(())
}

fn load_data(run: &RunArgs) -> CliResult<Vec<CohortData>> {
    let cohorts = load_cohorts(&run.data)?;
    match &run.cohort {
        None => Ok(cohorts),
        Some(id) => {
            let known: Vec<String> = cohorts.iter().map(|c| c.cohort_id().to_string()).collect();
            let one: Vec<CohortData> = cohorts.into_iter().filter(|c| c.cohort_id() == id).collect();
            if one.is_empty() {
                return Err(usage(format!("no cohort '{id}' in {} (found {known:?})", run.data.display())));
            }
            Ok(one)
        }
    }
}

fn inputs_of(run: &RunArgs) -> Inputs {
    Inputs {
        data: Some(run.data.display().to_string()),
        cohort: run.cohort.clone(),
        ..Inputs::default()
    }
}

/// Loads a checkpoint and aligns the run config with its architecture and
/// window.
fn load_checkpoint(path: &Path, cfg: &mut RunConfig) -> CliResult<(ModelBundle, String)> {
    let (bundle, hash) = load_bundle(path)?;
    cfg.encoder = bundle.encoder.config;
    cfg.window = bundle.meta.window;
    cfg.validate()?;
    if let Some(v) = bundle.meta.extra.get(RUN_CONFIG_KEY) {
        if v.get("split_seed").and_then(|s| s.as_u64()) != Some(cfg.split_seed) {
            log::warn!("checkpoint was trained with a different split seed; its training sessions may overlap this test split");
        }
    }
    Ok((bundle, hash))
}

fn record_config(bundle: &mut ModelBundle, cfg: &RunConfig) -> CliResult<()> {
    let v = serde_json::to_value(cfg).map_err(|e| usage(e.to_string()))?;
    bundle.meta.extra.insert(RUN_CONFIG_KEY.into(), v);
    Ok(())
}

fn save(out: &Path, bundle: &ModelBundle) -> CliResult<String> {
    let hash = save_bundle(&out.join(CHECKPOINT_DIR), bundle)?;
    println!("checkpoint {hash}");
    Ok(hash)
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: u64) -> CliResult<()> {
    let mut cfg = match config {
        None => SynthConfig::default_with_seed(seed),
        Some(p) => SynthConfig::from_toml(&read_to_string(p)?)?,
    };
    cfg.reseed(seed);
    for c in &cfg.cohorts {
        let sessions = pheno_core::synthgen::generate_cohort(c)?;
        write_cohort(&out.join(&c.cohort_id), c, &sessions)?;
        println!("{}: {} sessions", c.cohort_id, sessions.len());
    }
    atomic_write(&out.join("synth.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(())
}

fn cmd_split(run: &RunArgs) -> CliResult<()> {
    let cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let splits = split_cohorts(&cohorts, cfg.split_seed)?;
    for (c, s) in cohorts.iter().zip(&splits) {
        write_split_manifest(&run.out.join(format!("{}.split", c.cohort_id())), s)?;
        println!("{}: train {} val {} test {}", c.cohort_id(), s.train_sessions.len(), s.val_sessions.len(), s.test_sessions.len());
    }
    write_snapshot(&run.out, "split", inputs_of(run), &cfg)
}

fn write_splits(out: &Path, data: &pheno_core::pipeline::PreparedData) -> CliResult<()> {
    for (c, s) in data.cohorts.iter().zip(&data.splits) {
        write_split_manifest(&out.join("splits").join(format!("{}.split", c.cohort_id)), s)?;
    }
    Ok(())
}

fn base_bundle(encoder: pheno_core::encoder::EncoderModel, data: &pheno_core::pipeline::PreparedData) -> ModelBundle {
    let mut bundle = ModelBundle::new(encoder);
    bundle.norm = Some(data.norm.clone());
    bundle.meta.window = data.window;
    bundle.meta.cohorts = data.cohorts.iter().map(|c| c.cohort_id.clone()).collect();
    bundle
}

fn cmd_pretrain(run: &RunArgs) -> CliResult<()> {
    let cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let data = prepare(&cohorts, &cfg)?;
    let (encoder, recon, losses) = pretrain_encoder(&data, &cfg)?;
    let mut bundle = base_bundle(encoder, &data);
    bundle.recon = Some(recon);
    record_config(&mut bundle, &cfg)?;
    save(&run.out, &bundle)?;
    write_json(&run.out.join("pretrain_history.json"), &serde_json::json!({ "reconstruction_loss": losses }))?;
    write_splits(&run.out, &data)?;
    if let Some(l) = losses.last() {
        println!("final reconstruction loss {l:.6}");
    }
    write_snapshot(&run.out, "pretrain", inputs_of(run), &cfg)
}

fn cmd_train_behavior(run: &RunArgs, checkpoint: Option<&Path>) -> CliResult<()> {
    let mut cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let mut inputs = inputs_of(run);
    let (data, encoder) = match checkpoint {
        Some(p) => {
            let (b, hash) = load_checkpoint(p, &mut cfg)?;
            inputs.checkpoint = Some(p.display().to_string());
            inputs.checkpoint_hash = Some(hash);
            (prepare_with_norm(&cohorts, &cfg, b.norm.clone())?, b.encoder)
        }
        None => {
            let data = prepare(&cohorts, &cfg)?;
            let enc = starting_encoder(&data, &cfg)?;
            (data, enc)
        }
    };
    let (head, outcome) = run_behavior(&encoder, &data, &cfg)?;
    let mut bundle = base_bundle(encoder, &data);
    bundle.behavior_head = Some(head);
    record_config(&mut bundle, &cfg)?;
    attach_manifold(&mut bundle, &data, &cfg)?;
    save(&run.out, &bundle)?;
    write_json(&run.out.join("history.json"), &outcome.history)?;
    write_json(&run.out.join("behavior.json"), &outcome)?;
    write_splits(&run.out, &data)?;
    println!("test behavior accuracy {:.4}", outcome.test_accuracy);
    write_snapshot(&run.out, "train-behavior", inputs, &cfg)
}

/// Cohort target when one cohort is in play, else the unified label set.
fn genotype_target(cohorts: &[CohortData]) -> GenotypeTarget {
    match cohorts {
        [one] => GenotypeTarget::cohort(one.cohort_id()),
        _ => GenotypeTarget::Unified,
    }
}

fn cmd_finetune(run: &RunArgs, checkpoint: &Path) -> CliResult<()> {
    let mut cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let (mut bundle, hash) = load_checkpoint(checkpoint, &mut cfg)?;
    let data = prepare_with_norm(&cohorts, &cfg, bundle.norm.clone())?;
    let target = genotype_target(&cohorts);
    let (head, outcome) = run_genotype(&mut bundle.encoder, &data, &target, &cfg)?;
    bundle.genotype_head = Some(head);
    target.record(&mut bundle);
    record_config(&mut bundle, &cfg)?;
    attach_manifold(&mut bundle, &data, &cfg)?;
    save(&run.out, &bundle)?;
    write_json(&run.out.join("history.json"), &outcome.history)?;
    write_json(&run.out.join("genotype.json"), &outcome)?;
    write_splits(&run.out, &data)?;
    println!(
        "test genotype accuracy {:.4} (chance {:.4}, before fine-tuning {:.4})",
        outcome.test_accuracy, outcome.chance, outcome.test_accuracy_before
    );
    let inputs = Inputs {
        checkpoint: Some(checkpoint.display().to_string()),
        checkpoint_hash: Some(hash),
        ..inputs_of(run)
    };
    write_snapshot(&run.out, "finetune-genotype", inputs, &cfg)
}

fn cmd_baseline(method: &str, run: &RunArgs) -> CliResult<()> {
    let cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let data = prepare(&cohorts, &cfg)?;
    let methods: Vec<BaselineMethod> = match method {
        "all" => BaselineMethod::ALL.to_vec(),
        m => vec![m.parse()?],
    };
    let tasks = [ProbeTask::Behavior, ProbeTask::Genotype(genotype_target(&cohorts))];
    let mut results = Vec::new();
    for m in methods {
        for t in &tasks {
            let r = run_baseline(m, &data, t, &cfg)?;
            let task = match t {
                ProbeTask::Behavior => "behavior",
                ProbeTask::Genotype(_) => "genotype",
            };
            println!("{} {task}: accuracy {:.4} ({} features)", m.name(), r.accuracy, r.feature_dim);
            results.push(r);
        }
    }
    write_json(&run.out.join(format!("baseline_{method}.json")), &results)?;
    let inputs = Inputs {
        method: Some(method.to_string()),
        ..inputs_of(run)
    };
    write_snapshot(&run.out, "baseline", inputs, &cfg)
}

fn cmd_eval(run: &RunArgs, checkpoint: &Path, k: Option<usize>, command: &str) -> CliResult<()> {
    let mut cfg = run_config(run.config.as_deref(), run.seed)?;
    if let Some(k) = k {
        cfg.k = k;
        cfg.validate()?;
    }
    let cohorts = load_cohorts(&run.data)?;
    let (bundle, hash) = load_checkpoint(checkpoint, &mut cfg)?;
    let data = prepare_with_norm(&cohorts, &cfg, bundle.norm.clone())?;
    let report = evaluate(&bundle, &hash, &data, run.cohort.as_deref(), &cfg)?;
    if command == "cluster" {
        write_json(
            &run.out.join("cluster_report.json"),
            &serde_json::json!({
                "checkpoint_hash": report.checkpoint_hash,
                "scope": report.scope,
                "clustering": report.clustering,
                "enrichment_by_cluster": report.enrichment_by_cluster,
                "manifold": report.manifold,
            }),
        )?;
        let c = &report.clustering;
        let sil = c.silhouette.map_or("n/a".to_string(), |s| format!("{s:.4}"));
        println!("k {} silhouette {sil} nmi(behavior) {:.4}", c.k, c.nmi_vs_behavior);
    } else {
        write_json(&run.out.join("eval_report.json"), &report)?;
        if let Some(b) = &report.behavior {
            println!("test behavior accuracy {:.4}", b.accuracy);
        }
        if let Some(g) = &report.genotype {
            println!("test genotype accuracy {:.4}", g.accuracy);
        }
    }
    let inputs = Inputs {
        checkpoint: Some(checkpoint.display().to_string()),
        checkpoint_hash: Some(hash),
        ..inputs_of(run)
    };
    write_snapshot(&run.out, command, inputs, &cfg)
}

fn cohort_indices(cohorts: &[CohortData], id: Option<&str>) -> CliResult<Vec<usize>> {
    match id {
        None => Ok((0..cohorts.len()).collect()),
        Some(id) => cohorts
            .iter()
            .position(|c| c.cohort_id() == id)
            .map(|i| vec![i])
            .ok_or_else(|| usage(format!("no cohort '{id}'"))),
    }
}

fn cmd_transfer(run: &RunArgs, source: Option<&str>, target: Option<&str>, frac: Option<f64>) -> CliResult<()> {
    let mut cfg = run_config(run.config.as_deref(), run.seed)?;
    if let Some(f) = frac {
        cfg.label_frac = f;
        cfg.validate()?;
    }
    let cohorts = load_data(run)?;
    let sources = cohort_indices(&cohorts, source)?;
    let targets = cohort_indices(&cohorts, target)?;
    let reports = transfer_grid(&cohorts, &sources, &targets, &cfg)?;
    let ids: Vec<String> = cohorts.iter().map(|c| c.cohort_id().to_string()).collect();
    let grid = format_grid(&reports, &ids);
    atomic_write(&run.out.join("transfer_grid.txt"), grid.as_bytes())?;
    write_json(&run.out.join("transfer.json"), &reports)?;
    print!("{grid}");
    let inputs = Inputs {
        source: source.map(String::from),
        target: target.map(String::from),
        ..inputs_of(run)
    };
    write_snapshot(&run.out, "transfer", inputs, &cfg)
}

fn cmd_joint(run: &RunArgs) -> CliResult<()> {
    let cfg = run_config(run.config.as_deref(), run.seed)?;
    let cohorts = load_data(run)?;
    let (mut bundle, outcome) = joint_train(&cohorts, &cfg)?;
    record_config(&mut bundle, &cfg)?;
    save(&run.out, &bundle)?;
    write_json(&run.out.join("joint.json"), &outcome)?;
    write_splits(&run.out, &prepare(&cohorts, &cfg)?)?;
    println!(
        "test behavior accuracy {:.4}, test genotype accuracy {:.4} over {} classes",
        outcome.behavior.test_accuracy,
        outcome.genotype.test_accuracy,
        outcome.genotype.classes.len()
    );
    write_snapshot(&run.out, "joint", inputs_of(run), &cfg)
}

fn cmd_serve(checkpoint: &Path, port: u16, static_dir: Option<PathBuf>, sessions_dir: Option<PathBuf>) -> CliResult<()> {
    let (bundle, hash) = load_bundle(checkpoint)?;
    let model = pheno_service::InferenceModel::new(bundle, hash)?;
    let config = pheno_service::ServiceConfig {
        static_dir,
        sessions_dir,
        ..pheno_service::ServiceConfig::default()
    };
    let state = Arc::new(pheno_service::AppState::new(model, config)?);
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError {
            code: 2,
            message: e.to_string(),
        })?;
    rt.block_on(pheno_service::serve(state, port)).map_err(|e| CliError {
        code: 2,
        message: format!("port {port}: {e}"),
    })
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Split(run) => cmd_split(&run),
        Command::Pretrain(run) => cmd_pretrain(&run),
        Command::TrainBehavior { run, checkpoint } => cmd_train_behavior(&run, checkpoint.as_deref()),
        Command::FinetuneGenotype { run, checkpoint } => cmd_finetune(&run, &checkpoint),
        Command::Baseline { method, run } => cmd_baseline(&method, &run),
        Command::Eval { run, checkpoint } => cmd_eval(&run, &checkpoint, None, "eval"),
        Command::Cluster { run, checkpoint, k } => cmd_eval(&run, &checkpoint, k, "cluster"),
        Command::Transfer {
            run,
            source,
            target,
            label_frac,
        } => cmd_transfer(&run, source.as_deref(), target.as_deref(), label_frac),
        Command::Joint(run) => cmd_joint(&run),
        Command::Serve {
            checkpoint,
            port,
            static_dir,
            sessions_dir,
        } => cmd_serve(&checkpoint, port, static_dir, sessions_dir),
    }
}

/// `PHENO_LOG` accepts error, info or debug; anything else is a usage error.
fn init_logging() -> CliResult<()> {
    let level = std::env::var("PHENO_LOG").unwrap_or_else(|_| "error".into());
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => return Err(usage(format!("PHENO_LOG must be error, info or debug, got '{other}'"))),
    };
    // A second init (tests calling `run` repeatedly) keeps the first logger.
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            let _ = e.print();
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = init_logging().and_then(|_| dispatch(cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["pheno", "frobnicate"]), 1);
        assert_eq!(run(["pheno", "eval", "--data", "d", "--out", "o", "--seed", "1"]), 1);
        assert_eq!(run(["pheno", "synth", "--out", "o"]), 1);
        assert_eq!(run(["pheno", "synth", "--out", "o", "--seed", "9223372036854775808"]), 1);
        assert_eq!(run(["pheno", "baseline", "lasso", "--data", "d", "--out", "o", "--seed", "1"]), 1);
        assert_eq!(run(["pheno"]), 1);
    }

    #[test]
    fn missing_data_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let out = dir.path().join("out");
        let code = run([
            "pheno",
            "split",
            "--data",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "1",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn snapshot_round_trips_and_seed_flag_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::with_seed(5);
        write_snapshot(dir.path(), "eval", Inputs::default(), &cfg).unwrap();
        let p = dir.path().join(SNAPSHOT);
        assert_eq!(run_config(Some(&p), 5).unwrap(), cfg);
        assert_eq!(run_config(Some(&p), 6).unwrap(), RunConfig::with_seed(6));
        let bare = dir.path().join("bare.toml");
        std::fs::write(&bare, cfg.to_toml().unwrap()).unwrap();
        assert_eq!(run_config(Some(&bare), 5).unwrap(), cfg);
    }
}
