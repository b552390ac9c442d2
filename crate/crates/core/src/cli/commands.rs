//! Subcommand dispatch.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 missing input artifact,
//! 1 any other runtime failure. Failures print a single machine-parsable
//! line to standard error: `error: [<kind>] <message>`.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::cli::checkpoint::{
    agents_from_checkpoint, load_checkpoint, load_expert_actor, load_solo_policy, save_checkpoint,
    CheckpointTrailer,
};
use crate::cli::config::RunConfig;
use crate::cli::metrics::{aggregate_metrics, format_sig9, MetricsWriter};
use crate::demos::{collect_demos, demo_stats, train_bc, DemoDataset};
use crate::error::{Result, SocoError};
use crate::fusion::{ClipMode, GatingMode};
use crate::marl::{evaluate, train_marl, AlgoSpec, MarlRunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;

#[derive(Parser)]
#[command(
    name = "soco",
    version,
    about = "Solo-to-collaborative transfer lab: solo pretraining, behavior cloning, gated action fusion, cooperative training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single-agent navigation expert (the one-agent backbone).
    TrainSolo(TrainSoloArgs),
    /// Roll out a trained expert deterministically and record a demo dataset.
    CollectDemos(CollectArgs),
    /// Behavior-clone a frozen solo policy from a demo dataset.
    TrainBc(TrainBcArgs),
    /// Cooperative training: fused policies over a frozen solo policy, or the
    /// from-scratch baseline.
    TrainMarl(TrainMarlArgs),
    /// Evaluate a checkpoint over deterministic episodes.
    Eval(EvalArgs),
    /// Print dataset statistics.
    DemoStats(DemoStatsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics directory override.
    #[arg(long)]
    metrics_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainSoloArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training steps after warm-up.
    #[arg(long)]
    steps: Option<u64>,
    /// Critic updates happen every this many environment steps.
    #[arg(long)]
    update_every: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Expert checkpoint produced by train-solo.
    #[arg(long)]
    expert: Option<PathBuf>,
    /// Number of observation/action pairs.
    #[arg(long)]
    count: Option<usize>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainBcArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input demo dataset.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainMarlArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Train fused policies on a frozen solo policy.
    #[arg(long)]
    soco: bool,
    /// Frozen solo checkpoint (train-bc output).
    #[arg(long)]
    solo: Option<PathBuf>,
    /// Correction strength L.
    #[arg(long, value_name = "L")]
    l: Option<f64>,
    /// Gating mode: learned | rg | erg | fg.
    #[arg(long)]
    gating: Option<String>,
    /// Clip operator: tanh | norm | hard.
    #[arg(long)]
    clip: Option<String>,
    /// Number of agents on the spread world.
    #[arg(long)]
    agents: Option<usize>,
    /// Training steps after warm-up.
    #[arg(long)]
    steps: Option<u64>,
    /// Critic updates happen every this many environment steps.
    #[arg(long)]
    update_every: Option<u64>,
    /// Comma-separated seed list; runs one process per seed sequentially and
    /// writes per-seed metrics plus an aggregate file.
    #[arg(long)]
    seeds: Option<String>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DemoStatsArgs {
    /// Demo dataset file.
    #[arg(long)]
    demos: PathBuf,
}

/// Top-level entry: parses, dispatches, maps errors to exit codes.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own rendering for --help/--version goes to stdout.
            let code = if e.use_stderr() {
                eprintln!("error: [config] {e}");
                EXIT_CONFIG
            } else {
                print!("{e}");
                EXIT_OK
            };
            return code;
        }
    };
    let outcome = match cli.command {
        Command::TrainSolo(a) => cmd_train_solo(a),
        Command::CollectDemos(a) => cmd_collect(a),
        Command::TrainBc(a) => cmd_train_bc(a),
        Command::TrainMarl(a) => cmd_train_marl(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DemoStats(a) => cmd_demo_stats(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let (kind, code) = match &err {
                SocoError::Config(_) => ("config", EXIT_CONFIG),
                SocoError::MissingInput { .. } => ("missing-input", EXIT_MISSING_INPUT),
                _ => ("runtime", EXIT_RUNTIME),
            };
            eprintln!("error: [{kind}] {err}");
            code
        }
    }
}

fn load_config(common: &CommonArgs, stage: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.check_stage(stage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.metrics_dir {
        cfg.paths.metrics_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn metrics_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .metrics_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("metrics"))
}

fn parse_gating(s: &str) -> Result<GatingMode> {
    match s {
        "learned" => Ok(GatingMode::Learned),
        "rg" | "random_step" => Ok(GatingMode::RandomStep),
        "erg" | "random_episode" => Ok(GatingMode::RandomEpisode),
        "fg" | "fixed_by_index" => Ok(GatingMode::FixedByIndex),
        other => Err(SocoError::Config(format!("unknown gating mode {other}"))),
    }
}

fn parse_clip(s: &str) -> Result<ClipMode> {
    match s {
        "tanh" => Ok(ClipMode::Tanh),
        "norm" => Ok(ClipMode::Norm),
        "hard" => Ok(ClipMode::Hard),
        other => Err(SocoError::Config(format!("unknown clip mode {other}"))),
    }
}

fn run_label(cfg: &RunConfig) -> String {
    let algo = if cfg.soco { "soco" } else { "vanilla" };
    format!("{algo}_{}{}", cfg.env.id, cfg.env.n_agents)
}

fn cmd_train_solo(args: TrainSoloArgs) -> Result<()> {
    let mut cfg = load_config(&args.common, "train-solo")?;
    cfg.env.id = "solonav".into();
    cfg.env.n_agents = 1;
    cfg.soco = false;
    if let Some(steps) = args.steps {
        cfg.trainer.total_steps = steps;
    }
    if let Some(k) = args.update_every {
        cfg.trainer.update_every = k;
    }
    if let Some(out) = args.out {
        cfg.paths.checkpoint_out = Some(out);
    }
    cfg.validate()?;

    let spec = MarlRunSpec {
        env: cfg.env.to_particle_config()?,
        trainer: cfg.trainer.clone(),
        algo: AlgoSpec::Vanilla,
        seed: cfg.seed,
    };
    let metrics_path = metrics_dir(&cfg).join(format!("solo_seed{}.csv", cfg.seed));
    let mut writer = MetricsWriter::new(metrics_path.clone());
    let (trainer, rows) = train_marl(&spec, &mut |row| {
        println!(
            "step {:>8}  mean_return {}  std {}",
            row.step,
            format_sig9(row.mean_return),
            format_sig9(row.std_return)
        );
        writer.append(row)
    })?;

    let out = cfg
        .paths
        .checkpoint_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("solo_expert.ckpt"));
    let trailer = CheckpointTrailer {
        kind: "solo-expert".into(),
        step: cfg.trainer.total_steps,
        config: cfg.to_json(),
        solo_hash: None,
    };
    save_checkpoint(&out, &trainer.named_tensors(), &trailer)?;
    let last = rows.last().expect("at least the post-warm-up row");
    println!(
        "train-solo done: final mean_return {} over {} episodes; checkpoint {}; metrics {}",
        format_sig9(last.mean_return),
        cfg.trainer.eval_episodes,
        out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_collect(args: CollectArgs) -> Result<()> {
    let mut cfg = load_config(&args.common, "collect-demos")?;
    if let Some(p) = args.expert {
        cfg.paths.expert_checkpoint = Some(p);
    }
    if let Some(c) = args.count {
        cfg.collect.count = c;
    }
    if let Some(out) = args.out {
        cfg.paths.demos = Some(out);
    }
    let expert_path = cfg
        .paths
        .expert_checkpoint
        .clone()
        .unwrap_or_else(|| PathBuf::from("solo_expert.ckpt"));
    let (expert, _) = load_expert_actor(&expert_path)?;

    let env_cfg = crate::envs::ParticleConfig::solo_nav();
    let (dataset, report) = collect_demos(&expert, &env_cfg, cfg.collect.count, cfg.seed)?;
    let out = cfg
        .paths
        .demos
        .clone()
        .unwrap_or_else(|| PathBuf::from("demos.bin"));
    dataset.save(&out)?;
    println!(
        "collect-demos done: {} pairs over {} episodes, mean episode return {}; dataset {}",
        dataset.len(),
        report.episodes,
        report
            .mean_episode_return
            .map(format_sig9)
            .unwrap_or_else(|| "n/a".into()),
        out.display()
    );
    Ok(())
}

fn cmd_train_bc(args: TrainBcArgs) -> Result<()> {
    let mut cfg = load_config(&args.common, "train-bc")?;
    if let Some(p) = args.demos {
        cfg.paths.demos = Some(p);
    }
    if let Some(out) = args.out {
        cfg.paths.checkpoint_out = Some(out);
    }
    // The cloning target is the single-agent task regardless of what the
    // config section says; pin the snapshot so eval rebuilds the right world.
    cfg.env.id = "solonav".into();
    cfg.env.n_agents = 1;
    let demos_path = cfg
        .paths
        .demos
        .clone()
        .unwrap_or_else(|| PathBuf::from("demos.bin"));
    let dataset = DemoDataset::load(&demos_path)?;
    let (policy, report) = train_bc(&dataset, &cfg.bc, cfg.seed)?;
    if !(report.final_loss < report.initial_loss) {
        return Err(SocoError::Invalid(format!(
            "behavior cloning did not improve: {} -> {}",
            report.initial_loss, report.final_loss
        )));
    }

    let out = cfg
        .paths
        .checkpoint_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("solo_bc.ckpt"));
    let trailer = CheckpointTrailer {
        kind: "solo-bc".into(),
        step: cfg.bc.steps,
        config: cfg.to_json(),
        solo_hash: Some(policy.param_hash()),
    };
    save_checkpoint(&out, &policy.net().named_tensors("solo"), &trailer)?;
    println!(
        "train-bc done: loss {} -> {}; frozen solo checkpoint {}",
        format_sig9(report.initial_loss),
        format_sig9(report.final_loss),
        out.display()
    );
    Ok(())
}

fn cmd_train_marl(args: TrainMarlArgs) -> Result<()> {
    let mut cfg = load_config(&args.common, "train-marl")?;
    if args.soco {
        cfg.soco = true;
    }
    if let Some(p) = args.solo {
        cfg.paths.solo_checkpoint = Some(p);
    }
    if let Some(l) = args.l {
        cfg.fusion.strength = l;
    }
    if let Some(g) = &args.gating {
        cfg.fusion.gating = parse_gating(g)?;
    }
    if let Some(c) = &args.clip {
        cfg.fusion.clip = parse_clip(c)?;
    }
    if let Some(n) = args.agents {
        cfg.env.n_agents = n;
    }
    if let Some(steps) = args.steps {
        cfg.trainer.total_steps = steps;
    }
    if let Some(k) = args.update_every {
        cfg.trainer.update_every = k;
    }
    if let Some(out) = args.out {
        cfg.paths.checkpoint_out = Some(out);
    }
    if let Some(seeds) = &args.seeds {
        let parsed: Vec<u64> = seeds
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| SocoError::Config(format!("bad seed {s}")))
            })
            .collect::<Result<_>>()?;
        cfg.seeds = Some(parsed);
    }
    cfg.validate()?;

    if let Some(seeds) = cfg.seeds.clone() {
        return run_seed_fanout(&cfg, &seeds);
    }
    train_marl_single(&cfg)
}

/// One child process per seed, sequentially, then a cross-seed aggregate.
fn run_seed_fanout(cfg: &RunConfig, seeds: &[u64]) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| SocoError::io("locate executable", e))?;
    let dir = metrics_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| SocoError::io("create metrics dir", e))?;
    let mut metric_files = Vec::new();
    for &seed in seeds {
        let mut child_cfg = cfg.clone();
        child_cfg.seeds = None;
        child_cfg.seed = seed;
        if let Some(out) = &cfg.paths.checkpoint_out {
            let mut per_seed = out.clone();
            per_seed.set_file_name(format!(
                "{}_seed{seed}.ckpt",
                out.file_stem().and_then(|s| s.to_str()).unwrap_or("run")
            ));
            child_cfg.paths.checkpoint_out = Some(per_seed);
        }
        let cfg_path = dir.join(format!(".{}_seed{seed}.config.json", run_label(cfg)));
        crate::demos::write_atomic(
            &cfg_path,
            serde_json::to_vec_pretty(&child_cfg)
                .map_err(|e| SocoError::Invalid(e.to_string()))?
                .as_slice(),
        )?;
        let status = std::process::Command::new(&exe)
            .arg("train-marl")
            .arg("--config")
            .arg(&cfg_path)
            .status()
            .map_err(|e| SocoError::io("spawn per-seed run", e))?;
        if !status.success() {
            return Err(SocoError::Invalid(format!(
                "per-seed run for seed {seed} exited with {status}"
            )));
        }
        metric_files.push(dir.join(format!("{}_seed{seed}.csv", run_label(cfg))));
    }
    let agg = dir.join(format!("{}_aggregate.csv", run_label(cfg)));
    aggregate_metrics(&metric_files, &agg)?;
    println!("train-marl done: {} seeds, aggregate {}", seeds.len(), agg.display());
    Ok(())
}

fn train_marl_single(cfg: &RunConfig) -> Result<()> {
    let env = cfg.env.to_particle_config()?;
    let (algo, solo_hash) = if cfg.soco {
        let solo_path = cfg
            .paths
            .solo_checkpoint
            .clone()
            .unwrap_or_else(|| PathBuf::from("solo_bc.ckpt"));
        let (solo, _) = load_solo_policy(&solo_path)?;
        let hash = solo.param_hash();
        (
            AlgoSpec::Soco {
                solo: Arc::new(solo),
                fusion: cfg.fusion.clone(),
            },
            Some(hash),
        )
    } else {
        (AlgoSpec::Vanilla, None)
    };

    let spec = MarlRunSpec {
        env,
        trainer: cfg.trainer.clone(),
        algo,
        seed: cfg.seed,
    };
    let metrics_path = metrics_dir(cfg).join(format!("{}_seed{}.csv", run_label(cfg), cfg.seed));
    let mut writer = MetricsWriter::new(metrics_path.clone());
    let (trainer, rows) = train_marl(&spec, &mut |row| {
        println!(
            "step {:>8}  mean_return {}  std {}  edit {}  entropy {}",
            row.step,
            format_sig9(row.mean_return),
            format_sig9(row.std_return),
            format_sig9(row.mean_edit_norm),
            format_sig9(row.gating_entropy)
        );
        writer.append(row)
    })?;

    // The freezing contract: parameters that went in must come out unchanged.
    if let (Some(before), Some(after)) = (&solo_hash, trainer.solo_hash()) {
        if *before != after {
            return Err(SocoError::FrozenHashMismatch {
                expected: before.clone(),
                actual: after,
            });
        }
    }

    let out = cfg
        .paths
        .checkpoint_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_seed{}.ckpt", run_label(cfg), cfg.seed)));
    let trailer = CheckpointTrailer {
        kind: if cfg.soco { "soco" } else { "vanilla" }.into(),
        step: cfg.trainer.total_steps,
        config: cfg.to_json(),
        solo_hash: trainer.solo_hash(),
    };
    save_checkpoint(&out, &trainer.named_tensors(), &trailer)?;
    let last = rows.last().expect("at least one row");
    println!(
        "train-marl done: final mean_return {}; checkpoint {}; metrics {}",
        format_sig9(last.mean_return),
        out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (tensors, trailer) = load_checkpoint(&args.checkpoint)?;
    let cfg: RunConfig = serde_json::from_value(trailer.config.clone())
        .map_err(|e| SocoError::Config(format!("checkpoint config snapshot: {e}")))?;
    cfg.validate()?;
    let env_cfg = cfg.env.to_particle_config()?;
    let agents = agents_from_checkpoint(&tensors, &trailer, &env_cfg, &cfg.fusion)?;
    let (mean, std, diag) = evaluate(&agents, &env_cfg, args.episodes, args.seed)?;
    println!(
        "mean_return {} std_return {} episodes {} edit {} entropy {}",
        format_sig9(mean),
        format_sig9(std),
        args.episodes,
        format_sig9(diag.mean_edit_norm),
        format_sig9(diag.gating_entropy)
    );
    Ok(())
}

fn cmd_demo_stats(args: DemoStatsArgs) -> Result<()> {
    let dataset = DemoDataset::load(&args.demos)?;
    let stats = demo_stats(&dataset);
    println!("count {}", stats.count);
    match (&stats.action_mean, &stats.action_std) {
        (Some(mean), Some(std)) => {
            let fmt = |v: &Vec<f64>| {
                v.iter().map(|x| format_sig9(*x)).collect::<Vec<_>>().join(" ")
            };
            println!("action_mean {}", fmt(mean));
            println!("action_std {}", fmt(std));
        }
        _ => {
            println!("action_mean absent");
            println!("action_std absent");
        }
    }
    match stats.mean_episode_return {
        Some(r) => println!("mean_episode_return {}", format_sig9(r)),
        None => println!("mean_episode_return absent"),
    }
    Ok(())
}
