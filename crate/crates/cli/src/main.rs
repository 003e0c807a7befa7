//! `saferl`: train, evaluate, inspect and deploy CBF-guarded SAC policies.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use saferl_bridge::{bind_and_serve, Controller};
use saferl_core::cbf::qp_check;
use saferl_core::checkpoint::{Checkpoint, Learner};
use saferl_core::config::RunConfig;
use saferl_core::eval::{
    eval_seed, evaluate_policy, record_trajectories, value_heatmap, write_trajectories_jsonl, StartPose,
};
use saferl_core::integration::Mode;
use saferl_core::train::{train_run, CHECKPOINT_DIR};
use serde_json::json;

#[derive(Parser)]
#[command(name = "saferl", version, about = "CBF-guarded soft actor-critic for unicycle obstacle avoidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sac,
    Filter,
    Reward,
    Decay,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sac => Mode::Sac,
            ModeArg::Filter => Mode::Filter,
            ModeArg::Reward => Mode::Reward,
            ModeArg::Decay => Mode::Decay,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write log.csv, checkpoints/ and config.resolved under --out.
    Train {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with deterministic actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the run's eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        cbf: Toggle,
        /// Reset seed; defaults to the one used for the training log.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seed-averaged critic value over the arena, from the latest checkpoint of each seed.
    Heatmap {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        /// Use checkpoints from this training step instead of the latest.
        #[arg(long)]
        step: Option<u64>,
        /// Defaults to heatmap.csv inside --checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out from listed start poses and write trajectories.jsonl.
    Trajectories {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON array of {"x", "y", "theta"?}; a missing theta faces the obstacle.
        #[arg(long)]
        starts: PathBuf,
        #[arg(long, value_enum)]
        cbf: Toggle,
        /// Defaults to trajectories.jsonl in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve pose-in / command-out requests over TCP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, value_enum)]
        cbf: Toggle,
    },
    /// Compare the QP solver against the grid oracle on random activated states.
    QpCheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also randomise the barrier gains and radii.
        #[arg(long)]
        vary_params: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": first, "kind": "usage" }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            mode,
            seed,
            steps,
            config,
            out,
        } => train(mode, seed, steps, config.as_deref(), &out),
        Command::Eval {
            checkpoint,
            episodes,
            cbf,
            seed,
        } => eval(&checkpoint, episodes, cbf.on(), seed),
        Command::Heatmap {
            checkpoints,
            bins,
            step,
            out,
        } => heatmap(&checkpoints, bins, step, out),
        Command::Trajectories {
            checkpoint,
            starts,
            cbf,
            out,
        } => trajectories(&checkpoint, &starts, cbf.on(), out),
        Command::Serve { checkpoint, port, cbf } => serve(&checkpoint, port, cbf.on()),
        Command::QpCheck {
            instances,
            seed,
            vary_params,
        } => {
            let r = qp_check(instances, seed, vary_params);
            println!("{}", serde_json::to_string(&r)?);
            if r.max_gap > 1e-6 || r.min_residual < -1e-9 {
                bail!("oracle mismatch: max gap {:e}, min residual {:e}", r.max_gap, r.min_residual);
            }
            Ok(())
        }
    }
}

fn train(mode: Option<ModeArg>, seed: Option<u64>, steps: Option<u64>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = mode {
        cfg.train.mode = m.into();
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(t) = steps {
        cfg.train.total_steps = t;
    }
    cfg.validate()?;
    info!(
        "training mode={} seed={} steps={} -> {}",
        cfg.train.mode,
        cfg.train.seed,
        cfg.train.total_steps,
        out.display()
    );
    train_run(&cfg, Some(out), |row| {
        info!(
            "step {} reward w/ cbf {:.3} w/o cbf {:.3} activation {:.2}% length {:.1}",
            row.step, row.avg_reward_with_cbf, row.avg_reward_without_cbf, row.activation_pct, row.episode_length_mean
        )
    })?;
    Ok(())
}

fn load_learner(path: &Path) -> Result<(Checkpoint, Learner)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let learner = ck.restore_learner()?;
    Ok((ck, learner))
}

fn eval(path: &Path, episodes: Option<usize>, cbf_on: bool, seed: Option<u64>) -> Result<()> {
    let (ck, learner) = load_learner(path)?;
    let cfg = &ck.config;
    let episodes = episodes.unwrap_or(cfg.train.eval_episodes);
    if episodes == 0 {
        bail!("--episodes must be positive");
    }
    let seed = seed.unwrap_or_else(|| eval_seed(cfg.train.seed));
    let s = evaluate_policy(&learner, cfg, episodes, cbf_on, seed)?;
    println!(
        "{}",
        json!({
            "step": ck.step,
            "seed": cfg.train.seed,
            "mode": cfg.train.mode,
            "cbf": if cbf_on { "on" } else { "off" },
            "episodes": episodes,
            "avg_reward": s.mean_reward,
            "activation_pct": s.activation_pct,
            "episode_length_mean": s.mean_length,
            "collision_steps": s.collision_steps,
            "goals": s.goals,
        })
    );
    Ok(())
}

fn collect_checkpoints(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_checkpoints(&p, found)?;
        } else if p.extension().is_some_and(|x| x == "json") {
            found.push(p);
        }
    }
    Ok(())
}

fn heatmap(dir: &Path, bins: Option<usize>, step: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut files = Vec::new();
    collect_checkpoints(dir, &mut files)?;
    // latest (or requested) checkpoint per seed
    let mut chosen: std::collections::BTreeMap<u64, Checkpoint> = Default::default();
    for f in files {
        let Ok(ck) = Checkpoint::load(&f) else {
            continue;
        };
        if step.is_some_and(|s| s != ck.step) {
            continue;
        }
        let seed = ck.config.train.seed;
        if chosen.get(&seed).is_none_or(|c| c.step < ck.step) {
            chosen.insert(seed, ck);
        }
    }
    let Some(first) = chosen.values().next() else {
        bail!("no checkpoints found under {}", dir.display());
    };
    let mode = first.config.train.mode;
    if chosen.values().any(|c| c.config.train.mode != mode) {
        bail!("checkpoints under {} mix training modes; point at one method", dir.display());
    }
    let mut layout = first.config.heatmap;
    if let Some(b) = bins {
        if b == 0 {
            bail!("--bins must be positive");
        }
        layout.bins = b;
    }
    let arena = first.config.world.arena_half_extent;
    let learners = chosen.values().map(|c| c.restore_learner()).collect::<Result<Vec<_>, _>>()?;
    let grid = value_heatmap(&learners, &layout, arena);
    let out = out.unwrap_or_else(|| dir.join("heatmap.csv"));
    fs::write(&out, grid.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{}",
        json!({
            "out": out.display().to_string(),
            "mode": mode,
            "seeds": chosen.keys().collect::<Vec<_>>(),
            "steps": chosen.values().map(|c| c.step).collect::<Vec<_>>(),
            "bins": layout.bins,
        })
    );
    Ok(())
}

/// The run directory owning `checkpoints/<file>`, if the path has that shape.
fn run_dir_of(checkpoint: &Path) -> Option<&Path> {
    let parent = checkpoint.parent()?;
    if parent.file_name()? == CHECKPOINT_DIR {
        parent.parent()
    } else {
        None
    }
}

fn trajectories(path: &Path, starts: &Path, cbf_on: bool, out: Option<PathBuf>) -> Result<()> {
    let (ck, learner) = load_learner(path)?;
    let text = fs::read_to_string(starts).with_context(|| format!("reading {}", starts.display()))?;
    let poses: Vec<StartPose> = serde_json::from_str(&text).context("parsing start poses")?;
    if let Some(p) = poses.iter().find(|p| !(p.x.is_finite() && p.y.is_finite()) || !ck.config.world.in_arena([p.x, p.y])) {
        bail!("start pose ({}, {}) is outside the arena", p.x, p.y);
    }
    let logs = record_trajectories(&learner, &ck.config, &poses, cbf_on);
    let out = out.unwrap_or_else(|| run_dir_of(path).unwrap_or(Path::new(".")).join("trajectories.jsonl"));
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    write_trajectories_jsonl(&logs, &mut w)?;
    std::io::Write::flush(&mut w)?;
    println!(
        "{}",
        json!({
            "out": out.display().to_string(),
            "trajectories": logs.len(),
            "goals": logs.iter().filter(|l| l.outcome == saferl_core::eval::Outcome::Goal).count(),
            "collision_steps": logs.iter().map(|l| l.collision_steps).sum::<usize>(),
        })
    );
    Ok(())
}

fn serve(path: &Path, port: Option<u16>, cbf_on: bool) -> Result<()> {
    let (ck, learner) = load_learner(path)?;
    let bridge = ck.config.bridge;
    let addr = SocketAddr::new(bridge.host, port.unwrap_or(bridge.port));
    let ctrl = Arc::new(Controller::new(learner, ck.config.clone(), cbf_on));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(bind_and_serve(addr, ctrl, Duration::from_millis(bridge.watchdog_ms), async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}
