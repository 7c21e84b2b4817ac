//! Command-line front end for the feeder attack–defense toolkit.
//!
//! Four commands cover the pipeline: `simulate` rolls out episodes to a
//! trajectory CSV, `train` runs level-k Monte Carlo policy iteration and
//! writes a policy file plus a training log, `sweep` runs the presence or
//! design studies with per-cell resume files, and `welfare` turns a design
//! sweep CSV into dollar figures.
//!
//! Every command is deterministic in the master seed and the configuration:
//! repeated runs produce byte-identical outputs, independent of `--threads`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridgame::rng::{child_seed, stream, tag};
use gridgame::snfg::write_trajectory_file;
use gridgame::studies::{design_sweep_cell, p_sweep_cell, write_sweep_csv, write_welfare_csv, SweepResult};
use gridgame::{
    analyze_welfare, run_episode_with, AttackerPresence, Level0Attacker, Level0Defender, PlayerKind, RunConfig,
    StepRecord, SweepRecord, TabularAttacker, TabularDefender, TabularPolicy,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "gridgame",
    version,
    about = "Attacker-defender voltage game: simulate, train, sweep, analyze",
    after_help = "Outputs land in the configured output directory. Identical seed and \
                  configuration give byte-identical outputs regardless of --threads."
)]
struct Cli {
    /// TOML run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed, overriding the configured value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configured value.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker thread count for episode batches. Only affects wall-clock
    /// time; results are identical for any value. Ignored by builds
    /// without the parallel feature.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out episodes and write trajectory.csv.
    Simulate(SimulateArgs),
    /// Train a level-k policy; writes the policy file and training_log.csv.
    Train(TrainArgs),
    /// Run a sweep study with per-cell resume; writes sweep_<kind>.csv.
    Sweep(SweepArgs),
    /// Analyze a design sweep CSV into welfare.csv.
    Welfare(WelfareArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Attacker presence probability, drawn once per episode. Overrides the
    /// configured value and disables a configured attack-at-step entry.
    #[arg(long)]
    p: Option<f64>,

    /// Number of episodes.
    #[arg(long)]
    episodes: Option<usize>,

    /// Steps per episode.
    #[arg(long)]
    steps: Option<usize>,

    /// Deterministic protocol: the attacker is absent before this step and
    /// present from it on, in every episode.
    #[arg(long, value_name = "K")]
    attack_at_step: Option<usize>,

    /// Trained defender policy file (level-0 heuristic when omitted).
    #[arg(long, value_name = "FILE", conflicts_with = "level0")]
    defender: Option<PathBuf>,

    /// Trained attacker policy file (level-0 heuristic when omitted).
    #[arg(long, value_name = "FILE", conflicts_with = "level0")]
    attacker: Option<PathBuf>,

    /// Force both sides to the level-0 heuristics.
    #[arg(long)]
    level0: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Side whose policy the ladder tops out at.
    #[arg(long, value_enum, default_value_t = PlayerArg::Defender)]
    player: PlayerArg,

    /// Ladder level to train; each level best-responds to the opponent's
    /// previous level, grounded in the level-0 heuristics.
    #[arg(long, default_value_t = 1)]
    level: usize,

    /// Attacker presence probability during training episodes.
    #[arg(long, default_value_t = 0.5)]
    train_p: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Which study to run.
    #[arg(long, value_enum)]
    kind: SweepKind,
}

#[derive(Args)]
struct WelfareArgs {
    /// Design sweep CSV to analyze; defaults to sweep_design.csv in the
    /// output directory.
    #[arg(long, value_name = "FILE")]
    sweep_csv: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PlayerArg {
    Defender,
    Attacker,
}

impl From<PlayerArg> for PlayerKind {
    fn from(p: PlayerArg) -> Self {
        match p {
            PlayerArg::Defender => PlayerKind::Defender,
            PlayerArg::Attacker => PlayerKind::Attacker,
        }
    }
}

fn player_name(p: PlayerKind) -> &'static str {
    match p {
        PlayerKind::Defender => "defender",
        PlayerKind::Attacker => "attacker",
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    /// Presence-probability grid: train_ps x sim_ps.
    P,
    /// Design grid: (p2_max, p3_max) cells at the presence endpoints.
    Design,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();

    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }

    if let Command::Simulate(args) = &cli.command {
        if let Some(k) = args.attack_at_step {
            config.simulate.attack_at_step = Some(k);
        } else if let Some(p) = args.p {
            config.simulate.p = p;
            config.simulate.attack_at_step = None;
        }
        if let Some(n) = args.episodes {
            config.simulate.episodes = n;
        }
        if let Some(n) = args.steps {
            config.simulate.steps = n;
        }
    }
    config.validate().context("invalid configuration")?;

    init_thread_pool(cli.threads)?;

    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating output directory {}", config.output_dir.display()))?;

    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&config, args),
        Command::Train(args) => cmd_train(&config, args),
        Command::Sweep(args) => cmd_sweep(&config, args),
        Command::Welfare(args) => cmd_welfare(&config, args),
    }
}

#[cfg(feature = "parallel")]
fn init_thread_pool(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building worker thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    Ok(())
}

/// Loads a policy file and checks it is for the expected side.
fn load_policy(path: &Path, expected: PlayerKind) -> Result<TabularPolicy> {
    let policy = TabularPolicy::load(path).with_context(|| format!("loading policy {}", path.display()))?;
    if policy.player() != expected {
        bail!(
            "{} holds a {} policy but was passed as the {}",
            path.display(),
            player_name(policy.player()),
            player_name(expected)
        );
    }
    Ok(policy)
}

fn cmd_simulate(config: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let sim = &config.simulate;
    let params = &config.scenario;

    let defender_policy = args
        .defender
        .as_deref()
        .map(|p| load_policy(p, PlayerKind::Defender))
        .transpose()?;
    let attacker_policy = args
        .attacker
        .as_deref()
        .map(|p| load_policy(p, PlayerKind::Attacker))
        .transpose()?;

    let presence = match sim.attack_at_step {
        Some(k) => AttackerPresence::FromStep(k),
        None => AttackerPresence::Bernoulli(sim.p),
    };

    let episodes: Vec<Vec<StepRecord>> = gridgame::exec::map_indexed(sim.episodes, |e| {
        let mut rng = stream(config.master_seed, tag::SIMULATE, e as u64);
        // Fresh agents per episode: memories start clean.
        match (&defender_policy, &attacker_policy) {
            (None, None) => {
                let mut d = Level0Defender::new(params);
                let mut a = Level0Attacker::new(params);
                run_episode_with(params, presence, &mut d, &mut a, sim.steps, &mut rng)
            }
            (Some(dp), None) => {
                let mut d = TabularDefender::new(dp, params);
                let mut a = Level0Attacker::new(params);
                run_episode_with(params, presence, &mut d, &mut a, sim.steps, &mut rng)
            }
            (None, Some(ap)) => {
                let mut d = Level0Defender::new(params);
                let mut a = TabularAttacker::new(ap, params);
                run_episode_with(params, presence, &mut d, &mut a, sim.steps, &mut rng)
            }
            (Some(dp), Some(ap)) => {
                let mut d = TabularDefender::new(dp, params);
                let mut a = TabularAttacker::new(ap, params);
                run_episode_with(params, presence, &mut d, &mut a, sim.steps, &mut rng)
            }
        }
    })
    .into_iter()
    .collect::<Result<_, _>>()
    .context("running episodes")?;

    let path = config.output_dir.join("trajectory.csv");
    write_trajectory_file(&path, &episodes).with_context(|| format!("writing {}", path.display()))?;

    let steps_total: usize = episodes.iter().map(Vec::len).sum();
    let mean_r_d = episodes.iter().flatten().map(|r| r.r_d).sum::<f64>() / steps_total as f64;
    let mean_r_a = episodes.iter().flatten().map(|r| r.r_a).sum::<f64>() / steps_total as f64;
    println!(
        "simulate: {} episodes x {} steps -> {}",
        sim.episodes,
        sim.steps,
        path.display()
    );
    println!("  mean defender reward {mean_r_d:.6}, mean attacker reward {mean_r_a:.6}");
    Ok(())
}

fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<()> {
    if args.level == 0 {
        bail!("--level must be at least 1; level 0 is the built-in heuristic");
    }
    if !(0.0..=1.0).contains(&args.train_p) {
        bail!("--train-p must lie in [0, 1]");
    }

    let outcome = gridgame::train_level_k(
        &config.scenario,
        config.codec,
        args.player.into(),
        args.level,
        args.train_p,
        &config.training,
        config.master_seed,
    )
    .context("training failed")?;

    // Every rung of the ladder is a usable policy; save them all.
    for stage in &outcome.stages {
        let name = format!("policy_{}_l{}.json", player_name(stage.player), stage.level);
        let path = config.output_dir.join(name);
        stage
            .result
            .policy
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        println!(
            "trained {} level {}: rounds {}, converged {}, kept round {}, {} states -> {}",
            player_name(stage.player),
            stage.level,
            stage.result.rounds.len(),
            stage.result.converged,
            stage.result.selected_round,
            stage.result.policy.len(),
            path.display()
        );
    }

    let target = outcome.target();
    let log_path = config.output_dir.join("training_log.csv");
    gridgame::learning::write_training_log(&log_path, &target.result.rounds)
        .with_context(|| format!("writing {}", log_path.display()))?;
    println!("training log -> {}", log_path.display());
    Ok(())
}

/// One saved sweep cell: the inputs that produced it plus its records.
/// A resume reuses the records only when the stored inputs match exactly.
#[derive(Serialize, Deserialize)]
struct CellFile {
    spec: serde_json::Value,
    records: Vec<SweepRecord>,
}

/// Computes one sweep cell, or reloads it from a previous interrupted run
/// when a saved file with identical inputs exists.
fn cell_with_resume(
    cells_dir: &Path,
    name: &str,
    spec: serde_json::Value,
    compute: impl FnOnce() -> Result<Vec<SweepRecord>>,
) -> Result<(Vec<SweepRecord>, bool)> {
    let path = cells_dir.join(name);
    if let Ok(bytes) = fs::read(&path) {
        match serde_json::from_slice::<CellFile>(&bytes) {
            Ok(saved) if saved.spec == spec => return Ok((saved.records, true)),
            // Stale inputs or an unreadable file: recompute and overwrite.
            _ => {}
        }
    }
    let records = compute()?;
    let file = CellFile { spec, records };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&file).expect("cell file serializes"))
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok((file.records, false))
}

fn cmd_sweep(config: &RunConfig, args: &SweepArgs) -> Result<()> {
    let cells_dir = config.output_dir.join("cells");
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;

    let sweep = &config.sweep;
    let mut records = Vec::new();
    let mut reused = 0usize;

    match args.kind {
        SweepKind::P => {
            // Cell order and seeds mirror the in-library presence sweep, so
            // the assembled CSV is identical to a single uninterrupted run.
            for (i, &train_p) in sweep.train_ps.iter().enumerate() {
                let cell_seed = child_seed(config.master_seed, tag::SWEEP_CELL, i as u64);
                let spec = serde_json::json!({
                    "kind": "p",
                    "train_p": train_p,
                    "sim_ps": sweep.sim_ps,
                    "eval_episodes": sweep.eval_episodes,
                    "seed": cell_seed,
                    "scenario": config.scenario,
                    "codec": config.codec,
                    "training": config.training,
                });
                let name = format!("p_{i:03}.json");
                let (cell, hit) = cell_with_resume(&cells_dir, &name, spec, || {
                    p_sweep_cell(
                        &config.scenario,
                        config.codec,
                        train_p,
                        &sweep.sim_ps,
                        &config.training,
                        sweep.eval_episodes,
                        cell_seed,
                    )
                    .with_context(|| format!("presence cell train_p={train_p}"))
                })?;
                reused += hit as usize;
                println!(
                    "cell {}/{}: train_p={train_p}{}",
                    i + 1,
                    sweep.train_ps.len(),
                    if hit { " (reused)" } else { "" }
                );
                records.extend(cell);
            }
        }
        SweepKind::Design => {
            let total = sweep.p2_grid.len() * sweep.p3_grid.len();
            for (i, &p2_max) in sweep.p2_grid.iter().enumerate() {
                for (j, &p3_max) in sweep.p3_grid.iter().enumerate() {
                    let cell = i * sweep.p3_grid.len() + j;
                    let cell_seed = child_seed(config.master_seed, tag::SWEEP_CELL, cell as u64);
                    let spec = serde_json::json!({
                        "kind": "design",
                        "p2_max": p2_max,
                        "p3_max": p3_max,
                        "train_p": sweep.design_train_p,
                        "couple_p3": sweep.couple_p3,
                        "eval_episodes": sweep.eval_episodes,
                        "seed": cell_seed,
                        "scenario": config.scenario,
                        "codec": config.codec,
                        "training": config.training,
                    });
                    let name = format!("design_{i:03}_{j:03}.json");
                    let (cell_records, hit) = cell_with_resume(&cells_dir, &name, spec, || {
                        design_sweep_cell(
                            &config.scenario,
                            config.codec,
                            p2_max,
                            p3_max,
                            sweep.design_train_p,
                            sweep.couple_p3,
                            &config.training,
                            sweep.eval_episodes,
                            cell_seed,
                        )
                        .with_context(|| format!("design cell p2_max={p2_max} p3_max={p3_max}"))
                    })?;
                    reused += hit as usize;
                    println!(
                        "cell {}/{}: p2_max={p2_max} p3_max={p3_max}{}",
                        cell + 1,
                        total,
                        if hit { " (reused)" } else { "" }
                    );
                    records.extend(cell_records);
                }
            }
        }
    }

    let result = SweepResult { records };
    let name = match args.kind {
        SweepKind::P => "sweep_p.csv",
        SweepKind::Design => "sweep_design.csv",
    };
    let path = config.output_dir.join(name);
    write_sweep_csv(&path, &result).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "sweep {}: {} records ({} cells reused) -> {}",
        match args.kind {
            SweepKind::P => "p",
            SweepKind::Design => "design",
        },
        result.records.len(),
        reused,
        path.display()
    );
    Ok(())
}

fn cmd_welfare(config: &RunConfig, args: &WelfareArgs) -> Result<()> {
    let input = args
        .sweep_csv
        .clone()
        .unwrap_or_else(|| config.output_dir.join("sweep_design.csv"));
    let result = gridgame::studies::read_sweep_csv(&input).with_context(|| format!("reading {}", input.display()))?;

    let rows = analyze_welfare(&result, &config.welfare).context("analyzing sweep")?;

    let path = config.output_dir.join("welfare.csv");
    write_welfare_csv(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
    println!("welfare: {} designs -> {}", rows.len(), path.display());
    for row in &rows {
        let break_even = match row.break_even_cpq {
            Some(v) => format!("{v:.2}"),
            None => "inf".to_string(),
        };
        println!(
            "  p2_max={:.3}: slope {:+.5} (R2 {:.3}), cost rate {:.2} $/MW/hr, break-even C_PQ {break_even}",
            row.p2_max, row.slope, row.r2, row.welfare_cost_rate
        );
    }
    Ok(())
}
