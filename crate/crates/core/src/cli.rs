//! The `rmpfusion` command line.
//!
//! File formats:
//! - experiment configs, tree specs, checkpoints, summaries and reports are
//!   pretty-printed JSON carrying a `schema_version` field;
//! - datasets are JSON lines, one [`Record`](crate::learn::Record) per line;
//! - trajectories are CSV tables with columns `t, q.., qd.., a.., V` (an
//!   empty `V` means the policy reports none), plus a sibling
//!   `*.env.json` holding the environment;
//! - learning curves are CSV with columns `iteration, loss`;
//! - plots are static SVG.
//!
//! `--config` takes a path or `fixture:NAME` for a shipped experiment.
//! Exit codes: 0 on success, 1 for a domain failure (a verification suite
//! failed, a rollout collided under `--assert-safe`, a numeric or contract
//! error), 2 for usage and configuration errors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{evaluate, train_model, Checkpoint, Experiment, ModelKind, CONFIG_SCHEMA_VERSION};
use crate::fixtures;
use crate::learn::{Dataset, Split};
use crate::plot;
use crate::sim::{rollout, sample_env, sample_start, Environment, Method, Outcome, Policy, Trajectory};
use crate::tree::TreeSpec;
use crate::verify::{self, Suite};

/// Environment variable holding the log filter, e.g. `info` or `rmpfusion=debug`.
pub const LOG_ENV: &str = "RMPFUSION_LOG";

#[derive(Debug, Parser)]
#[command(name = "rmpfusion", version, about = "Learn and roll out weighted RMP tree policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the expert in sampled environments and write train/test datasets.
    GenData(GenDataArgs),
    /// Behaviour cloning of the tree learner or the unstructured baseline.
    Train(TrainArgs),
    /// Batch and online losses, completion, collisions and path metrics.
    Eval(EvalArgs),
    /// Integrate one policy in one environment and write the trajectory.
    Rollout(RolloutArgs),
    /// Render trajectories, Lyapunov traces and learning curves as SVG.
    Plot(PlotArgs),
    /// Run a property suite with fixed seeds.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config path, or `fixture:NAME` (2d1level, 2d2level, arm3).
    #[arg(long)]
    pub config: String,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Overrides the seed of the training environments.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for train.jsonl, test.jsonl and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// `rmp` or `unstructured`.
    #[arg(long, default_value = "rmp")]
    pub model: ModelKind,
    /// Training set; generated from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the minibatch and initialisation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoints and curve.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint path, or `expert`.
    #[arg(long)]
    pub model: String,
    /// Test set; generated from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory to write every test rollout to.
    #[arg(long)]
    pub rollouts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint path, or `expert`.
    #[arg(long)]
    pub model: String,
    /// Seed of the sampled environment and start state.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Environment JSON to use instead of sampling one.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Start state as comma-separated `q` then `qd`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// `euler` or `rk4`.
    #[arg(long)]
    pub method: Option<Method>,
    /// Horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Exit with code 1 if the rollout touches an obstacle.
    #[arg(long)]
    pub assert_safe: bool,
    /// Trajectory table; the environment goes next to it as `*.env.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Trajectory tables to overlay.
    #[arg(long = "trajectory")]
    pub trajectories: Vec<PathBuf>,
    /// Environment drawn under the trajectories; defaults to the sibling
    /// `*.env.json` of the first trajectory if present.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Learning curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// reduction, stability, gradients, lemma2 or energy.
    #[arg(long)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tree spec for the stability suite instead of the shipped fixtures.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> u8 {
    match e.root_cause() {
        Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Dimension(_) => 2,
        _ => 1,
    }
}

pub fn load_experiment(source: &str) -> Result<Experiment> {
    match source.strip_prefix("fixture:") {
        Some(name) => fixtures::experiment(name),
        None => Experiment::load(source),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
            Ok(())
        }
    }
}

fn env_path(traj: &Path) -> PathBuf {
    traj.with_extension("env.json")
}

fn load_policy(exp: &Experiment, model: &str) -> Result<Box<dyn Policy>> {
    if model == "expert" {
        return Ok(Box::new(exp.expert_policy()));
    }
    let ckpt = Checkpoint::load(model)
        .map_err(|e| Error::Config(format!("checkpoint {model}: {e}")))?;
    if ckpt.config_digest != exp.digest() {
        warn!("checkpoint {model} was trained under a different config digest");
    }
    let policy = ckpt.policy()?;
    if policy.dim() != exp.config.sampling.robot.dim() {
        return Err(Error::Dimension(format!(
            "checkpoint policy has dimension {}, the experiment robot {}",
            policy.dim(),
            exp.config.sampling.robot.dim()
        )));
    }
    Ok(policy)
}

/// Runs one command and returns the exit code for a completed run.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Rollout(a) => run_rollout(a),
        Command::Plot(a) => run_plot(a),
        Command::Verify(a) => run_verify(a),
    }
}

#[derive(Serialize)]
struct GenReport<'a> {
    schema_version: u32,
    config_digest: String,
    train: &'a crate::sim::GenSummary,
    test: &'a crate::sim::GenSummary,
}

fn gen_data(a: GenDataArgs) -> Result<u8> {
    let mut exp = load_experiment(&a.config.config)?;
    if let Some(seed) = a.seed {
        if seed == exp.config.test_seed {
            return Err(Error::Config(format!("seed {seed} equals the test seed")));
        }
        exp.config.seed = seed;
    }
    let (train, train_summary) = exp.generate(Split::Train)?;
    let (test, test_summary) = exp.generate(Split::Test)?;
    fs::create_dir_all(&a.out)?;
    train.save(a.out.join("train.jsonl"))?;
    test.save(a.out.join("test.jsonl"))?;
    let report = GenReport {
        schema_version: CONFIG_SCHEMA_VERSION,
        config_digest: exp.digest(),
        train: &train_summary,
        test: &test_summary,
    };
    write_json(&a.out.join("summary.json"), &report)?;
    info!("{} train and {} test records in {}", train.len(), test.len(), a.out.display());
    Ok(0)
}

fn dataset_or_generate(exp: &Experiment, path: Option<&Path>, split: Split) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p).map_err(|e| Error::Config(format!("dataset {}: {e}", p.display()))),
        None => {
            info!("generating the {split:?} set from the config");
            Ok(exp.generate(split)?.0)
        }
    }
}

fn train(a: TrainArgs) -> Result<u8> {
    let mut exp = load_experiment(&a.config.config)?;
    let data = dataset_or_generate(&exp, a.data.as_deref(), Split::Train)?;
    if let Some(seed) = a.seed {
        exp.config.train.seed = seed;
    }
    if let Some(n) = a.iterations {
        exp.config.train.iterations = n;
    }
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    fs::create_dir_all(&a.out)?;
    let run = train_model(&exp, a.model, &data, resume, |c| {
        let path = a.out.join(format!("checkpoint-{:06}.json", c.state.iteration));
        info!("checkpoint {}", path.display());
        c.save(path)
    })?;
    run.checkpoint.save(a.out.join("final.json"))?;
    let mut w = csv::Writer::from_path(a.out.join("curve.csv")).map_err(|e| Error::Config(e.to_string()))?;
    w.write_record(["iteration", "loss"]).map_err(|e| Error::Config(e.to_string()))?;
    for (it, loss) in &run.curve {
        w.serialize((it, loss)).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    if let Some((it, loss)) = run.curve.last() {
        info!("iteration {it}: minibatch loss {loss:.3e}");
    }
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<u8> {
    let exp = load_experiment(&a.config.config)?;
    let policy = load_policy(&exp, &a.model)?;
    let test = dataset_or_generate(&exp, a.data.as_deref(), Split::Test)?;
    let ev = evaluate(&exp, &a.model, policy.as_ref(), &test)?;
    if let Some(dir) = &a.rollouts {
        fs::create_dir_all(dir)?;
        for (i, (env, traj)) in ev.rollouts.iter().enumerate() {
            let path = dir.join(format!("rollout-{i:03}.csv"));
            traj.save(&path)?;
            write_json(&env_path(&path), env)?;
        }
    }
    emit_json(a.out.as_deref(), &ev.report)?;
    Ok(0)
}

fn run_rollout(a: RolloutArgs) -> Result<u8> {
    let exp = load_experiment(&a.config.config)?;
    let policy = load_policy(&exp, &a.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let env = match &a.env {
        Some(p) => {
            let env: Environment = serde_json::from_str(&fs::read_to_string(p)?)?;
            env.validate()?;
            env
        }
        None => sample_env(&exp.config.sampling, &mut rng)?,
    };
    let n = env.dim();
    let (q0, qd0) = match &a.start {
        Some(s) if s.len() == 2 * n => (s[..n].to_vec(), s[n..].to_vec()),
        Some(s) => {
            return Err(Error::Config(format!("--start needs {} values, got {}", 2 * n, s.len())));
        }
        None => sample_start(&env, &exp.config.sampling, &mut rng)?,
    };
    let mut cfg = exp.config.rollout;
    cfg.dt = a.dt.unwrap_or(cfg.dt);
    cfg.method = a.method.unwrap_or(cfg.method);
    cfg.horizon = a.horizon.unwrap_or(cfg.horizon);
    let traj = rollout(policy.as_ref(), &env, &q0, &qd0, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    traj.save(&a.out)?;
    write_json(&env_path(&a.out), &env)?;
    let outcome = traj.outcome();
    info!("{outcome:?} after {:.2} s", traj.duration());
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(if a.assert_safe && outcome == Outcome::Collision { 1 } else { 0 })
}

fn read_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("curve {}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<(usize, f64)>, _>>()
        .map_err(|e| Error::Config(format!("curve {}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Config(format!("curve {} is empty", path.display())));
    }
    Ok(rows)
}

fn run_plot(a: PlotArgs) -> Result<u8> {
    if a.trajectories.is_empty() && a.curve.is_none() {
        return Err(Error::Config("nothing to plot: pass --trajectory or --curve".into()));
    }
    // Render everything before writing so a bad input leaves no output.
    let mut files = Vec::new();
    if !a.trajectories.is_empty() {
        let trajs = a.trajectories.iter().map(Trajectory::load).collect::<Result<Vec<_>>>()?;
        let env_file = a.env.clone().or_else(|| Some(env_path(&a.trajectories[0])).filter(|p| p.exists()));
        let env = env_file
            .map(|p| -> Result<Environment> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
            .transpose()?;
        files.push(("trajectories.svg", plot::overlay_svg(&trajs, env.as_ref())?));
        if trajs.iter().any(|t| t.samples.iter().any(|s| s.v.is_some())) {
            files.push(("lyapunov.svg", plot::lyapunov_svg(&trajs)?));
        }
    }
    if let Some(c) = &a.curve {
        files.push(("curve.svg", plot::curve_svg(&read_curve(c)?)?));
    }
    fs::create_dir_all(&a.out)?;
    for (name, svg) in files {
        let path = a.out.join(name);
        BufWriter::new(fs::File::create(&path)?).write_all(svg.as_bytes())?;
        info!("wrote {}", path.display());
    }
    Ok(0)
}

fn run_verify(a: VerifyArgs) -> Result<u8> {
    let tree = a.tree.as_deref().map(TreeSpec::load).transpose()?;
    if tree.is_some() && a.suite != Suite::Stability {
        return Err(Error::Config("--tree only applies to the stability suite".into()));
    }
    let report = verify::run(a.suite, a.seed, tree)?;
    emit_json(a.out.as_deref(), &report)?;
    if !report.passed {
        eprintln!("{:?} suite failed: worst {:.3e} against {:.1e}", a.suite, report.worst, report.tolerance);
        return Ok(1);
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Contract("x".into()).at_node("a")), 1);
    }
}
