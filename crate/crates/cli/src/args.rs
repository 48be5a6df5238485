use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lstd_ac::grid::SlipModel;
use serde::Serialize;

use crate::commands::{
    cmd_build_env, cmd_evaluate, cmd_train, BuildEnvRequest, EvalMode, EvaluateRequest, LayoutSource, THETA_FILE,
};
use crate::config::RunConfig;
use crate::env::read;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lstd-ac", version, about = "LSTD actor-critic for reachability on grid worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a grid environment and write its files.
    BuildEnv(BuildEnvArgs),
    /// Train the actor-critic and write the checkpoint history.
    Train(TrainArgs),
    /// Evaluate a parameter vector exactly and/or by simulation.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct BuildEnvArgs {
    /// Built-in layout: grid50 or corner20.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub fixture: Option<String>,
    /// Grid text file ('S' start, 'G' goal, '#' unsafe, '.' free).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub env_seed: u64,
    /// Safety neighbourhood radius.
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    #[arg(long, default_value_t = SlipModel::default().base_intended)]
    pub base_intended: f64,
    #[arg(long, default_value_t = SlipModel::default().lateral_split)]
    pub lateral_split: f64,
    #[arg(long, default_value_t = SlipModel::default().back_fraction)]
    pub back_fraction: f64,
    #[arg(long, default_value_t = SlipModel::default().roughness_gain)]
    pub roughness_gain: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl BuildEnvArgs {
    pub fn request(&self) -> BuildEnvRequest {
        let source = match (&self.fixture, &self.grid) {
            (Some(name), _) => LayoutSource::Fixture(name.clone()),
            (None, Some(path)) => LayoutSource::File(path.clone()),
            (None, None) => unreachable!("clap requires --fixture or --grid"),
        };
        BuildEnvRequest {
            source,
            env_seed: self.env_seed,
            radius: self.radius,
            slip: SlipModel {
                base_intended: self.base_intended,
                lateral_split: self.lateral_split,
                back_fraction: self.back_fraction,
                roughness_gain: self.roughness_gain,
            },
            out_dir: self.out_dir.clone(),
        }
    }
}

/// Flags of `train`; every one overrides the same key of `--config`.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// JSON config with the same keys as these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roughness: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Gain clip radius D.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_radius: Option<f64>,
    /// Actor step constant c.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    /// Comma-separated initial parameters, e.g. 50,-10.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge_delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_warmup_steps: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_reset_on_restart: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_episode_steps: Option<u64>,
    /// Critic only: the actor keeps θ0.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_actor: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl TrainArgs {
    /// Defaults, then the config file, then the flags.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        base.merged(serde_json::to_value(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    MonteCarlo,
    Both,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => EvalMode::Exact,
            ModeArg::MonteCarlo => EvalMode::MonteCarlo,
            ModeArg::Both => EvalMode::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub roughness: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub env_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// Comma-separated parameters, e.g. 50,-10.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "theta_file", required_unless_present = "theta_file")]
    pub theta: Option<Vec<f64>>,
    /// JSON array of parameters, such as the final_theta.json of a run.
    #[arg(long)]
    pub theta_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100_000)]
    pub episodes: u64,
    #[arg(long, default_value_t = 1)]
    pub mc_seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_episode_steps: u64,
    /// Simulation threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn request(&self) -> CliResult<EvaluateRequest> {
        let theta = match (&self.theta, &self.theta_file) {
            (Some(t), _) => t.clone(),
            (None, Some(path)) => serde_json::from_str(&read(path)?)?,
            (None, None) => return Err(CliError::Validation("no parameters given".into())),
        };
        let workers = self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Ok(EvaluateRequest {
            grid: self.grid.clone(),
            roughness: self.roughness.clone(),
            env_seed: self.env_seed,
            radius: self.radius,
            theta,
            mode: self.mode.into(),
            episodes: self.episodes,
            mc_seed: self.mc_seed,
            max_episode_steps: self.max_episode_steps,
            workers,
        })
    }
}

/// Runs one subcommand and returns the JSON it reports on stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::BuildEnv(args) => Ok(serde_json::to_string_pretty(&cmd_build_env(&args.request())?)?),
        Command::Train(args) => {
            let manifest = cmd_train(&args.run_config()?)?;
            log::info!("wrote {} under {}", THETA_FILE, manifest.config.out_dir.display());
            Ok(serde_json::to_string_pretty(&manifest)?)
        }
        Command::Evaluate(args) => {
            let report = serde_json::to_string_pretty(&cmd_evaluate(&args.request()?)?)?;
            if let Some(out) = &args.out {
                crate::env::write(out, &report)?;
            }
            Ok(report)
        }
    }
}
