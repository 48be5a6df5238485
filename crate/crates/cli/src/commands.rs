use std::path::{Path, PathBuf};

use lstd_ac::grid::{fixtures, load_grid, save_grid, save_roughness, GridSpec, SlipModel};
use lstd_ac::learner::run_training;
use lstd_ac::mdp::{sample_transition, Rsp};
use lstd_ac::oracles::{expected_total_cost, max_reachability, rsp_reachability};
use lstd_ac::{MrpProblem, PolicyParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{read, write, Environment};
use crate::error::{CliError, CliResult};

pub const GRID_FILE: &str = "grid.txt";
pub const ROUGHNESS_FILE: &str = "roughness.csv";
pub const MRP_FILE: &str = "mrp.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const THETA_FILE: &str = "final_theta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Tolerance of the value iteration behind the optimal reachability.
pub const VI_TOLERANCE: f64 = 1e-12;

pub fn version_string() -> String {
    match option_env!("LSTD_AC_GIT_REV") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Where `build-env` takes its layout from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutSource {
    Fixture(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildEnvRequest {
    pub source: LayoutSource,
    pub env_seed: u64,
    pub radius: usize,
    pub slip: SlipModel,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: LayoutSource,
    pub env_seed: u64,
    pub radius: usize,
    pub slip: SlipModel,
    pub width: usize,
    pub height: usize,
    pub num_states: usize,
    pub goal_states: Vec<usize>,
    pub unsafe_count: usize,
    pub version: String,
}

/// Builds a grid environment and writes grid text, roughness CSV,
/// serialized MRP and a provenance record into `out_dir`.
pub fn cmd_build_env(req: &BuildEnvRequest) -> CliResult<Provenance> {
    let layout = match &req.source {
        LayoutSource::Fixture(name) => match name.as_str() {
            "grid50" => fixtures::grid50_layout(),
            "corner20" => fixtures::corner20_layout(),
            other => return Err(CliError::Validation(format!("unknown fixture {other:?}; expected grid50 or corner20"))),
        },
        LayoutSource::File(path) => read(path)?,
    };
    let mut spec: GridSpec = load_grid(&layout)?;
    spec.slip = req.slip;
    spec.radius = req.radius;
    spec = spec.with_random_roughness(req.env_seed);
    let env = Environment::from_spec(spec)?;

    create_dir(&req.out_dir)?;
    write(&req.out_dir.join(GRID_FILE), save_grid(&env.spec))?;
    write(&req.out_dir.join(ROUGHNESS_FILE), save_roughness(&env.spec))?;
    write(&req.out_dir.join(MRP_FILE), env.problem.to_json()?)?;
    let provenance = Provenance {
        source: req.source.clone(),
        env_seed: req.env_seed,
        radius: req.radius,
        slip: req.slip,
        width: env.spec.width,
        height: env.spec.height,
        num_states: env.problem.mdp.num_states(),
        goal_states: env.problem.goal_states.clone(),
        unsafe_count: env.problem.unsafe_states.len(),
        version: version_string(),
    };
    write(&req.out_dir.join(PROVENANCE_FILE), serde_json::to_string_pretty(&provenance)?)?;
    Ok(provenance)
}

/// Reproducibility record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub env_seed: u64,
    pub train_seed: u64,
    pub max_reachability: f64,
    pub initial_reachability: f64,
    pub final_reachability: f64,
    pub final_theta: Vec<f64>,
    pub actor_updates: u64,
    pub episodes_completed: u64,
    pub cap_events: u64,
    pub carried_solves: u64,
}

/// Trains on the configured environment and writes the checkpoint history,
/// the final θ and a manifest into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<Manifest> {
    cfg.validate()?;
    let env = Environment::load(cfg.grid_path()?, cfg.roughness.as_deref(), cfg.env_seed, cfg.radius)?;
    let x0 = env.problem.initial_state();
    let optimum = max_reachability(&env.problem, VI_TOLERANCE)?;
    if !optimum.converged {
        log::warn!("value iteration stopped after {} iterations without converging", optimum.iterations);
    }
    let mrp_policy = env.mrp_policy();
    let reach = |theta: &PolicyParams| rsp_reachability(&env.problem, &mrp_policy, theta).map(|v| v.values[x0]);

    let theta0 = PolicyParams::new(cfg.theta0.clone())?;
    let initial = reach(&theta0)?;
    let mut hook_error = None;
    let mut hook = |update: u64, theta: &PolicyParams| match reach(theta) {
        Ok(v) => {
            log::info!("update {update}: exact reachability {v:.12}");
            Some(v)
        }
        Err(e) => {
            hook_error.get_or_insert(e);
            None
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let history = run_training(&env.ssp, &env.ssp_policy(), &theta0, &cfg.learner_config(), &mut rng, cfg.total_steps, Some(&mut hook))?;
    if let Some(e) = hook_error {
        return Err(e.into());
    }
    let final_reach = reach(&history.final_theta)?;

    create_dir(&cfg.out_dir)?;
    let mut csv = Vec::new();
    history.write_checkpoint_csv(&mut csv)?;
    write(&cfg.out_dir.join(HISTORY_FILE), csv)?;
    write(&cfg.out_dir.join(THETA_FILE), serde_json::to_string_pretty(&history.final_theta)?)?;
    let manifest = Manifest {
        version: version_string(),
        config: cfg.clone(),
        env_seed: cfg.env_seed,
        train_seed: cfg.train_seed,
        max_reachability: optimum.values[x0],
        initial_reachability: initial,
        final_reachability: final_reach,
        final_theta: history.final_theta.0.clone(),
        actor_updates: history.actor_updates,
        episodes_completed: history.episodes_completed,
        cap_events: history.cap_events,
        carried_solves: history.carried_solves,
    };
    write(&cfg.out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Exact,
    MonteCarlo,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateRequest {
    pub grid: PathBuf,
    pub roughness: Option<PathBuf>,
    pub env_seed: u64,
    pub radius: usize,
    pub theta: Vec<f64>,
    pub mode: EvalMode,
    pub episodes: u64,
    pub mc_seed: u64,
    pub max_episode_steps: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    /// `p_θ(x0)` from the reachability linear system.
    pub reachability: f64,
    /// Expected unsafe visits `ᾱ` of the SSP.
    pub alpha: f64,
    /// `|p_θ(x0) − 1/(ᾱ + 1)|`.
    pub identity_residual: f64,
    pub max_reachability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimate: f64,
    pub std_error: f64,
    pub episodes: u64,
    /// Episodes that hit the step cap; counted as failures.
    pub truncated: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub theta: Vec<f64>,
    pub mode: EvalMode,
    pub exact: Option<ExactReport>,
    pub monte_carlo: Option<MonteCarloReport>,
    /// `|exact − estimate| / SE` when both are present.
    pub z_score: Option<f64>,
}

/// Evaluates θ exactly, by simulation, or both.
pub fn cmd_evaluate(req: &EvaluateRequest) -> CliResult<EvaluationReport> {
    let env = Environment::load(&req.grid, req.roughness.as_deref(), req.env_seed, req.radius)?;
    let theta = PolicyParams::new(req.theta.clone())?;
    if theta.dim() != 2 {
        return Err(CliError::Validation(format!("theta must have 2 entries, got {}", theta.dim())));
    }
    let x0 = env.problem.initial_state();
    let exact = match req.mode {
        EvalMode::MonteCarlo => None,
        EvalMode::Exact | EvalMode::Both => {
            let reach = rsp_reachability(&env.problem, &env.mrp_policy(), &theta)?.values[x0];
            let alpha = expected_total_cost(&env.ssp, &env.ssp_policy(), &theta)?.alpha;
            let optimum = max_reachability(&env.problem, VI_TOLERANCE)?.values[x0];
            Some(ExactReport { reachability: reach, alpha, identity_residual: (reach - 1.0 / (alpha + 1.0)).abs(), max_reachability: optimum })
        }
    };
    let monte_carlo = match req.mode {
        EvalMode::Exact => None,
        EvalMode::MonteCarlo | EvalMode::Both => Some(monte_carlo(&env.problem, &env.mrp_policy(), &theta, req)?),
    };
    let z_score = match (&exact, &monte_carlo) {
        (Some(e), Some(m)) if m.std_error > 0.0 => Some((e.reachability - m.estimate).abs() / m.std_error),
        (Some(e), Some(m)) => Some(if e.reachability == m.estimate { 0.0 } else { f64::INFINITY }),
        _ => None,
    };
    Ok(EvaluationReport { theta: theta.0, mode: req.mode, exact, monte_carlo, z_score })
}

/// Outcome of one simulated episode of the MRP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOutcome {
    Goal,
    Unsafe,
    Truncated,
}

/// Random stream of episode `index`: the base seed selects the key and the
/// episode index selects the stream, so any partition of episodes across
/// workers yields the same draws.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_episode<P: Rsp>(problem: &MrpProblem, policy: &P, theta: &PolicyParams, seed: u64, index: u64, max_steps: u64) -> CliResult<EpisodeOutcome> {
    let mut rng = episode_rng(seed, index);
    let mut x = problem.initial_state();
    for _ in 0..max_steps {
        if problem.is_goal(x) {
            return Ok(EpisodeOutcome::Goal);
        }
        if problem.is_unsafe(x) {
            return Ok(EpisodeOutcome::Unsafe);
        }
        let u = policy.sample_action(theta, x, &mut rng)?;
        x = sample_transition(&problem.mdp, x, u, &mut rng)?;
    }
    Ok(if problem.is_goal(x) {
        EpisodeOutcome::Goal
    } else if problem.is_unsafe(x) {
        EpisodeOutcome::Unsafe
    } else {
        EpisodeOutcome::Truncated
    })
}

fn monte_carlo<P: Rsp + Sync>(problem: &MrpProblem, policy: &P, theta: &PolicyParams, req: &EvaluateRequest) -> CliResult<MonteCarloReport> {
    if req.episodes == 0 {
        return Err(CliError::Validation("monte-carlo evaluation needs at least one episode".into()));
    }
    let workers = req.workers.max(1) as u64;
    let chunk = req.episodes.div_ceil(workers);
    let counts: Vec<CliResult<(u64, u64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = (w * chunk).min(req.episodes);
                let hi = ((w + 1) * chunk).min(req.episodes);
                scope.spawn(move || {
                    let mut hits = 0;
                    let mut truncated = 0;
                    for i in lo..hi {
                        match simulate_episode(problem, policy, theta, req.mc_seed, i, req.max_episode_steps)? {
                            EpisodeOutcome::Goal => hits += 1,
                            EpisodeOutcome::Unsafe => {}
                            EpisodeOutcome::Truncated => truncated += 1,
                        }
                    }
                    Ok((hits, truncated))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut hits = 0;
    let mut truncated = 0;
    for c in counts {
        let (h, t) = c?;
        hits += h;
        truncated += t;
    }
    let n = req.episodes as f64;
    let p = hits as f64 / n;
    Ok(MonteCarloReport { estimate: p, std_error: (p * (1.0 - p) / n).sqrt(), episodes: req.episodes, truncated, seed: req.mc_seed })
}
