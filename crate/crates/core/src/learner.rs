//! LSTD actor-critic with concurrent two-timescale updates.
//!
//! The critic accumulates an eligibility trace `z`, a cost statistic `b` and a
//! temporal-difference matrix `A` with step size `γ_k = 1/k`, and solves
//! `r = −(A + δI)⁻¹ b`. The actor moves θ along
//! `−β_k·Γ(r)·(rᵀψ)·ψ` with `β_k = c/(k ln k)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_solve, norm2};
use crate::mdp::{sample_transition, Rsp};
use crate::mrp::SspProblem;
use crate::rsp::PolicyParams;

/// Hyper-parameters of the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Trace decay λ ∈ [0, 1).
    pub lambda: f64,
    /// Gain clip radius D.
    pub clip_radius: f64,
    /// Actor step constant c in `β_k = c/(k ln k)`.
    pub actor_step: f64,
    /// Parameter dimension n.
    pub dim: usize,
    pub trace_reset_on_restart: bool,
    /// Steps during which the actor is frozen; `None` means `50·n`.
    pub actor_warmup_steps: Option<u64>,
    pub ridge_delta: f64,
    pub max_episode_steps: u64,
    /// When false the actor step is skipped entirely (β ≡ 0).
    pub actor_enabled: bool,
    /// Use the post-update critic solution in the actor step instead of the
    /// one from before the current critic step.
    pub actor_uses_updated_critic: bool,
    /// Keep every `record_stride`-th actor update in the history.
    pub record_stride: u64,
    /// Call the checkpoint hook every this many actor updates (0 = never).
    pub checkpoint_every: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            clip_radius: 5.0,
            actor_step: 0.05,
            dim: 2,
            trace_reset_on_restart: false,
            actor_warmup_steps: None,
            ridge_delta: 1e-6,
            max_episode_steps: 100_000,
            actor_enabled: true,
            actor_uses_updated_critic: false,
            record_stride: 1,
            checkpoint_every: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Invalid(format!("lambda must lie in [0,1), got {}", self.lambda)));
        }
        if !(self.clip_radius > 0.0 && self.clip_radius.is_finite()) {
            return Err(Error::Invalid(format!("clip radius D must be positive, got {}", self.clip_radius)));
        }
        if !(self.actor_step > 0.0 && self.actor_step.is_finite()) {
            return Err(Error::Invalid(format!("actor step constant c must be positive, got {}", self.actor_step)));
        }
        if self.dim == 0 {
            return Err(Error::Invalid("parameter dimension must be positive".into()));
        }
        if !(self.ridge_delta >= 0.0 && self.ridge_delta.is_finite()) {
            return Err(Error::Invalid(format!("ridge delta must be nonnegative, got {}", self.ridge_delta)));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Invalid("max_episode_steps must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Invalid("record_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        self.actor_warmup_steps.unwrap_or(50 * self.dim as u64)
    }
}

/// Critic step size `γ_k = 1/k`, defined for `k ≥ 1`.
pub fn gamma_schedule(k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("critic step size is undefined at k = 0".into()));
    }
    Ok(1.0 / k as f64)
}

/// Actor step size `β_k = c/(k ln k)`; `k ∈ {0, 1}` use the `k = 2` value.
pub fn beta_schedule(k: u64, c: f64) -> f64 {
    let k = k.max(2) as f64;
    c / (k * k.ln())
}

/// `Γ(r) = D/‖r‖` outside the ball of radius D, 1 inside.
pub fn gain_clip(r: &[f64], d: f64) -> f64 {
    let n = norm2(r);
    if n > d {
        d / n
    } else {
        1.0
    }
}

/// Running critic quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    /// Row-major n×n.
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub k: u64,
}

impl CriticState {
    pub fn new(n: usize) -> Self {
        Self { z: vec![0.0; n], b: vec![0.0; n], a: vec![0.0; n * n], r: vec![0.0; n], k: 0 }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(&self.b).chain(&self.a).chain(&self.r).all(|v| v.is_finite())
    }
}

/// How the critic solve at one step ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticSolve {
    Solved { residual: f64 },
    /// The ridge-regularized system could not be solved to tolerance; `r` kept.
    Carried,
}

/// One LSTD critic update followed by the least-squares solve.
pub fn critic_step(
    cs: &mut CriticState,
    psi_now: &[f64],
    psi_next: &[f64],
    cost: f64,
    cfg: &LearnerConfig,
) -> Result<CriticSolve> {
    let n = cs.dim();
    if psi_now.len() != n || psi_next.len() != n {
        return Err(Error::Dimension { expected: n, got: psi_now.len().min(psi_next.len()) });
    }
    let gamma = gamma_schedule(cs.k + 1)?;
    for (z, p) in cs.z.iter_mut().zip(psi_now) {
        *z = cfg.lambda * *z + p;
    }
    let z = &cs.z;
    for (b, zi) in cs.b.iter_mut().zip(z) {
        *b += gamma * (cost * zi - *b);
    }
    for i in 0..n {
        for j in 0..n {
            let a = &mut cs.a[i * n + j];
            *a += gamma * (z[i] * (psi_next[j] - psi_now[j]) - *a);
        }
    }
    cs.k += 1;

    let mut m = DMatrix::from_row_slice(n, n, &cs.a);
    for i in 0..n {
        m[(i, i)] += cfg.ridge_delta;
    }
    let neg_b: Vec<f64> = cs.b.iter().map(|v| -v).collect();
    let tol = 1e-8 * (1.0 + norm2(&cs.b));
    match lu_solve(m, &neg_b) {
        Ok(sol) if sol.residual <= tol => {
            cs.r = sol.x;
            Ok(CriticSolve::Solved { residual: sol.residual })
        }
        Ok(sol) => {
            log::warn!("critic solve at k={} residual {:.3e} above {:.3e}; keeping r", cs.k, sol.residual, tol);
            Ok(CriticSolve::Carried)
        }
        Err(e) => {
            log::warn!("critic solve at k={} failed ({e}); keeping r", cs.k);
            Ok(CriticSolve::Carried)
        }
    }
}

/// Unscaled actor direction `Γ(r)·(rᵀψ)·ψ`.
pub fn actor_direction(r: &[f64], psi_next: &[f64], clip_radius: f64) -> Vec<f64> {
    let scale = gain_clip(r, clip_radius) * crate::linalg::dot(r, psi_next);
    psi_next.iter().map(|p| scale * p).collect()
}

/// `θ' = θ − β_k·Γ(r)·(rᵀψ)·ψ`.
pub fn actor_step(theta: &PolicyParams, r: &[f64], psi_next: &[f64], k: u64, cfg: &LearnerConfig) -> Result<PolicyParams> {
    if r.len() != theta.dim() || psi_next.len() != theta.dim() {
        return Err(Error::Dimension { expected: theta.dim(), got: r.len().min(psi_next.len()) });
    }
    let beta = beta_schedule(k, cfg.actor_step);
    let dir = actor_direction(r, psi_next, cfg.clip_radius);
    Ok(PolicyParams(theta.0.iter().zip(&dir).map(|(t, d)| t - beta * d).collect()))
}

/// One retained actor update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Global step counter after the update.
    pub step: u64,
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    pub r_norm: f64,
    pub episode: u64,
    pub episode_len: u64,
    pub episode_cost: f64,
}

/// Snapshot taken every `checkpoint_every` actor updates (and before the first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub update: u64,
    pub step: u64,
    pub theta: Vec<f64>,
    pub r_norm: f64,
    pub episode: u64,
    pub episode_len: u64,
    pub episode_cost: f64,
    pub exact_reach: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<UpdateRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub actor_updates: u64,
    pub episodes_completed: u64,
    pub cap_events: u64,
    pub carried_solves: u64,
    /// Mean of `Γ(r)(rᵀψ)ψ` over all actor updates.
    pub mean_direction: Vec<f64>,
    pub final_theta: PolicyParams,
    pub final_critic: CriticState,
}

/// Checkpoint callback: receives the update index and θ, may return an exact
/// reachability value to store alongside.
pub type CheckpointHook<'a> = dyn FnMut(u64, &PolicyParams) -> Option<f64> + 'a;

/// Runs the learner on the restart-modified SSP chain for `total_steps` steps.
pub fn run_training<P: Rsp, R: Rng + ?Sized>(
    ssp: &SspProblem,
    rsp: &P,
    theta0: &PolicyParams,
    cfg: &LearnerConfig,
    rng: &mut R,
    total_steps: u64,
    mut hook: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if theta0.dim() != cfg.dim || rsp.dim() != cfg.dim {
        return Err(Error::Dimension { expected: cfg.dim, got: theta0.dim() });
    }
    let mdp = &ssp.mdp;
    let terminal = ssp.terminal();
    let x0 = mdp.initial_state();
    let n = cfg.dim;
    let warmup = cfg.warmup_steps();

    let mut theta = theta0.clone();
    let mut cs = CriticState::new(n);
    let mut history = TrainingHistory {
        records: Vec::new(),
        checkpoints: Vec::new(),
        actor_updates: 0,
        episodes_completed: 0,
        cap_events: 0,
        carried_solves: 0,
        mean_direction: vec![0.0; n],
        final_theta: theta.clone(),
        final_critic: cs.clone(),
    };
    if total_steps == 0 {
        return Ok(history);
    }
    if cfg.checkpoint_every > 0 {
        let exact = hook.as_mut().and_then(|h| h(0, &theta));
        history.checkpoints.push(Checkpoint {
            update: 0,
            step: 0,
            theta: theta.0.clone(),
            r_norm: 0.0,
            episode: 0,
            episode_len: 0,
            episode_cost: 0.0,
            exact_reach: exact,
        });
    }

    let mut x = x0;
    let mut u = rsp.sample_action(&theta, x, rng)?;
    let mut episode: u64 = 0;
    let mut episode_len: u64 = 0;
    let mut episode_cost = 0.0;
    let mut episode_start = true;
    let mut psi_now = vec![0.0; n];
    let mut psi_next = vec![0.0; n];
    let mut direction_sum = vec![0.0; n];

    for _ in 0..total_steps {
        let cost = mdp.cost(x, u);
        let mut restart = false;
        let x_next = if x == terminal {
            history.episodes_completed += 1;
            restart = true;
            x0
        } else {
            episode_len += 1;
            episode_cost += cost;
            let sampled = sample_transition(mdp, x, u, rng)?;
            if sampled != terminal && episode_len >= cfg.max_episode_steps {
                log::info!("episode {episode} hit the {}-step cap; restarting", cfg.max_episode_steps);
                history.cap_events += 1;
                restart = true;
                x0
            } else {
                sampled
            }
        };
        let u_next = rsp.sample_action(&theta, x_next, rng)?;

        if episode_start && cfg.trace_reset_on_restart {
            cs.z.iter_mut().for_each(|z| *z = 0.0);
        }
        rsp.psi_into(&theta, x, u, &mut psi_now)?;
        rsp.psi_into(&theta, x_next, u_next, &mut psi_next)?;
        let r_prev = cs.r.clone();
        if critic_step(&mut cs, &psi_now, &psi_next, cost, cfg)? == CriticSolve::Carried {
            history.carried_solves += 1;
        }
        if !cs.is_finite() {
            return Err(abort(cs.k, "critic state became non-finite", &theta, &cs));
        }

        if cs.k > warmup {
            let r_actor = if cfg.actor_uses_updated_critic { &cs.r } else { &r_prev };
            let dir = actor_direction(r_actor, &psi_next, cfg.clip_radius);
            for (s, d) in direction_sum.iter_mut().zip(&dir) {
                *s += d;
            }
            if cfg.actor_enabled {
                theta = actor_step(&theta, r_actor, &psi_next, cs.k, cfg)?;
                if !theta.is_finite() {
                    return Err(abort(cs.k, "actor parameters became non-finite", &theta, &cs));
                }
            }
            history.actor_updates += 1;
            let upd = history.actor_updates;
            if upd % cfg.record_stride == 0 {
                history.records.push(UpdateRecord {
                    step: cs.k,
                    theta: theta.0.clone(),
                    r: cs.r.clone(),
                    r_norm: norm2(&cs.r),
                    episode,
                    episode_len,
                    episode_cost,
                });
            }
            if cfg.checkpoint_every > 0 && upd % cfg.checkpoint_every == 0 {
                let exact = hook.as_mut().and_then(|h| h(upd, &theta));
                history.checkpoints.push(Checkpoint {
                    update: upd,
                    step: cs.k,
                    theta: theta.0.clone(),
                    r_norm: norm2(&cs.r),
                    episode,
                    episode_len,
                    episode_cost,
                    exact_reach: exact,
                });
            }
        }

        episode_start = false;
        if restart {
            episode += 1;
            episode_len = 0;
            episode_cost = 0.0;
            episode_start = true;
        }
        x = x_next;
        u = u_next;
    }

    if history.actor_updates > 0 {
        let m = history.actor_updates as f64;
        history.mean_direction = direction_sum.iter().map(|s| s / m).collect();
    }
    history.final_theta = theta;
    history.final_critic = cs;
    Ok(history)
}

fn abort(step: u64, what: &str, theta: &PolicyParams, cs: &CriticState) -> Error {
    Error::TrainingAbort { step, reason: format!("{what}; theta={:?} r={:?} b={:?} A={:?}", theta.0, cs.r, cs.b, cs.a) }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl TrainingHistory {
    fn header(n: usize) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        h.extend((0..n).map(|i| format!("theta_{i}")));
        h.extend(["r_norm", "episode", "episode_len", "episode_cost", "exact_reach_if_checkpointed"].map(String::from));
        h
    }

    /// Writes the checkpoint rows as CSV.
    pub fn write_checkpoint_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.final_theta.dim();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(n))?;
        for c in &self.checkpoints {
            let mut row = vec![c.step.to_string()];
            row.extend(c.theta.iter().map(|&t| fmt_f64(t)));
            row.push(fmt_f64(c.r_norm));
            row.push(c.episode.to_string());
            row.push(c.episode_len.to_string());
            row.push(fmt_f64(c.episode_cost));
            row.push(c.exact_reach.map(fmt_f64).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every retained update record as CSV (empty reachability column).
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.final_theta.dim();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(n))?;
        for r in &self.records {
            let mut row = vec![r.step.to_string()];
            row.extend(r.theta.iter().map(|&t| fmt_f64(t)));
            row.push(fmt_f64(r.r_norm));
            row.push(r.episode.to_string());
            row.push(r.episode_len.to_string());
            row.push(fmt_f64(r.episode_cost));
            row.push(String::new());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_schedule(1).unwrap(), 1.0);
        assert_eq!(gamma_schedule(4).unwrap(), 0.25);
        assert!(gamma_schedule(0).is_err());
    }

    #[test]
    fn gamma_square_sum_bounded() {
        let s: f64 = (1..=1_000_000u64).map(|k| gamma_schedule(k).unwrap().powi(2)).sum();
        assert!(s < std::f64::consts::PI.powi(2) / 6.0);
        let harmonic: f64 = (1..=1_000_000u64).map(|k| gamma_schedule(k).unwrap()).sum();
        assert!(harmonic > 14.0);
    }

    #[test]
    fn beta_values() {
        assert!((beta_schedule(2, 0.05) - 0.036067376022224).abs() < 1e-12);
        assert_eq!(beta_schedule(0, 0.05), beta_schedule(2, 0.05));
        assert_eq!(beta_schedule(1, 0.05), beta_schedule(2, 0.05));
        let k = 100_000u64;
        let ratio = beta_schedule(k, 0.05) / gamma_schedule(k).unwrap();
        assert!((ratio - 0.05 / (1e5f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn beta_monotone() {
        let mut prev = beta_schedule(2, 0.05);
        for k in 3..=1_000_000u64 {
            let b = beta_schedule(k, 0.05);
            assert!(b <= prev, "beta increased at k={k}");
            prev = b;
        }
    }

    #[test]
    fn clip_values() {
        assert_eq!(gain_clip(&[3.0, 0.0], 5.0), 1.0);
        assert_eq!(gain_clip(&[0.0, 0.0], 5.0), 1.0);
        assert_eq!(gain_clip(&[6.0, 8.0], 5.0), 0.5);
    }

    #[test]
    fn trace_starts_from_current_score() {
        let mut cs = CriticState::new(2);
        let cfg = LearnerConfig::default();
        critic_step(&mut cs, &[1.0, 0.0], &[0.0, 0.0], 0.0, &cfg).unwrap();
        assert_eq!(cs.z, vec![1.0, 0.0]);
        assert_eq!(cs.b, vec![0.0, 0.0]);
        assert_eq!(cs.k, 1);
    }

    #[test]
    fn actor_noops() {
        let cfg = LearnerConfig::default();
        let theta = PolicyParams(vec![50.0, -10.0]);
        assert_eq!(actor_step(&theta, &[0.0, 0.0], &[0.3, 0.1], 10, &cfg).unwrap(), theta);
        assert_eq!(actor_step(&theta, &[1.0, 2.0], &[0.0, 0.0], 10, &cfg).unwrap(), theta);
    }

    #[test]
    fn actor_formula() {
        let cfg = LearnerConfig { clip_radius: 5.0, actor_step: 0.05, ..Default::default() };
        let theta = PolicyParams(vec![50.0, -10.0]);
        let out = actor_step(&theta, &[1.0, 1.0], &[0.2, -0.3], 100, &cfg).unwrap();
        // ‖r‖ = √2 < 5 so Γ = 1; rᵀψ = −0.1; β = 0.05/(100 ln 100).
        let beta = 0.05 / (100.0 * 100f64.ln());
        assert!((out.0[0] - (50.0 + beta * 0.1 * 0.2)).abs() < 1e-15);
        assert!((out.0[1] - (-10.0 - beta * 0.1 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig::default().validate().is_ok());
        assert!(LearnerConfig { lambda: 1.0, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig { clip_radius: 0.0, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig { actor_step: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!(LearnerConfig::default().warmup_steps(), 100);
    }
}
