//! Tabular finite MDPs: storage, validation, serialization and seeded sampling.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rsp::PolicyParams;

/// Tolerance on row sums used by [`validate_mdp`].
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default cap on trajectory length.
pub const DEFAULT_MAX_STEPS: usize = 100_000;

/// A complete finite MDP with per-state action availability.
///
/// Transition rows are stored sparsely as `(next_state, prob)` pairs sorted by
/// ascending next-state index. Rows and costs of unavailable pairs are kept
/// empty and ignored by every consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    available: Vec<bool>,
    rows: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    initial_state: usize,
    termination_state: Option<usize>,
}

impl FiniteMdp {
    /// Creates an MDP with every action unavailable everywhere.
    pub fn new(num_states: usize, num_actions: usize, initial_state: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Invalid("MDP needs at least one state and one action".into()));
        }
        if initial_state >= num_states {
            return Err(Error::OutOfRange { index: initial_state, size: num_states });
        }
        let pairs = num_states * num_actions;
        Ok(Self {
            num_states,
            num_actions,
            available: vec![false; pairs],
            rows: vec![Vec::new(); pairs],
            cost: vec![0.0; pairs],
            initial_state,
            termination_state: None,
        })
    }

    /// Marks `(x, u)` available with the given successor distribution and cost.
    ///
    /// Duplicate successors are summed and zero entries dropped.
    pub fn set_row(&mut self, x: usize, u: usize, successors: &[(usize, f64)], cost: f64) -> Result<()> {
        let idx = self.pair(x, u)?;
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, p) in successors {
            if j >= self.num_states {
                return Err(Error::OutOfRange { index: j, size: self.num_states });
            }
            *merged.entry(j).or_insert(0.0) += p;
        }
        self.rows[idx] = merged.into_iter().filter(|&(_, p)| p != 0.0).collect();
        self.cost[idx] = cost;
        self.available[idx] = true;
        Ok(())
    }

    /// Marks `(x, u)` unavailable and clears its row.
    pub fn clear_row(&mut self, x: usize, u: usize) -> Result<()> {
        let idx = self.pair(x, u)?;
        self.rows[idx].clear();
        self.cost[idx] = 0.0;
        self.available[idx] = false;
        Ok(())
    }

    pub fn set_termination_state(&mut self, x: Option<usize>) -> Result<()> {
        if let Some(x) = x {
            if x >= self.num_states {
                return Err(Error::OutOfRange { index: x, size: self.num_states });
            }
        }
        self.termination_state = x;
        Ok(())
    }

    pub fn set_initial_state(&mut self, x: usize) -> Result<()> {
        if x >= self.num_states {
            return Err(Error::OutOfRange { index: x, size: self.num_states });
        }
        self.initial_state = x;
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn termination_state(&self) -> Option<usize> {
        self.termination_state
    }

    pub fn is_available(&self, x: usize, u: usize) -> bool {
        x < self.num_states && u < self.num_actions && self.available[x * self.num_actions + u]
    }

    pub fn available_actions(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_actions).filter(move |&u| self.is_available(x, u))
    }

    /// Sparse successor row of `(x, u)`, ascending by next state.
    pub fn row(&self, x: usize, u: usize) -> &[(usize, f64)] {
        &self.rows[x * self.num_actions + u]
    }

    /// `p(j | x, u)`; zero for unavailable pairs.
    pub fn prob(&self, x: usize, u: usize, j: usize) -> f64 {
        if !self.is_available(x, u) {
            return 0.0;
        }
        let row = self.row(x, u);
        match row.binary_search_by_key(&j, |&(s, _)| s) {
            Ok(pos) => row[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.cost[x * self.num_actions + u]
    }

    fn pair(&self, x: usize, u: usize) -> Result<usize> {
        if x >= self.num_states {
            return Err(Error::OutOfRange { index: x, size: self.num_states });
        }
        if u >= self.num_actions {
            return Err(Error::OutOfRange { index: u, size: self.num_actions });
        }
        Ok(x * self.num_actions + u)
    }

    /// Returns `Err(Error::Validation)` listing every violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_mdp(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::Validation(msgs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    RowSum(f64),
    ProbabilityRange { next: usize, prob: f64 },
    NonFiniteCost(f64),
    NoAvailableAction,
    TerminationNotAbsorbing(f64),
    TerminationCost(f64),
}

/// One failed MDP invariant, located at `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: usize,
    pub action: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            Some(u) => write!(f, "(x={}, u={}): ", self.state, u)?,
            None => write!(f, "(x={}): ", self.state)?,
        }
        match &self.kind {
            ViolationKind::RowSum(s) => write!(f, "row sum {s} ≠ 1"),
            ViolationKind::ProbabilityRange { next, prob } => {
                write!(f, "probability {prob} to state {next} outside [0,1]")
            }
            ViolationKind::NonFiniteCost(c) => write!(f, "cost {c} is not finite"),
            ViolationKind::NoAvailableAction => write!(f, "no available action"),
            ViolationKind::TerminationNotAbsorbing(p) => {
                write!(f, "termination not absorbing (self-loop probability {p})")
            }
            ViolationKind::TerminationCost(c) => write!(f, "termination cost {c} ≠ 0"),
        }
    }
}

/// Checks every [`FiniteMdp`] invariant and reports each violation.
pub fn validate_mdp(mdp: &FiniteMdp) -> Vec<Violation> {
    let mut report = Vec::new();
    for x in 0..mdp.num_states {
        let mut any = false;
        for u in 0..mdp.num_actions {
            if !mdp.is_available(x, u) {
                continue;
            }
            any = true;
            let row = mdp.row(x, u);
            for &(j, p) in row {
                if !(0.0..=1.0).contains(&p) {
                    report.push(Violation {
                        state: x,
                        action: Some(u),
                        kind: ViolationKind::ProbabilityRange { next: j, prob: p },
                    });
                }
            }
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || !sum.is_finite() {
                report.push(Violation { state: x, action: Some(u), kind: ViolationKind::RowSum(sum) });
            }
            let c = mdp.cost(x, u);
            if !c.is_finite() {
                report.push(Violation { state: x, action: Some(u), kind: ViolationKind::NonFiniteCost(c) });
            }
            if mdp.termination_state == Some(x) {
                let stay = mdp.prob(x, u, x);
                if stay != 1.0 {
                    report.push(Violation {
                        state: x,
                        action: Some(u),
                        kind: ViolationKind::TerminationNotAbsorbing(stay),
                    });
                }
                if c != 0.0 {
                    report.push(Violation { state: x, action: Some(u), kind: ViolationKind::TerminationCost(c) });
                }
            }
        }
        if !any {
            report.push(Violation { state: x, action: None, kind: ViolationKind::NoAvailableAction });
        }
    }
    report
}

/// True iff every state outside `goal_states ∪ blocked` can reach a goal with
/// positive probability under some choice of available actions.
///
/// `blocked` states (unsafe/absorbing) are neither required to reach the goal
/// nor traversed.
pub fn assert_proper_reachable(mdp: &FiniteMdp, goal_states: &[usize], blocked: &[usize]) -> bool {
    let n = mdp.num_states;
    let mut is_blocked = vec![false; n];
    for &b in blocked {
        if b < n {
            is_blocked[b] = true;
        }
    }
    // Reverse graph over edges with positive probability, restricted to
    // non-blocked sources.
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for x in 0..n {
        if is_blocked[x] {
            continue;
        }
        for u in mdp.available_actions(x) {
            for &(j, p) in mdp.row(x, u) {
                if p > 0.0 && j != x {
                    preds[j].push(x);
                }
            }
        }
    }
    let mut reaches = vec![false; n];
    let mut queue = VecDeque::new();
    for &g in goal_states {
        if g < n && !reaches[g] {
            reaches[g] = true;
            queue.push_back(g);
        }
    }
    while let Some(y) = queue.pop_front() {
        for &x in &preds[y] {
            if !reaches[x] {
                reaches[x] = true;
                queue.push_back(x);
            }
        }
    }
    (0..n).all(|x| reaches[x] || is_blocked[x])
}

/// Draws the next state from `p(·|x, u)` by inverse CDF over ascending
/// next-state index, consuming exactly one uniform from `rng`.
pub fn sample_transition<R: Rng + ?Sized>(mdp: &FiniteMdp, x: usize, u: usize, rng: &mut R) -> Result<usize> {
    if !mdp.is_available(x, u) {
        return Err(Error::Unavailable { state: x, action: u });
    }
    let row = mdp.row(x, u);
    let draw: f64 = rng.gen();
    Ok(inverse_cdf(row.iter().copied(), draw).unwrap_or_else(|| row.last().map(|&(j, _)| j).unwrap_or(x)))
}

/// Index of the first entry whose running sum exceeds `draw`; `None` if the
/// running sum never does (rounding at the tail).
pub(crate) fn inverse_cdf<I: Iterator<Item = (usize, f64)>>(items: I, draw: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last_positive = None;
    for (j, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = Some(j);
        if draw < acc {
            return Some(j);
        }
    }
    last_positive
}

/// Abstract randomized stationary policy over a fixed action set.
pub trait Rsp {
    /// Parameter dimension `n`.
    fn dim(&self) -> usize;

    fn num_actions(&self) -> usize;

    /// Writes `μ_θ(·|x)` into `out` (length `num_actions`).
    fn action_probs_into(&self, theta: &PolicyParams, x: usize, out: &mut [f64]) -> Result<()>;

    /// Writes `ψ_θ(x, u) = ∇_θ ln μ_θ(u|x)` into `out` (length `dim`).
    fn psi_into(&self, theta: &PolicyParams, x: usize, u: usize, out: &mut [f64]) -> Result<()>;

    fn action_probs(&self, theta: &PolicyParams, x: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_actions()];
        self.action_probs_into(theta, x, &mut out)?;
        Ok(out)
    }

    fn psi(&self, theta: &PolicyParams, x: usize, u: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.psi_into(theta, x, u, &mut out)?;
        Ok(out)
    }

    /// Samples an action from `μ_θ(·|x)` by inverse CDF over action index.
    fn sample_action<R: Rng + ?Sized>(&self, theta: &PolicyParams, x: usize, rng: &mut R) -> Result<usize>
    where
        Self: Sized,
    {
        let probs = self.action_probs(theta, x)?;
        let draw: f64 = rng.gen();
        inverse_cdf(probs.iter().copied().enumerate(), draw).ok_or(Error::NoAvailableAction(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Reached the termination state (as opposed to hitting the step cap).
    pub terminated: bool,
    /// State after the last step.
    pub final_state: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// Simulates one episode from `x0` until the first visit to `x*` or `max_steps`.
pub fn sample_trajectory<P: Rsp, R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    rsp: &P,
    theta: &PolicyParams,
    rng: &mut R,
    max_steps: usize,
) -> Result<Trajectory> {
    if theta.dim() != rsp.dim() {
        return Err(Error::Dimension { expected: rsp.dim(), got: theta.dim() });
    }
    let terminal = mdp
        .termination_state()
        .ok_or_else(|| Error::Invalid("trajectory sampling needs a termination state".into()))?;
    let mut x = mdp.initial_state();
    let mut steps = Vec::new();
    if x == terminal {
        return Ok(Trajectory { steps, terminated: true, final_state: x });
    }
    while steps.len() < max_steps {
        let u = rsp.sample_action(theta, x, rng)?;
        let cost = mdp.cost(x, u);
        steps.push(Step { state: x, action: u, cost });
        x = sample_transition(mdp, x, u, rng)?;
        if x == terminal {
            return Ok(Trajectory { steps, terminated: true, final_state: x });
        }
    }
    Ok(Trajectory { steps, terminated: false, final_state: x })
}

/// JSON form of a [`FiniteMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub initial_state: usize,
    pub termination_state: Option<usize>,
    pub available: Vec<Vec<bool>>,
    pub trans: Vec<(usize, usize, usize, f64)>,
    pub cost: Vec<(usize, usize, f64)>,
}

impl From<&FiniteMdp> for MdpDocument {
    fn from(mdp: &FiniteMdp) -> Self {
        let mut available = Vec::with_capacity(mdp.num_states);
        let mut trans = Vec::new();
        let mut cost = Vec::new();
        for x in 0..mdp.num_states {
            available.push((0..mdp.num_actions).map(|u| mdp.is_available(x, u)).collect());
            for u in mdp.available_actions(x) {
                for &(j, p) in mdp.row(x, u) {
                    trans.push((x, u, j, p));
                }
                cost.push((x, u, mdp.cost(x, u)));
            }
        }
        Self {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            initial_state: mdp.initial_state,
            termination_state: mdp.termination_state,
            available,
            trans,
            cost,
        }
    }
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let mut mdp = FiniteMdp::new(doc.num_states, doc.num_actions, doc.initial_state)?;
        if doc.available.len() != doc.num_states {
            return Err(Error::Dimension { expected: doc.num_states, got: doc.available.len() });
        }
        let mut rows: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (x, flags) in doc.available.iter().enumerate() {
            if flags.len() != doc.num_actions {
                return Err(Error::Dimension { expected: doc.num_actions, got: flags.len() });
            }
            for (u, &a) in flags.iter().enumerate() {
                if a {
                    rows.insert((x, u), Vec::new());
                }
            }
        }
        for (x, u, j, p) in doc.trans {
            rows.get_mut(&(x, u))
                .ok_or_else(|| Error::Invalid(format!("transition given for unavailable pair ({x},{u})")))?
                .push((j, p));
        }
        let costs: BTreeMap<(usize, usize), f64> = doc.cost.into_iter().map(|(x, u, c)| ((x, u), c)).collect();
        for ((x, u), row) in rows {
            mdp.set_row(x, u, &row, costs.get(&(x, u)).copied().unwrap_or(0.0))?;
        }
        mdp.set_termination_state(doc.termination_state)?;
        Ok(mdp)
    }
}

impl FiniteMdp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        FiniteMdp::try_from(doc)
    }
}
