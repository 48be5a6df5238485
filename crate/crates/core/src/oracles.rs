//! Exact dynamic-programming and linear-algebra oracles.
//!
//! Everything here is computed from the full model by direct linear solves or
//! value iteration; these are the reference values the learner and the
//! simulators are checked against. Every solve asserts its residual.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, lu_solve, norm2, oracle_tolerance};
use crate::mdp::{FiniteMdp, Rsp};
use crate::mrp::{MrpProblem, SspProblem};
use crate::rsp::PolicyParams;

/// Row-major `(state, action)` table of `μ_θ(u|x)`.
pub fn policy_table<P: Rsp>(rsp: &P, theta: &PolicyParams, num_states: usize) -> Result<Vec<f64>> {
    let na = rsp.num_actions();
    let mut table = vec![0.0; num_states * na];
    for x in 0..num_states {
        rsp.action_probs_into(theta, x, &mut table[x * na..(x + 1) * na])?;
    }
    Ok(table)
}

/// Row-major `(state, action)` tables of each score component `ψ^i`.
pub fn psi_tables<P: Rsp>(rsp: &P, theta: &PolicyParams, num_states: usize) -> Result<Vec<Vec<f64>>> {
    let na = rsp.num_actions();
    let n = rsp.dim();
    let mut tables = vec![vec![0.0; num_states * na]; n];
    let mut psi = vec![0.0; n];
    for x in 0..num_states {
        for u in 0..na {
            rsp.psi_into(theta, x, u, &mut psi)?;
            for (t, &p) in tables.iter_mut().zip(&psi) {
                t[x * na + u] = p;
            }
        }
    }
    Ok(tables)
}

/// Sparse successor list of the state chain induced by a policy table.
fn chain_successors(mdp: &FiniteMdp, mu: &[f64], x: usize) -> Vec<(usize, f64)> {
    let na = mdp.num_actions();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for u in mdp.available_actions(x) {
        let w = mu[x * na + u];
        if w <= 0.0 {
            continue;
        }
        for &(j, p) in mdp.row(x, u) {
            match out.iter_mut().find(|(s, _)| *s == j) {
                Some(e) => e.1 += w * p,
                None => out.push((j, w * p)),
            }
        }
    }
    out
}

/// States that can reach `targets` in the policy's support graph.
fn can_reach(mdp: &FiniteMdp, mu: &[f64], targets: &[bool]) -> Vec<bool> {
    let n = mdp.num_states();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for x in 0..n {
        for (j, p) in chain_successors(mdp, mu, x) {
            if p > 0.0 {
                preds[j].push(x);
            }
        }
    }
    let mut seen = targets.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&x| targets[x]).collect();
    while let Some(y) = queue.pop_front() {
        for &x in &preds[y] {
            if !seen[x] {
                seen[x] = true;
                queue.push_back(x);
            }
        }
    }
    seen
}

/// Per-state reachability values with the solve residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub residual: f64,
}

/// Exact probability of reaching the goal set from every state under `μ_θ`.
///
/// Solves one equation per state outside `goal ∪ unsafe`, with the boundary
/// fixed at 1 on goals and 0 on unsafe states.
pub fn rsp_reachability<P: Rsp>(problem: &MrpProblem, rsp: &P, theta: &PolicyParams) -> Result<ValueTable> {
    let mdp = &problem.mdp;
    let n = mdp.num_states();
    let mu = policy_table(rsp, theta, n)?;
    let mut boundary = vec![false; n];
    for &x in problem.goal_states.iter().chain(&problem.unsafe_states) {
        boundary[x] = true;
    }
    let reach = can_reach(mdp, &mu, &boundary);
    if let Some(x) = (0..n).find(|&x| !reach[x]) {
        return Err(Error::ImproperPolicy(format!("state {x} never reaches a goal or unsafe state")));
    }

    let unknowns: Vec<usize> = (0..n).filter(|&x| !boundary[x]).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &x) in unknowns.iter().enumerate() {
        index[x] = i;
    }
    let m = unknowns.len();
    let mut values = vec![0.0; n];
    for &g in &problem.goal_states {
        values[g] = 1.0;
    }
    if m == 0 {
        return Ok(ValueTable { values, residual: 0.0 });
    }
    let mut mat = DMatrix::<f64>::identity(m, m);
    let mut rhs = vec![0.0; m];
    for (i, &x) in unknowns.iter().enumerate() {
        for (j, p) in chain_successors(mdp, &mu, x) {
            if problem.is_goal(j) {
                rhs[i] += p;
            } else if !problem.is_unsafe(j) {
                mat[(i, index[j])] -= p;
            }
        }
    }
    let sol = lu_solve(mat, &rhs)?;
    check_residual("reachability", sol.residual, &rhs)?;
    for (i, &x) in unknowns.iter().enumerate() {
        values[x] = sol.x[i];
    }
    Ok(ValueTable { values, residual: sol.residual })
}

/// Optimal reachability values and a greedy maximizing policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxReachability {
    pub values: Vec<f64>,
    /// Greedy action per state (lowest index on ties); `None` on goal/unsafe.
    pub policy: Vec<Option<usize>>,
    pub iterations: usize,
    pub converged: bool,
}

pub const MAX_VI_ITERATIONS: usize = 1_000_000;

/// Value iteration on `p*(x) = max_u Σ_y p(y|x,u) p*(y)` from below.
pub fn max_reachability(problem: &MrpProblem, tol: f64) -> Result<MaxReachability> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let mdp = &problem.mdp;
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    for &g in &problem.goal_states {
        values[g] = 1.0;
    }
    let interior: Vec<usize> = (0..n).filter(|&x| !problem.is_goal(x) && !problem.is_unsafe(x)).collect();
    let q = |values: &[f64], x: usize, u: usize| -> f64 { mdp.row(x, u).iter().map(|&(j, p)| p * values[j]).sum() };

    let mut next = values.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_VI_ITERATIONS {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for &x in &interior {
            let best = mdp.available_actions(x).map(|u| q(&values, x, u)).fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - values[x]).abs());
            next[x] = best;
        }
        std::mem::swap(&mut values, &mut next);
        if delta < tol {
            converged = true;
            break;
        }
    }

    let mut policy = vec![None; n];
    for &x in &interior {
        let mut best: Option<(usize, f64)> = None;
        for u in mdp.available_actions(x) {
            let v = q(&values, x, u);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((u, v));
            }
        }
        policy[x] = best.map(|(u, _)| u);
    }
    Ok(MaxReachability { values, policy, iterations, converged })
}

/// Solves `J = c_μ + P_μ J` on all non-terminal states, `J(x*) = 0`.
fn evaluate_total(mdp: &FiniteMdp, terminal: usize, mu: &[f64], state_cost: &[f64]) -> Result<ValueTable> {
    let n = mdp.num_states();
    let mut target = vec![false; n];
    target[terminal] = true;
    let reach = can_reach(mdp, mu, &target);
    if let Some(x) = (0..n).find(|&x| !reach[x]) {
        return Err(Error::ImproperPolicy(format!("termination state unreachable from state {x}")));
    }
    let unknowns: Vec<usize> = (0..n).filter(|&x| x != terminal).collect();
    let index = |x: usize| if x < terminal { x } else { x - 1 };
    let m = unknowns.len();
    let mut values = vec![0.0; n];
    if m == 0 {
        return Ok(ValueTable { values, residual: 0.0 });
    }
    let mut mat = DMatrix::<f64>::identity(m, m);
    let mut rhs = vec![0.0; m];
    for (i, &x) in unknowns.iter().enumerate() {
        rhs[i] = state_cost[x];
        for (j, p) in chain_successors(mdp, mu, x) {
            if j != terminal {
                mat[(i, index(j))] -= p;
            }
        }
    }
    let sol = lu_solve(mat, &rhs)?;
    check_residual("total cost", sol.residual, &rhs)?;
    for (i, &x) in unknowns.iter().enumerate() {
        values[x] = sol.x[i];
    }
    Ok(ValueTable { values, residual: sol.residual })
}

/// Expected total cost per state; `values[x0]` is `ᾱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalCost {
    pub alpha: f64,
    pub values: Vec<f64>,
    pub residual: f64,
}

pub fn expected_total_cost<P: Rsp>(ssp: &SspProblem, rsp: &P, theta: &PolicyParams) -> Result<TotalCost> {
    let mdp = &ssp.mdp;
    let na = mdp.num_actions();
    let mu = policy_table(rsp, theta, mdp.num_states())?;
    let state_cost: Vec<f64> = (0..mdp.num_states())
        .map(|x| mdp.available_actions(x).map(|u| mu[x * na + u] * mdp.cost(x, u)).sum())
        .collect();
    let table = evaluate_total(mdp, ssp.terminal(), &mu, &state_cost)?;
    Ok(TotalCost { alpha: table.values[mdp.initial_state()], values: table.values, residual: table.residual })
}

/// Expected number of steps from `x0` until `x*`.
pub fn expected_episode_length<P: Rsp>(ssp: &SspProblem, rsp: &P, theta: &PolicyParams) -> Result<f64> {
    let mdp = &ssp.mdp;
    let terminal = ssp.terminal();
    let mu = policy_table(rsp, theta, mdp.num_states())?;
    let ones: Vec<f64> = (0..mdp.num_states()).map(|x| if x == terminal { 0.0 } else { 1.0 }).collect();
    Ok(evaluate_total(mdp, terminal, &mu, &ones)?.values[mdp.initial_state()])
}

/// State-action values of the total-cost problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_actions: usize,
    /// Row-major `(state, action)`; zero on `x*` and unavailable pairs.
    pub q: Vec<f64>,
    pub residual: f64,
}

impl QTable {
    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.q[x * self.num_actions + u]
    }
}

/// `Q(x,u) = g(x,u) + Σ_j p(j|x,u) Σ_ν μ(ν|j) Q(j,ν)` with `Q(x*,·) = 0`.
pub fn q_values<P: Rsp>(ssp: &SspProblem, rsp: &P, theta: &PolicyParams) -> Result<QTable> {
    let mdp = &ssp.mdp;
    let na = mdp.num_actions();
    let n = mdp.num_states();
    let terminal = ssp.terminal();
    let mu = policy_table(rsp, theta, n)?;
    let j = expected_total_cost(ssp, rsp, theta)?.values;
    let mut q = vec![0.0; n * na];
    for x in (0..n).filter(|&x| x != terminal) {
        for u in mdp.available_actions(x) {
            q[x * na + u] = mdp.cost(x, u) + mdp.row(x, u).iter().map(|&(s, p)| p * j[s]).sum::<f64>();
        }
    }
    // Residual of the Poisson equation itself, not of the intermediate solve.
    let mut residual: f64 = 0.0;
    let mut rhs_norm: f64 = 0.0;
    for x in (0..n).filter(|&x| x != terminal) {
        for u in mdp.available_actions(x) {
            let mut rhs = mdp.cost(x, u);
            for &(s, p) in mdp.row(x, u) {
                let v: f64 = (0..na).map(|nu| mu[s * na + nu] * q[s * na + nu]).sum();
                rhs += p * v;
            }
            rhs_norm = rhs_norm.max(mdp.cost(x, u).abs());
            residual = residual.max((q[x * na + u] - rhs).abs());
        }
    }
    check_residual("Q-values", residual, &[rhs_norm])?;
    Ok(QTable { num_actions: na, q, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// Row-major `(state, action)`: `η(x,u) = π(x)·μ(u|x)`.
    pub eta: Vec<f64>,
    pub residual: f64,
}

/// Stationary distribution of the chain `chain` (typically the
/// restart-modified SSP) under `μ_θ`, on the recurrent class of its initial
/// state.
pub fn stationary_distribution<P: Rsp>(chain: &FiniteMdp, rsp: &P, theta: &PolicyParams) -> Result<StationaryDistribution> {
    let n = chain.num_states();
    let na = chain.num_actions();
    let mu = policy_table(rsp, theta, n)?;
    let x0 = chain.initial_state();

    let succ: Vec<Vec<(usize, f64)>> = (0..n).map(|x| chain_successors(chain, &mu, x)).collect();
    let mut forward = vec![false; n];
    forward[x0] = true;
    let mut queue = VecDeque::from([x0]);
    while let Some(x) = queue.pop_front() {
        for &(j, p) in &succ[x] {
            if p > 0.0 && !forward[j] {
                forward[j] = true;
                queue.push_back(j);
            }
        }
    }
    let mut target = vec![false; n];
    target[x0] = true;
    let back = can_reach(chain, &mu, &target);
    if let Some(x) = (0..n).find(|&x| forward[x] && !back[x]) {
        return Err(Error::Reducible(format!("state {x} is reachable from the initial state but cannot return")));
    }

    let class: Vec<usize> = (0..n).filter(|&x| forward[x]).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &x) in class.iter().enumerate() {
        index[x] = i;
    }
    let m = class.len();
    // Rows are the balance equations (Pᵀ − I)π = 0; the last is replaced by Σπ = 1.
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for (i, &x) in class.iter().enumerate() {
        mat[(i, i)] -= 1.0;
        for &(j, p) in &succ[x] {
            mat[(index[j], i)] += p;
        }
    }
    for c in 0..m {
        mat[(m - 1, c)] = 1.0;
    }
    let mut rhs = vec![0.0; m];
    rhs[m - 1] = 1.0;
    let sol = lu_solve(mat, &rhs).map_err(|e| Error::Reducible(format!("stationary system singular: {e}")))?;
    check_residual("stationary distribution", sol.residual, &rhs)?;

    let mut pi = vec![0.0; n];
    for (i, &x) in class.iter().enumerate() {
        pi[x] = sol.x[i].max(0.0);
    }
    // Balance residual ‖πᵀP − πᵀ‖∞ on the full chain.
    let mut flow = vec![0.0; n];
    for x in 0..n {
        for &(j, p) in &succ[x] {
            flow[j] += pi[x] * p;
        }
    }
    let residual = flow.iter().zip(&pi).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
    let mut eta = vec![0.0; n * na];
    for x in 0..n {
        for u in 0..na {
            eta[x * na + u] = pi[x] * mu[x * na + u];
        }
    }
    Ok(StationaryDistribution { pi, eta, residual })
}

/// True iff the existential transition graph of `mdp` is strongly connected.
pub fn is_irreducible(mdp: &FiniteMdp) -> bool {
    let n = mdp.num_states();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * mdp.num_actions());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for x in 0..n {
        for u in mdp.available_actions(x) {
            for &(j, p) in mdp.row(x, u) {
                if p > 0.0 {
                    g.update_edge(nodes[x], nodes[j], ());
                }
            }
        }
    }
    kosaraju_scc(&g).len() == 1
}

/// `⟨f1, f2⟩_η = Σ η(x,u)·f1(x,u)·f2(x,u)`.
pub fn weighted_inner_product(f1: &[f64], f2: &[f64], eta: &[f64]) -> f64 {
    eta.iter().zip(f1).zip(f2).map(|((e, a), b)| e * a * b).sum()
}

/// Ridge added to the Gram matrix when the score features are rank-deficient.
pub const PROJECTION_RIDGE: f64 = 1e-10;

/// Coefficients `r*` of the η-weighted least-squares projection of `q` onto
/// `span{ψ^1 … ψ^n}`.
pub fn project_q(q: &[f64], psi: &[Vec<f64>], eta: &[f64]) -> Result<Vec<f64>> {
    let n = psi.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = weighted_inner_product(&psi[i], &psi[j], eta);
        }
    }
    if gram.iter().all(|v| *v == 0.0) {
        return Err(Error::Invalid("score features carry no mass under η".into()));
    }
    let rhs: Vec<f64> = psi.iter().map(|p| weighted_inner_product(q, p, eta)).collect();
    let tol = oracle_tolerance(&rhs);
    match lu_solve(gram.clone(), &rhs) {
        Ok(sol) if sol.residual <= tol && gram.determinant().abs() > 1e-14 * gram.amax().powi(n as i32) => Ok(sol.x),
        _ => {
            for i in 0..n {
                gram[(i, i)] += PROJECTION_RIDGE;
            }
            Ok(lu_solve(gram, &rhs)?.x)
        }
    }
}

/// Central finite-difference gradient of `ᾱ(θ)`.
pub fn policy_gradient_fd<P: Rsp>(ssp: &SspProblem, rsp: &P, theta: &PolicyParams, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step h must be positive, got {h}")));
    }
    let mut grad = Vec::with_capacity(theta.dim());
    for i in 0..theta.dim() {
        let mut plus = theta.clone();
        plus.0[i] += h;
        let mut minus = theta.clone();
        minus.0[i] -= h;
        let fp = expected_total_cost(ssp, rsp, &plus)?.alpha;
        let fm = expected_total_cost(ssp, rsp, &minus)?.alpha;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Stationary-form gradient `⟨Q, ψ^i⟩_θ` compared with the finite-difference
/// gradient of `ᾱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientComparison {
    pub inner_products: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub cosine: f64,
    /// `‖⟨Q,ψ⟩‖ / ‖∇ᾱ‖`, recorded rather than asserted.
    pub magnitude_ratio: f64,
}

pub fn compare_gradients<P: Rsp>(ssp: &SspProblem, restart: &FiniteMdp, rsp: &P, theta: &PolicyParams, h: f64) -> Result<GradientComparison> {
    let q = q_values(ssp, rsp, theta)?;
    let stat = stationary_distribution(restart, rsp, theta)?;
    let psi = psi_tables(rsp, theta, ssp.mdp.num_states())?;
    let inner: Vec<f64> = psi.iter().map(|p| weighted_inner_product(&q.q, p, &stat.eta)).collect();
    let fd = policy_gradient_fd(ssp, rsp, theta, h)?;
    let nf = norm2(&fd);
    Ok(GradientComparison {
        cosine: cosine(&inner, &fd),
        magnitude_ratio: if nf > 0.0 { norm2(&inner) / nf } else { f64::NAN },
        inner_products: inner,
        finite_difference: fd,
    })
}

fn check_residual(what: &str, residual: f64, rhs: &[f64]) -> Result<()> {
    let tol = oracle_tolerance(rhs);
    if residual > tol || !residual.is_finite() {
        return Err(Error::Singular(format!("{what} residual {residual:.3e} exceeds {tol:.3e}")));
    }
    Ok(())
}

/// Regression-baseline record for an oracle output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub quantity: String,
    pub values: Vec<f64>,
    pub residual: f64,
    pub parameters: serde_json::Value,
}
