//! Maximal-reachability problems and their stochastic-shortest-path form.
//!
//! Goal states are merged into a single cost-free termination state `x*`
//! (placed last in the SSP index space). Every unsafe state keeps all actions,
//! each of which returns to the initial state with probability 1 at cost 1.
//! The expected total cost `ᾱ` of any policy on the SSP is then the expected
//! number of unsafe visits before success, so `R = 1/(ᾱ + 1)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{assert_proper_reachable, FiniteMdp, MdpDocument};
use crate::rsp::{FeatureProvider, FeatureTable};

/// An MDP plus goal/unsafe sets; the initial state is the MDP's.
#[derive(Debug, Clone, PartialEq)]
pub struct MrpProblem {
    pub mdp: FiniteMdp,
    pub goal_states: Vec<usize>,
    pub unsafe_states: Vec<usize>,
}

impl MrpProblem {
    pub fn new(mdp: FiniteMdp, mut goal_states: Vec<usize>, mut unsafe_states: Vec<usize>) -> Result<Self> {
        goal_states.sort_unstable();
        goal_states.dedup();
        unsafe_states.sort_unstable();
        unsafe_states.dedup();
        let problem = Self { mdp, goal_states, unsafe_states };
        problem.validate()?;
        Ok(problem)
    }

    pub fn initial_state(&self) -> usize {
        self.mdp.initial_state()
    }

    pub fn is_goal(&self, x: usize) -> bool {
        self.goal_states.binary_search(&x).is_ok()
    }

    pub fn is_unsafe(&self, x: usize) -> bool {
        self.unsafe_states.binary_search(&x).is_ok()
    }

    /// Checks the structural invariants of an MRP instance.
    pub fn validate(&self) -> Result<()> {
        let n = self.mdp.num_states();
        if self.mdp.termination_state().is_some() {
            return Err(Error::Invalid("MRP model must not carry a termination state".into()));
        }
        self.mdp.ensure_valid()?;
        if self.goal_states.is_empty() {
            return Err(Error::Invalid("goal set is empty".into()));
        }
        for &x in self.goal_states.iter().chain(&self.unsafe_states) {
            if x >= n {
                return Err(Error::OutOfRange { index: x, size: n });
            }
        }
        if let Some(x) = self.goal_states.iter().find(|x| self.is_unsafe(**x)) {
            return Err(Error::Invalid(format!("state {x} is both goal and unsafe")));
        }
        let x0 = self.initial_state();
        if self.is_goal(x0) || self.is_unsafe(x0) {
            return Err(Error::Invalid(format!("initial state {x0} is a goal or unsafe state")));
        }
        for &x in self.goal_states.iter().chain(&self.unsafe_states) {
            for u in self.mdp.available_actions(x) {
                if self.mdp.prob(x, u, x) != 1.0 {
                    return Err(Error::Invalid(format!("goal/unsafe state {x} is not absorbing under action {u}")));
                }
            }
        }
        if !assert_proper_reachable(&self.mdp, &self.goal_states, &self.unsafe_states) {
            return Err(Error::Invalid("some safe state cannot reach the goal set".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MrpDocument {
            mdp: MdpDocument::from(&self.mdp),
            goal_states: self.goal_states.clone(),
            unsafe_states: self.unsafe_states.clone(),
            initial_state: self.initial_state(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MrpDocument = serde_json::from_str(text)?;
        let mdp = FiniteMdp::try_from(doc.mdp)?;
        if mdp.initial_state() != doc.initial_state {
            return Err(Error::Invalid("initial_state disagrees with embedded MDP".into()));
        }
        Self::new(mdp, doc.goal_states, doc.unsafe_states)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MrpDocument {
    mdp: MdpDocument,
    goal_states: Vec<usize>,
    unsafe_states: Vec<usize>,
    initial_state: usize,
}

/// The SSP form of an [`MrpProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct SspProblem {
    pub mdp: FiniteMdp,
    /// `origin[s]` is the MRP state behind SSP state `s`; `None` for `x*`.
    pub origin: Vec<Option<usize>>,
    /// Unsafe states in SSP indices, ascending.
    pub unsafe_states: Vec<usize>,
}

impl SspProblem {
    pub fn terminal(&self) -> usize {
        self.mdp.termination_state().expect("SSP always has a termination state")
    }

    pub fn initial_state(&self) -> usize {
        self.mdp.initial_state()
    }

    /// Origin map as the `{s_index: m_index}` JSON sidecar.
    pub fn origin_map_json(&self) -> Result<String> {
        let map: BTreeMap<String, usize> = self
            .origin
            .iter()
            .enumerate()
            .filter_map(|(s, m)| m.map(|m| (s.to_string(), m)))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    /// Re-indexes a feature table defined on the MRP states onto the SSP.
    ///
    /// Safe states keep their features and availability. Unsafe states and
    /// `x*` get every action with the zero feature vector, so the policy is
    /// uniform there and its score vanishes.
    pub fn lift_features(&self, mrp_features: &FeatureTable) -> Result<FeatureTable> {
        let na = self.mdp.num_actions();
        if mrp_features.num_actions() != na {
            return Err(Error::Dimension { expected: na, got: mrp_features.num_actions() });
        }
        let mut out = FeatureTable::new(self.mdp.num_states(), na, mrp_features.dim());
        for (s, origin) in self.origin.iter().enumerate() {
            let keep = match origin {
                Some(m) if self.unsafe_states.binary_search(&s).is_err() => Some(*m),
                _ => None,
            };
            for u in 0..na {
                match keep {
                    Some(m) => {
                        if mrp_features.available(m, u) {
                            out.set(s, u, mrp_features.features(m, u))?;
                        }
                    }
                    None => out.set_zero(s, u)?,
                }
            }
        }
        Ok(out)
    }
}

/// Builds the SSP whose expected total cost counts unsafe visits.
pub fn mrp_to_ssp(problem: &MrpProblem) -> Result<SspProblem> {
    problem.validate()?;
    let m = &problem.mdp;
    let na = m.num_actions();
    let mut to_s: Vec<Option<usize>> = vec![None; m.num_states()];
    let mut origin = Vec::new();
    for x in 0..m.num_states() {
        if !problem.is_goal(x) {
            to_s[x] = Some(origin.len());
            origin.push(Some(x));
        }
    }
    let terminal = origin.len();
    origin.push(None);
    let s0 = to_s[m.initial_state()].expect("initial state is not a goal");

    let mut ssp = FiniteMdp::new(origin.len(), na, s0)?;
    let mut unsafe_s = Vec::new();
    for (s, &orig) in origin.iter().enumerate() {
        let Some(x) = orig else {
            for u in 0..na {
                ssp.set_row(s, u, &[(terminal, 1.0)], 0.0)?;
            }
            continue;
        };
        if problem.is_unsafe(x) {
            unsafe_s.push(s);
            for u in 0..na {
                ssp.set_row(s, u, &[(s0, 1.0)], 1.0)?;
            }
            continue;
        }
        for u in m.available_actions(x) {
            let mut goal_mass = 0.0;
            let mut row = Vec::with_capacity(m.row(x, u).len());
            for &(j, p) in m.row(x, u) {
                match to_s[j] {
                    Some(sj) => row.push((sj, p)),
                    None => goal_mass += p,
                }
            }
            if goal_mass > 0.0 {
                row.push((terminal, goal_mass));
            }
            ssp.set_row(s, u, &row, 0.0)?;
        }
    }
    ssp.set_termination_state(Some(terminal))?;
    ssp.ensure_valid()?;
    Ok(SspProblem { mdp: ssp, origin, unsafe_states: unsafe_s })
}

/// The SSP chain in which `x*` jumps back to `x0` with probability 1.
///
/// The result carries no termination state.
pub fn apply_restart_modification(ssp: &SspProblem) -> Result<FiniteMdp> {
    let mut mdp = ssp.mdp.clone();
    let terminal = ssp.terminal();
    let x0 = mdp.initial_state();
    for u in 0..mdp.num_actions() {
        if mdp.is_available(terminal, u) {
            mdp.set_row(terminal, u, &[(x0, 1.0)], 0.0)?;
        }
    }
    mdp.set_termination_state(None)?;
    Ok(mdp)
}

/// Reachability probability implied by an expected unsafe-visit count.
pub fn reachability_from_cost(alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Invalid(format!("expected cost must be nonnegative, got {alpha}")));
    }
    Ok(1.0 / (alpha + 1.0))
}
