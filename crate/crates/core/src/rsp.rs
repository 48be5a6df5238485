//! Boltzmann randomized stationary policies over linear per-action features.
//!
//! `μ_θ(u|x) ∝ F_u(x)·exp(θ·φ_u(x))`, with the closed-form score
//! `ψ_θ(x,u) = φ_u(x) − Σ_a μ_θ(a|x)·φ_a(x)` on available actions and the
//! zero vector elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Rsp;

/// Actor parameter vector θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyParams(pub Vec<f64>);

impl PolicyParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("theta entry {v}")));
        }
        Ok(Self(theta))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for PolicyParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Source of per-action feature vectors `φ_u(x)` and the availability mask.
pub trait FeatureProvider {
    fn dim(&self) -> usize;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn available(&self, x: usize, u: usize) -> bool;
    /// Feature vector of `(x, u)`; only meaningful when available.
    fn features(&self, x: usize, u: usize) -> &[f64];
}

impl<T: FeatureProvider + ?Sized> FeatureProvider for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn num_states(&self) -> usize {
        (**self).num_states()
    }

    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn available(&self, x: usize, u: usize) -> bool {
        (**self).available(x, u)
    }

    fn features(&self, x: usize, u: usize) -> &[f64] {
        (**self).features(x, u)
    }
}

/// Dense `(state, action) → φ` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    mask: Vec<bool>,
    values: Vec<f64>,
}

impl FeatureTable {
    /// All pairs unavailable, all features zero.
    pub fn new(num_states: usize, num_actions: usize, dim: usize) -> Self {
        Self {
            num_states,
            num_actions,
            dim,
            mask: vec![false; num_states * num_actions],
            values: vec![0.0; num_states * num_actions * dim],
        }
    }

    pub fn set(&mut self, x: usize, u: usize, phi: &[f64]) -> Result<()> {
        if phi.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: phi.len() });
        }
        if x >= self.num_states || u >= self.num_actions {
            return Err(Error::OutOfRange { index: x * self.num_actions + u, size: self.mask.len() });
        }
        if let Some(v) = phi.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {v} at ({x},{u})")));
        }
        let pair = x * self.num_actions + u;
        self.mask[pair] = true;
        self.values[pair * self.dim..(pair + 1) * self.dim].copy_from_slice(phi);
        Ok(())
    }

    /// Marks `(x, u)` available with the zero feature vector.
    pub fn set_zero(&mut self, x: usize, u: usize) -> Result<()> {
        let zeros = vec![0.0; self.dim];
        self.set(x, u, &zeros)
    }
}

impl FeatureProvider for FeatureTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn available(&self, x: usize, u: usize) -> bool {
        self.mask[x * self.num_actions + u]
    }

    fn features(&self, x: usize, u: usize) -> &[f64] {
        let pair = x * self.num_actions + u;
        &self.values[pair * self.dim..(pair + 1) * self.dim]
    }
}

/// Boltzmann policy over any [`FeatureProvider`].
#[derive(Debug, Clone)]
pub struct BoltzmannPolicy<F> {
    provider: F,
}

impl<F: FeatureProvider> BoltzmannPolicy<F> {
    pub fn new(provider: F) -> Self {
        Self { provider }
    }

    pub fn provider(&self) -> &F {
        &self.provider
    }

    fn check_theta(&self, theta: &PolicyParams) -> Result<()> {
        if theta.dim() != self.provider.dim() {
            return Err(Error::Dimension { expected: self.provider.dim(), got: theta.dim() });
        }
        Ok(())
    }
}

impl<F: FeatureProvider> Rsp for BoltzmannPolicy<F> {
    fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn num_actions(&self) -> usize {
        self.provider.num_actions()
    }

    fn action_probs_into(&self, theta: &PolicyParams, x: usize, out: &mut [f64]) -> Result<()> {
        self.check_theta(theta)?;
        let p = &self.provider;
        let mut max_h = f64::NEG_INFINITY;
        for (u, slot) in out.iter_mut().enumerate() {
            if p.available(x, u) {
                let h: f64 = p.features(x, u).iter().zip(&theta.0).map(|(f, t)| f * t).sum();
                *slot = h;
                max_h = max_h.max(h);
            }
        }
        if max_h == f64::NEG_INFINITY {
            return Err(Error::NoAvailableAction(x));
        }
        if !max_h.is_finite() {
            return Err(Error::NonFinite(format!("Boltzmann exponent {max_h} at state {x}")));
        }
        let mut total = 0.0;
        for (u, slot) in out.iter_mut().enumerate() {
            if p.available(x, u) {
                let e = (*slot - max_h).exp();
                if !e.is_finite() {
                    return Err(Error::NonFinite(format!("Boltzmann exponent at ({x},{u})")));
                }
                *slot = e;
                total += e;
            } else {
                *slot = 0.0;
            }
        }
        for slot in out.iter_mut() {
            *slot /= total;
        }
        Ok(())
    }

    fn psi_into(&self, theta: &PolicyParams, x: usize, u: usize, out: &mut [f64]) -> Result<()> {
        self.check_theta(theta)?;
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.provider.available(x, u) {
            return Ok(());
        }
        let probs = self.action_probs(theta, x)?;
        out.copy_from_slice(self.provider.features(x, u));
        for (a, &mu) in probs.iter().enumerate() {
            if mu > 0.0 {
                for (o, f) in out.iter_mut().zip(self.provider.features(x, a)) {
                    *o -= mu * f;
                }
            }
        }
        Ok(())
    }
}

/// `Σ_u μ_θ(u|x)·ψ_θ(x,u)`, which is the zero vector for any valid policy.
pub fn expected_policy_score<P: Rsp>(rsp: &P, theta: &PolicyParams, x: usize) -> Result<Vec<f64>> {
    let probs = rsp.action_probs(theta, x)?;
    let mut acc = vec![0.0; rsp.dim()];
    let mut psi = vec![0.0; rsp.dim()];
    for (u, &mu) in probs.iter().enumerate() {
        if mu == 0.0 {
            continue;
        }
        rsp.psi_into(theta, x, u, &mut psi)?;
        for (a, p) in acc.iter_mut().zip(&psi) {
            *a += mu * p;
        }
    }
    Ok(acc)
}
