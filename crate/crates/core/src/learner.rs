//! Gaussian-policy continuous actor-critic with eligibility traces over
//! binary tile-coded features.
//!
//! The policy is `a ~ N(mu, sigma^2)` with `mu = w_mu . x` and
//! `sigma = max(sigma_min, exp(w_sigma . x))`. A linear critic `v . x`
//! supplies the TD error that drives all three weight vectors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tiles::FeatureVector;

/// Number of active features the default step sizes are normalized by.
pub const DEFAULT_ACTIVE_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub alpha_v: f64,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub gamma: f64,
    pub lambda_w: f64,
    pub lambda_v: f64,
    pub sigma_min: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::scaled(DEFAULT_ACTIVE_FEATURES)
    }
}

impl LearnerConfig {
    /// Step sizes `0.1 / m` for the critic and `0.01 / m` for both actor heads.
    pub fn scaled(active_features: usize) -> Self {
        let m = active_features.max(1) as f64;
        Self {
            alpha_v: 0.1 / m,
            alpha_mu: 0.01 / m,
            alpha_sigma: 0.01 / m,
            gamma: 0.9,
            lambda_w: 0.3,
            lambda_v: 0.7,
            sigma_min: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_v", self.alpha_v), ("alpha_mu", self.alpha_mu), ("alpha_sigma", self.alpha_sigma)] {
            if !(a.is_finite() && a > 0.0) {
                return config_err(format!("learner.{name} must be positive, got {a}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return config_err(format!("learner.gamma must lie in [0, 1), got {}", self.gamma));
        }
        for (name, l) in [("lambda_w", self.lambda_w), ("lambda_v", self.lambda_v)] {
            if !(0.0..=1.0).contains(&l) {
                return config_err(format!("learner.{name} must lie in [0, 1], got {l}"));
            }
        }
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return config_err(format!("learner.sigma_min must be positive, got {}", self.sigma_min));
        }
        Ok(())
    }
}

/// Actor and critic weights plus their eligibility traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub w_mu: Vec<f64>,
    pub w_sigma: Vec<f64>,
    pub v: Vec<f64>,
    pub e_mu: Vec<f64>,
    pub e_sigma: Vec<f64>,
    pub e_v: Vec<f64>,
}

impl LearnerState {
    pub fn zeros(len: usize) -> Self {
        Self {
            w_mu: vec![0.0; len],
            w_sigma: vec![0.0; len],
            v: vec![0.0; len],
            e_mu: vec![0.0; len],
            e_sigma: vec![0.0; len],
            e_v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub mu: f64,
    pub sigma: f64,
    pub action: f64,
}

/// Summed reward handed to the learner: MDP reward plus the human channel.
#[inline]
pub fn shape_reward(r_mdp: f64, h: f64) -> f64 {
    r_mdp + h
}

/// Draws `a ~ N(mu, sigma^2)` from the caller's stream.
pub fn sample_action<R: Rng + ?Sized>(stats: PolicyStats, rng: &mut R) -> Result<ActionSample> {
    let PolicyStats { mu, sigma } = stats;
    if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
        return Err(Error::NonFinite("policy statistics"));
    }
    let normal = Normal::new(mu, sigma).map_err(|_| Error::NonFinite("policy statistics"))?;
    let action = normal.sample(rng);
    Ok(ActionSample { mu, sigma, action })
}

#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    state: LearnerState,
    updates: usize,
}

impl Learner {
    pub fn new(config: LearnerConfig, memory_size: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: LearnerState::zeros(memory_size), updates: 0 })
    }

    pub fn from_state(config: LearnerConfig, state: LearnerState) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state, updates: 0 })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn into_state(self) -> LearnerState {
        self.state
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    fn diverged(&self, what: &'static str) -> Error {
        Error::Diverged { step: self.updates, what }
    }

    pub fn value(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.state.v)
    }

    pub fn policy_stats(&self, x: &FeatureVector) -> Result<PolicyStats> {
        let mu = x.dot(&self.state.w_mu);
        let log_sigma = x.dot(&self.state.w_sigma);
        if !mu.is_finite() {
            return Err(self.diverged("policy mean"));
        }
        if log_sigma.is_nan() || log_sigma == f64::INFINITY {
            return Err(self.diverged("policy log-stddev"));
        }
        let sigma = log_sigma.exp().max(self.config.sigma_min);
        if !sigma.is_finite() {
            return Err(self.diverged("policy stddev"));
        }
        Ok(PolicyStats { mu, sigma })
    }

    pub fn td_error(&self, r: f64, x: &FeatureVector, x_next: &FeatureVector) -> Result<f64> {
        let delta = r + self.config.gamma * self.value(x_next) - self.value(x);
        if delta.is_finite() {
            Ok(delta)
        } else {
            Err(self.diverged("TD error"))
        }
    }

    /// One learning step. Returns the TD error that drove it.
    ///
    /// Traces are updated before their weights, in the order critic, actor
    /// mean, actor stddev. `sample.sigma` is the clamped stddev the action was
    /// drawn with.
    pub fn update(
        &mut self,
        x: &FeatureVector,
        x_next: &FeatureVector,
        sample: &ActionSample,
        r_shaped: f64,
    ) -> Result<f64> {
        let delta = self.td_error(r_shaped, x, x_next)?;
        let cfg = &self.config;
        let st = &mut self.state;
        let active = x.active();

        let critic_decay = cfg.lambda_v * cfg.gamma;
        st.e_v.iter_mut().for_each(|e| *e *= critic_decay);
        for &i in active {
            st.e_v[i] += 1.0;
        }
        st.e_v.iter_mut().for_each(|e| *e = e.min(1.0));
        let step_v = cfg.alpha_v * delta;
        st.v.iter_mut().zip(&st.e_v).for_each(|(w, e)| *w += step_v * e);

        let diff = sample.action - sample.mu;
        st.e_mu.iter_mut().for_each(|e| *e *= cfg.lambda_w);
        for &i in active {
            st.e_mu[i] += diff;
        }
        let step_mu = cfg.alpha_mu * delta;
        st.w_mu.iter_mut().zip(&st.e_mu).for_each(|(w, e)| *w += step_mu * e);

        let spread = diff * diff - sample.sigma * sample.sigma;
        st.e_sigma.iter_mut().for_each(|e| *e *= cfg.lambda_w);
        for &i in active {
            st.e_sigma[i] += spread;
        }
        let step_sigma = cfg.alpha_sigma * delta;
        st.w_sigma.iter_mut().zip(&st.e_sigma).for_each(|(w, e)| *w += step_sigma * e);

        self.updates += 1;
        let finite = |v: &[f64]| v.iter().all(|w| w.is_finite());
        if !finite(&self.state.v) {
            return Err(self.diverged("critic weights"));
        }
        if !finite(&self.state.w_mu) || !finite(&self.state.e_mu) {
            return Err(self.diverged("actor mean weights"));
        }
        if !finite(&self.state.w_sigma) || !finite(&self.state.e_sigma) {
            return Err(self.diverged("actor stddev weights"));
        }
        Ok(delta)
    }
}

/// Log-density of the Gaussian policy and its gradients with respect to one
/// active weight of each actor head (`sigma = exp(w_sigma . x)`, unclamped).
pub mod gaussian {
    use std::f64::consts::PI;

    pub fn log_density(mu: f64, sigma: f64, a: f64) -> f64 {
        let z = (a - mu) / sigma;
        -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
    }

    /// d log pi / d w_mu[i] for an active feature.
    pub fn grad_mean_weight(mu: f64, sigma: f64, a: f64) -> f64 {
        (a - mu) / (sigma * sigma)
    }

    /// d log pi / d w_sigma[i] for an active feature.
    pub fn grad_log_stddev_weight(mu: f64, sigma: f64, a: f64) -> f64 {
        let d = a - mu;
        (d * d - sigma * sigma) / (sigma * sigma)
    }
}
