//! Self-mirrored elbow tracking task.
//!
//! A preprogrammed "left arm" follows a sine trajectory inside the joint
//! limits; the learner moves the "right arm" by clipped angular displacements
//! and is rewarded for staying within a threshold of it. The learner observes
//! a synthetic EMG channel correlated with the target, never the target itself.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub delta_theta_max: f64,
    pub action_clip: f64,
    pub period_steps: usize,
    /// Target amplitude as a fraction of the half range.
    pub amplitude_fraction: f64,
    /// Slope of the negative reward: `r = -error_scale * |error|` outside the threshold.
    pub error_scale: f64,
    pub emg_noise_std: f64,
    /// Moving-average window applied to the raw EMG.
    pub emg_window: usize,
    /// Nominal control rate. Only live sessions pace to it.
    pub step_hz: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            theta_min: 0.0349,
            theta_max: 1.5446,
            delta_theta_max: 0.1,
            action_clip: 0.1,
            period_steps: 200,
            amplitude_fraction: 0.9,
            error_scale: 1.0,
            emg_noise_std: 0.05,
            emg_window: 5,
            step_hz: 33.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min.is_finite() && self.theta_max.is_finite() && self.theta_min < self.theta_max) {
            return config_err(format!(
                "env.theta_min ({}) must be below env.theta_max ({})",
                self.theta_min, self.theta_max
            ));
        }
        if self.delta_theta_max.is_nan() || self.delta_theta_max <= 0.0 {
            return config_err("env.delta_theta_max must be positive");
        }
        if self.action_clip.is_nan() || self.action_clip <= 0.0 {
            return config_err("env.action_clip must be positive");
        }
        if self.period_steps == 0 {
            return config_err("env.period_steps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.amplitude_fraction) {
            return config_err("env.amplitude_fraction must lie in [0, 1]");
        }
        if self.error_scale.is_nan() || self.error_scale <= 0.0 {
            return config_err("env.error_scale must be positive");
        }
        if !(self.emg_noise_std >= 0.0 && self.emg_noise_std.is_finite()) {
            return config_err("env.emg_noise_std must be non-negative");
        }
        if self.emg_window == 0 {
            return config_err("env.emg_window must be at least 1");
        }
        if self.step_hz.is_nan() || self.step_hz <= 0.0 {
            return config_err("env.step_hz must be positive");
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.theta_min + self.theta_max)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude_fraction * 0.5 * (self.theta_max - self.theta_min)
    }

    /// Target angle normalized to `[0, 1]` over the joint range.
    pub fn normalized(&self, theta: f64) -> f64 {
        (theta - self.theta_min) / (self.theta_max - self.theta_min)
    }
}

/// Preprogrammed joint angle at `step`.
pub fn target_angle(config: &EnvConfig, step: usize) -> f64 {
    let phase = (step % config.period_steps) as f64 / config.period_steps as f64;
    let theta = config.mid() + config.amplitude() * (2.0 * PI * phase).sin();
    theta.clamp(config.theta_min, config.theta_max)
}

/// MDP reward for an absolute tracking error.
pub fn mdp_reward(config: &EnvConfig, error_abs: f64) -> f64 {
    if error_abs <= config.delta_theta_max {
        1.0
    } else {
        -config.error_scale * error_abs
    }
}

/// Target-correlated synthetic EMG: rescaled target plus Gaussian noise,
/// smoothed by a trailing moving average and clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct EmgSynth {
    config: EnvConfig,
    rng: ChaCha8Rng,
    window: VecDeque<f64>,
}

impl EmgSynth {
    pub fn new(config: EnvConfig, rng: ChaCha8Rng) -> Self {
        let cap = config.emg_window;
        Self { config, rng, window: VecDeque::with_capacity(cap) }
    }

    pub fn raw<R: Rng + ?Sized>(config: &EnvConfig, step: usize, rng: &mut R) -> f64 {
        let clean = config.normalized(target_angle(config, step));
        if config.emg_noise_std > 0.0 {
            let noise = Normal::new(0.0, config.emg_noise_std).expect("validated noise std");
            clean + noise.sample(rng)
        } else {
            clean
        }
    }

    pub fn sample(&mut self, step: usize) -> f64 {
        let raw = Self::raw(&self.config, step, &mut self.rng);
        if self.window.len() == self.config.emg_window {
            self.window.pop_front();
        }
        self.window.push_back(raw);
        let avg = self.window.iter().sum::<f64>() / self.window.len() as f64;
        avg.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub step_index: usize,
    pub theta_agent: f64,
    pub theta_target: f64,
    pub emg_value: f64,
}

impl EnvState {
    /// What the learner sees: `(emg, theta_agent)`.
    pub fn observe(&self) -> (f64, f64) {
        (self.emg_value, self.theta_agent)
    }

    pub fn error_abs(&self) -> f64 {
        (self.theta_agent - self.theta_target).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub displacement: f64,
    pub error_abs: f64,
    pub r_mdp: f64,
}

#[derive(Debug, Clone)]
pub struct MirrorEnv {
    config: EnvConfig,
    state: EnvState,
    emg: EmgSynth,
}

impl MirrorEnv {
    pub fn reset(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut emg = EmgSynth::new(config.clone(), stream_rng(seed, Stream::Emg));
        let state = EnvState {
            step_index: 0,
            theta_agent: config.mid(),
            theta_target: target_angle(&config, 0),
            emg_value: emg.sample(0),
        };
        Ok(Self { config, state, emg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observe(&self) -> (f64, f64) {
        self.state.observe()
    }

    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if !action.is_finite() {
            return Err(Error::NonFinite("environment action"));
        }
        let cfg = &self.config;
        let displacement = action.clamp(-cfg.action_clip, cfg.action_clip);
        let theta_agent = (self.state.theta_agent + displacement).clamp(cfg.theta_min, cfg.theta_max);
        let step_index = self.state.step_index + 1;
        let theta_target = target_angle(cfg, step_index);
        let error_abs = (theta_agent - theta_target).abs();
        let r_mdp = mdp_reward(cfg, error_abs);
        let emg_value = self.emg.sample(step_index);
        self.state = EnvState { step_index, theta_agent, theta_target, emg_value };
        Ok(StepOutcome { displacement, error_abs, r_mdp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reset_midpoint() {
        let env = MirrorEnv::reset(EnvConfig::default(), 1).unwrap();
        assert!((env.state().theta_agent - 0.78975).abs() < 1e-12);
        assert_eq!(env.state().step_index, 0);
    }

    #[test]
    fn reset_rejects_inverted_limits() {
        let cfg = EnvConfig { theta_min: 1.0, theta_max: 1.0, ..Default::default() };
        assert!(matches!(MirrorEnv::reset(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_emg() {
        let run = |seed| {
            let mut env = MirrorEnv::reset(EnvConfig::default(), seed).unwrap();
            (0..300)
                .map(|_| {
                    env.step(0.0).unwrap();
                    env.state().emg_value
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn target_values() {
        let c = EnvConfig::default();
        assert!((target_angle(&c, 0) - 0.78975).abs() < 1e-12);
        let peak = 0.78975 + 0.9 * 0.75485;
        assert!((target_angle(&c, 50) - peak).abs() < 1e-12);
        assert!((peak - 1.46912).abs() < 1e-5);
    }

    #[test]
    fn reward_rule() {
        let c = EnvConfig::default();
        assert_eq!(mdp_reward(&c, 0.05), 1.0);
        assert_eq!(mdp_reward(&c, 0.1), 1.0);
        assert_eq!(mdp_reward(&c, 0.3), -0.3);
    }

    #[test]
    fn action_is_clipped() {
        let mut env = MirrorEnv::reset(EnvConfig::default(), 0).unwrap();
        let out = env.step(5.0).unwrap();
        assert_eq!(out.displacement, 0.1);
        assert!((env.state().theta_agent - 0.88975).abs() < 1e-12);
        assert!(env.step(f64::NAN).is_err());
    }

    #[test]
    fn step_reward_uses_post_step_error() {
        let mut env = MirrorEnv::reset(EnvConfig::default(), 0).unwrap();
        let out = env.step(0.0).unwrap();
        let want = (0.78975 - target_angle(env.config(), 1)).abs();
        assert!((out.error_abs - want).abs() < 1e-15);
        assert_eq!(out.r_mdp, 1.0);
    }

    #[test]
    fn noiseless_emg_is_smoothed_target() {
        let c = EnvConfig { emg_noise_std: 0.0, ..Default::default() };
        let mut env = MirrorEnv::reset(c.clone(), 0).unwrap();
        for _ in 0..450 {
            env.step(0.0).unwrap();
            let t = env.state().step_index;
            let lo = t.saturating_sub(4);
            let want = (lo..=t).map(|s| c.normalized(target_angle(&c, s))).sum::<f64>() / (t - lo + 1) as f64;
            assert!((env.state().emg_value - want).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&env.state().emg_value));
        }
    }

    #[test]
    fn noisy_emg_is_unbiased() {
        let c = EnvConfig::default();
        let mut rng = stream_rng(8, Stream::Emg);
        let n = 100_000;
        let step = 37;
        let mean = (0..n).map(|_| EmgSynth::raw(&c, step, &mut rng)).sum::<f64>() / n as f64;
        let clean = c.normalized(target_angle(&c, step));
        assert!((mean - clean).abs() <= 3.0 * c.emg_noise_std / (n as f64).sqrt());
    }

    #[test]
    fn emg_stays_in_unit_interval_under_heavy_noise() {
        let c = EnvConfig { emg_noise_std: 2.0, ..Default::default() };
        let mut env = MirrorEnv::reset(c, 3).unwrap();
        for _ in 0..1000 {
            env.step(0.0).unwrap();
            assert!((0.0..=1.0).contains(&env.state().emg_value));
        }
    }

    #[test]
    fn observe_hides_target() {
        let s = EnvState { step_index: 3, theta_agent: 0.8, theta_target: 1.2, emg_value: 0.4 };
        assert_eq!(s.observe(), (0.4, 0.8));
        assert_eq!(s.observe(), s.observe());
    }

    #[test]
    fn oracle_tracker_is_within_threshold() {
        let c = EnvConfig::default();
        let mut env = MirrorEnv::reset(c.clone(), 0).unwrap();
        let mut errs = Vec::new();
        for step in 0..2 * c.period_steps {
            let next_target = target_angle(&c, step + 1);
            let a = (next_target - env.state().theta_agent).clamp(-0.1, 0.1);
            errs.push(env.step(a).unwrap().error_abs);
        }
        let tail = &errs[c.period_steps..];
        let mae = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mae < c.delta_theta_max);
    }

    proptest! {
        #[test]
        fn limits_hold(actions in proptest::collection::vec(-1e6f64..1e6, 1..400)) {
            let c = EnvConfig::default();
            let mut env = MirrorEnv::reset(c.clone(), 0).unwrap();
            for a in actions {
                let out = env.step(a).unwrap();
                let s = env.state();
                prop_assert!(s.theta_agent >= c.theta_min && s.theta_agent <= c.theta_max);
                prop_assert!(s.theta_target >= c.theta_min && s.theta_target <= c.theta_max);
                prop_assert!(out.r_mdp <= 1.0 && out.r_mdp >= -(c.theta_max - c.theta_min));
            }
        }

        #[test]
        fn target_is_periodic(s in 0usize..1_000_000) {
            let c = EnvConfig::default();
            prop_assert_eq!(target_angle(&c, s), target_angle(&c, s + c.period_steps));
        }
    }
}
