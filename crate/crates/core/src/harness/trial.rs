use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrialConfig;
use crate::env::MirrorEnv;
use crate::error::{Error, Result};
use crate::feedback::{judge, sign_of, SmearAccumulator, TrainerState};
use crate::learner::{sample_action, shape_reward, ActionSample, Learner, LearnerState};
use crate::rng::{stream_rng, Stream};
use crate::tiles::{FeatureVector, TileCoder};

/// One row of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub theta_agent: f64,
    pub theta_target: f64,
    pub action: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r_mdp: f64,
    pub feedback_event: bool,
    pub feedback_sign: i8,
    pub h_accumulator: f64,
    pub r_shaped: f64,
    pub delta: f64,
    pub error_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub steps_completed: usize,
    pub tail_mae: f64,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_step: Option<Vec<StepLog>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<LearnerState>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub per_step_log: bool,
    pub dump_weights: bool,
    /// Skip learning updates; the policy stays at its initial weights.
    pub frozen: bool,
    /// Scripted actions replacing the policy sample, one per step. The
    /// learner still updates from them unless `frozen`.
    pub action_override: Option<Vec<f64>>,
}

/// Where the human reward for a step comes from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum HumanChannel {
    /// Control condition: MDP reward only.
    Silent,
    Simulated(TrainerState),
    /// Feedback supplied by the caller each step, smeared with the given decay.
    External {
        smear: f64,
        acc: SmearAccumulator,
    },
}

impl HumanChannel {
    pub fn h(&self) -> f64 {
        match self {
            HumanChannel::Silent => 0.0,
            HumanChannel::Simulated(t) => t.h(),
            HumanChannel::External { acc, .. } => acc.value(),
        }
    }
}

/// A trial in progress: environment, coder, learner and human channel
/// advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Trial {
    config: TrialConfig,
    coder: TileCoder,
    env: MirrorEnv,
    learner: Learner,
    human: HumanChannel,
    policy_rng: ChaCha8Rng,
    x: FeatureVector,
    errors: Vec<f64>,
    frozen: bool,
}

impl Trial {
    /// Builds a trial whose human channel follows `config.feedback`.
    pub fn new(config: TrialConfig) -> Result<Self> {
        let human = match &config.feedback {
            None => HumanChannel::Silent,
            Some(fb) => {
                HumanChannel::Simulated(TrainerState::new(fb.clone(), stream_rng(config.seed, Stream::Feedback))?)
            }
        };
        Self::with_channel(config, human)
    }

    /// Builds a trial fed by externally supplied feedback (live sessions and
    /// replays). The smear comes from `config.feedback`, or 0 without it.
    pub fn new_external(config: TrialConfig) -> Result<Self> {
        let smear = config.feedback.as_ref().map_or(0.0, |f| f.smear);
        Self::with_channel(config, HumanChannel::External { smear, acc: SmearAccumulator::default() })
    }

    fn with_channel(config: TrialConfig, human: HumanChannel) -> Result<Self> {
        config.validate()?;
        let coder = TileCoder::new(config.coder.clone())?;
        let env = MirrorEnv::reset(config.env.clone(), config.seed)?;
        let learner = Learner::new(config.learner.clone(), coder.memory_size())?;
        let (emg, angle) = env.observe();
        let x = coder.encode_obs(emg, angle)?;
        let policy_rng = stream_rng(config.seed, Stream::Policy);
        Ok(Self {
            errors: Vec::with_capacity(config.max_steps),
            config,
            coder,
            env,
            learner,
            human,
            policy_rng,
            x,
            frozen: false,
        })
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn env(&self) -> &MirrorEnv {
        &self.env
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn h(&self) -> f64 {
        self.human.h()
    }

    pub fn steps_taken(&self) -> usize {
        self.errors.len()
    }

    pub fn is_done(&self) -> bool {
        self.errors.len() >= self.config.max_steps
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Mean absolute error over the last `window` completed steps.
    pub fn tail_mae(&self, window: usize) -> Option<f64> {
        let w = window.min(self.errors.len());
        if w == 0 {
            return None;
        }
        let tail = &self.errors[self.errors.len() - w..];
        Some(tail.iter().sum::<f64>() / w as f64)
    }

    /// Advances one step. `external` is the feedback delivered this step for
    /// an external channel and is ignored otherwise. `scripted` replaces the
    /// policy sample.
    pub fn step(&mut self, external: f64, scripted: Option<f64>) -> Result<StepLog> {
        let step = self.errors.len();
        let stats = self.learner.policy_stats(&self.x).map_err(|e| at_step(e, step))?;
        let mut sample = sample_action(stats, &mut self.policy_rng).map_err(|e| at_step(e, step))?;
        if let Some(a) = scripted {
            sample = ActionSample { action: a, ..sample };
        }

        let outcome = self.env.step(sample.action)?;
        let (emg, angle) = self.env.observe();
        let x_next = self.coder.encode_obs(emg, angle)?;

        let (event, sign, h) = match &mut self.human {
            HumanChannel::Silent => (false, 0, 0.0),
            HumanChannel::Simulated(trainer) => {
                let truth = judge(outcome.error_abs, self.config.env.delta_theta_max);
                let ev = trainer.sample_feedback(truth);
                let h = trainer.accumulate(ev.value);
                (ev.occurred(), ev.sign(), h)
            }
            HumanChannel::External { smear, acc } => {
                let h = acc.accumulate(*smear, external);
                (external != 0.0, sign_of(external), h)
            }
        };
        let r_shaped = shape_reward(outcome.r_mdp, h);

        let delta = if self.frozen {
            self.learner.td_error(r_shaped, &self.x, &x_next).map_err(|e| at_step(e, step))?
        } else {
            self.learner.update(&self.x, &x_next, &sample, r_shaped).map_err(|e| at_step(e, step))?
        };
        self.x = x_next;
        self.errors.push(outcome.error_abs);

        let s = self.env.state();
        Ok(StepLog {
            step: s.step_index,
            theta_agent: s.theta_agent,
            theta_target: s.theta_target,
            action: sample.action,
            mu: sample.mu,
            sigma: sample.sigma,
            r_mdp: outcome.r_mdp,
            feedback_event: event,
            feedback_sign: sign,
            h_accumulator: h,
            r_shaped,
            delta,
            error_abs: outcome.error_abs,
        })
    }

    pub fn into_learner_state(self) -> LearnerState {
        self.learner.into_state()
    }

    /// Packs the trial as it stands. A diverged trial reports a NaN tail error.
    pub fn into_record(
        self,
        divergence: Option<String>,
        per_step: Option<Vec<StepLog>>,
        dump_weights: bool,
    ) -> TrialRecord {
        let diverged = divergence.is_some();
        let tail_mae = if diverged { f64::NAN } else { self.tail_mae(self.config.tail_window).unwrap_or(f64::NAN) };
        let steps_completed = self.steps_taken();
        let config = self.config.clone();
        let weights = dump_weights.then(|| self.into_learner_state());
        TrialRecord { config, steps_completed, tail_mae, diverged, divergence, per_step, weights }
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Diverged { what, .. } => Error::Diverged { step, what },
        other => other,
    }
}

/// Drives `trial` to completion, feeding `external(step)` as the per-step
/// external feedback, and packs the result into a record.
pub fn drive(mut trial: Trial, options: &RunOptions, mut external: impl FnMut(usize) -> f64) -> Result<TrialRecord> {
    trial.set_frozen(options.frozen);
    let mut log = options.per_step_log.then(|| Vec::with_capacity(trial.config.max_steps));
    let mut divergence = None;
    while !trial.is_done() {
        let step = trial.steps_taken();
        let scripted = options.action_override.as_ref().and_then(|a| a.get(step).copied());
        match trial.step(external(step), scripted) {
            Ok(row) => {
                if let Some(log) = log.as_mut() {
                    log.push(row);
                }
            }
            Err(e @ Error::Diverged { .. }) => {
                divergence = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(trial.into_record(divergence, log, options.dump_weights))
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialRecord> {
    run_trial_with(config, &RunOptions::default())
}

pub fn run_trial_with(config: &TrialConfig, options: &RunOptions) -> Result<TrialRecord> {
    drive(Trial::new(config.clone())?, options, |_| 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::target_angle;
    use crate::feedback::FeedbackModelConfig;

    fn short(steps: usize) -> TrialConfig {
        TrialConfig { max_steps: steps, tail_window: steps / 2, ..TrialConfig::default() }
    }

    #[test]
    fn deterministic() {
        let cfg = short(2000).with_seed(7).with_feedback(Some(FeedbackModelConfig::default()));
        let opts = RunOptions { per_step_log: true, dump_weights: true, ..Default::default() };
        assert_eq!(run_trial_with(&cfg, &opts).unwrap(), run_trial_with(&cfg, &opts).unwrap());
    }

    #[test]
    fn scripted_tail_matches_hand_trace() {
        let cfg = TrialConfig { max_steps: 10, tail_window: 10, ..TrialConfig::default() };
        let actions = vec![0.05, -0.02, 0.3, -5.0, 0.0, 0.01, 0.1, -0.1, 0.07, 0.02];
        let rec =
            run_trial_with(&cfg, &RunOptions { action_override: Some(actions.clone()), ..Default::default() }).unwrap();

        let env = &cfg.env;
        let mut theta = 0.5 * (env.theta_min + env.theta_max);
        let mut total = 0.0;
        for (i, a) in actions.iter().enumerate() {
            theta = (theta + a.clamp(-0.1, 0.1)).clamp(env.theta_min, env.theta_max);
            total += (theta - target_angle(env, i + 1)).abs();
        }
        assert!((rec.tail_mae - total / 10.0).abs() < 1e-15);
        assert!(!rec.diverged);
    }

    #[test]
    fn silent_trainer_equals_control() {
        let control = short(3000).with_seed(11);
        let silent = control.clone().with_feedback(Some(FeedbackModelConfig::new(0.0, 0.9, 0.5)));
        let opts = RunOptions { dump_weights: true, ..Default::default() };
        let a = run_trial_with(&control, &opts).unwrap();
        let b = run_trial_with(&silent, &opts).unwrap();
        assert_eq!(a.tail_mae.to_bits(), b.tail_mae.to_bits());
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn divergence_is_recorded() {
        let mut cfg = short(500).with_seed(1);
        cfg.learner.alpha_mu = 1e200;
        cfg.learner.alpha_sigma = 1e200;
        let rec = run_trial_with(&cfg, &RunOptions { per_step_log: true, ..Default::default() }).unwrap();
        assert!(rec.diverged);
        assert!(rec.tail_mae.is_nan());
        assert!(rec.steps_completed < 500);
        assert_eq!(rec.per_step.unwrap().len(), rec.steps_completed);
    }

    #[test]
    fn frozen_learner_keeps_zero_weights() {
        let cfg = short(200).with_seed(2);
        let rec = run_trial_with(&cfg, &RunOptions { frozen: true, dump_weights: true, ..Default::default() }).unwrap();
        let w = rec.weights.unwrap();
        assert!(w.w_mu.iter().chain(&w.w_sigma).chain(&w.v).all(|&x| x == 0.0));
    }

    #[test]
    fn log_columns_are_consistent() {
        let cfg = short(400).with_seed(3).with_feedback(Some(FeedbackModelConfig::new(0.5, 0.75, 0.5)));
        let rec = run_trial_with(&cfg, &RunOptions { per_step_log: true, ..Default::default() }).unwrap();
        let log = rec.per_step.unwrap();
        let mut h = 0.0;
        for row in &log {
            h = 0.5 * h + f64::from(row.feedback_sign);
            assert_eq!(row.h_accumulator, h);
            assert_eq!(row.r_shaped, row.r_mdp + row.h_accumulator);
            assert_eq!(row.feedback_event, row.feedback_sign != 0);
            assert!(row.sigma >= 0.01);
        }
        assert!(log.iter().any(|r| r.feedback_event));
    }
}
