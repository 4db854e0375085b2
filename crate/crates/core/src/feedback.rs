//! Simulated human trainer and the smear accumulator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackModelConfig {
    pub p_feedback: f64,
    pub p_correct: f64,
    pub smear: f64,
    pub feedback_magnitude: f64,
}

impl Default for FeedbackModelConfig {
    fn default() -> Self {
        Self { p_feedback: 0.05, p_correct: 0.9, smear: 0.5, feedback_magnitude: 1.0 }
    }
}

impl FeedbackModelConfig {
    pub fn new(p_feedback: f64, p_correct: f64, smear: f64) -> Self {
        Self { p_feedback, p_correct, smear, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_feedback) {
            return config_err(format!("feedback.p_feedback must lie in [0, 1], got {}", self.p_feedback));
        }
        if !(0.0..=1.0).contains(&self.p_correct) {
            return config_err(format!("feedback.p_correct must lie in [0, 1], got {}", self.p_correct));
        }
        if !(0.0..1.0).contains(&self.smear) {
            return config_err(format!("feedback.smear must lie in [0, 1), got {}", self.smear));
        }
        if !(self.feedback_magnitude.is_finite() && self.feedback_magnitude > 0.0) {
            return config_err("feedback.feedback_magnitude must be positive");
        }
        Ok(())
    }

    /// Largest |H| any feedback sequence can produce.
    pub fn accumulator_bound(&self) -> f64 {
        self.feedback_magnitude / (1.0 - self.smear)
    }
}

/// The sign a perfectly attentive trainer would give: praise when inside the
/// reward threshold (inclusive).
pub fn judge(error_abs: f64, threshold: f64) -> i8 {
    if error_abs <= threshold {
        1
    } else {
        -1
    }
}

/// -1, 0 or +1.
pub fn sign_of(value: f64) -> i8 {
    if value > 0.0 {
        1
    } else if value < 0.0 {
        -1
    } else {
        0
    }
}

/// Exponentially smeared human reward, `H <- smear * H + f`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SmearAccumulator {
    h: f64,
}

impl SmearAccumulator {
    pub fn value(&self) -> f64 {
        self.h
    }

    pub fn accumulate(&mut self, smear: f64, feedback: f64) -> f64 {
        self.h = smear * self.h + feedback;
        self.h
    }
}

/// Outcome of one trainer decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackEvent {
    /// Signed feedback value: `0` when the trainer stayed silent.
    pub value: f64,
    pub correct: bool,
}

impl FeedbackEvent {
    pub fn occurred(&self) -> bool {
        self.value != 0.0
    }

    pub fn sign(&self) -> i8 {
        sign_of(self.value)
    }
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    config: FeedbackModelConfig,
    rng: ChaCha8Rng,
    acc: SmearAccumulator,
}

impl TrainerState {
    pub fn new(config: FeedbackModelConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, rng, acc: SmearAccumulator::default() })
    }

    pub fn config(&self) -> &FeedbackModelConfig {
        &self.config
    }

    pub fn h(&self) -> f64 {
        self.acc.value()
    }

    /// Bernoulli(p_feedback) event whose sign matches `correct_sign` with
    /// probability p_correct. Both draws are taken every step so the stream
    /// position does not depend on outcomes.
    pub fn sample_feedback(&mut self, correct_sign: i8) -> FeedbackEvent {
        let event: f64 = self.rng.gen();
        let truth: f64 = self.rng.gen();
        if event >= self.config.p_feedback {
            return FeedbackEvent { value: 0.0, correct: false };
        }
        let correct = truth < self.config.p_correct;
        let sign = if correct { correct_sign } else { -correct_sign };
        FeedbackEvent { value: f64::from(sign) * self.config.feedback_magnitude, correct }
    }

    pub fn accumulate(&mut self, feedback: f64) -> f64 {
        self.acc.accumulate(self.config.smear, feedback)
    }
}
