//! Wire messages: UTF-8 JSON, one message per line (raw TCP) or per text
//! frame (WebSocket), discriminated by `type`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Outbound {
    State {
        step: usize,
        theta_agent: f64,
        theta_target: f64,
        r_mdp: f64,
        h_accumulator: f64,
        tail_mae_so_far: f64,
        /// Sum of human feedback injected on this step.
        feedback_applied: f64,
        /// Number of feedback messages drained into this step.
        feedback_events: usize,
    },
    Status {
        running: bool,
        config_digest: String,
        step: usize,
        clients: usize,
        finished: bool,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlVerb {
    Start,
    Pause,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Inbound {
    Feedback {
        sign: i8,
        #[serde(default)]
        client_time: Option<f64>,
    },
    Control {
        verb: ControlVerb,
    },
}

impl Inbound {
    /// Parses and checks one inbound message.
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: Inbound = serde_json::from_str(text.trim()).map_err(|e| format!("malformed message: {e}"))?;
        if let Inbound::Feedback { sign, .. } = msg {
            if sign != 1 && sign != -1 {
                return Err(format!("feedback sign must be +1 or -1, got {sign}"));
            }
        }
        Ok(msg)
    }
}

impl Outbound {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outbound serializes")
    }

    pub fn error(message: impl Into<String>) -> Self {
        Outbound::Error { message: message.into() }
    }
}
