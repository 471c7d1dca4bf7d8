//! Timed command scripts that drive a session without a human.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ClientMessage;
use crate::session::{Session, SessionError, TickOutput};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid script: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    /// Session time (s) at which the command is queued.
    pub at: f64,
    pub command: ClientMessage,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandScript {
    pub entries: Vec<ScriptEntry>,
}

impl CommandScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: CommandScript = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        let mut prev = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.at.is_finite() && e.at >= prev) {
                return Err(ScriptError::Invalid(format!(
                    "entry {i}: at={} must be finite, non-negative and not before the previous entry",
                    e.at
                )));
            }
            e.command.clone().into_command().map_err(|err| ScriptError::Invalid(format!("entry {i}: {err}")))?;
            prev = e.at;
        }
        Ok(())
    }

    /// Time of the last entry, zero for an empty script.
    pub fn duration(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.at)
    }
}

/// Feeds a script into a session tick by tick.
///
/// Before each tick, every entry with `at` up to the session clock plus half
/// a step is queued, so an entry lands on the tick nearest its time.
#[derive(Clone, Debug)]
pub struct ScriptRunner {
    script: CommandScript,
    next: usize,
}

impl ScriptRunner {
    pub fn new(script: CommandScript) -> Self {
        ScriptRunner { script, next: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.script.entries.len()
    }

    /// Queues due commands and runs one tick.
    pub fn tick(&mut self, session: &mut Session, dt: f64) -> Result<TickOutput, SessionError> {
        let horizon = session.clock() + 0.5 * dt;
        while let Some(e) = self.script.entries.get(self.next) {
            if e.at > horizon {
                break;
            }
            let cmd = e.command.clone().into_command().map_err(|err| SessionError::InvalidCommand(err.to_string()))?;
            session.submit(cmd);
            self.next += 1;
        }
        session.tick(dt)
    }
}
