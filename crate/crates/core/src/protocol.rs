//! JSON messages exchanged with interactive clients.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::IntegratorKind;
use crate::session::{Command, Direction, FrameSnapshot, LinkArgs, Mode, SessionEvent};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("bad message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad message: {0}")]
    Invalid(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        "bad_message"
    }
}

/// Spring settings used when a `link` message omits them.
pub const DEFAULT_LINK_STIFFNESS: f64 = 100.0;
pub const DEFAULT_LINK_DAMPING: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Start,
    Reset,
    DragStart {
        x: f64,
        y: f64,
        z: f64,
    },
    DragMove {
        x: f64,
        y: f64,
        z: f64,
    },
    DragEnd,
    Nudge {
        dir: Direction,
    },
    SetIntegrator {
        kind: IntegratorKind,
    },
    SetDimension {
        d: u8,
    },
    Link {
        a: usize,
        pa: usize,
        b: usize,
        pb: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stiffness: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        damping: Option<f64>,
    },
    StartSave,
    StopSave,
    SaveConfirm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<String>,
    },
}

impl ClientMessage {
    pub fn into_command(self) -> Result<Command, DecodeError> {
        let point = |x: f64, y: f64, z: f64| {
            let p = Vec3::new(x, y, z);
            if p.is_finite() {
                Ok(p)
            } else {
                Err(DecodeError::Invalid("coordinates must be finite".into()))
            }
        };
        Ok(match self {
            ClientMessage::Start => Command::StartSimulation,
            ClientMessage::Reset => Command::Reset,
            ClientMessage::DragStart { x, y, z } => Command::DragStart(point(x, y, z)?),
            ClientMessage::DragMove { x, y, z } => Command::DragMove(point(x, y, z)?),
            ClientMessage::DragEnd => Command::DragEnd,
            ClientMessage::Nudge { dir } => Command::Nudge(dir),
            ClientMessage::SetIntegrator { kind } => Command::SetIntegrator(kind),
            ClientMessage::SetDimension { d } => Command::SetDimension(d),
            ClientMessage::Link { a, pa, b, pb, stiffness, damping } => Command::LinkObjects(LinkArgs {
                a,
                pa,
                b,
                pb,
                stiffness: stiffness.unwrap_or(DEFAULT_LINK_STIFFNESS),
                damping: damping.unwrap_or(DEFAULT_LINK_DAMPING),
            }),
            ClientMessage::StartSave => Command::StartSave,
            ClientMessage::StopSave => Command::StopSave,
            ClientMessage::SaveConfirm { name, dir } => Command::SaveConfirm { name, dir: dir.map(PathBuf::from) },
        })
    }
}

/// Parses one client message.
pub fn decode_client(bytes: &[u8]) -> Result<ClientMessage, DecodeError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Parses a client message and converts it to a session command.
pub fn decode_command(bytes: &[u8]) -> Result<Command, DecodeError> {
    decode_client(bytes)?.into_command()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleFrame {
    pub id: usize,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectFrame {
    pub id: usize,
    pub particles: Vec<ParticleFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub springs: Option<Vec<[usize; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub t: f64,
    /// True when `springs` and `links` are included.
    #[serde(default)]
    pub topology: bool,
    pub objects: Vec<ObjectFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<[usize; 4]>>,
    pub drag_force: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drag_target: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(FrameMessage),
    SavePrompt { default_name: String, default_dir: String, frames: usize },
    Saved { path: String },
    Error { code: String, message: String },
    State { mode: Mode, integrator: IntegratorKind, dimension: u8, recording: bool },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.to_string(), message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl From<&SessionEvent> for ServerMessage {
    fn from(event: &SessionEvent) -> Self {
        match event {
            SessionEvent::Error { code, message } => ServerMessage::error(code, message.clone()),
            SessionEvent::SavePrompt(p) => ServerMessage::SavePrompt {
                default_name: p.default_name.clone(),
                default_dir: p.default_dir.display().to_string(),
                frames: p.frame_count,
            },
            SessionEvent::Saved(path) => ServerMessage::Saved { path: path.display().to_string() },
            SessionEvent::State(s) => ServerMessage::State {
                mode: s.mode,
                integrator: s.integrator,
                dimension: s.dimension,
                recording: s.recording,
            },
        }
    }
}

/// Frame message for `snapshot`; springs and links are included only when
/// `with_topology` is set.
pub fn encode_frame(snapshot: &FrameSnapshot, with_topology: bool) -> ServerMessage {
    ServerMessage::Frame(FrameMessage {
        t: snapshot.t,
        topology: with_topology,
        objects: snapshot
            .objects
            .iter()
            .map(|o| ObjectFrame {
                id: o.id,
                particles: o
                    .particles
                    .iter()
                    .map(|p| ParticleFrame {
                        id: p.id,
                        px: p.position.x,
                        py: p.position.y,
                        pz: p.position.z,
                        vx: p.velocity.x,
                        vy: p.velocity.y,
                        vz: p.velocity.z,
                    })
                    .collect(),
                springs: with_topology.then(|| o.springs.to_vec()),
            })
            .collect(),
        links: with_topology.then(|| snapshot.links.to_vec()),
        drag_force: snapshot.drag_force.clone(),
        drag_target: snapshot.drag.map(|d| d.target.to_array()),
    })
}

/// Per-connection encoder that sends topology on the first frame and
/// whenever it changes.
#[derive(Clone, Debug, Default)]
pub struct FrameEncoder {
    sent_topology: Option<u64>,
}

impl FrameEncoder {
    pub fn encode(&mut self, snapshot: &FrameSnapshot) -> ServerMessage {
        let fresh = self.sent_topology != Some(snapshot.topology_version);
        self.sent_topology = Some(snapshot.topology_version);
        encode_frame(snapshot, fresh)
    }
}
