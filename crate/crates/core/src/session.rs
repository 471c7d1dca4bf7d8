//! The interactive simulation loop.
//!
//! A [`Session`] owns the world and is mutated only by the thread calling
//! [`Session::tick`]. Other threads feed it through the FIFO command queue
//! obtained from [`Session::command_sender`].

use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use log::{error, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DragHandle, DynamicsError, ExternalForce, ForceInputs, IntegratorKind, MAX_DT};
use crate::exec;
use crate::mesh::{link_objects, Dimension, MeshError, ObjectId, ParticleId};
use crate::persistence::{
    FrameRecord, ObjectRecord, ParticleRecord, PersistenceError, Recorder, RecorderConfig, RecordingMeta, SavePrompt,
};
use crate::scene::{SceneConfig, SceneError};
use crate::vec3::Vec3;
use crate::world::WorldState;

/// Keyboard nudge step as a fraction of the view-space side.
pub const NUDGE_FRACTION: f64 = 0.01;
/// Margin kept free of idle targets, as a fraction of each side.
pub const IDLE_MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    fn axis_sign(self) -> (usize, f64) {
        match self {
            Direction::Up => (1, 1.0),
            Direction::Down => (1, -1.0),
            Direction::Left => (0, -1.0),
            Direction::Right => (0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkArgs {
    pub a: ObjectId,
    pub pa: ParticleId,
    pub b: ObjectId,
    pub pb: ParticleId,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    StartSimulation,
    DragStart(Vec3),
    DragMove(Vec3),
    DragEnd,
    Nudge(Direction),
    SetIntegrator(IntegratorKind),
    SetDimension(u8),
    LinkObjects(LinkArgs),
    StartSave,
    StopSave,
    SaveConfirm { name: Option<String>, dir: Option<PathBuf> },
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idle,
    Running,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("the world has no particles")]
    EmptyWorld,
    #[error("the simulation has not been started")]
    NotRunning,
    #[error("the simulation is already running")]
    AlreadyRunning,
    #[error("no drag in progress")]
    NoActiveDrag,
    #[error("already showing dimension {}", .0.number())]
    SameDimension(Dimension),
    #[error("cannot load dimension {0}: {1}")]
    UnsupportedDimension(u8, String),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

impl SessionError {
    /// Stable machine-readable code used in protocol error messages.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::EmptyWorld => "empty_world",
            SessionError::NotRunning => "not_running",
            SessionError::AlreadyRunning => "already_running",
            SessionError::NoActiveDrag => "no_active_drag",
            SessionError::SameDimension(_) => "same_dimension",
            SessionError::UnsupportedDimension(..) => "unsupported_dimension",
            SessionError::InvalidCommand(_) => "invalid_command",
            SessionError::Mesh(e) => match e {
                MeshError::UnknownObject(_) => "unknown_object",
                MeshError::UnknownParticle { .. } => "unknown_particle",
                MeshError::SelfLink => "self_link",
                _ => "invalid_argument",
            },
            SessionError::Dynamics(e) => match e {
                DynamicsError::NumericalBlowup { .. } => "numerical_blowup",
                DynamicsError::InvalidTimestep(_) => "invalid_timestep",
                _ => "dynamics_error",
            },
            SessionError::Persistence(e) => match e {
                PersistenceError::AlreadyRecording => "already_recording",
                PersistenceError::NotRecording => "not_recording",
                PersistenceError::NothingToSave => "nothing_to_save",
                PersistenceError::CapacityExceeded { .. } => "capacity_exceeded",
                PersistenceError::Io(_) => "io_error",
                PersistenceError::Parse(_) => "parse_error",
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    pub mode: Mode,
    pub integrator: IntegratorKind,
    pub dimension: u8,
    pub recording: bool,
}

/// Things the session reports besides frames.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionEvent {
    Error { code: String, message: String },
    SavePrompt(SavePrompt),
    Saved(PathBuf),
    State(StateInfo),
}

impl SessionEvent {
    fn error(e: &SessionError) -> Self {
        SessionEvent::Error { code: e.code().to_string(), message: e.to_string() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleSnapshot {
    pub id: ParticleId,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Total force at the snapshot state.
    pub force: Vec3,
    pub mass: f64,
    pub fixed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSnapshot {
    pub id: ObjectId,
    pub dimension: Dimension,
    pub particles: Vec<ParticleSnapshot>,
    pub springs: Arc<[[usize; 2]]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DragInfo {
    pub object: ObjectId,
    pub particle: ParticleId,
    pub target: Vec3,
}

/// Immutable view of the session after one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSnapshot {
    pub tick: u64,
    pub t: f64,
    pub mode: Mode,
    pub integrator: IntegratorKind,
    pub dimension: Dimension,
    /// Bumped whenever springs, links or objects change.
    pub topology_version: u64,
    pub objects: Vec<ObjectSnapshot>,
    /// `[object_a, particle_a, object_b, particle_b]`.
    pub links: Arc<[[usize; 4]]>,
    pub drag: Option<DragInfo>,
    pub drag_force: String,
    pub markers: Vec<String>,
}

impl FrameSnapshot {
    pub fn particle(&self, object: ObjectId, particle: ParticleId) -> Option<&ParticleSnapshot> {
        self.objects.iter().find(|o| o.id == object).and_then(|o| o.particles.get(particle))
    }

    pub fn particle_count(&self) -> usize {
        self.objects.iter().map(|o| o.particles.len()).sum()
    }

    /// The recorded form of this frame; the recorder assigns the index.
    pub fn to_frame_record(&self) -> FrameRecord {
        FrameRecord {
            index: self.tick as usize,
            t: self.t,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    particles: o
                        .particles
                        .iter()
                        .map(|p| ParticleRecord {
                            id: p.id,
                            position: p.position,
                            velocity: p.velocity,
                            force: p.force,
                            mass: p.mass,
                        })
                        .collect(),
                })
                .collect(),
            markers: self.markers.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutput {
    pub snapshot: FrameSnapshot,
    pub events: Vec<SessionEvent>,
}

/// Autonomous steering toward random targets while no simulation runs.
#[derive(Clone, Debug, PartialEq)]
pub struct IdleWander {
    pub target: Option<Vec3>,
    pub steering_gain: f64,
    pub arrival_epsilon: f64,
    pub rng_seed: u64,
}

/// `|f|` with four decimals, ties rounded away from zero.
pub fn format_force_magnitude(f: Vec3) -> String {
    round_half_away(f.norm(), 4)
}

/// Rounds the shortest round-trip decimal form of `x`, so a value printed
/// as `1.23455` rounds to `1.2346` regardless of its binary expansion.
fn round_half_away(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i64 = exp.parse().expect("integer exponent");
    let digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    // digits[k] has weight 10^(exp - k); keep everything down to 10^-decimals.
    let keep = exp + 1 + decimals as i64;
    let digit_at = |k: i64| if k >= 0 && (k as usize) < digits.len() { digits[k as usize] } else { 0 };
    let mut kept: Vec<u8> = (0..keep.max(0)).map(digit_at).collect();
    if digit_at(keep) >= 5 {
        let mut i = kept.len();
        loop {
            if i == 0 {
                kept.insert(0, 1);
                break;
            }
            i -= 1;
            if kept[i] == 9 {
                kept[i] = 0;
            } else {
                kept[i] += 1;
                break;
            }
        }
    }
    while kept.len() < decimals + 1 {
        kept.insert(0, 0);
    }
    let split = kept.len() - decimals;
    let int_part: String = kept[..split].iter().map(|d| char::from(b'0' + d)).collect();
    let int_part = int_part.trim_start_matches('0');
    let frac: String = kept[split..].iter().map(|d| char::from(b'0' + d)).collect();
    let sign = if x < 0.0 && kept.iter().any(|&d| d != 0) { "-" } else { "" };
    format!("{sign}{}.{frac}", if int_part.is_empty() { "0" } else { int_part })
}

/// Particle closest to `point`; ties go to the lower object id, then the
/// lower particle id.
pub fn nearest_particle(world: &WorldState, point: Vec3) -> Result<(ObjectId, ParticleId, f64), SessionError> {
    let flat: Vec<(ObjectId, ParticleId, Vec3)> = world
        .objects
        .iter()
        .flat_map(|o| o.particles.iter().enumerate().map(move |(i, p)| (o.id, i, p.position)))
        .collect();
    exec::min_by_range(
        flat.len(),
        |i| {
            let (o, p, pos) = flat[i];
            (o, p, pos.distance(point))
        },
        |a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)),
    )
    .ok_or(SessionError::EmptyWorld)
}

/// Topology version, spring index pairs per object and inter-object links.
type SpringsCache = (u64, Vec<Arc<[[usize; 2]]>>, Arc<[[usize; 4]]>);

pub struct Session {
    scene: SceneConfig,
    world: WorldState,
    mode: Mode,
    integrator: IntegratorKind,
    dimension: Dimension,
    drag: Option<DragHandle>,
    idle: Option<IdleWander>,
    rng: ChaCha8Rng,
    clock: f64,
    ticks: u64,
    recorder: Recorder,
    topology_version: u64,
    springs_cache: Option<SpringsCache>,
    steering: Vec<ExternalForce>,
    markers: Vec<String>,
    events: Vec<SessionEvent>,
    blowup_reported: bool,
    tx: Sender<Command>,
    rx: Receiver<Command>,
}

impl Session {
    /// Builds the scene's world and starts in idle mode.
    pub fn new(scene: SceneConfig) -> Result<Session, SceneError> {
        let world = scene.build_world()?;
        let dimension = scene.dimension()?;
        let (tx, rx) = mpsc::channel();
        let mut s = Session {
            rng: ChaCha8Rng::seed_from_u64(scene.seed),
            integrator: scene.integrator,
            scene,
            world,
            mode: Mode::Idle,
            dimension,
            drag: None,
            idle: None,
            clock: 0.0,
            ticks: 0,
            recorder: Recorder::new(RecorderConfig::default()),
            topology_version: 0,
            springs_cache: None,
            steering: Vec::new(),
            markers: Vec::new(),
            events: Vec::new(),
            blowup_reported: false,
            tx,
            rx,
        };
        s.idle = Some(s.fresh_idle());
        Ok(s)
    }

    fn fresh_idle(&self) -> IdleWander {
        IdleWander {
            target: None,
            steering_gain: self.scene.idle.steering_gain,
            arrival_epsilon: self.scene.idle.arrival_fraction * self.world.params.bounds.max_extent(),
            rng_seed: self.scene.seed,
        }
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn integrator(&self) -> IntegratorKind {
        self.integrator
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn drag(&self) -> Option<&DragHandle> {
        self.drag.as_ref()
    }

    pub fn idle(&self) -> Option<&IdleWander> {
        self.idle.as_ref()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn topology_version(&self) -> u64 {
        self.topology_version
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn set_recorder_config(&mut self, config: RecorderConfig) {
        self.recorder.set_config(config);
    }

    pub fn state_info(&self) -> StateInfo {
        StateInfo {
            mode: self.mode,
            integrator: self.integrator,
            dimension: self.dimension.number(),
            recording: self.recorder.is_recording(),
        }
    }

    /// Producer end of the command queue; clone it freely.
    pub fn command_sender(&self) -> Sender<Command> {
        self.tx.clone()
    }

    pub fn submit(&self, command: Command) {
        self.tx.send(command).expect("session owns the receiver");
    }

    /// Applies one command immediately, outside the queue.
    pub fn apply(&mut self, command: Command) -> Result<(), SessionError> {
        match command {
            Command::StartSimulation => self.start_simulation(),
            Command::DragStart(p) => self.begin_drag(p).map(|_| ()),
            Command::DragMove(p) => self.update_drag(p),
            Command::DragEnd => self.end_drag(),
            Command::Nudge(d) => self.nudge(d),
            Command::SetIntegrator(kind) => {
                self.integrator = kind;
                self.push_state();
                Ok(())
            }
            Command::SetDimension(d) => {
                let dim = Dimension::from_number(d)
                    .ok_or_else(|| SessionError::UnsupportedDimension(d, "no such dimension".into()))?;
                self.change_dimension(dim)
            }
            Command::LinkObjects(l) => {
                link_objects(&mut self.world, l.a, l.pa, l.b, l.pb, l.stiffness, l.damping)?;
                self.topology_version += 1;
                Ok(())
            }
            Command::StartSave => self.start_recording(),
            Command::StopSave => self.stop_recording().map(|_| ()),
            Command::SaveConfirm { name, dir } => self.confirm_save(name.as_deref(), dir.as_deref()).map(|_| ()),
            Command::Reset => self.reset(),
        }
    }

    pub fn start_simulation(&mut self) -> Result<(), SessionError> {
        if self.mode == Mode::Running {
            return Err(SessionError::AlreadyRunning);
        }
        self.mode = Mode::Running;
        self.idle = None;
        self.steering.clear();
        self.push_state();
        Ok(())
    }

    /// Back to idle with the current dimension's starting world.
    pub fn reset(&mut self) -> Result<(), SessionError> {
        let world = if self.dimension.number() == self.scene.dimension {
            self.scene.build_world()
        } else {
            self.scene.build_world_for(self.dimension)
        }
        .map_err(|e| SessionError::UnsupportedDimension(self.dimension.number(), e.to_string()))?;
        self.world = world;
        self.mode = Mode::Idle;
        self.drag = None;
        self.steering.clear();
        self.idle = Some(self.fresh_idle());
        self.topology_version += 1;
        self.markers.push("reset".into());
        self.push_state();
        Ok(())
    }

    /// Grabs the particle nearest to `point`, replacing any current handle.
    pub fn begin_drag(&mut self, point: Vec3) -> Result<&DragHandle, SessionError> {
        if self.mode != Mode::Running {
            return Err(SessionError::NotRunning);
        }
        check_point(point)?;
        let (object, particle, _) = nearest_particle(&self.world, point)?;
        let mut handle = DragHandle::new(object, particle, point, &self.world.params.bounds);
        handle.k_drag = self.scene.drag.stiffness;
        handle.c_drag = self.scene.drag.damping;
        Ok(self.drag.insert(handle))
    }

    pub fn update_drag(&mut self, point: Vec3) -> Result<(), SessionError> {
        check_point(point)?;
        let bounds = self.world.params.bounds;
        self.drag.as_mut().ok_or(SessionError::NoActiveDrag)?.set_target(point, &bounds);
        Ok(())
    }

    pub fn end_drag(&mut self) -> Result<(), SessionError> {
        self.drag.take().map(|_| ()).ok_or(SessionError::NoActiveDrag)
    }

    /// Moves the drag target by [`NUDGE_FRACTION`] of the view extent.
    pub fn nudge(&mut self, direction: Direction) -> Result<(), SessionError> {
        let bounds = self.world.params.bounds;
        let handle = self.drag.as_mut().ok_or(SessionError::NoActiveDrag)?;
        let (axis, sign) = direction.axis_sign();
        let mut step = [0.0; 3];
        step[axis] = sign * NUDGE_FRACTION * bounds.extent()[axis];
        let target = handle.target + Vec3::from(step);
        handle.set_target(target, &bounds);
        Ok(())
    }

    /// Replaces the world with the default object of dimension `d`.
    pub fn change_dimension(&mut self, d: Dimension) -> Result<(), SessionError> {
        if d == self.dimension {
            return Err(SessionError::SameDimension(d));
        }
        let world =
            self.scene.build_world_for(d).map_err(|e| SessionError::UnsupportedDimension(d.number(), e.to_string()))?;
        self.world = world;
        self.dimension = d;
        self.drag = None;
        self.steering.clear();
        if self.idle.is_some() {
            self.idle = Some(self.fresh_idle());
        }
        self.topology_version += 1;
        self.markers.push(format!("dimension_change:D{}", d.number()));
        self.push_state();
        Ok(())
    }

    pub fn start_recording(&mut self) -> Result<(), SessionError> {
        let meta = RecordingMeta {
            created: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            dt: self.scene.dt,
            integrator: self.integrator.name().to_string(),
            scene_digest: self.scene.digest(),
            bounds: Some(self.world.params.bounds),
        };
        self.recorder.start(meta)?;
        self.push_state();
        Ok(())
    }

    pub fn stop_recording(&mut self) -> Result<SavePrompt, SessionError> {
        let prompt = self.recorder.stop()?;
        self.events.push(SessionEvent::SavePrompt(prompt.clone()));
        self.push_state();
        Ok(prompt)
    }

    pub fn confirm_save(&mut self, name: Option<&str>, dir: Option<&std::path::Path>) -> Result<PathBuf, SessionError> {
        let path = self.recorder.confirm(name, dir)?;
        self.events.push(SessionEvent::Saved(path.clone()));
        Ok(path)
    }

    fn push_state(&mut self) {
        let info = self.state_info();
        self.events.push(SessionEvent::State(info));
    }

    /// Steers the primary object toward a random target and steps once.
    pub fn idle_update(&mut self, dt: f64) -> Result<(), SessionError> {
        if self.mode != Mode::Idle {
            return Err(SessionError::AlreadyRunning);
        }
        let Some(primary) = self.world.objects.first() else {
            return Err(SessionError::EmptyWorld);
        };
        let centroid = primary.centroid();
        let n = primary.particles.len();
        let object = primary.id;
        let mut idle = self.idle.take().unwrap_or_else(|| self.fresh_idle());
        let target = match idle.target {
            Some(t) if t.distance(centroid) >= idle.arrival_epsilon => t,
            _ => self.draw_target(),
        };
        idle.target = Some(target);
        let force = (target - centroid) * (idle.steering_gain / n as f64);
        self.idle = Some(idle);
        self.steering = (0..n).map(|particle| ExternalForce { object, particle, force }).collect();
        let inputs = ForceInputs { drag: None, external: &self.steering };
        dynamics::step(&mut self.world, dt, self.integrator, inputs)?;
        Ok(())
    }

    fn draw_target(&mut self) -> Vec3 {
        let area = self.world.params.bounds.shrunk(IDLE_MARGIN);
        let active = match self.dimension {
            Dimension::D1 => 1,
            Dimension::D2 => 2,
            Dimension::D3 => 3,
        };
        let mut t = [0.0; 3];
        for (k, v) in t.iter_mut().enumerate() {
            *v = if k < active {
                self.rng.gen_range(area.min[k]..=area.max[k])
            } else {
                0.0_f64.clamp(area.min[k], area.max[k])
            };
        }
        Vec3::from(t)
    }

    fn running_step(&mut self, dt: f64) -> Result<(), SessionError> {
        let inputs = ForceInputs { drag: self.drag.as_ref(), external: &[] };
        dynamics::step(&mut self.world, dt, self.integrator, inputs)?;
        Ok(())
    }

    /// Drains queued commands, advances the world by `dt`, feeds the
    /// recorder and returns the resulting frame with any events.
    ///
    /// A numerical blow-up leaves the world as it was and is reported once
    /// as an error event until a step succeeds again.
    pub fn tick(&mut self, dt: f64) -> Result<TickOutput, SessionError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(DynamicsError::InvalidTimestep(dt).into());
        }
        while let Ok(cmd) = self.rx.try_recv() {
            if let Err(e) = self.apply(cmd) {
                warn!("command rejected: {e}");
                self.events.push(SessionEvent::error(&e));
            }
        }
        let stepped = match self.mode {
            Mode::Idle => self.idle_update(dt),
            Mode::Running => self.running_step(dt),
        };
        match stepped {
            Ok(()) => self.blowup_reported = false,
            Err(e) => {
                if !self.blowup_reported {
                    error!("tick {} at t={:.4}: {e}", self.ticks, self.clock);
                    self.events.push(SessionEvent::error(&e));
                }
                self.blowup_reported = true;
            }
        }
        self.clock += dt;
        self.ticks += 1;

        let snapshot = self.snapshot();
        if self.recorder.is_recording() {
            if let Err(e) = self.recorder.record_frame(snapshot.to_frame_record()) {
                let e = SessionError::from(e);
                self.events.push(SessionEvent::error(&e));
                if let Some(prompt) = self.recorder.pending_prompt() {
                    self.events.push(SessionEvent::SavePrompt(prompt));
                }
                self.push_state();
            }
        }
        Ok(TickOutput { snapshot, events: std::mem::take(&mut self.events) })
    }

    /// Events raised by direct calls since the last tick.
    pub fn take_events(&mut self) -> Vec<SessionEvent> {
        std::mem::take(&mut self.events)
    }

    /// Frame for the current state. Recomputes per-particle total force.
    pub fn snapshot(&mut self) -> FrameSnapshot {
        let inputs = ForceInputs { drag: self.drag.as_ref(), external: &self.steering };
        let drag_force = match dynamics::total_force(&mut self.world, inputs) {
            Ok(b) => b.drag_force.unwrap_or(Vec3::ZERO),
            Err(e) => {
                warn!("force evaluation for snapshot failed: {e}");
                Vec3::ZERO
            }
        };
        let version = self.topology_version;
        if self.springs_cache.as_ref().is_none_or(|c| c.0 != version) {
            let springs = self
                .world
                .objects
                .iter()
                .map(|o| o.springs().iter().map(|s| [s.a, s.b]).collect::<Arc<[_]>>())
                .collect();
            let links =
                self.world.links.iter().map(|l| [l.object_a, l.spring.a, l.object_b, l.spring.b]).collect::<Arc<[_]>>();
            self.springs_cache = Some((version, springs, links));
        }
        let (_, springs, links) = self.springs_cache.as_ref().expect("cache filled");
        FrameSnapshot {
            tick: self.ticks,
            t: self.clock,
            mode: self.mode,
            integrator: self.integrator,
            dimension: self.dimension,
            topology_version: version,
            objects: self
                .world
                .objects
                .iter()
                .zip(springs)
                .map(|(o, s)| ObjectSnapshot {
                    id: o.id,
                    dimension: o.dimension,
                    particles: o
                        .particles
                        .iter()
                        .map(|p| ParticleSnapshot {
                            id: p.id,
                            position: p.position,
                            velocity: p.velocity,
                            force: p.force,
                            mass: p.mass,
                            fixed: p.fixed,
                        })
                        .collect(),
                    springs: Arc::clone(s),
                })
                .collect(),
            links: Arc::clone(links),
            drag: self.drag.as_ref().map(|h| DragInfo { object: h.object, particle: h.particle, target: h.target }),
            drag_force: format_force_magnitude(drag_force),
            markers: std::mem::take(&mut self.markers),
        }
    }
}

fn check_point(p: Vec3) -> Result<(), SessionError> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(SessionError::InvalidCommand(format!("point {p} is not finite")))
    }
}
