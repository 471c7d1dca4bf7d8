//! Headless commands behind the `softbody` binary.
//!
//! Every command returns a value the binary prints and a [`CliError`] whose
//! [`CliError::exit_code`] is the process status: 0 success, 1 failed
//! `--check`, 2 bad input, 3 numerical blow-up.

use std::future::Future;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use softbody_core::dynamics::IntegratorKind;
use softbody_core::persistence::{
    parse_xml, read_csv, save, Format, FrameRecord, PersistenceError, RecorderConfig, Recording, RecordingMeta,
    Violation,
};
use softbody_core::prioritization::{
    cost_value_points, priority_vector, write_points_csv, AhpError, ComparisonMatrix, PriorityVector,
};
use softbody_core::protocol::ServerMessage;
use softbody_core::scene::{SceneConfig, SceneError};
use softbody_core::script::{CommandScript, ScriptError, ScriptRunner};
use softbody_core::session::{Command, FrameSnapshot, Session, SessionError, SessionEvent, TickOutput};
use softbody_core::Vec3;
use softbody_server::ServerError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_BLOWUP: u8 = 3;

/// Creation stamp written into headless recordings so identical runs give
/// identical files.
pub const FIXED_CREATED: &str = "1970-01-01T00:00:00Z";

const BLOWUP_CODE: &str = "numerical_blowup";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("script: {0}")]
    Script(#[from] ScriptError),
    #[error("dump: {0}")]
    Persistence(#[from] PersistenceError),
    #[error("matrix: {0}")]
    Ahp(#[from] AhpError),
    #[error("session: {0}")]
    Session(#[from] SessionError),
    #[error("{0}")]
    Server(#[from] ServerError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{} invariant violation(s)", .0.len())]
    Check(Vec<String>),
    #[error("numerical blow-up at tick {tick} (t={t}): {message}")]
    Blowup { tick: u64, t: f64, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => EXIT_CHECK_FAILED,
            CliError::Blowup { .. } => EXIT_BLOWUP,
            _ => EXIT_BAD_INPUT,
        }
    }
}

/// Flags shared by `run` and `script`.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Ticks to run. Scripts default to running until their last entry.
    pub steps: Option<u64>,
    /// Write every tick to this file.
    pub record: Option<PathBuf>,
    /// Defaults to the extension of `record`, then XML.
    pub format: Option<Format>,
    pub integrator: Option<IntegratorKind>,
    pub dt: Option<f64>,
    /// Frame limit of the in-session recorder.
    pub capacity: Option<usize>,
    /// Default directory of the in-session recorder.
    pub save_dir: Option<PathBuf>,
    /// Start the simulation before the first tick instead of idling.
    pub start: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleState {
    pub object: usize,
    pub particle: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    pub force: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameState {
    pub tick: u64,
    pub t: f64,
    pub centroid: Vec3,
    pub particles: Vec<ParticleState>,
}

impl FrameState {
    fn of(snapshot: &FrameSnapshot) -> Self {
        let particles: Vec<ParticleState> = snapshot
            .objects
            .iter()
            .flat_map(|o| {
                o.particles.iter().map(move |p| ParticleState {
                    object: o.id,
                    particle: p.id,
                    position: p.position,
                    velocity: p.velocity,
                    force: p.force,
                })
            })
            .collect();
        let n = particles.len().max(1) as f64;
        let centroid = particles.iter().map(|p| p.position).sum::<Vec3>() / n;
        FrameState { tick: snapshot.tick, t: snapshot.t, centroid, particles }
    }

    pub fn position(&self, object: usize, particle: usize) -> Option<Vec3> {
        self.particles.iter().find(|p| p.object == object && p.particle == particle).map(|p| p.position)
    }
}

/// One continuous drag of a single particle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DragTrace {
    pub object: usize,
    pub particle: usize,
    pub start_tick: u64,
    /// Position of the grabbed particle just before the drag acted.
    pub start_position: Vec3,
    /// Tick of the first frame without this drag, if it ended.
    pub end_tick: Option<u64>,
    pub end_position: Vec3,
    /// Successive distinct drag targets.
    pub targets: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimedEvent {
    pub tick: u64,
    pub t: f64,
    #[serde(flatten)]
    pub message: ServerMessage,
}

/// What `run` and `script` print: the per-particle state at both ends plus
/// everything a test needs to check a scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub ticks: u64,
    pub t: f64,
    /// Every particle of every frame stayed inside the view space.
    pub all_in_bounds: bool,
    pub events: Vec<TimedEvent>,
    pub drags: Vec<DragTrace>,
    pub saved: Vec<PathBuf>,
    pub recorded: Option<PathBuf>,
    pub initial: FrameState,
    #[serde(rename = "final")]
    pub last: FrameState,
}

/// Loads a scene and applies the command-line overrides.
pub fn load_scene(path: &Path, opts: &RunOptions) -> Result<SceneConfig, CliError> {
    let mut scene = SceneConfig::load(path)?;
    if let Some(k) = opts.integrator {
        scene.integrator = k;
    }
    if let Some(dt) = opts.dt {
        scene.dt = dt;
    }
    scene.validate()?;
    Ok(scene)
}

fn record_format(opts: &RunOptions) -> Format {
    opts.format.unwrap_or_else(|| match opts.record.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Xml,
    })
}

fn new_session(scene: SceneConfig, opts: &RunOptions) -> Result<Session, CliError> {
    let mut session = Session::new(scene)?;
    let mut config = RecorderConfig::default();
    if let Some(c) = opts.capacity {
        if c == 0 {
            return Err(CliError::Invalid("capacity must be at least one frame".into()));
        }
        config.capacity = c;
    }
    if let Some(dir) = &opts.save_dir {
        config.default_dir = dir.clone();
    }
    config.format = record_format(opts);
    session.set_recorder_config(config);
    if opts.start {
        session.submit(Command::StartSimulation);
    }
    Ok(session)
}

/// Observes every tick: passive recording, blow-up detection and report data.
struct Harness {
    bounds: softbody_core::world::Bounds,
    recording: Option<Recording>,
    report: RunReport,
    previous: FrameState,
}

impl Harness {
    fn new(session: &mut Session, opts: &RunOptions) -> Self {
        let scene = session.scene();
        let recording = opts.record.as_ref().map(|_| {
            Recording::new(RecordingMeta {
                created: FIXED_CREATED.into(),
                dt: scene.dt,
                integrator: scene.integrator.name().into(),
                scene_digest: scene.digest(),
                bounds: Some(session.world().params.bounds),
            })
        });
        let bounds = session.world().params.bounds;
        let initial = FrameState::of(&session.snapshot());
        let all_in_bounds = initial.particles.iter().all(|p| bounds.contains(p.position));
        Harness {
            bounds,
            recording,
            previous: initial.clone(),
            report: RunReport {
                ticks: 0,
                t: initial.t,
                all_in_bounds,
                events: Vec::new(),
                drags: Vec::new(),
                saved: Vec::new(),
                recorded: None,
                last: initial.clone(),
                initial,
            },
        }
    }

    fn observe(&mut self, out: TickOutput) -> Result<(), CliError> {
        let snap = &out.snapshot;
        let state = FrameState::of(snap);
        for e in &out.events {
            if let SessionEvent::Saved(path) = e {
                self.report.saved.push(path.clone());
            }
            if let SessionEvent::Error { code, message } = e {
                if code == BLOWUP_CODE {
                    return Err(CliError::Blowup { tick: snap.tick, t: snap.t, message: message.clone() });
                }
                warn!("tick {}: {code}: {message}", snap.tick);
            }
            self.report.events.push(TimedEvent { tick: snap.tick, t: snap.t, message: ServerMessage::from(e) });
        }

        let open = self.report.drags.last_mut().filter(|d| d.end_tick.is_none());
        match (open, snap.drag) {
            (Some(d), Some(info)) if d.object == info.object && d.particle == info.particle => {
                if d.targets.last() != Some(&info.target) {
                    d.targets.push(info.target);
                }
                d.end_position = state.position(d.object, d.particle).unwrap_or(d.end_position);
            }
            (open, drag) => {
                if let Some(d) = open {
                    d.end_tick = Some(snap.tick);
                    d.end_position = state.position(d.object, d.particle).unwrap_or(d.end_position);
                }
                if let Some(info) = drag {
                    let start = self.previous.position(info.object, info.particle).unwrap_or(Vec3::ZERO);
                    self.report.drags.push(DragTrace {
                        object: info.object,
                        particle: info.particle,
                        start_tick: snap.tick,
                        start_position: start,
                        end_tick: None,
                        end_position: state.position(info.object, info.particle).unwrap_or(start),
                        targets: vec![info.target],
                    });
                }
            }
        }

        if !state.particles.iter().all(|p| self.bounds.contains(p.position)) {
            self.report.all_in_bounds = false;
        }
        if let Some(rec) = &mut self.recording {
            let mut frame: FrameRecord = snap.to_frame_record();
            frame.index = rec.frames.len();
            rec.frames.push(frame);
        }
        self.report.ticks += 1;
        self.report.t = snap.t;
        self.previous = state;
        Ok(())
    }

    fn finish(mut self, session: &Session, opts: &RunOptions) -> Result<RunReport, CliError> {
        if let (Some(rec), Some(path)) = (&self.recording, &opts.record) {
            save(rec, path, record_format(opts))?;
            info!("wrote {} frames to {}", rec.frames.len(), path.display());
            self.report.recorded = Some(path.clone());
        }
        self.report.last = self.previous;
        if session.recorder().is_recording() {
            warn!("the in-session recording was never stopped and is discarded");
        }
        Ok(self.report)
    }
}

/// Runs a scene for `opts.steps` ticks.
pub fn cmd_run(scene: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let steps = opts.steps.unwrap_or(0);
    let scene = load_scene(scene, opts)?;
    let dt = scene.dt;
    let mut session = new_session(scene, opts)?;
    let mut harness = Harness::new(&mut session, opts);
    for _ in 0..steps {
        harness.observe(session.tick(dt)?)?;
    }
    harness.finish(&session, opts)
}

/// Runs a scene while feeding it a command script. Without `opts.steps` the
/// run ends on the tick that applies the last entry.
pub fn cmd_script(scene: &Path, script: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let script = CommandScript::load(script)?;
    let scene = load_scene(scene, opts)?;
    run_script(scene, script, opts)
}

/// [`cmd_script`] on already loaded inputs.
pub fn run_script(scene: SceneConfig, script: CommandScript, opts: &RunOptions) -> Result<RunReport, CliError> {
    let dt = scene.dt;
    let mut session = new_session(scene, opts)?;
    let mut harness = Harness::new(&mut session, opts);
    let mut runner = ScriptRunner::new(script);
    let mut ticks = 0u64;
    loop {
        let done = match opts.steps {
            Some(n) => ticks >= n,
            None => runner.is_done(),
        };
        if done {
            break;
        }
        harness.observe(runner.tick(&mut session, dt)?)?;
        ticks += 1;
    }
    harness.finish(&session, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub frames: usize,
    pub particles: usize,
    pub t_first: Option<f64>,
    pub t_last: Option<f64>,
}

/// Reads a dump (`.csv` by extension, XML otherwise) and iterates its
/// frames. With `check`, any broken invariant fails the command.
pub fn cmd_replay(dump: &Path, check: bool) -> Result<ReplaySummary, CliError> {
    let is_csv = dump.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let file = io::BufReader::new(std::fs::File::open(dump)?);
    let (frames, violations) = if is_csv {
        let frames = read_csv(file)?;
        // CSV carries neither dt nor bounds, and frame numbers keep their
        // recorded values.
        let rec = Recording {
            meta: RecordingMeta {
                created: String::new(),
                dt: 1.0,
                integrator: String::new(),
                scene_digest: String::new(),
                bounds: None,
            },
            frames,
        };
        let v = rec
            .violations()
            .into_iter()
            .filter(|v| !matches!(v, Violation::NonPositiveDt(_) | Violation::IndexGap { .. }))
            .collect::<Vec<_>>();
        (rec.frames, v)
    } else {
        let rec = parse_xml(file)?;
        let v = rec.violations();
        (rec.frames, v)
    };

    let mut summary = ReplaySummary { frames: 0, particles: 0, t_first: None, t_last: None };
    for f in &frames {
        summary.frames += 1;
        summary.particles = summary.particles.max(f.particle_count());
        summary.t_first.get_or_insert(f.t);
        summary.t_last = Some(f.t);
    }
    if check && !violations.is_empty() {
        return Err(CliError::Check(violations.iter().map(ToString::to_string).collect()));
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AhpReport {
    pub value: PriorityVector,
    pub cost: Option<PriorityVector>,
}

fn load_matrix(path: &Path) -> Result<ComparisonMatrix, CliError> {
    Ok(ComparisonMatrix::from_csv(std::fs::File::open(path)?)?)
}

fn print_vector(title: &str, v: &PriorityVector, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{title}")?;
    for (label, w) in v.labels.iter().zip(&v.weights) {
        writeln!(out, "  {label:<28} {w:.4}")?;
    }
    Ok(())
}

/// Prints the value priorities and, given a cost matrix, the cost priorities.
/// With both, the `label,cost,value` points go to `points_out`, or after the
/// vectors on `out`.
pub fn cmd_ahp(
    value: &Path,
    cost: Option<&Path>,
    points_out: Option<&Path>,
    decimals: usize,
    out: &mut dyn Write,
) -> Result<AhpReport, CliError> {
    let value = priority_vector(&load_matrix(value)?)?;
    let cost = cost.map(|p| load_matrix(p).and_then(|m| Ok(priority_vector(&m)?))).transpose()?;
    print_vector("value", &value, out)?;
    if let Some(cost) = &cost {
        print_vector("cost", cost, out)?;
        let points = cost_value_points(&value, cost)?;
        match points_out {
            Some(path) => write_points_csv(&points, decimals, std::fs::File::create(path)?)?,
            None => write_points_csv(&points, decimals, &mut *out)?,
        }
    }
    Ok(AhpReport { value, cost })
}

/// Serves a scene until `shutdown` resolves.
pub async fn serve_until(
    scene: &Path,
    addr: SocketAddr,
    dt: Option<f64>,
    on_ready: impl FnOnce(SocketAddr),
    shutdown: impl Future<Output = ()>,
) -> Result<(), CliError> {
    let scene = load_scene(scene, &RunOptions { dt, ..Default::default() })?;
    let dt = scene.dt;
    let session = Session::new(scene)?;
    let handle = softbody_server::serve(session, addr, dt).await?;
    on_ready(handle.local_addr());
    shutdown.await;
    info!("shutting down");
    handle.shutdown().await?;
    Ok(())
}
