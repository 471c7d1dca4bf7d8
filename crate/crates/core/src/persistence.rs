//! Frame recording and XML/CSV state dumps.
//!
//! XML layout:
//!
//! ```text
//! <simulation dt=".." integrator=".." created=".." scene_digest="..">
//!   <frame index="0" t="..">
//!     <marker name="dimension_change:D2"/>
//!     <object id="0">
//!       <particle id="0" px=".." py=".." pz=".." vx=".." vy=".." vz=".." fx=".." fy=".." fz=".." m=".."/>
//!     </object>
//!   </frame>
//! </simulation>
//! ```
//!
//! CSV layout: header `frame,t,object,particle,px,py,pz,vx,vy,vz,fx,fy,fz,mass`
//! and one row per particle per frame. Reals are written in Rust's shortest
//! round-trip decimal form, so a dump reloads bit-for-bit.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::Vec3;
use crate::world::Bounds;

pub const DEFAULT_CAPACITY: usize = 36_000;
pub const DEFAULT_DIR: &str = "./recordings";
pub const CSV_HEADER: [&str; 14] =
    ["frame", "t", "object", "particle", "px", "py", "pz", "vx", "vy", "vz", "fx", "fy", "fz", "mass"];

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("a recording is already in progress")]
    AlreadyRecording,
    #[error("no recording in progress")]
    NotRecording,
    #[error("no stopped recording to save")]
    NothingToSave,
    #[error("recording buffer full after {capacity} frames")]
    CapacityExceeded { capacity: usize },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

fn parse_err(msg: impl Into<String>) -> PersistenceError {
    PersistenceError::Parse(msg.into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Xml,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Xml => "xml",
            Format::Csv => "csv",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xml" => Ok(Format::Xml),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected xml or csv)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleRecord {
    pub id: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    pub force: Vec3,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRecord {
    pub id: usize,
    pub particles: Vec<ParticleRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub t: f64,
    pub objects: Vec<ObjectRecord>,
    pub markers: Vec<String>,
}

impl FrameRecord {
    pub fn particle_count(&self) -> usize {
        self.objects.iter().map(|o| o.particles.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingMeta {
    /// RFC 3339 creation time.
    pub created: String,
    pub dt: f64,
    pub integrator: String,
    pub scene_digest: String,
    /// View space the run was recorded in, when known.
    pub bounds: Option<Bounds>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub frames: Vec<FrameRecord>,
}

/// A broken recording invariant, reported by [`Recording::violations`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveDt(f64),
    IndexGap { position: usize, index: usize },
    NonMonotoneTime { index: usize, t: f64, previous: f64 },
    NonFiniteTime { index: usize },
    NonFinite { index: usize, object: usize, particle: usize },
    OutOfBounds { index: usize, object: usize, particle: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonPositiveDt(dt) => write!(f, "dt must be positive, got {dt}"),
            Violation::IndexGap { position, index } => {
                write!(f, "frame #{position} has index {index}, expected {position}")
            }
            Violation::NonMonotoneTime { index, t, previous } => {
                write!(f, "frame {index}: t={t} does not follow t={previous}")
            }
            Violation::NonFiniteTime { index } => write!(f, "frame {index}: t is not finite"),
            Violation::NonFinite { index, object, particle } => {
                write!(f, "frame {index}: object {object} particle {particle} has a non-finite value")
            }
            Violation::OutOfBounds { index, object, particle } => {
                write!(f, "frame {index}: object {object} particle {particle} lies outside the view space")
            }
        }
    }
}

impl Recording {
    pub fn new(meta: RecordingMeta) -> Self {
        Recording { meta, frames: Vec::new() }
    }

    /// Every broken invariant: positive dt, consecutive indices from 0,
    /// strictly increasing t, finite values, and positions inside the
    /// recorded bounds when present.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.meta.dt > 0.0 && self.meta.dt.is_finite()) {
            out.push(Violation::NonPositiveDt(self.meta.dt));
        }
        let mut previous: Option<f64> = None;
        for (position, frame) in self.frames.iter().enumerate() {
            if frame.index != position {
                out.push(Violation::IndexGap { position, index: frame.index });
            }
            if !frame.t.is_finite() {
                out.push(Violation::NonFiniteTime { index: frame.index });
            }
            if let Some(prev) = previous {
                if frame.t.is_nan() || frame.t <= prev {
                    out.push(Violation::NonMonotoneTime { index: frame.index, t: frame.t, previous: prev });
                }
            }
            previous = Some(frame.t);
            for o in &frame.objects {
                for p in &o.particles {
                    let finite =
                        p.position.is_finite() && p.velocity.is_finite() && p.force.is_finite() && p.mass.is_finite();
                    if !finite {
                        out.push(Violation::NonFinite { index: frame.index, object: o.id, particle: p.id });
                    } else if let Some(b) = &self.meta.bounds {
                        if !b.contains(p.position) {
                            out.push(Violation::OutOfBounds { index: frame.index, object: o.id, particle: p.id });
                        }
                    }
                }
            }
        }
        out
    }

    /// Structural invariants only; bounds violations are left to
    /// [`Recording::violations`] callers.
    pub fn validate(&self) -> Result<(), PersistenceError> {
        match self.violations().iter().find(|v| !matches!(v, Violation::OutOfBounds { .. })) {
            None => Ok(()),
            Some(v) => Err(parse_err(v.to_string())),
        }
    }
}

/// Frames in recorded order; the renderer can be driven from these without
/// running the dynamics.
pub fn replay(recording: &Recording) -> std::slice::Iter<'_, FrameRecord> {
    recording.frames.iter()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecorderConfig {
    pub capacity: usize,
    pub default_dir: PathBuf,
    pub format: Format,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig { capacity: DEFAULT_CAPACITY, default_dir: PathBuf::from(DEFAULT_DIR), format: Format::Xml }
    }
}

impl RecorderConfig {
    /// `simulation-<UTC ISO 8601 basic>.<ext>`.
    pub fn default_name_at(&self, when: DateTime<Utc>) -> String {
        format!("simulation-{}.{}", when.format("%Y%m%dT%H%M%SZ"), self.format.extension())
    }
}

/// Data for the save dialog shown after recording stops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavePrompt {
    pub default_name: String,
    pub default_dir: PathBuf,
    pub frame_count: usize,
}

#[derive(Debug)]
enum RecorderState {
    Off,
    Recording(Recording),
    Stopped { recording: Recording, default_name: String },
}

/// Per-session frame recorder: capture, stop, then confirm to disk.
#[derive(Debug)]
pub struct Recorder {
    config: RecorderConfig,
    state: RecorderState,
}

impl Recorder {
    pub fn new(config: RecorderConfig) -> Self {
        Recorder { config, state: RecorderState::Off }
    }

    pub fn config(&self) -> &RecorderConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: RecorderConfig) {
        self.config = config;
    }

    pub fn is_recording(&self) -> bool {
        matches!(self.state, RecorderState::Recording(_))
    }

    pub fn frame_count(&self) -> usize {
        match &self.state {
            RecorderState::Off => 0,
            RecorderState::Recording(r) | RecorderState::Stopped { recording: r, .. } => r.frames.len(),
        }
    }

    /// Starts capturing. A stopped but unconfirmed buffer is discarded.
    pub fn start(&mut self, meta: RecordingMeta) -> Result<(), PersistenceError> {
        if self.is_recording() {
            return Err(PersistenceError::AlreadyRecording);
        }
        if let RecorderState::Stopped { recording, .. } = &self.state {
            log::info!("discarding unsaved recording of {} frames", recording.frames.len());
        }
        self.state = RecorderState::Recording(Recording::new(meta));
        Ok(())
    }

    /// Appends a frame, assigning its index. When the buffer is already at
    /// capacity, capture stops, the buffer is kept for saving and
    /// `CapacityExceeded` is returned.
    pub fn record_frame(&mut self, mut frame: FrameRecord) -> Result<(), PersistenceError> {
        let capacity = self.config.capacity;
        let RecorderState::Recording(rec) = &mut self.state else {
            return Err(PersistenceError::NotRecording);
        };
        if rec.frames.len() >= capacity {
            self.stop()?;
            return Err(PersistenceError::CapacityExceeded { capacity });
        }
        frame.index = rec.frames.len();
        rec.frames.push(frame);
        Ok(())
    }

    /// Stops capturing and returns the save-dialog data.
    pub fn stop(&mut self) -> Result<SavePrompt, PersistenceError> {
        match std::mem::replace(&mut self.state, RecorderState::Off) {
            RecorderState::Recording(recording) => {
                let default_name = self.config.default_name_at(Utc::now());
                let prompt = SavePrompt {
                    default_name: default_name.clone(),
                    default_dir: self.config.default_dir.clone(),
                    frame_count: recording.frames.len(),
                };
                self.state = RecorderState::Stopped { recording, default_name };
                Ok(prompt)
            }
            other => {
                self.state = other;
                Err(PersistenceError::NotRecording)
            }
        }
    }

    /// Prompt data for a stopped buffer, if one awaits confirmation.
    pub fn pending_prompt(&self) -> Option<SavePrompt> {
        match &self.state {
            RecorderState::Stopped { recording, default_name } => Some(SavePrompt {
                default_name: default_name.clone(),
                default_dir: self.config.default_dir.clone(),
                frame_count: recording.frames.len(),
            }),
            _ => None,
        }
    }

    /// Writes the stopped buffer to `dir/name` (defaults from the config and
    /// the prompt) and returns the final path. A user-chosen directory must
    /// exist; the default directory is created on demand.
    pub fn confirm(&mut self, name: Option<&str>, dir: Option<&Path>) -> Result<PathBuf, PersistenceError> {
        let RecorderState::Stopped { recording, default_name } = &self.state else {
            return Err(PersistenceError::NothingToSave);
        };
        let format = self.config.format;
        let dir = match dir {
            Some(d) => {
                if !d.is_dir() {
                    return Err(PersistenceError::Io(io::Error::new(
                        io::ErrorKind::NotFound,
                        format!("directory {} does not exist", d.display()),
                    )));
                }
                d.to_path_buf()
            }
            None => {
                fs::create_dir_all(&self.config.default_dir)?;
                self.config.default_dir.clone()
            }
        };
        let file_name = match name {
            Some(n) if !n.trim().is_empty() => with_extension(n.trim(), format),
            _ => default_name.clone(),
        };
        let path = dir.join(file_name);
        save(recording, &path, format)?;
        self.state = RecorderState::Off;
        Ok(path)
    }
}

fn with_extension(name: &str, format: Format) -> String {
    let ext = format.extension();
    if Path::new(name).extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
        name.to_string()
    } else {
        format!("{name}.{ext}")
    }
}

/// Writes `recording` to `path` in the given format.
pub fn save(recording: &Recording, path: &Path, format: Format) -> Result<(), PersistenceError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Xml => write_xml(recording, &mut out)?,
        Format::Csv => write_csv(recording, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn bounds_attr(b: &Bounds) -> String {
    [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z].map(num).join(" ")
}

fn xml_io(e: quick_xml::Error) -> PersistenceError {
    match e {
        quick_xml::Error::Io(io) => PersistenceError::Io(io::Error::new(io.kind(), io.to_string())),
        other => parse_err(other.to_string()),
    }
}

pub fn write_xml<W: Write>(recording: &Recording, sink: W) -> Result<(), PersistenceError> {
    let mut w = Writer::new_with_indent(sink, b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))).map_err(io_err)?;

    let meta = &recording.meta;
    let mut root = BytesStart::new("simulation");
    root.push_attribute(("dt", num(meta.dt).as_str()));
    root.push_attribute(("integrator", meta.integrator.as_str()));
    root.push_attribute(("created", meta.created.as_str()));
    root.push_attribute(("scene_digest", meta.scene_digest.as_str()));
    if let Some(b) = &meta.bounds {
        root.push_attribute(("bounds", bounds_attr(b).as_str()));
    }
    w.write_event(Event::Start(root)).map_err(io_err)?;

    for frame in &recording.frames {
        let mut fe = BytesStart::new("frame");
        fe.push_attribute(("index", frame.index.to_string().as_str()));
        fe.push_attribute(("t", num(frame.t).as_str()));
        w.write_event(Event::Start(fe)).map_err(io_err)?;
        for m in &frame.markers {
            let mut me = BytesStart::new("marker");
            me.push_attribute(("name", m.as_str()));
            w.write_event(Event::Empty(me)).map_err(io_err)?;
        }
        for o in &frame.objects {
            let mut oe = BytesStart::new("object");
            oe.push_attribute(("id", o.id.to_string().as_str()));
            w.write_event(Event::Start(oe)).map_err(io_err)?;
            for p in &o.particles {
                let mut pe = BytesStart::new("particle");
                pe.push_attribute(("id", p.id.to_string().as_str()));
                let values = [
                    ("px", p.position.x),
                    ("py", p.position.y),
                    ("pz", p.position.z),
                    ("vx", p.velocity.x),
                    ("vy", p.velocity.y),
                    ("vz", p.velocity.z),
                    ("fx", p.force.x),
                    ("fy", p.force.y),
                    ("fz", p.force.z),
                    ("m", p.mass),
                ];
                for (k, v) in values {
                    pe.push_attribute((k, num(v).as_str()));
                }
                w.write_event(Event::Empty(pe)).map_err(io_err)?;
            }
            w.write_event(Event::End(BytesEnd::new("object"))).map_err(io_err)?;
        }
        w.write_event(Event::End(BytesEnd::new("frame"))).map_err(io_err)?;
    }
    w.write_event(Event::End(BytesEnd::new("simulation"))).map_err(io_err)?;
    w.get_mut().write_all(b"\n")?;
    Ok(())
}

fn io_err(e: io::Error) -> PersistenceError {
    PersistenceError::Io(e)
}

pub fn write_csv<W: Write>(recording: &Recording, sink: W) -> Result<(), PersistenceError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let csv_err = |e: csv::Error| PersistenceError::Io(io::Error::other(e.to_string()));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for frame in &recording.frames {
        for o in &frame.objects {
            for p in &o.particles {
                let row = [
                    frame.index.to_string(),
                    num(frame.t),
                    o.id.to_string(),
                    p.id.to_string(),
                    num(p.position.x),
                    num(p.position.y),
                    num(p.position.z),
                    num(p.velocity.x),
                    num(p.velocity.y),
                    num(p.velocity.z),
                    num(p.force.x),
                    num(p.force.y),
                    num(p.force.z),
                    num(p.mass),
                ];
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Attribute lookup over one start tag.
struct Attrs<'a> {
    tag: &'static str,
    pairs: Vec<(Vec<u8>, Cow<'a, str>)>,
}

impl<'a> Attrs<'a> {
    fn read(e: &'a BytesStart<'a>, tag: &'static str) -> Result<Self, PersistenceError> {
        let mut pairs = Vec::new();
        for a in e.attributes() {
            let a = a.map_err(|err| parse_err(format!("<{tag}>: {err}")))?;
            let v = a.unescape_value().map_err(|err| parse_err(format!("<{tag}>: {err}")))?;
            pairs.push((a.key.as_ref().to_vec(), v));
        }
        Ok(Attrs { tag, pairs })
    }

    fn opt(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key.as_bytes()).map(|(_, v)| v.as_ref())
    }

    fn str(&self, key: &str) -> Result<&str, PersistenceError> {
        self.opt(key).ok_or_else(|| parse_err(format!("<{}> is missing attribute {key:?}", self.tag)))
    }

    fn f64(&self, key: &str) -> Result<f64, PersistenceError> {
        let s = self.str(key)?;
        s.parse().map_err(|_| parse_err(format!("<{}> attribute {key}={s:?} is not a number", self.tag)))
    }

    fn usize(&self, key: &str) -> Result<usize, PersistenceError> {
        let s = self.str(key)?;
        s.parse().map_err(|_| parse_err(format!("<{}> attribute {key}={s:?} is not an index", self.tag)))
    }
}

fn parse_bounds(s: &str) -> Result<Bounds, PersistenceError> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| parse_err(format!("bad bounds value {x:?}"))))
        .collect::<Result<_, _>>()?;
    if v.len() != 6 {
        return Err(parse_err("bounds needs six numbers"));
    }
    Ok(Bounds::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])))
}

fn particle_from(a: &Attrs) -> Result<ParticleRecord, PersistenceError> {
    Ok(ParticleRecord {
        id: a.usize("id")?,
        position: Vec3::new(a.f64("px")?, a.f64("py")?, a.f64("pz")?),
        velocity: Vec3::new(a.f64("vx")?, a.f64("vy")?, a.f64("vz")?),
        force: Vec3::new(a.f64("fx")?, a.f64("fy")?, a.f64("fz")?),
        mass: a.f64("m")?,
    })
}

/// Parses the XML structure without checking recording invariants.
pub fn parse_xml<R: BufRead>(source: R) -> Result<Recording, PersistenceError> {
    let mut reader = Reader::from_reader(source);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut recording: Option<Recording> = None;
    let mut frame: Option<FrameRecord> = None;
    let mut object: Option<ObjectRecord> = None;
    let mut closed = false;

    loop {
        let event = reader.read_event_into(&mut buf).map_err(xml_io)?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                match (e.name().as_ref(), recording.is_some(), frame.is_some(), object.is_some()) {
                    (b"simulation", false, _, _) => {
                        let a = Attrs::read(e, "simulation")?;
                        let meta = RecordingMeta {
                            created: a.str("created")?.to_string(),
                            dt: a.f64("dt")?,
                            integrator: a.str("integrator")?.to_string(),
                            scene_digest: a.opt("scene_digest").unwrap_or_default().to_string(),
                            bounds: a.opt("bounds").map(parse_bounds).transpose()?,
                        };
                        recording = Some(Recording::new(meta));
                        closed = empty;
                    }
                    (b"frame", true, false, _) => {
                        let a = Attrs::read(e, "frame")?;
                        let f =
                            FrameRecord { index: a.usize("index")?, t: a.f64("t")?, objects: vec![], markers: vec![] };
                        if empty {
                            recording.as_mut().expect("checked").frames.push(f);
                        } else {
                            frame = Some(f);
                        }
                    }
                    (b"marker", true, true, false) => {
                        let a = Attrs::read(e, "marker")?;
                        frame.as_mut().expect("checked").markers.push(a.str("name")?.to_string());
                    }
                    (b"object", true, true, false) => {
                        let a = Attrs::read(e, "object")?;
                        let o = ObjectRecord { id: a.usize("id")?, particles: vec![] };
                        if empty {
                            frame.as_mut().expect("checked").objects.push(o);
                        } else {
                            object = Some(o);
                        }
                    }
                    (b"particle", true, true, true) => {
                        let a = Attrs::read(e, "particle")?;
                        object.as_mut().expect("checked").particles.push(particle_from(&a)?);
                    }
                    (name, ..) => {
                        return Err(parse_err(format!("unexpected element <{}>", String::from_utf8_lossy(name))))
                    }
                }
            }
            Event::End(ref e) => match e.name().as_ref() {
                b"object" => {
                    let o = object.take().ok_or_else(|| parse_err("stray </object>"))?;
                    frame.as_mut().ok_or_else(|| parse_err("</object> outside a frame"))?.objects.push(o);
                }
                b"frame" => {
                    let f = frame.take().ok_or_else(|| parse_err("stray </frame>"))?;
                    recording.as_mut().ok_or_else(|| parse_err("</frame> outside <simulation>"))?.frames.push(f);
                }
                b"simulation" => closed = true,
                _ => {}
            },
            Event::Eof => break,
            Event::Text(ref t) if !t.as_ref().iter().all(u8::is_ascii_whitespace) => {
                return Err(parse_err("unexpected text content"));
            }
            _ => {}
        }
        buf.clear();
    }
    if !closed || frame.is_some() || object.is_some() {
        return Err(parse_err("document is truncated"));
    }
    recording.ok_or_else(|| parse_err("missing <simulation> root"))
}

/// Parses and validates a dump written by [`write_xml`].
pub fn load_xml<R: BufRead>(source: R) -> Result<Recording, PersistenceError> {
    let rec = parse_xml(source)?;
    rec.validate()?;
    Ok(rec)
}

pub fn load_xml_file(path: &Path) -> Result<Recording, PersistenceError> {
    load_xml(io::BufReader::new(File::open(path)?))
}

/// Reads the frames of a CSV dump. Markers and metadata are not part of the
/// CSV layout and come back empty.
pub fn read_csv<R: io::Read>(source: R) -> Result<Vec<FrameRecord>, PersistenceError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err("unexpected CSV header"));
    }
    let mut frames: Vec<FrameRecord> = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| -> Result<f64, PersistenceError> {
            row[i].parse().map_err(|_| parse_err(format!("bad number {:?} in column {}", &row[i], CSV_HEADER[i])))
        };
        let index = |i: usize| -> Result<usize, PersistenceError> {
            row[i].parse().map_err(|_| parse_err(format!("bad index {:?} in column {}", &row[i], CSV_HEADER[i])))
        };
        let (fi, t, oid, pid) = (index(0)?, field(1)?, index(2)?, index(3)?);
        let particle = ParticleRecord {
            id: pid,
            position: Vec3::new(field(4)?, field(5)?, field(6)?),
            velocity: Vec3::new(field(7)?, field(8)?, field(9)?),
            force: Vec3::new(field(10)?, field(11)?, field(12)?),
            mass: field(13)?,
        };
        if frames.last().map(|f| f.index) != Some(fi) {
            frames.push(FrameRecord { index: fi, t, objects: Vec::new(), markers: Vec::new() });
        }
        let frame = frames.last_mut().expect("pushed above");
        if frame.objects.last().map(|o| o.id) != Some(oid) {
            frame.objects.push(ObjectRecord { id: oid, particles: Vec::new() });
        }
        frame.objects.last_mut().expect("pushed above").particles.push(particle);
    }
    Ok(frames)
}
