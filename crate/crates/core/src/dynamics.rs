//! Force accumulation and time stepping.
//!
//! Six force sources feed each particle's accumulator: external, gravity,
//! mouse drag, springs (including inter-object links), layer pressure, and
//! inter-object collision penalties. The integrators advance the combined
//! (position, velocity) state with a shared derivative; wall projection and
//! velocity reflection run once after each step.

use std::fmt;
use std::str::FromStr;

use log::{error, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::mesh::{signed_measure_of, Dimension, ElasticObject, Layer, ObjectId, ParticleId};
use crate::vec3::Vec3;
use crate::world::WorldState;

pub use crate::world::{Bounds, WorldParams};

/// Springs shorter than this contribute no force.
pub const DEGENERATE_SPRING_LENGTH: f64 = 1e-9;
/// Pressure is capped once a layer shrinks below this fraction of its rest measure.
pub const COLLAPSE_FRACTION: f64 = 1e-6;
/// A step is rejected when a coordinate exceeds this multiple of the view extent.
pub const BLOWUP_FACTOR: f64 = 1e6;
pub const MAX_DT: f64 = 0.1;
pub const DEFAULT_DT: f64 = 1.0 / 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("timestep {0} outside (0, {MAX_DT}]")]
    InvalidTimestep(f64),
    #[error("numerical blow-up at t={t:.4}: object {object} particle {particle} reached {value}")]
    NumericalBlowup { t: f64, object: ObjectId, particle: ParticleId, value: f64 },
    #[error("drag handle refers to missing particle {particle} of object {object}")]
    StaleHandle { object: ObjectId, particle: ParticleId },
    #[error("unknown particle {particle} in object {object}")]
    UnknownParticle { object: ObjectId, particle: ParticleId },
    #[error("{0:?} layer boundary is not closed")]
    OpenBoundary(Layer),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntegratorKind {
    #[serde(rename = "euler")]
    Euler,
    #[serde(rename = "midpoint")]
    Midpoint,
    #[default]
    #[serde(rename = "rk4")]
    RungeKutta4,
}

impl IntegratorKind {
    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::Euler => "euler",
            IntegratorKind::Midpoint => "midpoint",
            IntegratorKind::RungeKutta4 => "rk4",
        }
    }
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntegratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(IntegratorKind::Euler),
            "midpoint" => Ok(IntegratorKind::Midpoint),
            "rk4" => Ok(IntegratorKind::RungeKutta4),
            other => Err(format!("unknown integrator {other:?} (expected euler, midpoint or rk4)")),
        }
    }
}

/// Spring-damper attachment between the mouse target and one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct DragHandle {
    pub object: ObjectId,
    pub particle: ParticleId,
    pub target: Vec3,
    pub k_drag: f64,
    pub c_drag: f64,
    pub active: bool,
}

impl DragHandle {
    pub const DEFAULT_K: f64 = 50.0;
    pub const DEFAULT_C: f64 = 2.0;

    pub fn new(object: ObjectId, particle: ParticleId, target: Vec3, bounds: &Bounds) -> Self {
        DragHandle {
            object,
            particle,
            target: bounds.clamp(target),
            k_drag: Self::DEFAULT_K,
            c_drag: Self::DEFAULT_C,
            active: true,
        }
    }

    pub fn set_target(&mut self, point: Vec3, bounds: &Bounds) {
        self.target = bounds.clamp(point);
    }
}

/// A scripted or steering force on one particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExternalForce {
    pub object: ObjectId,
    pub particle: ParticleId,
    pub force: Vec3,
}

/// Per-evaluation inputs that live outside the world.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForceInputs<'a> {
    pub drag: Option<&'a DragHandle>,
    pub external: &'a [ExternalForce],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForceSource {
    External,
    Gravity,
    Mouse,
    Spring,
    Pressure,
    Collision,
}

impl ForceSource {
    pub const ALL: [ForceSource; 6] = [
        ForceSource::External,
        ForceSource::Gravity,
        ForceSource::Mouse,
        ForceSource::Spring,
        ForceSource::Pressure,
        ForceSource::Collision,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Recoverable conditions met while evaluating forces.
#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostic {
    /// Endpoints closer than [`DEGENERATE_SPRING_LENGTH`]; the spring was skipped.
    DegenerateSpring { object: Option<ObjectId>, spring: usize },
    /// Layer measure fell below the floor; pressure was capped.
    CollapsedVolume { object: ObjectId, layer: Layer },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParticleForces {
    pub sources: [Vec3; 6],
    pub total: Vec3,
}

impl ParticleForces {
    pub fn get(&self, source: ForceSource) -> Vec3 {
        self.sources[source.index()]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceBreakdown {
    /// Indexed like `world.objects`, then by particle id.
    pub objects: Vec<(ObjectId, Vec<ParticleForces>)>,
    /// Force applied by the drag handle, when one is active.
    pub drag_force: Option<Vec3>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ForceBreakdown {
    pub fn particle(&self, object: ObjectId, particle: ParticleId) -> Option<&ParticleForces> {
        self.objects.iter().find(|(id, _)| *id == object).and_then(|(_, v)| v.get(particle))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub diagnostics: Vec<Diagnostic>,
}

/// Flattened particle state: every object's particles back to back.
#[derive(Clone, Debug)]
struct Kinematics {
    pos: Vec<Vec3>,
    vel: Vec<Vec3>,
}

impl Kinematics {
    fn gather(world: &WorldState) -> Self {
        let it = || world.objects.iter().flat_map(|o| o.particles.iter());
        Kinematics { pos: it().map(|p| p.position).collect(), vel: it().map(|p| p.velocity).collect() }
    }

    /// `self + h * rate`.
    fn advanced(&self, h: f64, rate: &Rate) -> Kinematics {
        let pos = exec::map_range(self.pos.len(), |i| self.pos[i] + rate.dpos[i] * h);
        let vel = exec::map_range(self.vel.len(), |i| self.vel[i] + rate.dvel[i] * h);
        Kinematics { pos, vel }
    }
}

/// Time derivative of [`Kinematics`].
struct Rate {
    dpos: Vec<Vec3>,
    dvel: Vec<Vec3>,
}

/// Shared read-only view used by the force sources.
struct Ctx<'a> {
    world: &'a WorldState,
    offsets: Vec<usize>,
    kin: &'a Kinematics,
}

impl<'a> Ctx<'a> {
    fn new(world: &'a WorldState, kin: &'a Kinematics) -> Self {
        Ctx { world, offsets: world.offsets(), kin }
    }

    fn global(&self, object: ObjectId, particle: ParticleId) -> Option<usize> {
        let oi = self.world.object_index(object)?;
        (particle < self.world.objects[oi].particles.len()).then(|| self.offsets[oi] + particle)
    }
}

fn zeros(n: usize) -> Vec<Vec3> {
    vec![Vec3::ZERO; n]
}

fn gravity_into(ctx: &Ctx, out: &mut [Vec3]) {
    let g = ctx.world.params.gravity;
    for (oi, obj) in ctx.world.objects.iter().enumerate() {
        let base = ctx.offsets[oi];
        for (i, p) in obj.particles.iter().enumerate() {
            if !p.fixed {
                out[base + i] += g * p.mass;
            }
        }
    }
}

/// Hooke plus axial damping. Returns the force on endpoint `a`; `b` gets
/// the negation. `None` when the endpoints coincide.
#[inline]
fn spring_force(pa: Vec3, pb: Vec3, va: Vec3, vb: Vec3, stiffness: f64, damping: f64, rest: f64) -> Option<Vec3> {
    let d = pb - pa;
    let len = d.norm();
    if len < DEGENERATE_SPRING_LENGTH {
        return None;
    }
    let dir = d / len;
    let s = stiffness * (len - rest) + damping * (vb - va).dot(dir);
    Some(dir * s)
}

fn springs_into(ctx: &Ctx, out: &mut [Vec3], diags: &mut Vec<Diagnostic>) {
    let kin = ctx.kin;
    for (oi, obj) in ctx.world.objects.iter().enumerate() {
        let base = ctx.offsets[oi];
        let forces = exec::map_slice(obj.springs(), |s| {
            let (a, b) = (base + s.a, base + s.b);
            spring_force(kin.pos[a], kin.pos[b], kin.vel[a], kin.vel[b], s.stiffness, s.damping, s.rest_length)
        });
        for (k, (s, f)) in obj.springs().iter().zip(forces).enumerate() {
            match f {
                Some(f) => {
                    out[base + s.a] += f;
                    out[base + s.b] -= f;
                }
                None => diags.push(Diagnostic::DegenerateSpring { object: Some(obj.id), spring: k }),
            }
        }
    }
    for (k, link) in ctx.world.links.iter().enumerate() {
        let (Some(a), Some(b)) = (ctx.global(link.object_a, link.spring.a), ctx.global(link.object_b, link.spring.b))
        else {
            continue;
        };
        let s = &link.spring;
        match spring_force(kin.pos[a], kin.pos[b], kin.vel[a], kin.vel[b], s.stiffness, s.damping, s.rest_length) {
            Some(f) => {
                out[a] += f;
                out[b] -= f;
            }
            None => diags.push(Diagnostic::DegenerateSpring { object: None, spring: k }),
        }
    }
}

/// Length- or area-weighted outward normal of a face.
#[inline]
fn weighted_normal(dim: Dimension, v: &[usize], pos: impl Fn(usize) -> Vec3) -> Vec3 {
    match dim {
        Dimension::D2 => {
            let d = pos(v[1]) - pos(v[0]);
            Vec3::new(d.y, -d.x, 0.0)
        }
        Dimension::D3 => {
            let (a, b, c) = (pos(v[0]), pos(v[1]), pos(v[2]));
            (b - a).cross(c - a) * 0.5
        }
        Dimension::D1 => Vec3::ZERO,
    }
}

/// Ideal-gas pressure for a layer given its current measure, capped at the
/// collapse floor.
fn layer_pressure(obj: &ElasticObject, layer: Layer, measure: f64) -> (f64, bool) {
    let nrt = obj.pressure_nrt(layer);
    let floor = obj.rest_measure(layer).unwrap_or(0.0) * COLLAPSE_FRACTION;
    if measure < floor || measure <= 0.0 {
        let capped = if floor > 0.0 { nrt / floor } else { 0.0 };
        (capped, true)
    } else {
        (nrt / measure, false)
    }
}

fn pressure_into(ctx: &Ctx, out: &mut [Vec3], diags: &mut Vec<Diagnostic>) {
    for (oi, obj) in ctx.world.objects.iter().enumerate() {
        if obj.dimension == Dimension::D1 {
            continue;
        }
        let base = ctx.offsets[oi];
        let pos = |i: usize| ctx.kin.pos[base + i];
        for layer in obj.layers() {
            if obj.pressure_nrt(layer) == 0.0 {
                continue;
            }
            let faces: Vec<&[usize]> = obj.layer_faces(layer).map(|f| f.vertices.as_slice()).collect();
            let measure = signed_measure_of(obj.dimension, faces.iter().copied(), pos);
            let (p, collapsed) = layer_pressure(obj, layer, measure);
            if collapsed {
                diags.push(Diagnostic::CollapsedVolume { object: obj.id, layer });
            }
            let face_forces = exec::map_slice(&faces, |v| weighted_normal(obj.dimension, v, pos) * p);
            for (v, f) in faces.iter().zip(face_forces) {
                let share = f / v.len() as f64;
                for &i in v.iter() {
                    out[base + i] += share;
                }
            }
        }
    }
}

fn drag_into(ctx: &Ctx, handle: &DragHandle, out: &mut [Vec3]) -> Result<Option<Vec3>, DynamicsError> {
    if !handle.active {
        return Ok(None);
    }
    let g = ctx
        .global(handle.object, handle.particle)
        .ok_or(DynamicsError::StaleHandle { object: handle.object, particle: handle.particle })?;
    let f = (handle.target - ctx.kin.pos[g]) * handle.k_drag - ctx.kin.vel[g] * handle.c_drag;
    out[g] += f;
    Ok(Some(f))
}

fn external_into(ctx: &Ctx, external: &[ExternalForce], out: &mut [Vec3]) -> Result<(), DynamicsError> {
    // Validate everything first so a bad entry leaves `out` untouched.
    let targets = external
        .iter()
        .map(|e| {
            ctx.global(e.object, e.particle)
                .ok_or(DynamicsError::UnknownParticle { object: e.object, particle: e.particle })
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (g, e) in targets.into_iter().zip(external) {
        out[g] += e.force;
    }
    Ok(())
}

fn bounding_sphere(pos: &[Vec3]) -> (Vec3, f64) {
    let c = pos.iter().copied().sum::<Vec3>() / pos.len() as f64;
    let r = pos.iter().map(|p| p.distance(c)).fold(0.0, f64::max);
    (c, r)
}

/// Penalty forces for particles of one object inside another's bounding
/// sphere, each mirrored onto the other object's nearest particle.
fn collisions_into(ctx: &Ctx, out: &mut [Vec3]) {
    let k = ctx.world.params.collision_stiffness;
    let objs = &ctx.world.objects;
    if k == 0.0 || objs.len() < 2 {
        return;
    }
    let ranges: Vec<std::ops::Range<usize>> =
        objs.iter().enumerate().map(|(oi, o)| ctx.offsets[oi]..ctx.offsets[oi] + o.particles.len()).collect();
    let spheres: Vec<(Vec3, f64)> = ranges
        .iter()
        .map(|r| if r.is_empty() { (Vec3::ZERO, 0.0) } else { bounding_sphere(&ctx.kin.pos[r.clone()]) })
        .collect();
    let pos = &ctx.kin.pos;
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            let ((ci, ri), (cj, rj)) = (spheres[i], spheres[j]);
            if ranges[i].is_empty() || ranges[j].is_empty() || ci.distance(cj) >= ri + rj {
                continue;
            }
            for (inner, outer, center, radius) in [(i, j, cj, rj), (j, i, ci, ri)] {
                for g in ranges[inner].clone() {
                    let d = pos[g] - center;
                    let dist = d.norm();
                    if dist >= radius || dist < DEGENERATE_SPRING_LENGTH {
                        continue;
                    }
                    let f = d * (k * (radius - dist) / dist);
                    let nearest = ranges[outer]
                        .clone()
                        .min_by(|&a, &b| pos[a].distance(pos[g]).total_cmp(&pos[b].distance(pos[g])))
                        .expect("non-empty range");
                    out[g] += f;
                    out[nearest] -= f;
                }
            }
        }
    }
}

/// All sources at once into a single buffer, in pipeline order.
fn accumulate(
    ctx: &Ctx,
    inputs: ForceInputs,
    diags: &mut Vec<Diagnostic>,
) -> Result<(Vec<Vec3>, Option<Vec3>), DynamicsError> {
    let mut acc = zeros(ctx.kin.pos.len());
    gravity_into(ctx, &mut acc);
    springs_into(ctx, &mut acc, diags);
    pressure_into(ctx, &mut acc, diags);
    let drag = match inputs.drag {
        Some(h) => drag_into(ctx, h, &mut acc)?,
        None => None,
    };
    external_into(ctx, inputs.external, &mut acc)?;
    collisions_into(ctx, &mut acc);
    Ok((acc, drag))
}

fn write_accumulators(world: &mut WorldState, forces: &[Vec3]) {
    let mut it = forces.iter();
    for p in world.objects.iter_mut().flat_map(|o| o.particles.iter_mut()) {
        p.force = *it.next().expect("force buffer matches particle count");
    }
}

fn add_to_accumulators(world: &mut WorldState, forces: &[Vec3]) {
    let mut it = forces.iter();
    for p in world.objects.iter_mut().flat_map(|o| o.particles.iter_mut()) {
        p.force += *it.next().expect("force buffer matches particle count");
    }
}

fn log_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        warn!("force evaluation: {d:?}");
    }
}

/// Sets every particle's force accumulator to zero.
pub fn clear_forces(world: &mut WorldState) {
    for p in world.objects.iter_mut().flat_map(|o| o.particles.iter_mut()) {
        p.force = Vec3::ZERO;
    }
}

pub fn apply_gravity(world: &mut WorldState) {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    gravity_into(&Ctx::new(world, &kin), &mut buf);
    add_to_accumulators(world, &buf);
}

/// Adds spring and link forces. Degenerate springs are skipped and reported.
pub fn apply_spring_forces(world: &mut WorldState) -> Vec<Diagnostic> {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    let mut diags = Vec::new();
    springs_into(&Ctx::new(world, &kin), &mut buf, &mut diags);
    add_to_accumulators(world, &buf);
    log_diagnostics(&diags);
    diags
}

/// Enclosed area (2D) or volume (3D) of a closed layer, positive for
/// outward-oriented faces.
pub fn enclosed_measure(object: &ElasticObject, layer: Layer) -> Result<f64, DynamicsError> {
    if !object.layer_is_closed(layer) {
        return Err(DynamicsError::OpenBoundary(layer));
    }
    Ok(object.signed_measure(layer))
}

/// Adds `P = nRT / measure` pressure on every closed layer, spread evenly
/// over each face's vertices.
pub fn apply_pressure_forces(world: &mut WorldState) -> Vec<Diagnostic> {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    let mut diags = Vec::new();
    pressure_into(&Ctx::new(world, &kin), &mut buf, &mut diags);
    add_to_accumulators(world, &buf);
    log_diagnostics(&diags);
    diags
}

/// Adds the drag spring force to the grabbed particle and returns it.
/// Inactive handles contribute nothing and return zero.
pub fn apply_drag_force(world: &mut WorldState, handle: &DragHandle) -> Result<Vec3, DynamicsError> {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    let f = drag_into(&Ctx::new(world, &kin), handle, &mut buf)?;
    add_to_accumulators(world, &buf);
    Ok(f.unwrap_or(Vec3::ZERO))
}

pub fn apply_external_forces(world: &mut WorldState, external: &[ExternalForce]) -> Result<(), DynamicsError> {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    external_into(&Ctx::new(world, &kin), external, &mut buf)?;
    add_to_accumulators(world, &buf);
    Ok(())
}

/// Adds inter-object penalty forces only.
pub fn apply_collision_forces(world: &mut WorldState) {
    let kin = Kinematics::gather(world);
    let mut buf = zeros(kin.pos.len());
    collisions_into(&Ctx::new(world, &kin), &mut buf);
    add_to_accumulators(world, &buf);
}

/// Projects escaped particles back onto the nearest wall, reflecting their
/// outward normal velocity scaled by the restitution.
pub fn project_to_bounds(world: &mut WorldState) {
    let WorldParams { bounds, restitution, .. } = world.params;
    for p in world.objects.iter_mut().flat_map(|o| o.particles.iter_mut()) {
        if p.fixed {
            continue;
        }
        let mut pos = p.position.to_array();
        let mut vel = p.velocity.to_array();
        for k in 0..3 {
            if pos[k] < bounds.min[k] {
                pos[k] = bounds.min[k];
                if vel[k] < 0.0 {
                    vel[k] *= -restitution;
                }
            } else if pos[k] > bounds.max[k] {
                pos[k] = bounds.max[k];
                if vel[k] > 0.0 {
                    vel[k] *= -restitution;
                }
            }
        }
        p.position = pos.into();
        p.velocity = vel.into();
    }
}

/// Wall projection plus inter-object penalty forces.
pub fn resolve_collisions(world: &mut WorldState) {
    project_to_bounds(world);
    apply_collision_forces(world);
}

/// Evaluates every force source separately, stores the total in each
/// particle's accumulator and returns the per-source breakdown.
pub fn total_force(world: &mut WorldState, inputs: ForceInputs) -> Result<ForceBreakdown, DynamicsError> {
    let kin = Kinematics::gather(world);
    let ctx = Ctx::new(world, &kin);
    let n = kin.pos.len();
    let mut diags = Vec::new();

    let mut by_source: [Vec<Vec3>; 6] = std::array::from_fn(|_| zeros(n));
    gravity_into(&ctx, &mut by_source[ForceSource::Gravity.index()]);
    springs_into(&ctx, &mut by_source[ForceSource::Spring.index()], &mut diags);
    pressure_into(&ctx, &mut by_source[ForceSource::Pressure.index()], &mut diags);
    let drag = match inputs.drag {
        Some(h) => drag_into(&ctx, h, &mut by_source[ForceSource::Mouse.index()])?,
        None => None,
    };
    external_into(&ctx, inputs.external, &mut by_source[ForceSource::External.index()])?;
    collisions_into(&ctx, &mut by_source[ForceSource::Collision.index()]);

    let order = [
        ForceSource::Gravity,
        ForceSource::Spring,
        ForceSource::Pressure,
        ForceSource::Mouse,
        ForceSource::External,
        ForceSource::Collision,
    ];
    let per_particle: Vec<ParticleForces> = exec::map_range(n, |g| {
        let sources = std::array::from_fn(|s| by_source[s][g]);
        let total = order.iter().fold(Vec3::ZERO, |acc, s| acc + by_source[s.index()][g]);
        ParticleForces { sources, total }
    });

    let offsets = ctx.offsets.clone();
    drop(ctx);
    let totals: Vec<Vec3> = per_particle.iter().map(|p| p.total).collect();
    write_accumulators(world, &totals);
    log_diagnostics(&diags);

    let objects = world
        .objects
        .iter()
        .zip(offsets)
        .map(|(o, start)| (o.id, per_particle[start..start + o.particles.len()].to_vec()))
        .collect();
    Ok(ForceBreakdown { objects, drag_force: drag, diagnostics: diags })
}

fn fixed_mask(world: &WorldState) -> Vec<bool> {
    world.objects.iter().flat_map(|o| o.particles.iter()).map(|p| p.fixed).collect()
}

fn inverse_masses(world: &WorldState) -> Vec<f64> {
    world.objects.iter().flat_map(|o| o.particles.iter()).map(|p| if p.fixed { 0.0 } else { 1.0 / p.mass }).collect()
}

fn derivative(
    world: &WorldState,
    kin: &Kinematics,
    inputs: ForceInputs,
    fixed: &[bool],
    inv_mass: &[f64],
    diags: &mut Vec<Diagnostic>,
) -> Result<Rate, DynamicsError> {
    let ctx = Ctx::new(world, kin);
    let (forces, _) = accumulate(&ctx, inputs, diags)?;
    let n = kin.pos.len();
    let dpos = exec::map_range(n, |i| if fixed[i] { Vec3::ZERO } else { kin.vel[i] });
    let dvel = exec::map_range(n, |i| forces[i] * inv_mass[i]);
    Ok(Rate { dpos, dvel })
}

/// `y + h * (w1 k1 + w2 k2 + ...)` over both halves of the state.
fn combine(y: &Kinematics, h: f64, terms: &[(f64, &Rate)]) -> Kinematics {
    let n = y.pos.len();
    let pos = exec::map_range(n, |i| y.pos[i] + terms.iter().fold(Vec3::ZERO, |acc, (w, k)| acc + k.dpos[i] * *w) * h);
    let vel = exec::map_range(n, |i| y.vel[i] + terms.iter().fold(Vec3::ZERO, |acc, (w, k)| acc + k.dvel[i] * *w) * h);
    Kinematics { pos, vel }
}

fn check_blowup(world: &WorldState, next: &Kinematics) -> Result<(), DynamicsError> {
    let limit = BLOWUP_FACTOR * world.params.bounds.max_extent();
    let mut g = 0;
    for obj in &world.objects {
        for p in &obj.particles {
            let (pos, vel) = (next.pos[g], next.vel[g]);
            let bad = !pos.is_finite() || !vel.is_finite() || pos.max_abs() > limit;
            if bad {
                let value = if pos.is_finite() { pos.max_abs() } else { f64::NAN };
                return Err(DynamicsError::NumericalBlowup { t: world.clock, object: obj.id, particle: p.id, value });
            }
            g += 1;
        }
    }
    Ok(())
}

/// Advances the world by `dt` with the chosen integrator, then projects
/// particles back inside the view space. On blow-up the world is left as it
/// was before the call.
pub fn step(
    world: &mut WorldState,
    dt: f64,
    kind: IntegratorKind,
    inputs: ForceInputs,
) -> Result<StepReport, DynamicsError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    let y0 = Kinematics::gather(world);
    let fixed = fixed_mask(world);
    let inv_mass = inverse_masses(world);
    let mut diags = Vec::new();
    let f = |y: &Kinematics, diags: &mut Vec<Diagnostic>| derivative(world, y, inputs, &fixed, &inv_mass, diags);

    let next = match kind {
        IntegratorKind::Euler => {
            let k1 = f(&y0, &mut diags)?;
            y0.advanced(dt, &k1)
        }
        IntegratorKind::Midpoint => {
            let k1 = f(&y0, &mut diags)?;
            let k2 = f(&y0.advanced(0.5 * dt, &k1), &mut diags)?;
            y0.advanced(dt, &k2)
        }
        IntegratorKind::RungeKutta4 => {
            let k1 = f(&y0, &mut diags)?;
            let k2 = f(&y0.advanced(0.5 * dt, &k1), &mut diags)?;
            let k3 = f(&y0.advanced(0.5 * dt, &k2), &mut diags)?;
            let k4 = f(&y0.advanced(dt, &k3), &mut diags)?;
            let sixth = 1.0 / 6.0;
            combine(&y0, dt, &[(sixth, &k1), (2.0 * sixth, &k2), (2.0 * sixth, &k3), (sixth, &k4)])
        }
    };

    if let Err(e) = check_blowup(world, &next) {
        error!("step rejected, world rolled back: {e}");
        return Err(e);
    }

    let particles = world.objects.iter_mut().flat_map(|o| o.particles.iter_mut());
    for (p, (pos, vel)) in particles.zip(next.pos.iter().zip(&next.vel)) {
        if !p.fixed {
            p.position = *pos;
            p.velocity = *vel;
        }
    }
    project_to_bounds(world);
    world.clock += dt;

    diags.dedup();
    log_diagnostics(&diags);
    Ok(StepReport { diagnostics: diags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_chain, build_two_layer_disc, Face, Material, Particle, SpringSpec};
    use std::collections::BTreeMap;

    fn single_particle_world(mass: f64, gravity: Vec3) -> WorldState {
        let obj = ElasticObject::from_parts(
            Dimension::D1,
            vec![Particle::new(Vec3::ZERO, mass)],
            &[],
            Vec::new(),
            BTreeMap::new(),
        )
        .unwrap();
        let mut w = WorldState::new(WorldParams { gravity, ..Default::default() });
        w.add_object(obj);
        w
    }

    fn two_particle_world(distance: f64, stiffness: f64, damping: f64) -> WorldState {
        let mut c = build_chain(2, 1.0, 2.0, stiffness, damping).unwrap();
        c.particles[1].position.x = c.particles[0].position.x + distance;
        let mut w = WorldState::new(WorldParams { gravity: Vec3::ZERO, ..Default::default() });
        w.add_object(c);
        w
    }

    #[test]
    fn clear_is_idempotent_and_leaves_state() {
        let mut w = two_particle_world(1.5, 10.0, 0.0);
        apply_spring_forces(&mut w);
        let before = w.objects[0].particles.clone();
        clear_forces(&mut w);
        let once = w.clone();
        clear_forces(&mut w);
        assert_eq!(once, w);
        for (a, b) in before.iter().zip(&w.objects[0].particles) {
            assert_eq!(b.force, Vec3::ZERO);
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
        }
    }

    #[test]
    fn gravity_is_mass_times_g() {
        let mut w = single_particle_world(2.0, Vec3::new(0.0, -9.81, 0.0));
        apply_gravity(&mut w);
        assert_eq!(w.objects[0].particles[0].force, Vec3::new(0.0, -19.62, 0.0));

        let mut pinned = single_particle_world(2.0, Vec3::new(0.0, -9.81, 0.0));
        pinned.objects[0].particles[0].fixed = true;
        apply_gravity(&mut pinned);
        assert_eq!(pinned.objects[0].particles[0].force, Vec3::ZERO);

        let mut zero_g = single_particle_world(2.0, Vec3::ZERO);
        apply_gravity(&mut zero_g);
        assert_eq!(zero_g.objects[0].particles[0].force, Vec3::ZERO);
    }

    #[test]
    fn spring_at_rest_is_silent() {
        let mut w = two_particle_world(1.0, 10.0, 1.0);
        apply_spring_forces(&mut w);
        for p in &w.objects[0].particles {
            assert_eq!(p.force, Vec3::ZERO);
        }
    }

    #[test]
    fn stretched_spring_pulls_endpoints_together() {
        let mut w = two_particle_world(1.5, 10.0, 0.0);
        apply_spring_forces(&mut w);
        let ps = &w.objects[0].particles;
        assert!((ps[0].force - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((ps[1].force - Vec3::new(-5.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn degenerate_spring_is_skipped_with_diagnostic() {
        let mut w = two_particle_world(0.0, 10.0, 0.0);
        let diags = apply_spring_forces(&mut w);
        assert_eq!(diags, vec![Diagnostic::DegenerateSpring { object: Some(0), spring: 0 }]);
        assert!(w.objects[0].particles.iter().all(|p| p.force == Vec3::ZERO));
    }

    #[test]
    fn unit_square_measure_and_orientation() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let particles = pts.iter().map(|&(x, y)| Particle::new(Vec3::new(x, y, 0.0), 1.0)).collect();
        let faces = (0..4).map(|i| Face { vertices: vec![i, (i + 1) % 4], layer: Layer::Outer }).collect();
        let mut sq = ElasticObject::from_parts(Dimension::D2, particles, &[], faces, BTreeMap::new()).unwrap();
        assert_eq!(enclosed_measure(&sq, Layer::Outer).unwrap(), 1.0);
        assert_eq!(enclosed_measure(&sq, Layer::Inner), Err(DynamicsError::OpenBoundary(Layer::Inner)));
        // Mirror in x: the loop turns clockwise.
        for p in &mut sq.particles {
            p.position.x = -p.position.x;
        }
        assert_eq!(enclosed_measure(&sq, Layer::Outer).unwrap(), -1.0);
    }

    fn octagon_disc(nrt: f64) -> WorldState {
        let m = Material { mass: 1.0, stiffness: 0.0, damping: 0.0, nrt_outer: nrt, nrt_inner: 0.0 };
        let mut w = WorldState::new(WorldParams { gravity: Vec3::ZERO, ..Default::default() });
        w.add_object(build_two_layer_disc(8, 1.0, 0.5, m).unwrap());
        w
    }

    #[test]
    fn octagon_pressure_matches_hand_evaluation() {
        let mut w = octagon_disc(10.0);
        apply_pressure_forces(&mut w);
        // Hand oracle: regular octagon of circumradius 1.
        let area = 0.5 * 8.0 * (2.0 * std::f64::consts::PI / 8.0).sin();
        let edge = 2.0 * (std::f64::consts::PI / 8.0).sin();
        let face_mag = 10.0 / area * edge;
        // Each outer vertex gets half of two adjacent face forces; by symmetry the
        // sum points radially with magnitude face_mag * cos(pi/8).
        let expected = face_mag * (std::f64::consts::PI / 8.0).cos();
        for p in &w.objects[0].particles[..8] {
            assert!((p.force.norm() - expected).abs() < 1e-12, "{} vs {}", p.force.norm(), expected);
            let radial = p.position / p.position.norm();
            assert!((p.force.dot(radial) - expected).abs() < 1e-12);
        }
        for p in &w.objects[0].particles[8..] {
            assert_eq!(p.force, Vec3::ZERO);
        }
    }

    #[test]
    fn zero_nrt_adds_no_pressure() {
        let mut w = octagon_disc(0.0);
        apply_pressure_forces(&mut w);
        assert!(w.objects[0].particles.iter().all(|p| p.force == Vec3::ZERO));
    }

    #[test]
    fn collapsed_layer_caps_pressure() {
        let mut w = octagon_disc(10.0);
        let rest = w.objects[0].rest_measure(Layer::Outer).unwrap();
        for p in &mut w.objects[0].particles[..8] {
            p.position = p.position * 1e-4;
        }
        let diags = apply_pressure_forces(&mut w);
        assert_eq!(diags, vec![Diagnostic::CollapsedVolume { object: 0, layer: Layer::Outer }]);
        let cap = 10.0 / (rest * COLLAPSE_FRACTION);
        let edge = 2.0 * (std::f64::consts::PI / 8.0).sin() * 1e-4;
        let expected = cap * edge * (std::f64::consts::PI / 8.0).cos();
        let got = w.objects[0].particles[0].force.norm();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn drag_force_linear_law() {
        let mut w = single_particle_world(1.0, Vec3::ZERO);
        let b = w.params.bounds;
        let h = DragHandle::new(0, 0, Vec3::ZERO, &b);
        assert_eq!(apply_drag_force(&mut w, &h).unwrap(), Vec3::ZERO);

        clear_forces(&mut w);
        let h = DragHandle::new(0, 0, Vec3::new(0.1, 0.0, 0.0), &b);
        let f = apply_drag_force(&mut w, &h).unwrap();
        assert!((f - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(w.objects[0].particles[0].force, f);

        clear_forces(&mut w);
        w.objects[0].particles[0].velocity = Vec3::new(1.0, -2.0, 0.5);
        let h = DragHandle::new(0, 0, Vec3::ZERO, &b);
        let f = apply_drag_force(&mut w, &h).unwrap();
        assert_eq!(f, Vec3::new(-2.0, 4.0, -1.0));

        let stale = DragHandle::new(0, 7, Vec3::ZERO, &b);
        assert_eq!(apply_drag_force(&mut w, &stale), Err(DynamicsError::StaleHandle { object: 0, particle: 7 }));
    }

    #[test]
    fn external_forces_add_up() {
        let mut w = single_particle_world(1.0, Vec3::ZERO);
        apply_external_forces(&mut w, &[]).unwrap();
        assert_eq!(w.objects[0].particles[0].force, Vec3::ZERO);
        let one = ExternalForce { object: 0, particle: 0, force: Vec3::new(1.0, 0.0, 0.0) };
        apply_external_forces(&mut w, &[one]).unwrap();
        assert_eq!(w.objects[0].particles[0].force, Vec3::new(1.0, 0.0, 0.0));
        clear_forces(&mut w);
        apply_external_forces(&mut w, &[one, one]).unwrap();
        assert_eq!(w.objects[0].particles[0].force, Vec3::new(2.0, 0.0, 0.0));
        let bad = ExternalForce { object: 0, particle: 3, force: Vec3::ZERO };
        assert_eq!(
            apply_external_forces(&mut w, &[one, bad]),
            Err(DynamicsError::UnknownParticle { object: 0, particle: 3 })
        );
        assert_eq!(w.objects[0].particles[0].force, Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn floor_contact_projects_and_reflects() {
        let mut w = single_particle_world(1.0, Vec3::ZERO);
        w.params.bounds = Bounds::new(Vec3::new(-1.0, 0.0, -1.0), Vec3::new(1.0, 2.0, 1.0));
        w.params.restitution = 0.5;
        {
            let p = &mut w.objects[0].particles[0];
            p.position = Vec3::new(0.0, -0.1, 0.0);
            p.velocity = Vec3::new(0.0, -2.0, 0.0);
        }
        resolve_collisions(&mut w);
        let p = &w.objects[0].particles[0];
        assert_eq!(p.position, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(p.velocity, Vec3::new(0.0, 1.0, 0.0));

        let mut inside = single_particle_world(1.0, Vec3::ZERO);
        inside.objects[0].particles[0].velocity = Vec3::new(3.0, 1.0, 0.0);
        let before = inside.clone();
        resolve_collisions(&mut inside);
        assert_eq!(before, inside);
    }

    #[test]
    fn overlapping_discs_penalty_sums_to_zero() {
        let m = Material { mass: 1.0, stiffness: 10.0, damping: 0.0, nrt_outer: 0.0, nrt_inner: 0.0 };
        let mut w = WorldState::new(WorldParams { gravity: Vec3::ZERO, ..Default::default() });
        let mut a = build_two_layer_disc(12, 1.0, 0.5, m).unwrap();
        let mut b = a.clone();
        a.translate(Vec3::new(-0.7, 0.0, 0.0));
        b.translate(Vec3::new(0.7, 0.1, 0.0));
        w.add_object(a);
        w.add_object(b);
        apply_collision_forces(&mut w);
        let sum: Vec3 = w.objects.iter().flat_map(|o| &o.particles).map(|p| p.force).sum();
        let scale: f64 = w.objects.iter().flat_map(|o| &o.particles).map(|p| p.force.norm()).sum();
        assert!(scale > 0.0);
        assert!(sum.norm() <= 1e-12 * scale);
        // Particles of `a` that penetrate `b` are pushed towards -x overall.
        let fa: Vec3 = w.objects[0].particles.iter().map(|p| p.force).sum();
        assert!(fa.x < 0.0);
    }

    #[test]
    fn euler_from_rest_only_changes_velocity() {
        let mut w = single_particle_world(1.0, Vec3::new(0.0, -10.0, 0.0));
        step(&mut w, 0.1, IntegratorKind::Euler, ForceInputs::default()).unwrap();
        let p = &w.objects[0].particles[0];
        assert_eq!(p.position, Vec3::ZERO);
        assert!((p.velocity - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        assert!((w.clock - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_derivative_is_exact_for_all_integrators() {
        for kind in [IntegratorKind::Euler, IntegratorKind::Midpoint, IntegratorKind::RungeKutta4] {
            let mut w = single_particle_world(1.0, Vec3::ZERO);
            w.objects[0].particles[0].velocity = Vec3::new(0.3, -0.2, 0.1);
            step(&mut w, 0.05, kind, ForceInputs::default()).unwrap();
            let expected = Vec3::new(0.3, -0.2, 0.1) * 0.05;
            let got = w.objects[0].particles[0].position;
            if kind == IntegratorKind::Euler {
                assert_eq!(got, expected);
            } else {
                assert!((got - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_timesteps() {
        let mut w = single_particle_world(1.0, Vec3::ZERO);
        for dt in [0.0, -0.01, 0.11, f64::NAN] {
            assert!(matches!(
                step(&mut w, dt, IntegratorKind::Euler, ForceInputs::default()),
                Err(DynamicsError::InvalidTimestep(_))
            ));
        }
    }

    #[test]
    fn blowup_rolls_back() {
        let mut w = single_particle_world(1.0, Vec3::ZERO);
        w.objects[0].particles[0].velocity = Vec3::new(1e9, 0.0, 0.0);
        let before = w.clone();
        let err = step(&mut w, 0.1, IntegratorKind::Euler, ForceInputs::default()).unwrap_err();
        assert!(matches!(err, DynamicsError::NumericalBlowup { object: 0, particle: 0, .. }));
        assert_eq!(before, w);
    }

    #[test]
    fn fixed_particles_do_not_move() {
        let mut c = build_chain(4, 3.0, 4.0, 50.0, 0.5).unwrap();
        c.particles[0].fixed = true;
        let pinned = c.particles[0].clone();
        let mut w = WorldState::default();
        w.add_object(c);
        for _ in 0..30 {
            step(&mut w, 1.0 / 60.0, IntegratorKind::RungeKutta4, ForceInputs::default()).unwrap();
        }
        let p = &w.objects[0].particles[0];
        assert_eq!(p.position.x.to_bits(), pinned.position.x.to_bits());
        assert_eq!(p.position.y.to_bits(), pinned.position.y.to_bits());
        assert_eq!(p.velocity, Vec3::ZERO);
        assert!(w.objects[0].particles[3].position.y < 0.0);
    }

    #[test]
    fn total_force_single_particle_is_gravity_only() {
        let mut w = single_particle_world(3.0, Vec3::new(0.0, -9.81, 0.0));
        let b = total_force(&mut w, ForceInputs::default()).unwrap();
        let pf = b.particle(0, 0).unwrap();
        for s in ForceSource::ALL {
            if s == ForceSource::Gravity {
                assert_eq!(pf.get(s), Vec3::new(0.0, -9.81 * 3.0, 0.0));
            } else {
                assert_eq!(pf.get(s), Vec3::ZERO);
            }
        }
        assert_eq!(pf.total, Vec3::new(0.0, -9.81 * 3.0, 0.0));
        assert_eq!(w.objects[0].particles[0].force, pf.total);
    }

    #[test]
    fn pinned_chain_breakdown_matches_accumulator() {
        let mut c = build_chain(5, 4.0, 5.0, 40.0, 0.2).unwrap();
        c.particles[0].fixed = true;
        c.particles[4].fixed = true;
        c.particles[2].position.y = -0.3;
        let mut w = WorldState::default();
        w.add_object(c);
        let b = total_force(&mut w, ForceInputs::default()).unwrap();
        for (i, pf) in b.objects[0].1.iter().enumerate() {
            assert!(pf.total.is_finite());
            assert_eq!(pf.total, pf.get(ForceSource::Gravity) + pf.get(ForceSource::Spring));
            assert_eq!(w.objects[0].particles[i].force, pf.total);
        }
    }

    #[test]
    fn spring_spec_rest_lengths_follow_geometry() {
        let particles =
            vec![Particle::new(Vec3::new(0.0, 0.0, 0.0), 1.0), Particle::new(Vec3::new(3.0, 4.0, 0.0), 1.0)];
        let obj = ElasticObject::from_parts(
            Dimension::D1,
            particles,
            &[SpringSpec { a: 0, b: 1, stiffness: 1.0, damping: 0.0 }],
            Vec::new(),
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(obj.springs()[0].rest_length, 5.0);
    }
}
