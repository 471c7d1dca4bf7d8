//! Declarative scene description shared by the CLI, the server and the UI.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{DragHandle, IntegratorKind, DEFAULT_DT, MAX_DT};
use crate::mesh::{
    build_chain, build_two_layer_disc, build_two_layer_sphere, Dimension, ElasticObject, Material, MeshError,
    MAX_ICOSPHERE_DEPTH,
};
use crate::vec3::Vec3;
use crate::world::{WorldParams, WorldState};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("invalid object: {0}")]
    Mesh(#[from] MeshError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Chain,
    TwoLayerDisc,
    TwoLayerSphere,
}

impl ObjectKind {
    pub fn dimension(self) -> Dimension {
        match self {
            ObjectKind::Chain => Dimension::D1,
            ObjectKind::TwoLayerDisc => Dimension::D2,
            ObjectKind::TwoLayerSphere => Dimension::D3,
        }
    }

    pub fn for_dimension(d: Dimension) -> ObjectKind {
        match d {
            Dimension::D1 => ObjectKind::Chain,
            Dimension::D2 => ObjectKind::TwoLayerDisc,
            Dimension::D3 => ObjectKind::TwoLayerSphere,
        }
    }
}

/// Ideal-gas numerators per layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    pub outer: f64,
    pub inner: f64,
}

impl Default for PressureConfig {
    fn default() -> Self {
        PressureConfig { outer: 1.0, inner: 0.5 }
    }
}

/// One object. Shape parameters for every kind carry defaults so the same
/// block can be rebuilt in another dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    #[serde(rename = "type")]
    pub kind: ObjectKind,
    /// Chain particle count.
    #[serde(default = "defaults::n")]
    pub n: usize,
    /// Chain length (m).
    #[serde(default = "defaults::length")]
    pub length: f64,
    /// Particles per disc ring.
    #[serde(default = "defaults::n_outer")]
    pub n_outer: usize,
    /// Icosphere subdivision depth.
    #[serde(default = "defaults::depth")]
    pub depth: u32,
    /// Outer radius (m) of discs and spheres.
    #[serde(default = "defaults::radius")]
    pub radius: f64,
    #[serde(default = "defaults::inner_ratio")]
    pub inner_ratio: f64,
    #[serde(default = "defaults::stiffness")]
    pub stiffness: f64,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    #[serde(default = "defaults::mass")]
    pub mass: f64,
    #[serde(default)]
    pub pressure: PressureConfig,
    #[serde(default)]
    pub offset: Vec3,
    /// Particle ids that never move.
    #[serde(default)]
    pub pinned: Vec<usize>,
}

mod defaults {
    pub fn n() -> usize {
        8
    }
    pub fn length() -> f64 {
        2.0
    }
    pub fn n_outer() -> usize {
        12
    }
    pub fn depth() -> u32 {
        1
    }
    pub fn radius() -> f64 {
        1.0
    }
    pub fn inner_ratio() -> f64 {
        0.6
    }
    pub fn stiffness() -> f64 {
        100.0
    }
    pub fn damping() -> f64 {
        1.0
    }
    pub fn mass() -> f64 {
        1.0
    }
    pub fn dt() -> f64 {
        super::DEFAULT_DT
    }
    pub fn steering_gain() -> f64 {
        5.0
    }
    pub fn arrival_fraction() -> f64 {
        0.05
    }
    pub fn drag_k() -> f64 {
        super::DragHandle::DEFAULT_K
    }
    pub fn drag_c() -> f64 {
        super::DragHandle::DEFAULT_C
    }
}

impl ObjectConfig {
    pub fn new(kind: ObjectKind) -> Self {
        ObjectConfig {
            kind,
            n: defaults::n(),
            length: defaults::length(),
            n_outer: defaults::n_outer(),
            depth: defaults::depth(),
            radius: defaults::radius(),
            inner_ratio: defaults::inner_ratio(),
            stiffness: defaults::stiffness(),
            damping: defaults::damping(),
            mass: defaults::mass(),
            pressure: PressureConfig::default(),
            offset: Vec3::ZERO,
            pinned: Vec::new(),
        }
    }

    pub fn material(&self) -> Material {
        Material {
            mass: self.mass,
            stiffness: self.stiffness,
            damping: self.damping,
            nrt_outer: self.pressure.outer,
            nrt_inner: self.pressure.inner,
        }
    }

    /// The same material and placement with the default shape for `d`.
    pub fn for_dimension(&self, d: Dimension) -> ObjectConfig {
        let mut cfg = self.clone();
        cfg.kind = ObjectKind::for_dimension(d);
        if cfg.kind != self.kind {
            cfg.pinned.clear();
        }
        cfg
    }

    pub fn build(&self) -> Result<ElasticObject, SceneError> {
        if self.depth > MAX_ICOSPHERE_DEPTH {
            return Err(
                MeshError::InvalidArgument(format!("depth {} exceeds {MAX_ICOSPHERE_DEPTH}", self.depth)).into()
            );
        }
        let mut obj = match self.kind {
            ObjectKind::Chain => build_chain(self.n, self.length, self.mass, self.stiffness, self.damping)?,
            ObjectKind::TwoLayerDisc => {
                build_two_layer_disc(self.n_outer, self.radius, self.inner_ratio, self.material())?
            }
            ObjectKind::TwoLayerSphere => {
                build_two_layer_sphere(self.depth, self.radius, self.inner_ratio, self.material())?
            }
        };
        if !self.offset.is_finite() {
            return Err(SceneError::Invalid("offset must be finite".into()));
        }
        obj.translate(self.offset);
        for &id in &self.pinned {
            let p = obj
                .particles
                .get_mut(id)
                .ok_or_else(|| SceneError::Invalid(format!("pinned particle {id} does not exist")))?;
            p.fixed = true;
        }
        Ok(obj)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragConfig {
    #[serde(default = "defaults::drag_k")]
    pub stiffness: f64,
    #[serde(default = "defaults::drag_c")]
    pub damping: f64,
}

impl Default for DragConfig {
    fn default() -> Self {
        DragConfig { stiffness: defaults::drag_k(), damping: defaults::drag_c() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdleConfig {
    /// N per metre of centroid offset, spread over the object's particles.
    #[serde(default = "defaults::steering_gain")]
    pub steering_gain: f64,
    /// Arrival radius as a fraction of the largest view-space side.
    #[serde(default = "defaults::arrival_fraction")]
    pub arrival_fraction: f64,
}

impl Default for IdleConfig {
    fn default() -> Self {
        IdleConfig { steering_gain: defaults::steering_gain(), arrival_fraction: defaults::arrival_fraction() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub dimension: u8,
    pub object: ObjectConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_objects: Vec<ObjectConfig>,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default)]
    pub integrator: IntegratorKind,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub drag: DragConfig,
    #[serde(default)]
    pub idle: IdleConfig,
}

impl SceneConfig {
    /// A single default object of dimension `d` with default world settings.
    pub fn default_for(d: Dimension) -> Self {
        SceneConfig {
            dimension: d.number(),
            object: ObjectConfig::new(ObjectKind::for_dimension(d)),
            extra_objects: Vec::new(),
            world: WorldParams::default(),
            integrator: IntegratorKind::default(),
            dt: DEFAULT_DT,
            seed: 0,
            drag: DragConfig::default(),
            idle: IdleConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: SceneConfig = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dimension(&self) -> Result<Dimension, SceneError> {
        Dimension::from_number(self.dimension)
            .ok_or_else(|| SceneError::Invalid(format!("dimension must be 1, 2 or 3, got {}", self.dimension)))
    }

    /// Checks every builder precondition and the world parameters by
    /// building the world once.
    pub fn validate(&self) -> Result<(), SceneError> {
        self.build_world().map(|_| ())
    }

    pub fn build_world(&self) -> Result<WorldState, SceneError> {
        let d = self.dimension()?;
        if !self.world.is_valid() {
            return Err(SceneError::Invalid(
                "world needs finite gravity, min < max bounds, restitution in [0, 1] and non-negative collision stiffness"
                    .into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(SceneError::Invalid(format!("dt must lie in (0, {MAX_DT}], got {}", self.dt)));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.drag.stiffness) || !(self.drag.damping >= 0.0 && self.drag.damping.is_finite()) {
            return Err(SceneError::Invalid("drag stiffness must be positive and damping non-negative".into()));
        }
        if !positive(self.idle.steering_gain) || !positive(self.idle.arrival_fraction) {
            return Err(SceneError::Invalid("idle steering gain and arrival fraction must be positive".into()));
        }
        let mut world = WorldState::new(self.world);
        for cfg in std::iter::once(&self.object).chain(&self.extra_objects) {
            if cfg.kind.dimension() != d {
                return Err(SceneError::Invalid(format!("{:?} object in a {}D scene", cfg.kind, d.number())));
            }
            world.add_object(self.place(cfg.build()?)?);
        }
        Ok(world)
    }

    /// World holding only the default object for `d`.
    pub fn build_world_for(&self, d: Dimension) -> Result<WorldState, SceneError> {
        let mut world = WorldState::new(self.world);
        world.add_object(self.place(self.object.for_dimension(d).build()?)?);
        Ok(world)
    }

    fn place(&self, obj: ElasticObject) -> Result<ElasticObject, SceneError> {
        let b = &self.world.bounds;
        match obj.particles.iter().find(|p| !b.contains(p.position)) {
            Some(p) => {
                Err(SceneError::Invalid(format!("particle {} at {} lies outside the view space", p.id, p.position)))
            }
            None => Ok(obj),
        }
    }

    /// SHA-256 of the canonical JSON form, used to tie recordings to scenes.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        format!("{:x}", Sha256::digest(json))
    }
}
