use serde::{Deserialize, Serialize};

use crate::mesh::{ElasticObject, LinkSpring, ObjectId};
use crate::vec3::Vec3;

/// Axis-aligned view space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Bounds { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        p.clamp(self.min, self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Largest side length, the scale used for blow-up detection and the
    /// keyboard nudge step.
    pub fn max_extent(&self) -> f64 {
        self.extent().max_abs()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// The box shrunk by `fraction` of its extent on every side.
    pub fn shrunk(&self, fraction: f64) -> Bounds {
        let margin = self.extent() * fraction;
        Bounds { min: self.min + margin, max: self.max - margin }
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { min: Vec3::new(-5.0, -5.0, -5.0), max: Vec3::new(5.0, 5.0, 5.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub gravity: Vec3,
    pub bounds: Bounds,
    /// Fraction of normal speed kept after hitting a wall, in `[0, 1]`.
    pub restitution: f64,
    /// Penalty stiffness (N/m) for inter-object overlap.
    pub collision_stiffness: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            gravity: Vec3::new(0.0, -9.81, 0.0),
            bounds: Bounds::default(),
            restitution: 0.5,
            collision_stiffness: 500.0,
        }
    }
}

impl WorldParams {
    pub fn is_valid(&self) -> bool {
        self.gravity.is_finite()
            && self.bounds.is_valid()
            && (0.0..=1.0).contains(&self.restitution)
            && self.collision_stiffness >= 0.0
            && self.collision_stiffness.is_finite()
    }
}

/// Everything the dynamics operate on: objects, inter-object links, world
/// parameters and the simulation clock.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldState {
    pub objects: Vec<ElasticObject>,
    pub links: Vec<LinkSpring>,
    pub params: WorldParams,
    pub clock: f64,
}

impl WorldState {
    pub fn new(params: WorldParams) -> Self {
        WorldState { params, ..Default::default() }
    }

    /// Adds an object, assigning it the next free id.
    pub fn add_object(&mut self, mut obj: ElasticObject) -> ObjectId {
        let id = self.objects.iter().map(|o| o.id + 1).max().unwrap_or(0);
        obj.id = id;
        self.objects.push(obj);
        id
    }

    pub fn object(&self, id: ObjectId) -> Option<&ElasticObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Option<&mut ElasticObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub(crate) fn object_index(&self, id: ObjectId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn particle_count(&self) -> usize {
        self.objects.iter().map(|o| o.particles.len()).sum()
    }

    /// Start of each object's particles in the flattened particle order.
    pub(crate) fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.objects
            .iter()
            .map(|o| {
                let start = acc;
                acc += o.particles.len();
                start
            })
            .collect()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.objects.iter().flat_map(|o| o.particles.iter()).map(|p| p.velocity * p.mass).sum()
    }

    /// Σ m·|v| over all particles, the scale for momentum drift checks.
    pub fn momentum_scale(&self) -> f64 {
        self.objects.iter().flat_map(|o| o.particles.iter()).map(|p| p.mass * p.velocity.norm()).sum()
    }

    pub fn all_in_bounds(&self) -> bool {
        let b = &self.params.bounds;
        self.objects.iter().flat_map(|o| o.particles.iter()).all(|p| b.contains(p.position))
    }
}
