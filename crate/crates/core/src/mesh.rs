//! Elastic object construction: particles, springs and oriented boundary
//! faces for 1D chains, two-layer discs and two-layer icospheres.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::Vec3;
use crate::world::WorldState;

pub type ObjectId = usize;
pub type ParticleId = usize;

/// Deepest icosphere subdivision accepted by the builders.
pub const MAX_ICOSPHERE_DEPTH: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("unknown particle {particle} in object {object}")]
    UnknownParticle { object: ObjectId, particle: ParticleId },
    #[error("cannot link an object to itself")]
    SelfLink,
    #[error("{0:?} layer boundary is not closed")]
    OpenBoundary(Layer),
    #[error("{0:?} layer encloses a non-positive measure; faces are mis-oriented")]
    InvertedLayer(Layer),
}

fn invalid(msg: impl Into<String>) -> MeshError {
    MeshError::InvalidArgument(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    D1,
    D2,
    D3,
}

impl Dimension {
    pub fn from_number(d: u8) -> Option<Dimension> {
        match d {
            1 => Some(Dimension::D1),
            2 => Some(Dimension::D2),
            3 => Some(Dimension::D3),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Dimension::D1 => 1,
            Dimension::D2 => 2,
            Dimension::D3 => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Outer,
    Inner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub id: ParticleId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub force: Vec3,
    pub mass: f64,
    /// Pinned particles never move.
    pub fixed: bool,
}

impl Particle {
    pub fn new(position: Vec3, mass: f64) -> Self {
        Particle { id: 0, position, velocity: Vec3::ZERO, force: Vec3::ZERO, mass, fixed: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spring {
    pub a: ParticleId,
    pub b: ParticleId,
    pub stiffness: f64,
    pub damping: f64,
    pub rest_length: f64,
}

/// Spring description before rest lengths are measured from geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpringSpec {
    pub a: ParticleId,
    pub b: ParticleId,
    pub stiffness: f64,
    pub damping: f64,
}

/// Oriented boundary element: two vertices in 2D, three in 3D.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Face {
    pub vertices: Vec<ParticleId>,
    pub layer: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticObject {
    pub id: ObjectId,
    pub dimension: Dimension,
    pub particles: Vec<Particle>,
    springs: Vec<Spring>,
    faces: Vec<Face>,
    pressure: BTreeMap<Layer, f64>,
    rest_measure: BTreeMap<Layer, f64>,
}

impl ElasticObject {
    /// Assembles an object from raw parts, measuring spring rest lengths and
    /// per-layer enclosed measures from the current particle positions.
    pub fn from_parts(
        dimension: Dimension,
        mut particles: Vec<Particle>,
        springs: &[SpringSpec],
        faces: Vec<Face>,
        pressure: BTreeMap<Layer, f64>,
    ) -> Result<Self, MeshError> {
        if particles.is_empty() {
            return Err(invalid("object has no particles"));
        }
        for (i, p) in particles.iter_mut().enumerate() {
            if !(p.mass > 0.0 && p.mass.is_finite()) {
                return Err(invalid(format!("particle {i} mass must be positive")));
            }
            if !p.position.is_finite() || !p.velocity.is_finite() {
                return Err(invalid(format!("particle {i} has non-finite state")));
            }
            p.id = i;
        }
        let n = particles.len();
        let mut built = Vec::with_capacity(springs.len());
        for s in springs {
            if s.a == s.b || s.a >= n || s.b >= n {
                return Err(invalid(format!("spring ({}, {}) references invalid particles", s.a, s.b)));
            }
            if !(s.stiffness >= 0.0 && s.damping >= 0.0 && s.stiffness.is_finite() && s.damping.is_finite()) {
                return Err(invalid("spring coefficients must be non-negative"));
            }
            built.push(Spring {
                a: s.a,
                b: s.b,
                stiffness: s.stiffness,
                damping: s.damping,
                rest_length: particles[s.a].position.distance(particles[s.b].position),
            });
        }

        let arity = match dimension {
            Dimension::D1 => {
                if !faces.is_empty() || !pressure.is_empty() {
                    return Err(invalid("1D objects carry no faces or pressure"));
                }
                0
            }
            Dimension::D2 => 2,
            Dimension::D3 => 3,
        };
        for f in &faces {
            if f.vertices.len() != arity {
                return Err(invalid(format!("{dimension:?} faces need {arity} vertices")));
            }
            if f.vertices.iter().any(|&v| v >= n) {
                return Err(invalid("face references a missing particle"));
            }
            let distinct = match f.vertices.as_slice() {
                [a, b] => a != b,
                [a, b, c] => a != b && b != c && a != c,
                _ => false,
            };
            if !distinct {
                return Err(invalid("face vertices must be distinct"));
            }
        }
        for (&layer, &nrt) in &pressure {
            if !(nrt >= 0.0 && nrt.is_finite()) {
                return Err(invalid("pressure nRT must be non-negative"));
            }
            if !faces.iter().any(|f| f.layer == layer) {
                return Err(invalid(format!("pressure given for {layer:?} layer without faces")));
            }
        }

        let mut obj = ElasticObject {
            id: 0,
            dimension,
            particles,
            springs: built,
            faces,
            pressure,
            rest_measure: BTreeMap::new(),
        };
        for layer in obj.layers() {
            if !obj.layer_is_closed(layer) {
                return Err(MeshError::OpenBoundary(layer));
            }
            let m = obj.signed_measure(layer);
            if m.is_nan() || m <= 0.0 {
                return Err(MeshError::InvertedLayer(layer));
            }
            obj.rest_measure.insert(layer, m);
        }
        Ok(obj)
    }

    pub fn springs(&self) -> &[Spring] {
        &self.springs
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Ideal-gas numerator nRT for a layer, zero when unset.
    pub fn pressure_nrt(&self, layer: Layer) -> f64 {
        self.pressure.get(&layer).copied().unwrap_or(0.0)
    }

    pub fn pressure_params(&self) -> &BTreeMap<Layer, f64> {
        &self.pressure
    }

    /// Enclosed measure of the layer at construction time.
    pub fn rest_measure(&self, layer: Layer) -> Option<f64> {
        self.rest_measure.get(&layer).copied()
    }

    /// Layers that own at least one face, in `Outer, Inner` order.
    pub fn layers(&self) -> Vec<Layer> {
        [Layer::Outer, Layer::Inner].into_iter().filter(|l| self.faces.iter().any(|f| f.layer == *l)).collect()
    }

    pub fn layer_faces(&self, layer: Layer) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(move |f| f.layer == layer)
    }

    /// Whether the layer's faces form a closed loop (2D) or shell (3D).
    pub fn layer_is_closed(&self, layer: Layer) -> bool {
        let faces: Vec<&Face> = self.layer_faces(layer).collect();
        if faces.is_empty() {
            return false;
        }
        match self.dimension {
            Dimension::D1 => false,
            Dimension::D2 => {
                let mut starts: HashMap<usize, i32> = HashMap::new();
                let mut ends: HashMap<usize, i32> = HashMap::new();
                for f in &faces {
                    *starts.entry(f.vertices[0]).or_default() += 1;
                    *ends.entry(f.vertices[1]).or_default() += 1;
                }
                starts.len() == ends.len() && starts.iter().all(|(v, &c)| c == 1 && ends.get(v) == Some(&1))
            }
            Dimension::D3 => {
                let mut directed: HashMap<(usize, usize), i32> = HashMap::new();
                for f in &faces {
                    let v = &f.vertices;
                    for k in 0..3 {
                        *directed.entry((v[k], v[(k + 1) % 3])).or_default() += 1;
                    }
                }
                directed.iter().all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
            }
        }
    }

    /// Signed area (2D, shoelace) or volume (3D, summed signed tetrahedra)
    /// enclosed by a layer at the current positions.
    pub fn signed_measure(&self, layer: Layer) -> f64 {
        let pos = |i: usize| self.particles[i].position;
        signed_measure_of(self.dimension, self.layer_faces(layer).map(|f| f.vertices.as_slice()), pos)
    }

    pub fn translate(&mut self, offset: Vec3) {
        for p in &mut self.particles {
            p.position += offset;
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.particles.iter().map(|p| p.position).sum();
        sum / self.particles.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }
}

/// Signed enclosed measure of oriented faces under an arbitrary position lookup.
pub(crate) fn signed_measure_of<'a, I, P>(dim: Dimension, faces: I, pos: P) -> f64
where
    I: Iterator<Item = &'a [usize]>,
    P: Fn(usize) -> Vec3,
{
    match dim {
        Dimension::D1 => 0.0,
        Dimension::D2 => {
            0.5 * faces
                .map(|v| {
                    let (a, b) = (pos(v[0]), pos(v[1]));
                    a.x * b.y - b.x * a.y
                })
                .sum::<f64>()
        }
        Dimension::D3 => faces.map(|v| pos(v[0]).dot(pos(v[1]).cross(pos(v[2])))).sum::<f64>() / 6.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpring {
    pub object_a: ObjectId,
    pub object_b: ObjectId,
    /// `spring.a` indexes `object_a`, `spring.b` indexes `object_b`.
    pub spring: Spring,
}

fn check_positive(name: &str, v: f64) -> Result<(), MeshError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<(), MeshError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative, got {v}")))
    }
}

/// Material parameters shared by every builder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    /// Total object mass, split evenly over the particles.
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub nrt_outer: f64,
    pub nrt_inner: f64,
}

impl Material {
    fn validate(&self) -> Result<(), MeshError> {
        check_positive("mass", self.mass)?;
        check_non_negative("stiffness", self.stiffness)?;
        check_non_negative("damping", self.damping)?;
        check_non_negative("outer nRT", self.nrt_outer)?;
        check_non_negative("inner nRT", self.nrt_inner)
    }

    fn pressure(&self) -> BTreeMap<Layer, f64> {
        BTreeMap::from([(Layer::Outer, self.nrt_outer), (Layer::Inner, self.nrt_inner)])
    }

    fn spring(&self, a: usize, b: usize) -> SpringSpec {
        SpringSpec { a, b, stiffness: self.stiffness, damping: self.damping }
    }
}

/// Horizontal chain of `n` evenly spaced particles centred on the origin.
pub fn build_chain(n: usize, length: f64, mass: f64, stiffness: f64, damping: f64) -> Result<ElasticObject, MeshError> {
    if n < 2 {
        return Err(invalid(format!("a chain needs at least 2 particles, got {n}")));
    }
    check_positive("length", length)?;
    check_positive("mass", mass)?;
    check_non_negative("stiffness", stiffness)?;
    check_non_negative("damping", damping)?;

    let spacing = length / (n - 1) as f64;
    let m = mass / n as f64;
    let particles = (0..n).map(|i| Particle::new(Vec3::new(-0.5 * length + spacing * i as f64, 0.0, 0.0), m)).collect();
    let springs: Vec<SpringSpec> = (0..n - 1).map(|i| SpringSpec { a: i, b: i + 1, stiffness, damping }).collect();
    ElasticObject::from_parts(Dimension::D1, particles, &springs, Vec::new(), BTreeMap::new())
}

/// Two concentric rings of `n_outer` particles with ring edges, radial spokes
/// and cross diagonals. Particle `i` is on the outer ring, `n_outer + i` is
/// the inner particle on the same spoke.
pub fn build_two_layer_disc(
    n_outer: usize,
    r_outer: f64,
    inner_ratio: f64,
    material: Material,
) -> Result<ElasticObject, MeshError> {
    if n_outer < 3 {
        return Err(invalid(format!("a ring needs at least 3 vertices, got {n_outer}")));
    }
    check_positive("outer radius", r_outer)?;
    if !(inner_ratio > 0.0 && inner_ratio < 1.0) {
        return Err(invalid(format!("inner ratio must lie in (0, 1), got {inner_ratio}")));
    }
    material.validate()?;

    let n = n_outer;
    let m = material.mass / (2 * n) as f64;
    let ring = |radius: f64| {
        (0..n).map(move |i| {
            let theta = 2.0 * PI * i as f64 / n as f64;
            Vec3::new(radius * theta.cos(), radius * theta.sin(), 0.0)
        })
    };
    let particles: Vec<Particle> =
        ring(r_outer).chain(ring(inner_ratio * r_outer)).map(|p| Particle::new(p, m)).collect();

    let next = |i: usize| (i + 1) % n;
    let mut springs = Vec::with_capacity(5 * n);
    springs.extend((0..n).map(|i| material.spring(i, next(i))));
    springs.extend((0..n).map(|i| material.spring(n + i, n + next(i))));
    springs.extend((0..n).map(|i| material.spring(i, n + i)));
    for i in 0..n {
        springs.push(material.spring(i, n + next(i)));
        springs.push(material.spring(next(i), n + i));
    }

    let mut faces = Vec::with_capacity(2 * n);
    faces.extend((0..n).map(|i| Face { vertices: vec![i, next(i)], layer: Layer::Outer }));
    faces.extend((0..n).map(|i| Face { vertices: vec![n + i, n + next(i)], layer: Layer::Inner }));

    ElasticObject::from_parts(Dimension::D2, particles, &springs, faces, material.pressure())
}

/// Unit icosphere: vertices on the unit sphere and outward-oriented triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Icosphere {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Icosphere {
    /// Unique undirected edges in first-seen order, each as `(min, max)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    out.push(key);
                }
            }
        }
        out
    }
}

fn icosahedron() -> Icosphere {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|&v| {
            let v = Vec3::from(v);
            v / v.norm()
        })
        .collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Icosphere { vertices, triangles }
}

/// Subdivides an icosahedron `depth` times, splitting each triangle into four
/// and pushing the new edge midpoints back onto the unit sphere.
pub fn subdivide_icosphere(depth: u32) -> Result<Icosphere, MeshError> {
    if depth > MAX_ICOSPHERE_DEPTH {
        return Err(invalid(format!("icosphere depth {depth} exceeds {MAX_ICOSPHERE_DEPTH}")));
    }
    let mut mesh = icosahedron();
    for _ in 0..depth {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut vertices = mesh.vertices.clone();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = vertices[a] + vertices[b];
                vertices.push(m / m.norm());
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
        for &[a, b, c] in &mesh.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        mesh = Icosphere { vertices, triangles };
    }
    Ok(mesh)
}

/// Outer icosphere shell of radius `r_outer` and an inner copy scaled by
/// `inner_ratio`, joined by radial springs and per-edge cross springs.
/// Particle `i` is outer, `V + i` is the inner particle on the same ray.
pub fn build_two_layer_sphere(
    depth: u32,
    r_outer: f64,
    inner_ratio: f64,
    material: Material,
) -> Result<ElasticObject, MeshError> {
    check_positive("outer radius", r_outer)?;
    if !(inner_ratio > 0.0 && inner_ratio < 1.0) {
        return Err(invalid(format!("inner ratio must lie in (0, 1), got {inner_ratio}")));
    }
    material.validate()?;
    let mesh = subdivide_icosphere(depth)?;
    let v = mesh.vertices.len();
    let m = material.mass / (2 * v) as f64;

    let particles: Vec<Particle> = mesh
        .vertices
        .iter()
        .map(|&p| p * r_outer)
        .chain(mesh.vertices.iter().map(|&p| p * (inner_ratio * r_outer)))
        .map(|p| Particle::new(p, m))
        .collect();

    let edges = mesh.edges();
    let mut springs = Vec::with_capacity(4 * edges.len() + v);
    springs.extend(edges.iter().map(|&(a, b)| material.spring(a, b)));
    springs.extend(edges.iter().map(|&(a, b)| material.spring(v + a, v + b)));
    springs.extend((0..v).map(|i| material.spring(i, v + i)));
    for &(a, b) in &edges {
        springs.push(material.spring(a, v + b));
        springs.push(material.spring(b, v + a));
    }

    let mut faces = Vec::with_capacity(2 * mesh.triangles.len());
    faces.extend(mesh.triangles.iter().map(|t| Face { vertices: t.to_vec(), layer: Layer::Outer }));
    faces.extend(
        mesh.triangles.iter().map(|t| Face { vertices: t.iter().map(|&i| v + i).collect(), layer: Layer::Inner }),
    );

    ElasticObject::from_parts(Dimension::D3, particles, &springs, faces, material.pressure())
}

/// Adds a spring between particle `pa` of object `a` and particle `pb` of
/// object `b`, at rest at their current distance. Returns the link index.
pub fn link_objects(
    world: &mut WorldState,
    a: ObjectId,
    pa: ParticleId,
    b: ObjectId,
    pb: ParticleId,
    stiffness: f64,
    damping: f64,
) -> Result<usize, MeshError> {
    if a == b {
        return Err(MeshError::SelfLink);
    }
    check_non_negative("stiffness", stiffness)?;
    check_non_negative("damping", damping)?;
    let position = |obj: ObjectId, pid: ParticleId| -> Result<Vec3, MeshError> {
        let o = world.object(obj).ok_or(MeshError::UnknownObject(obj))?;
        o.particles.get(pid).map(|p| p.position).ok_or(MeshError::UnknownParticle { object: obj, particle: pid })
    };
    let rest_length = position(a, pa)?.distance(position(b, pb)?);
    world.links.push(LinkSpring {
        object_a: a,
        object_b: b,
        spring: Spring { a: pa, b: pb, stiffness, damping, rest_length },
    });
    Ok(world.links.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn material() -> Material {
        Material { mass: 1.6, stiffness: 10.0, damping: 0.1, nrt_outer: 1.0, nrt_inner: 0.5 }
    }

    fn assert_rest_lengths_match(obj: &ElasticObject) {
        for s in obj.springs() {
            let d = obj.particles[s.a].position.distance(obj.particles[s.b].position);
            assert_eq!(s.rest_length, d);
        }
    }

    #[test]
    fn chain_of_three() {
        let c = build_chain(3, 2.0, 3.0, 10.0, 0.1).unwrap();
        let xs: Vec<f64> = c.particles.iter().map(|p| p.position.x).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.springs().len(), 2);
        assert!(c.springs().iter().all(|s| s.rest_length == 1.0));
        assert!(c.particles.iter().all(|p| p.mass == 1.0));
        assert!(c.faces().is_empty());
        assert!(c.pressure_params().is_empty());
    }

    #[test]
    fn minimal_chain() {
        let c = build_chain(2, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(c.particles.len(), 2);
        assert_eq!(c.springs().len(), 1);
        assert_eq!(c.springs()[0].rest_length, 1.0);
    }

    #[test]
    fn chain_rejects_bad_arguments() {
        assert!(matches!(build_chain(1, 1.0, 1.0, 1.0, 0.0), Err(MeshError::InvalidArgument(_))));
        assert!(build_chain(3, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(build_chain(3, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(build_chain(3, 1.0, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn disc_topology_counts() {
        let d = build_two_layer_disc(8, 1.0, 0.6, material()).unwrap();
        assert_eq!(d.particles.len(), 16);
        assert_eq!(d.springs().len(), 40);
        assert_eq!(d.layer_faces(Layer::Outer).count(), 8);
        assert_eq!(d.layer_faces(Layer::Inner).count(), 8);
        assert_eq!(d.particles[0].position, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(d.particles[8].position, Vec3::new(0.6, 0.0, 0.0));
        assert!((d.total_mass() - 1.6).abs() < 1e-12);
        assert_rest_lengths_match(&d);
        for layer in [Layer::Outer, Layer::Inner] {
            assert!(d.layer_is_closed(layer));
            assert!(d.signed_measure(layer) > 0.0);
        }
    }

    #[test]
    fn disc_rejects_small_rings_and_bad_ratio() {
        assert!(build_two_layer_disc(2, 1.0, 0.6, material()).is_err());
        assert!(build_two_layer_disc(8, 1.0, 1.0, material()).is_err());
        assert!(build_two_layer_disc(8, 1.0, 0.0, material()).is_err());
    }

    #[test]
    fn icosphere_counts_and_euler_characteristic() {
        for (depth, v, f, e) in [(0, 12, 20, 30), (1, 42, 80, 120), (2, 162, 320, 480), (3, 642, 1280, 1920)] {
            let m = subdivide_icosphere(depth).unwrap();
            assert_eq!(m.vertices.len(), v);
            assert_eq!(m.triangles.len(), f);
            assert_eq!(m.edges().len(), e);
            assert_eq!(v as i64 - e as i64 + f as i64, 2);
            for p in &m.vertices {
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(subdivide_icosphere(6).is_err());
    }

    #[test]
    fn icosphere_triangles_face_outward() {
        let m = subdivide_icosphere(2).unwrap();
        for t in &m.triangles {
            let (a, b, c) = (m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
            let n = (b - a).cross(c - a);
            assert!(n.dot(a + b + c) > 0.0);
        }
    }

    #[test]
    fn sphere_topology_counts() {
        let s = build_two_layer_sphere(1, 1.0, 0.5, material()).unwrap();
        assert_eq!(s.particles.len(), 84);
        assert_eq!(s.layer_faces(Layer::Outer).count(), 80);
        assert_eq!(s.layer_faces(Layer::Inner).count(), 80);
        assert_eq!(s.springs().len(), 522);
        assert_rest_lengths_match(&s);
        assert!(s.signed_measure(Layer::Outer) > s.signed_measure(Layer::Inner));
    }

    #[test]
    fn sphere_volume_matches_polyhedral_oracle() {
        let s = build_two_layer_sphere(2, 1.0, 0.5, material()).unwrap();
        // Polyhedral oracle: sum of tetrahedra from the origin, computed
        // directly from the unit mesh.
        let mesh = subdivide_icosphere(2).unwrap();
        let oracle: f64 = mesh
            .triangles
            .iter()
            .map(|t| mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]])) / 6.0)
            .sum();
        let v = s.signed_measure(Layer::Outer);
        assert!((v - oracle).abs() < 1e-12);
        // Frozen from an independent numpy construction of the same mesh.
        assert!((v - 4.047044679978854).abs() < 1e-12);
        let ball = 4.0 * PI / 3.0;
        let eps = 1.0 - v / ball;
        assert!(eps > 0.0 && eps < 0.034, "eps = {eps}");
    }

    #[test]
    fn volume_deficit_shrinks_with_depth() {
        let ball = 4.0 * PI / 3.0;
        let deficit = |depth| {
            let s = build_two_layer_sphere(depth, 1.0, 0.5, material()).unwrap();
            1.0 - s.signed_measure(Layer::Outer) / ball
        };
        let d: Vec<f64> = (0..=3).map(deficit).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0] / 3.0));
        assert!(d[3] < 0.01);
    }

    #[test]
    fn builders_are_deterministic() {
        let a = build_two_layer_sphere(2, 1.0, 0.5, material()).unwrap();
        let b = build_two_layer_sphere(2, 1.0, 0.5, material()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn open_or_inverted_layers_are_rejected() {
        let particles = vec![
            Particle::new(Vec3::new(0.0, 0.0, 0.0), 1.0),
            Particle::new(Vec3::new(1.0, 0.0, 0.0), 1.0),
            Particle::new(Vec3::new(0.0, 1.0, 0.0), 1.0),
        ];
        let open = vec![
            Face { vertices: vec![0, 1], layer: Layer::Outer },
            Face { vertices: vec![1, 2], layer: Layer::Outer },
        ];
        assert_eq!(
            ElasticObject::from_parts(Dimension::D2, particles.clone(), &[], open, BTreeMap::new()),
            Err(MeshError::OpenBoundary(Layer::Outer))
        );
        let clockwise = vec![
            Face { vertices: vec![0, 2], layer: Layer::Outer },
            Face { vertices: vec![2, 1], layer: Layer::Outer },
            Face { vertices: vec![1, 0], layer: Layer::Outer },
        ];
        assert_eq!(
            ElasticObject::from_parts(Dimension::D2, particles, &[], clockwise, BTreeMap::new()),
            Err(MeshError::InvertedLayer(Layer::Outer))
        );
    }

    #[test]
    fn linking_uses_current_gap() {
        let mut w = WorldState::default();
        let mut a = build_two_layer_disc(8, 1.0, 0.6, material()).unwrap();
        let mut b = a.clone();
        a.translate(Vec3::new(-1.05, 0.0, 0.0));
        b.translate(Vec3::new(1.05, 0.0, 0.0));
        let ia = w.add_object(a);
        let ib = w.add_object(b);
        // outer particle 0 of `a` faces `b`; outer particle 4 of `b` faces `a`.
        let link = link_objects(&mut w, ia, 0, ib, 4, 5.0, 0.1).unwrap();
        assert!((w.links[link].spring.rest_length - 0.1).abs() < 1e-12);
        assert_eq!(link_objects(&mut w, ib, 0, ib, 5, 1.0, 0.0), Err(MeshError::SelfLink));
        assert_eq!(link_objects(&mut w, 9, 0, ib, 5, 1.0, 0.0), Err(MeshError::UnknownObject(9)));
        assert_eq!(
            link_objects(&mut w, ia, 99, ib, 5, 1.0, 0.0),
            Err(MeshError::UnknownParticle { object: ia, particle: 99 })
        );
    }
}
