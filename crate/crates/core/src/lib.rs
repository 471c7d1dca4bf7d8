//! Soft-body simulation engine: two-layer mass-spring-pressure objects,
//! Euler/Midpoint/RK4 stepping, interactive drag sessions, XML/CSV state
//! dumps with replay, and AHP cost-value prioritization.

pub mod dynamics;
pub mod exec;
pub mod mesh;
pub mod persistence;
pub mod prioritization;
pub mod protocol;
pub mod scene;
pub mod script;
pub mod session;
pub mod vec3;
pub mod world;

pub use vec3::Vec3;
