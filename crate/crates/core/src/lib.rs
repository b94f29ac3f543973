//! Domain-randomized synthetic imagery for surface-defect inspection.
//!
//! Scenes of parts with simulated defects are composed from a configuration,
//! rendered with an embedded path tracer, labeled from per-defect visibility
//! passes, and exported as a JSON-lines dataset. The [`evaluate`] module
//! scores detector predictions against such datasets.

pub mod annotate;
pub mod augment;
pub mod config;
pub mod evaluate;
pub mod fixtures;
pub mod geometry;
pub mod materials;
pub mod math;
pub mod noise;
pub mod photometry;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod stream;

pub use config::{load_config, parse_config, GenConfig};
pub use math::{Quat, Vec3};
pub use stream::RngStream;
