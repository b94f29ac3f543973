//! Randomized in-plane placement with bounding-box overlap rejection.

use super::{Mesh, PartInstance, Pose};
use crate::math::{Aabb, Quat, Vec3};
use crate::stream::RngStream;
use std::sync::Arc;

/// Rectangular placement area `[-half_x, half_x] × [-half_y, half_y]` on z = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBounds {
    pub half_extent: [f64; 2],
}

impl StageBounds {
    pub fn contains_xy(&self, b: &Aabb) -> bool {
        let [hx, hy] = self.half_extent;
        b.min.x >= -hx && b.max.x <= hx && b.min.y >= -hy && b.max.y <= hy
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlacementError {
    #[error("no valid placement after {0} attempts")]
    Exhausted(u32),
    #[error("max_attempts must be >= 1")]
    NoAttempts,
}

/// Places a part: the equilibrium pose `stable` is composed with a random
/// rotation about z and a random xy translation keeping the part's bounding
/// box inside the stage. Draws that overlap an existing instance's box are
/// rejected and retried up to `max_attempts` times.
pub fn place_part(
    id: u32,
    mesh: &Arc<Mesh>,
    stable: &Pose,
    stage: &StageBounds,
    stream: &mut RngStream,
    existing: &[PartInstance],
    max_attempts: u32,
) -> Result<PartInstance, PlacementError> {
    if max_attempts == 0 {
        return Err(PlacementError::NoAttempts);
    }
    let [hx, hy] = stage.half_extent;
    let existing_boxes: Vec<Aabb> = existing.iter().map(|p| p.world_aabb()).collect();
    for attempt in 1..=max_attempts {
        let yaw = stream.uniform_in(0.0, std::f64::consts::TAU);
        let spin = Pose::new(Quat::from_axis_angle(Vec3::Z, yaw), Vec3::ZERO);
        let rested = spin.compose(stable);
        let local = Aabb::from_points(mesh.positions.iter().map(|&p| rested.transform_point(p)));
        // translations that keep the box on the stage
        let (lo_x, hi_x) = (-hx - local.min.x, hx - local.max.x);
        let (lo_y, hi_y) = (-hy - local.min.y, hy - local.max.y);
        let tx = stream.uniform_in(lo_x, hi_x.max(lo_x));
        let ty = stream.uniform_in(lo_y, hi_y.max(lo_y));
        if hi_x < lo_x || hi_y < lo_y {
            log::trace!("placement attempt {attempt}: part larger than stage at yaw {yaw:.3}");
            continue;
        }
        let pose = Pose::new(rested.rotation, rested.translation + Vec3::new(tx, ty, 0.0));
        let candidate = PartInstance::new(id, mesh.clone(), pose);
        let bounds = candidate.world_aabb();
        if !stage.contains_xy(&bounds) {
            continue;
        }
        if existing_boxes.iter().any(|b| b.overlaps(&bounds)) {
            continue;
        }
        return Ok(candidate);
    }
    Err(PlacementError::Exhausted(max_attempts))
}
