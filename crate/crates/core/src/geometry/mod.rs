//! Meshes, poses, equilibrium poses, part placement and camera visibility.

mod hull;
mod obj;
mod placement;
mod poses;

pub use hull::{convex_hull, ConvexHull, HullFace};
pub use obj::load_obj;
pub use placement::{place_part, PlacementError, StageBounds};
pub use poses::{load_pose_catalog, stable_poses, stable_poses_detailed, StablePose};

use crate::materials::{DefectInstance, PbrMaterial};
use crate::math::{Aabb, Quat, Vec3};
use crate::scene::CameraModel;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face index {index} out of range (have {count})")]
    IndexOutOfRange { line: usize, index: i64, count: usize },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate convex hull: {0}")]
    DegenerateHull(String),
    #[error("invalid pose catalog: {0}")]
    PoseCatalog(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.positions.len();
        if self.triangles.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        if self.normals.len() != n || self.uvs.len() != n {
            return Err(GeometryError::InvalidMesh("attribute arrays differ in length".into()));
        }
        if self.triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(GeometryError::InvalidMesh("triangle index out of range".into()));
        }
        if self.positions.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidMesh("non-finite position".into()));
        }
        if self.normals.iter().any(|n| (n.length() - 1.0).abs() > 1e-4) {
            return Err(GeometryError::InvalidMesh("normal not unit length".into()));
        }
        if self.uvs.iter().flatten().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(GeometryError::InvalidMesh("uv outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.positions.iter().copied())
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Planar UV projection onto the two largest bounding-box axes.
    pub fn planar_uvs(positions: &[Vec3]) -> Vec<[f64; 2]> {
        let b = Aabb::from_points(positions.iter().copied());
        let e = b.extent();
        let smallest = if e.x <= e.y && e.x <= e.z {
            0
        } else if e.y <= e.z {
            1
        } else {
            2
        };
        let (ua, va) = match smallest {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let norm = |v: f64, lo: f64, ext: f64| if ext > 0.0 { ((v - lo) / ext).clamp(0.0, 1.0) } else { 0.5 };
        positions
            .iter()
            .map(|p| [norm(p[ua], b.min[ua], e[ua]), norm(p[va], b.min[va], e[va])])
            .collect()
    }

    /// Builds a flat-shaded mesh from positions and triangles: every triangle
    /// gets its own three vertices carrying the face normal. UVs are planar.
    pub fn flat(positions: &[Vec3], triangles: &[[u32; 3]]) -> Mesh {
        let mut out = Mesh::default();
        let uvs = Mesh::planar_uvs(positions);
        for tri in triangles {
            let [a, b, c] = tri.map(|i| positions[i as usize]);
            let n = (b - a).cross(c - a).normalized_or(Vec3::Z);
            let base = out.positions.len() as u32;
            for &i in tri {
                out.positions.push(positions[i as usize]);
                out.normals.push(n);
                out.uvs.push(uvs[i as usize]);
            }
            out.triangles.push([base, base + 1, base + 2]);
        }
        out
    }

    /// Axis-aligned box centered at the origin with outward-facing triangles.
    pub fn cuboid(size: Vec3) -> Mesh {
        let h = size * 0.5;
        let p: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let tris: Vec<[u32; 3]> = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        Mesh::flat(&p, &tris)
    }

    /// Single-sided rectangle in the z = 0 plane facing +z, centered at the origin.
    pub fn quad(width: f64, height: f64) -> Mesh {
        let (w, h) = (width * 0.5, height * 0.5);
        Mesh {
            positions: vec![Vec3::new(-w, -h, 0.0), Vec3::new(w, -h, 0.0), Vec3::new(w, h, 0.0), Vec3::new(-w, h, 0.0)],
            normals: vec![Vec3::Z; 4],
            uvs: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    /// UV sphere with smooth normals.
    pub fn uv_sphere(radius: f64, rings: u32, segments: u32) -> Mesh {
        let mut m = Mesh::default();
        for r in 0..=rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..=segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                m.positions.push(n * radius);
                m.normals.push(n);
                m.uvs.push([s as f64 / segments as f64, r as f64 / rings as f64]);
            }
        }
        let stride = segments + 1;
        for r in 0..rings {
            for s in 0..segments {
                let a = r * stride + s;
                let b = a + stride;
                if r != 0 {
                    m.triangles.push([a, b, a + 1]);
                }
                if r != rings - 1 {
                    m.triangles.push([a + 1, b, b + 1]);
                }
            }
        }
        m
    }
}

/// Rigid transform: rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Quat::IDENTITY, translation: Vec3::ZERO };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn look_at(position: Vec3, target: Vec3, up: Vec3) -> Self {
        Self { rotation: Quat::look_rotation(target - position, up), translation: position }
    }

    #[inline]
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(p - self.translation)
    }

    #[inline]
    pub fn inverse_transform_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(v)
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Pose) -> Pose {
        Pose {
            rotation: (self.rotation * inner.rotation).normalized(),
            translation: self.transform_point(inner.translation),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.is_finite() && self.translation.is_finite() && (self.rotation.norm() - 1.0).abs() <= 1e-6
    }
}

/// A part placed in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PartInstance {
    pub id: u32,
    pub mesh: Arc<Mesh>,
    pub pose: Pose,
    pub material: PbrMaterial,
    pub defects: Vec<DefectInstance>,
}

impl PartInstance {
    pub fn new(id: u32, mesh: Arc<Mesh>, pose: Pose) -> Self {
        Self { id, mesh, pose, material: PbrMaterial::default(), defects: Vec::new() }
    }

    pub fn world_positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.mesh.positions.iter().map(move |&p| self.pose.transform_point(p))
    }

    pub fn world_aabb(&self) -> Aabb {
        Aabb::from_points(self.world_positions())
    }
}

/// True iff `point` lies in front of the camera (beyond the near clip) and
/// projects inside the half-open image rectangle.
pub fn frustum_contains(camera: &CameraModel, point: Vec3) -> bool {
    match camera.project(point) {
        Some((u, v, _)) => {
            let [w, h] = camera.resolution;
            u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64
        }
        None => false,
    }
}

/// Geometric part visibility: at least one transformed vertex inside the
/// camera frustum. Occlusion is ignored.
pub fn part_visible(camera: &CameraModel, instance: &PartInstance) -> bool {
    instance.world_positions().any(|p| frustum_contains(camera, p))
}
