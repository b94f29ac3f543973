//! Resting poses of a rigid part on the plane z = 0.

use super::hull::{convex_hull, solid_volume_centroid, HullFace};
use super::{GeometryError, Mesh, Pose};
use crate::math::{Quat, Vec3};
use std::path::Path;

/// Relative margin (of face diameter) the projected center of mass must keep
/// from every support-polygon edge.
pub const STABILITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct StablePose {
    pub pose: Pose,
    /// Contact face in mesh coordinates.
    pub face: HullFace,
    pub center_of_mass: Vec3,
}

/// Center of mass under uniform density: the mesh's own solid when it encloses
/// a meaningful volume, otherwise its convex hull.
pub fn center_of_mass(mesh: &Mesh, hull_volume: f64, hull_centroid: Vec3) -> Vec3 {
    let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
    let (vol, c) = solid_volume_centroid(&tris, hull_centroid);
    if vol.abs() > 1e-3 * hull_volume.abs() && c.is_finite() {
        c
    } else {
        hull_centroid
    }
}

/// One pose per hull face whose projected center of mass falls strictly inside
/// the face; each pose puts that face on z = 0, face down, with the center of
/// mass above the origin.
pub fn stable_poses_detailed(mesh: &Mesh) -> Result<Vec<StablePose>, GeometryError> {
    let hull = convex_hull(&mesh.positions)?;
    let (hull_vol, hull_c) = hull.volume_centroid();
    let com = center_of_mass(mesh, hull_vol, hull_c);
    let mut out = Vec::new();
    for face in hull.faces {
        let projected = com - face.normal * (face.normal.dot(com) - face.offset);
        if face.inset_distance(projected) <= STABILITY_MARGIN * face.diameter() {
            continue;
        }
        let rotation = Quat::from_rotation_arc(face.normal, -Vec3::Z);
        let rc = rotation.rotate(com);
        // the face plane maps to z = -offset; every other point lies above it
        let translation = Vec3::new(-rc.x, -rc.y, face.offset);
        out.push(StablePose { pose: Pose::new(rotation, translation), face, center_of_mass: com });
    }
    Ok(out)
}

pub fn stable_poses(mesh: &Mesh) -> Result<Vec<Pose>, GeometryError> {
    Ok(stable_poses_detailed(mesh)?.into_iter().map(|s| s.pose).collect())
}

/// Reads a JSON list of `{"rotation": [w, x, y, z], "translation": [x, y, z]}`.
pub fn load_pose_catalog(path: &Path) -> Result<Vec<Pose>, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::PoseCatalog(format!("{}: {e}", path.display())))?;
    let poses: Vec<Pose> = serde_json::from_str(&text).map_err(|e| GeometryError::PoseCatalog(e.to_string()))?;
    if poses.is_empty() {
        return Err(GeometryError::PoseCatalog("catalog is empty".into()));
    }
    poses
        .into_iter()
        .map(|p| {
            let n = p.rotation.norm();
            if !p.translation.is_finite() || !n.is_finite() || n < 1e-12 {
                return Err(GeometryError::PoseCatalog("invalid pose".into()));
            }
            Ok(Pose::new(p.rotation.normalized(), p.translation))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn min_z(mesh: &Mesh, pose: &Pose) -> f64 {
        mesh.positions.iter().map(|&p| pose.transform_point(p).z).fold(f64::INFINITY, f64::min)
    }

    fn tetrahedron() -> Mesh {
        let s = 1.0 / 2f64.sqrt();
        let p = [Vec3::new(1.0, 0.0, -s), Vec3::new(-1.0, 0.0, -s), Vec3::new(0.0, 1.0, s), Vec3::new(0.0, -1.0, s)];
        Mesh::flat(&p, &[[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    }

    #[test]
    fn cube_has_six_poses() {
        let m = Mesh::cuboid(Vec3::ONE);
        let poses = stable_poses(&m).unwrap();
        assert_eq!(poses.len(), 6);
        for p in &poses {
            assert!(min_z(&m, p).abs() < 1e-6);
            assert!(p.is_valid());
        }
    }

    #[test]
    fn tetrahedron_has_four_poses() {
        let m = tetrahedron();
        let poses = stable_poses(&m).unwrap();
        assert_eq!(poses.len(), 4);
        for p in &poses {
            assert!(min_z(&m, p).abs() < 1e-6);
        }
    }

    #[test]
    fn tall_box_all_faces_stable() {
        let m = Mesh::cuboid(Vec3::new(1.0, 1.0, 10.0));
        let detailed = stable_poses_detailed(&m).unwrap();
        assert_eq!(detailed.len(), 6);
        for s in &detailed {
            // the contact face maps onto z = 0 facing down
            assert!((s.pose.transform_vector(s.face.normal) + Vec3::Z).length() < 1e-9);
            for &v in &s.face.polygon {
                assert!(s.pose.transform_point(v).z.abs() < 1e-9);
            }
            let c = s.pose.transform_point(s.center_of_mass);
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        }
    }

    #[test]
    fn leaning_prism_loses_unstable_faces() {
        // strongly sheared prism: the center of mass overhangs one side face
        let base = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let shift = Vec3::new(3.0, 0.0, 1.0);
        let mut pts: Vec<Vec3> = base.to_vec();
        pts.extend(base.iter().map(|&p| p + shift));
        let tris: Vec<[u32; 3]> = vec![
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4], [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
        ];
        let m = Mesh::flat(&pts, &tris);
        let poses = stable_poses(&m).unwrap();
        assert!(poses.len() < 6, "got {}", poses.len());
        assert!(!poses.is_empty());
    }

    #[test]
    fn degenerate_mesh_errors() {
        let m = Mesh::quad(1.0, 1.0);
        assert!(matches!(stable_poses(&m), Err(GeometryError::DegenerateHull(_))));
    }

    #[test]
    fn pose_catalog_round_trip() {
        let poses = vec![Pose::new(Quat::from_axis_angle(Vec3::X, 0.5), Vec3::new(0.0, 0.0, 0.1))];
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), serde_json::to_string(&poses).unwrap()).unwrap();
        let back = load_pose_catalog(f.path()).unwrap();
        assert!((back[0].rotation.w - poses[0].rotation.w).abs() < 1e-12);
        std::fs::write(f.path(), "[]").unwrap();
        assert!(load_pose_catalog(f.path()).is_err());
    }
}
