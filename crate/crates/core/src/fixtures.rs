//! Small reference scenes with known answers, shared by unit and
//! acceptance tests.

use crate::config::{DefectKindSpec, DefectTextureSpec, MaskShape, Param, RenderSettings};
use crate::geometry::{Mesh, PartInstance, Pose};
use crate::materials::{compose_break, DefectInstance, DefectPlacement, PbrMaterial};
use crate::math::{Quat, Vec3};
use crate::scene::{light_pose, CameraModel, Light, LightKind, SceneGraph};
use crate::stream::RngStream;
use std::sync::Arc;

/// Camera at `position` looking at `target`, 16 mm lens on a square-pixel sensor.
pub fn camera(position: Vec3, target: Vec3, width: u32, height: u32) -> CameraModel {
    let sensor_w = 12.8;
    CameraModel {
        pose: Pose::look_at(position, target, Vec3::X),
        focal_length_mm: 16.0,
        sensor_mm: [sensor_w, sensor_w * height as f64 / width as f64],
        resolution: [width, height],
        aperture: 1e6,
        focus_distance: (target - position).length(),
        near_clip: 0.01,
    }
}

fn empty_scene(cameras: Vec<CameraModel>) -> SceneGraph {
    SceneGraph { stage: vec![], cameras, lights: vec![], parts: vec![], scene_index: 0, environment: Vec3::ZERO }
}

pub fn settings(width: u32, height: u32, spp: u32) -> RenderSettings {
    RenderSettings { width, height, spp, radiance_clamp: 1e9, ..RenderSettings::default() }
}

/// White furnace: unit-albedo Lambertian sphere in a unit environment.
pub fn furnace(width: u32, height: u32) -> SceneGraph {
    let mut scene = empty_scene(vec![camera(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, width, height)]);
    let mut part = PartInstance::new(0, Arc::new(Mesh::uv_sphere(0.6, 96, 192)), Pose::IDENTITY);
    part.material = PbrMaterial::diffuse(Vec3::ONE);
    scene.parts.push(part);
    scene.environment = Vec3::ONE;
    scene
}

/// A box on a floor lit by one area light and a dim environment.
pub fn lit_box(width: u32, height: u32) -> SceneGraph {
    let mut scene = empty_scene(vec![camera(Vec3::new(0.6, -0.4, 0.9), Vec3::new(0.0, 0.0, 0.05), width, height)]);
    let mut floor = PartInstance::new(0, Arc::new(Mesh::quad(3.0, 3.0)), Pose::IDENTITY);
    floor.material = PbrMaterial::diffuse(Vec3::splat(0.6));
    let mut cube = PartInstance::new(1, Arc::new(Mesh::cuboid(Vec3::new(0.2, 0.15, 0.1))), Pose::new(Quat::IDENTITY, Vec3::new(0.0, 0.0, 0.05)));
    cube.material = PbrMaterial { base_color: Vec3::new(0.7, 0.5, 0.3), roughness: 0.35, metallic: 0.2, specular: 0.5, noise: None };
    scene.parts = vec![floor, cube];
    scene.lights.push(Light {
        pose: light_pose(Vec3::new(-0.3, 0.2, 0.8), Vec3::ZERO),
        kind: LightKind::Area { width: 0.3, height: 0.2 },
        power: 10.0,
        color: Vec3::ONE,
        profile: None,
    });
    scene.environment = Vec3::splat(0.05);
    scene
}

/// Height of the top face of [`flat_plate`].
pub const PLATE_TOP: f64 = 0.005;
/// Camera distance above the plate in [`flat_plate`].
pub const PLATE_CAMERA_HEIGHT: f64 = 1.5;

/// Disk-masked break of diameter `scale` on a plate viewed straight down.
/// With `on_top = false` the defect sits on the face turned away from the camera.
pub fn flat_plate(scale: f64, on_top: bool, width: u32, height: u32) -> SceneGraph {
    let cam = camera(Vec3::new(0.0, 0.0, PLATE_TOP + PLATE_CAMERA_HEIGHT), Vec3::new(0.0, 0.0, PLATE_TOP), width, height);
    let mut scene = empty_scene(vec![cam]);
    let mut plate = PartInstance::new(0, Arc::new(Mesh::cuboid(Vec3::new(0.5, 0.5, 2.0 * PLATE_TOP))), Pose::IDENTITY);
    plate.material = PbrMaterial::diffuse(Vec3::splat(0.5));
    let spec = DefectKindSpec {
        class: "break".into(),
        textures: vec![crate::config::DefectKind::Deformation, crate::config::DefectKind::Encrustation, crate::config::DefectKind::Hole],
        size: Param::Fixed(scale),
        per_part: crate::config::CountParam::Fixed(1),
        texture: DefectTextureSpec { shape: MaskShape::Disk, ..DefectTextureSpec::default() },
    };
    let mut defect: DefectInstance = compose_break(&mut RngStream::new(0, 0, "plate"), &spec, 1).expect("disk mask");
    let z = if on_top { PLATE_TOP } else { -PLATE_TOP };
    let normal = if on_top { Vec3::Z } else { -Vec3::Z };
    defect.placement = Some(DefectPlacement {
        position: Vec3::new(0.0, 0.0, z),
        normal,
        tangent: Vec3::X,
        bitangent: normal.cross(Vec3::X),
        triangle: 0,
    });
    plate.defects.push(defect);
    scene.parts.push(plate);
    scene.lights.push(Light {
        pose: light_pose(Vec3::new(0.0, 0.3, 1.0), Vec3::ZERO),
        kind: LightKind::Point,
        power: 20.0,
        color: Vec3::ONE,
        profile: None,
    });
    scene
}

/// Pinhole projected area, in pixels, of a face-on disk of diameter `d` at
/// depth `depth`.
pub fn projected_disk_area(camera: &CameraModel, d: f64, depth: f64) -> f64 {
    let (fx, fy) = camera.focal_px();
    std::f64::consts::PI * (0.5 * d) * (0.5 * d) * (fx / depth) * (fy / depth)
}
