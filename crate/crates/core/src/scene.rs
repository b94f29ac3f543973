//! Inspection stage, camera rig and lights, and per-scene environment
//! randomization.

use crate::config::{ColorParamExt, GenConfig, LightKindSpec, LightSpec, StageSpec};
use crate::geometry::{Mesh, PartInstance, Pose};
use crate::materials::{NoiseModulation, PbrMaterial};
use crate::math::{Quat, Vec3};
use crate::photometry::{parse_ies, IesError, PhotometricProfile};
use crate::stream::RngStream;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid light {index}: {message}")]
    Light { index: usize, message: String },
    #[error("photometric profile {path}: {source}")]
    Profile { path: String, source: IesError },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Pinhole/thin-lens camera. Camera space: +x right, +y down, +z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub pose: Pose,
    pub focal_length_mm: f64,
    pub sensor_mm: [f64; 2],
    pub resolution: [u32; 2],
    /// f-number.
    pub aperture: f64,
    /// Distance to the plane in focus, meters.
    pub focus_distance: f64,
    pub near_clip: f64,
}

impl CameraModel {
    /// Focal lengths in pixels.
    pub fn focal_px(&self) -> (f64, f64) {
        let [w, h] = self.resolution;
        (
            self.focal_length_mm / self.sensor_mm[0] * w as f64,
            self.focal_length_mm / self.sensor_mm[1] * h as f64,
        )
    }

    /// Thin-lens aperture radius in meters.
    pub fn lens_radius(&self) -> f64 {
        self.focal_length_mm * 1e-3 / (2.0 * self.aperture)
    }

    /// Projects a world point to continuous pixel coordinates and depth.
    /// `None` when the point is not beyond the near clip.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let l = self.pose.inverse_transform_point(p);
        if !(l.z > self.near_clip) {
            return None;
        }
        let (fx, fy) = self.focal_px();
        let [w, h] = self.resolution;
        Some((fx * l.x / l.z + 0.5 * w as f64, fy * l.y / l.z + 0.5 * h as f64, l.z))
    }

    /// Camera-space direction (z = 1) through continuous pixel `(u, v)`.
    fn film_direction(&self, u: f64, v: f64) -> Vec3 {
        let (fx, fy) = self.focal_px();
        let [w, h] = self.resolution;
        Vec3::new((u - 0.5 * w as f64) / fx, (v - 0.5 * h as f64) / fy, 1.0)
    }

    /// Pinhole ray through `(u, v)`: world origin and unit direction.
    pub fn pinhole_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let d = self.film_direction(u, v).normalized();
        (self.pose.translation, self.pose.transform_vector(d))
    }

    /// Thin-lens ray through `(u, v)` with lens sample `(lx, ly)` in the unit
    /// square. Points at depth `focus_distance` stay sharp.
    pub fn lens_ray(&self, u: f64, v: f64, lx: f64, ly: f64) -> (Vec3, Vec3) {
        let radius = self.lens_radius();
        let film = self.film_direction(u, v);
        if radius <= 0.0 {
            let d = film.normalized();
            return (self.pose.translation, self.pose.transform_vector(d));
        }
        let (dx, dy) = concentric_disk(lx, ly);
        let origin = Vec3::new(dx * radius, dy * radius, 0.0);
        let focus = film * self.focus_distance;
        let d = (focus - origin).normalized();
        (self.pose.transform_point(origin), self.pose.transform_vector(d))
    }

    pub fn forward(&self) -> Vec3 {
        self.pose.transform_vector(Vec3::Z)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let [w, h] = self.resolution;
        if w < 16 || h < 16 {
            return Err(SceneError::Camera(format!("resolution {w}x{h} below 16x16")));
        }
        if !(self.focal_length_mm > 0.0) || !(self.sensor_mm[0] > 0.0) || !(self.sensor_mm[1] > 0.0) {
            return Err(SceneError::Camera("focal length and sensor size must be > 0".into()));
        }
        if !(self.aperture > 0.0) {
            return Err(SceneError::Camera("f-number must be > 0".into()));
        }
        if !(self.focus_distance > self.near_clip) {
            return Err(SceneError::Camera(format!(
                "focus distance {} must exceed near clip {}",
                self.focus_distance, self.near_clip
            )));
        }
        if !self.pose.is_valid() {
            return Err(SceneError::Camera("pose is not a rigid transform".into()));
        }
        Ok(())
    }
}

/// Shirley-Chiu square-to-disk map.
pub fn concentric_disk(u: f64, v: f64) -> (f64, f64) {
    let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
    if a == 0.0 && b == 0.0 {
        return (0.0, 0.0);
    }
    let q = std::f64::consts::FRAC_PI_4;
    if a.abs() > b.abs() {
        (a * (q * b / a).cos(), a * (q * b / a).sin())
    } else {
        (b * (2.0 * q - q * a / b).cos(), b * (2.0 * q - q * a / b).sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LightKind {
    Point,
    /// Rectangle in the light's local xy plane, emitting toward local -z.
    Area { width: f64, height: f64 },
}

/// Light source. Local -z is the principal emission direction (nadir for
/// photometric profiles).
#[derive(Debug, Clone, PartialEq)]
pub struct Light {
    pub pose: Pose,
    pub kind: LightKind,
    /// Total emitted power, watts.
    pub power: f64,
    pub color: Vec3,
    pub profile: Option<Arc<PhotometricProfile>>,
}

impl Light {
    pub fn validate(&self, index: usize) -> Result<(), SceneError> {
        let err = |m: &str| Err(SceneError::Light { index, message: m.to_string() });
        if !(self.power >= 0.0) {
            return err("power must be >= 0");
        }
        if let LightKind::Area { width, height } = self.kind {
            if !(width > 0.0 && height > 0.0) {
                return err("area dimensions must be > 0");
            }
        }
        Ok(())
    }

    pub fn direction(&self) -> Vec3 {
        self.pose.transform_vector(-Vec3::Z)
    }
}

/// Orientation whose local -z points from `position` to `target`.
pub fn light_pose(position: Vec3, target: Vec3) -> Pose {
    let d = (target - position).normalized_or(-Vec3::Z);
    Pose::new(Quat::from_rotation_arc(-Vec3::Z, d), position)
}

/// Static stage surface in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StageElement {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub material: PbrMaterial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub stage: Vec<StageElement>,
    pub cameras: Vec<CameraModel>,
    pub lights: Vec<Light>,
    pub parts: Vec<PartInstance>,
    pub scene_index: u32,
    /// Uniform background radiance.
    pub environment: Vec3,
}

impl SceneGraph {
    pub fn defect_count(&self) -> usize {
        self.parts.iter().map(|p| p.defects.len()).sum()
    }

    /// Locates a defect by id: `(part index, defect index)`.
    pub fn find_defect(&self, id: u32) -> Option<(usize, usize)> {
        self.parts
            .iter()
            .enumerate()
            .find_map(|(pi, p)| p.defects.iter().position(|d| d.id == id).map(|di| (pi, di)))
    }
}

fn translated(mesh: Mesh, offset: Vec3) -> Mesh {
    let mut m = mesh;
    for p in &mut m.positions {
        *p += offset;
    }
    m
}

const BELT_DEPTH: f64 = 0.05;
const ARCH_HEIGHT: f64 = 1.4;
const STAGE_NOISE_SEEDS: [u64; 3] = [0x5747_0001, 0x5747_0002, 0x5747_0003];

fn stage_material(color: &crate::config::ColorParam, spec: &StageSpec, seed: u64) -> PbrMaterial {
    PbrMaterial {
        base_color: color.nominal_rgb(),
        roughness: spec.roughness.nominal(),
        metallic: 0.0,
        specular: 0.5,
        noise: Some(NoiseModulation::nominal(&spec.noise, seed)),
    }
}

fn build_stage(spec: &StageSpec) -> Vec<StageElement> {
    let [fx, fy] = spec.floor_size;
    let mut out = vec![
        StageElement {
            name: "belt".into(),
            mesh: Arc::new(translated(Mesh::cuboid(Vec3::new(fx, spec.belt_width, BELT_DEPTH)), Vec3::new(0.0, 0.0, -0.5 * BELT_DEPTH))),
            material: stage_material(&spec.belt_color, spec, STAGE_NOISE_SEEDS[0]),
        },
        StageElement {
            name: "floor".into(),
            mesh: Arc::new(translated(Mesh::quad(fx, fy), Vec3::new(0.0, 0.0, -BELT_DEPTH))),
            material: stage_material(&spec.floor_color, spec, STAGE_NOISE_SEEDS[1]),
        },
    ];
    if spec.arch {
        // posts beside the belt, set back along x so the rig's view lines stay clear
        let post = Vec3::new(0.06, 0.06, ARCH_HEIGHT);
        let y = 0.5 * fy.min(2.4) - 0.1;
        let x = 0.25;
        let gray = PbrMaterial { base_color: Vec3::splat(0.35), roughness: 0.4, metallic: 0.8, specular: 0.5, noise: None };
        for (name, py) in [("arch_post_left", -y), ("arch_post_right", y)] {
            out.push(StageElement {
                name: name.into(),
                mesh: Arc::new(translated(Mesh::cuboid(post), Vec3::new(x, py, 0.5 * ARCH_HEIGHT - BELT_DEPTH))),
                material: gray,
            });
        }
        out.push(StageElement {
            name: "arch_beam".into(),
            mesh: Arc::new(translated(Mesh::cuboid(Vec3::new(0.06, 2.0 * y + 0.06, 0.06)), Vec3::new(x, 0.0, ARCH_HEIGHT))),
            material: gray,
        });
    }
    out
}

fn nominal_light(spec: &LightSpec) -> Result<Light, SceneError> {
    let target = spec.look_at.unwrap_or(spec.position - Vec3::Z);
    let kind = match spec.kind {
        LightKindSpec::Point => LightKind::Point,
        LightKindSpec::Area => {
            let [w, h] = spec.size.unwrap_or([0.1, 0.1]);
            LightKind::Area { width: w, height: h }
        }
    };
    let profile = match &spec.profile {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| SceneError::Io { path: path.display().to_string(), source: e })?;
            let p = parse_ies(&text).map_err(|e| SceneError::Profile { path: path.display().to_string(), source: e })?;
            Some(Arc::new(p))
        }
        None => None,
    };
    Ok(Light {
        pose: light_pose(spec.position, target),
        kind,
        power: spec.power.nominal(),
        color: spec.color.nominal_rgb(),
        profile,
    })
}

/// Default stage, camera rig and lights at their nominal poses; no parts.
pub fn build_default_stage(cfg: &GenConfig) -> Result<SceneGraph, SceneError> {
    let rig = &cfg.cameras;
    let cameras = rig
        .camera_specs()
        .into_iter()
        .map(|c| {
            let focus_distance = match &rig.focus_distance {
                Some(p) => p.nominal(),
                None => (c.look_at - c.position).length(),
            };
            let cam = CameraModel {
                pose: Pose::look_at(c.position, c.look_at, c.up),
                focal_length_mm: rig.focal_length_mm,
                sensor_mm: rig.sensor_mm,
                resolution: [cfg.render.width, cfg.render.height],
                aperture: rig.aperture.nominal(),
                focus_distance,
                near_clip: rig.near_clip,
            };
            cam.validate().map(|_| cam)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let lights = cfg.lights.iter().map(nominal_light).collect::<Result<Vec<_>, _>>()?;
    for (i, l) in lights.iter().enumerate() {
        l.validate(i)?;
    }
    Ok(SceneGraph {
        stage: build_stage(&cfg.stage),
        cameras,
        lights,
        parts: Vec::new(),
        scene_index: 0,
        environment: cfg.render.environment,
    })
}

/// Rigid jitter: uniform per-axis translation in `[-t, t]` and a rotation by
/// a uniform angle in `[0, max_angle]` about a uniform random axis, applied
/// about the pose's own origin.
pub fn jitter_pose(pose: &Pose, translation: f64, max_angle_rad: f64, s: &mut RngStream) -> Pose {
    let dt = Vec3::new(
        s.uniform_in(-translation, translation),
        s.uniform_in(-translation, translation),
        s.uniform_in(-translation, translation),
    );
    let axis = Vec3::new(s.normal(0.0, 1.0), s.normal(0.0, 1.0), s.normal(0.0, 1.0)).normalized_or(Vec3::Z);
    let angle = s.uniform_in(0.0, max_angle_rad);
    let rotation = if angle == 0.0 { pose.rotation } else { (Quat::from_axis_angle(axis, angle) * pose.rotation).normalized() };
    let translation = if translation == 0.0 { pose.translation } else { pose.translation + dt };
    Pose::new(rotation, translation)
}

/// Redraws camera poses, apertures and focus distances, light poses, powers
/// and colors, and stage material parameters. Mesh geometry is untouched.
/// `streams` is the scene's root stream; each element draws from its own child.
pub fn randomize_environment(scene: &SceneGraph, cfg: &GenConfig, streams: &RngStream) -> SceneGraph {
    let mut out = scene.clone();
    let rig = &cfg.cameras;
    for (i, cam) in out.cameras.iter_mut().enumerate() {
        let mut s = streams.child(format_args!("camera/{i}"));
        cam.pose = jitter_pose(&cam.pose, rig.translation_jitter, rig.rotation_jitter_deg.to_radians(), &mut s);
        cam.aperture = rig.aperture.sample(&mut s);
        if let Some(fd) = &rig.focus_distance {
            cam.focus_distance = fd.sample(&mut s);
        }
    }
    for (i, (light, spec)) in out.lights.iter_mut().zip(&cfg.lights).enumerate() {
        let mut s = streams.child(format_args!("light/{i}"));
        light.pose = jitter_pose(&light.pose, spec.translation_jitter, spec.rotation_jitter_deg.to_radians(), &mut s);
        light.power = spec.power.sample(&mut s);
        light.color = spec.color.sample_rgb(&mut s);
    }
    let st = &cfg.stage;
    let mut s = streams.child("stage");
    for el in out.stage.iter_mut() {
        let color = match el.name.as_str() {
            "belt" => &st.belt_color,
            "floor" => &st.floor_color,
            _ => continue,
        };
        let seed = el.material.noise.map_or(0, |n| n.seed);
        el.material.base_color = color.sample_rgb(&mut s);
        el.material.roughness = st.roughness.sample(&mut s);
        el.material.noise = Some(NoiseModulation::from_spec(&st.noise, seed, &mut s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, CameraSpec, Param};

    fn minimal() -> GenConfig {
        let dir = std::env::temp_dir().join("defectforge-scene-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = dir.join("cube.obj");
        std::fs::write(&mesh, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n").unwrap();
        let text = format!(
            r#"{{"seed": 1, "scenes": 2, "parts": {{"catalog": [{{"mesh": {:?}}}]}}, "defects": [{{"size": [0.01, 0.03]}}]}}"#,
            mesh.display().to_string()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn default_rig_has_nine_cameras_aimed_down() {
        let cfg = minimal();
        let scene = build_default_stage(&cfg).unwrap();
        assert_eq!(scene.cameras.len(), 9);
        assert!(!scene.lights.is_empty());
        for cam in &scene.cameras {
            assert!(cam.forward().z < 0.0);
            // the rig target projects to the image center
            let (u, v, _) = cam.project(Vec3::ZERO).unwrap();
            assert!((u - 162.0).abs() < 1e-9 && (v - 128.0).abs() < 1e-9);
        }
        // stage plane: belt top at z = 0
        let belt = &scene.stage[0];
        let top = belt.mesh.positions.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        assert!(top.abs() < 1e-12);
    }

    #[test]
    fn three_camera_rig() {
        let mut cfg = minimal();
        cfg.cameras.count = 3;
        assert_eq!(build_default_stage(&cfg).unwrap().cameras.len(), 3);
        cfg.cameras.poses = Some(vec![CameraSpec { position: Vec3::new(0.0, 0.0, 1.0), look_at: Vec3::ZERO, up: Vec3::X }]);
        assert_eq!(build_default_stage(&cfg).unwrap().cameras.len(), 1);
    }

    fn zero_ranges(cfg: &mut GenConfig) {
        let c = &mut cfg.cameras;
        c.translation_jitter = 0.0;
        c.rotation_jitter_deg = 0.0;
        c.aperture = Param::Uniform([5.6, 5.6]);
        for l in &mut cfg.lights {
            l.translation_jitter = 0.0;
            l.rotation_jitter_deg = 0.0;
            l.power = Param::Fixed(10.0);
            l.color = [Param::Fixed(1.0), Param::Fixed(0.9), Param::Fixed(0.8)];
        }
        let st = &mut cfg.stage;
        st.belt_color = [Param::Fixed(0.1); 3];
        st.floor_color = [Param::Fixed(0.4); 3];
        st.roughness = Param::Fixed(0.7);
        st.noise.frequency = Param::Fixed(8.0);
        st.noise.amplitude = Param::Fixed(0.1);
        st.noise.offset = Param::Fixed(0.0);
    }

    #[test]
    fn zero_width_ranges_are_identity() {
        let mut cfg = minimal();
        zero_ranges(&mut cfg);
        let base = build_default_stage(&cfg).unwrap();
        let r = randomize_environment(&base, &cfg, &RngStream::new(3, 0, "env"));
        assert_eq!(r, base);
    }

    #[test]
    fn randomization_is_deterministic() {
        let cfg = minimal();
        let base = build_default_stage(&cfg).unwrap();
        let a = randomize_environment(&base, &cfg, &RngStream::new(3, 0, "env"));
        let b = randomize_environment(&base, &cfg, &RngStream::new(3, 0, "env"));
        assert_eq!(a, b);
        let c = randomize_environment(&base, &cfg, &RngStream::new(3, 1, "env"));
        assert_ne!(a, c);
    }

    #[test]
    fn camera_translation_bound_over_seeds() {
        let mut cfg = minimal();
        cfg.cameras.translation_jitter = 0.05;
        let base = build_default_stage(&cfg).unwrap();
        for seed in 0..100 {
            let r = randomize_environment(&base, &cfg, &RngStream::new(seed, 0, "env"));
            for (a, b) in r.cameras.iter().zip(&base.cameras) {
                let d = a.pose.translation - b.pose.translation;
                assert!(d.x.abs().max(d.y.abs()).max(d.z.abs()) <= 0.05);
                assert!(cfg.cameras.aperture.contains(a.aperture));
                // rotation within the jitter cone
                let cos = a.forward().dot(b.forward()).min(1.0);
                assert!(cos.acos() <= cfg.cameras.rotation_jitter_deg.to_radians() + 1e-9);
            }
            for (l, spec) in r.lights.iter().zip(&cfg.lights) {
                assert!(spec.power.contains(l.power));
                for k in 0..3 {
                    assert!(spec.color[k].contains(l.color[k]));
                }
            }
            assert_eq!(r.stage.len(), base.stage.len());
            for (a, b) in r.stage.iter().zip(&base.stage) {
                assert!(Arc::ptr_eq(&a.mesh, &b.mesh));
            }
        }
    }

    #[test]
    fn thin_lens_rays_converge_on_focus_plane() {
        let cam = CameraModel {
            pose: Pose::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO, Vec3::X),
            focal_length_mm: 16.0,
            sensor_mm: [12.44, 9.83],
            resolution: [64, 48],
            aperture: 2.0,
            focus_distance: 1.0,
            near_clip: 0.05,
        };
        let (po, pd) = cam.pinhole_ray(10.3, 20.7);
        let target = po + pd * (1.0 / pd.dot(cam.forward()));
        for (lx, ly) in [(0.1, 0.9), (0.5, 0.5), (0.95, 0.2)] {
            let (o, d) = cam.lens_ray(10.3, 20.7, lx, ly);
            let depth = (target - o).dot(cam.forward()) / d.dot(cam.forward());
            assert!((o + d * depth - target).length() < 1e-9);
        }
        assert!((cam.lens_radius() - 0.004).abs() < 1e-15);
    }

    #[test]
    fn camera_validation() {
        let mut cam = build_default_stage(&minimal()).unwrap().cameras[0];
        cam.focus_distance = cam.near_clip;
        assert!(cam.validate().is_err());
        cam.focus_distance = 1.0;
        cam.resolution = [8, 8];
        assert!(cam.validate().is_err());
    }
}
