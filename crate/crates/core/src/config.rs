//! Generation configuration: schema, defaults, validation and overrides.
//!
//! The document is a single JSON object. Every randomized scalar is a [`Param`]:
//! either a plain number (fixed) or a two-element array `[min, max]` drawn
//! uniformly. Unknown keys are rejected at every level.

use crate::math::Vec3;
use crate::stream::RngStream;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Environment variable that overrides the `seed` key.
pub const SEED_ENV_VAR: &str = "DEFECTFORGE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("{path}: min > max ({min} > {max})")]
    InvertedRange { path: String, min: f64, max: f64 },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: file not found: {file}")]
    MissingFile { path: String, file: PathBuf },
    #[error("scene index {index} out of range (scene count {count})")]
    SceneOutOfRange { index: u64, count: u32 },
    #[error("bad override `{0}`: expected key=value")]
    BadOverride(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), message: message.into() }
    }

    fn from_json(e: serde_json::Error) -> Self {
        if e.is_syntax() || e.is_eof() {
            ConfigError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
        } else {
            ConfigError::Schema(e.to_string())
        }
    }
}

/// A scalar that is either fixed or drawn uniformly from `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Uniform([f64; 2]),
}

impl Param {
    pub fn min(&self) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform([lo, _]) => lo,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform([_, hi]) => hi,
        }
    }

    /// Value used for the un-randomized default scene.
    pub fn nominal(&self) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Uniform([lo, hi]) if lo == hi => lo,
            Param::Uniform([lo, hi]) => 0.5 * (lo + hi),
        }
    }

    pub fn sample(&self, s: &mut RngStream) -> f64 {
        s.uniform_in(self.min(), self.max())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min() && v <= self.max()
    }

    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let (lo, hi) = (self.min(), self.max());
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ConfigError::invalid(path, "non-finite value"));
        }
        if lo > hi {
            return Err(ConfigError::InvertedRange { path: path.to_string(), min: lo, max: hi });
        }
        Ok(())
    }

    fn validate_within(&self, path: &str, lo: f64, hi: f64) -> Result<(), ConfigError> {
        self.validate(path)?;
        if self.min() < lo || self.max() > hi {
            return Err(ConfigError::invalid(path, format!("must lie within [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Integer count, fixed or uniform over `[min, max]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CountParam {
    Fixed(u32),
    Uniform([u32; 2]),
}

impl CountParam {
    pub fn min(&self) -> u32 {
        match *self {
            CountParam::Fixed(v) => v,
            CountParam::Uniform([lo, _]) => lo,
        }
    }

    pub fn max(&self) -> u32 {
        match *self {
            CountParam::Fixed(v) => v,
            CountParam::Uniform([_, hi]) => hi,
        }
    }

    pub fn sample(&self, s: &mut RngStream) -> u32 {
        s.int_in(self.min() as i64, self.max() as i64) as u32
    }

    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if self.min() > self.max() {
            return Err(ConfigError::InvertedRange {
                path: path.to_string(),
                min: self.min() as f64,
                max: self.max() as f64,
            });
        }
        Ok(())
    }
}

pub type ColorParam = [Param; 3];

fn sample_color(c: &ColorParam, s: &mut RngStream) -> Vec3 {
    Vec3::new(c[0].sample(s), c[1].sample(s), c[2].sample(s))
}

fn nominal_color(c: &ColorParam) -> Vec3 {
    Vec3::new(c[0].nominal(), c[1].nominal(), c[2].nominal())
}

fn validate_color(c: &ColorParam, path: &str) -> Result<(), ConfigError> {
    for (i, p) in c.iter().enumerate() {
        p.validate_within(&format!("{path}[{i}]"), 0.0, 1.0)?;
    }
    Ok(())
}

pub trait ColorParamExt {
    fn sample_rgb(&self, s: &mut RngStream) -> Vec3;
    fn nominal_rgb(&self) -> Vec3;
}

impl ColorParamExt for ColorParam {
    fn sample_rgb(&self, s: &mut RngStream) -> Vec3 {
        sample_color(self, s)
    }
    fn nominal_rgb(&self) -> Vec3 {
        nominal_color(self)
    }
}

// ---------------------------------------------------------------------------
// cameras

/// Explicit camera placement in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: Vec3,
    pub look_at: Vec3,
    /// World direction that should appear as "up" in the image.
    #[serde(default = "default_camera_up")]
    pub up: Vec3,
}

fn default_camera_up() -> Vec3 {
    Vec3::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRigSpec {
    /// Number of cameras on the arch; ignored when `poses` is given.
    pub count: u32,
    /// Distance from each camera to `target`, meters.
    pub arch_radius: f64,
    /// Angular span of the arch across the conveyor, degrees.
    pub arch_span_deg: f64,
    pub target: Vec3,
    pub focal_length_mm: f64,
    pub sensor_mm: [f64; 2],
    /// f-number.
    pub aperture: Param,
    /// Working distance (focus plane), meters. Defaults to the distance to `target`.
    pub focus_distance: Option<Param>,
    pub near_clip: f64,
    /// Per-axis translation jitter half-width, meters.
    pub translation_jitter: f64,
    /// Maximum rotation jitter angle, degrees.
    pub rotation_jitter_deg: f64,
    pub poses: Option<Vec<CameraSpec>>,
}

impl Default for CameraRigSpec {
    fn default() -> Self {
        Self {
            count: 9,
            arch_radius: 1.2,
            arch_span_deg: 100.0,
            target: Vec3::ZERO,
            focal_length_mm: 16.0,
            sensor_mm: [12.44, 9.83],
            aperture: Param::Uniform([4.0, 11.0]),
            focus_distance: None,
            near_clip: 0.05,
            translation_jitter: 0.03,
            rotation_jitter_deg: 2.0,
            poses: None,
        }
    }
}

impl CameraRigSpec {
    /// Resolves the rig into explicit camera placements.
    ///
    /// Arch cameras sit in the `x = target.x` plane on a circle around the
    /// conveyor axis (world x), evenly spread over `arch_span_deg` and all
    /// aimed at `target`.
    pub fn camera_specs(&self) -> Vec<CameraSpec> {
        if let Some(poses) = &self.poses {
            return poses.clone();
        }
        let n = self.count.max(1) as usize;
        let span = self.arch_span_deg.to_radians();
        (0..n)
            .map(|i| {
                let theta = if n == 1 { 0.0 } else { -0.5 * span + span * i as f64 / (n - 1) as f64 };
                let offset = Vec3::new(0.0, theta.sin(), theta.cos()) * self.arch_radius;
                CameraSpec { position: self.target + offset, look_at: self.target, up: Vec3::X }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// lights

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightKindSpec {
    Point,
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub kind: LightKindSpec,
    /// Area light width and height, meters.
    #[serde(default)]
    pub size: Option<[f64; 2]>,
    pub position: Vec3,
    /// Aim point; defaults to straight below the light.
    #[serde(default)]
    pub look_at: Option<Vec3>,
    /// Emitted power, watts.
    pub power: Param,
    #[serde(default = "default_light_color")]
    pub color: ColorParam,
    /// Optional LM-63 photometric profile (point lights only).
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub translation_jitter: f64,
    #[serde(default)]
    pub rotation_jitter_deg: f64,
}

fn default_light_color() -> ColorParam {
    [Param::Uniform([0.9, 1.0]), Param::Uniform([0.9, 1.0]), Param::Uniform([0.85, 1.0])]
}

pub fn default_lights() -> Vec<LightSpec> {
    [-0.45, 0.45]
        .into_iter()
        .map(|x| LightSpec {
            kind: LightKindSpec::Area,
            size: Some([0.5, 0.3]),
            position: Vec3::new(x, 0.0, 1.1),
            look_at: Some(Vec3::new(0.5 * x, 0.0, 0.0)),
            power: Param::Uniform([8.0, 16.0]),
            color: default_light_color(),
            profile: None,
            translation_jitter: 0.1,
            rotation_jitter_deg: 10.0,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// stage, parts and materials

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub frequency: Param,
    pub amplitude: Param,
    pub octaves: u32,
    /// Domain offset, re-drawn per scene to re-seed the pattern.
    pub offset: Param,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            frequency: Param::Uniform([4.0, 12.0]),
            amplitude: Param::Uniform([0.05, 0.3]),
            octaves: 4,
            offset: Param::Uniform([0.0, 1000.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSpec {
    /// Half-extent of the placement area around the origin (x, y), meters.
    pub extent: [f64; 2],
    /// Full size of the floor plane (x, y), meters.
    pub floor_size: [f64; 2],
    /// Width of the conveyor belt strip along world x, meters.
    pub belt_width: f64,
    /// Build arch posts and beam geometry.
    pub arch: bool,
    pub belt_color: ColorParam,
    pub floor_color: ColorParam,
    pub roughness: Param,
    pub noise: NoiseSpec,
}

impl Default for StageSpec {
    fn default() -> Self {
        Self {
            extent: [0.45, 0.35],
            floor_size: [4.0, 3.0],
            belt_width: 0.9,
            arch: true,
            belt_color: [Param::Uniform([0.05, 0.2]); 3],
            floor_color: [Param::Uniform([0.3, 0.5]); 3],
            roughness: Param::Uniform([0.5, 0.9]),
            noise: NoiseSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSpec {
    pub base_color: ColorParam,
    pub roughness: Param,
    pub metallic: Param,
    /// Dielectric specular level; 0.5 corresponds to F0 = 0.04.
    pub specular: Param,
    pub noise: NoiseSpec,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self {
            base_color: [Param::Uniform([0.5, 0.85]); 3],
            roughness: Param::Uniform([0.25, 0.6]),
            metallic: Param::Uniform([0.0, 0.6]),
            specular: Param::Fixed(0.5),
            noise: NoiseSpec { amplitude: Param::Uniform([0.0, 0.1]), ..NoiseSpec::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartEntry {
    pub mesh: PathBuf,
    /// Optional JSON pose catalog overriding computed equilibrium poses.
    #[serde(default)]
    pub poses: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartsSpec {
    pub catalog: Vec<PartEntry>,
    #[serde(default = "default_per_scene")]
    pub per_scene: CountParam,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub material: MaterialSpec,
}

fn default_per_scene() -> CountParam {
    CountParam::Uniform([1, 2])
}

fn default_max_attempts() -> u32 {
    50
}

// ---------------------------------------------------------------------------
// defects

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Deformation,
    Encrustation,
    Hole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    /// Thresholded fBm noise under a radial falloff.
    Blob,
    /// Filled disk of diameter equal to the texture width.
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefectTextureSpec {
    pub resolution: u32,
    pub shape: MaskShape,
    pub octaves: u32,
    pub frequency: f64,
    /// Blob threshold on the falloff-weighted noise in [0,1].
    pub threshold: f64,
    /// Signed height amplitude in texel units.
    pub height_amplitude: Param,
    pub roughness: Param,
    /// Fraction of the support radius occupied by encrustation.
    pub encrustation_extent: Param,
    /// Fraction of the support radius occupied by the hole core.
    pub hole_extent: Param,
    pub encrustation: MaterialSpec,
}

impl Default for DefectTextureSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            shape: MaskShape::Blob,
            octaves: 4,
            frequency: 3.0,
            threshold: 0.35,
            height_amplitude: Param::Uniform([1.0, 3.0]),
            roughness: Param::Uniform([0.6, 0.95]),
            encrustation_extent: Param::Uniform([0.6, 0.85]),
            hole_extent: Param::Uniform([0.15, 0.35]),
            encrustation: MaterialSpec {
                base_color: [Param::Uniform([0.02, 0.15]), Param::Uniform([0.02, 0.1]), Param::Uniform([0.02, 0.08])],
                roughness: Param::Uniform([0.7, 1.0]),
                metallic: Param::Fixed(0.0),
                specular: Param::Fixed(0.3),
                noise: NoiseSpec { amplitude: Param::Uniform([0.1, 0.4]), ..NoiseSpec::default() },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectKindSpec {
    #[serde(default = "default_class")]
    pub class: String,
    /// Texture kinds combined into each defect of this class.
    #[serde(default = "default_textures")]
    pub textures: Vec<DefectKind>,
    /// Characteristic diameter, meters.
    pub size: Param,
    #[serde(default = "default_per_part")]
    pub per_part: CountParam,
    #[serde(default)]
    pub texture: DefectTextureSpec,
}

fn default_class() -> String {
    "break".to_string()
}

fn default_textures() -> Vec<DefectKind> {
    vec![DefectKind::Deformation, DefectKind::Encrustation, DefectKind::Hole]
}

fn default_per_part() -> CountParam {
    CountParam::Uniform([1, 3])
}

// ---------------------------------------------------------------------------
// render, visibility, output

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    pub spp: u32,
    pub max_bounces: u32,
    pub tile_size: u32,
    pub radiance_clamp: f64,
    pub exposure: f64,
    /// Uniform background radiance (linear RGB).
    pub environment: Vec3,
    /// Also write a float PFM next to every PNG.
    pub write_pfm: bool,
    /// Sampling seed; set by the pipeline.
    #[serde(skip)]
    pub seed: u64,
    /// Camera index, keys the sampling stream together with the seed and scene.
    #[serde(skip)]
    pub camera: u32,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 324,
            height: 256,
            spp: 64,
            max_bounces: 4,
            tile_size: 16,
            radiance_clamp: 50.0,
            exposure: 1.0,
            environment: Vec3::splat(0.03),
            write_pfm: false,
            seed: 0,
            camera: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityThresholds {
    /// Luminance above which a defect-pass texel counts as visible.
    pub binarize_threshold: f64,
    /// Minimum mask area (pixels, inclusive). When absent, 50 px at 324x256
    /// scaled by the render resolution area.
    pub min_area: Option<u32>,
}

impl Default for VisibilityThresholds {
    fn default() -> Self {
        Self { binarize_threshold: 0.5, min_area: None }
    }
}

impl VisibilityThresholds {
    pub const REFERENCE_AREA: u32 = 50;
    pub const REFERENCE_RESOLUTION: (u32, u32) = (324, 256);

    pub fn min_area_for(&self, width: u32, height: u32) -> u32 {
        self.min_area.unwrap_or_else(|| {
            let (rw, rh) = Self::REFERENCE_RESOLUTION;
            let scaled = Self::REFERENCE_AREA as f64 * (width as f64 * height as f64) / (rw as f64 * rh as f64);
            (scaled.round() as u32).max(1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        // 8871 / 9413 train images
        Self { train: 8871.0 / 9413.0, test: 542.0 / 9413.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub splits: SplitFractions,
    /// Export views without visible defects too.
    pub allow_healthy: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), splits: SplitFractions::default(), allow_healthy: false }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(rename = "seed")]
    pub master_seed: u64,
    #[serde(rename = "scenes")]
    pub scene_count: u32,
    #[serde(default)]
    pub cameras: CameraRigSpec,
    #[serde(default = "default_lights")]
    pub lights: Vec<LightSpec>,
    #[serde(default)]
    pub stage: StageSpec,
    pub parts: PartsSpec,
    pub defects: Vec<DefectKindSpec>,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub visibility: VisibilityThresholds,
    #[serde(default)]
    pub output: OutputSpec,
}

impl GenConfig {
    /// Deterministic stream for `(seed, scene_index, purpose)`.
    pub fn derive_stream(&self, scene_index: u64, purpose: &str) -> Result<RngStream, ConfigError> {
        if scene_index >= self.scene_count as u64 {
            return Err(ConfigError::SceneOutOfRange { index: scene_index, count: self.scene_count });
        }
        Ok(RngStream::new(self.master_seed, scene_index, purpose))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks. `base` is used to resolve relative file paths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scene_count < 1 {
            return Err(ConfigError::invalid("scenes", "must be >= 1"));
        }
        let cam = &self.cameras;
        if cam.poses.as_ref().map_or(cam.count == 0, |p| p.is_empty()) {
            return Err(ConfigError::invalid("cameras", "at least one camera is required"));
        }
        positive("cameras.arch_radius", cam.arch_radius)?;
        positive("cameras.focal_length_mm", cam.focal_length_mm)?;
        positive("cameras.sensor_mm[0]", cam.sensor_mm[0])?;
        positive("cameras.sensor_mm[1]", cam.sensor_mm[1])?;
        positive("cameras.near_clip", cam.near_clip)?;
        cam.aperture.validate("cameras.aperture")?;
        if cam.aperture.min() <= 0.0 {
            return Err(ConfigError::invalid("cameras.aperture", "f-number must be > 0"));
        }
        if let Some(fd) = &cam.focus_distance {
            fd.validate("cameras.focus_distance")?;
            if fd.min() <= cam.near_clip {
                return Err(ConfigError::invalid("cameras.focus_distance", "must exceed near_clip"));
            }
        }
        non_negative("cameras.translation_jitter", cam.translation_jitter)?;
        non_negative("cameras.rotation_jitter_deg", cam.rotation_jitter_deg)?;

        for (i, l) in self.lights.iter().enumerate() {
            let p = format!("lights[{i}]");
            l.power.validate(&format!("{p}.power"))?;
            if l.power.min() < 0.0 {
                return Err(ConfigError::invalid(format!("{p}.power"), "must be >= 0"));
            }
            validate_color(&l.color, &format!("{p}.color"))?;
            if l.kind == LightKindSpec::Area {
                let size = l.size.ok_or_else(|| ConfigError::invalid(format!("{p}.size"), "area lights need a size"))?;
                positive(&format!("{p}.size[0]"), size[0])?;
                positive(&format!("{p}.size[1]"), size[1])?;
            }
            if let Some(profile) = &l.profile {
                if l.kind != LightKindSpec::Point {
                    return Err(ConfigError::invalid(format!("{p}.profile"), "profiles apply to point lights"));
                }
                require_file(&format!("{p}.profile"), profile)?;
            }
            non_negative(&format!("{p}.translation_jitter"), l.translation_jitter)?;
            non_negative(&format!("{p}.rotation_jitter_deg"), l.rotation_jitter_deg)?;
        }

        let st = &self.stage;
        positive("stage.extent[0]", st.extent[0])?;
        positive("stage.extent[1]", st.extent[1])?;
        positive("stage.floor_size[0]", st.floor_size[0])?;
        positive("stage.floor_size[1]", st.floor_size[1])?;
        validate_color(&st.belt_color, "stage.belt_color")?;
        validate_color(&st.floor_color, "stage.floor_color")?;
        st.roughness.validate_within("stage.roughness", 0.0, 1.0)?;
        validate_noise(&st.noise, "stage.noise")?;

        if self.parts.catalog.is_empty() {
            return Err(ConfigError::invalid("parts.catalog", "at least one part is required"));
        }
        for (i, e) in self.parts.catalog.iter().enumerate() {
            require_file(&format!("parts.catalog[{i}].mesh"), &e.mesh)?;
            if let Some(p) = &e.poses {
                require_file(&format!("parts.catalog[{i}].poses"), p)?;
            }
        }
        self.parts.per_scene.validate("parts.per_scene")?;
        if self.parts.max_attempts < 1 {
            return Err(ConfigError::invalid("parts.max_attempts", "must be >= 1"));
        }
        validate_material(&self.parts.material, "parts.material")?;

        if self.defects.is_empty() {
            return Err(ConfigError::invalid("defects", "at least one defect kind is required"));
        }
        for (i, d) in self.defects.iter().enumerate() {
            let p = format!("defects[{i}]");
            d.size.validate(&format!("{p}.size"))?;
            if d.size.min() <= 0.0 {
                return Err(ConfigError::invalid(format!("{p}.size"), "must be > 0"));
            }
            if d.textures.is_empty() {
                return Err(ConfigError::invalid(format!("{p}.textures"), "at least one texture kind"));
            }
            d.per_part.validate(&format!("{p}.per_part"))?;
            let t = &d.texture;
            if t.resolution < 8 {
                return Err(ConfigError::invalid(format!("{p}.texture.resolution"), "must be >= 8"));
            }
            if t.octaves < 1 {
                return Err(ConfigError::invalid(format!("{p}.texture.octaves"), "must be >= 1"));
            }
            positive(&format!("{p}.texture.frequency"), t.frequency)?;
            if !(0.0..1.0).contains(&t.threshold) {
                return Err(ConfigError::invalid(format!("{p}.texture.threshold"), "must lie in [0, 1)"));
            }
            t.height_amplitude.validate(&format!("{p}.texture.height_amplitude"))?;
            t.roughness.validate_within(&format!("{p}.texture.roughness"), 0.0, 1.0)?;
            t.encrustation_extent.validate_within(&format!("{p}.texture.encrustation_extent"), 0.0, 1.0)?;
            t.hole_extent.validate_within(&format!("{p}.texture.hole_extent"), 0.0, 1.0)?;
            validate_material(&t.encrustation, &format!("{p}.texture.encrustation"))?;
        }

        let r = &self.render;
        if r.width < 16 || r.height < 16 {
            return Err(ConfigError::invalid("render", "resolution must be at least 16x16"));
        }
        for (k, v) in [("spp", r.spp), ("max_bounces", r.max_bounces), ("tile_size", r.tile_size)] {
            if v < 1 {
                return Err(ConfigError::invalid(format!("render.{k}"), "must be >= 1"));
            }
        }
        positive("render.radiance_clamp", r.radiance_clamp)?;
        positive("render.exposure", r.exposure)?;
        if !r.environment.is_finite() || r.environment.min(Vec3::ZERO) != Vec3::ZERO {
            return Err(ConfigError::invalid("render.environment", "must be finite and >= 0"));
        }

        positive("visibility.binarize_threshold", self.visibility.binarize_threshold)?;
        if self.visibility.min_area == Some(0) {
            return Err(ConfigError::invalid("visibility.min_area", "must be >= 1"));
        }

        let s = self.output.splits;
        for (k, v) in [("train", s.train), ("test", s.test)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(format!("output.splits.{k}"), "must lie in [0, 1]"));
            }
        }
        if (s.train + s.test - 1.0).abs() > 1e-9 {
            return Err(ConfigError::invalid("output.splits", "fractions must sum to 1"));
        }
        Ok(())
    }

    /// Rewrites relative file paths against `base`.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for e in &mut self.parts.catalog {
            fix(&mut e.mesh);
            if let Some(p) = &mut e.poses {
                fix(p);
            }
        }
        for l in &mut self.lights {
            if let Some(p) = &mut l.profile {
                fix(p);
            }
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, "must be a finite value > 0"))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, "must be a finite value >= 0"))
    }
}

fn require_file(path: &str, file: &Path) -> Result<(), ConfigError> {
    if file.is_file() {
        Ok(())
    } else {
        Err(ConfigError::MissingFile { path: path.to_string(), file: file.to_path_buf() })
    }
}

fn validate_noise(n: &NoiseSpec, path: &str) -> Result<(), ConfigError> {
    n.frequency.validate(&format!("{path}.frequency"))?;
    if n.frequency.min() <= 0.0 {
        return Err(ConfigError::invalid(format!("{path}.frequency"), "must be > 0"));
    }
    n.amplitude.validate_within(&format!("{path}.amplitude"), 0.0, 1.0)?;
    n.offset.validate(&format!("{path}.offset"))?;
    if n.octaves < 1 {
        return Err(ConfigError::invalid(format!("{path}.octaves"), "must be >= 1"));
    }
    Ok(())
}

fn validate_material(m: &MaterialSpec, path: &str) -> Result<(), ConfigError> {
    validate_color(&m.base_color, &format!("{path}.base_color"))?;
    m.roughness.validate_within(&format!("{path}.roughness"), 0.0, 1.0)?;
    m.metallic.validate_within(&format!("{path}.metallic"), 0.0, 1.0)?;
    m.specular.validate_within(&format!("{path}.specular"), 0.0, 1.0)?;
    validate_noise(&m.noise, &format!("{path}.noise"))
}

/// Parses and validates a configuration, resolving relative paths against the
/// current directory.
pub fn parse_config(text: &str) -> Result<GenConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

/// Parses and validates a configuration, resolving relative paths against `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<GenConfig, ConfigError> {
    let mut cfg: GenConfig = serde_json::from_str(text).map_err(ConfigError::from_json)?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file, applying the seed environment override (if `env_seed`
/// is given) and then `key=value` overrides in order.
pub fn load_config(path: &Path, env_seed: Option<&str>, overrides: &[String]) -> Result<GenConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if env_seed.is_none() && overrides.is_empty() {
        return parse_config_in(&text, base);
    }
    let mut doc: Value = serde_json::from_str(&text).map_err(ConfigError::from_json)?;
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| ConfigError::invalid(SEED_ENV_VAR, format!("not an unsigned integer: {seed:?}")))?;
        set_path(&mut doc, "seed", Value::from(seed))?;
    }
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, key.trim(), value)?;
    }
    let mut cfg: GenConfig = serde_json::from_value(doc).map_err(ConfigError::from_json)?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

/// Sets a dotted path (`render.spp`, `lights.0.power`) inside a JSON document,
/// creating intermediate objects as needed.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(key.to_string()));
    }
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| ConfigError::BadOverride(key.to_string()))?;
                let slot = items.get_mut(idx).ok_or_else(|| ConfigError::invalid(key, "array index out of range"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(ConfigError::invalid(key, "cannot descend into a scalar")),
        };
    }
    unreachable!("loop returns on the last segment")
}
