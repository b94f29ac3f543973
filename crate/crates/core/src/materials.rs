//! Procedural PBR materials and defect texture sets.
//!
//! A defect is a stack of texture sets sharing one support mask:
//! - deformation: normal, height, roughness and occlusion maps (the occlusion
//!   map selects the deformed zone),
//! - encrustation: a mask plus the material applied inside it,
//! - hole: a mask of removed material.
//!
//! At render time the maps are projected as a decal centered on the defect's
//! surface anchor, with a world footprint of `scale` meters across.

use crate::config::{ColorParamExt, DefectKind, DefectKindSpec, DefectTextureSpec, MaskShape, MaterialSpec, NoiseSpec};
use crate::geometry::{Mesh, PartInstance};
use crate::math::Vec3;
use crate::noise::Fbm;
use crate::stream::RngStream;
use std::sync::Arc;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaterialError {
    #[error("texture dimensions must be at least 8x8 (got {0}x{1})")]
    Dimensions(u32, u32),
    #[error("noise octaves must be >= 1")]
    Octaves,
    #[error("noise frequency must be > 0")]
    Frequency,
    #[error("defect mask stayed empty after {0} attempts")]
    EmptyMask(u32),
    #[error("part mesh has no texture coordinates")]
    MissingUvs,
    #[error("part mesh has no surface area")]
    NoSurface,
}

/// Maximum regeneration attempts for an empty mask.
pub const MASK_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Row-major, `channels` floats per texel.
    pub values: Vec<f32>,
}

impl TextureMap {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        Self { width, height, channels, values: vec![0.0; (width * height * channels) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[((y * self.width + x) * self.channels) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        let i = ((y * self.width + x) * self.channels) as usize;
        self.values[i] = v;
    }

    pub fn get3(&self, x: u32, y: u32) -> Vec3 {
        let i = ((y * self.width + x) * self.channels) as usize;
        Vec3::new(self.values[i] as f64, self.values[i + 1] as f64, self.values[i + 2] as f64)
    }

    pub fn set3(&mut self, x: u32, y: u32, v: Vec3) {
        let i = ((y * self.width + x) * self.channels) as usize;
        self.values[i] = v.x as f32;
        self.values[i + 1] = v.y as f32;
        self.values[i + 2] = v.z as f32;
    }

    /// Nearest texel for texture coordinates in [0, 1)².
    #[inline]
    pub fn texel_at(&self, s: f64, t: f64) -> (u32, u32) {
        let x = ((s * self.width as f64) as i64).clamp(0, self.width as i64 - 1) as u32;
        let y = ((t * self.height as f64) as i64).clamp(0, self.height as i64 - 1) as u32;
        (x, y)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().step_by(self.channels as usize).filter(|&&v| v != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Procedural albedo modulation: `albedo * (1 + amplitude * fbm(frequency * p + offset))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModulation {
    pub seed: u64,
    pub frequency: f64,
    pub amplitude: f64,
    pub octaves: u32,
    pub offset: Vec3,
}

impl NoiseModulation {
    pub fn factor(&self, p: Vec3) -> f64 {
        if self.amplitude == 0.0 {
            return 1.0;
        }
        let q = p * self.frequency + self.offset;
        let n = Fbm::new(self.seed, self.octaves).sample_3d(q.x, q.y, q.z);
        (1.0 + self.amplitude * n).max(0.0)
    }

    pub(crate) fn from_spec(spec: &NoiseSpec, seed: u64, s: &mut RngStream) -> Self {
        NoiseModulation {
            seed,
            frequency: spec.frequency.sample(s),
            amplitude: spec.amplitude.sample(s),
            octaves: spec.octaves,
            offset: Vec3::new(spec.offset.sample(s), spec.offset.sample(s), spec.offset.sample(s)),
        }
    }

    pub(crate) fn nominal(spec: &NoiseSpec, seed: u64) -> Self {
        NoiseModulation {
            seed,
            frequency: spec.frequency.nominal(),
            amplitude: spec.amplitude.nominal(),
            octaves: spec.octaves,
            offset: Vec3::splat(spec.offset.nominal()),
        }
    }
}

/// Metallic-roughness material: Lambertian base plus a GGX specular lobe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbrMaterial {
    pub base_color: Vec3,
    pub roughness: f64,
    pub metallic: f64,
    /// Dielectric specular level: F0 = 0.08 * specular.
    pub specular: f64,
    pub noise: Option<NoiseModulation>,
}

impl Default for PbrMaterial {
    fn default() -> Self {
        Self { base_color: Vec3::splat(0.7), roughness: 0.5, metallic: 0.0, specular: 0.5, noise: None }
    }
}

impl PbrMaterial {
    /// Pure Lambertian reflector.
    pub fn diffuse(albedo: Vec3) -> Self {
        Self { base_color: albedo, roughness: 1.0, metallic: 0.0, specular: 0.0, noise: None }
    }

    pub fn nominal(spec: &MaterialSpec, seed: u64) -> Self {
        Self {
            base_color: spec.base_color.nominal_rgb(),
            roughness: spec.roughness.nominal(),
            metallic: spec.metallic.nominal(),
            specular: spec.specular.nominal(),
            noise: Some(NoiseModulation::nominal(&spec.noise, seed)),
        }
    }

    pub fn sample(spec: &MaterialSpec, seed: u64, s: &mut RngStream) -> Self {
        Self {
            base_color: spec.base_color.sample_rgb(s),
            roughness: spec.roughness.sample(s),
            metallic: spec.metallic.sample(s),
            specular: spec.specular.sample(s),
            noise: Some(NoiseModulation::from_spec(&spec.noise, seed, s)),
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.roughness)
            && unit(self.metallic)
            && unit(self.specular)
            && unit(self.base_color.x)
            && unit(self.base_color.y)
            && unit(self.base_color.z)
    }
}

/// Redraws a part's material from configured ranges; the noise pattern is
/// re-seeded through its domain offset.
pub fn randomize_part_material(instance: &PartInstance, stream: &mut RngStream, spec: &MaterialSpec) -> PartInstance {
    let seed = instance.material.noise.map_or(0x5eed, |n| n.seed);
    let mut out = instance.clone();
    out.material = PbrMaterial::sample(spec, seed, stream);
    out
}

// ---------------------------------------------------------------------------
// procedural textures

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRange {
    /// Values in [-amplitude, amplitude] (height maps).
    Signed,
    /// Values in [0, amplitude] with amplitude <= 1 (scalar maps).
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTextureParams {
    pub width: u32,
    pub height: u32,
    pub octaves: u32,
    /// Base lattice cells across the texture width.
    pub frequency: f64,
    pub amplitude: f64,
    pub range: NoiseRange,
}

/// Fractal value-noise map, deterministic in the stream id.
pub fn gen_procedural_texture(params: &NoiseTextureParams, stream: &mut RngStream) -> Result<TextureMap, MaterialError> {
    if params.width < 8 || params.height < 8 {
        return Err(MaterialError::Dimensions(params.width, params.height));
    }
    if params.octaves < 1 {
        return Err(MaterialError::Octaves);
    }
    if !(params.frequency > 0.0) {
        return Err(MaterialError::Frequency);
    }
    let fbm = Fbm::new(stream.next_u64_value(), params.octaves);
    let mut map = TextureMap::new(params.width, params.height, 1);
    let scale = params.frequency / params.width as f64;
    for y in 0..params.height {
        for x in 0..params.width {
            let n = fbm.sample_2d((x as f64 + 0.5) * scale, (y as f64 + 0.5) * scale);
            let v = match params.range {
                NoiseRange::Signed => params.amplitude * n,
                NoiseRange::Unit => params.amplitude * 0.5 * (n + 1.0),
            };
            map.set(x, y, v as f32);
        }
    }
    Ok(map)
}

impl RngStream {
    fn next_u64_value(&mut self) -> u64 {
        rand::RngCore::next_u64(self)
    }
}

/// Normal map of a height field: `normalize(-dh/dx, -dh/dy, 1)` with central
/// differences in texel units (one-sided at the borders).
pub fn normals_from_height(height: &TextureMap) -> TextureMap {
    let (w, h) = (height.width, height.height);
    let mut out = TextureMap::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let dx = (height.get(x1, y) as f64 - height.get(x0, y) as f64) / (x1 - x0) as f64;
            let dy = (height.get(x, y1) as f64 - height.get(x, y0) as f64) / (y1 - y0) as f64;
            out.set3(x, y, Vec3::new(-dx, -dy, 1.0).normalized());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// defect texture sets

#[derive(Debug, Clone, PartialEq)]
pub enum DefectTextureSet {
    Deformation {
        normal: Arc<TextureMap>,
        height: Arc<TextureMap>,
        roughness: Arc<TextureMap>,
        occlusion: Arc<TextureMap>,
    },
    Encrustation {
        mask: Arc<TextureMap>,
        material: PbrMaterial,
    },
    Hole {
        mask: Arc<TextureMap>,
    },
}

impl DefectTextureSet {
    pub fn kind(&self) -> DefectKind {
        match self {
            DefectTextureSet::Deformation { .. } => DefectKind::Deformation,
            DefectTextureSet::Encrustation { .. } => DefectKind::Encrustation,
            DefectTextureSet::Hole { .. } => DefectKind::Hole,
        }
    }

    /// Named maps in this set.
    pub fn maps(&self) -> Vec<(&'static str, &TextureMap)> {
        match self {
            DefectTextureSet::Deformation { normal, height, roughness, occlusion } => vec![
                ("normal", normal.as_ref()),
                ("height", height.as_ref()),
                ("roughness", roughness.as_ref()),
                ("occlusion", occlusion.as_ref()),
            ],
            DefectTextureSet::Encrustation { mask, .. } | DefectTextureSet::Hole { mask } => vec![("mask", mask.as_ref())],
        }
    }

    /// Binary selection map of the set.
    pub fn selection(&self) -> &TextureMap {
        match self {
            DefectTextureSet::Deformation { occlusion, .. } => occlusion,
            DefectTextureSet::Encrustation { mask, .. } | DefectTextureSet::Hole { mask } => mask,
        }
    }
}

fn blob_mask(spec: &DefectTextureSpec, stream: &mut RngStream) -> Result<TextureMap, MaterialError> {
    let res = spec.resolution;
    if res < 8 {
        return Err(MaterialError::Dimensions(res, res));
    }
    let mut mask = TextureMap::new(res, res, 1);
    match spec.shape {
        MaskShape::Disk => {
            for y in 0..res {
                for x in 0..res {
                    let (u, v) = ((x as f64 + 0.5) / res as f64 - 0.5, (y as f64 + 0.5) / res as f64 - 0.5);
                    if u * u + v * v <= 0.25 {
                        mask.set(x, y, 1.0);
                    }
                }
            }
            Ok(mask)
        }
        MaskShape::Blob => {
            let noise = gen_procedural_texture(
                &NoiseTextureParams {
                    width: res,
                    height: res,
                    octaves: spec.octaves,
                    frequency: spec.frequency,
                    amplitude: 1.0,
                    range: NoiseRange::Unit,
                },
                stream,
            )?;
            let mut threshold = spec.threshold;
            for _ in 0..MASK_ATTEMPTS {
                for y in 0..res {
                    for x in 0..res {
                        let (u, v) = ((x as f64 + 0.5) / res as f64 - 0.5, (y as f64 + 0.5) / res as f64 - 0.5);
                        let falloff = (1.0 - (u * u + v * v).sqrt() / 0.5).max(0.0);
                        let value = falloff * (0.35 + 0.65 * noise.get(x, y) as f64);
                        mask.set(x, y, if value > threshold { 1.0 } else { 0.0 });
                    }
                }
                if mask.count_nonzero() > 0 {
                    return Ok(mask);
                }
                threshold *= 0.5;
            }
            Err(MaterialError::EmptyMask(MASK_ATTEMPTS))
        }
    }
}

fn mask_centroid(mask: &TextureMap) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) != 0.0 {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1.0;
            }
        }
    }
    (sx / n, sy / n)
}

/// Sub-region of `support` within a noisy radius of the support centroid.
fn core_region(support: &TextureMap, extent: f64, stream: &mut RngStream) -> Result<TextureMap, MaterialError> {
    let (w, h) = (support.width, support.height);
    let (cx, cy) = mask_centroid(support);
    let fbm = Fbm::new(stream.next_u64_value(), 3);
    let mut out = TextureMap::new(w, h, 1);
    let mut radius = extent * 0.5 * w as f64;
    for _ in 0..MASK_ATTEMPTS {
        for y in 0..h {
            for x in 0..w {
                if support.get(x, y) == 0.0 {
                    continue;
                }
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let wobble = 1.0 + 0.35 * fbm.sample_2d(dx * 4.0 / w as f64, dy * 4.0 / h as f64);
                let inside = (dx * dx + dy * dy).sqrt() <= radius * wobble;
                out.set(x, y, if inside { 1.0 } else { 0.0 });
            }
        }
        if out.count_nonzero() > 0 {
            return Ok(out);
        }
        radius = radius * 1.5 + 1.0;
    }
    Err(MaterialError::EmptyMask(MASK_ATTEMPTS))
}

fn texture_set_on_support(
    kind: DefectKind,
    support: &Arc<TextureMap>,
    spec: &DefectTextureSpec,
    stream: &mut RngStream,
) -> Result<DefectTextureSet, MaterialError> {
    let res = support.width;
    match kind {
        DefectKind::Deformation => {
            let amplitude = spec.height_amplitude.sample(stream);
            let raw = gen_procedural_texture(
                &NoiseTextureParams {
                    width: res,
                    height: res,
                    octaves: spec.octaves,
                    frequency: spec.frequency * 2.0,
                    amplitude,
                    range: NoiseRange::Signed,
                },
                stream,
            )?;
            let base_rough = spec.roughness.sample(stream);
            let rough_noise = gen_procedural_texture(
                &NoiseTextureParams {
                    width: res,
                    height: res,
                    octaves: 2,
                    frequency: spec.frequency * 3.0,
                    amplitude: 1.0,
                    range: NoiseRange::Signed,
                },
                stream,
            )?;
            let mut height = TextureMap::new(res, res, 1);
            let mut roughness = TextureMap::new(res, res, 1);
            for y in 0..res {
                for x in 0..res {
                    if support.get(x, y) != 0.0 {
                        height.set(x, y, raw.get(x, y));
                        let r = (base_rough + 0.1 * rough_noise.get(x, y) as f64).clamp(0.0, 1.0);
                        roughness.set(x, y, r as f32);
                    }
                }
            }
            let mut normal = normals_from_height(&height);
            for y in 0..res {
                for x in 0..res {
                    if support.get(x, y) == 0.0 {
                        normal.set3(x, y, Vec3::Z);
                    }
                }
            }
            Ok(DefectTextureSet::Deformation {
                normal: Arc::new(normal),
                height: Arc::new(height),
                roughness: Arc::new(roughness),
                occlusion: support.clone(),
            })
        }
        DefectKind::Encrustation => {
            let extent = spec.encrustation_extent.sample(stream);
            let mask = core_region(support, extent, stream)?;
            let material = PbrMaterial::sample(&spec.encrustation, stream.next_u64_value(), stream);
            Ok(DefectTextureSet::Encrustation { mask: Arc::new(mask), material })
        }
        DefectKind::Hole => {
            let extent = spec.hole_extent.sample(stream);
            let mask = core_region(support, extent, stream)?;
            Ok(DefectTextureSet::Hole { mask: Arc::new(mask) })
        }
    }
}

/// Generates one texture set of `kind` on a fresh support mask.
pub fn gen_defect_textures(
    kind: DefectKind,
    spec: &DefectTextureSpec,
    stream: &mut RngStream,
) -> Result<DefectTextureSet, MaterialError> {
    let support = Arc::new(blob_mask(spec, stream)?);
    match kind {
        // single-kind masks cover the whole support
        DefectKind::Hole => Ok(DefectTextureSet::Hole { mask: support }),
        DefectKind::Encrustation => {
            let material = PbrMaterial::sample(&spec.encrustation, stream.next_u64_value(), stream);
            Ok(DefectTextureSet::Encrustation { mask: support, material })
        }
        DefectKind::Deformation => texture_set_on_support(kind, &support, spec, stream),
    }
}

/// Where a defect sits on its part, in mesh coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectPlacement {
    pub position: Vec3,
    pub normal: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub triangle: usize,
}

/// Result of projecting a surface point into a defect's decal space.
#[derive(Debug, Clone, Copy)]
pub struct DecalSample {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectInstance {
    pub id: u32,
    pub class_label: String,
    /// Characteristic diameter, meters.
    pub scale: f64,
    pub texture_sets: Vec<DefectTextureSet>,
    /// Union of all set selections.
    pub support: Arc<TextureMap>,
    pub anchor_uv: [f64; 2],
    pub placement: Option<DefectPlacement>,
}

impl DefectInstance {
    /// Projects a mesh-space surface point with normal `n` into the decal.
    /// Returns the texel hit when the point lies in the footprint.
    #[inline]
    pub fn decal_texel(&self, p: Vec3, n: Vec3) -> Option<DecalSample> {
        self.project(p, n, false)
    }

    /// Like [`DefectInstance::decal_texel`], but also accepts surfaces facing
    /// away from the anchor normal, so holes cut through thin walls.
    #[inline]
    pub fn decal_texel_through(&self, p: Vec3, n: Vec3) -> Option<DecalSample> {
        self.project(p, n, true)
    }

    #[inline]
    fn project(&self, p: Vec3, n: Vec3, two_sided: bool) -> Option<DecalSample> {
        let pl = self.placement.as_ref()?;
        let facing = n.dot(pl.normal);
        if facing < 0.3 && !(two_sided && facing <= -0.3) {
            return None;
        }
        let d = p - pl.position;
        if d.dot(pl.normal).abs() > 0.5 * self.scale {
            return None;
        }
        let s = d.dot(pl.tangent) / self.scale + 0.5;
        let t = d.dot(pl.bitangent) / self.scale + 0.5;
        if !(0.0..1.0).contains(&s) || !(0.0..1.0).contains(&t) {
            return None;
        }
        let (x, y) = self.support.texel_at(s, t);
        Some(DecalSample { x, y })
    }

    pub fn in_support(&self, texel: DecalSample) -> bool {
        self.support.get(texel.x, texel.y) != 0.0
    }

    pub fn kinds(&self) -> Vec<DefectKind> {
        self.texture_sets.iter().map(|s| s.kind()).collect()
    }
}

/// Builds a break-style defect: one texture set per configured kind (all
/// three by default), all drawn inside a common support mask.
pub fn compose_break(stream: &mut RngStream, spec: &DefectKindSpec, id: u32) -> Result<DefectInstance, MaterialError> {
    let scale = spec.size.sample(stream);
    let support = Arc::new(blob_mask(&spec.texture, stream)?);
    let mut sets = Vec::with_capacity(spec.textures.len());
    for &kind in &spec.textures {
        sets.push(texture_set_on_support(kind, &support, &spec.texture, stream)?);
    }
    Ok(DefectInstance {
        id,
        class_label: spec.class.clone(),
        scale,
        texture_sets: sets,
        support,
        anchor_uv: [0.5, 0.5],
        placement: None,
    })
}

/// Area-weighted random surface point: `(triangle, barycentrics)`.
pub fn sample_surface(mesh: &Mesh, stream: &mut RngStream) -> Option<(usize, [f64; 3])> {
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut pick = stream.uniform() * total;
    let mut tri = areas.len() - 1;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            tri = i;
            break;
        }
        pick -= a;
    }
    let (r1, r2) = (stream.uniform(), stream.uniform());
    let su = r1.sqrt();
    Some((tri, [1.0 - su, su * (1.0 - r2), su * r2]))
}

/// Anchors `defect` at a random surface point of the part and attaches it.
pub fn apply_defect(
    instance: &PartInstance,
    mut defect: DefectInstance,
    stream: &mut RngStream,
) -> Result<PartInstance, MaterialError> {
    let mesh = &instance.mesh;
    if mesh.uvs.len() != mesh.positions.len() || mesh.uvs.is_empty() {
        return Err(MaterialError::MissingUvs);
    }
    let (tri, bary) = sample_surface(mesh, stream).ok_or(MaterialError::NoSurface)?;
    let idx = mesh.triangles[tri].map(|i| i as usize);
    let position = mesh.positions[idx[0]] * bary[0] + mesh.positions[idx[1]] * bary[1] + mesh.positions[idx[2]] * bary[2];
    let geometric = {
        let [a, b, c] = mesh.triangle(tri);
        (b - a).cross(c - a).normalized_or(Vec3::Z)
    };
    let shading = (mesh.normals[idx[0]] * bary[0] + mesh.normals[idx[1]] * bary[1] + mesh.normals[idx[2]] * bary[2])
        .normalized_or(geometric);
    let uv = [0, 1].map(|k| mesh.uvs[idx[0]][k] * bary[0] + mesh.uvs[idx[1]][k] * bary[1] + mesh.uvs[idx[2]][k] * bary[2]);
    let (t0, b0) = shading.orthonormal_basis();
    let angle = stream.uniform_in(0.0, std::f64::consts::TAU);
    let (sa, ca) = angle.sin_cos();
    let tangent = t0 * ca + b0 * sa;
    let bitangent = shading.cross(tangent);
    defect.anchor_uv = uv;
    defect.placement = Some(DefectPlacement { position, normal: shading, tangent, bitangent, triangle: tri });
    let mut out = instance.clone();
    out.defects.push(defect);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Param;
    use crate::geometry::Pose;

    fn params(octaves: u32, amplitude: f64) -> NoiseTextureParams {
        NoiseTextureParams { width: 128, height: 128, octaves, frequency: 4.0, amplitude, range: NoiseRange::Signed }
    }

    fn mean_gradient(m: &TextureMap) -> f64 {
        // forward differences, independent of the map generator
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in 0..m.height - 1 {
            for x in 0..m.width - 1 {
                let gx = (m.get(x + 1, y) - m.get(x, y)) as f64;
                let gy = (m.get(x, y + 1) - m.get(x, y)) as f64;
                sum += (gx * gx + gy * gy).sqrt();
                n += 1.0;
            }
        }
        sum / n
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let m = gen_procedural_texture(&params(4, 0.0), &mut RngStream::new(1, 0, "tex")).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = gen_procedural_texture(&params(4, 0.7), &mut RngStream::new(1, 0, "tex")).unwrap();
        let b = gen_procedural_texture(&params(4, 0.7), &mut RngStream::new(1, 0, "tex")).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v.abs() <= 0.7));
        let unit = NoiseTextureParams { range: NoiseRange::Unit, amplitude: 1.0, ..params(3, 1.0) };
        let u = gen_procedural_texture(&unit, &mut RngStream::new(1, 0, "tex")).unwrap();
        assert!(u.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn more_octaves_more_high_frequency_energy() {
        let one = gen_procedural_texture(&params(1, 1.0), &mut RngStream::new(5, 0, "tex")).unwrap();
        let four = gen_procedural_texture(&params(4, 1.0), &mut RngStream::new(5, 0, "tex")).unwrap();
        let (g1, g4) = (mean_gradient(&one), mean_gradient(&four));
        assert!(g4 > g1, "1 octave {g1}, 4 octaves {g4}");
    }

    #[test]
    fn invalid_dimensions() {
        let p = NoiseTextureParams { width: 4, ..params(1, 1.0) };
        assert_eq!(gen_procedural_texture(&p, &mut RngStream::new(1, 0, "t")), Err(MaterialError::Dimensions(4, 128)));
    }

    fn tex_spec() -> DefectTextureSpec {
        DefectTextureSpec::default()
    }

    #[test]
    fn hole_set_has_one_mask() {
        let set = gen_defect_textures(DefectKind::Hole, &tex_spec(), &mut RngStream::new(2, 0, "d")).unwrap();
        assert_eq!(set.kind(), DefectKind::Hole);
        assert_eq!(set.maps().len(), 1);
        assert!(set.maps()[0].1.is_binary());
        assert!(set.maps()[0].1.count_nonzero() > 0);
    }

    #[test]
    fn deformation_normals_follow_height() {
        let set = gen_defect_textures(DefectKind::Deformation, &tex_spec(), &mut RngStream::new(2, 0, "d")).unwrap();
        let DefectTextureSet::Deformation { normal, height, occlusion, roughness } = &set else { panic!() };
        assert_eq!(set.maps().len(), 4);
        let (w, h) = (height.width, height.height);
        let mut checked = 0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if occlusion.get(x, y) == 0.0 {
                    assert_eq!(height.get(x, y), 0.0);
                    assert_eq!(roughness.get(x, y), 0.0);
                    assert_eq!(normal.get3(x, y), Vec3::Z);
                    continue;
                }
                let dhdx = (height.get(x + 1, y) as f64 - height.get(x - 1, y) as f64) / 2.0;
                let dhdy = (height.get(x, y + 1) as f64 - height.get(x, y - 1) as f64) / 2.0;
                let expected = Vec3::new(-dhdx, -dhdy, 1.0).normalized();
                assert!((normal.get3(x, y) - expected).length() < 1e-3);
                assert!((normal.get3(x, y).length() - 1.0).abs() < 1e-3);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn zero_amplitude_deformation_is_flat() {
        let spec = DefectTextureSpec { height_amplitude: Param::Fixed(0.0), ..tex_spec() };
        let set = gen_defect_textures(DefectKind::Deformation, &spec, &mut RngStream::new(2, 0, "d")).unwrap();
        let DefectTextureSet::Deformation { normal, occlusion, .. } = &set else { panic!() };
        for y in 0..normal.height {
            for x in 0..normal.width {
                if occlusion.get(x, y) != 0.0 {
                    assert_eq!(normal.get3(x, y), Vec3::Z);
                }
            }
        }
    }

    #[test]
    fn impossible_threshold_errors() {
        let spec = DefectTextureSpec { threshold: 0.999_999, octaves: 1, ..tex_spec() };
        // the falloff peaks below 1 and the threshold halves each retry, so this succeeds
        assert!(gen_defect_textures(DefectKind::Hole, &spec, &mut RngStream::new(2, 0, "d")).is_ok());
        let tiny = DefectTextureSpec { resolution: 4, ..tex_spec() };
        assert!(gen_defect_textures(DefectKind::Hole, &tiny, &mut RngStream::new(2, 0, "d")).is_err());
    }

    fn break_spec() -> DefectKindSpec {
        DefectKindSpec {
            class: "break".into(),
            textures: vec![DefectKind::Deformation, DefectKind::Encrustation, DefectKind::Hole],
            size: Param::Uniform([0.01, 0.03]),
            per_part: crate::config::CountParam::Fixed(1),
            texture: tex_spec(),
        }
    }

    #[test]
    fn break_combines_three_kinds_in_common_support() {
        let d = compose_break(&mut RngStream::new(3, 0, "defect"), &break_spec(), 0).unwrap();
        assert_eq!(d.kinds(), vec![DefectKind::Deformation, DefectKind::Encrustation, DefectKind::Hole]);
        for set in &d.texture_sets {
            let sel = set.selection();
            assert!(sel.is_binary());
            for y in 0..sel.height {
                for x in 0..sel.width {
                    if sel.get(x, y) != 0.0 {
                        assert_ne!(d.support.get(x, y), 0.0);
                    }
                }
            }
            for (_, m) in set.maps() {
                assert_eq!((m.width, m.height), (d.support.width, d.support.height));
            }
        }
        let again = compose_break(&mut RngStream::new(3, 0, "defect"), &break_spec(), 0).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn break_scale_within_range() {
        let spec = break_spec();
        let mut s = RngStream::new(4, 0, "scales");
        for _ in 0..1000 {
            let scale = spec.size.sample(&mut s);
            assert!((0.01..=0.03).contains(&scale));
        }
        for i in 0..20 {
            let d = compose_break(&mut RngStream::new(4, i, "defect"), &spec, 0).unwrap();
            assert!((0.01..=0.03).contains(&d.scale));
        }
    }

    #[test]
    fn apply_defect_anchors_on_surface() {
        let mesh = Arc::new(Mesh::cuboid(Vec3::new(0.4, 0.3, 0.05)));
        let part = PartInstance::new(0, mesh.clone(), Pose::IDENTITY);
        let d = compose_break(&mut RngStream::new(3, 0, "defect"), &break_spec(), 7).unwrap();
        let out = apply_defect(&part, d, &mut RngStream::new(3, 0, "anchor")).unwrap();
        assert_eq!(out.defects.len(), 1);
        let pl = out.defects[0].placement.unwrap();
        // anchor lies on the anchor triangle's plane
        let [a, b, c] = mesh.triangle(pl.triangle);
        let n = (b - a).cross(c - a).normalized();
        assert!((pl.position - a).dot(n).abs() < 1e-12);
        assert!((pl.tangent.length() - 1.0).abs() < 1e-9 && pl.tangent.dot(pl.normal).abs() < 1e-9);
        let uv = out.defects[0].anchor_uv;
        assert!((0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1]));
        // the anchor maps to the center texel of the decal
        let t = out.defects[0].decal_texel(pl.position, pl.normal).unwrap();
        assert_eq!((t.x, t.y), (32, 32));
    }

    #[test]
    fn apply_defect_requires_uvs() {
        let mut m = Mesh::cuboid(Vec3::ONE);
        m.uvs.clear();
        let part = PartInstance::new(0, Arc::new(m), Pose::IDENTITY);
        let d = compose_break(&mut RngStream::new(3, 0, "defect"), &break_spec(), 0).unwrap();
        assert_eq!(apply_defect(&part, d, &mut RngStream::new(0, 0, "a")), Err(MaterialError::MissingUvs));
    }

    #[test]
    fn material_randomization() {
        let part = PartInstance::new(0, Arc::new(Mesh::cuboid(Vec3::ONE)), Pose::IDENTITY);
        let spec = MaterialSpec::default();
        for seed in 0..100 {
            let m = randomize_part_material(&part, &mut RngStream::new(seed, 0, "mat"), &spec).material;
            assert!(spec.roughness.contains(m.roughness));
            assert!(spec.metallic.contains(m.metallic));
            assert!(m.is_valid());
        }
        let a = randomize_part_material(&part, &mut RngStream::new(1, 0, "mat"), &spec);
        let b = randomize_part_material(&part, &mut RngStream::new(1, 0, "mat"), &spec);
        assert_eq!(a, b);

        let fixed = MaterialSpec {
            base_color: [Param::Fixed(0.3), Param::Fixed(0.4), Param::Fixed(0.5)],
            roughness: Param::Fixed(0.2),
            metallic: Param::Fixed(1.0),
            specular: Param::Fixed(0.5),
            noise: NoiseSpec {
                frequency: Param::Fixed(5.0),
                amplitude: Param::Fixed(0.1),
                octaves: 2,
                offset: Param::Fixed(3.0),
            },
        };
        let mut base = part.clone();
        base.material = PbrMaterial::nominal(&fixed, 0x5eed);
        let r = randomize_part_material(&base, &mut RngStream::new(9, 0, "mat"), &fixed);
        assert_eq!(r.material, base.material);
    }
}
