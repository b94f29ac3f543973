//! Monte Carlo path tracing of scene graphs.
//!
//! The beauty pass traces paths from a thin-lens camera with next-event
//! estimation. Area lights are reached both by light sampling and by BSDF
//! sampling, combined with the power heuristic; point lights (optionally
//! shaped by a photometric profile) are sampled explicitly only. The uniform
//! environment is reached by escaping paths.
//!
//! Every pixel draws from its own random lane, so images do not depend on
//! tile order or thread count.

mod bsdf;
mod bvh;
mod image;

pub use bsdf::Bsdf;
pub use bvh::{Bvh, BvhHit, Triangle};
pub use image::{read_pfm, read_png_rgb, tonemap, write_pfm, write_png_rgb, ImageBuffer, Rgb8Image};

use crate::config::{DefectKind, RenderSettings};
use crate::geometry::{Mesh, Pose};
use crate::materials::{DefectInstance, DefectPlacement, DefectTextureSet, PbrMaterial};
use crate::math::{Quat, Vec3};
use crate::scene::{CameraModel, LightKind, SceneError, SceneGraph};
use crate::stream::RngStream;
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Camera(#[from] SceneError),
    #[error("unknown defect id {0}")]
    UnknownDefect(u32),
    #[error("invalid render settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ObjectKind {
    Stage,
    Part(usize),
    Light(usize),
}

#[derive(Debug, Clone)]
struct Object {
    kind: ObjectKind,
    material: PbrMaterial,
    /// Local frame for procedural texture lookups.
    pose: Pose,
    /// Defects with world-space placements.
    defects: Vec<DefectInstance>,
    has_holes: bool,
}

#[derive(Debug, Clone, Copy)]
struct Prim {
    tri: Triangle,
    normals: [Vec3; 3],
    object: u32,
}

#[derive(Debug, Clone)]
struct Emitter {
    light: usize,
    center: Vec3,
    axis_u: Vec3,
    axis_v: Vec3,
    normal: Vec3,
    area: f64,
    /// Radiance for area lights, radiant intensity scale for point lights.
    emission: Vec3,
    weight: f64,
}

/// Scene flattened to world-space triangles, ready for ray queries.
pub struct RenderScene<'a> {
    graph: &'a SceneGraph,
    bvh: Bvh,
    prims: Vec<Prim>,
    objects: Vec<Object>,
    emitters: Vec<Emitter>,
    emitter_total: f64,
}

struct Hit {
    t: f64,
    point: Vec3,
    /// Winding normal of the triangle hit.
    ng: Vec3,
    /// Interpolated vertex normal.
    ns: Vec3,
    object: u32,
}

struct Frame {
    t: Vec3,
    b: Vec3,
    n: Vec3,
}

impl Frame {
    fn new(n: Vec3) -> Self {
        let (t, b) = n.orthonormal_basis();
        Frame { t, b, n }
    }
    fn to_local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.t), v.dot(self.b), v.dot(self.n))
    }
    fn to_world(&self, v: Vec3) -> Vec3 {
        self.t * v.x + self.b * v.y + self.n * v.z
    }
}

fn world_defect(d: &DefectInstance, pose: &Pose) -> DefectInstance {
    let mut w = d.clone();
    if let Some(p) = d.placement {
        w.placement = Some(DefectPlacement {
            position: pose.transform_point(p.position),
            normal: pose.transform_vector(p.normal),
            tangent: pose.transform_vector(p.tangent),
            bitangent: pose.transform_vector(p.bitangent),
            triangle: p.triangle,
        });
    }
    w
}

fn hole_at(defect: &DefectInstance, p: Vec3, n: Vec3) -> bool {
    let Some(texel) = defect.decal_texel_through(p, n) else { return false };
    defect.texture_sets.iter().any(|s| match s {
        DefectTextureSet::Hole { mask } => mask.get(texel.x, texel.y) != 0.0,
        _ => false,
    })
}

fn offset_origin(p: Vec3, n: Vec3) -> Vec3 {
    let scale = 1.0 + p.x.abs().max(p.y.abs()).max(p.z.abs());
    p + n * (1e-7 * scale)
}

fn power_heuristic(a: f64, b: f64) -> f64 {
    let (a2, b2) = (a * a, b * b);
    if a2 + b2 == 0.0 {
        0.0
    } else {
        a2 / (a2 + b2)
    }
}

impl<'a> RenderScene<'a> {
    pub fn new(graph: &'a SceneGraph) -> Self {
        let mut prims = Vec::new();
        let mut objects = Vec::new();
        let add_mesh = |prims: &mut Vec<Prim>, mesh: &Mesh, pose: &Pose, object: u32| {
            for t in &mesh.triangles {
                let idx = t.map(|i| i as usize);
                let [a, b, c] = idx.map(|i| pose.transform_point(mesh.positions[i]));
                let normals = idx.map(|i| pose.transform_vector(mesh.normals[i]));
                prims.push(Prim { tri: Triangle::new(a, b, c), normals, object });
            }
        };
        for el in &graph.stage {
            add_mesh(&mut prims, &el.mesh, &Pose::IDENTITY, objects.len() as u32);
            objects.push(Object {
                kind: ObjectKind::Stage,
                material: el.material,
                pose: Pose::IDENTITY,
                defects: vec![],
                has_holes: false,
            });
        }
        for (pi, part) in graph.parts.iter().enumerate() {
            add_mesh(&mut prims, &part.mesh, &part.pose, objects.len() as u32);
            let defects: Vec<DefectInstance> = part.defects.iter().map(|d| world_defect(d, &part.pose)).collect();
            let has_holes = defects.iter().any(|d| d.kinds().contains(&DefectKind::Hole));
            objects.push(Object { kind: ObjectKind::Part(pi), material: part.material, pose: part.pose, defects, has_holes });
        }
        let mut emitters = Vec::new();
        for (i, l) in graph.lights.iter().enumerate() {
            let color_power = l.color * l.power;
            let weight = (l.power * l.color.luminance()).max(0.0);
            match l.kind {
                LightKind::Area { width, height } => {
                    // the builtin quad faces +z; turn it to face local -z
                    let flip = Pose::new(Quat::from_axis_angle(Vec3::X, PI), Vec3::ZERO);
                    add_mesh(&mut prims, &Mesh::quad(width, height), &l.pose.compose(&flip), objects.len() as u32);
                    objects.push(Object {
                        kind: ObjectKind::Light(emitters.len()),
                        material: PbrMaterial::diffuse(Vec3::ZERO),
                        pose: l.pose,
                        defects: vec![],
                        has_holes: false,
                    });
                    let area = width * height;
                    emitters.push(Emitter {
                        light: i,
                        center: l.pose.translation,
                        axis_u: l.pose.transform_vector(Vec3::X) * width,
                        axis_v: l.pose.transform_vector(Vec3::Y) * height,
                        normal: l.direction(),
                        area,
                        emission: color_power / (PI * area),
                        weight,
                    });
                }
                LightKind::Point => {
                    let scale = match &l.profile {
                        Some(p) => {
                            let flux = p.integrated_intensity();
                            if flux > 0.0 {
                                1.0 / flux
                            } else {
                                0.0
                            }
                        }
                        None => 1.0 / (4.0 * PI),
                    };
                    emitters.push(Emitter {
                        light: i,
                        center: l.pose.translation,
                        axis_u: Vec3::ZERO,
                        axis_v: Vec3::ZERO,
                        normal: l.direction(),
                        area: 0.0,
                        emission: color_power * scale,
                        weight,
                    });
                }
            }
        }
        let tris: Vec<Triangle> = prims.iter().map(|p| p.tri).collect();
        let emitter_total = emitters.iter().map(|e| e.weight).sum();
        RenderScene { graph, bvh: Bvh::build(&tris), prims, objects, emitters, emitter_total }
    }

    fn transparent(&self, prim: u32, o: Vec3, d: Vec3, t: f64, keep_defect: Option<u32>) -> bool {
        let p = &self.prims[prim as usize];
        let obj = &self.objects[p.object as usize];
        if !obj.has_holes {
            return false;
        }
        let point = o + d * t;
        let ng = p.tri.geometric_normal();
        obj.defects.iter().filter(|df| Some(df.id) != keep_defect).any(|df| hole_at(df, point, ng))
    }

    /// Closest surface hit. Holes are transparent except those of `keep_defect`.
    fn intersect(&self, o: Vec3, d: Vec3, keep_defect: Option<u32>) -> Option<Hit> {
        let h = self.bvh.closest(o, d, 0.0, f64::INFINITY, |prim, h| !self.transparent(prim, o, d, h.t, keep_defect))?;
        let p = &self.prims[h.prim as usize];
        let w0 = 1.0 - h.b1 - h.b2;
        let ns = (p.normals[0] * w0 + p.normals[1] * h.b1 + p.normals[2] * h.b2).normalized_or(p.tri.geometric_normal());
        Some(Hit { t: h.t, point: o + d * h.t, ng: p.tri.geometric_normal(), ns, object: p.object })
    }

    /// Shadow query: light geometry does not occlude, holes are transparent.
    fn occluded(&self, o: Vec3, d: Vec3, tmax: f64) -> bool {
        self.bvh.any(o, d, 0.0, tmax, |prim, h| {
            let obj = &self.objects[self.prims[prim as usize].object as usize];
            !matches!(obj.kind, ObjectKind::Light(_)) && !self.transparent(prim, o, d, h.t, None)
        })
    }

    /// Material and shading normal at a hit, with defect maps applied.
    fn surface(&self, hit: &Hit) -> (PbrMaterial, Vec3, f64) {
        let obj = &self.objects[hit.object as usize];
        let mut mat = obj.material;
        let mut ns = hit.ns;
        let mut noise = mat.noise;
        for d in &obj.defects {
            let Some(tx) = d.decal_texel(hit.point, hit.ng) else { continue };
            let pl = d.placement.as_ref().expect("decal hit implies placement");
            for set in &d.texture_sets {
                match set {
                    DefectTextureSet::Deformation { normal, roughness, occlusion, .. } => {
                        if occlusion.get(tx.x, tx.y) != 0.0 {
                            let nt = normal.get3(tx.x, tx.y);
                            ns = (pl.tangent * nt.x + pl.bitangent * nt.y + pl.normal * nt.z).normalized_or(ns);
                            mat.roughness = roughness.get(tx.x, tx.y) as f64;
                        }
                    }
                    DefectTextureSet::Encrustation { mask, material } => {
                        if mask.get(tx.x, tx.y) != 0.0 {
                            mat = PbrMaterial { noise: None, ..*material };
                            noise = material.noise;
                        }
                    }
                    DefectTextureSet::Hole { .. } => {}
                }
            }
        }
        let factor = match noise {
            Some(n) => n.factor(obj.pose.inverse_transform_point(hit.point)),
            None => 1.0,
        };
        (mat, ns, factor)
    }

    fn pick_emitter(&self, u: f64) -> Option<(usize, f64)> {
        if !(self.emitter_total > 0.0) {
            return None;
        }
        let mut target = u * self.emitter_total;
        let mut chosen = None;
        for (i, e) in self.emitters.iter().enumerate() {
            if e.weight <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < e.weight {
                break;
            }
            target -= e.weight;
        }
        chosen.map(|i| (i, self.emitters[i].weight / self.emitter_total))
    }

    fn select_prob(&self, emitter: usize) -> f64 {
        if self.emitter_total > 0.0 {
            self.emitters[emitter].weight / self.emitter_total
        } else {
            0.0
        }
    }

    /// One next-event estimate at a surface point.
    fn direct(&self, p: Vec3, ng: Vec3, frame: &Frame, wo: Vec3, bsdf: &Bsdf, s: &mut RngStream) -> Vec3 {
        let u = s.uniform();
        let (ua, ub) = (s.uniform(), s.uniform());
        let Some((ei, p_sel)) = self.pick_emitter(u) else { return Vec3::ZERO };
        let e = &self.emitters[ei];
        let origin = offset_origin(p, ng);
        if e.area > 0.0 {
            let q = e.center + e.axis_u * (ua - 0.5) + e.axis_v * (ub - 0.5);
            let to = q - origin;
            let dist2 = to.length_squared();
            let dist = dist2.sqrt();
            let wi = to / dist;
            let cos_l = -wi.dot(e.normal);
            if cos_l <= 0.0 || wi.dot(ng) <= 0.0 {
                return Vec3::ZERO;
            }
            let wi_l = frame.to_local(wi);
            let f = bsdf.eval(wo, wi_l);
            if f.max_component() <= 0.0 || self.occluded(origin, wi, dist * (1.0 - 1e-9)) {
                return Vec3::ZERO;
            }
            let pdf_light = p_sel * dist2 / (cos_l * e.area);
            let w = power_heuristic(pdf_light, bsdf.pdf(wo, wi_l));
            f.mul_elem(e.emission) * (wi_l.z * w / pdf_light)
        } else {
            let to = e.center - origin;
            let dist2 = to.length_squared();
            let wi = to / dist2.sqrt();
            if wi.dot(ng) <= 0.0 {
                return Vec3::ZERO;
            }
            let wi_l = frame.to_local(wi);
            let f = bsdf.eval(wo, wi_l);
            if f.max_component() <= 0.0 || self.occluded(origin, wi, dist2.sqrt() * (1.0 - 1e-9)) {
                return Vec3::ZERO;
            }
            let light = &self.graph.lights[e.light];
            let shape = match &light.profile {
                Some(profile) => profile.intensity_at(light.pose.inverse_transform_vector(-wi).normalized()),
                None => 1.0,
            };
            f.mul_elem(e.emission) * (wi_l.z * shape / (dist2 * p_sel))
        }
    }

    /// Radiance along one camera ray.
    fn trace(&self, mut o: Vec3, mut d: Vec3, max_bounces: u32, s: &mut RngStream) -> Vec3 {
        let mut radiance = Vec3::ZERO;
        let mut beta = Vec3::ONE;
        // density of the direction that produced the current ray; 0 for camera rays
        let mut prev_pdf = 0.0;
        for depth in 0..=max_bounces {
            let Some(hit) = self.intersect(o, d, None) else {
                radiance += beta.mul_elem(self.graph.environment);
                break;
            };
            let obj = &self.objects[hit.object as usize];
            if let ObjectKind::Light(ei) = obj.kind {
                let e = &self.emitters[ei];
                let cos_l = -d.dot(e.normal);
                if cos_l > 0.0 {
                    let w = if prev_pdf == 0.0 {
                        1.0
                    } else {
                        let pdf_light = self.select_prob(ei) * hit.t * hit.t / (cos_l * e.area);
                        power_heuristic(prev_pdf, pdf_light)
                    };
                    radiance += beta.mul_elem(e.emission) * w;
                }
                break;
            }
            if depth == max_bounces {
                break;
            }
            let wo_world = -d;
            let ng = if hit.ng.dot(wo_world) >= 0.0 { hit.ng } else { -hit.ng };
            let (mat, mut ns, factor) = self.surface(&hit);
            if ns.dot(ng) < 0.0 {
                ns = -ns;
            }
            if ns.dot(wo_world) <= 0.0 {
                ns = ng;
            }
            let frame = Frame::new(ns);
            let wo = frame.to_local(wo_world);
            let base = mat.base_color * factor;
            let bsdf = Bsdf::new(base.min(Vec3::ONE), mat.roughness, mat.metallic, mat.specular);
            radiance += beta.mul_elem(self.direct(hit.point, ng, &frame, wo, &bsdf, s));
            let (u0, u1, u2) = (s.uniform(), s.uniform(), s.uniform());
            let Some((wi_l, f, pdf)) = bsdf.sample(wo, u0, u1, u2) else { break };
            let wi = frame.to_world(wi_l);
            if wi.dot(ng) <= 0.0 {
                break;
            }
            beta = beta.mul_elem(f) * (wi_l.z / pdf);
            if beta.max_component() <= 0.0 {
                break;
            }
            prev_pdf = pdf;
            o = offset_origin(hit.point, ng);
            d = wi;
        }
        radiance
    }
}

fn check_settings(settings: &RenderSettings) -> Result<(), RenderError> {
    if settings.spp < 1 {
        return Err(RenderError::Settings("spp must be >= 1".into()));
    }
    if settings.max_bounces < 1 {
        return Err(RenderError::Settings("max_bounces must be >= 1".into()));
    }
    if settings.tile_size < 1 {
        return Err(RenderError::Settings("tile_size must be >= 1".into()));
    }
    if !(settings.radiance_clamp > 0.0) {
        return Err(RenderError::Settings("radiance_clamp must be > 0".into()));
    }
    Ok(())
}

/// Runs `shade` for every pixel, tile by tile in parallel.
fn render_tiles<F>(width: u32, height: u32, tile: u32, shade: F) -> ImageBuffer
where
    F: Fn(u32, u32) -> Vec3 + Sync,
{
    let tiles: Vec<(u32, u32)> =
        (0..height.div_ceil(tile)).flat_map(|ty| (0..width.div_ceil(tile)).map(move |tx| (tx * tile, ty * tile))).collect();
    let rendered: Vec<((u32, u32), Vec<Vec3>)> = tiles
        .into_par_iter()
        .map(|(x0, y0)| {
            let (x1, y1) = ((x0 + tile).min(width), (y0 + tile).min(height));
            let mut px = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    px.push(shade(x, y));
                }
            }
            ((x0, y0), px)
        })
        .collect();
    let mut img = ImageBuffer::new(width, height);
    for ((x0, y0), px) in rendered {
        let x1 = (x0 + tile).min(width);
        let w = x1 - x0;
        for (i, v) in px.into_iter().enumerate() {
            let (x, y) = (x0 + i as u32 % w, y0 + i as u32 / w);
            img.set(x, y, v);
        }
    }
    img
}

/// Path-traced linear radiance seen by `camera`.
pub fn render(scene: &SceneGraph, camera: &CameraModel, settings: &RenderSettings) -> Result<ImageBuffer, RenderError> {
    camera.validate()?;
    check_settings(settings)?;
    let rs = RenderScene::new(scene);
    let [w, h] = camera.resolution;
    let root = RngStream::new(settings.seed, scene.scene_index as u64, "render").child(settings.camera);
    let clamp = settings.radiance_clamp;
    let img = render_tiles(w, h, settings.tile_size, |x, y| {
        let mut s = root.lane(y as u64 * w as u64 + x as u64);
        let mut sum = Vec3::ZERO;
        for _ in 0..settings.spp {
            let (u, v) = (x as f64 + s.uniform(), y as f64 + s.uniform());
            let (lx, ly) = (s.uniform(), s.uniform());
            let (o, d) = camera.lens_ray(u, v, lx, ly);
            let mut l = rs.trace(o, d, settings.max_bounces, &mut s);
            let peak = l.max_component();
            if !l.is_finite() {
                l = Vec3::ZERO;
            } else if peak > clamp {
                l = l * (clamp / peak);
            }
            sum += l;
        }
        sum / settings.spp as f64
    });
    Ok(img)
}

/// Defect-only pass: 1.0 where a pixel-center primary ray hits the front side
/// of the selected defect's support, 0 elsewhere. Lights and all other
/// surfaces are black; other defects' holes stay transparent.
pub fn render_defect_pass(
    scene: &SceneGraph,
    camera: &CameraModel,
    defect_id: u32,
    settings: &RenderSettings,
) -> Result<ImageBuffer, RenderError> {
    camera.validate()?;
    check_settings(settings)?;
    let (part_index, _) = scene.find_defect(defect_id).ok_or(RenderError::UnknownDefect(defect_id))?;
    let rs = RenderScene::new(scene);
    let object = rs
        .objects
        .iter()
        .position(|o| o.kind == ObjectKind::Part(part_index))
        .expect("every part has an object") as u32;
    let defect = rs.objects[object as usize].defects.iter().find(|d| d.id == defect_id).expect("defect located").clone();
    let [w, h] = camera.resolution;
    Ok(render_tiles(w, h, settings.tile_size, |x, y| {
        let (o, d) = camera.pinhole_ray(x as f64 + 0.5, y as f64 + 0.5);
        match rs.intersect(o, d, Some(defect_id)) {
            Some(hit) if hit.object == object && d.dot(hit.ng) < 0.0 => match defect.decal_texel(hit.point, hit.ng) {
                Some(tx) if defect.in_support(tx) => Vec3::ONE,
                _ => Vec3::ZERO,
            },
            _ => Vec3::ZERO,
        }
    }))
}

#[cfg(test)]
mod tests;
