//! End-to-end dataset generation.
//!
//! Each scene is built from its own random streams, keyed by the master seed,
//! the scene index and a purpose tag, so scenes can run in any order on any
//! number of threads and still produce identical files.

use crate::annotate::{export_manifest, verify_and_cull, write_json, write_mask_png, AnnotateError, Annotation, ImageRecord, Split};
use crate::config::GenConfig;
use crate::geometry::{load_obj, load_pose_catalog, place_part, stable_poses, GeometryError, Mesh, PartInstance, Pose, StageBounds};
use crate::materials::{apply_defect, compose_break, randomize_part_material, MaterialError};
use crate::render::{render, tonemap, write_pfm, write_png_rgb, RenderError};
use crate::scene::{build_default_stage, randomize_environment, SceneError, SceneGraph};
use crate::stream::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: GeometryError },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("scene {scene}: {message}")]
    Build { scene: u32, message: String },
    #[error("scene {scene}, camera {camera}: {message}")]
    View { scene: u32, camera: u32, message: String },
    #[error(transparent)]
    Export(#[from] AnnotateError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// A loaded part model with its resting poses.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub mesh: Arc<Mesh>,
    pub poses: Vec<Pose>,
}

/// Loads every catalog mesh. Poses come from the pose file when given,
/// otherwise they are computed from the convex hull.
pub fn load_catalog(cfg: &GenConfig) -> Result<Vec<CatalogEntry>, PipelineError> {
    cfg.parts
        .catalog
        .iter()
        .map(|entry| {
            let text = std::fs::read_to_string(&entry.mesh)
                .map_err(|e| PipelineError::Io { path: entry.mesh.clone(), message: e.to_string() })?;
            let mesh = load_obj(&text).map_err(|source| PipelineError::Mesh { path: entry.mesh.clone(), source })?;
            let poses = match &entry.poses {
                Some(p) => load_pose_catalog(p).map_err(|source| PipelineError::Mesh { path: p.clone(), source })?,
                None => stable_poses(&mesh).map_err(|source| PipelineError::Mesh { path: entry.mesh.clone(), source })?,
            };
            if poses.is_empty() {
                return Err(PipelineError::Mesh { path: entry.mesh.clone(), source: GeometryError::DegenerateHull("no stable pose".into()) });
            }
            Ok(CatalogEntry { mesh: Arc::new(mesh), poses })
        })
        .collect()
}

/// Randomized environment, placed parts with materials, and defects for one scene.
pub fn build_scene(cfg: &GenConfig, base: &SceneGraph, catalog: &[CatalogEntry], index: u32) -> Result<SceneGraph, PipelineError> {
    let stream = |purpose: &str| RngStream::new(cfg.master_seed, index as u64, purpose);
    let mut scene = randomize_environment(base, cfg, &stream("environment"));
    scene.scene_index = index;

    let mut s = stream("placement");
    let stage = StageBounds { half_extent: cfg.stage.extent };
    let count = cfg.parts.per_scene.sample(&mut s);
    for k in 0..count {
        let entry = &catalog[s.index(catalog.len())];
        let pose = entry.poses[s.index(entry.poses.len())];
        match place_part(k, &entry.mesh, &pose, &stage, &mut s, &scene.parts, cfg.parts.max_attempts) {
            Ok(p) => scene.parts.push(p),
            Err(e) => log::debug!("scene {index}: part {k} not placed: {e}"),
        }
    }

    let materials = stream("materials");
    let defects = stream("defects");
    let mut next_id = 1u32;
    let mut parts: Vec<PartInstance> = Vec::with_capacity(scene.parts.len());
    for (k, part) in scene.parts.iter().enumerate() {
        let mut part = randomize_part_material(part, &mut materials.child(k), &cfg.parts.material);
        let mut s = defects.child(k);
        for spec in &cfg.defects {
            for _ in 0..spec.per_part.sample(&mut s) {
                let build = |e: MaterialError| PipelineError::Build { scene: index, message: e.to_string() };
                let d = compose_break(&mut s, spec, next_id).map_err(build)?;
                part = apply_defect(&part, d, &mut s).map_err(build)?;
                next_id += 1;
            }
        }
        parts.push(part);
    }
    scene.parts = parts;
    Ok(scene)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub scenes: u32,
    pub parts: usize,
    pub defects: usize,
    pub views: usize,
    pub rendered: usize,
    pub skipped: usize,
    pub annotations: usize,
    pub train: usize,
    pub test: usize,
    pub manifest: PathBuf,
}

struct SceneResult {
    records: Vec<ImageRecord>,
    parts: usize,
    defects: usize,
    views: usize,
}

pub fn image_name(scene: u32, camera: u32) -> String {
    format!("s{scene:06}_c{camera:02}")
}

fn run_scene(
    cfg: &GenConfig,
    base: &SceneGraph,
    catalog: &[CatalogEntry],
    index: u32,
    out: &Path,
) -> Result<SceneResult, PipelineError> {
    let scene = build_scene(cfg, base, catalog, index)?;
    let mut records = Vec::new();
    for c in 0..scene.cameras.len() {
        let camera = c as u32;
        let view_err = |message: String| PipelineError::View { scene: index, camera, message };
        let mut settings = cfg.render.clone();
        settings.seed = cfg.master_seed;
        settings.camera = camera;
        let v = verify_and_cull(&scene, c, &settings, &cfg.visibility).map_err(|e: RenderError| view_err(e.to_string()))?;
        if !v.render && !cfg.output.allow_healthy {
            continue;
        }
        let name = image_name(index, camera);
        let hdr = render(&v.scene, &v.scene.cameras[c], &settings).map_err(|e| view_err(e.to_string()))?;
        let image = format!("images/{name}.png");
        write_png_rgb(&out.join(&image), &tonemap(&hdr, settings.exposure)).map_err(|e| view_err(e.to_string()))?;
        if settings.write_pfm {
            write_pfm(&out.join(format!("images/{name}.pfm")), &hdr).map_err(|e| view_err(e.to_string()))?;
        }
        let mut annotations = Vec::with_capacity(v.visible.len());
        for mask in &v.visible {
            let (p, d) = v.scene.find_defect(mask.defect_id).expect("visible defects are in the scene");
            let class = &v.scene.parts[p].defects[d].class_label;
            let mask_path = format!("masks/{name}_d{:04}.png", mask.defect_id);
            write_mask_png(&out.join(&mask_path), mask)?;
            annotations.push(Annotation::from_mask(mask, class, &mask_path)?);
        }
        records.push(ImageRecord { image, scene: index, camera, split: Split::Train, annotations });
    }
    Ok(SceneResult { records, parts: scene.parts.len(), defects: scene.defect_count(), views: scene.cameras.len() })
}

/// Generates the dataset into `out` using `jobs` worker threads and returns
/// counts. Writes `images/`, `masks/`, `manifest.jsonl` and `summary.json`.
pub fn generate(cfg: &GenConfig, out: &Path, jobs: usize) -> Result<GenerateSummary, PipelineError> {
    for sub in ["images", "masks"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io { path: dir, message: e.to_string() })?;
    }
    let catalog = load_catalog(cfg)?;
    let base = build_default_stage(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<SceneResult> = pool.install(|| {
        (0..cfg.scene_count)
            .into_par_iter()
            .map(|i| {
                let r = run_scene(cfg, &base, &catalog, i, out);
                if let Ok(r) = &r {
                    log::info!("scene {i}: {} of {} views rendered", r.records.len(), r.views);
                }
                r
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut summary = GenerateSummary { scenes: cfg.scene_count, ..Default::default() };
    let mut records = Vec::new();
    for r in results {
        summary.parts += r.parts;
        summary.defects += r.defects;
        summary.views += r.views;
        records.extend(r.records);
    }
    summary.rendered = records.len();
    summary.skipped = summary.views - summary.rendered;
    summary.manifest = PathBuf::from("manifest.jsonl");
    let manifest_path = out.join(&summary.manifest);
    if records.is_empty() {
        std::fs::write(&manifest_path, "").map_err(|e| PipelineError::Io { path: manifest_path.clone(), message: e.to_string() })?;
    } else {
        let mut split_stream = RngStream::new(cfg.master_seed, 0, "split");
        let m = export_manifest(records, cfg.output.splits, &mut split_stream, &manifest_path)?;
        let c = m.counts();
        summary.annotations = c.annotations;
        summary.train = c.train;
        summary.test = c.test;
    }
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
