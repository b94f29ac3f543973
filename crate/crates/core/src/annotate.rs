//! Visibility verification, labeling and dataset manifests.
//!
//! A defect is labeled from its defect pass: the pass is binarized, and the
//! defect counts as visible when the mask covers at least `min_area` pixels.
//! Boxes use half-open pixel coordinates `[x0, y0, x1, y1)`.

use crate::config::{RenderSettings, SplitFractions, VisibilityThresholds};
use crate::geometry::part_visible;
use crate::render::{render_defect_pass, ImageBuffer, RenderError};
use crate::scene::SceneGraph;
use crate::stream::RngStream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("binarization threshold must be > 0, got {0}")]
    Threshold(f64),
    #[error("mask of defect {0} is empty")]
    EmptyMask(u32),
    #[error("no records to export")]
    NoRecords,
    #[error("split fractions must lie in [0, 1] and sum to 1")]
    Fractions,
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotateError + '_ {
    move |source| AnnotateError::Io { path: path.to_path_buf(), source }
}

/// Binary per-defect visibility mask at render resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, each texel 0 or 1.
    pub texels: Vec<u8>,
    pub defect_id: u32,
}

impl DefectMask {
    pub fn empty(width: u32, height: u32, defect_id: u32) -> Self {
        Self { width, height, texels: vec![0; (width * height) as usize], defect_id }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.texels[(y * self.width + x) as usize] != 0
    }

    pub fn area(&self) -> u32 {
        self.texels.iter().map(|&t| t as u32).sum()
    }
}

/// Texel is 1 iff the pixel's linear luminance exceeds `threshold`.
pub fn binarize(buffer: &ImageBuffer, threshold: f64, defect_id: u32) -> Result<DefectMask, AnnotateError> {
    if !(threshold > 0.0) {
        return Err(AnnotateError::Threshold(threshold));
    }
    let texels = buffer.pixels.iter().map(|p| u8::from(p.luminance() > threshold)).collect();
    Ok(DefectMask { width: buffer.width, height: buffer.height, texels, defect_id })
}

/// Inclusive area test.
pub fn is_visible(mask: &DefectMask, min_area: u32) -> bool {
    mask.area() >= min_area
}

/// Outcome of content verification for one camera.
#[derive(Debug, Clone)]
pub struct Verification {
    /// Whether the view should be rendered.
    pub render: bool,
    /// Masks of the defects that stayed, in scene order.
    pub visible: Vec<DefectMask>,
    /// The scene with invisible defects removed.
    pub scene: SceneGraph,
}

/// Runs the defect pass for every defect on a part inside the camera frustum
/// and drops those whose mask is below the area threshold. Removing a defect
/// also removes its holes, which can change what other defects expose, so
/// the passes are repeated until no more defects are dropped.
pub fn verify_and_cull(
    scene: &SceneGraph,
    camera_index: usize,
    settings: &RenderSettings,
    thresholds: &VisibilityThresholds,
) -> Result<Verification, RenderError> {
    let camera = scene.cameras.get(camera_index).ok_or_else(|| RenderError::Settings(format!("no camera {camera_index}")))?;
    let [w, h] = camera.resolution;
    let min_area = thresholds.min_area_for(w, h);
    let mut culled = scene.clone();
    for part in culled.parts.iter_mut() {
        if !part_visible(camera, part) {
            part.defects.clear();
        }
    }
    loop {
        let mut visible = Vec::new();
        let mut dropped = Vec::new();
        for part in &culled.parts {
            for d in &part.defects {
                let pass = render_defect_pass(&culled, camera, d.id, settings)?;
                let mask = binarize(&pass, thresholds.binarize_threshold, d.id)
                    .map_err(|e| RenderError::Settings(e.to_string()))?;
                if is_visible(&mask, min_area) {
                    visible.push(mask);
                } else {
                    dropped.push(d.id);
                }
            }
        }
        if dropped.is_empty() {
            return Ok(Verification { render: !visible.is_empty(), visible, scene: culled });
        }
        for part in culled.parts.iter_mut() {
            part.defects.retain(|d| !dropped.contains(&d.id));
        }
    }
}

/// Tight half-open bounds `[x0, y0, x1, y1)` of the nonzero texels.
pub fn mask_to_bbox(mask: &DefectMask) -> Result<[u32; 4], AnnotateError> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 == 0 {
        return Err(AnnotateError::EmptyMask(mask.defect_id));
    }
    Ok([x0, y0, x1, y1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u32,
    pub class: String,
    pub bbox: [u32; 4],
    pub area: u32,
    /// Mask PNG path, relative to the manifest.
    #[serde(default)]
    pub mask: String,
}

impl Annotation {
    pub fn from_mask(mask: &DefectMask, class: &str, mask_path: &str) -> Result<Self, AnnotateError> {
        Ok(Self {
            id: mask.defect_id,
            class: class.to_string(),
            bbox: mask_to_bbox(mask)?,
            area: mask.area(),
            mask: mask_path.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub scene: u32,
    pub camera: u32,
    pub split: Split,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub images: usize,
    pub annotations: usize,
    pub train: usize,
    pub test: usize,
    pub scenes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn counts(&self) -> ManifestCounts {
        let scenes: std::collections::BTreeSet<u32> = self.records.iter().map(|r| r.scene).collect();
        ManifestCounts {
            images: self.records.len(),
            annotations: self.records.iter().map(|r| r.annotations.len()).sum(),
            train: self.records.iter().filter(|r| r.split == Split::Train).count(),
            test: self.records.iter().filter(|r| r.split == Split::Test).count(),
            scenes: scenes.len(),
        }
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Assigns whole scenes to splits. Scenes are shuffled by `stream`, then each
/// goes to the test split when that brings the test image count closer to its
/// target, otherwise to train.
pub fn assign_splits(records: &mut [ImageRecord], fractions: SplitFractions, stream: &mut RngStream) -> Result<(), AnnotateError> {
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(fractions.train) || !ok(fractions.test) || (fractions.train + fractions.test - 1.0).abs() > 1e-9 {
        return Err(AnnotateError::Fractions);
    }
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for r in records.iter() {
        *sizes.entry(r.scene).or_default() += 1;
    }
    let mut scenes: Vec<(u32, usize)> = sizes.into_iter().collect();
    scenes.shuffle(stream);
    let target = (fractions.test * records.len() as f64).round() as i64;
    let mut test_count = 0i64;
    let mut split_of = BTreeMap::new();
    for (scene, n) in scenes {
        let n = n as i64;
        let to_test = (test_count + n - target).abs() < (test_count - target).abs();
        if to_test {
            test_count += n;
        }
        split_of.insert(scene, if to_test { Split::Test } else { Split::Train });
    }
    for r in records.iter_mut() {
        r.split = split_of[&r.scene];
    }
    Ok(())
}

/// Assigns splits, orders records by (scene, camera) and writes the
/// JSON-lines manifest to `path`.
pub fn export_manifest(
    mut records: Vec<ImageRecord>,
    fractions: SplitFractions,
    stream: &mut RngStream,
    path: &Path,
) -> Result<DatasetManifest, AnnotateError> {
    if records.is_empty() {
        return Err(AnnotateError::NoRecords);
    }
    assign_splits(&mut records, fractions, stream)?;
    records.sort_by_key(|r| (r.scene, r.camera));
    let manifest = DatasetManifest { records };
    std::fs::write(path, manifest.to_json_lines()).map_err(io_err(path))?;
    let c = manifest.counts();
    log::info!("manifest {}: {} images ({} train / {} test), {} annotations", path.display(), c.images, c.train, c.test, c.annotations);
    Ok(manifest)
}

/// Reads a JSON-lines manifest. Blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest, AnnotateError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| AnnotateError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(DatasetManifest { records })
}

/// Writes a mask as a 1-bit grayscale PNG (white = defect).
pub fn write_mask_png(path: &Path, mask: &DefectMask) -> Result<(), AnnotateError> {
    let stride = mask.width.div_ceil(8) as usize;
    let mut packed = vec![0u8; stride * mask.height as usize];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                packed[y as usize * stride + (x / 8) as usize] |= 0x80 >> (x % 8);
            }
        }
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), mask.width, mask.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let to_io = |e: png::EncodingError| AnnotateError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&packed).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

/// Reads a mask written by [`write_mask_png`].
pub fn read_mask_png(path: &Path, defect_id: u32) -> Result<DefectMask, AnnotateError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let bad = |m: String| AnnotateError::Io { path: path.to_path_buf(), source: std::io::Error::other(m) };
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(bad(format!("expected grayscale, got {:?}", info.color_type)));
    }
    let mut mask = DefectMask::empty(info.width, info.height, defect_id);
    for y in 0..info.height {
        for x in 0..info.width {
            mask.texels[(y * info.width + x) as usize] = u8::from(buf[y as usize * info.line_size + x as usize] != 0);
        }
    }
    Ok(mask)
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AnnotateError> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AnnotateError::Io { path: path.to_path_buf(), source: e.into() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::math::Vec3;

    fn buffer(w: u32, h: u32, f: impl Fn(u32, u32) -> f64) -> ImageBuffer {
        let mut b = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                b.set(x, y, Vec3::splat(f(x, y)));
            }
        }
        b
    }

    fn mask_from(w: u32, h: u32, on: &[(u32, u32)]) -> DefectMask {
        let mut m = DefectMask::empty(w, h, 3);
        for &(x, y) in on {
            m.texels[(y * w + x) as usize] = 1;
        }
        m
    }

    #[test]
    fn binarize_cases() {
        assert_eq!(binarize(&buffer(8, 6, |_, _| 0.0), 0.5, 1).unwrap().area(), 0);
        assert_eq!(binarize(&buffer(8, 6, |_, _| 1.0), 0.5, 1).unwrap().area(), 48);
        assert_eq!(binarize(&buffer(8, 6, |x, _| if x < 4 { 1.0 } else { 0.0 }), 0.5, 1).unwrap().area(), 24);
        // strictly greater
        assert_eq!(binarize(&buffer(8, 6, |_, _| 0.5), 0.5, 1).unwrap().area(), 0);
        assert!(matches!(binarize(&buffer(2, 2, |_, _| 0.0), 0.0, 1), Err(AnnotateError::Threshold(_))));
    }

    #[test]
    fn visibility_is_inclusive() {
        let pts: Vec<(u32, u32)> = (0..50).map(|i| (i % 10, i / 10)).collect();
        assert!(!is_visible(&mask_from(10, 10, &[]), 50));
        assert!(is_visible(&mask_from(10, 10, &pts), 50));
        assert!(!is_visible(&mask_from(10, 10, &pts[..49]), 50));
    }

    #[test]
    fn bbox_cases() {
        assert_eq!(mask_to_bbox(&mask_from(32, 32, &[(10, 20)])).unwrap(), [10, 20, 11, 21]);
        let full: Vec<(u32, u32)> = (0..12).map(|i| (i % 4, i / 4)).collect();
        assert_eq!(mask_to_bbox(&mask_from(4, 3, &full)).unwrap(), [0, 0, 4, 3]);
        assert_eq!(mask_to_bbox(&mask_from(32, 32, &[(2, 3), (3, 3), (20, 25)])).unwrap(), [2, 3, 21, 26]);
        assert!(matches!(mask_to_bbox(&mask_from(4, 4, &[])), Err(AnnotateError::EmptyMask(3))));
    }

    fn records(sizes: &[usize]) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for (scene, &n) in sizes.iter().enumerate() {
            for camera in 0..n {
                out.push(ImageRecord {
                    image: format!("s{scene}_c{camera}.png"),
                    scene: scene as u32,
                    camera: camera as u32,
                    split: Split::Train,
                    annotations: vec![],
                });
            }
        }
        out
    }

    #[test]
    fn splits_are_scene_level_and_deterministic() {
        let sizes: Vec<usize> = (0..300).map(|i| 1 + i % 4).collect();
        let fr = SplitFractions { train: 0.8, test: 0.2 };
        let mut a = records(&sizes);
        assign_splits(&mut a, fr, &mut RngStream::new(3, 0, "split")).unwrap();
        let mut b = records(&sizes);
        assign_splits(&mut b, fr, &mut RngStream::new(3, 0, "split")).unwrap();
        assert_eq!(a, b);
        let mut per_scene: BTreeMap<u32, Split> = BTreeMap::new();
        for r in &a {
            assert_eq!(*per_scene.entry(r.scene).or_insert(r.split), r.split);
        }
        let test = a.iter().filter(|r| r.split == Split::Test).count() as i64;
        let target = (0.2 * a.len() as f64).round() as i64;
        assert!((test - target).abs() <= 2, "{test} vs {target}");

        let mut all = records(&sizes);
        assign_splits(&mut all, SplitFractions { train: 1.0, test: 0.0 }, &mut RngStream::new(3, 0, "split")).unwrap();
        assert!(all.iter().all(|r| r.split == Split::Train));
        assert!(assign_splits(&mut all, SplitFractions { train: 0.7, test: 0.7 }, &mut RngStream::new(3, 0, "split")).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut recs = records(&[2, 1]);
        recs[0].annotations.push(Annotation { id: 4, class: "break".into(), bbox: [1, 2, 5, 9], area: 17, mask: "m.png".into() });
        let m = export_manifest(recs, SplitFractions::default(), &mut RngStream::new(0, 0, "split"), &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        let line = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["image", "scene", "camera", "split", "annotations"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert!(export_manifest(vec![], SplitFractions::default(), &mut RngStream::new(0, 0, "split"), &path).is_err());
        std::fs::write(&path, "{\"image\": 1}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(AnnotateError::Malformed { line: 1, .. })));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let m = mask_from(13, 7, &[(0, 0), (12, 6), (5, 3), (8, 2)]);
        write_mask_png(&path, &m).unwrap();
        assert_eq!(read_mask_png(&path, 3).unwrap(), m);
    }

    #[test]
    fn verification_keeps_front_defect_and_skips_out_of_view() {
        let (w, h) = (120, 120);
        let scene = fixtures::flat_plate(0.1, true, w, h);
        let settings = fixtures::settings(w, h, 1);
        let th = VisibilityThresholds { binarize_threshold: 0.5, min_area: Some(20) };
        let v = verify_and_cull(&scene, 0, &settings, &th).unwrap();
        assert!(v.render);
        assert_eq!(v.visible.len(), 1);
        assert_eq!(v.scene.defect_count(), 1);

        let mut away = scene.clone();
        away.parts[0].pose.translation = Vec3::new(100.0, 0.0, 0.0);
        let v = verify_and_cull(&away, 0, &settings, &th).unwrap();
        assert!(!v.render && v.visible.is_empty());

        let hidden = fixtures::flat_plate(0.1, false, w, h);
        let v = verify_and_cull(&hidden, 0, &settings, &th).unwrap();
        assert!(!v.render);
        assert_eq!(v.scene.defect_count(), 0);
    }

    #[test]
    fn occluded_defect_is_removed() {
        let (w, h) = (120, 120);
        let mut scene = fixtures::flat_plate(0.1, true, w, h);
        // second defect far from the first, then a blocker above it
        let mut second = scene.parts[0].defects[0].clone();
        second.id = 2;
        let mut pl = second.placement.unwrap();
        pl.position = Vec3::new(0.15, 0.0, fixtures::PLATE_TOP);
        second.placement = Some(pl);
        scene.parts[0].defects.push(second);
        let mut blocker = crate::geometry::PartInstance::new(
            9,
            std::sync::Arc::new(crate::geometry::Mesh::cuboid(Vec3::new(0.15, 0.15, 0.01))),
            crate::geometry::Pose::new(crate::math::Quat::IDENTITY, Vec3::new(0.15, 0.0, 0.3)),
        );
        blocker.material = crate::materials::PbrMaterial::diffuse(Vec3::splat(0.5));
        scene.parts.push(blocker);
        let settings = fixtures::settings(w, h, 1);
        let pass = render_defect_pass(&scene, &scene.cameras[0], 2, &settings).unwrap();
        assert_eq!(pass.count_nonzero(), 0);
        let th = VisibilityThresholds { binarize_threshold: 0.5, min_area: Some(20) };
        let v = verify_and_cull(&scene, 0, &settings, &th).unwrap();
        assert!(v.render);
        assert_eq!(v.visible.iter().map(|m| m.defect_id).collect::<Vec<_>>(), vec![1]);
        assert_eq!(v.scene.parts[0].defects.len(), 1);
    }
}
