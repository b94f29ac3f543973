//! Annotation-aware image augmentation.
//!
//! An [`AugmentSpec`] is an ordered list of operations, each applied with its
//! own probability and with parameters drawn from `[min, max]` ranges.
//! Photometric operations (noise, blur, contrast, color jitter, cutout) never
//! touch boxes. Geometric operations (flip, zoom, translate, rotate, shear)
//! map each box's four corners, re-tighten, clip to the frame and drop boxes
//! left with no area. Pixels sampled from outside the source frame take the
//! nearest edge value.

use crate::annotate::{read_manifest, Annotation, AnnotateError, DatasetManifest, ImageRecord};
use crate::config::{CountParam, Param};
use crate::render::{read_png_rgb, write_png_rgb, Rgb8Image};
use crate::stream::RngStream;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("ops[{index}] ({op}): {message}")]
    Invalid { index: usize, op: &'static str, message: String },
    #[error("spec syntax: {0}")]
    Syntax(String),
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Manifest(#[from] AnnotateError),
}

fn always() -> f64 {
    1.0
}

fn fixed(v: f64) -> Param {
    Param::Fixed(v)
}

/// One augmentation step. `probability` defaults to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentOp {
    /// Additive Gaussian noise, `sigma` in display units (0..1).
    Noise {
        sigma: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Gaussian blur, `sigma` in pixels.
    Blur {
        sigma: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Scales deviations from the mean gray level.
    Contrast {
        factor: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Brightness gain, saturation gain and hue rotation in degrees.
    ColorJitter {
        #[serde(default = "unit")]
        brightness: Param,
        #[serde(default = "unit")]
        saturation: Param,
        #[serde(default = "zero")]
        hue_deg: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Gray squares with side `size` × the shorter image side.
    Cutout {
        size: Param,
        count: CountParam,
        #[serde(default = "always")]
        probability: f64,
    },
    Flip {
        #[serde(default = "yes")]
        horizontal: bool,
        #[serde(default)]
        vertical: bool,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Scale about the image center.
    Zoom {
        factor: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Shift as a fraction of width and height.
    Translate {
        #[serde(default = "zero")]
        x: Param,
        #[serde(default = "zero")]
        y: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Rotation about the image center, degrees, clockwise on screen.
    Rotate {
        degrees: Param,
        #[serde(default = "always")]
        probability: f64,
    },
    /// Shear factors about the image center.
    Shear {
        #[serde(default = "zero")]
        x: Param,
        #[serde(default = "zero")]
        y: Param,
        #[serde(default = "always")]
        probability: f64,
    },
}

fn unit() -> Param {
    fixed(1.0)
}
fn zero() -> Param {
    fixed(0.0)
}
fn yes() -> bool {
    true
}

impl AugmentOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentOp::Noise { .. } => "noise",
            AugmentOp::Blur { .. } => "blur",
            AugmentOp::Contrast { .. } => "contrast",
            AugmentOp::ColorJitter { .. } => "color_jitter",
            AugmentOp::Cutout { .. } => "cutout",
            AugmentOp::Flip { .. } => "flip",
            AugmentOp::Zoom { .. } => "zoom",
            AugmentOp::Translate { .. } => "translate",
            AugmentOp::Rotate { .. } => "rotate",
            AugmentOp::Shear { .. } => "shear",
        }
    }

    pub fn probability(&self) -> f64 {
        match *self {
            AugmentOp::Noise { probability, .. }
            | AugmentOp::Blur { probability, .. }
            | AugmentOp::Contrast { probability, .. }
            | AugmentOp::ColorJitter { probability, .. }
            | AugmentOp::Cutout { probability, .. }
            | AugmentOp::Flip { probability, .. }
            | AugmentOp::Zoom { probability, .. }
            | AugmentOp::Translate { probability, .. }
            | AugmentOp::Rotate { probability, .. }
            | AugmentOp::Shear { probability, .. } => probability,
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            AugmentOp::Flip { .. } | AugmentOp::Zoom { .. } | AugmentOp::Translate { .. } | AugmentOp::Rotate { .. } | AugmentOp::Shear { .. }
        )
    }

    fn validate(&self, index: usize) -> Result<(), AugmentError> {
        let op = self.name();
        let err = |message: &str| AugmentError::Invalid { index, op, message: message.to_string() };
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(err("probability must lie in [0, 1]"));
        }
        let range = |name: &str, r: &Param, lo: f64, hi: f64| {
            if !(r.min().is_finite() && r.max().is_finite()) {
                return Err(err(&format!("{name} must be finite")));
            }
            if r.min() > r.max() {
                return Err(err(&format!("{name}: min > max")));
            }
            if r.min() < lo || r.max() > hi {
                return Err(err(&format!("{name} must lie in [{lo}, {hi}]")));
            }
            Ok(())
        };
        let inf = f64::INFINITY;
        match self {
            AugmentOp::Noise { sigma, .. } => range("sigma", sigma, 0.0, 1.0),
            AugmentOp::Blur { sigma, .. } => range("sigma", sigma, 0.0, 50.0),
            AugmentOp::Contrast { factor, .. } => range("factor", factor, 0.0, inf),
            AugmentOp::ColorJitter { brightness, saturation, hue_deg, .. } => {
                range("brightness", brightness, 0.0, inf)?;
                range("saturation", saturation, 0.0, inf)?;
                range("hue_deg", hue_deg, -180.0, 180.0)
            }
            AugmentOp::Cutout { size, count, .. } => {
                range("size", size, 0.0, 1.0)?;
                if count.min() > count.max() {
                    return Err(err("count: min > max"));
                }
                Ok(())
            }
            AugmentOp::Flip { .. } => Ok(()),
            AugmentOp::Zoom { factor, .. } => {
                range("factor", factor, 0.0, inf)?;
                if factor.min() <= 0.0 {
                    return Err(err("factor must be > 0"));
                }
                Ok(())
            }
            AugmentOp::Translate { x, y, .. } => {
                range("x", x, -inf, inf)?;
                range("y", y, -inf, inf)
            }
            AugmentOp::Rotate { degrees, .. } => range("degrees", degrees, -inf, inf),
            AugmentOp::Shear { x, y, .. } => {
                range("x", x, -10.0, 10.0)?;
                range("y", y, -10.0, 10.0)?;
                if x.min() * y.max() >= 1.0 || x.max() * y.min() >= 1.0 || x.min() * y.min() >= 1.0 || x.max() * y.max() >= 1.0 {
                    return Err(err("x * y must stay below 1 (singular shear)"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub ops: Vec<AugmentOp>,
}

impl Default for AugmentSpec {
    /// The built-in suite: every op with moderate magnitudes.
    fn default() -> Self {
        use AugmentOp::*;
        let u = |a: f64, b: f64| Param::Uniform([a, b]);
        AugmentSpec {
            ops: vec![
                Flip { horizontal: true, vertical: false, probability: 0.5 },
                Flip { horizontal: false, vertical: true, probability: 0.5 },
                Zoom { factor: u(0.9, 1.2), probability: 0.5 },
                Translate { x: u(-0.1, 0.1), y: u(-0.1, 0.1), probability: 0.5 },
                Rotate { degrees: u(-15.0, 15.0), probability: 0.5 },
                Shear { x: u(-0.1, 0.1), y: u(-0.1, 0.1), probability: 0.3 },
                ColorJitter { brightness: u(0.8, 1.2), saturation: u(0.8, 1.2), hue_deg: u(-10.0, 10.0), probability: 0.5 },
                Contrast { factor: u(0.8, 1.25), probability: 0.5 },
                Blur { sigma: u(0.3, 1.2), probability: 0.3 },
                Noise { sigma: u(0.0, 0.03), probability: 0.5 },
                Cutout { size: u(0.05, 0.15), count: CountParam::Uniform([1, 3]), probability: 0.3 },
            ],
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec { ops: vec![] }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        self.ops.iter().enumerate().try_for_each(|(i, op)| op.validate(i))
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let spec: AugmentSpec = serde_json::from_str(text).map_err(|e| AugmentError::Syntax(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// float working image

#[derive(Debug, Clone, PartialEq)]
struct Work {
    w: usize,
    h: usize,
    px: Vec<[f32; 3]>,
}

impl Work {
    fn from_rgb8(img: &Rgb8Image) -> Self {
        let px = img.data.chunks_exact(3).map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]).collect();
        Work { w: img.width as usize, h: img.height as usize, px }
    }

    fn to_rgb8(&self) -> Rgb8Image {
        let data = self.px.iter().flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
        Rgb8Image { width: self.w as u32, height: self.h as u32, data }
    }

    fn at(&self, x: isize, y: isize) -> [f32; 3] {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.px[y * self.w + x]
    }

    /// Bilinear sample at continuous texel coordinates, edge-clamped.
    fn bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let (a, b, c, d) = (self.at(xi, yi), self.at(xi + 1, yi), self.at(xi, yi + 1), self.at(xi + 1, yi + 1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]
}

// ---------------------------------------------------------------------------
// photometric

fn add_noise(img: &mut Work, sigma: f64, s: &mut RngStream) {
    if sigma <= 0.0 {
        return;
    }
    for p in img.px.iter_mut() {
        for v in p.iter_mut() {
            *v += s.normal(0.0, sigma) as f32;
        }
    }
}

fn gaussian_blur(img: &mut Work, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &Work, horizontal: bool| {
        let mut out = src.clone();
        for y in 0..src.h as isize {
            for x in 0..src.w as isize {
                let mut acc = [0.0f32; 3];
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as isize - r;
                    let p = if horizontal { src.at(x + o, y) } else { src.at(x, y + o) };
                    for c in 0..3 {
                        acc[c] += k * p[c];
                    }
                }
                out.px[y as usize * src.w + x as usize] = acc;
            }
        }
        out
    };
    let h = pass(img, true);
    *img = pass(&h, false);
}

fn contrast(img: &mut Work, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let mean = img.px.iter().map(|&p| luma(p) as f64).sum::<f64>() / img.px.len().max(1) as f64;
    let (m, f) = (mean as f32, factor as f32);
    for p in img.px.iter_mut() {
        for v in p.iter_mut() {
            *v = m + (*v - m) * f;
        }
    }
}

fn color_jitter(img: &mut Work, brightness: f64, saturation: f64, hue_deg: f64) {
    if brightness == 1.0 && saturation == 1.0 && hue_deg == 0.0 {
        return;
    }
    // hue: rotation about the gray axis
    let (sin, cos) = hue_deg.to_radians().sin_cos();
    let (a, b) = ((1.0 - cos) / 3.0, sin / 3f64.sqrt());
    let m = [
        [cos + a, a - b, a + b],
        [a + b, cos + a, a - b],
        [a - b, a + b, cos + a],
    ];
    for p in img.px.iter_mut() {
        let q = [0, 1, 2].map(|r| (m[r][0] * p[0] as f64 + m[r][1] * p[1] as f64 + m[r][2] * p[2] as f64) as f32);
        let g = luma(q);
        *p = q.map(|v| (g + (v - g) * saturation as f32) * brightness as f32);
    }
}

fn cutout(img: &mut Work, size: f64, count: u32, s: &mut RngStream) {
    let side = (size * img.w.min(img.h) as f64).round() as usize;
    if side == 0 {
        return;
    }
    for _ in 0..count {
        let cx = s.uniform_in(0.0, img.w as f64);
        let cy = s.uniform_in(0.0, img.h as f64);
        let x0 = (cx - side as f64 / 2.0).round().max(0.0) as usize;
        let y0 = (cy - side as f64 / 2.0).round().max(0.0) as usize;
        for y in y0..(y0 + side).min(img.h) {
            for x in x0..(x0 + side).min(img.w) {
                img.px[y * img.w + x] = [0.5; 3];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// geometric

/// Affine map on continuous pixel coordinates: `p' = m · p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.m[0][0] * x + self.m[0][1] * y + self.t[0], self.m[1][0] * x + self.m[1][1] * y + self.t[1])
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Affine> {
        let d = self.det();
        if d.abs() < 1e-12 || !d.is_finite() {
            return None;
        }
        let m = [[self.m[1][1] / d, -self.m[0][1] / d], [-self.m[1][0] / d, self.m[0][0] / d]];
        let t = [-(m[0][0] * self.t[0] + m[0][1] * self.t[1]), -(m[1][0] * self.t[0] + m[1][1] * self.t[1])];
        Some(Affine { m, t })
    }

    /// Linear part `m` applied about the point `(cx, cy)`, then shifted by `shift`.
    pub fn about(m: [[f64; 2]; 2], cx: f64, cy: f64, shift: [f64; 2]) -> Affine {
        let (px, py) = (m[0][0] * cx + m[0][1] * cy, m[1][0] * cx + m[1][1] * cy);
        Affine { m, t: [cx - px + shift[0], cy - py + shift[1]] }
    }
}

fn warp(img: &Work, a: &Affine) -> Work {
    if *a == Affine::IDENTITY {
        return img.clone();
    }
    let inv = a.inverse().expect("validated transforms are invertible");
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
            out.px[y * img.w + x] = img.bilinear(sx - 0.5, sy - 0.5);
        }
    }
    out
}

fn flip_pixels(img: &Work, horizontal: bool, vertical: bool) -> Work {
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            let sx = if horizontal { img.w - 1 - x } else { x };
            let sy = if vertical { img.h - 1 - y } else { y };
            out.px[y * img.w + x] = img.px[sy * img.w + sx];
        }
    }
    out
}

/// Maps a half-open integer box through `a`, re-tightens over its corners and
/// clips to the frame. `None` when nothing is left.
pub fn transform_bbox(b: [u32; 4], a: &Affine, width: u32, height: u32) -> Option<[u32; 4]> {
    const EPS: f64 = 1e-9;
    let corners = [(b[0], b[1]), (b[2], b[1]), (b[0], b[3]), (b[2], b[3])].map(|(x, y)| a.apply(x as f64, y as f64));
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let x0 = (x0 + EPS).floor().max(0.0);
    let y0 = (y0 + EPS).floor().max(0.0);
    let x1 = (x1 - EPS).ceil().min(width as f64);
    let y1 = (y1 - EPS).ceil().min(height as f64);
    (x0 < x1 && y0 < y1).then(|| [x0 as u32, y0 as u32, x1 as u32, y1 as u32])
}

fn transform_annotations(anns: &[Annotation], a: &Affine, width: u32, height: u32) -> Vec<Annotation> {
    let det = a.det().abs();
    anns.iter()
        .filter_map(|ann| {
            let bbox = transform_bbox(ann.bbox, a, width, height)?;
            let box_area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]);
            let area = ((ann.area as f64 * det).round() as u32).clamp(1, box_area);
            // masks are not warped; the reference no longer matches
            Some(Annotation { bbox, area, mask: String::new(), ..ann.clone() })
        })
        .collect()
}

/// The affine transform a geometric op stands for, with parameters drawn from `s`.
fn geometric_transform(op: &AugmentOp, width: u32, height: u32, s: &mut RngStream) -> Affine {
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    match op {
        AugmentOp::Flip { horizontal, vertical, .. } => {
            let fx = if *horizontal { -1.0 } else { 1.0 };
            let fy = if *vertical { -1.0 } else { 1.0 };
            Affine::about([[fx, 0.0], [0.0, fy]], cx, cy, [0.0, 0.0])
        }
        AugmentOp::Zoom { factor, .. } => {
            let z = factor.sample(s);
            Affine::about([[z, 0.0], [0.0, z]], cx, cy, [0.0, 0.0])
        }
        AugmentOp::Translate { x, y, .. } => {
            let (tx, ty) = (x.sample(s) * w, y.sample(s) * h);
            Affine { t: [tx, ty], ..Affine::IDENTITY }
        }
        AugmentOp::Rotate { degrees, .. } => {
            let (sin, cos) = degrees.sample(s).to_radians().sin_cos();
            Affine::about([[cos, -sin], [sin, cos]], cx, cy, [0.0, 0.0])
        }
        AugmentOp::Shear { x, y, .. } => {
            let (sx, sy) = (x.sample(s), y.sample(s));
            Affine::about([[1.0, sx], [sy, 1.0]], cx, cy, [0.0, 0.0])
        }
        _ => Affine::IDENTITY,
    }
}

/// Applies `spec` to one image and its annotations. Each op draws from its
/// own child stream, so adding an op leaves the draws of the others intact.
pub fn augment(
    image: &Rgb8Image,
    annotations: &[Annotation],
    spec: &AugmentSpec,
    stream: &RngStream,
) -> (Rgb8Image, Vec<Annotation>) {
    let mut img = Work::from_rgb8(image);
    let mut anns = annotations.to_vec();
    let mut touched = false;
    for (i, op) in spec.ops.iter().enumerate() {
        let mut s = stream.child(i);
        if !s.bernoulli(op.probability()) {
            continue;
        }
        touched = true;
        match op {
            AugmentOp::Noise { sigma, .. } => add_noise(&mut img, sigma.sample(&mut s), &mut s),
            AugmentOp::Blur { sigma, .. } => gaussian_blur(&mut img, sigma.sample(&mut s)),
            AugmentOp::Contrast { factor, .. } => contrast(&mut img, factor.sample(&mut s)),
            AugmentOp::ColorJitter { brightness, saturation, hue_deg, .. } => {
                let (b, sat, hue) = (brightness.sample(&mut s), saturation.sample(&mut s), hue_deg.sample(&mut s));
                color_jitter(&mut img, b, sat, hue)
            }
            AugmentOp::Cutout { size, count, .. } => {
                let (side, n) = (size.sample(&mut s), count.sample(&mut s));
                cutout(&mut img, side, n, &mut s)
            }
            AugmentOp::Flip { horizontal, vertical, .. } => {
                let a = geometric_transform(op, image.width, image.height, &mut s);
                img = flip_pixels(&img, *horizontal, *vertical);
                anns = transform_annotations(&anns, &a, image.width, image.height);
            }
            _ => {
                let a = geometric_transform(op, image.width, image.height, &mut s);
                img = warp(&img, &a);
                if a != Affine::IDENTITY {
                    anns = transform_annotations(&anns, &a, image.width, image.height);
                }
            }
        }
    }
    if !touched {
        return (image.clone(), anns);
    }
    (img.to_rgb8(), anns)
}

/// Summary of [`augment_manifest`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub images: usize,
    pub annotations_in: usize,
    pub annotations_out: usize,
    pub dropped_images: usize,
}

/// Materializes `copies` augmented variants of every record in the manifest.
/// Images are resolved relative to the manifest; outputs go to
/// `out_dir/images` and `out_dir/manifest.jsonl`. Records whose boxes all
/// leave the frame are dropped unless `keep_empty` is set.
pub fn augment_manifest(
    manifest_path: &Path,
    spec: &AugmentSpec,
    out_dir: &Path,
    seed: u64,
    copies: u32,
    keep_empty: bool,
) -> Result<(DatasetManifest, AugmentSummary), AugmentError> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| AugmentError::Image { path: images_dir.clone(), source })?;
    let mut out = Vec::new();
    let mut summary = AugmentSummary::default();
    for (index, rec) in manifest.records.iter().enumerate() {
        let src = base.join(&rec.image);
        let image = read_png_rgb(&src).map_err(|source| AugmentError::Image { path: src.clone(), source })?;
        summary.annotations_in += rec.annotations.len() * copies as usize;
        for copy in 0..copies {
            let stream = RngStream::new(seed, index as u64, "augment").child(copy);
            let (img, anns) = augment(&image, &rec.annotations, spec, &stream);
            if anns.is_empty() && !rec.annotations.is_empty() && !keep_empty {
                summary.dropped_images += 1;
                continue;
            }
            let stem = Path::new(&rec.image).file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let name = format!("images/{stem}_aug{copy:02}.png");
            let dst = out_dir.join(&name);
            write_png_rgb(&dst, &img).map_err(|source| AugmentError::Image { path: dst.clone(), source })?;
            summary.images += 1;
            summary.annotations_out += anns.len();
            out.push(ImageRecord { image: name, annotations: anns, ..rec.clone() });
        }
    }
    let augmented = DatasetManifest { records: out };
    let path = out_dir.join("manifest.jsonl");
    std::fs::write(&path, augmented.to_json_lines()).map_err(|source| AugmentError::Image { path, source })?;
    Ok((augmented, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> Rgb8Image {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) * 3 % 256) as u8]);
            }
        }
        Rgb8Image { width: w, height: h, data }
    }

    fn ann(bbox: [u32; 4]) -> Annotation {
        Annotation { id: 1, class: "break".into(), bbox, area: (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]), mask: "m.png".into() }
    }

    fn only(op: AugmentOp) -> AugmentSpec {
        AugmentSpec { ops: vec![op] }
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = gradient(37, 23);
        let anns = vec![ann([0, 0, 5, 5]), ann([10, 3, 37, 23])];
        let spec = AugmentSpec {
            ops: vec![
                AugmentOp::Flip { horizontal: true, vertical: true, probability: 1.0 },
                AugmentOp::Flip { horizontal: true, vertical: true, probability: 1.0 },
            ],
        };
        let (once, a1) = augment(&img, &anns, &only(spec.ops[0].clone()), &RngStream::new(0, 0, "a"));
        assert_ne!(once, img);
        assert_eq!(a1[0].bbox, [32, 18, 37, 23]);
        let (twice, a2) = augment(&img, &anns, &spec, &RngStream::new(0, 0, "a"));
        assert_eq!(twice, img);
        assert_eq!(a2.iter().map(|a| a.bbox).collect::<Vec<_>>(), anns.iter().map(|a| a.bbox).collect::<Vec<_>>());
    }

    #[test]
    fn identity_parameters_change_nothing() {
        let img = gradient(31, 17);
        let anns = vec![ann([3, 4, 9, 12])];
        let spec = AugmentSpec {
            ops: vec![
                AugmentOp::Rotate { degrees: fixed(0.0), probability: 1.0 },
                AugmentOp::Zoom { factor: fixed(1.0), probability: 1.0 },
                AugmentOp::Translate { x: fixed(0.0), y: fixed(0.0), probability: 1.0 },
                AugmentOp::Shear { x: fixed(0.0), y: fixed(0.0), probability: 1.0 },
                AugmentOp::Noise { sigma: fixed(0.0), probability: 1.0 },
                AugmentOp::Blur { sigma: fixed(0.0), probability: 1.0 },
                AugmentOp::Contrast { factor: fixed(1.0), probability: 1.0 },
                AugmentOp::ColorJitter { brightness: fixed(1.0), saturation: fixed(1.0), hue_deg: fixed(0.0), probability: 1.0 },
                AugmentOp::Cutout { size: fixed(0.0), count: CountParam::Fixed(2), probability: 1.0 },
                AugmentOp::Flip { horizontal: true, vertical: false, probability: 0.0 },
            ],
        };
        spec.validate().unwrap();
        let (out, a) = augment(&img, &anns, &spec, &RngStream::new(0, 0, "a"));
        assert_eq!(out, img);
        assert_eq!(a, anns);
        assert_eq!(augment(&img, &anns, &AugmentSpec::identity(), &RngStream::new(0, 0, "a")).0, img);
    }

    #[test]
    fn translate_by_width_drops_everything() {
        let img = gradient(20, 10);
        let anns = vec![ann([0, 0, 20, 10]), ann([5, 5, 6, 6])];
        let (_, a) = augment(&img, &anns, &only(AugmentOp::Translate { x: fixed(1.0), y: fixed(0.0), probability: 1.0 }), &RngStream::new(0, 0, "a"));
        assert!(a.is_empty());
        let (_, a) = augment(&img, &anns, &only(AugmentOp::Translate { x: fixed(0.5), y: fixed(0.0), probability: 1.0 }), &RngStream::new(0, 0, "a"));
        assert_eq!(a.iter().map(|a| a.bbox).collect::<Vec<_>>(), vec![[10, 0, 20, 10], [15, 5, 16, 6]]);
        assert!(a.iter().all(|a| a.mask.is_empty()));
    }

    #[test]
    fn photometric_ops_keep_boxes() {
        let img = gradient(24, 24);
        let anns = vec![ann([2, 2, 8, 9])];
        for op in [
            AugmentOp::Noise { sigma: fixed(0.1), probability: 1.0 },
            AugmentOp::Blur { sigma: fixed(1.5), probability: 1.0 },
            AugmentOp::Contrast { factor: fixed(1.5), probability: 1.0 },
            AugmentOp::ColorJitter { brightness: fixed(1.2), saturation: fixed(0.5), hue_deg: fixed(30.0), probability: 1.0 },
            AugmentOp::Cutout { size: fixed(0.3), count: CountParam::Fixed(2), probability: 1.0 },
        ] {
            let (out, a) = augment(&img, &anns, &only(op.clone()), &RngStream::new(0, 0, "a"));
            assert_ne!(out, img, "{}", op.name());
            assert_eq!(a, anns);
        }
    }

    #[test]
    fn deterministic_per_stream() {
        let img = gradient(30, 20);
        let anns = vec![ann([4, 4, 12, 10])];
        let spec = AugmentSpec::default();
        spec.validate().unwrap();
        let a = augment(&img, &anns, &spec, &RngStream::new(1, 2, "a"));
        let b = augment(&img, &anns, &spec, &RngStream::new(1, 2, "a"));
        assert_eq!(a, b);
    }

    #[test]
    fn blur_preserves_uniform_images() {
        let img = Rgb8Image { width: 9, height: 7, data: vec![77; 9 * 7 * 3] };
        let (out, _) = augment(&img, &[], &only(AugmentOp::Blur { sigma: fixed(2.0), probability: 1.0 }), &RngStream::new(0, 0, "a"));
        assert_eq!(out, img);
    }

    #[test]
    fn spec_json_and_validation() {
        let spec = AugmentSpec::from_json(r#"{"ops": [{"op": "rotate", "degrees": [-10, 10], "probability": 0.5}, {"op": "flip"}]}"#).unwrap();
        assert_eq!(spec.ops.len(), 2);
        assert_eq!(spec.ops[1], AugmentOp::Flip { horizontal: true, vertical: false, probability: 1.0 });
        assert!(AugmentSpec::from_json(r#"{"ops": [{"op": "flip", "probability": 1.5}]}"#).is_err());
        assert!(AugmentSpec::from_json(r#"{"ops": [{"op": "zoom", "factor": [1.2, 0.8]}]}"#).is_err());
        assert!(AugmentSpec::from_json(r#"{"ops": [{"op": "zoom", "factor": 0}]}"#).is_err());
        assert!(AugmentSpec::from_json(r#"{"ops": [{"op": "warp"}]}"#).is_err());
        assert!(AugmentSpec::from_json(r#"{"ops": [{"op": "flip", "colour": 1}]}"#).is_err());
        let round: AugmentSpec = serde_json::from_str(&serde_json::to_string(&AugmentSpec::default()).unwrap()).unwrap();
        assert_eq!(round, AugmentSpec::default());
    }

    fn arb_geometric() -> impl Strategy<Value = AugmentOp> {
        prop_oneof![
            (any::<bool>(), any::<bool>()).prop_map(|(h, v)| AugmentOp::Flip { horizontal: h, vertical: v, probability: 1.0 }),
            (0.3f64..3.0).prop_map(|z| AugmentOp::Zoom { factor: fixed(z), probability: 1.0 }),
            (-1.2f64..1.2, -1.2f64..1.2).prop_map(|(x, y)| AugmentOp::Translate { x: fixed(x), y: fixed(y), probability: 1.0 }),
            (-180.0f64..180.0).prop_map(|d| AugmentOp::Rotate { degrees: fixed(d), probability: 1.0 }),
            (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(x, y)| AugmentOp::Shear { x: fixed(x), y: fixed(y), probability: 1.0 }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn geometric_boxes_stay_in_frame(
            op in arb_geometric(),
            (w, h) in (8u32..48, 8u32..48),
            boxes in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..5),
        ) {
            let img = gradient(w, h);
            let anns: Vec<Annotation> = boxes.iter().map(|&(a, b, c, d)| {
                let x0 = (a * (w - 1) as f64) as u32;
                let y0 = (b * (h - 1) as f64) as u32;
                let x1 = x0 + 1 + (c * (w - 1 - x0) as f64) as u32;
                let y1 = y0 + 1 + (d * (h - 1 - y0) as f64) as u32;
                ann([x0, y0, x1, y1])
            }).collect();
            let (out, a) = augment(&img, &anns, &only(op), &RngStream::new(0, 0, "a"));
            prop_assert_eq!((out.width, out.height), (w, h));
            for x in &a {
                prop_assert!(x.bbox[0] < x.bbox[2] && x.bbox[1] < x.bbox[3]);
                prop_assert!(x.bbox[2] <= w && x.bbox[3] <= h);
            }
        }
    }
}
