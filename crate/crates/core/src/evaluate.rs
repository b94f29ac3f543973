//! Detection scoring: intersection matching, precision/recall sweeps and
//! average precision.
//!
//! A prediction is a true positive when its box overlaps (positive area) a
//! ground-truth box that no higher-ranked prediction has claimed. Boxes are
//! half-open, so boxes that only share an edge do not overlap. AP is the
//! all-point area under the precision envelope; there is a single class, so
//! mAP and AP coincide.

use crate::annotate::DatasetManifest;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

/// Half-open pixel box `[x0, y0, x1, y1)`.
pub type BBox = [f64; 4];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth is empty; recall is undefined")]
    NoGroundTruth,
    #[error("no test sets given")]
    NoSets,
    #[error("checkpoint {index} has test sets {found:?}, expected {expected:?}")]
    InconsistentSets { index: usize, expected: Vec<String>, found: Vec<String> },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub fn valid_bbox(b: &BBox) -> bool {
    b.iter().all(|v| v.is_finite()) && b[0] < b[2] && b[1] < b[3]
}

/// Overlap area of two half-open boxes; 0 when they only touch.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLabel {
    TP,
    FP,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One label per prediction, in input order.
    pub labels: Vec<MatchLabel>,
    /// Index of the claimed ground truth per prediction.
    pub matched: Vec<Option<usize>>,
    pub unmatched_gt: usize,
}

/// Descending confidence; equal confidences keep input order.
fn rank(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Greedy matching for a single image. Each prediction, by rank, claims the
/// free ground truth it overlaps most (lowest index on ties).
pub fn match_image(preds: &[Prediction], gts: &[GroundTruth]) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::FP; preds.len()];
    let mut matched = vec![None; preds.len()];
    for i in rank(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let a = intersection_area(&preds[i].bbox, &gt.bbox);
            if a > 0.0 && best.is_none_or(|(_, b)| a > b) {
                best = Some((g, a));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            labels[i] = MatchLabel::TP;
            matched[i] = Some(g);
        }
    }
    MatchResult { labels, matched, unmatched_gt: taken.iter().filter(|t| !**t).count() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Points sorted by ascending threshold, one per distinct confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gt: usize,
}

impl PrCurve {
    /// Operating point when keeping predictions with confidence ≥ `t`.
    pub fn at_threshold(&self, t: f64) -> PrPoint {
        match self.points.iter().find(|p| p.threshold >= t) {
            Some(p) => PrPoint { threshold: t, ..*p },
            None => PrPoint { threshold: t, precision: 1.0, recall: 0.0, tp: 0, fp: 0, fn_: self.total_gt },
        }
    }
}

fn group_by_image<'a, T>(items: &'a [T], key: impl Fn(&T) -> &str) -> BTreeMap<&'a str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        map.entry(key(it)).or_default().push(i);
    }
    map
}

/// Labels every prediction by matching within its image.
pub fn label_predictions(preds: &[Prediction], gts: &[GroundTruth]) -> Vec<MatchLabel> {
    let gt_groups = group_by_image(gts, |g| g.image.as_str());
    let mut labels = vec![MatchLabel::FP; preds.len()];
    for (image, idx) in group_by_image(preds, |p| p.image.as_str()) {
        let Some(gidx) = gt_groups.get(image) else { continue };
        let p: Vec<Prediction> = idx.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<GroundTruth> = gidx.iter().map(|&i| gts[i].clone()).collect();
        for (k, l) in match_image(&p, &g).labels.into_iter().enumerate() {
            labels[idx[k]] = l;
        }
    }
    labels
}

/// Precision and recall at every distinct confidence. Greedy matching only
/// looks at higher-ranked predictions, so the predictions kept at a threshold
/// are labeled exactly as in the full matching and one pass suffices.
pub fn pr_curve(preds: &[Prediction], gts: &[GroundTruth]) -> Result<PrCurve, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let labels = label_predictions(preds, gts);
    let order = rank(preds);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        match labels[i] {
            MatchLabel::TP => tp += 1,
            MatchLabel::FP => fp += 1,
        }
        let last_of_level = order.get(k + 1).is_none_or(|&j| preds[j].confidence != preds[i].confidence);
        if last_of_level {
            points.push(PrPoint {
                threshold: preds[i].confidence,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / gts.len() as f64,
                tp,
                fp,
                fn_: gts.len() - tp,
            });
        }
    }
    points.reverse();
    Ok(PrCurve { points, total_gt: gts.len() })
}

/// All-point AP: `Σ (r_i − r_{i−1}) · max_{r' ≥ r_i} p(r')` over the distinct
/// recall levels, with `r_0 = 0`.
pub fn average_precision(curve: &PrCurve) -> f64 {
    // points by descending threshold have non-decreasing recall
    let pts: Vec<(f64, f64)> = curve.points.iter().rev().map(|p| (p.recall, p.precision)).collect();
    let mut envelope = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].1);
        envelope[i] = best;
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        if r > prev {
            ap += (r - prev) * envelope[i];
            prev = r;
        }
    }
    ap.clamp(0.0, 1.0)
}

/// Predictions and ground truth of one test set.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    /// Every image of the set, including healthy ones without ground truth.
    pub images: BTreeSet<String>,
    pub gts: Vec<GroundTruth>,
    pub preds: Vec<Prediction>,
}

impl EvalSet {
    pub fn from_manifest(manifest: &DatasetManifest, preds: Vec<Prediction>) -> Self {
        let mut set = EvalSet { preds, ..Default::default() };
        for r in &manifest.records {
            set.images.insert(r.image.clone());
            for a in &r.annotations {
                set.gts.push(GroundTruth { image: r.image.clone(), bbox: a.bbox.map(f64::from) });
            }
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub name: String,
    pub images: usize,
    pub defective: usize,
    pub healthy: usize,
    pub ground_truths: usize,
    pub predictions: usize,
    /// Predictions on images that are not part of the set.
    pub unknown_images: usize,
    pub ap: f64,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sets: Vec<SetReport>,
}

impl EvalReport {
    pub fn set_names(&self) -> Vec<String> {
        self.sets.iter().map(|s| s.name.clone()).collect()
    }

    /// Aligned plain-text table, one row per set.
    pub fn table(&self) -> String {
        let name_w = self.sets.iter().map(|s| s.name.len()).max().unwrap_or(0).max(8);
        let mut out = format!(
            "{:<name_w$}  {:>7}  {:>9}  {:>7}  {:>6}  {:>7}  {:>6}\n",
            "test set", "images", "defective", "healthy", "gt", "preds", "AP"
        );
        for s in &self.sets {
            out.push_str(&format!(
                "{:<name_w$}  {:>7}  {:>9}  {:>7}  {:>6}  {:>7}  {:>6.3}\n",
                s.name, s.images, s.defective, s.healthy, s.ground_truths, s.predictions, s.ap
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores each named set. Sets keep the given order.
pub fn transfer_report(sets: &[(String, EvalSet)]) -> Result<EvalReport, EvalError> {
    if sets.is_empty() {
        return Err(EvalError::NoSets);
    }
    let mut out = Vec::with_capacity(sets.len());
    for (name, set) in sets {
        let curve = pr_curve(&set.preds, &set.gts)?;
        let defective: BTreeSet<&str> = set.gts.iter().map(|g| g.image.as_str()).collect();
        let images = set.images.len().max(defective.len());
        let unknown_images =
            set.preds.iter().map(|p| p.image.as_str()).filter(|i| !set.images.contains(*i)).collect::<BTreeSet<_>>().len();
        if unknown_images > 0 {
            log::warn!("{name}: predictions reference {unknown_images} unknown images; scored as false positives");
        }
        out.push(SetReport {
            name: name.clone(),
            images,
            defective: defective.len(),
            healthy: images - defective.len(),
            ground_truths: set.gts.len(),
            predictions: set.preds.len(),
            unknown_images,
            ap: average_precision(&curve),
            curve,
        });
    }
    Ok(EvalReport { sets: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub epoch: usize,
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Per-set metric series over an ordered list of checkpoint reports.
/// Precision and recall are read at `reference_threshold`.
pub fn curve_series(
    reports: &[EvalReport],
    reference_threshold: f64,
) -> Result<BTreeMap<String, Vec<SeriesPoint>>, EvalError> {
    let first = reports.first().ok_or(EvalError::NoSets)?;
    let expected = first.set_names();
    let mut out: BTreeMap<String, Vec<SeriesPoint>> = BTreeMap::new();
    for (epoch, r) in reports.iter().enumerate() {
        let found = r.set_names();
        if found != expected {
            return Err(EvalError::InconsistentSets { index: epoch, expected, found });
        }
        for s in &r.sets {
            let p = s.curve.at_threshold(reference_threshold);
            out.entry(s.name.clone()).or_default().push(SeriesPoint {
                epoch,
                ap: s.ap,
                precision: p.precision,
                recall: p.recall,
            });
        }
    }
    Ok(out)
}

fn read_lines<T>(path: &Path, mut parse: impl FnMut(serde_json::Value) -> Result<T, String>) -> Result<Vec<T>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::Malformed { path: path.to_path_buf(), line: i + 1, message };
        let value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        out.push(parse(value).map_err(bad)?);
    }
    Ok(out)
}

/// Reads `{"image", "bbox", "confidence"}` lines.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    read_lines(path, |v| {
        let p: Prediction = serde_json::from_value(v).map_err(|e| e.to_string())?;
        if !valid_bbox(&p.bbox) {
            return Err(format!("invalid bbox {:?}", p.bbox));
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(format!("confidence {} outside [0, 1]", p.confidence));
        }
        Ok(p)
    })
}

/// Reads ground truth from either a dataset manifest (lines with
/// `annotations`) or `{"image", "bbox"}` lines. Manifest lines can be limited
/// to one split.
pub fn read_ground_truth(path: &Path, split: Option<crate::annotate::Split>) -> Result<EvalSet, EvalError> {
    enum Line {
        Record(crate::annotate::ImageRecord),
        Box(GroundTruth),
    }
    let lines = read_lines(path, |v| {
        if v.get("annotations").is_some() {
            serde_json::from_value(v).map(Line::Record).map_err(|e| e.to_string())
        } else {
            let g: GroundTruth = serde_json::from_value(v).map_err(|e| e.to_string())?;
            if !valid_bbox(&g.bbox) {
                return Err(format!("invalid bbox {:?}", g.bbox));
            }
            Ok(Line::Box(g))
        }
    })?;
    let mut set = EvalSet::default();
    let mut records = Vec::new();
    for l in lines {
        match l {
            Line::Record(r) if split.is_none_or(|s| s == r.split) => records.push(r),
            Line::Record(_) => {}
            Line::Box(g) => {
                set.images.insert(g.image.clone());
                set.gts.push(g);
            }
        }
    }
    let from_manifest = EvalSet::from_manifest(&DatasetManifest { records }, vec![]);
    set.images.extend(from_manifest.images);
    set.gts.extend(from_manifest.gts);
    Ok(set)
}

/// Replays ground truth as confidence-1 predictions.
pub fn ground_truth_as_predictions(gts: &[GroundTruth]) -> Vec<Prediction> {
    gts.iter().map(|g| Prediction { image: g.image.clone(), bbox: g.bbox, confidence: 1.0 }).collect()
}
