//! Manifest summaries for `defectforge stats`.

use defectforge_core::annotate::DatasetManifest;
use serde_json::{json, Value};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStats {
    pub images: usize,
    pub train: usize,
    pub test: usize,
    pub scenes: usize,
    pub annotations: usize,
    /// Number of images per annotation count.
    pub per_image: BTreeMap<usize, usize>,
    /// Nearest-rank percentiles of bbox area, pixels.
    pub area_percentiles: Vec<(u32, u32)>,
    /// Bbox-area histogram with power-of-two bins: `(lower edge, count)`.
    pub area_histogram: Vec<(u32, usize)>,
}

pub const PERCENTILES: [u32; 5] = [5, 25, 50, 75, 95];

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[u32], p: u32) -> u32 {
    let rank = ((p as f64 / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn compute(m: &DatasetManifest) -> ManifestStats {
    let counts = m.counts();
    let mut per_image = BTreeMap::new();
    let mut areas = Vec::new();
    for r in &m.records {
        *per_image.entry(r.annotations.len()).or_insert(0) += 1;
        for a in &r.annotations {
            areas.push((a.bbox[2] - a.bbox[0]) * (a.bbox[3] - a.bbox[1]));
        }
    }
    areas.sort_unstable();
    let area_percentiles = if areas.is_empty() { vec![] } else { PERCENTILES.iter().map(|&p| (p, percentile(&areas, p))).collect() };
    let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
    for &a in &areas {
        let edge = if a == 0 { 0 } else { 1u32 << (31 - a.leading_zeros()) };
        *hist.entry(edge).or_insert(0) += 1;
    }
    ManifestStats {
        images: counts.images,
        train: counts.train,
        test: counts.test,
        scenes: counts.scenes,
        annotations: counts.annotations,
        per_image,
        area_percentiles,
        area_histogram: hist.into_iter().collect(),
    }
}

impl ManifestStats {
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "images       {}\n  train      {}\n  test       {}\nscenes       {}\nannotations  {}\n",
            self.images, self.train, self.test, self.scenes, self.annotations
        );
        s.push_str("annotations per image:\n");
        for (k, n) in &self.per_image {
            s.push_str(&format!("  {k:>3}: {n}\n"));
        }
        if !self.area_percentiles.is_empty() {
            s.push_str("bbox area percentiles (px):\n");
            for (p, v) in &self.area_percentiles {
                s.push_str(&format!("  p{p:<2} {v}\n"));
            }
            s.push_str("bbox area histogram (px):\n");
            for (edge, n) in &self.area_histogram {
                s.push_str(&format!("  [{edge}, {}) {n}\n", edge.saturating_mul(2).max(1)));
            }
        }
        s
    }

    pub fn to_json(&self) -> Value {
        json!({
            "images": self.images,
            "train": self.train,
            "test": self.test,
            "scenes": self.scenes,
            "annotations": self.annotations,
            "annotations_per_image": self.per_image.iter().map(|(k, n)| json!({"annotations": k, "images": n})).collect::<Vec<_>>(),
            "bbox_area_percentiles": self.area_percentiles.iter().map(|(p, v)| json!({"percentile": p, "area": v})).collect::<Vec<_>>(),
            "bbox_area_histogram": self.area_histogram.iter().map(|(e, n)| json!({"min": e, "count": n})).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use defectforge_core::annotate::{Annotation, ImageRecord, Split};

    fn rec(scene: u32, split: Split, boxes: &[[u32; 4]]) -> ImageRecord {
        ImageRecord {
            image: format!("s{scene}.png"),
            scene,
            camera: 0,
            split,
            annotations: boxes
                .iter()
                .enumerate()
                .map(|(i, &bbox)| Annotation { id: i as u32, class: "break".into(), bbox, area: 1, mask: String::new() })
                .collect(),
        }
    }

    #[test]
    fn empty_manifest() {
        let s = compute(&DatasetManifest::default());
        assert_eq!((s.images, s.train, s.test, s.annotations), (0, 0, 0, 0));
        assert!(s.area_histogram.is_empty());
        assert!(s.render_text().contains("images       0"));
    }

    #[test]
    fn even_split() {
        let records = (0..10).map(|i| rec(i, if i % 2 == 0 { Split::Train } else { Split::Test }, &[[0, 0, 2, 2]])).collect();
        let s = compute(&DatasetManifest { records });
        assert_eq!((s.train, s.test), (5, 5));
    }

    #[test]
    fn histogram_matches_hand_count() {
        // areas: 4, 6, 8, 100, 100, 1
        let m = DatasetManifest {
            records: vec![
                rec(0, Split::Train, &[[0, 0, 2, 2], [0, 0, 3, 2]]),
                rec(1, Split::Train, &[[0, 0, 4, 2], [0, 0, 10, 10], [5, 5, 15, 15]]),
                rec(2, Split::Test, &[[3, 3, 4, 4]]),
                rec(3, Split::Test, &[]),
            ],
        };
        let s = compute(&m);
        assert_eq!(s.area_histogram, vec![(1, 1), (4, 2), (8, 1), (64, 2)]);
        assert_eq!(s.per_image, BTreeMap::from([(0, 1), (1, 1), (2, 1), (3, 1)]));
        // sorted areas 1 4 6 8 100 100
        assert_eq!(s.area_percentiles, vec![(5, 1), (25, 4), (50, 6), (75, 100), (95, 100)]);
        assert_eq!(s.to_json()["annotations"], 6);
    }
}
