//! Decision-level cascade over external face-detector output.
//!
//! The detector runs elsewhere and hands over one record per box. Boxes the
//! detector is sure about keep its label; the rest are cropped and passed to
//! the SPMT + SVM classifier.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{svm_score, SvmModel};
use crate::error::{Error, Result};
use crate::imagecore::{crop_expanded, BoundingBox, GrayImage, DEFAULT_EXPAND_RATIO};
use crate::spmt::SpmtModel;

pub const DEFAULT_THETA_C: f64 = 0.92;
pub const DEFAULT_IOU_NMS: f64 = 0.45;
pub const DEFAULT_IOU_CONFLICT: f64 = 0.5;

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_REAL: u8 = 1;
pub const LABEL_FAKE: u8 = 2;

/// One detector output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// 0 background, 1 real face, 2 fake face.
    pub label: u8,
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn bbox(&self) -> Result<BoundingBox> {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > LABEL_FAKE {
            return Err(Error::Manifest(format!(
                "detection label {} not in {{0, 1, 2}}",
                self.label
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Manifest(format!(
                "detection confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        self.bbox().map(|_| ())
    }

    fn iou(&self, other: &DetectionRecord) -> f64 {
        match (self.bbox(), other.bbox()) {
            (Ok(a), Ok(b)) => a.iou(&b),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    /// Certainty threshold. 0 turns the cascade off: every box is certain.
    pub theta_c: f64,
    pub iou_nms: f64,
    pub iou_conflict: f64,
    /// Mark overlapping confident real/fake boxes as uncertain.
    pub conflict_rule: bool,
    pub expand_ratio: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            theta_c: DEFAULT_THETA_C,
            iou_nms: DEFAULT_IOU_NMS,
            iou_conflict: DEFAULT_IOU_CONFLICT,
            conflict_rule: true,
            expand_ratio: DEFAULT_EXPAND_RATIO,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_c) {
            return Err(Error::Config(format!("theta_c {} outside [0, 1]", self.theta_c)));
        }
        for (name, v) in [("iou_nms", self.iou_nms), ("iou_conflict", self.iou_conflict)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} {v} outside (0, 1)")));
            }
        }
        if !(self.expand_ratio >= 1.0 && self.expand_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "expansion ratio {} must be >= 1",
                self.expand_ratio
            )));
        }
        Ok(())
    }
}

fn confidence_order(a: &DetectionRecord, b: &DetectionRecord) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then(a.label.cmp(&b.label))
}

/// Greedy suppression per non-background label; background records are
/// dropped. Output is sorted by descending confidence.
pub fn nms(records: &[DetectionRecord], iou: f64) -> Vec<DetectionRecord> {
    let mut sorted: Vec<&DetectionRecord> = records
        .iter()
        .filter(|r| r.label != LABEL_BACKGROUND)
        .collect();
    sorted.sort_by(|a, b| confidence_order(a, b));
    let mut kept: Vec<DetectionRecord> = Vec::new();
    for r in sorted {
        if kept
            .iter()
            .all(|k| k.label != r.label || k.iou(r) <= iou)
        {
            kept.push(r.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    Certain,
    Uncertain,
}

pub fn classify_uncertainty(records: &[DetectionRecord], cfg: &CascadeConfig) -> Vec<Certainty> {
    if cfg.theta_c <= 0.0 {
        return vec![Certainty::Certain; records.len()];
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let low = r.confidence < cfg.theta_c;
            let conflict = cfg.conflict_rule
                && r.confidence >= cfg.theta_c
                && records.iter().enumerate().any(|(j, o)| {
                    j != i
                        && o.label != r.label
                        && o.label != LABEL_BACKGROUND
                        && o.confidence >= cfg.theta_c
                        && r.iou(o) > cfg.iou_conflict
                });
            if low || conflict {
                Certainty::Uncertain
            } else {
                Certainty::Certain
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Detector,
    Svm,
    Unresolved,
}

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDecision {
    #[serde(flatten)]
    pub record: DetectionRecord,
    pub certainty: Certainty,
    /// 1 real, 2 fake; absent when unresolved.
    pub final_label: Option<u8>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Label the SVM assigns to a crop of `bbox`.
pub fn svm_box_decision(
    image: &GrayImage,
    bbox: &BoundingBox,
    expand_ratio: f64,
    spmt: &SpmtModel,
    svm: &SvmModel,
) -> Result<(u8, f64)> {
    let face = crop_expanded(image, bbox, expand_ratio)?;
    let v = spmt.extract(&face)?;
    let s = svm_score(svm, v.features())?;
    Ok((if s >= 0.0 { LABEL_REAL } else { LABEL_FAKE }, s))
}

/// Decide every surviving box of one image. Records are NMS-filtered first.
pub fn cascade_decide(
    image: &GrayImage,
    records: &[DetectionRecord],
    cfg: &CascadeConfig,
    spmt: &SpmtModel,
    svm: &SvmModel,
) -> Result<Vec<BoxDecision>> {
    cfg.validate()?;
    for r in records {
        r.validate()?;
        if r.image_id != records[0].image_id {
            return Err(Error::Precondition(format!(
                "records from images {} and {} mixed",
                records[0].image_id, r.image_id
            )));
        }
    }
    let kept = nms(records, cfg.iou_nms);
    let certainty = classify_uncertainty(&kept, cfg);
    Ok(kept
        .into_iter()
        .zip(certainty)
        .map(|(record, certainty)| match certainty {
            Certainty::Certain => BoxDecision {
                final_label: Some(record.label),
                record,
                certainty,
                provenance: Provenance::Detector,
                svm_score: None,
                error: None,
            },
            Certainty::Uncertain => {
                let outcome = record
                    .bbox()
                    .and_then(|b| svm_box_decision(image, &b, cfg.expand_ratio, spmt, svm));
                match outcome {
                    Ok((label, s)) => BoxDecision {
                        record,
                        certainty,
                        final_label: Some(label),
                        provenance: Provenance::Svm,
                        svm_score: Some(s),
                        error: None,
                    },
                    Err(e) => BoxDecision {
                        record,
                        certainty,
                        final_label: None,
                        provenance: Provenance::Unresolved,
                        svm_score: None,
                        error: Some(e.to_string()),
                    },
                }
            }
        })
        .collect())
}

/// Records grouped by image id, in id order.
pub fn group_by_image(records: &[DetectionRecord]) -> BTreeMap<String, Vec<DetectionRecord>> {
    let mut m: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.image_id.clone()).or_default().push(r.clone());
    }
    m
}

/// Linearly spaced anchor scales from `sc_min` (first layer) to `sc_max`.
pub fn anchor_scales(sc_min: f64, sc_max: f64, layers: usize) -> Result<Vec<f64>> {
    if !(sc_min > 0.0 && sc_min < sc_max && sc_max <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 < sc_min < sc_max <= 1, got {sc_min}, {sc_max}"
        )));
    }
    if layers < 2 {
        return Err(Error::Config(format!("need at least 2 layers, got {layers}")));
    }
    let step = (sc_max - sc_min) / (layers - 1) as f64;
    Ok((1..=layers)
        .map(|i| {
            if i == layers {
                sc_max
            } else {
                sc_min + (i - 1) as f64 * step
            }
        })
        .collect())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: DetectionRecord = serde_json::from_str(l)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            r.validate()?;
            Ok(r)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let text: String = items
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Random detector output for `images` (id, height, width): a few face boxes
/// per image with confidences in [0.5, 1), some duplicated with jitter so
/// NMS has work to do, and some paired with an overlapping opposite label.
pub fn mock_detections(images: &[(String, usize, usize)], per_image: usize, seed: u64) -> Vec<DetectionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (id, h, w) in images {
        let (h, w) = (*h as f64, *w as f64);
        let mut n = 0;
        while n < per_image {
            let bw = rng.random_range(0.3..0.6) * w;
            let bh = (bw * 1.2).min(0.9 * h);
            let x = rng.random_range(0.0..(w - bw).max(1.0));
            let y = rng.random_range(0.0..(h - bh).max(1.0));
            let label = if rng.random_bool(0.5) { LABEL_REAL } else { LABEL_FAKE };
            let rec = DetectionRecord {
                image_id: id.clone(),
                x,
                y,
                w: bw,
                h: bh,
                label,
                confidence: rng.random_range(0.5..0.999),
            };
            n += 1;
            match rng.random_range(0..4) {
                0 if n < per_image => {
                    let mut dup = rec.clone();
                    dup.x += rng.random_range(-2.0..2.0);
                    dup.confidence = rng.random_range(0.5..0.999);
                    out.push(dup);
                    n += 1;
                }
                1 if n < per_image => {
                    let mut other = rec.clone();
                    other.label = LABEL_REAL + LABEL_FAKE - label;
                    other.y += rng.random_range(-2.0..2.0);
                    other.confidence = rng.random_range(0.9..0.999);
                    out.push(other);
                    n += 1;
                }
                _ => {}
            }
            out.push(rec);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn rec(x: f64, label: u8, confidence: f64) -> DetectionRecord {
        DetectionRecord {
            image_id: "img".into(),
            x,
            y: 10.0,
            w: 40.0,
            h: 48.0,
            label,
            confidence,
        }
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[rec(0.0, 1, 0.5)], 0.45).len(), 1);
        let kept = nms(&[rec(0.0, 1, 0.8), rec(0.0, 1, 0.9)], 0.45);
        assert_eq!(kept, vec![rec(0.0, 1, 0.9)]);
        assert_eq!(nms(&[rec(0.0, 1, 0.8), rec(100.0, 1, 0.9)], 0.45).len(), 2);
        // different labels never suppress each other
        assert_eq!(nms(&[rec(0.0, 1, 0.8), rec(0.0, 2, 0.9)], 0.45).len(), 2);
        assert!(nms(&[rec(0.0, 0, 0.99)], 0.45).is_empty());
    }

    #[test]
    fn uncertainty_examples() {
        let cfg = CascadeConfig::default();
        assert_eq!(classify_uncertainty(&[rec(0.0, 1, 0.95)], &cfg), vec![Certainty::Certain]);
        assert_eq!(classify_uncertainty(&[rec(0.0, 1, 0.80)], &cfg), vec![Certainty::Uncertain]);
        // IoU 0.8: shift by 40 * (1 - 0.8) / 1.8 along x
        let a = rec(0.0, 1, 0.95);
        let b = rec(40.0 * 0.2 / 1.8, 2, 0.94);
        assert!((a.bbox().unwrap().iou(&b.bbox().unwrap()) - 0.8).abs() < 1e-12);
        assert_eq!(classify_uncertainty(&[a.clone(), b.clone()], &cfg), vec![Certainty::Uncertain; 2]);
        let off = CascadeConfig { conflict_rule: false, ..cfg };
        assert_eq!(classify_uncertainty(&[a, b], &off), vec![Certainty::Certain; 2]);
    }

    #[test]
    fn theta_zero_everything_certain() {
        let cfg = CascadeConfig { theta_c: 0.0, ..Default::default() };
        let recs = vec![rec(0.0, 1, 0.1), rec(1.0, 2, 0.99), rec(2.0, 1, 0.99)];
        assert!(classify_uncertainty(&recs, &cfg).iter().all(|c| *c == Certainty::Certain));
    }

    #[test]
    fn anchor_scale_examples() {
        let s = anchor_scales(0.2, 0.9, 4).unwrap();
        let expect = [0.2, 13.0 / 30.0, 2.0 / 3.0, 0.9];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(anchor_scales(0.3, 0.8, 2).unwrap(), vec![0.3, 0.8]);
        let many = anchor_scales(0.1, 1.0, 7).unwrap();
        assert!(many.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(anchor_scales(0.9, 0.2, 4), Err(Error::Config(_))));
        assert!(matches!(anchor_scales(0.2, 0.9, 1), Err(Error::Config(_))));
        assert!(matches!(anchor_scales(0.0, 0.9, 3), Err(Error::Config(_))));
    }

    #[test]
    fn config_and_record_validation() {
        assert!(CascadeConfig { theta_c: 1.5, ..Default::default() }.validate().is_err());
        assert!(CascadeConfig { iou_nms: 0.0, ..Default::default() }.validate().is_err());
        assert!(rec(0.0, 3, 0.5).validate().is_err());
        assert!(rec(0.0, 1, 1.5).validate().is_err());
    }

    #[test]
    fn detections_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.jsonl");
        let recs = mock_detections(&[("a".into(), 240, 320), ("b".into(), 240, 320)], 5, 3);
        assert_eq!(recs.len(), 10);
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(read_detections(&p).unwrap(), recs);
        assert_eq!(group_by_image(&recs).len(), 2);
    }

    fn arb_records() -> impl Strategy<Value = Vec<DetectionRecord>> {
        prop::collection::vec((0u8..3, 0.0f64..60.0, 0.0f64..30.0, 0u32..100), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(label, x, y, c)| DetectionRecord {
                    image_id: "i".into(),
                    x,
                    y,
                    w: 30.0,
                    h: 36.0,
                    label,
                    confidence: c as f64 / 100.0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn nms_order_independent(recs in arb_records(), seed in any::<u64>()) {
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(nms(&recs, 0.45), nms(&shuffled, 0.45));
        }

        #[test]
        fn uncertainty_label_swap_symmetric(recs in arb_records()) {
            let kept = nms(&recs, 0.45);
            let swapped: Vec<_> = kept
                .iter()
                .map(|r| DetectionRecord { label: if r.label == 0 { 0 } else { 3 - r.label }, ..r.clone() })
                .collect();
            let cfg = CascadeConfig::default();
            prop_assert_eq!(classify_uncertainty(&kept, &cfg), classify_uncertainty(&swapped, &cfg));
        }
    }
}
