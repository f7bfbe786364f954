//! COCO-style average precision.
//!
//! Conventions, fixed so results are reproducible:
//! - detections are ranked by score, descending, ties keep input order;
//! - each detection greedily takes the unmatched ground truth with the highest
//!   IoU at or above the threshold, ties going to the lower ground-truth index,
//!   and in-range ground truth always preferred to out-of-range ground truth;
//! - per image and class only the top `max_dets` detections count;
//! - precision is made non-increasing in recall and sampled at 101 recall points;
//! - area ranges use ground-truth box area in pixels.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetManifest;
use crate::layout::BBox2D;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: u64,
    pub bbox: BBox2D,
    pub score: f64,
}

/// Intersection over union; 0 when either box has zero area.
pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    inter / (aa + ab - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange { lo: 0.0, hi: 1e10 };
    pub const MEDIUM: AreaRange = AreaRange { lo: 32.0 * 32.0, hi: 96.0 * 96.0 };
    pub const LARGE: AreaRange = AreaRange { lo: 96.0 * 96.0, hi: 1e10 };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            recall_points: 101,
            max_dets: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u64,
    /// Mean over IoU thresholds; `None` when the class has no ground truth.
    pub ap: Option<f64>,
}

/// Aggregates are `None` when no class has ground truth in the relevant range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(rename = "AP50")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75")]
    pub ap75: Option<f64>,
    #[serde(rename = "AP_medium")]
    pub ap_medium: Option<f64>,
    #[serde(rename = "AP_large")]
    pub ap_large: Option<f64>,
    pub per_class: Vec<ClassAp>,
}

/// One ranked detection after matching at a single threshold.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    tp: bool,
    ignore: bool,
}

/// Matches one image's detections (already ranked and truncated) against its
/// ground truths at `threshold`. Ground truths must be ordered in-range first.
fn match_image(
    dets: &[&BBox2D],
    gts: &[&BBox2D],
    gt_ignore: &[bool],
    ious: &[f64],
    threshold: f64,
    range: AreaRange,
    out: &mut Vec<(usize, Option<usize>, bool)>,
) {
    let mut taken = vec![false; gts.len()];
    for (d, det) in dets.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = threshold;
        for g in 0..gts.len() {
            if taken[g] {
                continue;
            }
            if let Some(m) = best {
                if !gt_ignore[m] && gt_ignore[g] {
                    break;
                }
            }
            let v = ious[d * gts.len() + g];
            if v < threshold || (best.is_some() && v <= best_iou) {
                continue;
            }
            best = Some(g);
            best_iou = v;
        }
        let ignore = match best {
            Some(g) => {
                taken[g] = true;
                gt_ignore[g]
            }
            None => !range.contains(det.area()),
        };
        out.push((d, best, ignore));
    }
}

/// AP from ranked detections: envelope the precision curve, then average it
/// over the recall grid.
fn average_precision(mut ranked: Vec<Ranked>, positives: usize, recall_points: usize) -> f64 {
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in ranked.iter().filter(|r| !r.ignore) {
        if r.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let steps = (recall_points - 1).max(1) as f64;
    let total: f64 = (0..recall_points)
        .map(|i| {
            let r = i as f64 / steps;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / recall_points as f64
}

struct ImageClass<'a> {
    gts: Vec<&'a BBox2D>,
    dets: Vec<(&'a BBox2D, f64)>,
}

/// Per-threshold AP for one class in one area range, `None` without in-range
/// ground truth.
fn class_ap(images: &[ImageClass<'_>], range: AreaRange, config: &EvalConfig) -> Option<Vec<f64>> {
    let mut prepared = Vec::with_capacity(images.len());
    let mut positives = 0;
    for img in images {
        let mut gts = img.gts.clone();
        gts.sort_by_key(|g| !range.contains(g.area()));
        let gt_ignore: Vec<bool> = gts.iter().map(|g| !range.contains(g.area())).collect();
        positives += gt_ignore.iter().filter(|&&i| !i).count();
        let mut dets = img.dets.clone();
        dets.sort_by(|a, b| b.1.total_cmp(&a.1));
        dets.truncate(config.max_dets);
        let ious: Vec<f64> = dets.iter().flat_map(|(d, _)| gts.iter().map(move |g| iou(d, g))).collect();
        prepared.push((gts, gt_ignore, dets, ious));
    }
    if positives == 0 {
        return None;
    }
    let aps = config
        .iou_thresholds
        .iter()
        .map(|&t| {
            let mut ranked = Vec::new();
            let mut scratch = Vec::new();
            for (gts, gt_ignore, dets, ious) in &prepared {
                scratch.clear();
                let boxes: Vec<&BBox2D> = dets.iter().map(|(b, _)| *b).collect();
                match_image(&boxes, gts, gt_ignore, ious, t, range, &mut scratch);
                ranked.extend(scratch.iter().map(|&(d, m, ignore)| Ranked { score: dets[d].1, tp: m.is_some(), ignore }));
            }
            average_precision(ranked, positives, config.recall_points)
        })
        .collect();
    Some(aps)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores `preds` against the ground truth in `truths`.
pub fn evaluate(preds: &[Detection], truths: &DatasetManifest, config: &EvalConfig) -> Result<EvalReport> {
    if config.recall_points == 0 || config.iou_thresholds.is_empty() {
        return Err(Error::Argument("evaluation needs recall points and IoU thresholds".into()));
    }
    let image_index: HashMap<&str, usize> =
        truths.layouts.iter().enumerate().map(|(i, l)| (l.image_id.as_str(), i)).collect();

    // class -> per-image ground truth and detections, images in manifest order
    let mut classes: BTreeMap<u64, Vec<ImageClass<'_>>> = BTreeMap::new();
    let new_images = || (0..truths.layouts.len()).map(|_| ImageClass { gts: Vec::new(), dets: Vec::new() }).collect();
    for (id, _) in truths.categories.iter() {
        classes.entry(id).or_insert_with(new_images);
    }
    for (i, l) in truths.layouts.iter().enumerate() {
        for b in &l.boxes {
            classes.entry(b.class_id).or_insert_with(new_images)[i].gts.push(&b.bbox);
        }
    }
    for p in preds {
        let &i = image_index
            .get(p.image_id.as_str())
            .ok_or_else(|| Error::Argument(format!("prediction for unknown image {:?}", p.image_id)))?;
        if let Some(images) = classes.get_mut(&p.class_id) {
            images[i].dets.push((&p.bbox, p.score));
        }
    }

    let per_class: Vec<(u64, [Option<Vec<f64>>; 3])> = classes
        .par_iter()
        .map(|(&id, images)| {
            let all = class_ap(images, AreaRange::ALL, config);
            let medium = class_ap(images, AreaRange::MEDIUM, config);
            let large = class_ap(images, AreaRange::LARGE, config);
            (id, [all, medium, large])
        })
        .collect();

    let threshold_index = |t: f64| config.iou_thresholds.iter().position(|&x| (x - t).abs() < 1e-12);
    let class_mean = |aps: &Vec<f64>| aps.iter().sum::<f64>() / aps.len() as f64;
    let at = |t: f64| {
        threshold_index(t).and_then(|k| mean(per_class.iter().filter_map(|(_, r)| r[0].as_ref().map(|a| a[k]))))
    };
    Ok(EvalReport {
        map: mean(per_class.iter().filter_map(|(_, r)| r[0].as_ref().map(class_mean))),
        ap50: at(0.5),
        ap75: at(0.75),
        ap_medium: mean(per_class.iter().filter_map(|(_, r)| r[1].as_ref().map(class_mean))),
        ap_large: mean(per_class.iter().filter_map(|(_, r)| r[2].as_ref().map(class_mean))),
        per_class: per_class.iter().map(|(id, r)| ClassAp { class_id: *id, ap: r[0].as_ref().map(class_mean) }).collect(),
    })
}

#[derive(Deserialize)]
struct PredictionLine {
    #[serde(deserialize_with = "crate::ingest::id_string")]
    image_id: String,
    class_id: u64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

/// Reads predictions as JSON Lines.
pub fn parse_predictions(bytes: &[u8]) -> Result<Vec<Detection>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode(format!("predictions are not UTF-8: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Line { line: i + 1, message };
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&p.score) {
            return Err(err(format!("score {} outside [0, 1]", p.score)));
        }
        if ![p.x1, p.y1, p.x2, p.y2].iter().all(|v| v.is_finite()) || p.x1 > p.x2 || p.y1 > p.y2 {
            return Err(err("box corners must be finite with x1 <= x2, y1 <= y2".into()));
        }
        out.push(Detection { image_id: p.image_id, class_id: p.class_id, bbox: BBox2D::new(p.x1, p.y1, p.x2, p.y2), score: p.score });
    }
    Ok(out)
}
