//! Raster-level precision/recall/F1, weighted RF1 across rasters, and
//! COCO-style mAP/mAR for a single category over all object sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, GeoBox};
use crate::matcher::greedy_match;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterEval {
    pub raster_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_truth: usize,
}

impl RasterEval {
    /// Precision, recall and F1 from counts; every zero denominator gives 0.
    pub fn from_counts(raster_id: impl Into<String>, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 0.0 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RasterEval {
            raster_id: raster_id.into(),
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            n_truth: tp + fn_,
        }
    }
}

/// Matches `preds` (already aggregated) against `gts` at `iou_threshold`.
pub fn raster_f1(
    raster_id: impl Into<String>,
    preds: &[GeoBox],
    scores: &[f64],
    gts: &[GeoBox],
    iou_threshold: f64,
) -> RasterEval {
    let m = greedy_match(preds, scores, gts, iou_threshold);
    RasterEval::from_counts(raster_id, m.tp, m.fp, m.fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    pub per_raster: Vec<RasterEval>,
    pub rf1: f64,
    pub iou_threshold: f64,
}

/// F1 averaged over rasters, weighted by ground-truth count.
pub fn weighted_rf1(evals: &[RasterEval]) -> Result<f64> {
    let total: usize = evals.iter().map(|e| e.n_truth).sum();
    if total == 0 {
        return Err(Error::Validation(
            "weighted RF1 needs at least one raster with ground truth".into(),
        ));
    }
    let sum: f64 = evals.iter().map(|e| e.f1 * e.n_truth as f64).sum();
    Ok(sum / total as f64)
}

pub fn dataset_rf1(evals: Vec<RasterEval>, iou_threshold: f64) -> Result<DatasetEval> {
    let rf1 = weighted_rf1(&evals)?;
    Ok(DatasetEval {
        per_raster: evals,
        rf1,
        iou_threshold,
    })
}

/// Detections of one COCO image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageDetections {
    pub boxes: Vec<GeoBox>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoEval {
    pub iou_thresholds: Vec<f64>,
    pub max_dets: usize,
    pub map_50_95: f64,
    pub mar_50_95: f64,
    pub map_50: f64,
    pub mar_50: f64,
    /// AP at each entry of `iou_thresholds`.
    pub ap: Vec<f64>,
    /// AR at each entry of `iou_thresholds`.
    pub ar: Vec<f64>,
}

pub const DEFAULT_MAX_DETS: usize = 400;
pub const RECALL_POINTS: usize = 101;

/// 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Recall sample points as generated by `numpy.linspace(0, 1, 101)`.
pub fn recall_points() -> Vec<f64> {
    let step = 1.0 / (RECALL_POINTS - 1) as f64;
    let mut r: Vec<f64> = (0..RECALL_POINTS).map(|i| i as f64 * step).collect();
    r[RECALL_POINTS - 1] = 1.0;
    r
}

/// Per-image result: kept detection scores (sorted) and, per threshold, which
/// of them matched.
struct ImageMatches {
    scores: Vec<f64>,
    matched: Vec<Vec<bool>>,
}

fn match_image(dets: &ImageDetections, gts: &[GeoBox], thresholds: &[f64], max_dets: usize) -> ImageMatches {
    let mut order: Vec<usize> = (0..dets.boxes.len()).collect();
    order.sort_by(|&a, &b| dets.scores[b].total_cmp(&dets.scores[a]));
    order.truncate(max_dets);
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| gts.iter().map(|g| iou_unchecked(&dets.boxes[d], g)).collect())
        .collect();
    let matched = thresholds
        .iter()
        .map(|&t| {
            let mut gt_taken = vec![false; gts.len()];
            ious.iter()
                .map(|row| {
                    let mut best_iou = t.min(1.0 - 1e-10);
                    let mut best = None;
                    for (g, &v) in row.iter().enumerate() {
                        // >= : among equal IoUs the later ground truth wins
                        if gt_taken[g] || v < best_iou {
                            continue;
                        }
                        best_iou = v;
                        best = Some(g);
                    }
                    if let Some(g) = best {
                        gt_taken[g] = true;
                    }
                    best.is_some()
                })
                .collect()
        })
        .collect();
    ImageMatches {
        scores: order.iter().map(|&d| dets.scores[d]).collect(),
        matched,
    }
}

/// Interpolated AP and final recall for one threshold over pooled detections.
fn ap_ar(pooled: &[(f64, bool)], n_gt: usize, recall_at: &[f64]) -> (f64, f64) {
    let mut recall = Vec::with_capacity(pooled.len());
    let mut precision = Vec::with_capacity(pooled.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, m) in pooled {
        if m {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = recall_at
        .iter()
        .map(|&r| {
            let k = recall.partition_point(|&x| x < r);
            precision.get(k).copied().unwrap_or(0.0)
        })
        .sum();
    (sum / recall_at.len() as f64, recall.last().copied().unwrap_or(0.0))
}

/// COCO protocol, single category, all areas. `preds[i]` and `gts[i]` belong
/// to the same image. AR is the pooled recall (matched / total ground truth)
/// over all images.
pub fn coco_eval(
    preds: &[ImageDetections],
    gts: &[Vec<GeoBox>],
    iou_thresholds: &[f64],
    max_dets: usize,
) -> Result<CocoEval> {
    if preds.len() != gts.len() {
        return Err(Error::Validation(format!(
            "{} prediction images but {} ground-truth images",
            preds.len(),
            gts.len()
        )));
    }
    if iou_thresholds.is_empty() || iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::Domain("IoU thresholds must be non-empty and in (0, 1]".into()));
    }
    for (i, p) in preds.iter().enumerate() {
        if p.boxes.len() != p.scores.len() {
            return Err(Error::Validation(format!("image {i}: boxes and scores differ in length")));
        }
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::Validation("no ground truth in any image; recall is undefined".into()));
    }
    let mut thresholds = iou_thresholds.to_vec();
    let i50 = match thresholds.iter().position(|t| (*t - 0.5).abs() < 1e-12) {
        Some(i) => i,
        None => {
            thresholds.push(0.5);
            thresholds.len() - 1
        }
    };
    let per_image: Vec<ImageMatches> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| match_image(p, g, &thresholds, max_dets))
        .collect();
    let recall_at = recall_points();
    let results: Vec<(f64, f64)> = (0..thresholds.len())
        .into_par_iter()
        .map(|ti| {
            let mut pooled: Vec<(f64, bool)> = per_image
                .iter()
                .flat_map(|im| im.scores.iter().copied().zip(im.matched[ti].iter().copied()))
                .collect();
            pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
            ap_ar(&pooled, n_gt, &recall_at)
        })
        .collect();
    let k = iou_thresholds.len();
    let ap: Vec<f64> = results[..k].iter().map(|r| r.0).collect();
    let ar: Vec<f64> = results[..k].iter().map(|r| r.1).collect();
    Ok(CocoEval {
        iou_thresholds: iou_thresholds.to_vec(),
        max_dets,
        map_50_95: ap.iter().sum::<f64>() / k as f64,
        mar_50_95: ar.iter().sum::<f64>() / k as f64,
        map_50: results[i50].0,
        mar_50: results[i50].1,
        ap,
        ar,
    })
}
