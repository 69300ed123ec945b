//! Greedy matching of score-sorted predictions to ground truth.
//!
//! Predictions are visited by descending score (ties keep input order). Each
//! one takes the still-unmatched ground truth of highest IoU, lowest index on
//! ties, and counts as a true positive iff that IoU is at least the
//! threshold. This is greedy, not an optimal assignment: an early prediction
//! consumes its best ground truth even if a later prediction overlaps it
//! more.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou_unchecked, GeoBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

/// Prediction visiting order: score descending, stable on input index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Bucket grid over ground-truth boxes for overlap queries.
struct GtIndex {
    cell: f64,
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl GtIndex {
    fn new(gts: &[GeoBox]) -> Self {
        let env = GeoBox::envelope(gts.iter().flat_map(|g| [(g.min_x, g.min_y), (g.max_x, g.max_y)]));
        let mut sizes: Vec<f64> = gts.iter().map(|g| g.width().max(g.height())).collect();
        sizes.sort_by(f64::total_cmp);
        let typical = sizes[sizes.len() / 2].max(f64::MIN_POSITIVE);
        // At most ~4 buckets per box keeps memory linear.
        let span = env.width().max(env.height());
        let cell = typical.max(span / (2.0 * (gts.len() as f64).sqrt()).max(1.0));
        let cols = ((env.width() / cell).floor() as usize + 1).max(1);
        let rows = ((env.height() / cell).floor() as usize + 1).max(1);
        let mut idx = GtIndex {
            cell,
            origin: (env.min_x, env.min_y),
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        };
        for (i, g) in gts.iter().enumerate() {
            let (c0, r0, c1, r1) = idx.range(g);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    idx.buckets[r * cols + c].push(i);
                }
            }
        }
        idx
    }

    fn clamp_cell(&self, v: f64, o: f64, n: usize) -> usize {
        let k = ((v - o) / self.cell).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(n - 1)
        }
    }

    fn range(&self, b: &GeoBox) -> (usize, usize, usize, usize) {
        (
            self.clamp_cell(b.min_x, self.origin.0, self.cols),
            self.clamp_cell(b.min_y, self.origin.1, self.rows),
            self.clamp_cell(b.max_x, self.origin.0, self.cols),
            self.clamp_cell(b.max_y, self.origin.1, self.rows),
        )
    }
}

/// Greedy matching. Preconditions (positive-area boxes, `0 < iou_threshold
/// <= 1`) are the caller's responsibility; zero-area boxes simply never match.
pub fn greedy_match(
    preds: &[GeoBox],
    scores: &[f64],
    gts: &[GeoBox],
    iou_threshold: f64,
) -> MatchResult {
    assert_eq!(preds.len(), scores.len(), "one score per prediction");
    let mut result = MatchResult::default();
    let mut matched = vec![false; gts.len()];
    let index = (!gts.is_empty()).then(|| GtIndex::new(gts));
    let mut candidates: Vec<usize> = Vec::new();
    for p in score_order(scores) {
        let pb = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        if let Some(index) = &index {
            candidates.clear();
            let (c0, r0, c1, r1) = index.range(pb);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    candidates.extend(&index.buckets[r * index.cols + c]);
                }
            }
            candidates.sort_unstable();
            candidates.dedup();
            for &g in &candidates {
                if matched[g] {
                    continue;
                }
                let v = iou_unchecked(pb, &gts[g]);
                // strict > keeps the lowest index among equal IoUs
                if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
        }
        // Unmatched ground truths outside the candidate set all have IoU 0,
        // which can never reach a positive threshold.
        match best {
            Some((g, v)) if v >= iou_threshold => {
                matched[g] = true;
                result.tp += 1;
                result.pairs.push(MatchPair {
                    pred: p,
                    gt: g,
                    iou: v,
                });
            }
            _ => result.fp += 1,
        }
    }
    result.fn_ = matched.iter().filter(|m| !**m).count();
    result
}
