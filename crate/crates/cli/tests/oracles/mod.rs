//! Straightforward reference implementations used to cross-check the
//! optimised library code. Boxes are `[x0, y0, x1, y1]`.

#![allow(dead_code)]

pub type Bx = [f64; 4];

pub fn iou(a: &Bx, b: &Bx) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    (inter / union).min(1.0)
}

/// Greedy matching, transcribed line by line:
/// sort P' by descending score; mark all g unmatched; for each p take
/// g* = argmax over unmatched g of IoU(p, g); tp if IoU(p, g*) >= tau, else fp;
/// fn = number still unmatched.
pub fn greedy_match(preds: &[Bx], scores: &[f64], gts: &[Bx], tau: f64) -> (usize, usize, usize, Vec<(usize, usize)>) {
    let mut p_sorted: Vec<usize> = (0..preds.len()).collect();
    p_sorted.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut unmatched = vec![true; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    let mut pairs = Vec::new();
    for p in p_sorted {
        let mut g_star: Option<usize> = None;
        for g in 0..gts.len() {
            if !unmatched[g] {
                continue;
            }
            match g_star {
                None => g_star = Some(g),
                Some(s) if iou(&preds[p], &gts[g]) > iou(&preds[p], &gts[s]) => g_star = Some(g),
                _ => {}
            }
        }
        match g_star {
            Some(g) if iou(&preds[p], &gts[g]) >= tau => {
                tp += 1;
                unmatched[g] = false;
                pairs.push((p, g));
            }
            _ => fp += 1,
        }
    }
    let fn_ = unmatched.iter().filter(|u| **u).count();
    (tp, fp, fn_, pairs)
}

/// All-pairs greedy NMS. Order: score desc, min_x asc, min_y asc, tile id
/// asc, input index asc. Keeps a box iff IoU <= tau with every kept box.
pub fn nms(boxes: &[Bx], scores: &[f64], tiles: &[String], tau: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap()
            .then(boxes[i][0].partial_cmp(&boxes[j][0]).unwrap())
            .then(boxes[i][1].partial_cmp(&boxes[j][1]).unwrap())
            .then(tiles[i].cmp(&tiles[j]))
            .then(i.cmp(&j))
    });
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= tau) {
            keep.push(i);
        }
    }
    keep
}

/// One image of a COCO evaluation.
pub struct CocoImage {
    pub gts: Vec<Bx>,
    pub dts: Vec<Bx>,
    pub scores: Vec<f64>,
}

pub struct CocoSummary {
    pub ap: Vec<f64>,
    pub ar: Vec<f64>,
}

/// Port of the reference COCO evaluation (single category, all areas, no
/// crowd): per-image matching, pooled accumulation, 101-point interpolation.
pub fn coco(images: &[CocoImage], iou_thrs: &[f64], max_det: usize) -> CocoSummary {
    let t_count = iou_thrs.len();
    let rec_thrs: Vec<f64> = {
        // numpy.linspace(0, 1, 101)
        let step = 1.0 / 100.0;
        let mut v: Vec<f64> = (0..101).map(|i| i as f64 * step).collect();
        v[100] = 1.0;
        v
    };
    // evaluateImg
    let mut dt_scores_all: Vec<f64> = Vec::new();
    let mut dt_matches_all: Vec<Vec<bool>> = vec![Vec::new(); t_count];
    let mut npig = 0usize;
    for img in images {
        npig += img.gts.len();
        if img.gts.is_empty() && img.dts.is_empty() {
            continue;
        }
        let mut dtind: Vec<usize> = (0..img.dts.len()).collect();
        // mergesort on -score: stable
        dtind.sort_by(|&a, &b| (-img.scores[a]).partial_cmp(&-img.scores[b]).unwrap());
        dtind.truncate(max_det);
        let ious: Vec<Vec<f64>> = dtind
            .iter()
            .map(|&d| img.gts.iter().map(|g| iou(&img.dts[d], g)).collect())
            .collect();
        for (tind, &t) in iou_thrs.iter().enumerate() {
            let mut gtm = vec![false; img.gts.len()];
            for iou_row in &ious {
                let mut best = t.min(1.0 - 1e-10);
                let mut m: isize = -1;
                for gind in 0..img.gts.len() {
                    if gtm[gind] {
                        continue;
                    }
                    if iou_row[gind] < best {
                        continue;
                    }
                    best = iou_row[gind];
                    m = gind as isize;
                }
                if m >= 0 {
                    gtm[m as usize] = true;
                }
                dt_matches_all[tind].push(m >= 0);
            }
        }
        dt_scores_all.extend(dtind.iter().map(|&d| img.scores[d]));
    }
    // accumulate
    let mut inds: Vec<usize> = (0..dt_scores_all.len()).collect();
    inds.sort_by(|&a, &b| (-dt_scores_all[a]).partial_cmp(&-dt_scores_all[b]).unwrap());
    let mut ap = Vec::new();
    let mut ar = Vec::new();
    for matches in &dt_matches_all {
        let dtm: Vec<bool> = inds.iter().map(|&i| matches[i]).collect();
        let mut tp_sum = Vec::new();
        let mut fp_sum = Vec::new();
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for &m in &dtm {
            if m {
                a += 1.0
            } else {
                b += 1.0
            }
            tp_sum.push(a);
            fp_sum.push(b);
        }
        let nd = tp_sum.len();
        let rc: Vec<f64> = tp_sum.iter().map(|tp| tp / npig as f64).collect();
        let mut q: Vec<f64> = tp_sum.iter().zip(&fp_sum).map(|(tp, fp)| tp / (tp + fp)).collect();
        ar.push(if nd > 0 { rc[nd - 1] } else { 0.0 });
        for i in (1..nd).rev() {
            if q[i] > q[i - 1] {
                q[i - 1] = q[i];
            }
        }
        let mut sampled = vec![0.0; rec_thrs.len()];
        for (ri, r) in rec_thrs.iter().enumerate() {
            // searchsorted(rc, r, side='left')
            let mut pi = 0;
            while pi < nd && rc[pi] < *r {
                pi += 1;
            }
            if pi < nd {
                sampled[ri] = q[pi];
            }
        }
        ap.push(sampled.iter().sum::<f64>() / sampled.len() as f64);
    }
    CocoSummary { ap, ar }
}
