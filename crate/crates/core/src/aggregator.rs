//! Tile-to-raster aggregation: border-band discard, pixel-to-world mapping,
//! confidence filtering and non-maximum suppression.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, pixel_to_world, AffineTransform, GeoBox, PixelBox};
use crate::tiler::{CocoIndex, TileRecord};

/// Which detections the border band removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    /// Drop boxes that touch the band anywhere.
    #[default]
    Intersect,
    /// Drop only boxes lying entirely inside the band.
    Contained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub border_band_frac: f64,
    pub score_min: f64,
    pub nms_iou: f64,
    #[serde(default)]
    pub band_mode: BandMode,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            border_band_frac: 0.05,
            score_min: 0.0,
            nms_iou: 0.5,
            band_mode: BandMode::Intersect,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.border_band_frac) {
            return Err(Error::Validation(format!(
                "border band fraction {} outside [0, 0.5)",
                self.border_band_frac
            )));
        }
        for (name, v) in [("score_min", self.score_min), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Detector output for one tile, boxes in tile pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileDetections {
    pub tile_id: String,
    pub boxes: Vec<PixelBox>,
    pub scores: Vec<f64>,
}

impl TileDetections {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.scores.len() {
            return Err(Error::Validation(format!(
                "tile {}: {} boxes but {} scores",
                self.tile_id,
                self.boxes.len(),
                self.scores.len()
            )));
        }
        if let Some(s) = self.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!(
                "tile {}: score {s} outside [0, 1]",
                self.tile_id
            )));
        }
        if let Some(b) = self.boxes.iter().find(|b| b.area() <= 0.0) {
            return Err(Error::Validation(format!(
                "tile {}: zero-area box {b:?}",
                self.tile_id
            )));
        }
        Ok(())
    }
}

/// Placement of a tile in its raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileFrame {
    pub transform: AffineTransform,
    pub width: u32,
    pub height: u32,
}

impl From<&TileRecord> for TileFrame {
    fn from(r: &TileRecord) -> Self {
        TileFrame {
            transform: r.transform,
            width: r.width(),
            height: r.height(),
        }
    }
}

pub type TileFrames = HashMap<String, TileFrame>;

pub fn frames_from_index(index: &CocoIndex) -> TileFrames {
    index
        .records
        .iter()
        .map(|r| (r.tile_id.clone(), TileFrame::from(r)))
        .collect()
}

/// Removes detections touching (or, in `Contained` mode, lying inside) the
/// band of width `band_frac * size` along each tile edge.
pub fn discard_border(
    dets: &TileDetections,
    width: u32,
    height: u32,
    band_frac: f64,
    mode: BandMode,
) -> TileDetections {
    let (w, h) = (width as f64, height as f64);
    let (bx, by) = (band_frac * w, band_frac * h);
    let keep = |b: &PixelBox| match mode {
        BandMode::Intersect => {
            b.col_min >= bx && b.row_min >= by && b.col_max <= w - bx && b.row_max <= h - by
        }
        BandMode::Contained => {
            let in_band = b.col_max <= bx
                || b.row_max <= by
                || b.col_min >= w - bx
                || b.row_min >= h - by;
            band_frac == 0.0 || !in_band
        }
    };
    let (boxes, scores) = dets
        .boxes
        .iter()
        .zip(&dets.scores)
        .filter(|(b, _)| keep(b))
        .map(|(b, s)| (*b, *s))
        .unzip();
    TileDetections {
        tile_id: dets.tile_id.clone(),
        boxes,
        scores,
    }
}

/// Maps tile detections into raster world coordinates.
pub fn to_world(dets: &[TileDetections], frames: &TileFrames) -> Result<Vec<Detection>> {
    let mut out = Vec::with_capacity(dets.iter().map(|d| d.boxes.len()).sum());
    for td in dets {
        let frame = frames.get(&td.tile_id).ok_or_else(|| {
            Error::Validation(format!("no transform known for tile {:?}", td.tile_id))
        })?;
        for (b, &score) in td.boxes.iter().zip(&td.scores) {
            out.push(Detection {
                bbox: pixel_to_world(b, &frame.transform)?,
                score,
                tile_id: Some(td.tile_id.clone()),
            });
        }
    }
    Ok(out)
}

/// NMS processing order: score desc, then min_x, min_y, tile_id ascending,
/// then input position.
pub fn nms_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| compare_for_nms(&dets[i], &dets[j]).then(i.cmp(&j)));
    order
}

fn compare_for_nms(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.min_x.total_cmp(&b.bbox.min_x))
        .then(a.bbox.min_y.total_cmp(&b.bbox.min_y))
        .then(a.tile_id.cmp(&b.tile_id))
}

/// Uniform grid over box centers.
struct CenterGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl CenterGrid {
    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    /// Calls `f` with every index whose center lies in the given rectangle's
    /// cells.
    fn for_each_near(&self, lo: (f64, f64), hi: (f64, f64), mut f: impl FnMut(usize)) {
        let (c0, r0) = self.key(lo.0, lo.1);
        let (c1, r1) = self.key(hi.0, hi.1);
        let span = (c1 - c0 + 1) as f64 * (r1 - r0 + 1) as f64;
        if span > self.cells.len() as f64 {
            for (&(c, r), ids) in &self.cells {
                if (c0..=c1).contains(&c) && (r0..=r1).contains(&r) {
                    ids.iter().for_each(|&i| f(i));
                }
            }
        } else {
            for c in c0..=c1 {
                for r in r0..=r1 {
                    if let Some(ids) = self.cells.get(&(c, r)) {
                        ids.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

fn median_diagonal<'a>(boxes: impl Iterator<Item = &'a GeoBox>) -> f64 {
    let mut d: Vec<f64> = boxes.map(GeoBox::diagonal).collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 && m.is_finite() {
        *m
    } else {
        1.0
    }
}

/// Greedy NMS; returns kept indices in processing order.
///
/// A detection is kept iff its IoU with every previously kept detection is
/// `<= iou_threshold`. Candidates are found through a center grid with cell
/// size equal to the median box diagonal; the kept set is identical to the
/// all-pairs formulation.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let order = nms_order(dets);
    nms_indices_ordered(dets, &order, iou_threshold)
}

/// NMS over a precomputed processing order (a permutation or any prefix of
/// one).
pub fn nms_indices_ordered(dets: &[Detection], order: &[usize], iou_threshold: f64) -> Vec<usize> {
    let n = dets.len();
    if order.is_empty() {
        return Vec::new();
    }
    let mut rank = vec![usize::MAX; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut grid = CenterGrid {
        cell: median_diagonal(order.iter().map(|&i| &dets[i].bbox)),
        cells: HashMap::new(),
    };
    let (mut half_w, mut half_h) = (0.0f64, 0.0f64);
    for &i in order {
        let b = &dets[i].bbox;
        let (cx, cy) = b.center();
        half_w = half_w.max(0.5 * b.width());
        half_h = half_h.max(0.5 * b.height());
        let key = grid.key(cx, cy);
        grid.cells.entry(key).or_default().push(i);
    }

    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for &i in order {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let b: &GeoBox = &dets[i].bbox;
        let (cx, cy) = b.center();
        let rx = 0.5 * b.width() + half_w;
        let ry = 0.5 * b.height() + half_h;
        grid.for_each_near((cx - rx, cy - ry), (cx + rx, cy + ry), |j| {
            if rank[j] > rank[i]
                && !suppressed[j]
                && iou_unchecked(b, &dets[j].bbox) > iou_threshold
            {
                suppressed[j] = true;
            }
        });
    }
    keep
}

/// Greedy NMS returning the kept detections in processing order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Border discard and world mapping, the part of aggregation that does not
/// depend on the score or NMS thresholds.
pub fn prepare(
    tile_dets: &[TileDetections],
    frames: &TileFrames,
    band_frac: f64,
    mode: BandMode,
) -> Result<Vec<Detection>> {
    tile_dets.iter().try_for_each(TileDetections::validate)?;
    let trimmed = tile_dets
        .par_iter()
        .map(|td| {
            let f = frames.get(&td.tile_id).ok_or_else(|| {
                Error::Validation(format!("no transform known for tile {:?}", td.tile_id))
            })?;
            Ok(discard_border(td, f.width, f.height, band_frac, mode))
        })
        .collect::<Result<Vec<_>>>()?;
    to_world(&trimmed, frames)
}

/// discard_border -> to_world -> score >= s_min -> NMS.
pub fn aggregate(
    tile_dets: &[TileDetections],
    frames: &TileFrames,
    cfg: &AggregationConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let world = prepare(tile_dets, frames, cfg.border_band_frac, cfg.band_mode)?;
    let confident: Vec<Detection> = world
        .into_iter()
        .filter(|d| d.score >= cfg.score_min)
        .collect();
    Ok(nms(&confident, cfg.nms_iou))
}

#[derive(Serialize, Deserialize)]
struct TileDetectionsJson {
    tile_id: String,
    boxes: Vec<[f64; 4]>,
    scores: Vec<f64>,
}

/// Reads `[{"tile_id", "boxes": [[x, y, w, h], ...], "scores": [...]}, ...]`.
pub fn read_tile_detections(path: &Path) -> Result<Vec<TileDetections>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<TileDetectionsJson> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    raw.into_iter()
        .map(|r| {
            let boxes = r
                .boxes
                .iter()
                .map(|&[x, y, w, h]| PixelBox::from_xywh(x, y, w, h))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Validation(format!("tile {}: {e}", r.tile_id)))?;
            let td = TileDetections {
                tile_id: r.tile_id,
                boxes,
                scores: r.scores,
            };
            td.validate()?;
            Ok(td)
        })
        .collect()
}

pub fn write_tile_detections(path: &Path, dets: &[TileDetections]) -> Result<()> {
    let raw: Vec<TileDetectionsJson> = dets
        .iter()
        .map(|d| TileDetectionsJson {
            tile_id: d.tile_id.clone(),
            boxes: d.boxes.iter().map(PixelBox::to_xywh).collect(),
            scores: d.scores.clone(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&raw).expect("detections serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pb(a: f64, b: f64, c: f64, d: f64) -> PixelBox {
        PixelBox::new(a, b, c, d).unwrap()
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> Detection {
        Detection::new(GeoBox::new(x0, y0, x1, y1).unwrap(), s)
    }

    fn naive_nms(dets: &[Detection], t: f64) -> Vec<usize> {
        let mut keep: Vec<usize> = Vec::new();
        for i in nms_order(dets) {
            if keep.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox).unwrap() <= t) {
                keep.push(i);
            }
        }
        keep
    }

    fn one_tile(boxes: Vec<PixelBox>) -> TileDetections {
        let n = boxes.len();
        TileDetections {
            tile_id: "t".into(),
            boxes,
            scores: vec![0.5; n],
        }
    }

    #[test]
    fn border_band_examples() {
        let td = one_tile(vec![pb(100., 100., 300., 300.), pb(0., 400., 60., 500.)]);
        let kept = discard_border(&td, 1000, 1000, 0.05, BandMode::Intersect);
        assert_eq!(kept.boxes, vec![pb(100., 100., 300., 300.)]);
        // inner region edges are inclusive
        let edge = one_tile(vec![pb(50., 50., 950., 950.)]);
        assert_eq!(discard_border(&edge, 1000, 1000, 0.05, BandMode::Intersect).boxes.len(), 1);
        let all = discard_border(&td, 1000, 1000, 0.0, BandMode::Intersect);
        assert_eq!(all.boxes.len(), 2);
    }

    #[test]
    fn contained_mode_only_drops_boxes_inside_band() {
        let td = one_tile(vec![pb(0., 400., 60., 500.), pb(0., 400., 40., 500.)]);
        let kept = discard_border(&td, 1000, 1000, 0.05, BandMode::Contained);
        assert_eq!(kept.boxes, vec![pb(0., 400., 60., 500.)]);
    }

    #[test]
    fn nms_two_box_cases() {
        // IoU 0.8: 10x10 vs 10x8 sharing an edge
        let high = vec![det(0., 0., 10., 10., 0.9), det(0., 0., 10., 8., 0.7)];
        assert!((iou(&high[0].bbox, &high[1].bbox).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(nms_indices(&high, 0.5), vec![0]);
        // IoU 0.3
        let low = vec![det(0., 0., 10., 10., 0.9), det(0., 0., 10., 3., 0.7)];
        assert!((iou(&low[0].bbox, &low[1].bbox).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(nms_indices(&low, 0.5), vec![0, 1]);
        assert_eq!(nms_indices(&high[..1], 0.5), vec![0]);
    }

    #[test]
    fn nms_threshold_one_is_pass_through() {
        let d = vec![det(0., 0., 1., 1., 0.5), det(0., 0., 1., 1., 0.4)];
        assert_eq!(nms_indices(&d, 1.0).len(), 2);
    }

    #[test]
    fn nms_tie_break_prefers_lower_min_x() {
        let d = vec![det(1., 0., 11., 10., 0.8), det(0., 0., 10., 10., 0.8)];
        assert_eq!(nms_indices(&d, 0.5), vec![1]);
    }

    fn frames_one(transform: AffineTransform) -> TileFrames {
        HashMap::from([(
            "t".to_string(),
            TileFrame {
                transform,
                width: 100,
                height: 100,
            },
        )])
    }

    #[test]
    fn to_world_anchors_at_tile_origin_and_rejects_unknown_tile() {
        let frames = frames_one(AffineTransform::north_up(500.0, 1000.0, 0.5));
        let td = one_tile(vec![pb(0., 0., 10., 10.)]);
        let w = to_world(std::slice::from_ref(&td), &frames).unwrap();
        assert_eq!(w[0].bbox, GeoBox::new(500.0, 995.0, 505.0, 1000.0).unwrap());
        assert_eq!(w[0].score, 0.5);
        let missing = TileDetections {
            tile_id: "nope".into(),
            ..td
        };
        assert!(to_world(&[missing], &frames).is_err());
        assert!(to_world(&[], &frames).unwrap().is_empty());
    }

    #[test]
    fn overlapping_tiles_duplicates_collapse() {
        // Two tiles with 50% overlap (100 px at 1 m/px, stride 50) both see
        // the tree at world x 60..70, y 40..50.
        let mut frames = TileFrames::new();
        frames.insert(
            "a".into(),
            TileFrame {
                transform: AffineTransform::north_up(0.0, 100.0, 1.0),
                width: 100,
                height: 100,
            },
        );
        frames.insert(
            "b".into(),
            TileFrame {
                transform: AffineTransform::north_up(50.0, 100.0, 1.0),
                width: 100,
                height: 100,
            },
        );
        let tds = vec![
            TileDetections {
                tile_id: "a".into(),
                boxes: vec![pb(60., 50., 70., 60.)],
                scores: vec![0.9],
            },
            TileDetections {
                tile_id: "b".into(),
                boxes: vec![pb(10., 50., 20., 60.)],
                scores: vec![0.8],
            },
        ];
        let world = to_world(&tds, &frames).unwrap();
        assert_eq!(world[0].bbox, world[1].bbox);
        let cfg = AggregationConfig {
            border_band_frac: 0.05,
            score_min: 0.0,
            nms_iou: 0.5,
            band_mode: BandMode::Intersect,
        };
        let merged = aggregate(&tds, &frames, &cfg).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].score, 0.9);
    }

    #[test]
    fn aggregate_extremes() {
        let frames = frames_one(AffineTransform::north_up(0.0, 100.0, 1.0));
        let td = TileDetections {
            tile_id: "t".into(),
            boxes: vec![pb(0., 0., 10., 10.), pb(2., 2., 12., 12.), pb(50., 50., 60., 60.)],
            scores: vec![0.9, 0.5, 0.99],
        };
        let strict = AggregationConfig {
            score_min: 1.0,
            ..AggregationConfig::default()
        };
        assert!(aggregate(std::slice::from_ref(&td), &frames, &strict).unwrap().is_empty());
        let pass = AggregationConfig {
            border_band_frac: 0.0,
            score_min: 0.0,
            nms_iou: 1.0,
            band_mode: BandMode::Intersect,
        };
        assert_eq!(aggregate(&[td], &frames, &pass).unwrap().len(), 3);
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..200.0);
                let y = rng.random_range(0.0..200.0);
                let w = rng.random_range(1.0..30.0);
                let h = rng.random_range(1.0..30.0);
                let s = (rng.random_range(0..20) as f64) / 20.0;
                det(x, y, x + w, y + h, s)
            })
            .collect()
    }

    #[test]
    fn grid_nms_matches_naive_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(0..200);
            let d = random_scene(&mut rng, n);
            let t = rng.random_range(0.0..1.0);
            assert_eq!(nms_indices(&d, t), naive_nms(&d, t));
        }
    }

    proptest! {
        #[test]
        fn nms_idempotent_and_pairwise_bounded(seed in 0u64..10_000, t in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_scene(&mut rng, 80);
            let once = nms(&d, t);
            let twice = nms(&once, t);
            prop_assert_eq!(&once, &twice);
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox).unwrap() <= t);
                }
            }
        }

        #[test]
        fn nms_order_independent_for_distinct_scores(seed in 0u64..10_000, t in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = random_scene(&mut rng, 60);
            for (i, x) in d.iter_mut().enumerate() {
                x.score = (i as f64 + 1.0) / 61.0;
            }
            let a: Vec<_> = nms(&d, t);
            let mut shuffled = d.clone();
            shuffled.reverse();
            shuffled.swap(0, 30);
            let b: Vec<_> = nms(&shuffled, t);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn raising_score_min_never_adds(seed in 0u64..10_000, lo in 0.0..1.0f64, hi in 0.0..1.0f64) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_scene(&mut rng, 50);
            let at = |s: f64| d.iter().filter(|x| x.score >= s).count();
            prop_assert!(at(hi) <= at(lo));
            prop_assert!(nms(&d, 0.5).len() <= d.len());
        }
    }
}
