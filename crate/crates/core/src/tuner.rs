//! Exhaustive grid search over the NMS IoU threshold and the minimum score,
//! maximising weighted RF1 over a set of validation rasters.
//!
//! Border discard and world mapping do not depend on either threshold, so
//! they run once per raster. Detections are then kept in NMS processing
//! order; since that order is score-descending, the score filter of every
//! cell is a prefix of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{nms_indices_ordered, nms_order, prepare, BandMode, TileDetections, TileFrames};
use crate::datamodel::Detection;
use crate::error::{Error, Result};
use crate::geometry::GeoBox;
use crate::metrics::{raster_f1, weighted_rf1, RasterEval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nms_values: Vec<f64>,
    pub score_values: Vec<f64>,
    /// IoU threshold of the RF1 matching.
    pub iou_threshold: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::with_step(0.05, 0.75).expect("default grid")
    }
}

impl GridSpec {
    /// Both axes set to `{0, step, 2*step, ..., 1}`; `1/step` must be an
    /// integer.
    pub fn with_step(step: f64, iou_threshold: f64) -> Result<Self> {
        let n = (1.0 / step).round();
        if !(step > 0.0 && step <= 1.0) || ((n * step) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "grid step {step} must divide 1 into whole steps"
            )));
        }
        let n = n as usize;
        let values: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        Ok(GridSpec {
            nms_values: values.clone(),
            score_values: values,
            iou_threshold,
        })
    }

    pub fn single(nms_iou: f64, score_min: f64, iou_threshold: f64) -> Self {
        GridSpec {
            nms_values: vec![nms_iou],
            score_values: vec![score_min],
            iou_threshold,
        }
    }

    pub fn cells(&self) -> usize {
        self.nms_values.len() * self.score_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells() == 0 {
            return Err(Error::Validation("empty tuning grid".into()));
        }
        for (name, axis) in [("nms", &self.nms_values), ("score", &self.score_values)] {
            if axis.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!("{name} grid values must lie in [0, 1]")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!("{name} grid values must be strictly ascending")));
            }
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// One validation raster: tile detections, tile placements and truth boxes.
#[derive(Debug, Clone)]
pub struct ValidationRaster {
    pub raster_id: String,
    pub tile_detections: Vec<TileDetections>,
    pub frames: TileFrames,
    pub truths: Vec<GeoBox>,
}

/// Per-raster cache shared by all cells.
#[derive(Debug, Clone)]
pub struct PreparedRaster {
    pub raster_id: String,
    /// World detections in NMS processing order.
    pub detections: Vec<Detection>,
    pub truths: Vec<GeoBox>,
}

impl PreparedRaster {
    pub fn new(raster: &ValidationRaster, band_frac: f64, mode: BandMode) -> Result<Self> {
        let world = prepare(&raster.tile_detections, &raster.frames, band_frac, mode)?;
        let detections = nms_order(&world).into_iter().map(|i| world[i].clone()).collect();
        Ok(PreparedRaster {
            raster_id: raster.raster_id.clone(),
            detections,
            truths: raster.truths.clone(),
        })
    }

    /// Score filter, NMS and RF1 matching for one cell.
    pub fn evaluate(&self, nms_iou: f64, score_min: f64, iou_threshold: f64) -> RasterEval {
        let k = self.detections.partition_point(|d| d.score >= score_min);
        let order: Vec<usize> = (0..k).collect();
        let kept = nms_indices_ordered(&self.detections, &order, nms_iou);
        let boxes: Vec<GeoBox> = kept.iter().map(|&i| self.detections[i].bbox).collect();
        let scores: Vec<f64> = kept.iter().map(|&i| self.detections[i].score).collect();
        raster_f1(self.raster_id.clone(), &boxes, &scores, &self.truths, iou_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_nms_iou: f64,
    pub best_score_min: f64,
    pub best_rf1: f64,
    pub iou_threshold: f64,
    pub nms_values: Vec<f64>,
    pub score_values: Vec<f64>,
    /// `surface[i][j]` is the RF1 at `nms_values[i]`, `score_values[j]`.
    pub surface: Vec<Vec<f64>>,
}

/// Weighted RF1 of one cell over prepared rasters.
pub fn evaluate_cell(rasters: &[PreparedRaster], nms_iou: f64, score_min: f64, iou_threshold: f64) -> Result<f64> {
    let evals: Vec<RasterEval> = rasters
        .iter()
        .map(|r| r.evaluate(nms_iou, score_min, iou_threshold))
        .collect();
    weighted_rf1(&evals)
}

/// Index of the best cell: highest RF1, then largest score threshold, then
/// largest NMS threshold.
pub fn argmax_cell(surface: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    for (i, row) in surface.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let b = surface[best.0][best.1];
            if v > b || (v == b && (j, i) > (best.1, best.0)) {
                best = (i, j);
            }
        }
    }
    best
}

/// Runs the grid on already-prepared rasters using `workers` threads.
pub fn tune_prepared(rasters: &[PreparedRaster], grid: &GridSpec, workers: usize) -> Result<TuneResult> {
    grid.validate()?;
    if rasters.is_empty() {
        return Err(Error::Validation("tuning needs at least one raster".into()));
    }
    if rasters.iter().all(|r| r.truths.is_empty()) {
        return Err(Error::Validation("no validation raster has ground truth".into()));
    }
    let ns = grid.score_values.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {workers} workers: {e}")))?;
    let flat: Vec<f64> = pool.install(|| {
        (0..grid.cells())
            .into_par_iter()
            .map(|c| {
                let (i, j) = (c / ns, c % ns);
                evaluate_cell(rasters, grid.nms_values[i], grid.score_values[j], grid.iou_threshold)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let surface: Vec<Vec<f64>> = flat.chunks(ns).map(<[f64]>::to_vec).collect();
    let (bi, bj) = argmax_cell(&surface);
    Ok(TuneResult {
        best_nms_iou: grid.nms_values[bi],
        best_score_min: grid.score_values[bj],
        best_rf1: surface[bi][bj],
        iou_threshold: grid.iou_threshold,
        nms_values: grid.nms_values.clone(),
        score_values: grid.score_values.clone(),
        surface,
    })
}

pub fn prepare_all(rasters: &[ValidationRaster], band_frac: f64, mode: BandMode) -> Result<Vec<PreparedRaster>> {
    rasters
        .iter()
        .map(|r| PreparedRaster::new(r, band_frac, mode))
        .collect()
}

pub fn tune(
    rasters: &[ValidationRaster],
    grid: &GridSpec,
    band_frac: f64,
    mode: BandMode,
    workers: usize,
) -> Result<TuneResult> {
    grid.validate()?;
    let prepared = prepare_all(rasters, band_frac, mode)?;
    tune_prepared(&prepared, grid, workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::{aggregate, AggregationConfig, TileFrame};
    use crate::geometry::{AffineTransform, PixelBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One 100x100 px tile at 1 m/px; truths well inside the band.
    fn raster(seed: u64, id: &str, noisy: bool) -> ValidationRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = AffineTransform::north_up(0.0, 100.0, 1.0);
        let mut truths = Vec::new();
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for _ in 0..12 {
            let (c, r) = (rng.random_range(10.0..80.0f64), rng.random_range(10.0..80.0f64));
            let (w, h) = (rng.random_range(3.0..9.0), rng.random_range(3.0..9.0));
            let pb = PixelBox::new(c, r, c + w, r + h).unwrap();
            truths.push(crate::geometry::pixel_to_world(&pb, &t).unwrap());
            if noisy {
                for _ in 0..rng.random_range(1..4) {
                    let j = |rng: &mut ChaCha8Rng| rng.random_range(-0.8..0.8);
                    boxes.push(PixelBox::new(c + j(&mut rng), r + j(&mut rng), c + w + j(&mut rng), r + h + j(&mut rng)).unwrap());
                    scores.push(rng.random_range(0.05..0.99));
                }
            } else {
                boxes.push(pb);
                scores.push(0.9);
            }
        }
        let tile_id = format!("{id}_t");
        let frames = [(tile_id.clone(), TileFrame { transform: t, width: 100, height: 100 })].into();
        ValidationRaster {
            raster_id: id.into(),
            tile_detections: vec![TileDetections { tile_id, boxes, scores }],
            frames,
            truths,
        }
    }

    #[test]
    fn default_grid_has_441_cells() {
        let g = GridSpec::default();
        assert_eq!(g.cells(), 441);
        assert_eq!(g.nms_values[18], 0.9);
        assert_eq!(g.iou_threshold, 0.75);
        assert!(GridSpec::with_step(0.3, 0.75).is_err());
    }

    #[test]
    fn perfect_predictions_tie_break() {
        let r = tune(&[raster(1, "a", false)], &GridSpec::default(), 0.05, BandMode::Intersect, 2).unwrap();
        assert_eq!(r.best_rf1, 1.0);
        assert_eq!((r.best_score_min, r.best_nms_iou), (0.9, 1.0));
        for row in &r.surface {
            assert!(row[19..].iter().all(|&v| v == 0.0));
        }
        assert!(r.surface[20][..19].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_cell_and_empty_grid() {
        let rs = [raster(2, "a", true)];
        let r = tune(&rs, &GridSpec::single(0.4, 0.3, 0.75), 0.05, BandMode::Intersect, 1).unwrap();
        assert_eq!((r.best_nms_iou, r.best_score_min), (0.4, 0.3));
        let empty = GridSpec { nms_values: vec![], score_values: vec![0.5], iou_threshold: 0.75 };
        assert!(tune(&rs, &empty, 0.05, BandMode::Intersect, 1).is_err());
    }

    #[test]
    fn cached_cells_equal_full_aggregation() {
        let rs = [raster(3, "a", true), raster(4, "b", true)];
        let grid = GridSpec::with_step(0.25, 0.5).unwrap();
        let r = tune(&rs, &grid, 0.05, BandMode::Intersect, 3).unwrap();
        for (i, &nms_iou) in grid.nms_values.iter().enumerate() {
            for (j, &score_min) in grid.score_values.iter().enumerate() {
                let cfg = AggregationConfig { border_band_frac: 0.05, score_min, nms_iou, band_mode: BandMode::Intersect };
                let evals: Vec<RasterEval> = rs
                    .iter()
                    .map(|v| {
                        let dets = aggregate(&v.tile_detections, &v.frames, &cfg).unwrap();
                        let b: Vec<GeoBox> = dets.iter().map(|d| d.bbox).collect();
                        let s: Vec<f64> = dets.iter().map(|d| d.score).collect();
                        raster_f1(v.raster_id.clone(), &b, &s, &v.truths, 0.5)
                    })
                    .collect();
                assert_eq!(r.surface[i][j], weighted_rf1(&evals).unwrap());
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let rs = [raster(5, "a", true), raster(6, "b", true), raster(7, "c", true)];
        let g = GridSpec::default();
        let one = tune(&rs, &g, 0.05, BandMode::Intersect, 1).unwrap();
        for w in [2, 4, 7] {
            assert_eq!(tune(&rs, &g, 0.05, BandMode::Intersect, w).unwrap(), one);
        }
        let again = tune(&rs, &GridSpec::single(one.best_nms_iou, one.best_score_min, 0.75), 0.05, BandMode::Intersect, 1).unwrap();
        assert_eq!(again.best_rf1, one.best_rf1);
        let max = one.surface.iter().flatten().cloned().fold(f64::MIN, f64::max);
        assert_eq!(one.best_rf1, max);
    }

    #[test]
    fn argmax_prefers_larger_score_then_larger_nms() {
        let s = vec![vec![0.5, 0.7, 0.7], vec![0.7, 0.7, 0.1], vec![0.2, 0.7, 0.3]];
        assert_eq!(argmax_cell(&s), (0, 2));
        let s = vec![vec![0.5, 0.7], vec![0.1, 0.7], vec![0.7, 0.6]];
        assert_eq!(argmax_cell(&s), (1, 1));
    }
}
