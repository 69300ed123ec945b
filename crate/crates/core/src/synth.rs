//! Deterministic synthetic scenes: crown layouts painted as ellipses on a
//! textured background, plus a simple detector model that perturbs the
//! ground truth into scored detections.
//!
//! Every random draw comes from a ChaCha stream selected by (seed, purpose,
//! item index), so results depend only on the configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::TileDetections;
use crate::datamodel::{Annotation, Detection, PixelData, RasterMeta, SceneBundle};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, AffineTransform, GeoBox, PixelBox};
use crate::tiler::TileRecord;

const STREAM_LAYOUT: u64 = 0x6c61_796f_7574;
const STREAM_PAINT: u64 = 0x70_6169_6e74;
const STREAM_PERTURB: u64 = 0x70_6572_7475_7262;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub raster_id: String,
    pub crs: String,
    /// World coordinates of the upper-left raster corner.
    pub origin: [f64; 2],
    /// Scene side in meters.
    pub extent_m: f64,
    pub gsd: f64,
    pub n_crowns: usize,
    /// Median crown side in meters (log-normal).
    pub crown_median_m: f64,
    /// Standard deviation of log crown side.
    pub crown_log_sigma: f64,
    pub crown_min_m: f64,
    /// Crowns are capped at this side length.
    pub crown_max_m: f64,
    /// Crowns keep this distance from the raster border.
    pub edge_margin_m: f64,
    pub max_gt_iou: f64,
    /// Placement attempts per crown before giving up.
    pub max_retries: usize,
    /// Standard deviation of the per-edge jitter in meters.
    pub jitter_sigma_m: f64,
    pub drop_prob: f64,
    /// Expected spurious boxes per ground-truth crown.
    pub spurious_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            raster_id: "synth".into(),
            crs: "EPSG:32618".into(),
            origin: [500_000.0, 5_000_000.0],
            extent_m: 400.0,
            gsd: 0.045,
            n_crowns: 500,
            crown_median_m: 8.0,
            crown_log_sigma: 0.4,
            crown_min_m: 1.5,
            crown_max_m: 24.0,
            edge_margin_m: 2.5,
            max_gt_iou: 0.2,
            max_retries: 1000,
            jitter_sigma_m: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("extent_m", self.extent_m),
            ("gsd", self.gsd),
            ("crown_median_m", self.crown_median_m),
            ("crown_min_m", self.crown_min_m),
            ("crown_max_m", self.crown_max_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("max_gt_iou", self.max_gt_iou),
            ("drop_prob", self.drop_prob),
            ("spurious_rate", self.spurious_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.jitter_sigma_m >= 0.0 && self.crown_log_sigma >= 0.0 && self.edge_margin_m >= 0.0) {
            return Err(Error::Validation("sigma and margin values must be non-negative".into()));
        }
        if self.crown_min_m > self.crown_max_m {
            return Err(Error::Validation("crown_min_m exceeds crown_max_m".into()));
        }
        if self.crown_max_m + 2.0 * self.edge_margin_m > self.extent_m {
            return Err(Error::Validation(format!(
                "crowns up to {} m with a {} m margin do not fit a {} m scene",
                self.crown_max_m, self.edge_margin_m, self.extent_m
            )));
        }
        Ok(())
    }

    pub fn size_px(&self) -> u32 {
        ((self.extent_m / self.gsd).round() as u32).max(1)
    }

    pub fn transform(&self) -> AffineTransform {
        AffineTransform::north_up(self.origin[0], self.origin[1], self.gsd)
    }
}

fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose);
    rng.set_stream(index);
    rng
}

/// Draws crown boxes with pairwise IoU at most `max_gt_iou`.
pub fn gen_layout(cfg: &SynthConfig) -> Result<Vec<GeoBox>> {
    cfg.validate()?;
    let side = cfg.size_px() as f64 * cfg.gsd;
    let [x0, y_top] = cfg.origin;
    let size = LogNormal::new(cfg.crown_median_m.ln(), cfg.crown_log_sigma)
        .map_err(|e| Error::Validation(format!("crown size distribution: {e}")))?;
    let aspect = LogNormal::new(0.0, 0.15).expect("constant parameters");
    let mut boxes: Vec<GeoBox> = Vec::with_capacity(cfg.n_crowns);
    for i in 0..cfg.n_crowns {
        let mut rng = stream(cfg.seed, STREAM_LAYOUT, i as u64);
        let mut placed = false;
        for _ in 0..cfg.max_retries.max(1) {
            let w: f64 = size.sample(&mut rng).clamp(cfg.crown_min_m, cfg.crown_max_m);
            let h = (w * aspect.sample(&mut rng)).clamp(cfg.crown_min_m, cfg.crown_max_m);
            let lo = cfg.edge_margin_m;
            let (ux, uy): (f64, f64) = (rng.random(), rng.random());
            let cx = lo + w / 2.0 + ux * (side - 2.0 * lo - w).max(0.0);
            let cy = lo + h / 2.0 + uy * (side - 2.0 * lo - h).max(0.0);
            let b = GeoBox {
                min_x: x0 + cx - w / 2.0,
                max_x: x0 + cx + w / 2.0,
                min_y: y_top - cy - h / 2.0,
                max_y: y_top - cy + h / 2.0,
            };
            if boxes.iter().all(|o| iou_unchecked(&b, o) <= cfg.max_gt_iou) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Validation(format!(
                "cannot place crown {i} of {} with IoU <= {} after {} attempts",
                cfg.n_crowns, cfg.max_gt_iou, cfg.max_retries
            )));
        }
    }
    Ok(boxes)
}

fn hash2(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^ (h >> 33)
}

/// Textured background with one filled ellipse per crown.
pub fn paint(cfg: &SynthConfig, crowns: &[GeoBox]) -> PixelData {
    let n = cfg.size_px();
    let mut px = PixelData::filled(n, n, 3, &[0, 0, 0]);
    let row_len = n as usize * 3;
    px.data.par_chunks_mut(row_len).enumerate().for_each(|(r, row)| {
        for c in 0..n as usize {
            let v = (hash2(cfg.seed, (c >> 2) as u64, (r >> 2) as u64) % 40) as u8;
            row[c * 3..c * 3 + 3].copy_from_slice(&[70 + v, 90 + v, 50 + v / 2]);
        }
    });
    let t = cfg.transform();
    for (i, b) in crowns.iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_PAINT, i as u64);
        let u: f64 = rng.random();
        let color = [(30.0 + 40.0 * u) as u8, (110.0 + 80.0 * u) as u8, (30.0 + 30.0 * u) as u8];
        let [c0, r0, c1, r1] = crate::geometry::world_to_pixel_exact(b, &t).unwrap_or([0.0; 4]);
        let (ca, ra) = ((c0 + c1) / 2.0, (r0 + r1) / 2.0);
        let (ha, hb) = ((c1 - c0) / 2.0, (r1 - r0) / 2.0);
        let col_lo = c0.floor().max(0.0) as u32;
        let col_hi = (c1.ceil() as u32).min(n);
        let row_lo = r0.floor().max(0.0) as u32;
        let row_hi = (r1.ceil() as u32).min(n);
        for r in row_lo..row_hi {
            let dy = (r as f64 + 0.5 - ra) / hb;
            for c in col_lo..col_hi {
                let dx = (c as f64 + 0.5 - ca) / ha;
                if dx * dx + dy * dy <= 1.0 {
                    px.pixel_mut(c, r).copy_from_slice(&color);
                }
            }
        }
    }
    px
}

/// Builds the full scene: layout, pixels and annotations.
pub fn gen_scene(cfg: &SynthConfig) -> Result<SceneBundle> {
    let crowns = gen_layout(cfg)?;
    let pixels = paint(cfg, &crowns);
    let n = cfg.size_px();
    let raster = RasterMeta::new(cfg.raster_id.clone(), n, n, cfg.transform(), cfg.crs.clone())?;
    let annotations = crowns
        .into_iter()
        .enumerate()
        .map(|(i, bbox)| Annotation {
            ann_id: i as u64,
            bbox,
            raster_id: cfg.raster_id.clone(),
        })
        .collect();
    SceneBundle::new(raster, Vec::new(), annotations, pixels)
}

/// Per-edge jitter in the units of `b`, returning the box and its score.
fn jitter(b: [f64; 4], sigma: f64, rng: &mut ChaCha8Rng) -> ([f64; 4], f64) {
    if sigma == 0.0 {
        return (b, 0.99);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is non-negative and finite");
    let d: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
    let mut out = [b[0] + d[0], b[1] + d[1], b[2] + d[2], b[3] + d[3]];
    if out[0] > out[2] {
        out.swap(0, 2);
    }
    if out[1] > out[3] {
        out.swap(1, 3);
    }
    let size = ((b[2] - b[0]) + (b[3] - b[1])) / 2.0;
    let mean_abs = d.iter().map(|v| v.abs()).sum::<f64>() / 4.0;
    (out, (1.0 - mean_abs / size).clamp(0.05, 0.99))
}

/// Box of the given size at a uniform position inside `frame`.
fn spurious(frame: [f64; 4], w: f64, h: f64, rng: &mut ChaCha8Rng) -> ([f64; 4], f64) {
    let (w, h) = (w.min(frame[2] - frame[0]), h.min(frame[3] - frame[1]));
    let x = frame[0] + rng.random::<f64>() * (frame[2] - frame[0] - w);
    let y = frame[1] + rng.random::<f64>() * (frame[3] - frame[1] - h);
    ([x, y, x + w, y + h], rng.random_range(0.05..0.3))
}

/// Detector model over `boxes` (`[x0, y0, x1, y1]` each). Output boxes are
/// clipped to `frame` and zero-area results dropped. `sigma` is in box units.
fn perturb_boxes(
    boxes: &[[f64; 4]],
    frame: [f64; 4],
    sigma: f64,
    cfg: &SynthConfig,
    stream_base: u64,
) -> Vec<([f64; 4], f64)> {
    let mut out = Vec::new();
    for (i, &b) in boxes.iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_PERTURB, stream_base.wrapping_add(i as u64));
        let keep = rng.random::<f64>() >= cfg.drop_prob;
        let (jb, score) = jitter(b, sigma, &mut rng);
        let spur = (rng.random::<f64>() < cfg.spurious_rate)
            .then(|| spurious(frame, b[2] - b[0], b[3] - b[1], &mut rng));
        if keep {
            out.push((jb, score));
        }
        out.extend(spur);
    }
    out.into_iter()
        .map(|(b, s)| {
            (
                [
                    b[0].clamp(frame[0], frame[2]),
                    b[1].clamp(frame[1], frame[3]),
                    b[2].clamp(frame[0], frame[2]),
                    b[3].clamp(frame[1], frame[3]),
                ],
                s,
            )
        })
        .filter(|(b, _)| b[2] > b[0] && b[3] > b[1])
        .collect()
}

/// Raster-level detections from ground truth.
pub fn perturb(gts: &[Annotation], cfg: &SynthConfig) -> Vec<Detection> {
    if gts.is_empty() {
        return Vec::new();
    }
    let boxes: Vec<[f64; 4]> = gts
        .iter()
        .map(|a| [a.bbox.min_x, a.bbox.min_y, a.bbox.max_x, a.bbox.max_y])
        .collect();
    let env = GeoBox::envelope(gts.iter().flat_map(|a| [(a.bbox.min_x, a.bbox.min_y), (a.bbox.max_x, a.bbox.max_y)]));
    let frame = [env.min_x, env.min_y, env.max_x, env.max_y];
    perturb_boxes(&boxes, frame, cfg.jitter_sigma_m, cfg, 0)
        .into_iter()
        .map(|(b, s)| Detection::new(GeoBox { min_x: b[0], min_y: b[1], max_x: b[2], max_y: b[3] }, s))
        .collect()
}

/// Tile-level detections from each tile's assigned annotations, as a
/// detector run on every tile would produce them.
pub fn perturb_tiles(tiles: &[TileRecord], cfg: &SynthConfig) -> Vec<TileDetections> {
    tiles
        .par_iter()
        .enumerate()
        .map(|(ti, t)| {
            let boxes: Vec<[f64; 4]> = t
                .annotations
                .iter()
                .map(|a| [a.bbox.col_min, a.bbox.row_min, a.bbox.col_max, a.bbox.row_max])
                .collect();
            let frame = [0.0, 0.0, t.width() as f64, t.height() as f64];
            let base = ((ti as u64) << 32) | 1 << 31;
            let dets = perturb_boxes(&boxes, frame, cfg.jitter_sigma_m / t.gsd(), cfg, base);
            TileDetections {
                tile_id: t.tile_id.clone(),
                boxes: dets
                    .iter()
                    .map(|(b, _)| PixelBox { col_min: b[0], row_min: b[1], col_max: b[2], row_max: b[3] })
                    .collect(),
                scores: dets.iter().map(|d| d.1).collect(),
            }
        })
        .collect()
}
