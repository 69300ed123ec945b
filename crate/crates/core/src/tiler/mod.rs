//! Sliding-window tiling with AOI masking, annotation assignment and tile
//! filtering.
//!
//! Tiles are planned on the (optionally resampled) raster grid with stride
//! `round(T * (1 - overlap))`. The last window on each axis is snapped to the
//! raster edge instead of padding. Each window is cut once per split whose
//! AOI it touches; pixels outside that split's AOI (or inside its holes) are
//! blacked out.

pub mod coco;

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::raster::{write_geotiff, PixelData};
use crate::datamodel::{assign_split, Aoi, Annotation, RasterMeta, SceneBundle, Split};
use crate::error::{Error, Result};
use crate::geometry::{pixel_to_world, world_to_pixel_exact, AffineTransform, GeoBox, PixelBox};

pub use coco::{emit_coco, load_coco, write_coco_index, CocoIndex};

/// Channel value at or below which a pixel counts as black.
pub const BLACK_MAX: u8 = 5;
/// Channel value at or above which a pixel counts as white.
pub const WHITE_MIN: u8 = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    pub tile_size_px: u32,
    pub overlap: f64,
    pub min_annotation_frac: f64,
    pub max_dark_frac: f64,
    pub resample_gsd: Option<f64>,
    /// Drop train/valid tiles without annotations. Test tiles are never
    /// dropped for being empty.
    pub drop_empty: bool,
    /// Restrict output to these splits; `None` tiles every split with an AOI.
    pub splits: Option<Vec<Split>>,
    /// Split label used when the scene has no AOIs (no masking happens).
    pub unmasked_split: Split,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            tile_size_px: 1777,
            overlap: 0.75,
            min_annotation_frac: 0.4,
            max_dark_frac: 0.8,
            resample_gsd: None,
            drop_empty: true,
            splits: None,
            unmasked_split: Split::Test,
        }
    }
}

impl TilingConfig {
    pub fn stride_px(&self) -> u32 {
        (self.tile_size_px as f64 * (1.0 - self.overlap)).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size_px == 0 {
            return Err(Error::Validation("tile size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Validation(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        if self.stride_px() < 1 {
            return Err(Error::Validation(format!(
                "overlap {} leaves a zero stride for {} px tiles",
                self.overlap, self.tile_size_px
            )));
        }
        for (name, v) in [
            ("min_annotation_frac", self.min_annotation_frac),
            ("max_dark_frac", self.max_dark_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
            }
        }
        if let Some(g) = self.resample_gsd {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Validation(format!("resample gsd {g} must be positive")));
            }
        }
        Ok(())
    }
}

/// Integer pixel window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub col_off: u32,
    pub row_off: u32,
    pub width: u32,
    pub height: u32,
}

impl Window {
    pub fn pixel_box(&self) -> PixelBox {
        PixelBox {
            col_min: self.col_off as f64,
            row_min: self.row_off as f64,
            col_max: (self.col_off + self.width) as f64,
            row_max: (self.row_off + self.height) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub windows: Vec<Window>,
    /// Set when the raster is smaller than one tile along some axis.
    pub undersized: bool,
}

/// Window origins along one axis.
pub fn axis_origins(n: u32, tile: u32, stride: u32) -> Vec<u32> {
    if n <= tile {
        return vec![0];
    }
    let mut out: Vec<u32> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o + tile <= n)
        .collect();
    if let Some(&last) = out.last() {
        if last + tile < n {
            out.push(n - tile);
        }
    }
    out
}

/// Raster metadata after resampling to `gsd`, preserving the extent.
pub fn resampled_meta(raster: &RasterMeta, gsd: f64) -> RasterMeta {
    let scale = raster.gsd() / gsd;
    let w = ((raster.width as f64 * scale).round() as u32).max(1);
    let h = ((raster.height as f64 * scale).round() as u32).max(1);
    RasterMeta {
        width: w,
        height: h,
        transform: raster
            .transform
            .rescaled(raster.width as f64 / w as f64, raster.height as f64 / h as f64),
        ..raster.clone()
    }
}

/// Plans the tile windows for a raster (resampled first when configured).
pub fn plan_grid(raster: &RasterMeta, cfg: &TilingConfig) -> Result<GridPlan> {
    cfg.validate()?;
    let grid = match cfg.resample_gsd {
        Some(g) => resampled_meta(raster, g),
        None => raster.clone(),
    };
    let (t, s) = (cfg.tile_size_px, cfg.stride_px());
    let undersized = grid.width < t || grid.height < t;
    if undersized {
        warn!(
            "raster {} ({}x{}) is smaller than one {t} px tile; emitting a clamped window",
            grid.raster_id, grid.width, grid.height
        );
    }
    let cols = axis_origins(grid.width, t, s);
    let rows = axis_origins(grid.height, t, s);
    let windows = rows
        .iter()
        .flat_map(|&r| {
            cols.iter().map(move |&c| Window {
                col_off: c,
                row_off: r,
                width: t.min(grid.width),
                height: t.min(grid.height),
            })
        })
        .collect();
    Ok(GridPlan {
        windows,
        undersized,
    })
}

/// One annotation clipped to a tile, in tile-local pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileAnnotation {
    pub ann_id: u64,
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub raster_id: String,
    pub split: Split,
    /// Window in the (possibly resampled) raster grid.
    pub pixel_window: Window,
    pub transform: AffineTransform,
    pub crs: String,
    pub annotations: Vec<TileAnnotation>,
    /// Fraction of black or masked pixels after masking.
    pub masked_frac: f64,
    pub white_frac: f64,
    pub transparent_frac: f64,
}

impl TileRecord {
    pub fn width(&self) -> u32 {
        self.pixel_window.width
    }

    pub fn height(&self) -> u32 {
        self.pixel_window.height
    }

    pub fn gsd(&self) -> f64 {
        self.transform.a.abs()
    }

    /// World envelope of the whole tile.
    pub fn footprint(&self) -> GeoBox {
        let full = PixelBox {
            col_min: 0.0,
            row_min: 0.0,
            col_max: self.width() as f64,
            row_max: self.height() as f64,
        };
        pixel_to_world(&full, &self.transform).expect("tile transforms are invertible")
    }
}

/// `{raster_id}_{split}_{gsd in cm, '.' as 'p'}_{col:06}_{row:06}`.
pub fn tile_id(raster_id: &str, split: Split, gsd: f64, window: &Window) -> String {
    let cm = format!("{:.2}", gsd * 100.0);
    let cm = cm.trim_end_matches('0').trim_end_matches('.').replace('.', "p");
    format!(
        "{raster_id}_{split}_{cm}_{:06}_{:06}",
        window.col_off, window.row_off
    )
}

/// Blacks out pixels whose centers fall outside the union of the split's
/// AOIs. Returns the masked fraction.
pub fn mask_tile(
    pixels: &mut PixelData,
    transform: &AffineTransform,
    aois: &[Aoi],
    split: Split,
) -> f64 {
    let polys: Vec<_> = aois
        .iter()
        .filter(|a| a.split == split)
        .flat_map(|a| a.polygons.iter())
        .collect();
    let (w, h) = (pixels.width as usize, pixels.height as usize);
    let mut inside = vec![false; w];
    let mut xs = Vec::new();
    let mut masked = 0usize;
    let scanline = transform.b == 0.0 && transform.d == 0.0 && transform.a > 0.0;
    let x_at = |col: usize| transform.a * (col as f64 + 0.5) + transform.c;
    for row in 0..h {
        inside.iter_mut().for_each(|v| *v = false);
        if scanline {
            let y = transform.e * (row as f64 + 0.5) + transform.f;
            for poly in &polys {
                xs.clear();
                poly.row_crossings(y, &mut xs);
                for span in xs.chunks_exact(2) {
                    let (lo, hi) = (span[0], span[1]);
                    let first = first_col_at_or_after(lo, w, &x_at);
                    let end = first_col_at_or_after(hi, w, &x_at);
                    inside[first..end].iter_mut().for_each(|v| *v = true);
                }
            }
        } else {
            for (col, v) in inside.iter_mut().enumerate() {
                let (x, y) = transform.apply(col as f64 + 0.5, row as f64 + 0.5);
                *v = polys.iter().any(|p| p.contains_point(x, y));
            }
        }
        for (col, &keep) in inside.iter().enumerate() {
            if !keep {
                masked += 1;
                pixels
                    .pixel_mut(col as u32, row as u32)
                    .iter_mut()
                    .for_each(|v| *v = 0);
            }
        }
    }
    masked as f64 / (w * h).max(1) as f64
}

/// Smallest column whose center x is >= `bound`, in `0..=w`.
fn first_col_at_or_after(bound: f64, w: usize, x_at: &impl Fn(usize) -> f64) -> usize {
    let guess = x_at(0);
    let step = x_at(1) - guess;
    let est = ((bound - guess) / step).ceil();
    let mut col = if est <= 0.0 {
        0
    } else if est >= w as f64 {
        w
    } else {
        est as usize
    };
    // Nudge against rounding so the result agrees with the direct test.
    while col < w && x_at(col) < bound {
        col += 1;
    }
    while col > 0 && x_at(col - 1) >= bound {
        col -= 1;
    }
    col
}

/// Black/masked, white and transparent fractions of a tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelStats {
    pub dark_frac: f64,
    pub white_frac: f64,
    pub transparent_frac: f64,
}

pub fn pixel_stats(pixels: &PixelData) -> PixelStats {
    let alpha = pixels.has_alpha();
    let (mut dark, mut white, mut clear) = (0usize, 0usize, 0usize);
    for px in pixels.data.chunks_exact(pixels.channels as usize) {
        let transparent = alpha && px[3] == 0;
        if transparent {
            clear += 1;
        }
        if transparent || px[..3].iter().all(|&v| v <= BLACK_MAX) {
            dark += 1;
        }
        if px[..3].iter().all(|&v| v >= WHITE_MIN) {
            white += 1;
        }
    }
    let n = (pixels.data.len() / pixels.channels as usize).max(1) as f64;
    PixelStats {
        dark_frac: dark as f64 / n,
        white_frac: white as f64 / n,
        transparent_frac: clear as f64 / n,
    }
}

/// Keeps annotations with at least `min_frac` of their area inside the tile
/// footprint, clipped to the tile and expressed in tile pixels.
pub fn assign_annotations(
    tile: &TileRecord,
    annotations: &[Annotation],
    min_frac: f64,
) -> Vec<TileAnnotation> {
    let footprint = tile.footprint();
    let (w, h) = (tile.width() as f64, tile.height() as f64);
    annotations
        .iter()
        .filter_map(|a| {
            let area = a.bbox.area();
            let clipped = a.bbox.intersection(&footprint)?;
            if area <= 0.0 || clipped.area() / area < min_frac {
                return None;
            }
            let [c0, r0, c1, r1] = world_to_pixel_exact(&clipped, &tile.transform).ok()?;
            Some(TileAnnotation {
                ann_id: a.ann_id,
                bbox: PixelBox {
                    col_min: c0.clamp(0.0, w),
                    row_min: r0.clamp(0.0, h),
                    col_max: c1.clamp(0.0, w),
                    row_max: r1.clamp(0.0, h),
                },
            })
        })
        .collect()
}

/// Drops tiles that are mostly black, white or transparent, and empty
/// train/valid tiles when `drop_empty` is set.
pub fn filter_tiles(tiles: Vec<TileRecord>, cfg: &TilingConfig) -> Vec<TileRecord> {
    tiles.into_iter().filter(|t| keep_tile(t, cfg)).collect()
}

pub fn keep_tile(t: &TileRecord, cfg: &TilingConfig) -> bool {
    let empty_drop = cfg.drop_empty && t.split != Split::Test && t.annotations.is_empty();
    !(empty_drop
        || t.masked_frac > cfg.max_dark_frac
        || t.white_frac > cfg.max_dark_frac
        || t.transparent_frac > cfg.max_dark_frac)
}

/// A tile record with its pixels.
#[derive(Debug, Clone)]
pub struct Tile {
    pub record: TileRecord,
    pub pixels: PixelData,
}

/// Plans, masks, assigns and filters all tiles of a scene.
pub struct Tiler<'a> {
    scene: &'a SceneBundle,
    cfg: TilingConfig,
    grid: RasterMeta,
    pixels: std::borrow::Cow<'a, PixelData>,
    by_split: Vec<(Split, Vec<Annotation>)>,
    plan: GridPlan,
}

impl<'a> Tiler<'a> {
    pub fn new(scene: &'a SceneBundle, cfg: TilingConfig) -> Result<Self> {
        let plan = plan_grid(&scene.raster, &cfg)?;
        let (grid, pixels) = match cfg.resample_gsd {
            Some(g) => {
                let grid = resampled_meta(&scene.raster, g);
                let px = scene.pixels.resample_bilinear(grid.width, grid.height);
                (grid, std::borrow::Cow::Owned(px))
            }
            None => (
                scene.raster.clone(),
                std::borrow::Cow::Borrowed(scene.pixels.as_ref()),
            ),
        };
        let mut splits: Vec<Split> = if scene.aois.is_empty() {
            vec![cfg.unmasked_split]
        } else {
            let mut s: Vec<Split> = scene.aois.iter().map(|a| a.split).collect();
            s.sort();
            s.dedup();
            s
        };
        if let Some(only) = &cfg.splits {
            splits.retain(|s| only.contains(s));
        }
        let by_split = splits
            .iter()
            .map(|&split| {
                let anns = scene
                    .annotations
                    .iter()
                    .filter(|a| {
                        if scene.aois.is_empty() {
                            true
                        } else {
                            assign_split(a, &scene.aois) == Some(split)
                        }
                    })
                    .cloned()
                    .collect();
                (split, anns)
            })
            .collect();
        Ok(Tiler {
            scene,
            cfg,
            grid,
            pixels,
            by_split,
            plan,
        })
    }

    pub fn plan(&self) -> &GridPlan {
        &self.plan
    }

    pub fn grid(&self) -> &RasterMeta {
        &self.grid
    }

    /// All (window, split) jobs in deterministic order.
    pub fn jobs(&self) -> Vec<(Window, usize)> {
        self.plan
            .windows
            .iter()
            .flat_map(|w| (0..self.by_split.len()).map(move |i| (*w, i)))
            .collect()
    }

    /// Cuts one tile; `None` when the filters reject it.
    pub fn render(&self, window: Window, split_idx: usize) -> Option<Tile> {
        let (split, anns) = &self.by_split[split_idx];
        let transform = self
            .grid
            .transform
            .window(window.col_off as f64, window.row_off as f64);
        let mut record = TileRecord {
            tile_id: tile_id(&self.grid.raster_id, *split, self.grid.gsd(), &window),
            raster_id: self.grid.raster_id.clone(),
            split: *split,
            pixel_window: window,
            transform,
            crs: self.grid.crs.clone(),
            annotations: Vec::new(),
            masked_frac: 0.0,
            white_frac: 0.0,
            transparent_frac: 0.0,
        };
        let masking = !self.scene.aois.is_empty();
        if masking {
            let footprint = record.footprint();
            let touches = self
                .scene
                .aois
                .iter()
                .filter(|a| a.split == *split)
                .any(|a| a.overlap_area(&footprint) > 0.0);
            if !touches {
                return None;
            }
        }
        record.annotations = assign_annotations(&record, anns, self.cfg.min_annotation_frac);
        let empty_drop =
            self.cfg.drop_empty && *split != Split::Test && record.annotations.is_empty();
        if empty_drop {
            return None;
        }
        let mut pixels = self
            .pixels
            .crop(window.col_off, window.row_off, window.width, window.height);
        if masking {
            mask_tile(&mut pixels, &transform, &self.scene.aois, *split);
        }
        let stats = pixel_stats(&pixels);
        record.masked_frac = stats.dark_frac;
        record.white_frac = stats.white_frac;
        record.transparent_frac = stats.transparent_frac;
        keep_tile(&record, &self.cfg).then_some(Tile { record, pixels })
    }

    /// Renders every tile in parallel, sorted by tile id.
    pub fn tiles(&self) -> Vec<Tile> {
        let mut out: Vec<Tile> = self
            .jobs()
            .into_par_iter()
            .filter_map(|(w, i)| self.render(w, i))
            .collect();
        out.sort_by(|a, b| a.record.tile_id.cmp(&b.record.tile_id));
        out
    }

    /// Renders and writes tiles to `out_dir/tiles/` without holding all
    /// pixels in memory, then writes `out_dir/coco.json`.
    pub fn write_to_dir(&self, out_dir: &Path) -> Result<Vec<TileRecord>> {
        self.write_to_dir_as(out_dir, "coco.json")
    }

    /// Like [`Tiler::write_to_dir`] with a custom index file name.
    pub fn write_to_dir_as(&self, out_dir: &Path, index_name: &str) -> Result<Vec<TileRecord>> {
        let tiles_dir = out_dir.join("tiles");
        std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
        let mut records = self
            .jobs()
            .into_par_iter()
            .filter_map(|(w, i)| self.render(w, i))
            .map(|tile| {
                let path = tiles_dir.join(format!("{}.tif", tile.record.tile_id));
                write_geotiff(&path, &tile.record.transform, &tile.record.crs, &tile.pixels)?;
                Ok(tile.record)
            })
            .collect::<Result<Vec<_>>>()?;
        records.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
        write_coco_index(&records, &out_dir.join(index_name))?;
        Ok(records)
    }
}

/// Convenience wrapper: all kept tiles of a scene.
pub fn tile_scene(scene: &SceneBundle, cfg: &TilingConfig) -> Result<Vec<Tile>> {
    Ok(Tiler::new(scene, cfg.clone())?.tiles())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Polygon;
    use proptest::prelude::*;

    fn meta(w: u32, h: u32, gsd: f64) -> RasterMeta {
        RasterMeta::new(
            "r",
            w,
            h,
            AffineTransform::north_up(0.0, h as f64 * gsd, gsd),
            "EPSG:32618",
        )
        .unwrap()
    }

    fn cfg(t: u32, overlap: f64) -> TilingConfig {
        TilingConfig {
            tile_size_px: t,
            overlap,
            ..TilingConfig::default()
        }
    }

    #[test]
    fn grid_4000_px_quarter_stride() {
        let plan = plan_grid(&meta(4000, 4000, 0.045), &cfg(1000, 0.75)).unwrap();
        let origins = axis_origins(4000, 1000, 250);
        assert_eq!(origins, (0..13).map(|k| k * 250).collect::<Vec<_>>());
        assert_eq!(plan.windows.len(), 13 * 13);
        assert!(!plan.undersized);
    }

    #[test]
    fn grid_single_window_when_raster_equals_tile() {
        let plan = plan_grid(&meta(1000, 1000, 0.1), &cfg(1000, 0.5)).unwrap();
        assert_eq!(plan.windows.len(), 1);
        assert_eq!(plan.windows[0].col_off, 0);
    }

    #[test]
    fn grid_snaps_last_window_to_edge() {
        assert_eq!(axis_origins(1100, 1000, 250), vec![0, 100]);
    }

    #[test]
    fn grid_count_formula() {
        for n in [1001u32, 1100, 1250, 1251, 2000, 3999, 4001] {
            let s = 250u32;
            let expect = (n - 1000).div_ceil(s) + 1;
            assert_eq!(axis_origins(n, 1000, s).len() as u32, expect, "n={n}");
        }
    }

    #[test]
    fn undersized_raster_is_clamped() {
        let plan = plan_grid(&meta(300, 2000, 0.1), &cfg(1000, 0.5)).unwrap();
        assert!(plan.undersized);
        assert!(plan.windows.iter().all(|w| w.width == 300 && w.height == 1000));
    }

    #[test]
    fn eighty_metre_tile_at_4_5_cm() {
        // 80 m / 0.045 m/px
        assert_eq!((80.0f64 / 0.045).floor() as u32, 1777);
    }

    #[test]
    fn config_rejects_bad_overlap() {
        assert!(cfg(100, 1.0).validate().is_err());
        assert!(cfg(1, 0.75).validate().is_err());
        assert!(cfg(100, 0.75).validate().is_ok());
    }

    fn aoi_rect(split: Split, b: GeoBox, holes: &[GeoBox]) -> Aoi {
        Aoi {
            split,
            polygons: vec![Polygon::new(
                b.ring().to_vec(),
                holes.iter().map(|h| h.ring().to_vec()).collect(),
            )],
        }
    }

    #[test]
    fn mask_inside_outside_and_quadrant_hole() {
        let t = AffineTransform::north_up(0.0, 100.0, 1.0);
        let full = GeoBox::new(-10.0, -10.0, 110.0, 110.0).unwrap();

        let mut px = PixelData::filled(100, 100, 3, &[90, 120, 60]);
        let f = mask_tile(&mut px, &t, &[aoi_rect(Split::Train, full, &[])], Split::Train);
        assert_eq!(f, 0.0);
        assert!(px.data.chunks(3).all(|p| p == [90, 120, 60]));

        let mut px = PixelData::filled(100, 100, 3, &[90, 120, 60]);
        let far = GeoBox::new(500.0, 500.0, 600.0, 600.0).unwrap();
        let f = mask_tile(&mut px, &t, &[aoi_rect(Split::Train, far, &[])], Split::Train);
        assert_eq!(f, 1.0);

        // hole over the top-left quadrant: x 0..50, y 50..100
        let hole = GeoBox::new(0.0, 50.0, 50.0, 100.0).unwrap();
        let mut px = PixelData::filled(100, 100, 4, &[90, 120, 60, 255]);
        let f = mask_tile(&mut px, &t, &[aoi_rect(Split::Train, full, &[hole])], Split::Train);
        assert!((f - 0.25).abs() <= 1.0 / 10_000.0);
        assert_eq!(px.pixel(10, 10), [0, 0, 0, 0]);
        assert_eq!(px.pixel(60, 60), [90, 120, 60, 255]);
    }

    #[test]
    fn mask_ignores_other_splits() {
        let t = AffineTransform::north_up(0.0, 10.0, 1.0);
        let full = GeoBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mut px = PixelData::filled(10, 10, 3, &[50, 50, 50]);
        let f = mask_tile(&mut px, &t, &[aoi_rect(Split::Valid, full, &[])], Split::Train);
        assert_eq!(f, 1.0);
    }

    #[test]
    fn scanline_mask_matches_point_test() {
        // Rotated-grid fallback path vs scanline path on the same polygon.
        let star: Vec<[f64; 2]> = (0..=7)
            .map(|i| {
                let th = (i % 7) as f64 / 7.0 * std::f64::consts::TAU;
                let r = if i % 2 == 0 { 40.0 } else { 18.0 };
                [50.0 + r * th.cos(), 50.0 + r * th.sin()]
            })
            .collect();
        let aoi = Aoi {
            split: Split::Test,
            polygons: vec![Polygon::new(star.clone(), vec![])],
        };
        let t = AffineTransform::north_up(0.0, 100.0, 1.0);
        let mut px = PixelData::filled(100, 100, 3, &[1, 200, 3]);
        mask_tile(&mut px, &t, std::slice::from_ref(&aoi), Split::Test);
        let poly = Polygon::new(star, vec![]);
        for row in 0..100u32 {
            for col in 0..100u32 {
                let inside = poly.contains_point(col as f64 + 0.5, 100.0 - (row as f64 + 0.5));
                assert_eq!(px.pixel(col, row)[1] == 200, inside, "({col}, {row})");
            }
        }
    }

    fn tile_rec(split: Split, n_anns: usize, masked: f64) -> TileRecord {
        TileRecord {
            tile_id: "t".into(),
            raster_id: "r".into(),
            split,
            pixel_window: Window {
                col_off: 0,
                row_off: 0,
                width: 100,
                height: 100,
            },
            transform: AffineTransform::north_up(0.0, 100.0, 1.0),
            crs: "EPSG:32618".into(),
            annotations: (0..n_anns)
                .map(|i| TileAnnotation {
                    ann_id: i as u64,
                    bbox: PixelBox::new(1.0, 1.0, 5.0, 5.0).unwrap(),
                })
                .collect(),
            masked_frac: masked,
            white_frac: 0.0,
            transparent_frac: 0.0,
        }
    }

    #[test]
    fn filter_rules() {
        let c = TilingConfig::default();
        assert!(!keep_tile(&tile_rec(Split::Train, 0, 0.0), &c));
        assert!(!keep_tile(&tile_rec(Split::Valid, 3, 0.81), &c));
        assert!(keep_tile(&tile_rec(Split::Train, 1, 0.80), &c));
        // test tiles survive without annotations
        assert!(keep_tile(&tile_rec(Split::Test, 0, 0.1), &c));
        let keep_empty = TilingConfig {
            drop_empty: false,
            ..c.clone()
        };
        assert!(keep_tile(&tile_rec(Split::Train, 0, 0.0), &keep_empty));
        let mut white = tile_rec(Split::Train, 2, 0.0);
        white.white_frac = 0.9;
        assert!(!keep_tile(&white, &c));
        let mut clear = tile_rec(Split::Train, 2, 0.0);
        clear.transparent_frac = 0.85;
        assert!(!keep_tile(&clear, &c));
        assert_eq!(filter_tiles(vec![white, tile_rec(Split::Train, 1, 0.2)], &c).len(), 1);
    }

    fn ann(id: u64, x0: f64, y0: f64, x1: f64, y1: f64) -> Annotation {
        Annotation {
            ann_id: id,
            bbox: GeoBox::new(x0, y0, x1, y1).unwrap(),
            raster_id: "r".into(),
        }
    }

    #[test]
    fn forty_percent_rule() {
        let tile = tile_rec(Split::Train, 0, 0.0); // footprint 0..100 x 0..100
        let inside = ann(1, 10.0, 10.0, 20.0, 30.0);
        let forty = ann(2, 96.0, 40.0, 106.0, 50.0);
        let thirty_nine = ann(3, 96.1, 40.0, 106.1, 50.0);
        let kept = assign_annotations(&tile, &[inside, forty, thirty_nine], 0.4);
        assert_eq!(kept.iter().map(|a| a.ann_id).collect::<Vec<_>>(), vec![1, 2]);
        // fully inside -> unclipped; y flips because rows grow downwards
        assert_eq!(kept[0].bbox, PixelBox::new(10.0, 70.0, 20.0, 90.0).unwrap());
        // clipped to the tile edge
        assert_eq!(kept[1].bbox, PixelBox::new(96.0, 50.0, 100.0, 60.0).unwrap());
    }

    #[test]
    fn tile_ids_are_sortable() {
        let w = Window {
            col_off: 250,
            row_off: 0,
            width: 1777,
            height: 1777,
        };
        assert_eq!(tile_id("selva", Split::Test, 0.045, &w), "selva_test_4p5_000250_000000");
        assert_eq!(tile_id("q", Split::Train, 0.1, &w), "q_train_10_000250_000000");
    }

    #[test]
    fn resampled_grid_preserves_extent() {
        let m = meta(1000, 800, 0.03);
        let r = resampled_meta(&m, 0.06);
        assert_eq!((r.width, r.height), (500, 400));
        let (e0, e1) = (m.extent(), r.extent());
        assert!((e0.max_x - e1.max_x).abs() < 1e-9 && (e0.min_y - e1.min_y).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn windows_cover_every_pixel(n in 1u32..3000, t in 1u32..800, o in 0.0..0.95f64) {
            let c = cfg(t, o);
            prop_assume!(c.validate().is_ok());
            let origins = axis_origins(n, t, c.stride_px());
            let mut covered = 0u32;
            for &o in &origins {
                prop_assert!(o <= covered, "gap before {o}");
                covered = covered.max(o + t.min(n));
            }
            prop_assert!(covered >= n);
        }

        #[test]
        fn assignment_monotone_in_threshold(
            boxes in prop::collection::vec((-20.0..110.0f64, -20.0..110.0f64, 1.0..40.0f64, 1.0..40.0f64), 1..30),
            lo in 0.0..1.0f64, hi in 0.0..1.0f64,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let tile = tile_rec(Split::Train, 0, 0.0);
            let anns: Vec<_> = boxes.iter().enumerate()
                .map(|(i, &(x, y, w, h))| ann(i as u64, x, y, x + w, y + h)).collect();
            let strict: Vec<u64> = assign_annotations(&tile, &anns, hi).iter().map(|a| a.ann_id).collect();
            let loose: Vec<u64> = assign_annotations(&tile, &anns, lo).iter().map(|a| a.ann_id).collect();
            prop_assert!(strict.iter().all(|id| loose.contains(id)));
        }
    }
}
