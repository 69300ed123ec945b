//! Crop/resize augmentation planning: which ground extents and effective
//! resolutions a training pipeline can produce from tiles of a given size.
//!
//! A crop of `x` pixels covers `x * gsd` meters; resizing it to `y` pixels
//! gives an effective GSD of `gsd * x / y`. When the crop is skipped the full
//! tile is used instead (the fallback).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugPlan {
    /// Native ground sample distance, m/px.
    pub native_gsd: f64,
    pub tile_size_px: u32,
    /// `[x_min, x_max]` crop side in pixels.
    pub crop_range_px: [u32; 2],
    /// `[y_min, y_max]` resize target side in pixels.
    pub resize_range_px: [u32; 2],
    /// Whether uncropped full tiles also reach the resize step.
    pub fallback: bool,
}

impl AugPlan {
    pub fn validate(&self) -> Result<()> {
        let [x0, x1] = self.crop_range_px;
        let [y0, y1] = self.resize_range_px;
        if !(self.native_gsd.is_finite() && self.native_gsd > 0.0) {
            return Err(Error::Domain(format!("gsd must be positive, got {}", self.native_gsd)));
        }
        if !(0 < x0 && x0 <= x1 && x1 <= self.tile_size_px) {
            return Err(Error::Domain(format!(
                "crop range [{x0}, {x1}] must satisfy 0 < min <= max <= tile size {}",
                self.tile_size_px
            )));
        }
        if !(0 < y0 && y0 <= y1) {
            return Err(Error::Domain(format!(
                "resize range [{y0}, {y1}] must satisfy 0 < min <= max"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtentRange {
    pub min_m: f64,
    pub max_m: f64,
    /// Full-tile extent reached when no crop is applied.
    pub fallback_m: f64,
}

pub fn effective_extent_range(plan: &AugPlan) -> ExtentRange {
    let g = plan.native_gsd;
    ExtentRange {
        min_m: plan.crop_range_px[0] as f64 * g,
        max_m: plan.crop_range_px[1] as f64 * g,
        fallback_m: plan.tile_size_px as f64 * g,
    }
}

/// `[min, max]` effective GSD in m/px.
pub fn effective_gsd_range(plan: &AugPlan) -> [f64; 2] {
    let g = plan.native_gsd;
    let [x0, x1] = plan.crop_range_px;
    let [y0, y1] = plan.resize_range_px;
    let largest = if plan.fallback { x1.max(plan.tile_size_px) } else { x1 };
    [g * x0 as f64 / y1 as f64, g * largest as f64 / y0 as f64]
}

/// Rounds to one decimal (half away from zero) and drops a trailing `.0`.
pub fn fmt_1dp(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    let s = format!("{r:.1}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

/// Extent in meters, e.g. `[30, 120]∪{160}`. The fallback point is shown only
/// when it lies outside the crop range.
pub fn format_extent(e: &ExtentRange) -> String {
    let mut s = format!("[{}, {}]", fmt_1dp(e.min_m), fmt_1dp(e.max_m));
    if e.fallback_m > e.max_m || e.fallback_m < e.min_m {
        s.push_str(&format!("∪{{{}}}", fmt_1dp(e.fallback_m)));
    }
    s
}

/// Resolution in cm/px, e.g. `[1.7, 15.6]`.
pub fn format_gsd_cm(r: [f64; 2]) -> String {
    format!("[{}, {}]", fmt_1dp(r[0] * 100.0), fmt_1dp(r[1] * 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn plan(gsd: f64, tile: u32, fallback: bool) -> AugPlan {
        AugPlan {
            native_gsd: gsd,
            tile_size_px: tile,
            crop_range_px: [666, 2666],
            resize_range_px: [1024, 1777],
            fallback,
        }
    }

    #[test]
    fn table_rows() {
        let p = plan(0.045, 3555, true);
        let e = effective_extent_range(&p);
        assert!((e.min_m - 29.97).abs() < 1e-9 && (e.max_m - 119.97).abs() < 1e-9);
        assert!((e.fallback_m - 159.975).abs() < 1e-9);
        assert_eq!(format_extent(&e), "[30, 120]∪{160}");
        let r = effective_gsd_range(&p);
        assert!((r[0] - 0.01686).abs() < 1e-5 && (r[1] - 0.15622).abs() < 1e-5);
        assert_eq!(format_gsd_cm(r), "[1.7, 15.6]");

        let q = plan(0.03, 3333, true);
        assert_eq!(format_extent(&effective_extent_range(&q)), "[20, 80]∪{100}");
        assert_eq!(format_gsd_cm(effective_gsd_range(&q)), "[1.1, 9.8]");
    }

    #[test]
    fn without_fallback() {
        let r = effective_gsd_range(&plan(0.045, 3555, false));
        assert!((r[1] - 0.045 * 2666.0 / 1024.0).abs() < 1e-15);
        assert_eq!(fmt_1dp(r[1] * 100.0), "11.7");
        assert_eq!(fmt_1dp(r[0] * 100.0), "1.7");
    }

    #[test]
    fn identity_and_point_ranges() {
        let p = AugPlan {
            native_gsd: 0.05,
            tile_size_px: 1000,
            crop_range_px: [1000, 1000],
            resize_range_px: [1000, 1000],
            fallback: true,
        };
        assert_eq!(effective_gsd_range(&p), [0.05, 0.05]);
        let e = effective_extent_range(&p);
        assert_eq!((e.min_m, e.max_m), (e.fallback_m, e.fallback_m));
        assert_eq!(format_extent(&e), "[50, 50]");
    }

    #[test]
    fn validation() {
        assert!(plan(0.045, 3555, true).validate().is_ok());
        assert!(plan(0.045, 2000, true).validate().is_err());
        assert!(plan(0.0, 3555, true).validate().is_err());
        let mut p = plan(0.045, 3555, true);
        p.resize_range_px = [2000, 1000];
        assert!(p.validate().is_err());
    }

    #[test]
    fn sampled_pairs_stay_inside_range() {
        let p = plan(0.045, 3555, true);
        let [lo, hi] = effective_gsd_range(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let x = if rng.random_bool(0.5) { p.tile_size_px } else { rng.random_range(666..=2666) };
            let y = rng.random_range(1024..=1777);
            let g = p.native_gsd * x as f64 / y as f64;
            assert!(lo <= g && g <= hi);
        }
    }

    proptest! {
        #[test]
        fn linear_in_gsd(k in 1u32..8, x0 in 1u32..500, dx in 0u32..500, y0 in 1u32..500, dy in 0u32..500, fb: bool) {
            let base = AugPlan {
                native_gsd: 0.01,
                tile_size_px: x0 + dx + 10,
                crop_range_px: [x0, x0 + dx],
                resize_range_px: [y0, y0 + dy],
                fallback: fb,
            };
            // power-of-two factors keep the scaling exact
            let f = (1u32 << k) as f64;
            let scaled = AugPlan { native_gsd: base.native_gsd * f, ..base.clone() };
            let (a, b) = (effective_gsd_range(&base), effective_gsd_range(&scaled));
            prop_assert_eq!([a[0] * f, a[1] * f], b);
        }

        #[test]
        fn widening_ranges_is_monotone(x0 in 2u32..500, dx in 0u32..500, y0 in 2u32..500, dy in 0u32..500, e in 1u32..50, fb: bool) {
            let base = AugPlan {
                native_gsd: 0.03,
                tile_size_px: 2000,
                crop_range_px: [x0, x0 + dx],
                resize_range_px: [y0, y0 + dy],
                fallback: fb,
            };
            let wide = AugPlan {
                crop_range_px: [x0.saturating_sub(e).max(1), x0 + dx + e],
                resize_range_px: [y0.saturating_sub(e).max(1), y0 + dy + e],
                ..base.clone()
            };
            let (a, b) = (effective_gsd_range(&base), effective_gsd_range(&wide));
            prop_assert!(b[0] <= a[0] && b[1] >= a[1]);
            let (ea, eb) = (effective_extent_range(&base), effective_extent_range(&wide));
            prop_assert!(eb.min_m <= ea.min_m && eb.max_m >= ea.max_m);
        }
    }
}
