//! Axis-aligned boxes, IoU and affine pixel/world transforms.
//!
//! World coordinates are in the CRS units of the raster (meters for projected
//! CRSs). Pixel coordinates are edge coordinates: pixel `(col, row)` covers
//! `[col, col + 1) x [row, row + 1)`, with row 0 at the top of the raster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl GeoBox {
    /// Builds a box, rejecting non-finite or inverted coordinates.
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let b = GeoBox {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        if ![min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite box coordinates {b:?}")));
        }
        if min_x > max_x || min_y > max_y {
            return Err(Error::Domain(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn has_positive_area(&self) -> bool {
        self.max_x > self.min_x && self.max_y > self.min_y
    }

    /// Overlap region, `None` when the boxes do not share positive area.
    pub fn intersection(&self, other: &GeoBox) -> Option<GeoBox> {
        let min_x = self.min_x.max(other.min_x);
        let min_y = self.min_y.max(other.min_y);
        let max_x = self.max_x.min(other.max_x);
        let max_y = self.max_y.min(other.max_y);
        (max_x > min_x && max_y > min_y).then_some(GeoBox {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn intersection_area(&self, other: &GeoBox) -> f64 {
        let w = self.max_x.min(other.max_x) - self.min_x.max(other.min_x);
        let h = self.max_y.min(other.max_y) - self.min_y.max(other.min_y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn intersects(&self, other: &GeoBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn contains(&self, other: &GeoBox) -> bool {
        other.min_x >= self.min_x
            && other.min_y >= self.min_y
            && other.max_x <= self.max_x
            && other.max_y <= self.max_y
    }

    pub fn translate(&self, dx: f64, dy: f64) -> GeoBox {
        GeoBox {
            min_x: self.min_x + dx,
            min_y: self.min_y + dy,
            max_x: self.max_x + dx,
            max_y: self.max_y + dy,
        }
    }

    /// Closed 5-point ring, counter-clockwise starting at the lower-left corner.
    pub fn ring(&self) -> [[f64; 2]; 5] {
        [
            [self.min_x, self.min_y],
            [self.max_x, self.min_y],
            [self.max_x, self.max_y],
            [self.min_x, self.max_y],
            [self.min_x, self.min_y],
        ]
    }

    /// Envelope of a set of points. Panics on an empty iterator.
    pub(crate) fn envelope(points: impl IntoIterator<Item = (f64, f64)>) -> GeoBox {
        let mut it = points.into_iter();
        let (x0, y0) = it.next().expect("envelope of empty point set");
        let mut b = GeoBox {
            min_x: x0,
            min_y: y0,
            max_x: x0,
            max_y: y0,
        };
        for (x, y) in it {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        b
    }
}

/// Axis-aligned box in pixel coordinates. Values are fractional so that
/// sub-pixel detector output survives the trip to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub col_min: f64,
    pub row_min: f64,
    pub col_max: f64,
    pub row_max: f64,
}

impl PixelBox {
    pub fn new(col_min: f64, row_min: f64, col_max: f64, row_max: f64) -> Result<Self> {
        let p = PixelBox {
            col_min,
            row_min,
            col_max,
            row_max,
        };
        if ![col_min, row_min, col_max, row_max]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain(format!("non-finite pixel box {p:?}")));
        }
        if col_min < 0.0 || row_min < 0.0 {
            return Err(Error::Domain(format!("negative pixel index in {p:?}")));
        }
        if col_min > col_max || row_min > row_max {
            return Err(Error::Domain(format!("inverted pixel box {p:?}")));
        }
        Ok(p)
    }

    /// From a COCO-style `[x, y, w, h]` rectangle.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        PixelBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [
            self.col_min,
            self.row_min,
            self.width(),
            self.height(),
        ]
    }

    pub fn width(&self) -> f64 {
        self.col_max - self.col_min
    }

    pub fn height(&self) -> f64 {
        self.row_max - self.row_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// `world = (a*col + b*row + c, d*col + e*row + f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineTransform {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        AffineTransform { a, b, c, d, e, f }
    }

    /// North-up transform with the top-left corner at `(origin_x, origin_y)`.
    pub fn north_up(origin_x: f64, origin_y: f64, gsd: f64) -> Self {
        AffineTransform::new(gsd, 0.0, origin_x, 0.0, -gsd, origin_y)
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        AffineTransform::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn is_north_up(&self) -> bool {
        self.b == 0.0 && self.d == 0.0 && self.a > 0.0 && self.e < 0.0
    }

    fn check_invertible(&self) -> Result<()> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Domain(format!(
                "affine transform {:?} is not invertible",
                self.to_array()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        self.check_invertible()?;
        if self.b == 0.0 && self.d == 0.0 {
            // Keep the diagonal case free of cross-term rounding.
            return Ok(AffineTransform::new(
                1.0 / self.a,
                0.0,
                -self.c / self.a,
                0.0,
                1.0 / self.e,
                -self.f / self.e,
            ));
        }
        let det = self.determinant();
        let a = self.e / det;
        let b = -self.b / det;
        let d = -self.d / det;
        let e = self.a / det;
        Ok(AffineTransform::new(
            a,
            b,
            -(a * self.c + b * self.f),
            d,
            e,
            -(d * self.c + e * self.f),
        ))
    }

    /// Pixel coordinates of a world point.
    pub fn to_pixel(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.check_invertible()?;
        if self.b == 0.0 && self.d == 0.0 {
            return Ok(((x - self.c) / self.a, (y - self.f) / self.e));
        }
        Ok(self.inverse()?.apply(x, y))
    }

    /// Transform of a sub-window whose top-left pixel is `(col0, row0)`.
    pub fn window(&self, col0: f64, row0: f64) -> AffineTransform {
        let (c, f) = self.apply(col0, row0);
        AffineTransform { c, f, ..*self }
    }

    /// Transform after resampling the pixel grid by `(sx, sy)` source pixels
    /// per destination pixel.
    pub fn rescaled(&self, sx: f64, sy: f64) -> AffineTransform {
        AffineTransform::new(
            self.a * sx,
            self.b * sy,
            self.c,
            self.d * sx,
            self.e * sy,
            self.f,
        )
    }
}

/// Intersection over union. Both boxes must have positive area.
pub fn iou(b1: &GeoBox, b2: &GeoBox) -> Result<f64> {
    if !b1.has_positive_area() || !b2.has_positive_area() {
        return Err(Error::Domain(format!(
            "IoU requires positive-area boxes, got {b1:?} and {b2:?}"
        )));
    }
    Ok(iou_unchecked(b1, b2))
}

/// IoU without the positive-area precondition check. Callers validate once
/// up front and use this in inner loops.
#[inline]
pub fn iou_unchecked(b1: &GeoBox, b2: &GeoBox) -> f64 {
    let inter = b1.intersection_area(b2);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = b1.area() + b2.area() - inter;
    // min() absorbs the last-ulp overshoot for identical boxes.
    (inter / union).min(1.0)
}

/// World envelope of a pixel box.
pub fn pixel_to_world(p: &PixelBox, t: &AffineTransform) -> Result<GeoBox> {
    t.check_invertible()?;
    Ok(GeoBox::envelope([
        t.apply(p.col_min, p.row_min),
        t.apply(p.col_max, p.row_min),
        t.apply(p.col_max, p.row_max),
        t.apply(p.col_min, p.row_max),
    ]))
}

/// Unrounded pixel envelope `[col_min, row_min, col_max, row_max]` of a world
/// box. May be negative or exceed the raster.
pub fn world_to_pixel_exact(g: &GeoBox, t: &AffineTransform) -> Result<[f64; 4]> {
    let corners = [
        t.to_pixel(g.min_x, g.min_y)?,
        t.to_pixel(g.max_x, g.min_y)?,
        t.to_pixel(g.max_x, g.max_y)?,
        t.to_pixel(g.min_x, g.max_y)?,
    ];
    let env = GeoBox::envelope(corners);
    Ok([env.min_x, env.min_y, env.max_x, env.max_y])
}

/// Pixel box of a world box, rounded half away from zero. Does not clamp: a
/// box reaching outside the raster's top/left edge is a domain error.
pub fn world_to_pixel(g: &GeoBox, t: &AffineTransform) -> Result<PixelBox> {
    let [c0, r0, c1, r1] = world_to_pixel_exact(g, t)?;
    PixelBox::new(c0.round(), r0.round(), c1.round(), r1.round())
}
