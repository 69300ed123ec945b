//! Planar polygon helpers for AOIs: clipped overlap areas and point/row
//! inclusion tests. Rings are closed vertex lists in world coordinates.

use serde::{Deserialize, Serialize};

use crate::geometry::GeoBox;

pub type Ring = Vec<[f64; 2]>;

/// Exterior ring plus zero or more holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Self {
        Polygon { exterior, holes }
    }

    pub fn from_box(b: &GeoBox) -> Self {
        Polygon::new(b.ring().to_vec(), Vec::new())
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn envelope(&self) -> GeoBox {
        GeoBox::envelope(self.exterior.iter().map(|p| (p[0], p[1])))
    }

    /// Area of the exterior minus its holes.
    pub fn area(&self) -> f64 {
        ring_area(&self.exterior) - self.holes.iter().map(|h| ring_area(h)).sum::<f64>()
    }

    /// Area of `self ∩ b`, holes subtracted.
    pub fn overlap_area(&self, b: &GeoBox) -> f64 {
        if !self.envelope().intersects(b) {
            return 0.0;
        }
        let outer = ring_area(&clip_ring(&self.exterior, b));
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_area(&clip_ring(h, b)))
            .sum();
        (outer - holes).max(0.0)
    }

    /// Even-odd inclusion over all rings, so holes exclude.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.rings().filter(|r| ring_contains(r, x, y)).count() % 2 == 1
    }

    /// Sorted x-coordinates where the horizontal line at `y` crosses any
    /// ring. Points with x in `[s[2k], s[2k+1])` are inside.
    pub fn row_crossings(&self, y: f64, out: &mut Vec<f64>) {
        for ring in self.rings() {
            for w in ring.windows(2) {
                let ([x1, y1], [x2, y2]) = (w[0], w[1]);
                if (y1 > y) != (y2 > y) {
                    out.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
                }
            }
        }
        out.sort_by(f64::total_cmp);
    }
}

/// Absolute shoelace area of a closed ring.
pub fn ring_area(ring: &[[f64; 2]]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for w in ring.windows(2) {
        twice += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    let (first, last) = (ring[0], ring[ring.len() - 1]);
    if first != last {
        twice += last[0] * first[1] - first[0] * last[1];
    }
    0.5 * twice.abs()
}

/// Crossing-number test; matches the half-open convention of `row_crossings`.
pub fn ring_contains(ring: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let ([x1, y1], [x2, y2]) = (w[0], w[1]);
        if (y1 > y) != (y2 > y) {
            let xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if x < xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Sutherland-Hodgman clip of a ring against an axis-aligned box. The
/// result may contain degenerate edges along the box boundary; its shoelace
/// area is still exact.
pub fn clip_ring(ring: &[[f64; 2]], b: &GeoBox) -> Ring {
    let mut pts: Ring = ring.to_vec();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    // (axis, bound, keep_greater)
    let planes = [
        (0usize, b.min_x, true),
        (0, b.max_x, false),
        (1, b.min_y, true),
        (1, b.max_y, false),
    ];
    for (axis, bound, keep_ge) in planes {
        if pts.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_ge { p[axis] >= bound } else { p[axis] <= bound };
        let mut out = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let cur = pts[i];
            let prev = pts[(i + pts.len() - 1) % pts.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut p = [
                    prev[0] + t * (cur[0] - prev[0]),
                    prev[1] + t * (cur[1] - prev[1]),
                ];
                p[axis] = bound;
                out.push(p);
            }
            if ci {
                out.push(cur);
            }
        }
        pts = out;
    }
    if let Some(&first) = pts.first() {
        pts.push(first);
    }
    pts
}

/// Closed-ring check.
pub fn is_closed(ring: &[[f64; 2]]) -> bool {
    ring.len() >= 4 && ring.first() == ring.last()
}

/// Point-to-segment distance, used to accept hole vertices lying on the
/// exterior boundary.
pub(crate) fn distance_to_ring(ring: &[[f64; 2]], x: f64, y: f64) -> f64 {
    ring.windows(2)
        .map(|w| {
            let ([x1, y1], [x2, y2]) = (w[0], w[1]);
            let (dx, dy) = (x2 - x1, y2 - y1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - x1) * dx + (y - y1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (x - (x1 + t * dx)).hypot(y - (y1 + t * dy))
        })
        .fold(f64::INFINITY, f64::min)
}
