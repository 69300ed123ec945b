//! Scene data model: rasters, AOIs, annotations and detections, plus their
//! file formats.

pub mod geojson;
pub mod polygon;
pub mod raster;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, GeoBox};
pub use polygon::Polygon;
pub use raster::PixelData;

/// Dataset split. Declaration order is the tie-break priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!(
                "unknown split {other:?} (expected train, valid or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub raster_id: String,
    pub width: u32,
    pub height: u32,
    pub transform: AffineTransform,
    pub crs: String,
}

impl RasterMeta {
    pub fn new(
        raster_id: impl Into<String>,
        width: u32,
        height: u32,
        transform: AffineTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        let meta = RasterMeta {
            raster_id: raster_id.into(),
            width,
            height,
            transform,
            crs: crs.into(),
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "raster {} has empty size {}x{}",
                self.raster_id, self.width, self.height
            )));
        }
        if self.transform.determinant() == 0.0 {
            return Err(Error::Domain(format!(
                "raster {} has a singular transform",
                self.raster_id
            )));
        }
        let (ga, ge) = (self.transform.a.abs(), self.transform.e.abs());
        if ga <= 0.0 || (ga - ge).abs() > 1e-6 * ga.max(ge) {
            return Err(Error::Validation(format!(
                "raster {} has non-square pixels (|a| = {ga}, |e| = {ge})",
                self.raster_id
            )));
        }
        Ok(())
    }

    /// Ground sampling distance in CRS units per pixel.
    pub fn gsd(&self) -> f64 {
        self.transform.a.abs()
    }

    pub fn extent(&self) -> GeoBox {
        let t = &self.transform;
        let (w, h) = (self.width as f64, self.height as f64);
        GeoBox::envelope([t.apply(0.0, 0.0), t.apply(w, 0.0), t.apply(w, h), t.apply(0.0, h)])
    }

    pub fn hectares(&self) -> f64 {
        self.width as f64 * self.height as f64 * self.gsd().powi(2) / 1e4
    }
}

/// Area of interest for one split; may hold several polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aoi {
    pub split: Split,
    pub polygons: Vec<Polygon>,
}

impl Aoi {
    pub fn overlap_area(&self, b: &GeoBox) -> f64 {
        self.polygons.iter().map(|p| p.overlap_area(b)).sum()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.polygons.iter().any(|p| p.contains_point(x, y))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, poly) in self.polygons.iter().enumerate() {
            for ring in poly.rings() {
                if !polygon::is_closed(ring) {
                    return Err(Error::Validation(format!(
                        "{} AOI polygon {i}: ring is not closed",
                        self.split
                    )));
                }
            }
            let scale = poly.envelope().diagonal().max(1.0);
            for hole in &poly.holes {
                let outside = hole.iter().any(|&[x, y]| {
                    !polygon::ring_contains(&poly.exterior, x, y)
                        && polygon::distance_to_ring(&poly.exterior, x, y) > 1e-9 * scale
                });
                if outside {
                    return Err(Error::Validation(format!(
                        "{} AOI polygon {i}: hole extends outside its exterior ring",
                        self.split
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub ann_id: u64,
    pub bbox: GeoBox,
    pub raster_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: GeoBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_id: Option<String>,
}

impl Detection {
    pub fn new(bbox: GeoBox, score: f64) -> Self {
        Detection {
            bbox,
            score,
            tile_id: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "detection score {} outside [0, 1]",
                self.score
            )));
        }
        if !self.bbox.has_positive_area() {
            return Err(Error::Validation(format!(
                "detection box {:?} has zero area",
                self.bbox
            )));
        }
        Ok(())
    }
}

/// Validates detections as a batch.
pub fn validate_detections(dets: &[Detection]) -> Result<()> {
    dets.iter().try_for_each(Detection::validate)
}

/// Checks positive area and id uniqueness, naming every offender.
pub fn validate_annotations(anns: &[Annotation]) -> Result<()> {
    let degenerate: Vec<u64> = anns
        .iter()
        .filter(|a| !a.bbox.has_positive_area())
        .map(|a| a.ann_id)
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::Validation(format!(
            "annotations with zero-area boxes: ann_id {degenerate:?}"
        )));
    }
    let mut seen = HashSet::new();
    let dups: Vec<u64> = anns
        .iter()
        .filter(|a| !seen.insert((a.raster_id.as_str(), a.ann_id)))
        .map(|a| a.ann_id)
        .collect();
    if !dups.is_empty() {
        return Err(Error::Validation(format!(
            "duplicate annotation ids: ann_id {dups:?}"
        )));
    }
    Ok(())
}

/// A validated raster with its AOIs and ground truth.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub raster: RasterMeta,
    pub aois: Vec<Aoi>,
    pub annotations: Vec<Annotation>,
    pub pixels: Arc<PixelData>,
}

impl SceneBundle {
    pub fn new(
        raster: RasterMeta,
        aois: Vec<Aoi>,
        annotations: Vec<Annotation>,
        pixels: PixelData,
    ) -> Result<Self> {
        raster.validate()?;
        if pixels.width != raster.width || pixels.height != raster.height {
            return Err(Error::Validation(format!(
                "pixel buffer {}x{} does not match raster {}x{}",
                pixels.width, pixels.height, raster.width, raster.height
            )));
        }
        validate_annotations(&annotations)?;
        let extent = raster.extent();
        let outside: Vec<u64> = annotations
            .iter()
            .filter(|a| !a.bbox.intersects(&extent))
            .map(|a| a.ann_id)
            .collect();
        if !outside.is_empty() {
            return Err(Error::Validation(format!(
                "annotations outside raster {} extent: ann_id {outside:?}",
                raster.raster_id
            )));
        }
        for aoi in &aois {
            aoi.validate()?;
        }
        Ok(SceneBundle {
            raster,
            aois,
            annotations,
            pixels: Arc::new(pixels),
        })
    }
}

fn check_crs(raster: &RasterMeta, raster_path: &Path, crs: &str, path: &Path) -> Result<()> {
    if raster.crs != crs {
        return Err(Error::CrsMismatch {
            left: raster.crs.clone(),
            left_source: raster_path.display().to_string(),
            right: crs.to_string(),
            right_source: path.display().to_string(),
        });
    }
    Ok(())
}

/// Loads a raster, its annotations and AOIs; all CRS strings must match.
pub fn load_scene(
    raster_path: &Path,
    annotations_path: &Path,
    aoi_paths: &[&Path],
) -> Result<SceneBundle> {
    let (meta, pixels) = raster::read_raster(raster_path)?;
    let anns = geojson::read_annotations(annotations_path, &meta.raster_id)?;
    check_crs(&meta, raster_path, &anns.crs, annotations_path)?;
    let mut aois = Vec::new();
    for path in aoi_paths {
        let fc = geojson::read_aois(path)?;
        check_crs(&meta, raster_path, &fc.crs, path)?;
        aois.extend(fc.items);
    }
    SceneBundle::new(meta, aois, anns.items, pixels)
}

/// Split whose AOIs overlap the annotation box the most; ties go to the
/// earlier split in train, valid, test order.
pub fn assign_split(a: &Annotation, aois: &[Aoi]) -> Option<Split> {
    let mut best: Option<(Split, f64)> = None;
    for split in Split::ALL {
        let area: f64 = aois
            .iter()
            .filter(|aoi| aoi.split == split)
            .map(|aoi| aoi.overlap_area(&a.bbox))
            .sum();
        if area > 0.0 && best.is_none_or(|(_, b)| area > b) {
            best = Some((split, area));
        }
    }
    best.map(|(s, _)| s)
}
