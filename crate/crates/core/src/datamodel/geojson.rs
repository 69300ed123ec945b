//! GeoJSON FeatureCollections for annotations, AOIs and detections.
//!
//! Boxes are written as closed 5-point Polygon rings. The collection-level
//! `crs` member (`{"type": "name", "properties": {"name": ...}}`) carries the
//! CRS; a missing member means the RFC 7946 default, `OGC:CRS84`.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::polygon::{Polygon, Ring};
use super::{Aoi, Annotation, Detection, Split};
use crate::error::{Error, Result};
use crate::geometry::GeoBox;

pub const DEFAULT_CRS: &str = "OGC:CRS84";

/// Items parsed from a FeatureCollection plus its CRS.
#[derive(Debug, Clone)]
pub struct Collection<T> {
    pub crs: String,
    pub items: Vec<T>,
}

/// Normalises OGC URN spellings (`urn:ogc:def:crs:EPSG::32618`) to
/// `EPSG:32618`.
pub fn normalize_crs(name: &str) -> String {
    let trimmed = name.trim();
    if let Some(rest) = trimmed.strip_prefix("urn:ogc:def:crs:") {
        let parts: Vec<&str> = rest.split(':').filter(|p| !p.is_empty()).collect();
        if let (Some(auth), Some(code)) = (parts.first(), parts.last()) {
            if parts.len() >= 2 {
                return format!("{}:{}", auth.to_uppercase(), code);
            }
        }
    }
    trimmed.to_string()
}

fn crs_member(crs: &str) -> Value {
    json!({"type": "name", "properties": {"name": crs}})
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub(crate) fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct RawFeature {
    polygons: Vec<Polygon>,
    properties: Map<String, Value>,
}

fn parse_ring(v: &Value) -> Option<Ring> {
    v.as_array()?
        .iter()
        .map(|pt| {
            let a = pt.as_array()?;
            Some([a.first()?.as_f64()?, a.get(1)?.as_f64()?])
        })
        .collect()
}

fn parse_polygon(coords: &Value) -> Option<Polygon> {
    let rings: Vec<Ring> = coords.as_array()?.iter().map(parse_ring).collect::<Option<_>>()?;
    let mut it = rings.into_iter();
    let exterior = it.next()?;
    Some(Polygon::new(exterior, it.collect()))
}

fn parse_collection(path: &Path, root: &Value) -> Result<(String, Vec<RawFeature>)> {
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::format(path, "not a GeoJSON FeatureCollection"));
    }
    let crs = root
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(normalize_crs)
        .unwrap_or_else(|| DEFAULT_CRS.to_string());
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format(path, "missing features array"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::format(path, format!("feature {i} has no geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => parse_polygon(coords).map(|p| vec![p]),
            Some("MultiPolygon") => coords
                .as_array()
                .and_then(|ps| ps.iter().map(parse_polygon).collect::<Option<Vec<_>>>()),
            other => {
                return Err(Error::format(
                    path,
                    format!("feature {i}: unsupported geometry type {other:?}"),
                ))
            }
        }
        .ok_or_else(|| Error::format(path, format!("feature {i}: malformed coordinates")))?;
        let properties = f
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        out.push(RawFeature {
            polygons,
            properties,
        });
    }
    Ok((crs, out))
}

fn polygons_envelope(polys: &[Polygon]) -> GeoBox {
    GeoBox::envelope(
        polys
            .iter()
            .flat_map(|p| p.exterior.iter().map(|q| (q[0], q[1]))),
    )
}

fn box_feature(b: &GeoBox, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [b.ring()]},
        "properties": properties,
    })
}

fn collection(crs: &str, features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "crs": crs_member(crs), "features": features})
}

/// Reads ground-truth boxes. Polygon annotations are reduced to their
/// bounding box. Missing `ann_id` falls back to the feature index.
pub fn read_annotations(path: &Path, raster_id: &str) -> Result<Collection<Annotation>> {
    let root = read_json(path)?;
    let (crs, feats) = parse_collection(path, &root)?;
    let mut items = Vec::with_capacity(feats.len());
    for (i, f) in feats.into_iter().enumerate() {
        let ann_id = match f.properties.get("ann_id") {
            None | Some(Value::Null) => i as u64,
            Some(v) => v.as_u64().ok_or_else(|| {
                Error::format(path, format!("feature {i}: ann_id must be a non-negative integer"))
            })?,
        };
        items.push(Annotation {
            ann_id,
            bbox: polygons_envelope(&f.polygons),
            raster_id: raster_id.to_string(),
        });
    }
    super::validate_annotations(&items)?;
    Ok(Collection { crs, items })
}

pub fn write_annotations(path: &Path, crs: &str, anns: &[Annotation]) -> Result<()> {
    let features = anns
        .iter()
        .map(|a| box_feature(&a.bbox, json!({"ann_id": a.ann_id})))
        .collect();
    write_json(path, &collection(crs, features))
}

pub fn read_aois(path: &Path) -> Result<Collection<Aoi>> {
    let root = read_json(path)?;
    let (crs, feats) = parse_collection(path, &root)?;
    let mut items: Vec<Aoi> = Vec::new();
    for (i, f) in feats.into_iter().enumerate() {
        let split: Split = f
            .properties
            .get("split")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::format(path, format!("feature {i}: missing split property")))?
            .parse()?;
        let aoi = Aoi {
            split,
            polygons: f.polygons,
        };
        aoi.validate()?;
        items.push(aoi);
    }
    Ok(Collection { crs, items })
}

pub fn write_aois(path: &Path, crs: &str, aois: &[Aoi]) -> Result<()> {
    let features = aois
        .iter()
        .map(|a| {
            let coords: Vec<Vec<Ring>> = a
                .polygons
                .iter()
                .map(|p| p.rings().cloned().collect())
                .collect();
            json!({
                "type": "Feature",
                "geometry": {"type": "MultiPolygon", "coordinates": coords},
                "properties": {"split": a.split.as_str()},
            })
        })
        .collect();
    write_json(path, &collection(crs, features))
}

pub fn read_detections(path: &Path) -> Result<Collection<Detection>> {
    let root = read_json(path)?;
    let (crs, feats) = parse_collection(path, &root)?;
    let mut items = Vec::with_capacity(feats.len());
    for (i, f) in feats.into_iter().enumerate() {
        let score = f
            .properties
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::format(path, format!("feature {i}: missing numeric score")))?;
        let tile_id = f
            .properties
            .get("tile_id")
            .and_then(Value::as_str)
            .map(str::to_string);
        let det = Detection {
            bbox: polygons_envelope(&f.polygons),
            score,
            tile_id,
        };
        det.validate()
            .map_err(|e| Error::Validation(format!("{}: feature {i}: {e}", path.display())))?;
        items.push(det);
    }
    Ok(Collection { crs, items })
}

pub fn write_detections(path: &Path, crs: &str, dets: &[Detection]) -> Result<()> {
    let features = dets
        .iter()
        .map(|d| {
            let mut props = json!({"score": d.score});
            if let Some(t) = &d.tile_id {
                props["tile_id"] = json!(t);
            }
            box_feature(&d.bbox, props)
        })
        .collect();
    write_json(path, &collection(crs, features))
}
