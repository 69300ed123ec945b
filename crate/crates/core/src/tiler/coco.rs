//! COCO-style tile index.
//!
//! Single category (`tree`, id 1); `bbox` is `[x, y, w, h]` in tile pixels.
//! Each image entry carries the tile transform, CRS, window and pixel
//! statistics so detections can be mapped back to world coordinates. Keys
//! are emitted sorted and floats in shortest round-trip form, so identical
//! inputs give byte-identical files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{Tile, TileAnnotation, TileRecord, Window};
use crate::datamodel::geojson::write_json;
use crate::datamodel::raster::write_geotiff;
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, PixelBox};

pub const CATEGORY_ID: u64 = 1;

/// Parsed tile index, records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoIndex {
    pub records: Vec<TileRecord>,
}

impl CocoIndex {
    pub fn get(&self, tile_id: &str) -> Option<&TileRecord> {
        self.records.iter().find(|r| r.tile_id == tile_id)
    }
}

pub fn coco_value(records: &[TileRecord]) -> Value {
    let mut images = Vec::with_capacity(records.len());
    let mut annotations = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let image_id = i as u64 + 1;
        let w = &r.pixel_window;
        images.push(json!({
            "id": image_id,
            "file_name": format!("tiles/{}.tif", r.tile_id),
            "width": r.width(),
            "height": r.height(),
            "tile_id": r.tile_id,
            "raster_id": r.raster_id,
            "split": r.split,
            "crs": r.crs,
            "transform": r.transform.to_array(),
            "pixel_window": [w.col_off, w.row_off, w.width, w.height],
            "gsd": r.gsd(),
            "masked_frac": r.masked_frac,
            "white_frac": r.white_frac,
            "transparent_frac": r.transparent_frac,
        }));
        for a in &r.annotations {
            annotations.push(json!({
                "id": annotations.len() as u64 + 1,
                "image_id": image_id,
                "category_id": CATEGORY_ID,
                "bbox": a.bbox.to_xywh(),
                "area": a.bbox.area(),
                "iscrowd": 0,
                "ann_id": a.ann_id,
            }));
        }
    }
    json!({
        "images": images,
        "annotations": annotations,
        "categories": [{"id": CATEGORY_ID, "name": "tree", "supercategory": "plant"}],
    })
}

pub fn write_coco_index(records: &[TileRecord], path: &Path) -> Result<()> {
    write_json(path, &coco_value(records))
}

/// Writes `tiles/<tile_id>.tif` for every tile plus `coco.json`; returns the
/// JSON path.
pub fn emit_coco(tiles: &[Tile], out_dir: &Path) -> Result<PathBuf> {
    let tiles_dir = out_dir.join("tiles");
    std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    tiles.par_iter().try_for_each(|t| {
        let p = tiles_dir.join(format!("{}.tif", t.record.tile_id));
        write_geotiff(&p, &t.record.transform, &t.record.crs, &t.pixels)
    })?;
    let mut records: Vec<TileRecord> = tiles.iter().map(|t| t.record.clone()).collect();
    records.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    let path = out_dir.join("coco.json");
    write_coco_index(&records, &path)?;
    Ok(path)
}

fn field<'a>(path: &Path, v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::format(path, format!("{ctx}: missing field {key:?}")))
}

fn as_f64s<const N: usize>(path: &Path, v: &Value, ctx: &str) -> Result<[f64; N]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| Error::format(path, format!("{ctx}: expected {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .ok_or_else(|| Error::format(path, format!("{ctx}: non-numeric entry")))?;
    }
    Ok(out)
}

pub fn load_coco(path: &Path) -> Result<CocoIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    let images = field(path, &root, "images", "root")?
        .as_array()
        .ok_or_else(|| Error::format(path, "images is not an array"))?;
    let mut records = Vec::with_capacity(images.len());
    let mut by_image = std::collections::HashMap::new();
    for (i, img) in images.iter().enumerate() {
        let ctx = format!("images[{i}]");
        let id = field(path, img, "id", &ctx)?
            .as_u64()
            .ok_or_else(|| Error::format(path, format!("{ctx}: id must be an integer")))?;
        let str_field = |k: &str| -> Result<String> {
            field(path, img, k, &ctx)?
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::format(path, format!("{ctx}: {k} must be a string")))
        };
        let f64_field = |k: &str| -> Result<f64> {
            match img.get(k) {
                None => Ok(0.0),
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::format(path, format!("{ctx}: {k} must be a number"))),
            }
        };
        let win = as_f64s::<4>(path, field(path, img, "pixel_window", &ctx)?, &ctx)?;
        let record = TileRecord {
            tile_id: str_field("tile_id")?,
            raster_id: str_field("raster_id")?,
            split: str_field("split")?.parse()?,
            pixel_window: Window {
                col_off: win[0] as u32,
                row_off: win[1] as u32,
                width: win[2] as u32,
                height: win[3] as u32,
            },
            transform: AffineTransform::from_array(as_f64s::<6>(
                path,
                field(path, img, "transform", &ctx)?,
                &ctx,
            )?),
            crs: str_field("crs")?,
            annotations: Vec::new(),
            masked_frac: f64_field("masked_frac")?,
            white_frac: f64_field("white_frac")?,
            transparent_frac: f64_field("transparent_frac")?,
        };
        if by_image.insert(id, records.len()).is_some() {
            return Err(Error::format(path, format!("{ctx}: duplicate image id {id}")));
        }
        records.push(record);
    }
    let anns = root
        .get("annotations")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    for (i, a) in anns.iter().enumerate() {
        let ctx = format!("annotations[{i}]");
        let image_id = field(path, a, "image_id", &ctx)?
            .as_u64()
            .ok_or_else(|| Error::format(path, format!("{ctx}: image_id must be an integer")))?;
        let idx = *by_image
            .get(&image_id)
            .ok_or_else(|| Error::format(path, format!("{ctx}: unknown image_id {image_id}")))?;
        let [x, y, w, h] = as_f64s::<4>(path, field(path, a, "bbox", &ctx)?, &ctx)?;
        let ann_id = a
            .get("ann_id")
            .or_else(|| a.get("id"))
            .and_then(Value::as_u64)
            .unwrap_or(i as u64);
        let bbox = PixelBox::from_xywh(x, y, w, h)
            .map_err(|e| Error::format(path, format!("{ctx}: {e}")))?;
        records[idx].annotations.push(TileAnnotation { ann_id, bbox });
    }
    Ok(CocoIndex { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::raster::PixelData;
    use crate::datamodel::Split;

    fn record(id: &str, n: usize) -> TileRecord {
        TileRecord {
            tile_id: id.into(),
            raster_id: "r".into(),
            split: Split::Valid,
            pixel_window: Window {
                col_off: 10,
                row_off: 20,
                width: 8,
                height: 8,
            },
            transform: AffineTransform::north_up(100.0, 200.0, 0.045),
            crs: "EPSG:32618".into(),
            annotations: (0..n)
                .map(|i| TileAnnotation {
                    ann_id: 100 + i as u64,
                    bbox: PixelBox::new(0.1 * i as f64, 0.3, 2.7 + i as f64, 5.123456789).unwrap(),
                })
                .collect(),
            masked_frac: 0.25,
            white_frac: 0.0,
            transparent_frac: 0.125,
        }
    }

    #[test]
    fn counts_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tiles: Vec<Tile> = [("b", 2), ("a", 3)]
            .iter()
            .map(|&(id, n)| Tile {
                record: record(id, n),
                pixels: PixelData::filled(8, 8, 3, &[1, 2, 3]),
            })
            .collect();
        let path = emit_coco(&tiles, dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["images"].as_array().unwrap().len(), 2);
        assert_eq!(v["annotations"].as_array().unwrap().len(), 5);
        assert_eq!(v["categories"].as_array().unwrap().len(), 1);
        assert!(dir.path().join("tiles/a.tif").exists());

        let back = load_coco(&path).unwrap();
        assert_eq!(back.records[0].tile_id, "a");
        for (got, want) in back.records.iter().zip([record("a", 3), record("b", 2)]) {
            assert_eq!(got.transform, want.transform);
            assert_eq!(got.pixel_window, want.pixel_window);
            assert_eq!(got.masked_frac, want.masked_frac);
            for (g, w) in got.annotations.iter().zip(&want.annotations) {
                assert_eq!(g.ann_id, w.ann_id);
                assert!((g.bbox.col_max - w.bbox.col_max).abs() < 1e-6);
                assert!((g.bbox.row_max - w.bbox.row_max).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_index_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = emit_coco(&[], dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["images"], json!([]));
        assert_eq!(v["annotations"], json!([]));
        assert!(load_coco(&path).unwrap().records.is_empty());
    }

    #[test]
    fn byte_identical_output() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a", 3)];
        let (p1, p2) = (dir.path().join("1.json"), dir.path().join("2.json"));
        write_coco_index(&recs, &p1).unwrap();
        write_coco_index(&recs, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
