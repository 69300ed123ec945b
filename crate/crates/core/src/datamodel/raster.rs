//! Pixel storage and raster file backends.
//!
//! Two backends: 8-bit RGB/RGBA GeoTIFF (georeferencing from the
//! ModelTransformation or ModelPixelScale + ModelTiepoint tags, CRS from the
//! GeoKeyDirectory) and PNG with a JSON sidecar named `<stem>.meta.json`
//! holding `{"raster_id", "crs", "transform": [a, b, c, d, e, f]}`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, compression, Compression, TiffEncoder};
use tiff::tags::{ExtraSamples, Tag};
use tiff::ColorType;

use super::RasterMeta;
use crate::error::{Error, Result};
use crate::geometry::AffineTransform;

/// Interleaved 8-bit pixels, row-major, 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelData {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl PixelData {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 3 && channels != 4 {
            return Err(Error::Validation(format!(
                "unsupported channel count {channels} (expected RGB or RGBA)"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(PixelData {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: &[u8]) -> Self {
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * channels as usize)
            .collect();
        PixelData {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn has_alpha(&self) -> bool {
        self.channels == 4
    }

    #[inline]
    pub fn pixel(&self, col: u32, row: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (row as usize * self.width as usize + col as usize) * c;
        &self.data[i..i + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, col: u32, row: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (row as usize * self.width as usize + col as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Copies out the window `[col0, col0 + w) x [row0, row0 + h)`.
    pub fn crop(&self, col0: u32, row0: u32, w: u32, h: u32) -> PixelData {
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for row in row0..row0 + h {
            let start = (row as usize * self.width as usize + col0 as usize) * c;
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        PixelData {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resample to `(w, h)` with pixel-center alignment.
    pub fn resample_bilinear(&self, w: u32, h: u32) -> PixelData {
        let c = self.channels as usize;
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        let max_c = self.width as f64 - 1.0;
        let max_r = self.height as f64 - 1.0;
        let mut data = vec![0u8; w as usize * h as usize * c];
        for (row, out_row) in data.chunks_mut(w as usize * c).enumerate() {
            let fy = ((row as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for col in 0..w as usize {
                let fx = ((col as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let (p00, p10) = (self.pixel(x0, y0), self.pixel(x1, y0));
                let (p01, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
                for k in 0..c {
                    let top = p00[k] as f64 * (1.0 - tx) + p10[k] as f64 * tx;
                    let bot = p01[k] as f64 * (1.0 - tx) + p11[k] as f64 * tx;
                    out_row[col * c + k] = (top * (1.0 - ty) + bot * ty).round() as u8;
                }
            }
        }
        PixelData {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    raster_id: String,
    crs: String,
    transform: [f64; 6],
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    let stem = png.file_stem().unwrap_or_default().to_string_lossy();
    png.with_file_name(format!("{stem}.meta.json"))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

/// Reads a raster, dispatching on the file extension.
pub fn read_raster(path: &Path) -> Result<(RasterMeta, PixelData)> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "tif" | "tiff" => read_geotiff(path),
        "png" => read_png(path),
        _ => Err(Error::format(
            path,
            "unsupported raster extension (expected .tif, .tiff or .png)",
        )),
    }
}

pub fn read_png(path: &Path) -> Result<(RasterMeta, PixelData)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sc: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(&side, e))?;
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })?;
    let pixels = match img {
        image::DynamicImage::ImageRgb8(buf) => {
            PixelData::new(buf.width(), buf.height(), 3, buf.into_raw())?
        }
        image::DynamicImage::ImageRgba8(buf) => {
            PixelData::new(buf.width(), buf.height(), 4, buf.into_raw())?
        }
        other => {
            return Err(Error::format(
                path,
                format!("expected 8-bit RGB or RGBA, found {:?}", other.color()),
            ))
        }
    };
    let meta = RasterMeta::new(
        sc.raster_id,
        pixels.width,
        pixels.height,
        AffineTransform::from_array(sc.transform),
        sc.crs,
    )?;
    Ok((meta, pixels))
}

pub fn write_png(path: &Path, meta: &RasterMeta, pixels: &PixelData) -> Result<()> {
    let color = if pixels.has_alpha() {
        image::ExtendedColorType::Rgba8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &pixels.data, pixels.width, pixels.height, color).map_err(
        |e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other),
        },
    )?;
    let sc = Sidecar {
        raster_id: meta.raster_id.clone(),
        crs: meta.crs.clone(),
        transform: meta.transform.to_array(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sc).expect("sidecar serializes");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    }
}

/// EPSG code from a GeoKeyDirectory (`[version, rev, minor, n, (key, loc,
/// count, value)*]`), preferring the projected CRS key.
fn crs_from_geokeys(keys: &[u16]) -> Option<String> {
    let n = *keys.get(3)? as usize;
    let mut geographic = None;
    for entry in keys.get(4..4 + 4 * n)?.chunks_exact(4) {
        let (key, loc, value) = (entry[0], entry[1], entry[3]);
        if loc != 0 {
            continue;
        }
        match key {
            PROJECTED_CS_TYPE if value != 0 && value != 32767 => {
                return Some(format!("EPSG:{value}"))
            }
            GEOGRAPHIC_TYPE if value != 0 && value != 32767 => geographic = Some(value),
            _ => {}
        }
    }
    geographic.map(|v| format!("EPSG:{v}"))
}

fn geokeys_for(crs: &str) -> Option<Vec<u16>> {
    let code: u16 = crs.strip_prefix("EPSG:")?.parse().ok()?;
    // EPSG 4000-4999 are geographic 2D CRSs; everything else is treated as
    // projected.
    let geographic = (4000..5000).contains(&code);
    let (model, key) = if geographic {
        (2, GEOGRAPHIC_TYPE)
    } else {
        (1, PROJECTED_CS_TYPE)
    };
    Some(vec![
        1, 1, 0, 3, //
        GT_MODEL_TYPE, 0, 1, model, //
        GT_RASTER_TYPE, 0, 1, 1, //
        key, 0, 1, code,
    ])
}

pub fn read_geotiff(path: &Path) -> Result<(RasterMeta, PixelData)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
    let channels = match dec.colortype().map_err(|e| tiff_err(path, e))? {
        ColorType::RGB(8) => 3,
        ColorType::RGBA(8) => 4,
        ColorType::Multiband {
            bit_depth: 8,
            num_samples: n @ (3 | 4),
        } => n as u8,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported sample layout {other:?}; only 8-bit RGB/RGBA is read"),
            ))
        }
    };

    let transform = if let Ok(m) = dec.get_tag_f64_vec(Tag::ModelTransformationTag) {
        if m.len() < 8 {
            return Err(Error::format(path, "short ModelTransformationTag"));
        }
        AffineTransform::new(m[0], m[1], m[3], m[4], m[5], m[7])
    } else {
        let scale = dec
            .get_tag_f64_vec(Tag::ModelPixelScaleTag)
            .map_err(|_| Error::format(path, "no georeferencing tags"))?;
        let tie = dec
            .get_tag_f64_vec(Tag::ModelTiepointTag)
            .map_err(|_| Error::format(path, "ModelPixelScaleTag without ModelTiepointTag"))?;
        if scale.len() < 2 || tie.len() < 6 {
            return Err(Error::format(path, "short georeferencing tags"));
        }
        let (sx, sy) = (scale[0], scale[1]);
        let (i, j, x, y) = (tie[0], tie[1], tie[3], tie[4]);
        AffineTransform::new(sx, 0.0, x - i * sx, 0.0, -sy, y + j * sy)
    };
    let crs = dec
        .get_tag_u16_vec(Tag::GeoKeyDirectoryTag)
        .ok()
        .and_then(|k| crs_from_geokeys(&k))
        .unwrap_or_else(|| "unknown".to_string());

    let data = match dec.read_image().map_err(|e| tiff_err(path, e))? {
        DecodingResult::U8(v) => v,
        _ => return Err(Error::format(path, "non-8-bit samples")),
    };
    let pixels = PixelData::new(width, height, channels, data)?;
    let meta = RasterMeta::new(file_stem(path), width, height, transform, crs)?;
    Ok((meta, pixels))
}

/// Writes a deflate-compressed GeoTIFF with ModelPixelScale/Tiepoint tags
/// for north-up transforms and a ModelTransformation tag otherwise.
pub fn write_geotiff(
    path: &Path,
    transform: &AffineTransform,
    crs: &str,
    pixels: &PixelData,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_compression(Compression::Deflate(compression::DeflateLevel::Balanced));
    // RGB8 plus an alpha extra sample when present.
    macro_rules! write_with {
        ($ct:ty) => {{
            let mut img = enc
                .new_image::<$ct>(pixels.width, pixels.height)
                .map_err(|e| tiff_err(path, e))?;
            if pixels.has_alpha() {
                img.extra_samples(&[ExtraSamples::UnassociatedAlpha])
                    .map_err(|e| tiff_err(path, e))?;
            }
            let t = transform;
            let dir = img.encoder();
            if t.b == 0.0 && t.d == 0.0 {
                dir.write_tag(Tag::ModelPixelScaleTag, &[t.a, -t.e, 0.0][..])
                    .map_err(|e| tiff_err(path, e))?;
                dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, t.c, t.f, 0.0][..])
                    .map_err(|e| tiff_err(path, e))?;
            } else {
                let m = [
                    t.a, t.b, 0.0, t.c, t.d, t.e, 0.0, t.f, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                    1.0,
                ];
                dir.write_tag(Tag::ModelTransformationTag, &m[..])
                    .map_err(|e| tiff_err(path, e))?;
            }
            if let Some(keys) = geokeys_for(crs) {
                dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])
                    .map_err(|e| tiff_err(path, e))?;
            }
            img.write_data(&pixels.data).map_err(|e| tiff_err(path, e))?;
        }};
    }
    write_with!(colortype::RGB8);
    Ok(())
}
