//! Binary raster container for point maps, confidence maps, and depth maps.
//!
//! Layout: magic `GBRR`, then width, height, and channel count as u32
//! little-endian, then `width * height * channels` f32 little-endian values
//! in row-major order with interleaved channels.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{GbrError, Result};
use crate::geometry::Raster;

pub const RAW_MAGIC: [u8; 4] = *b"GBRR";
const HEADER_LEN: usize = 16;

/// Decoded contents of a raw raster file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<f32>,
}

impl RawRaster {
    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

/// Write a raster file; `data.len()` must equal `width * height * channels`.
pub fn write_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    let expect = width * height * channels;
    if data.len() != expect {
        return Err(GbrError::Dimension(format!(
            "raw payload has {} values, expected {expect} for {width}x{height}x{channels}",
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    buf.extend_from_slice(&RAW_MAGIC);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    buf.extend_from_slice(&(channels as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| GbrError::io(path, e))?;
    file.write_all(&buf).map_err(|e| GbrError::io(path, e))?;
    Ok(())
}

/// Read and validate a raster file.
pub fn read_raw(path: &Path) -> Result<RawRaster> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| GbrError::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(GbrError::load(
            file_name(path),
            format!(
                "truncated header: {} bytes, need {HEADER_LEN} (at byte offset {})",
                bytes.len(),
                bytes.len()
            ),
        ));
    }
    if bytes[..4] != RAW_MAGIC {
        return Err(GbrError::load(
            file_name(path),
            format!("bad magic {:?}, expected {RAW_MAGIC:?}", &bytes[..4]),
        ));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let channels = u32_at(12) as usize;
    if width == 0 || height == 0 || channels == 0 {
        return Err(GbrError::load(
            file_name(path),
            format!("degenerate dimensions {width}x{height}x{channels}"),
        ));
    }
    let count = width * height * channels;
    let need = HEADER_LEN + count * 4;
    if bytes.len() != need {
        return Err(GbrError::load(
            file_name(path),
            format!(
                "payload size mismatch: file ends at byte offset {}, expected {need} \
                 ({width}x{height}x{channels} f32 values)",
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = HEADER_LEN + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Ok(RawRaster {
        width,
        height,
        channels,
        data,
    })
}

/// Write a scalar raster as a 1-channel file.
pub fn write_scalar_raster(path: &Path, raster: &Raster<f64>) -> Result<()> {
    let data: Vec<f32> = raster.data().iter().map(|v| *v as f32).collect();
    write_raw(path, raster.width(), raster.height(), 1, &data)
}

/// Read a 1-channel file into a scalar raster.
pub fn read_scalar_raster(path: &Path) -> Result<Raster<f64>> {
    let raw = read_raw(path)?;
    if raw.channels != 1 {
        return Err(GbrError::load(
            file_name(path),
            format!("expected 1 channel, found {}", raw.channels),
        ));
    }
    Raster::from_vec(
        raw.width,
        raw.height,
        raw.data.iter().map(|v| *v as f64).collect(),
    )
}

/// Write a vector raster as a 3-channel file.
pub fn write_vector_raster(path: &Path, raster: &Raster<Vector3<f64>>) -> Result<()> {
    let mut data = Vec::with_capacity(raster.len() * 3);
    for v in raster.data() {
        data.push(v.x as f32);
        data.push(v.y as f32);
        data.push(v.z as f32);
    }
    write_raw(path, raster.width(), raster.height(), 3, &data)
}

/// Read a 3-channel file into a vector raster.
pub fn read_vector_raster(path: &Path) -> Result<Raster<Vector3<f64>>> {
    let raw = read_raw(path)?;
    if raw.channels != 3 {
        return Err(GbrError::load(
            file_name(path),
            format!("expected 3 channels, found {}", raw.channels),
        ));
    }
    let data = raw
        .data
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    Raster::from_vec(raw.width, raw.height, data)
}

/// Write a depth raster with validity encoded as zero depth.
pub fn write_depth_raster(path: &Path, depth: &crate::geometry::DepthMap) -> Result<()> {
    let mut data = Vec::with_capacity(depth.width() * depth.height());
    for (x, y, d) in depth.depth().iter_cells() {
        data.push(if depth.is_valid(x, y) { *d as f32 } else { 0.0 });
    }
    write_raw(path, depth.width(), depth.height(), 1, &data)
}

/// Read a depth raster; non-positive or non-finite cells become invalid.
pub fn read_depth_raster(path: &Path) -> Result<crate::geometry::DepthMap> {
    let scalar = read_scalar_raster(path)?;
    let valid = scalar.map(|d| d.is_finite() && *d > 0.0);
    let depth = scalar.map(|d| if d.is_finite() && *d > 0.0 { *d } else { 0.0 });
    crate::geometry::DepthMap::new(depth, valid)
}
