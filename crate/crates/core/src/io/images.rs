//! PNG ingestion and emission. In memory, images are `[0, 1]` float RGB;
//! on disk they are 8-bit PNG.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{GbrError, Result};
use crate::geometry::{Raster, RgbImage};

/// Read an RGB PNG (other color types are converted).
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| GbrError::load(path.display().to_string(), e.to_string()))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Raster::filled(w, h, [0.0f64; 3]);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(
            x as usize,
            y as usize,
            [
                px.0[0] as f64 / 255.0,
                px.0[1] as f64 / 255.0,
                px.0[2] as f64 / 255.0,
            ],
        );
    }
    Ok(out)
}

/// Write an RGB image, clamping to `[0, 1]` before 8-bit quantization.
pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    let (w, h) = (image.width(), image.height());
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(w as u32, h as u32);
    for (x, y, c) in image.iter_cells() {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.put_pixel(x as u32, y as u32, Rgb([q(c[0]), q(c[1]), q(c[2])]));
    }
    buf.save(path)
        .map_err(|e| GbrError::load(path.display().to_string(), e.to_string()))
}

/// Read a binary mask PNG: any nonzero channel marks the cell true.
pub fn read_mask_png(path: &Path) -> Result<Raster<bool>> {
    let img = image::open(path)
        .map_err(|e| GbrError::load(path.display().to_string(), e.to_string()))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Raster::filled(w, h, false);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, px.0[0] != 0);
    }
    Ok(out)
}

/// Write a binary mask PNG (true = 255).
pub fn write_mask_png(path: &Path, mask: &Raster<bool>) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (x, y, v) in mask.iter_cells() {
        buf.put_pixel(x as u32, y as u32, image::Luma([if *v { 255 } else { 0 }]));
    }
    buf.save(path)
        .map_err(|e| GbrError::load(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = Raster::from_fn(4, 3, |x, y| {
            [x as f64 / 3.0, y as f64 / 2.0, (x + y) as f64 / 5.0]
        });
        write_rgb_png(&path, &img).unwrap();
        let back = read_rgb_png(&path).unwrap();
        assert_eq!(back.width(), 4);
        for (a, b) in img.data().iter().zip(back.data()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn mask_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Raster::from_fn(5, 4, |x, y| (x + y) % 3 == 0);
        write_mask_png(&path, &mask).unwrap();
        let back = read_mask_png(&path).unwrap();
        assert_eq!(mask.data(), back.data());
    }
}
