//! PNG serialization with JSON sidecars.
//!
//! Frames save as 16-bit grayscale, masks as 8-bit 0/255. Geometry that a
//! PNG cannot carry (calibration, catheter center, polar sampling metadata)
//! goes in a sidecar named like the image with a `.json` extension. Loading
//! tolerates a missing sidecar by assuming a 70 mm field of view centered on
//! the frame, the scanner's nominal geometry.

use super::{CartesianFrame, CartesianMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Nominal imaging diameter in mm, used when no sidecar is present.
pub const DEFAULT_FOV_MM: f64 = 70.0;

/// Geometry metadata stored next to each PNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub mm_per_pixel: f64,
    /// Catheter center, `(row, col)`.
    pub center: (f64, f64),
    /// Angle of polar row 0, for images that are polar resamplings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    /// Radial extent of the polar grid in source pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max_px: Option<f64>,
}

impl SidecarMeta {
    fn default_for(side: usize) -> Self {
        let c = (side as f64 - 1.0) / 2.0;
        Self {
            mm_per_pixel: DEFAULT_FOV_MM / side as f64,
            center: (c, c),
            theta0: None,
            r_max_px: None,
        }
    }
}

fn sidecar_path(png: &Path) -> std::path::PathBuf {
    png.with_extension("json")
}

fn write_sidecar(png: &Path, meta: &SidecarMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(png), json)?;
    Ok(())
}

fn read_sidecar(png: &Path, side: usize) -> Result<SidecarMeta> {
    let path = sidecar_path(png);
    if !path.exists() {
        return Ok(SidecarMeta::default_for(side));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Saves a frame as 16-bit grayscale PNG plus sidecar. Intensities are
/// clamped to `[0, 1]` before quantization.
pub fn save_frame_png<S: Scalar>(path: &Path, frame: &CartesianFrame<S>) -> Result<()> {
    let side = frame.side() as u32;
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(side, side, |x, y| {
        let v = frame.pixels[[y as usize, x as usize]].to_f64().clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    buf.save(path)?;
    write_sidecar(
        path,
        &SidecarMeta {
            mm_per_pixel: frame.mm_per_pixel,
            center: frame.center,
            theta0: None,
            r_max_px: None,
        },
    )
}

/// Loads a grayscale PNG (8- or 16-bit) into a frame with intensities in
/// `[0, 1]`, reading geometry from the sidecar when one exists.
pub fn load_frame_png<S: Scalar>(path: &Path) -> Result<CartesianFrame<S>> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::NonSquareFrame {
            rows: h as usize,
            cols: w as usize,
        });
    }
    let pixels = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        S::from_f64(img.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0)
    });
    let meta = read_sidecar(path, h as usize)?;
    CartesianFrame::new(pixels, meta.mm_per_pixel, meta.center)
}

/// Saves a mask as 8-bit PNG (foreground 255) plus sidecar.
pub fn save_mask_png(path: &Path, mask: &CartesianMask) -> Result<()> {
    let side = mask.side() as u32;
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(side, side, |x, y| {
        Luma([mask.pixels[[y as usize, x as usize]] * 255])
    });
    buf.save(path)?;
    write_sidecar(
        path,
        &SidecarMeta {
            mm_per_pixel: mask.mm_per_pixel,
            center: mask.center,
            theta0: None,
            r_max_px: None,
        },
    )
}

/// Loads a mask PNG; any pixel at or above half intensity counts as
/// foreground, so both 0/1 and 0/255 encodings round-trip.
pub fn load_mask_png(path: &Path) -> Result<CartesianMask> {
    let img = DynamicImage::to_luma8(&image::open(path)?);
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::NonSquareFrame {
            rows: h as usize,
            cols: w as usize,
        });
    }
    let pixels = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        u8::from(img.get_pixel(j as u32, i as u32).0[0] >= 128)
    });
    let meta = read_sidecar(path, h as usize)?;
    CartesianMask::new(pixels, meta.mm_per_pixel, meta.center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pixels = Array2::from_shape_fn((32, 32), |_| rng.random_range(0.0..1.0f64));
        let frame = CartesianFrame::new(pixels, 0.273, (15.0, 16.0)).unwrap();
        save_frame_png(&path, &frame).unwrap();
        assert!(dir.path().join("frame.json").exists());
        let loaded: CartesianFrame<f64> = load_frame_png(&path).unwrap();
        assert_eq!(loaded.mm_per_pixel, 0.273);
        assert_eq!(loaded.center, (15.0, 16.0));
        let max_err = frame
            .pixels
            .iter()
            .zip(loaded.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        // 16-bit quantization: half a step at most.
        assert!(max_err <= 0.5 / 65535.0 + 1e-12, "max_err {max_err}");
    }

    #[test]
    fn mask_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pixels = Array2::from_shape_fn((24, 24), |_| u8::from(rng.random_bool(0.4)));
        let mask = CartesianMask::new(pixels, 0.3, (11.5, 11.5)).unwrap();
        save_mask_png(&path, &mask).unwrap();
        let loaded = load_mask_png(&path).unwrap();
        assert_eq!(loaded.pixels, mask.pixels);
        assert_eq!(loaded.mm_per_pixel, 0.3);
    }

    #[test]
    fn missing_sidecar_gets_nominal_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.png");
        let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(64, 64, |_, _| Luma([0u8]));
        buf.save(&path).unwrap();
        let mask = load_mask_png(&path).unwrap();
        assert_eq!(mask.mm_per_pixel, DEFAULT_FOV_MM / 64.0);
        assert_eq!(mask.center, (31.5, 31.5));
    }
}
