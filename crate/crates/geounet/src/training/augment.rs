//! Cartesian-space data augmentation: stacked geometric transforms (applied
//! identically to frame and mask) followed by photometric transforms on the
//! frame alone, all before polar conversion.

use ndarray::Array2;
use rand::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_mask_to_polar, mask_to_contour_depth, CartesianFrame, CartesianMask,
};
use crate::geometry::resample::{sample_bilinear, sample_nearest_u8};
use crate::phantom::Sample;

/// Draws that leave the lumen outside the field of view are resampled this
/// many times before giving up.
const MAX_DRAWS: usize = 10;

/// Ranges for each stacked transform, sampled uniformly per draw. Degenerate
/// ranges pin a transform; the identity settings are rotation/translation/
/// shear at 0, gamma and intensity at 1, blur and speckle at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Rotation about the frame center, degrees.
    #[serde(default = "default_rotation")]
    pub rotation_deg: [f64; 2],
    /// Translation drawn independently per axis, pixels.
    #[serde(default = "default_translate")]
    pub translate_px: [f64; 2],
    /// Shear angle along the column axis, degrees.
    #[serde(default = "default_shear")]
    pub shear_deg: [f64; 2],
    /// Contrast adjustment exponent `v -> v^gamma`.
    #[serde(default = "default_gamma")]
    pub contrast_gamma: [f64; 2],
    /// Gaussian blur standard deviation, pixels.
    #[serde(default = "default_blur")]
    pub blur_sigma: [f64; 2],
    /// Global intensity multiplier.
    #[serde(default = "default_intensity")]
    pub intensity_scale: [f64; 2],
    /// Multiplicative speckle noise standard deviation.
    #[serde(default = "default_speckle")]
    pub speckle_sigma: [f64; 2],
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

fn default_rotation() -> [f64; 2] {
    [-180.0, 180.0]
}
fn default_translate() -> [f64; 2] {
    [-10.0, 10.0]
}
fn default_shear() -> [f64; 2] {
    [-5.0, 5.0]
}
fn default_gamma() -> [f64; 2] {
    [0.8, 1.25]
}
fn default_blur() -> [f64; 2] {
    [0.0, 1.5]
}
fn default_intensity() -> [f64; 2] {
    [0.8, 1.2]
}
fn default_speckle() -> [f64; 2] {
    [0.0, 0.1]
}
fn default_enabled() -> bool {
    true
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: default_rotation(),
            translate_px: default_translate(),
            shear_deg: default_shear(),
            contrast_gamma: default_gamma(),
            blur_sigma: default_blur(),
            intensity_scale: default_intensity(),
            speckle_sigma: default_speckle(),
            enabled: true,
        }
    }
}

impl AugmentConfig {
    /// All transforms pinned to the identity; useful as a baseline and in
    /// tests.
    pub fn identity() -> Self {
        Self {
            rotation_deg: [0.0, 0.0],
            translate_px: [0.0, 0.0],
            shear_deg: [0.0, 0.0],
            contrast_gamma: [1.0, 1.0],
            blur_sigma: [0.0, 0.0],
            intensity_scale: [1.0, 1.0],
            speckle_sigma: [0.0, 0.0],
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_deg", self.rotation_deg),
            ("translate_px", self.translate_px),
            ("shear_deg", self.shear_deg),
            ("contrast_gamma", self.contrast_gamma),
            ("blur_sigma", self.blur_sigma),
            ("intensity_scale", self.intensity_scale),
            ("speckle_sigma", self.speckle_sigma),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "augment range {name} = [{lo}, {hi}] is not well-ordered"
                )));
            }
        }
        if self.contrast_gamma[0] <= 0.0 {
            return Err(Error::InvalidConfig("contrast_gamma must stay positive".into()));
        }
        if self.intensity_scale[0] <= 0.0 {
            return Err(Error::InvalidConfig("intensity_scale must stay positive".into()));
        }
        if self.blur_sigma[0] < 0.0 || self.speckle_sigma[0] < 0.0 {
            return Err(Error::InvalidConfig("blur/speckle sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// One concrete set of transform parameters.
struct Draw {
    rotation: f64,
    translate: (f64, f64),
    shear: f64,
    gamma: f64,
    blur_sigma: f64,
    intensity: f64,
    speckle_sigma: f64,
}

impl Draw {
    fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let pick = |r: [f64; 2], rng: &mut dyn RngCore| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..=r[1])
            }
        };
        Self {
            rotation: pick(cfg.rotation_deg, rng).to_radians(),
            translate: (pick(cfg.translate_px, rng), pick(cfg.translate_px, rng)),
            shear: pick(cfg.shear_deg, rng).to_radians().tan(),
            gamma: pick(cfg.contrast_gamma, rng),
            blur_sigma: pick(cfg.blur_sigma, rng),
            intensity: pick(cfg.intensity_scale, rng),
            speckle_sigma: pick(cfg.speckle_sigma, rng),
        }
    }
}

/// Applies one augmentation draw; rejects and redraws transforms whose lumen
/// leaves the field of view, erroring after [`MAX_DRAWS`] attempts.
/// Deterministic given the RNG state.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(sample.clone());
    }
    for _ in 0..MAX_DRAWS {
        let draw = Draw::sample(cfg, rng);
        let mask = warp_mask(&sample.mask, &draw);
        if !lumen_in_view(&mask) {
            continue;
        }
        let mut pixels = warp_frame(&sample.frame, &draw);
        apply_photometric(&mut pixels, &draw, rng);
        let frame =
            CartesianFrame::new(pixels, sample.frame.mm_per_pixel, sample.frame.center)?;
        return Ok(Sample {
            frame,
            mask,
            label: sample.label,
            id: sample.id.clone(),
        });
    }
    Err(Error::Augment(format!(
        "{} draws in a row pushed the lumen of {} outside the field of view",
        MAX_DRAWS, sample.id
    )))
}

/// Inverse affine map of an output pixel back to input coordinates: the
/// forward transform rotates then shears about the frame center and finally
/// translates, so the inverse un-translates, un-rotates, and un-shears.
fn source_position(draw: &Draw, center: (f64, f64), i: usize, j: usize) -> (f64, f64) {
    let dr = i as f64 - center.0 - draw.translate.0;
    let dc = j as f64 - center.1 - draw.translate.1;
    let (sin, cos) = draw.rotation.sin_cos();
    // inverse of R(theta) . Shear(s) with Shear = [[1, s], [0, 1]]
    let s = draw.shear;
    let src_r = (cos + s * sin) * dr + (sin - s * cos) * dc;
    let src_c = -sin * dr + cos * dc;
    (center.0 + src_r, center.1 + src_c)
}

fn warp_frame(frame: &CartesianFrame<f64>, draw: &Draw) -> Array2<f64> {
    Array2::from_shape_fn(frame.pixels.dim(), |(i, j)| {
        let (r, c) = source_position(draw, frame.center, i, j);
        sample_bilinear(&frame.pixels, r, c)
    })
}

fn warp_mask(mask: &CartesianMask, draw: &Draw) -> CartesianMask {
    let pixels = Array2::from_shape_fn(mask.pixels.dim(), |(i, j)| {
        let (r, c) = source_position(draw, mask.center, i, j);
        sample_nearest_u8(&mask.pixels, r, c)
    });
    CartesianMask::new(pixels, mask.mm_per_pixel, mask.center).expect("warp keeps shape")
}

/// The polar representation needs the lumen around the catheter and fully
/// inside the sampled disk: non-empty, covering the center pixel, and within
/// `r_max` of the center.
fn lumen_in_view(mask: &CartesianMask) -> bool {
    let r_max = mask.side() as f64 / 2.0;
    let center = (mask.center.0.round() as usize, mask.center.1.round() as usize);
    if mask.pixels[[center.0, center.1]] == 0 {
        return false;
    }
    let mut any = false;
    for ((i, j), &v) in mask.pixels.indexed_iter() {
        if v == 1 {
            any = true;
            let d = (i as f64 - mask.center.0).hypot(j as f64 - mask.center.1);
            if d >= r_max - 1.0 {
                return false;
            }
        }
    }
    any
}

fn apply_photometric(pixels: &mut Array2<f64>, draw: &Draw, rng: &mut impl Rng) {
    if draw.gamma != 1.0 {
        pixels.mapv_inplace(|v| v.max(0.0).powf(draw.gamma));
    }
    if draw.blur_sigma > 1e-6 {
        gaussian_blur(pixels, draw.blur_sigma);
    }
    if draw.intensity != 1.0 {
        pixels.mapv_inplace(|v| v * draw.intensity);
    }
    if draw.speckle_sigma > 0.0 {
        let noise = Normal::new(0.0, draw.speckle_sigma).expect("validated sigma");
        pixels.mapv_inplace(|v| v * (1.0 + noise.sample(rng)));
    }
    if draw.gamma != 1.0
        || draw.blur_sigma > 1e-6
        || draw.intensity != 1.0
        || draw.speckle_sigma > 0.0
    {
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
}

/// Separable Gaussian blur truncated at three standard deviations, with
/// border taps renormalized over the in-bounds window.
fn gaussian_blur(pixels: &mut Array2<f64>, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let (h, w) = pixels.dim();
    let pass = |along_rows: bool, src: &Array2<f64>| {
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (fixed, moving, len) = if along_rows { (j, i, h) } else { (i, j, w) };
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (t, wt) in kernel.iter().enumerate() {
                let pos = moving as isize + t as isize - radius;
                if pos < 0 || pos >= len as isize {
                    continue;
                }
                let v = if along_rows {
                    src[[pos as usize, fixed]]
                } else {
                    src[[fixed, pos as usize]]
                };
                acc += wt * v;
                norm += wt;
            }
            acc / norm
        })
    };
    let vertical = pass(true, pixels);
    *pixels = pass(false, &vertical);
}

/// How prefix-shaped the mask's radial profiles are: Dice between the polar
/// resampling of the mask and its per-angle prefix closure. A mask that is
/// star-convex about the frame center scores ~1; detached or re-entrant
/// shapes score visibly lower.
pub fn star_convexity(mask: &CartesianMask) -> Result<f64> {
    let r = 256;
    let polar = cartesian_mask_to_polar(mask, r)?;
    let depth = mask_to_contour_depth(&polar);
    let mut inter = 0u64;
    let mut total = 0u64;
    for (row, &d) in polar.pixels.outer_iter().zip(depth.values()) {
        for (j, &v) in row.iter().enumerate() {
            let p = u8::from((j as u32) < d);
            inter += u64::from(p & v);
            total += u64::from(p) + u64::from(v);
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use crate::phantom::{random_spec, render_sample, Label};
    use rand_chacha::ChaCha8Rng;

    fn disk_sample(side: usize, radius: f64) -> Sample {
        let c = (side as f64 - 1.0) / 2.0;
        let frame = Array2::from_shape_fn((side, side), |(i, j)| {
            let d = (i as f64 - c).hypot(j as f64 - c);
            if d <= radius {
                0.15
            } else {
                0.5
            }
        });
        let mask = Array2::from_shape_fn((side, side), |(i, j)| {
            u8::from((i as f64 - c).hypot(j as f64 - c) <= radius)
        });
        Sample {
            frame: CartesianFrame::new(frame, 0.27, (c, c)).unwrap(),
            mask: CartesianMask::new(mask, 0.27, (c, c)).unwrap(),
            label: Label::N1,
            id: "disk".into(),
        }
    }

    fn phantom_sample(seed: u64) -> Sample {
        let spec = random_spec(Label::N1, 128, seed).unwrap();
        render_sample(&spec, 128).unwrap()
    }

    #[test]
    fn identity_config_returns_the_input_exactly() {
        let sample = phantom_sample(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&sample, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(out.frame.pixels, sample.frame.pixels);
        assert_eq!(out.mask.pixels, sample.mask.pixels);
    }

    #[test]
    fn disabled_config_passes_through() {
        let sample = phantom_sample(4);
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&sample, &cfg, &mut rng).unwrap();
        assert_eq!(out.frame.pixels, sample.frame.pixels);
    }

    #[test]
    fn quarter_turn_leaves_a_disk_unchanged() {
        let sample = disk_sample(128, 30.0);
        let cfg = AugmentConfig {
            rotation_deg: [90.0, 90.0],
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment(&sample, &cfg, &mut rng).unwrap();
        assert!(dice(&out.mask, &sample.mask).unwrap() >= 0.99);
    }

    #[test]
    fn fixed_rng_state_reproduces_the_draw() {
        let sample = phantom_sample(5);
        let cfg = AugmentConfig::default();
        let a = augment(&sample, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = augment(&sample, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.frame.pixels, b.frame.pixels);
        assert_eq!(a.mask.pixels, b.mask.pixels);
    }

    #[test]
    fn rotation_and_shear_apply_to_frame_and_mask_identically() {
        // The warped mask must match a threshold of the warped frame's lumen
        // region: warp a clean two-level disk image and compare.
        let sample = disk_sample(128, 30.0);
        let cfg = AugmentConfig {
            rotation_deg: [35.0, 35.0],
            translate_px: [4.0, 4.0],
            shear_deg: [4.0, 4.0],
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&sample, &cfg, &mut rng).unwrap();
        // Threshold the warped frame's lumen level; ignore the frame corners
        // where the warp sampled outside the source image (reads 0).
        let center = out.frame.center;
        let from_frame = Array2::from_shape_fn(out.frame.pixels.dim(), |(i, j)| {
            let near = (i as f64 - center.0).hypot(j as f64 - center.1) <= 45.0;
            u8::from(near && out.frame.pixels[[i, j]] < 0.3)
        });
        let frame_mask =
            CartesianMask::new(from_frame, 0.27, out.mask.center).unwrap();
        assert!(dice(&frame_mask, &out.mask).unwrap() >= 0.97);
    }

    #[test]
    fn augmented_masks_stay_binary_and_star_convex() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..30 {
            let sample = phantom_sample(seed);
            let out = augment(&sample, &cfg, &mut rng).unwrap();
            assert!(out.mask.pixels.iter().all(|&v| v <= 1));
            let score = star_convexity(&out.mask).unwrap();
            assert!(score >= 0.98, "seed {seed}: star convexity {score}");
        }
    }

    #[test]
    fn impossible_translation_errors_after_retries() {
        let sample = disk_sample(64, 20.0);
        let cfg = AugmentConfig {
            translate_px: [40.0, 40.0],
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        match augment(&sample, &cfg, &mut rng) {
            Err(Error::Augment(msg)) => assert!(msg.contains("field of view")),
            other => panic!("expected augment failure, got {other:?}"),
        }
    }

    #[test]
    fn malformed_ranges_are_rejected() {
        let cfg = AugmentConfig {
            rotation_deg: [10.0, -10.0],
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AugmentConfig {
            contrast_gamma: [0.0, 1.0],
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn photometric_transforms_leave_the_mask_alone() {
        let sample = phantom_sample(9);
        let cfg = AugmentConfig {
            contrast_gamma: [1.3, 1.3],
            blur_sigma: [1.0, 1.0],
            intensity_scale: [0.9, 0.9],
            speckle_sigma: [0.05, 0.05],
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment(&sample, &cfg, &mut rng).unwrap();
        assert_eq!(out.mask.pixels, sample.mask.pixels);
        assert_ne!(out.frame.pixels, sample.frame.pixels);
        assert!(out.frame.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn star_convexity_flags_detached_shapes() {
        let side = 128;
        let c = (side as f64 - 1.0) / 2.0;
        // A center disk plus a detached blob: rays through the blob leave
        // and re-enter foreground, breaking the prefix structure.
        let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
            let d0 = (i as f64 - c).hypot(j as f64 - c);
            let d1 = (i as f64 - c - 45.0).hypot(j as f64 - c);
            u8::from(d0 <= 20.0 || d1 <= 12.0)
        });
        let mask = CartesianMask::new(pixels, 0.27, (c, c)).unwrap();
        let score = star_convexity(&mask).unwrap();
        assert!(score < 0.95, "detached blob scored {score}");

        let solid = disk_sample(side, 25.0).mask;
        assert!(star_convexity(&solid).unwrap() >= 0.99);
    }
}
