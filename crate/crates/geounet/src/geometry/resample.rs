//! Resampling between the Cartesian and polar grids.
//!
//! Forward: polar bin `(i, j)` samples the Cartesian point
//! `center + r_j * (cos theta_i, sin theta_i)` applied to `(row, col)`.
//! Inverse: Cartesian pixel `(row, col)` maps back through `atan2` /
//! `hypot` to a fractional polar position, wrapping rows circularly.
//! Intensities interpolate bilinearly, masks take the nearest bin, and
//! samples outside the source grid read 0.

use super::{CartesianFrame, CartesianMask, PolarFrame, PolarGeom, PolarMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::f64::consts::TAU;

/// Interpolation rule for resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Weighted average of the four surrounding pixels.
    Bilinear,
    /// Value of the closest pixel.
    Nearest,
}

fn check_r(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidResolution {
            r,
            reason: "angular resolution must be positive".into(),
        });
    }
    Ok(())
}

/// Samples a grid at a fractional `(row, col)` position; out-of-grid reads 0.
pub(crate) fn sample_bilinear<S: Scalar>(grid: &Array2<S>, row: f64, col: f64) -> S {
    let (h, w) = grid.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = S::from_f64(row - r0);
    let fc = S::from_f64(col - c0);
    let at = |r: f64, c: f64| -> S {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            S::zero()
        } else {
            grid[[r as usize, c as usize]]
        }
    };
    let one = S::one();
    at(r0, c0) * (one - fr) * (one - fc)
        + at(r0, c0 + 1.0) * (one - fr) * fc
        + at(r0 + 1.0, c0) * fr * (one - fc)
        + at(r0 + 1.0, c0 + 1.0) * fr * fc
}

pub(crate) fn sample_nearest_u8(grid: &Array2<u8>, row: f64, col: f64) -> u8 {
    let (h, w) = grid.dim();
    let r = row.round();
    let c = col.round();
    if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
        0
    } else {
        grid[[r as usize, c as usize]]
    }
}

pub(crate) fn sample_nearest<S: Scalar>(grid: &Array2<S>, row: f64, col: f64) -> S {
    let (h, w) = grid.dim();
    let r = row.round();
    let c = col.round();
    if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
        S::zero()
    } else {
        grid[[r as usize, c as usize]]
    }
}

/// Cartesian sample position of polar bin `(i, j)`.
fn polar_bin_position(geom: &PolarGeom, row: usize, col: usize) -> (f64, f64) {
    let theta = geom.theta(row);
    let radius = geom.radius(col);
    (
        geom.center.0 + radius * theta.cos(),
        geom.center.1 + radius * theta.sin(),
    )
}

/// Resamples a Cartesian frame onto an `R x R` polar grid with `theta0 = 0`
/// and `r_max_px` equal to half the frame side.
pub fn cartesian_to_polar<S: Scalar>(
    frame: &CartesianFrame<S>,
    r: usize,
    interp: Interp,
) -> Result<PolarFrame<S>> {
    check_r(r)?;
    let geom = PolarGeom {
        rows_per_turn: r,
        r_max_px: frame.side() as f64 / 2.0,
        theta0: 0.0,
        center: frame.center,
        mm_per_pixel: frame.mm_per_pixel,
    };
    let pixels = Array2::from_shape_fn((r, r), |(i, j)| {
        let (row, col) = polar_bin_position(&geom, i, j);
        match interp {
            Interp::Bilinear => sample_bilinear(&frame.pixels, row, col),
            Interp::Nearest => sample_nearest(&frame.pixels, row, col),
        }
    });
    PolarFrame::new(pixels, geom)
}

/// Resamples a Cartesian mask onto the polar grid with nearest-neighbor
/// membership, so values stay binary.
pub fn cartesian_mask_to_polar(mask: &CartesianMask, r: usize) -> Result<PolarMask> {
    check_r(r)?;
    let geom = PolarGeom {
        rows_per_turn: r,
        r_max_px: mask.side() as f64 / 2.0,
        theta0: 0.0,
        center: mask.center,
        mm_per_pixel: mask.mm_per_pixel,
    };
    let pixels = Array2::from_shape_fn((r, r), |(i, j)| {
        let (row, col) = polar_bin_position(&geom, i, j);
        sample_nearest_u8(&mask.pixels, row, col)
    });
    PolarMask::new(pixels, geom)
}

/// Fractional polar position of a Cartesian pixel, or `None` outside the
/// sampled annulus. Rows wrap; the returned row lies in `[0, R)` and the
/// column in `[0, R-1]` after clamping the half-bin margins at both ends.
fn cartesian_pixel_to_polar_pos(geom: &PolarGeom, row: usize, col: usize) -> Option<(f64, f64)> {
    let dr = row as f64 - geom.center.0;
    let dc = col as f64 - geom.center.1;
    let radius = dr.hypot(dc);
    if radius > geom.r_max_px {
        return None;
    }
    let r = geom.rows_per_turn as f64;
    let theta = dc.atan2(dr);
    let mut i = (theta - geom.theta0) / TAU * r;
    i = i.rem_euclid(r);
    let j = (radius / geom.r_max_px * r - 0.5).clamp(0.0, r - 1.0);
    Some((i, j))
}

/// Inverse resampling of a polar frame onto an `h x h` Cartesian grid.
/// Pixels beyond `r_max_px` from the center read 0. The polar frame must be
/// unpadded (one full turn of rows).
pub fn polar_to_cartesian<S: Scalar>(
    polar: &PolarFrame<S>,
    h: usize,
    interp: Interp,
) -> Result<CartesianFrame<S>> {
    require_full_turn(polar.n_rows(), polar.r())?;
    let geom = &polar.geom;
    let r = polar.r();
    let pixels = Array2::from_shape_fn((h, h), |(row, col)| {
        match cartesian_pixel_to_polar_pos(geom, row, col) {
            None => S::zero(),
            Some((i, j)) => match interp {
                Interp::Bilinear => sample_bilinear_wrapped(&polar.pixels, i, j, r),
                Interp::Nearest => {
                    let wrapped = i.round() as usize % r;
                    polar.pixels[[wrapped, j.round() as usize]]
                }
            },
        }
    });
    CartesianFrame::new(pixels, geom.mm_per_pixel, geom.center)
}

/// Inverse resampling of a polar mask with nearest-neighbor membership.
pub fn polar_mask_to_cartesian(mask: &PolarMask, h: usize) -> Result<CartesianMask> {
    require_full_turn(mask.pixels.nrows(), mask.r())?;
    let geom = &mask.geom;
    let r = mask.r();
    let pixels = Array2::from_shape_fn((h, h), |(row, col)| {
        match cartesian_pixel_to_polar_pos(geom, row, col) {
            None => 0,
            Some((i, j)) => mask.pixels[[i.round() as usize % r, j.round() as usize]],
        }
    });
    CartesianMask::new(pixels, geom.mm_per_pixel, geom.center)
}

/// Bilinear sample with circular row wrap and clamped columns.
fn sample_bilinear_wrapped<S: Scalar>(grid: &Array2<S>, row: f64, col: f64, r: usize) -> S {
    let i0 = row.floor() as usize % r;
    let i1 = (i0 + 1) % r;
    let j0 = col.floor() as usize;
    let j1 = (j0 + 1).min(r - 1);
    let fi = S::from_f64(row - row.floor());
    let fj = S::from_f64(col - col.floor());
    let one = S::one();
    grid[[i0, j0]] * (one - fi) * (one - fj)
        + grid[[i0, j1]] * (one - fi) * fj
        + grid[[i1, j0]] * fi * (one - fj)
        + grid[[i1, j1]] * fi * fj
}

fn require_full_turn(n_rows: usize, r: usize) -> Result<()> {
    if n_rows != r {
        return Err(Error::ShapeMismatch {
            expected: format!("{r} rows (one full turn)"),
            got: format!("{n_rows}"),
        });
    }
    Ok(())
}

/// Bilinear resize of a square frame to a new side length. The physical
/// calibration and center position are rescaled so the frame keeps describing
/// the same field of view.
pub fn resize_frame<S: Scalar>(frame: &CartesianFrame<S>, side: usize) -> Result<CartesianFrame<S>> {
    check_r(side)?;
    let scale = frame.side() as f64 / side as f64;
    let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
        sample_bilinear(
            &frame.pixels,
            (i as f64 + 0.5) * scale - 0.5,
            (j as f64 + 0.5) * scale - 0.5,
        )
    });
    CartesianFrame::new(
        pixels,
        frame.mm_per_pixel * scale,
        (
            (frame.center.0 + 0.5) / scale - 0.5,
            (frame.center.1 + 0.5) / scale - 0.5,
        ),
    )
}

/// Nearest-neighbor resize of a square mask, keeping values binary.
pub fn resize_mask(mask: &CartesianMask, side: usize) -> Result<CartesianMask> {
    check_r(side)?;
    let scale = mask.side() as f64 / side as f64;
    let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
        sample_nearest_u8(
            &mask.pixels,
            (i as f64 + 0.5) * scale - 0.5,
            (j as f64 + 0.5) * scale - 0.5,
        )
    });
    CartesianMask::new(
        pixels,
        mask.mm_per_pixel * scale,
        (
            (mask.center.0 + 0.5) / scale - 0.5,
            (mask.center.1 + 0.5) / scale - 0.5,
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn disk_mask(side: usize, radius: f64) -> CartesianMask {
        let c = (side as f64 - 1.0) / 2.0;
        let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
            let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
            u8::from(d <= radius)
        });
        CartesianMask::new(pixels, 70.0 / side as f64, (c, c)).unwrap()
    }

    /// A centered disk becomes angle-independent columns: every polar row is
    /// a run of ones followed by zeros, with the same run length everywhere.
    #[test]
    fn centered_disk_maps_to_constant_depth() {
        let mask = disk_mask(256, 50.0);
        let polar = cartesian_mask_to_polar(&mask, 256).unwrap();
        let first: Vec<u8> = polar.pixels.row(0).to_vec();
        let boundary = first.iter().filter(|&&v| v == 1).count();
        // 50 px at 0.5 px/bin puts the edge near column 100.
        assert!((boundary as i64 - 100).abs() <= 1, "depth {boundary}");
        for i in 0..polar.r() {
            let row = polar.pixels.row(i);
            let ones = row.iter().filter(|&&v| v == 1).count();
            assert!((ones as i64 - boundary as i64).abs() <= 1, "row {i}: {ones}");
            // Prefix-of-ones shape: nothing set past the first zero.
            assert!(row.iter().take(ones).all(|&v| v == 1));
            assert!(row.iter().skip(ones + 1).all(|&v| v == 0));
        }
    }

    /// A radially symmetric smooth image gives near-identical polar rows.
    #[test]
    fn radial_image_rows_agree() {
        let side = 128;
        let c = (side as f64 - 1.0) / 2.0;
        let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            // Wide Gaussian: smooth enough that bilinear error stays tiny.
            (-d2 / 3200.0).exp()
        });
        let frame = CartesianFrame::new(pixels, 0.27, (c, c)).unwrap();
        let polar = cartesian_to_polar(&frame, 64, Interp::Bilinear).unwrap();
        for j in 0..64 {
            let col = polar.pixels.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(var < 1e-6, "column {j} variance {var}");
        }
    }

    /// An all-ones polar mask maps back to a filled disk of radius `r_max_px`.
    #[test]
    fn full_polar_mask_becomes_disk() {
        let geom = PolarGeom {
            rows_per_turn: 128,
            r_max_px: 32.0,
            theta0: 0.0,
            center: (31.5, 31.5),
            mm_per_pixel: 0.27,
        };
        let mask = PolarMask::new(Array2::ones((128, 128)), geom).unwrap();
        let cart = polar_mask_to_cartesian(&mask, 64).unwrap();
        for ((i, j), &v) in cart.pixels.indexed_iter() {
            let d = ((i as f64 - 31.5).powi(2) + (j as f64 - 31.5).powi(2)).sqrt();
            if d <= 31.0 {
                assert_eq!(v, 1, "inside at ({i},{j}) d={d:.2}");
            } else if d > 32.0 {
                assert_eq!(v, 0, "outside at ({i},{j}) d={d:.2}");
            }
        }
    }

    /// Round trip of a centered disk keeps the boundary within a pixel.
    #[test]
    fn disk_round_trip_dice() {
        let mask = disk_mask(256, 50.0);
        let polar = cartesian_mask_to_polar(&mask, 256).unwrap();
        let back = polar_mask_to_cartesian(&polar, 256).unwrap();
        let inter: usize = mask
            .pixels
            .iter()
            .zip(back.pixels.iter())
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count();
        let dice = 2.0 * inter as f64 / (mask.area() + back.area()) as f64;
        assert!(dice > 0.99, "dice {dice}");
    }

    #[test]
    fn zero_resolution_rejected() {
        let mask = disk_mask(32, 10.0);
        assert!(cartesian_mask_to_polar(&mask, 0).is_err());
    }

    /// Angle convention: theta = 0 points along +row, pi/2 along +col.
    #[test]
    fn angle_convention_row_then_col() {
        let mut pixels = Array2::<f64>::zeros((65, 65));
        // Bright spot below the center (+row direction).
        pixels[[52, 32]] = 1.0;
        let frame = CartesianFrame::new(pixels, 0.27, (32.0, 32.0)).unwrap();
        let polar = cartesian_to_polar(&frame, 64, Interp::Nearest).unwrap();
        let row_sums: Vec<f64> = (0..64).map(|i| polar.pixels.row(i).sum()).collect();
        let hot = row_sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(hot, 0, "spot on +row axis should land in row 0");

        let mut pixels = Array2::<f64>::zeros((65, 65));
        // Bright spot to the right of the center (+col direction).
        pixels[[32, 52]] = 1.0;
        let frame = CartesianFrame::new(pixels, 0.27, (32.0, 32.0)).unwrap();
        let polar = cartesian_to_polar(&frame, 64, Interp::Nearest).unwrap();
        let row_sums: Vec<f64> = (0..64).map(|i| polar.pixels.row(i).sum()).collect();
        let hot = row_sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(hot, 16, "spot on +col axis should land a quarter turn in");
    }

    #[test]
    fn resize_halves_disk_area_and_keeps_it_centered() {
        let mask = disk_mask(256, 60.0);
        let small = resize_mask(&mask, 128).unwrap();
        let area: f64 = small.pixels.iter().map(|&v| v as f64).sum();
        let expect = std::f64::consts::PI * 30.0 * 30.0;
        assert!(
            (area - expect).abs() / expect < 0.03,
            "area {area} vs {expect}"
        );
        // Physical extent is unchanged: px size doubles, center halves.
        assert!((small.mm_per_pixel - 2.0 * mask.mm_per_pixel).abs() < 1e-12);
        assert!((small.center.0 - 63.5).abs() < 1e-9);

        let (mut ri, mut ci, mut n) = (0.0, 0.0, 0.0);
        for ((i, j), &v) in small.pixels.indexed_iter() {
            if v == 1 {
                ri += i as f64;
                ci += j as f64;
                n += 1.0;
            }
        }
        assert!((ri / n - 63.5).abs() < 0.5 && (ci / n - 63.5).abs() < 0.5);
    }

    #[test]
    fn resize_frame_at_same_side_is_identity() {
        let side = 32;
        let c = (side as f64 - 1.0) / 2.0;
        let pixels = Array2::from_shape_fn((side, side), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 / 11.0
        });
        let frame = CartesianFrame::new(pixels.clone(), 0.27, (c, c)).unwrap();
        let same = resize_frame(&frame, side).unwrap();
        for (a, b) in same.pixels.iter().zip(pixels.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
