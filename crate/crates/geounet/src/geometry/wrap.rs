//! Angular wrap-padding and re-slicing.
//!
//! Polar rows are periodic: row `R` would be row 0 again. Padding prepends a
//! copy of the last `pad_rows` rows so convolutions see real context across
//! the angular seam instead of a zero border, and `theta0` shifts back to
//! keep every row's angle label unchanged. Slicing cuts a full turn back out
//! at a chosen offset. Both are pure index operations — composing them is a
//! bit-exact circular row rotation, never an interpolation.

use super::{PolarFrame, SoftContour};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{concatenate, Array1, Array2, Axis};

/// Prepends a copy of the last `pad_rows` rows. The output has
/// `n_rows + pad_rows` rows and `theta0` decreases by one pad's worth of
/// angle so row labels still line up.
pub fn wrap_pad<S: Scalar>(polar: &PolarFrame<S>, pad_rows: usize) -> Result<PolarFrame<S>> {
    let n = polar.n_rows();
    if pad_rows == 0 || pad_rows > n {
        return Err(Error::PadRowsOutOfRange { pad_rows, max: n });
    }
    let tail = polar.pixels.slice(ndarray::s![n - pad_rows.., ..]);
    let pixels = concatenate(Axis(0), &[tail, polar.pixels.view()])
        .expect("column counts match");
    let mut geom = polar.geom;
    geom.theta0 -= std::f64::consts::TAU * pad_rows as f64 / geom.rows_per_turn as f64;
    PolarFrame::new(pixels, geom)
}

/// Cuts rows `start_row .. start_row + len` out of a (typically padded)
/// frame, advancing `theta0` by the skipped angle.
pub fn slice_middle<S: Scalar>(
    polar: &PolarFrame<S>,
    start_row: usize,
    len: usize,
) -> Result<PolarFrame<S>> {
    let rows = polar.n_rows();
    if start_row + len > rows {
        return Err(Error::SliceOutOfBounds {
            start: start_row,
            len,
            rows,
        });
    }
    let pixels = polar
        .pixels
        .slice(ndarray::s![start_row..start_row + len, ..])
        .to_owned();
    let mut geom = polar.geom;
    geom.theta0 += std::f64::consts::TAU * start_row as f64 / geom.rows_per_turn as f64;
    PolarFrame::new(pixels, geom)
}

/// Circular row shift of any grid: output row `i` is input row
/// `(i + shift) mod rows`.
pub fn roll_grid_rows<T: Clone>(grid: &Array2<T>, shift: isize) -> Array2<T> {
    let rows = grid.nrows() as isize;
    Array2::from_shape_fn(grid.dim(), |(i, j)| {
        let src = (i as isize + shift).rem_euclid(rows) as usize;
        grid[[src, j]].clone()
    })
}

/// Circular row shift of a full-turn polar frame, with `theta0` advanced by
/// the shifted angle so the frame still describes the same physical scene.
pub fn roll_rows<S: Scalar>(polar: &PolarFrame<S>, shift: isize) -> Result<PolarFrame<S>> {
    let r = polar.r();
    if polar.n_rows() != r {
        return Err(Error::ShapeMismatch {
            expected: format!("{r} rows (one full turn)"),
            got: format!("{}", polar.n_rows()),
        });
    }
    let mut geom = polar.geom;
    geom.theta0 += std::f64::consts::TAU * shift as f64 / r as f64;
    PolarFrame::new(roll_grid_rows(&polar.pixels, shift), geom)
}

/// Circular shift of a per-angle contour vector, matching [`roll_rows`].
pub fn roll_contour<S: Scalar>(contour: &SoftContour<S>, shift: isize) -> SoftContour<S> {
    let n = contour.len() as isize;
    let depth = Array1::from_shape_fn(contour.len(), |i| {
        contour.depth[(i as isize + shift).rem_euclid(n) as usize]
    });
    SoftContour::new(depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PolarGeom;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_frame(r: usize, seed: u64) -> PolarFrame<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = Array2::from_shape_fn((r, r), |_| rng.random_range(0.0..1.0));
        let geom = PolarGeom {
            rows_per_turn: r,
            r_max_px: r as f64 / 2.0,
            theta0: 0.0,
            center: (63.5, 63.5),
            mm_per_pixel: 0.27,
        };
        PolarFrame::new(pixels, geom).unwrap()
    }

    #[test]
    fn pad_copies_tail_rows_to_front() {
        let frame = random_frame(256, 1);
        let padded = wrap_pad(&frame, 64).unwrap();
        assert_eq!(padded.n_rows(), 320);
        for i in 0..64 {
            assert_eq!(padded.pixels.row(i), frame.pixels.row(192 + i));
        }
        for i in 0..256 {
            assert_eq!(padded.pixels.row(64 + i), frame.pixels.row(i));
        }
        let expect_theta = -TAU * 64.0 / 256.0;
        assert!((padded.geom.theta0 - expect_theta).abs() < 1e-15);
    }

    #[test]
    fn pad_full_turn_stacks_input_on_itself() {
        let frame = random_frame(32, 2);
        let padded = wrap_pad(&frame, 32).unwrap();
        assert_eq!(padded.n_rows(), 64);
        for i in 0..32 {
            assert_eq!(padded.pixels.row(i), frame.pixels.row(i));
            assert_eq!(padded.pixels.row(32 + i), frame.pixels.row(i));
        }
    }

    #[test]
    fn pad_bounds_checked() {
        let frame = random_frame(16, 3);
        assert!(wrap_pad(&frame, 0).is_err());
        assert!(wrap_pad(&frame, 17).is_err());
    }

    #[test]
    fn slice_at_pad_offset_is_identity() {
        let frame = random_frame(64, 4);
        let padded = wrap_pad(&frame, 16).unwrap();
        let back = slice_middle(&padded, 16, 64).unwrap();
        assert_eq!(back.pixels, frame.pixels);
        assert!((back.geom.theta0 - frame.geom.theta0).abs() < 1e-15);
    }

    #[test]
    fn slice_out_of_bounds_rejected() {
        let frame = random_frame(16, 5);
        let padded = wrap_pad(&frame, 4).unwrap();
        assert!(slice_middle(&padded, 4, 16).is_ok());
        assert!(slice_middle(&padded, 5, 16).is_err());
    }

    /// Padding then slicing at any offset is exactly a circular row shift:
    /// sliced row i equals input row (i + start - pad) mod R, bit for bit.
    #[test]
    fn pad_slice_composition_is_row_rotation() {
        let r = 48;
        let frame = random_frame(r, 6);
        for (pad, start) in [(12, 4), (12, 12), (24, 0), (48, 30), (19, 7)] {
            let sliced = slice_middle(&wrap_pad(&frame, pad).unwrap(), start, r).unwrap();
            for i in 0..r {
                let src = (i + start + r - pad) % r;
                assert_eq!(
                    sliced.pixels.row(i),
                    frame.pixels.row(src),
                    "pad={pad} start={start} row={i}"
                );
            }
            // Rolling back by pad - start restores the original exactly.
            let rolled = roll_rows(&sliced, pad as isize - start as isize).unwrap();
            assert_eq!(rolled.pixels, frame.pixels);
            assert!(rolled.geom.theta0.abs() < 1e-12);
        }
    }

    #[test]
    fn roll_contour_matches_index_rule() {
        let contour = SoftContour::new(ndarray::array![0.0f64, 1.0, 2.0, 3.0, 4.0]);
        let rolled = roll_contour(&contour, 2);
        assert_eq!(rolled.depth.to_vec(), vec![2.0, 3.0, 4.0, 0.0, 1.0]);
        let rolled = roll_contour(&contour, -1);
        assert_eq!(rolled.depth.to_vec(), vec![4.0, 0.0, 1.0, 2.0, 3.0]);
    }

    proptest! {
        /// The rotation identity of `pad_slice_composition_is_row_rotation`
        /// holds for every legal (R, pad, start), and rolling back by
        /// `pad - start` always restores the input bit for bit.
        #[test]
        fn pad_slice_rotation_holds_for_all_legal_offsets(
            seed in prop::num::u64::ANY,
            r in 4usize..40,
            pad_sel in 0.0..1.0f64,
            start_sel in 0.0..1.0f64,
        ) {
            // Scale unit draws into legal offsets: pad in 1..=R and
            // start in 0..=pad (start + R must fit in R + pad rows).
            let pad = 1 + ((pad_sel * r as f64) as usize).min(r - 1);
            let start = ((start_sel * (pad + 1) as f64) as usize).min(pad);
            let frame = random_frame(r, seed);
            let sliced = slice_middle(&wrap_pad(&frame, pad).unwrap(), start, r).unwrap();
            for i in 0..r {
                let src = (i + start + r - pad) % r;
                prop_assert_eq!(sliced.pixels.row(i), frame.pixels.row(src));
            }
            let rolled = roll_rows(&sliced, pad as isize - start as isize).unwrap();
            prop_assert_eq!(&rolled.pixels, &frame.pixels);
            prop_assert!(rolled.geom.theta0.abs() < 1e-12);
        }
    }
}
