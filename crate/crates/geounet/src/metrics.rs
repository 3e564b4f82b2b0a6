//! Evaluation metrics: Cartesian Dice, lumen diameters from center-of-mass
//! rays, physical calibration, and the clinical threshold report.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{largest_component, CartesianMask};
use crate::phantom::Label;

/// Diameter-error thresholds reported by the clinical table, in mm.
pub const THRESHOLDS_MM: [f64; 3] = [0.25, 0.5, 0.75];

/// Step size for the sub-pixel ray march, in pixels.
const RAY_STEP_PX: f64 = 0.25;
/// Ray directions: every 5 degrees over a half turn (the other half is
/// covered by marching both ways).
const N_DIRECTIONS: usize = 36;

/// Major and minor lumen diameters of one mask, in mm.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiameterPair {
    pub major_mm: f64,
    pub minor_mm: f64,
}

/// Per-frame diameter comparison against ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct DiameterReport {
    pub major_mm: f64,
    pub minor_mm: f64,
    /// Absolute major-diameter error versus ground truth, mm.
    pub major_err_mm: f64,
    pub minor_err_mm: f64,
    pub label: Label,
}

/// Per-label aggregate statistics for the clinical table.
#[derive(Debug, Clone, Serialize)]
pub struct LabelStats {
    pub n_frames: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Fraction of frames whose absolute major-diameter error is within each
    /// of [`THRESHOLDS_MM`].
    pub major_frac: [f64; 3],
    pub minor_frac: [f64; 3],
    /// Whether this label's clinical accuracy targets are met (on both the
    /// major and minor diameters).
    pub targets_met: bool,
}

/// Clinical evaluation summary, split by anatomy label.
#[derive(Debug, Clone, Serialize)]
pub struct ClinicalTable {
    pub thresholds_mm: [f64; 3],
    pub n1: LabelStats,
    pub n2: LabelStats,
}

impl ClinicalTable {
    /// One CSV row per label with the layout of the published comparison:
    /// Dice mean/std then the major and minor threshold triplets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,n_frames,dice_mean,dice_std,\
             maj_within_0.25mm,maj_within_0.50mm,maj_within_0.75mm,\
             min_within_0.25mm,min_within_0.50mm,min_within_0.75mm,targets_met\n",
        );
        for (name, s) in [("N1", &self.n1), ("N2", &self.n2)] {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
                name,
                s.n_frames,
                s.dice_mean,
                s.dice_std,
                s.major_frac[0],
                s.major_frac[1],
                s.major_frac[2],
                s.minor_frac[0],
                s.minor_frac[1],
                s.minor_frac[2],
                s.targets_met
            ));
        }
        out
    }
}

/// Dice overlap of two equally sized Cartesian masks; two empty masks count
/// as a perfect match.
pub fn dice(pred: &CartesianMask, truth: &CartesianMask) -> Result<f64> {
    if pred.pixels.dim() != truth.pixels.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} mask", truth.pixels.dim()),
            got: format!("{:?}", pred.pixels.dim()),
        });
    }
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&a, &b) in pred.pixels.iter().zip(truth.pixels.iter()) {
        inter += u64::from(a & b);
        total += u64::from(a) + u64::from(b);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Physical calibration from the imaging field of view: mm per pixel side.
pub fn mm_calibration(frame_px: usize, fov_mm: f64) -> f64 {
    assert!(frame_px > 0 && fov_mm > 0.0, "calibration inputs must be positive");
    fov_mm / frame_px as f64
}

/// Major and minor lumen diameters: takes the largest connected component,
/// then passes rays through its center of mass at 5-degree increments,
/// marching outward both ways in quarter-pixel steps; each direction's chord
/// is the sum of the two reaches, where a reach includes the step that left
/// the mask. Membership along the ray is tested on the bilinearly
/// interpolated mask thresholded at 0.5, which tracks the underlying smooth
/// boundary to sub-pixel accuracy where a nearest-neighbor lookup would see
/// the full rasterization staircase.
pub fn diameters(mask: &CartesianMask, mm_per_pixel: f64) -> Result<DiameterPair> {
    let main = largest_component(mask);
    let (mut com_r, mut com_c, mut area) = (0.0f64, 0.0f64, 0.0f64);
    for ((i, j), &v) in main.pixels.indexed_iter() {
        if v == 1 {
            com_r += i as f64;
            com_c += j as f64;
            area += 1.0;
        }
    }
    if area == 0.0 {
        return Err(Error::EmptyMask);
    }
    com_r /= area;
    com_c /= area;

    let at = |i: f64, j: f64| -> f64 {
        if i < 0.0 || j < 0.0 {
            return 0.0;
        }
        let (i, j) = (i as usize, j as usize);
        if i < main.pixels.nrows() && j < main.pixels.ncols() {
            f64::from(main.pixels[[i, j]])
        } else {
            0.0
        }
    };
    let inside = |r: f64, c: f64| -> bool {
        let (i0, j0) = (r.floor(), c.floor());
        let (fr, fc) = (r - i0, c - j0);
        let v = at(i0, j0) * (1.0 - fr) * (1.0 - fc)
            + at(i0 + 1.0, j0) * fr * (1.0 - fc)
            + at(i0, j0 + 1.0) * (1.0 - fr) * fc
            + at(i0 + 1.0, j0 + 1.0) * fr * fc;
        v >= 0.5
    };
    let reach = |dr: f64, dc: f64| -> f64 {
        let mut t = 0.0;
        while inside(com_r + (t + RAY_STEP_PX) * dr, com_c + (t + RAY_STEP_PX) * dc) {
            t += RAY_STEP_PX;
        }
        t + RAY_STEP_PX
    };

    let mut major_px = f64::MIN;
    let mut minor_px = f64::MAX;
    for k in 0..N_DIRECTIONS {
        let theta = std::f64::consts::PI * k as f64 / N_DIRECTIONS as f64;
        let (dr, dc) = (theta.cos(), theta.sin());
        let chord = reach(dr, dc) + reach(-dr, -dc);
        major_px = major_px.max(chord);
        minor_px = minor_px.min(chord);
    }
    Ok(DiameterPair {
        major_mm: major_px * mm_per_pixel,
        minor_mm: minor_px * mm_per_pixel,
    })
}

impl DiameterReport {
    /// Suggested stent size: the mean of major and minor rounded to the
    /// 0.5 mm increments stents come in. Reported for convenience; it plays
    /// no part in the pass/fail threshold metrics.
    pub fn stent_mm(&self) -> f64 {
        ((self.major_mm + self.minor_mm) / 2.0 / 0.5).round() * 0.5
    }
}

/// [`diameters`] of a prediction together with its absolute errors against
/// the ground-truth mask.
pub fn diameter_report(
    pred: &CartesianMask,
    truth: &CartesianMask,
    label: Label,
    mm_per_pixel: f64,
) -> Result<DiameterReport> {
    let p = diameters(pred, mm_per_pixel)?;
    let t = diameters(truth, mm_per_pixel)?;
    Ok(DiameterReport {
        major_mm: p.major_mm,
        minor_mm: p.minor_mm,
        major_err_mm: (p.major_mm - t.major_mm).abs(),
        minor_err_mm: (p.minor_mm - t.minor_mm).abs(),
        label,
    })
}

/// Fraction of errors at or under each threshold.
fn pass_fractions(errors: &[f64], thresholds: &[f64; 3]) -> [f64; 3] {
    let n = errors.len().max(1) as f64;
    let mut frac = [0.0; 3];
    for (f, &t) in frac.iter_mut().zip(thresholds) {
        *f = errors.iter().filter(|&&e| e <= t).count() as f64 / n;
    }
    frac
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Near-circular anatomy targets: 50/90/95% of frames within
/// 0.25/0.5/0.75 mm.
fn n1_targets_met(frac: &[f64; 3]) -> bool {
    frac[0] >= 0.50 && frac[1] >= 0.90 && frac[2] >= 0.95
}

/// Eccentric anatomy targets: 50/70% of frames within 0.5/0.75 mm.
fn n2_targets_met(frac: &[f64; 3]) -> bool {
    frac[1] >= 0.50 && frac[2] >= 0.70
}

/// Builds the clinical table over an evaluation set of
/// `(prediction, ground truth, label)` triples. Both anatomy labels must be
/// represented, since the table reports each separately. An empty
/// *prediction* has no diameters and counts as missing every threshold; an
/// empty ground-truth mask is invalid and errors.
pub fn clinical_report(
    samples: &[(&CartesianMask, &CartesianMask, Label)],
    mm_per_pixel: f64,
) -> Result<ClinicalTable> {
    if samples.is_empty() {
        return Err(Error::Dataset("clinical report needs a non-empty evaluation set".into()));
    }
    let mut stats = Vec::new();
    for label in [Label::N1, Label::N2] {
        let subset: Vec<_> = samples.iter().filter(|(_, _, l)| *l == label).collect();
        if subset.is_empty() {
            return Err(Error::Dataset(format!(
                "clinical report needs {label} frames, none present"
            )));
        }
        let mut dices = Vec::new();
        let mut major_errs = Vec::new();
        let mut minor_errs = Vec::new();
        for (pred, truth, _) in &subset {
            dices.push(dice(pred, truth)?);
            let t = diameters(truth, mm_per_pixel)?;
            match diameters(pred, mm_per_pixel) {
                Ok(p) => {
                    major_errs.push((p.major_mm - t.major_mm).abs());
                    minor_errs.push((p.minor_mm - t.minor_mm).abs());
                }
                Err(Error::EmptyMask) => {
                    major_errs.push(f64::INFINITY);
                    minor_errs.push(f64::INFINITY);
                }
                Err(e) => return Err(e),
            }
        }
        let (dice_mean, dice_std) = mean_std(&dices);
        let major_frac = pass_fractions(&major_errs, &THRESHOLDS_MM);
        let minor_frac = pass_fractions(&minor_errs, &THRESHOLDS_MM);
        let met = match label {
            Label::N1 => n1_targets_met(&major_frac) && n1_targets_met(&minor_frac),
            Label::N2 => n2_targets_met(&major_frac) && n2_targets_met(&minor_frac),
        };
        stats.push(LabelStats {
            n_frames: subset.len(),
            dice_mean,
            dice_std,
            major_frac,
            minor_frac,
            targets_met: met,
        });
    }
    let n2 = stats.pop().expect("two labels");
    let n1 = stats.pop().expect("two labels");
    Ok(ClinicalTable {
        thresholds_mm: THRESHOLDS_MM,
        n1,
        n2,
    })
}

/// Per-frame diameter rows as CSV, one line per (id, report).
pub fn per_frame_csv(rows: &[(String, DiameterReport)]) -> String {
    let mut out =
        String::from("id,label,major_mm,minor_mm,major_err_mm,minor_err_mm,stent_mm\n");
    for (id, r) in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.2}\n",
            id,
            r.label,
            r.major_mm,
            r.minor_mm,
            r.major_err_mm,
            r.minor_err_mm,
            r.stent_mm()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn mask_from_fn(side: usize, f: impl Fn(f64, f64) -> bool) -> CartesianMask {
        let c = (side as f64 - 1.0) / 2.0;
        let pixels =
            Array2::from_shape_fn((side, side), |(i, j)| u8::from(f(i as f64 - c, j as f64 - c)));
        CartesianMask::new(pixels, 1.0, (c, c)).unwrap()
    }

    fn disk(side: usize, radius: f64) -> CartesianMask {
        mask_from_fn(side, |r, c| r.hypot(c) <= radius)
    }

    /// Ellipse with semi-axes (a, b), the a-axis rotated by `phi` from the
    /// row direction.
    fn ellipse(side: usize, a: f64, b: f64, phi: f64) -> CartesianMask {
        mask_from_fn(side, |r, c| {
            let x = r * phi.cos() + c * phi.sin();
            let y = -r * phi.sin() + c * phi.cos();
            (x / a).powi(2) + (y / b).powi(2) <= 1.0
        })
    }

    #[test]
    fn dice_reference_values() {
        let a = disk(128, 40.0);
        assert_relative_eq!(dice(&a, &a).unwrap(), 1.0);

        let left = mask_from_fn(128, |_, c| c < -10.0);
        let right = mask_from_fn(128, |_, c| c > 10.0);
        assert_relative_eq!(dice(&left, &right).unwrap(), 0.0);

        let empty = mask_from_fn(128, |_, _| false);
        assert_relative_eq!(dice(&empty, &empty).unwrap(), 1.0);

        // Nested disks of radius 50 and 25: analytic Dice 0.4.
        let outer = disk(128, 50.0);
        let inner = disk(128, 25.0);
        let d = dice(&inner, &outer).unwrap();
        assert!((d - 0.4).abs() < 0.004, "dice {d}");
    }

    #[test]
    fn dice_rejects_mismatched_shapes() {
        assert!(dice(&disk(64, 10.0), &disk(128, 10.0)).is_err());
    }

    #[test]
    fn disk_diameters_match_the_analytic_circle() {
        let mask = disk(256, 50.0);
        let d = diameters(&mask, 0.2734).unwrap();
        assert!((d.major_mm - 27.34).abs() < 0.15, "major {}", d.major_mm);
        assert!((d.minor_mm - 27.34).abs() < 0.15, "minor {}", d.minor_mm);
    }

    #[test]
    fn ellipse_diameters_match_the_axes() {
        let mask = ellipse(256, 60.0, 30.0, 0.0);
        let d = diameters(&mask, 1.0).unwrap();
        assert!((d.major_mm - 120.0).abs() < 2.0, "major {}", d.major_mm);
        assert!((d.minor_mm - 60.0).abs() < 2.0, "minor {}", d.minor_mm);
        assert!(d.major_mm >= d.minor_mm);
    }

    #[test]
    fn rotation_by_direction_multiples_changes_little() {
        let base = diameters(&ellipse(256, 60.0, 30.0, 0.0), 1.0).unwrap();
        for k in 0..36 {
            let phi = (5.0 * k as f64).to_radians();
            let d = diameters(&ellipse(256, 60.0, 30.0, phi), 1.0).unwrap();
            assert!(
                (d.major_mm - base.major_mm).abs() < 2.0,
                "major at {k}: {} vs {}",
                d.major_mm,
                base.major_mm
            );
            assert!(
                (d.minor_mm - base.minor_mm).abs() < 2.0,
                "minor at {k}: {} vs {}",
                d.minor_mm,
                base.minor_mm
            );
        }
    }

    #[test]
    fn diameters_are_translation_invariant() {
        let side = 256;
        let centered = diameters(&disk(side, 40.0), 1.0).unwrap();
        for (dr, dc) in [(30.0, 0.0), (0.0, -45.0), (25.0, 25.0)] {
            let shifted = mask_from_fn(side, |r, c| (r - dr).hypot(c - dc) <= 40.0);
            let d = diameters(&shifted, 1.0).unwrap();
            assert!((d.major_mm - centered.major_mm).abs() < 0.5);
            assert!((d.minor_mm - centered.minor_mm).abs() < 0.5);
        }
    }

    #[test]
    fn empty_mask_has_no_diameters() {
        let empty = mask_from_fn(64, |_, _| false);
        assert!(matches!(diameters(&empty, 1.0), Err(Error::EmptyMask)));
    }

    #[test]
    fn diameters_use_the_largest_component_only() {
        // A big disk plus a far-away speck: the speck must not shrink minor.
        let side = 256;
        let mask = mask_from_fn(side, |r, c| r.hypot(c) <= 40.0 || (r - 100.0).hypot(c - 100.0) <= 2.0);
        let d = diameters(&mask, 1.0).unwrap();
        assert!((d.major_mm - 80.0).abs() < 2.0);
        assert!((d.minor_mm - 80.0).abs() < 2.0);
    }

    #[test]
    fn pass_fraction_counting() {
        let frac = pass_fractions(&[0.1, 0.3, 0.6], &THRESHOLDS_MM);
        assert_relative_eq!(frac[0], 1.0 / 3.0);
        assert_relative_eq!(frac[1], 2.0 / 3.0);
        assert_relative_eq!(frac[2], 1.0);
        // Monotone in threshold by construction.
        assert!(frac[0] <= frac[1] && frac[1] <= frac[2]);
    }

    #[test]
    fn mm_calibration_values() {
        assert_relative_eq!(mm_calibration(256, 70.0), 0.2734375);
        assert_relative_eq!(mm_calibration(512, 70.0), 0.13671875);
        assert_relative_eq!(
            mm_calibration(512, 70.0),
            mm_calibration(256, 70.0) / 2.0
        );
    }

    #[test]
    fn perfect_predictions_meet_every_target() {
        let n1 = disk(128, 30.0);
        let n2 = ellipse(128, 40.0, 20.0, 0.3);
        let samples = vec![
            (&n1, &n1, Label::N1),
            (&n1, &n1, Label::N1),
            (&n2, &n2, Label::N2),
        ];
        let table = clinical_report(&samples, 0.2734).unwrap();
        for stats in [&table.n1, &table.n2] {
            assert_relative_eq!(stats.dice_mean, 1.0);
            assert_relative_eq!(stats.dice_std, 0.0);
            assert_eq!(stats.major_frac, [1.0; 3]);
            assert_eq!(stats.minor_frac, [1.0; 3]);
            assert!(stats.targets_met);
        }
        assert_eq!(table.n1.n_frames, 2);
        assert_eq!(table.n2.n_frames, 1);
    }

    #[test]
    fn empty_predictions_miss_every_threshold() {
        let truth = disk(128, 30.0);
        let empty = mask_from_fn(128, |_, _| false);
        let samples = vec![
            (&empty, &truth, Label::N1),
            (&truth, &truth, Label::N1),
            (&truth, &truth, Label::N2),
        ];
        let table = clinical_report(&samples, 0.2734).unwrap();
        assert_eq!(table.n1.major_frac, [0.5; 3]);
        assert!(!table.n1.targets_met);
        assert_relative_eq!(table.n1.dice_mean, 0.5);
    }

    #[test]
    fn clinical_report_requires_both_labels() {
        let m = disk(64, 20.0);
        let only_n1 = vec![(&m, &m, Label::N1)];
        assert!(clinical_report(&only_n1, 0.27).is_err());
        assert!(clinical_report(&[], 0.27).is_err());
    }

    #[test]
    fn clinical_csv_mirrors_the_table_layout() {
        let n1 = disk(128, 30.0);
        let n2 = disk(128, 25.0);
        let samples = vec![(&n1, &n1, Label::N1), (&n2, &n2, Label::N2)];
        let table = clinical_report(&samples, 0.2734).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 3, "header plus one row per label");
        assert_eq!(lines[0].split(',').count(), 11);
        assert!(lines[1].starts_with("N1,"));
        assert!(lines[2].starts_with("N2,"));

        let json = serde_json::to_string(&table).unwrap();
        assert!(json.contains("\"thresholds_mm\""));
    }

    #[test]
    fn per_frame_rows_render_one_line_each() {
        let rep = DiameterReport {
            major_mm: 10.0,
            minor_mm: 8.0,
            major_err_mm: 0.5,
            minor_err_mm: 0.25,
            label: Label::N2,
        };
        assert_relative_eq!(rep.stent_mm(), 9.0);
        let csv = per_frame_csv(&[("test-0001".into(), rep)]);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("test-0001,N2,10.0000,8.0000"));
        assert!(lines[1].ends_with(",9.00"));
    }
}
