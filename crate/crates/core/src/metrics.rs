//! PSNR, global phase alignment and Fourier ring correlation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::cfft2_centered;
use crate::field::ComplexField;
use crate::simulate::wrap_angle;

/// PSNR above this is reported as `+inf`; double precision cannot resolve
/// residuals that small relative to the peak.
pub const PSNR_CEILING_DB: f64 = 300.0;

pub fn psnr(image: &[f64], reference: &[f64], max_value: f64) -> Result<f64> {
    if image.len() != reference.len() || image.is_empty() {
        return Err(Error::shape(format!(
            "psnr inputs have {} and {} pixels",
            image.len(),
            reference.len()
        )));
    }
    if !(max_value > 0.0) {
        return Err(Error::Invalid(format!("psnr max value must be positive, got {max_value}")));
    }
    let mse = image.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / image.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let db = 10.0 * (max_value * max_value / mse).log10();
    Ok(if db > PSNR_CEILING_DB { f64::INFINITY } else { db })
}

/// Phase PSNR on wrapped residuals with peak `2 pi`.
pub fn phase_psnr(phase: &[f64], reference: &[f64]) -> Result<f64> {
    let residual: Vec<f64> = phase.iter().zip(reference).map(|(a, b)| wrap_angle(a - b)).collect();
    psnr(&residual, &vec![0.0; residual.len()], 2.0 * PI)
}

fn wrapped_cost(delta: &[f64], theta: f64) -> f64 {
    delta.iter().map(|d| wrap_angle(d - theta).powi(2)).sum()
}

pub const PHASE_SCAN_ANGLES: usize = 4096;

/// Global phase `theta` minimizing `sum wrap(arg O - arg(O_hat e^{i theta}))^2`,
/// and the rotated reconstruction.
pub fn align_global_phase(recon: &ComplexField, truth: &ComplexField) -> Result<(f64, ComplexField)> {
    if recon.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "cannot align {:?} against {:?}",
            recon.shape(),
            truth.shape()
        )));
    }
    if recon.max_amplitude() == 0.0 || truth.max_amplitude() == 0.0 {
        return Err(Error::Invalid("cannot align an all-zero field".into()));
    }
    let delta: Vec<f64> = truth
        .data()
        .iter()
        .zip(recon.data())
        .map(|(t, r)| t.arg() - r.arg())
        .collect();
    let step = 2.0 * PI / PHASE_SCAN_ANGLES as f64;
    let (mut best, mut best_cost) = (-PI, f64::INFINITY);
    for i in 0..PHASE_SCAN_ANGLES {
        let th = -PI + step * i as f64;
        let c = wrapped_cost(&delta, th);
        if c < best_cost {
            best = th;
            best_cost = c;
        }
    }
    // golden-section refinement inside the winning bracket
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best - step, best + step);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (wrapped_cost(&delta, x1), wrapped_cost(&delta, x2));
    while b - a > 1e-6 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = wrapped_cost(&delta, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = wrapped_cost(&delta, x2);
        }
    }
    let mut theta = 0.5 * (a + b);
    // Away from wrap points the cost is quadratic with a closed-form minimum.
    let polish = theta + delta.iter().map(|d| wrap_angle(d - theta)).sum::<f64>() / delta.len() as f64;
    if wrapped_cost(&delta, polish) <= wrapped_cost(&delta, theta) {
        theta = polish;
    }
    let theta = wrap_angle(theta);
    Ok((theta, recon.rotate_phase(theta)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrcCurve {
    /// Cycles per pixel; the last ring sits at Nyquist 0.5.
    pub ring_frequencies: Vec<f64>,
    pub correlations: Vec<f64>,
    pub ring_counts: Vec<usize>,
    /// Imaginary part of the normalized ring cross term.
    pub imaginary: Vec<f64>,
}

impl FrcCurve {
    pub fn thresholds(&self) -> Vec<f64> {
        self.ring_counts.iter().map(|&n| half_bit_threshold(n)).collect()
    }

    /// CSV rows `ring_frequency,correlation,threshold,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ring_frequency,correlation,threshold,n\n");
        for (i, t) in self.thresholds().iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.ring_frequencies[i], self.correlations[i], t, self.ring_counts[i]
            );
        }
        s
    }
}

/// Integer-radius rings around the centered zero frequency, radii `0..=N/2`.
pub fn frc(a: &ComplexField, b: &ComplexField) -> Result<FrcCurve> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("frc inputs {:?} and {:?}", a.shape(), b.shape())));
    }
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::shape(format!("frc needs square images, got {rows}x{cols}")));
    }
    let n = rows;
    let fa = cfft2_centered(a)?;
    let fb = cfft2_centered(b)?;
    let rings = n / 2 + 1;
    let mut cross = vec![Complex64::new(0.0, 0.0); rings];
    let mut ea = vec![0.0; rings];
    let mut eb = vec![0.0; rings];
    let mut counts = vec![0usize; rings];
    let c = (n / 2) as f64;
    for r in 0..n {
        for col in 0..n {
            let k = (r as f64 - c).hypot(col as f64 - c).round() as usize;
            if k >= rings {
                continue;
            }
            let (x, y) = (fa.get(r, col), fb.get(r, col));
            cross[k] += x * y.conj();
            ea[k] += x.norm_sqr();
            eb[k] += y.norm_sqr();
            counts[k] += 1;
        }
    }
    let mut correlations = Vec::with_capacity(rings);
    let mut imaginary = Vec::with_capacity(rings);
    for k in 0..rings {
        let d = (ea[k] * eb[k]).sqrt();
        if d > 0.0 {
            correlations.push((cross[k].re / d).clamp(-1.0, 1.0));
            imaginary.push(cross[k].im / d);
        } else {
            correlations.push(0.0);
            imaginary.push(0.0);
        }
    }
    Ok(FrcCurve {
        ring_frequencies: (0..rings).map(|k| k as f64 / n as f64).collect(),
        correlations,
        ring_counts: counts,
        imaginary,
    })
}

pub fn half_bit_threshold(n: usize) -> f64 {
    let s = (n.max(1) as f64).sqrt();
    (0.2071 + 1.9102 / s) / (1.2071 + 0.9102 / s)
}

pub const NYQUIST: f64 = 0.5;

/// First frequency where the curve drops below the half-bit threshold,
/// interpolated between rings; Nyquist if it never does.
pub fn half_bit_resolution(curve: &FrcCurve) -> Result<f64> {
    if curve.correlations.is_empty() {
        return Err(Error::Invalid("empty FRC curve".into()));
    }
    let f = &curve.ring_frequencies;
    let d: Vec<f64> = curve
        .correlations
        .iter()
        .zip(curve.thresholds())
        .map(|(c, t)| c - t)
        .collect();
    for i in 0..d.len() {
        if d[i] < 0.0 {
            if i == 0 {
                return Ok(f[0]);
            }
            return Ok(f[i - 1] + (f[i] - f[i - 1]) * d[i - 1] / (d[i - 1] - d[i]));
        }
    }
    Ok(NYQUIST)
}

/// Interior window `[m, rows - m) x [m, cols - m)`.
pub fn eval_region(f: &ComplexField, margin: usize) -> Result<ComplexField> {
    let (rows, cols) = f.shape();
    if 2 * margin >= rows || 2 * margin >= cols {
        return Err(Error::InvalidConfig(format!(
            "evaluation margin {margin} leaves nothing of {rows}x{cols}"
        )));
    }
    f.crop(margin, margin, rows - 2 * margin, cols - 2 * margin)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldScores {
    pub theta: f64,
    pub amplitude_psnr: f64,
    pub phase_psnr: f64,
}

/// Aligns the global phase, then scores amplitude (peak = truth max) and
/// wrapped phase (peak = 2 pi).
pub fn score_field(recon: &ComplexField, truth: &ComplexField) -> Result<FieldScores> {
    let (theta, aligned) = align_global_phase(recon, truth)?;
    let peak = truth.max_amplitude();
    Ok(FieldScores {
        theta,
        amplitude_psnr: psnr(&aligned.amplitude(), &truth.amplitude(), peak)?,
        phase_psnr: phase_psnr(&aligned.phase(), &truth.phase())?,
    })
}

pub type MetricReport = BTreeMap<String, f64>;

pub fn evaluate(
    object: &ComplexField,
    probe: &ComplexField,
    truth_object: &ComplexField,
    truth_probe: &ComplexField,
    margin: usize,
) -> Result<MetricReport> {
    if object.shape() != truth_object.shape() || probe.shape() != truth_probe.shape() {
        return Err(Error::shape(format!(
            "reconstruction {:?}/{:?} vs truth {:?}/{:?}",
            object.shape(),
            probe.shape(),
            truth_object.shape(),
            truth_probe.shape()
        )));
    }
    let o = score_field(&eval_region(object, margin)?, &eval_region(truth_object, margin)?)?;
    let p = score_field(probe, truth_probe)?;
    let mut r = MetricReport::new();
    r.insert("object_amplitude_psnr_db".into(), o.amplitude_psnr);
    r.insert("object_phase_psnr_db".into(), o.phase_psnr);
    r.insert("object_phase_offset_rad".into(), o.theta);
    r.insert("probe_amplitude_psnr_db".into(), p.amplitude_psnr);
    r.insert("probe_phase_psnr_db".into(), p.phase_psnr);
    r.insert("probe_phase_offset_rad".into(), p.theta);
    r.insert("eval_margin_px".into(), margin as f64);
    Ok(r)
}

/// FRC between two independent reconstructions over the evaluation region,
/// after aligning the second to the first.
pub fn frc_between(a: &ComplexField, b: &ComplexField, margin: usize) -> Result<(FrcCurve, f64)> {
    let a = eval_region(a, margin)?;
    let (_, b) = align_global_phase(&eval_region(b, margin)?, &a)?;
    let curve = frc(&a, &b)?;
    let res = half_bit_resolution(&curve)?;
    Ok((curve, res))
}

/// `key = value` lines in key order.
pub fn format_report(r: &MetricReport) -> String {
    let mut s = String::new();
    for (k, v) in r {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::Rng as _;

    fn random_field(n: usize, seed: u64) -> ComplexField {
        let mut rng = Rng::stream(seed, "field");
        ComplexField::from_fn(n, n, |_, _| Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(-3.0..3.0)))
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.1, 0.2], &[0.1, 0.2], 1.0).unwrap(), f64::INFINITY);
        assert!((psnr(&[0.1], &[0.0], 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(psnr(&[0.1], &[0.0, 1.0], 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn alignment_recovers_gauge() {
        let o = random_field(16, 1);
        let (t, a) = align_global_phase(&o.rotate_phase(-0.7), &o).unwrap();
        assert!((t - 0.7).abs() < 1e-5, "{t}");
        assert!(a.data().iter().zip(o.data()).all(|(x, y)| (x - y).norm() < 1e-9));
        let (t, _) = align_global_phase(&o, &o).unwrap();
        assert!(t.abs() < 1e-5);
        assert!(align_global_phase(&ComplexField::zeros(16, 16), &o).is_err());
    }

    #[test]
    fn frc_self_and_scale() {
        let a = random_field(32, 2);
        let c = frc(&a, &a).unwrap();
        assert!(c.correlations.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(half_bit_resolution(&c).unwrap(), NYQUIST);
        let b = a.scale(Complex64::new(3.5, 0.0));
        assert!(frc(&a, &b).unwrap().correlations.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(c.ring_frequencies.last(), Some(&0.5));
        assert_eq!(c.ring_counts[0], 1);
    }

    #[test]
    fn zero_curve_crosses_first_ring() {
        let c = FrcCurve {
            ring_frequencies: vec![0.0, 0.1, 0.2],
            correlations: vec![0.0; 3],
            ring_counts: vec![1, 8, 16],
            imaginary: vec![0.0; 3],
        };
        assert_eq!(half_bit_resolution(&c).unwrap(), 0.0);
        assert!(half_bit_resolution(&FrcCurve {
            ring_frequencies: vec![],
            correlations: vec![],
            ring_counts: vec![],
            imaginary: vec![],
        })
        .is_err());
    }

    #[test]
    fn hand_interpolated_crossing() {
        // rings of 100 pixels: threshold (0.2071 + 0.19102) / (1.2071 + 0.09102)
        let t = half_bit_threshold(100);
        assert!((t - 0.398_12 / 1.298_12).abs() < 1e-12);
        let mut corr = vec![0.9; 16];
        corr[10] = t + 0.03;
        corr[11] = t - 0.01;
        let c = FrcCurve {
            ring_frequencies: (0..16).map(|k| k as f64 / 32.0).collect(),
            correlations: corr,
            ring_counts: vec![100; 16],
            imaginary: vec![0.0; 16],
        };
        // 0.03 / (0.03 + 0.01) = 0.75 of the way from ring 10 to 11
        let want = (10.0 + 0.75) / 32.0;
        assert!((half_bit_resolution(&c).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn evaluate_truth_is_infinite() {
        let o = random_field(24, 3);
        let p = random_field(16, 4);
        let r = evaluate(&o, &p, &o, &p, 4).unwrap();
        assert_eq!(r["object_amplitude_psnr_db"], f64::INFINITY);
        assert_eq!(r["object_phase_psnr_db"], f64::INFINITY);
        let r = evaluate(&o.rotate_phase(1.2), &p, &o, &p, 4).unwrap();
        assert_eq!(r["object_phase_psnr_db"], f64::INFINITY);
        assert!(format_report(&r).contains("object_phase_psnr_db = inf"));
        assert!(matches!(
            evaluate(&random_field(20, 1), &p, &o, &p, 4),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
