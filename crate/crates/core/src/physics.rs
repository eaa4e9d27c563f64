//! Raster scan geometry and the far-field intensity model
//! `I_j = |F{P * O(r + r_j)}|^2`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Graph, Value, Var};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::networks::from_field;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanGrid {
    /// Top-left corners `(row, col)` of each probe window, row-major raster.
    pub positions: Vec<(usize, usize)>,
    pub step: (usize, usize),
    pub probe_shape: (usize, usize),
    pub object_shape: (usize, usize),
}

fn axis_positions(n: usize, p: usize, step: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut v = 0;
    while v + p <= n {
        out.push(v);
        v += step;
    }
    let last = *out.last().expect("probe fits");
    if last + p < n {
        out.push(n - p);
    }
    out
}

/// Raster positions `0, step, 2 step, ...` with the last row and column
/// clamped to touch the far edge.
pub fn make_scan_grid(
    object_shape: (usize, usize),
    probe_shape: (usize, usize),
    step: (usize, usize),
) -> Result<ScanGrid> {
    let (rows, cols) = object_shape;
    let (h, w) = probe_shape;
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig("probe shape must be positive".into()));
    }
    if h > rows || w > cols {
        return Err(Error::InvalidConfig(format!(
            "probe {h}x{w} does not fit inside object {rows}x{cols}"
        )));
    }
    if step.0 == 0 || step.1 == 0 {
        return Err(Error::InvalidConfig("scan step must be at least one pixel".into()));
    }
    let ys = axis_positions(rows, h, step.0);
    let xs = axis_positions(cols, w, step.1);
    let positions = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    Ok(ScanGrid {
        positions,
        step,
        probe_shape,
        object_shape,
    })
}

impl ScanGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.probe_shape;
        let (rows, cols) = self.object_shape;
        let mut seen = std::collections::HashSet::new();
        for &(r, c) in &self.positions {
            if r + h > rows || c + w > cols {
                return Err(Error::OutOfBounds { row: r, col: c, h, w, rows, cols });
            }
            if !seen.insert((r, c)) {
                return Err(Error::Invalid(format!("duplicate scan position ({r}, {c})")));
            }
        }
        Ok(())
    }

    pub fn shared_positions(&self) -> Arc<Vec<(usize, usize)>> {
        Arc::new(self.positions.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<(usize, usize)> {
        indices.iter().map(|&i| self.positions[i]).collect()
    }
}

/// `(1 - step / diameter) * 100`; negative when positions do not overlap.
pub fn overlap_ratio(step_pixels: f64, probe_diameter_pixels: f64) -> f64 {
    (1.0 - step_pixels / probe_diameter_pixels) * 100.0
}

/// Fraction of a probe window shared with its raster neighbour.
pub fn window_overlap_fraction(step_pixels: f64, window_pixels: f64) -> f64 {
    (1.0 - step_pixels / window_pixels).max(0.0)
}

fn half_max_width(profile: &[f64]) -> Result<f64> {
    let (peak, &top) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::DegenerateProbe)?;
    let half = 0.5 * top;
    let mut l = peak;
    while profile[l] >= half {
        if l == 0 {
            return Err(Error::UnboundedProbe);
        }
        l -= 1;
    }
    // crossing lies between l (below) and l + 1 (at or above)
    let left = l as f64 + (half - profile[l]) / (profile[l + 1] - profile[l]);
    let mut r = peak;
    while profile[r] >= half {
        if r + 1 == profile.len() {
            return Err(Error::UnboundedProbe);
        }
        r += 1;
    }
    let right = r as f64 - (half - profile[r]) / (profile[r - 1] - profile[r]);
    Ok(right - left)
}

/// Full width at half maximum of `|P|^2` along the row and column through
/// the intensity centroid, averaged.
pub fn probe_fwhm_diameter(probe: &ComplexField) -> Result<f64> {
    let (rows, cols) = probe.shape();
    let inten = probe.intensity();
    let total: f64 = inten.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateProbe);
    }
    let (mut cy, mut cx) = (0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            let v = inten[r * cols + c];
            cy += r as f64 * v;
            cx += c as f64 * v;
        }
    }
    let cy = ((cy / total).round() as usize).min(rows - 1);
    let cx = ((cx / total).round() as usize).min(cols - 1);
    let row: Vec<f64> = inten[cy * cols..(cy + 1) * cols].to_vec();
    let col: Vec<f64> = (0..rows).map(|r| inten[r * cols + cx]).collect();
    Ok(0.5 * (half_max_width(&row)? + half_max_width(&col)?))
}

pub fn extract_patch(object: &ComplexField, position: (usize, usize), probe_shape: (usize, usize)) -> Result<ComplexField> {
    object.crop(position.0, position.1, probe_shape.0, probe_shape.1)
}

/// `[J, h, w]` predicted intensities for the windows at `positions`.
pub fn forward_intensity<G: Graph>(
    g: &mut G,
    object: Var,
    probe: Var,
    positions: Arc<Vec<(usize, usize)>>,
) -> Result<Var> {
    let ps = g.value(probe).shape().to_vec();
    if ps.len() != 2 {
        return Err(Error::shape(format!("probe must be 2-D, got {ps:?}")));
    }
    let patches = g.crop(object, positions, ps[0], ps[1])?;
    let exit = g.mul(patches, probe)?;
    let far = g.fft2c(exit)?;
    g.abs2(far)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffractionSet {
    /// `J * h * w` intensities, frame-major.
    pub frames: Vec<f64>,
    pub grid: ScanGrid,
    pub noise: Option<NoiseRecord>,
}

impl DiffractionSet {
    pub fn new(frames: Vec<f64>, grid: ScanGrid, noise: Option<NoiseRecord>) -> Result<Self> {
        let set = Self { frames, grid, noise };
        set.validate()?;
        Ok(set)
    }

    pub fn frame_len(&self) -> usize {
        self.grid.probe_shape.0 * self.grid.probe_shape.1
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn frame(&self, j: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames[j * n..(j + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.grid.len() * self.frame_len() {
            return Err(Error::shape(format!(
                "{} intensities for {} frames of {}x{}",
                self.frames.len(),
                self.grid.len(),
                self.grid.probe_shape.0,
                self.grid.probe_shape.1
            )));
        }
        if let Some(&bad) = self.frames.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(if bad.is_finite() {
                Error::NegativeIntensity(bad)
            } else {
                Error::NonFiniteField
            });
        }
        self.grid.validate()
    }
}

/// Noise-free frames `|cfft2_centered(P * patch_j)|^2`.
pub fn simulate_intensity(object: &ComplexField, probe: &ComplexField, grid: &ScanGrid) -> Result<DiffractionSet> {
    if probe.shape() != grid.probe_shape {
        return Err(Error::shape(format!(
            "probe {:?} does not match scan grid probe {:?}",
            probe.shape(),
            grid.probe_shape
        )));
    }
    if object.shape() != grid.object_shape {
        return Err(Error::shape(format!(
            "object {:?} does not match scan grid object {:?}",
            object.shape(),
            grid.object_shape
        )));
    }
    object.ensure_finite()?;
    probe.ensure_finite()?;
    let mut g = Eager::new();
    let o = g.constant(from_field(object));
    let p = g.constant(from_field(probe));
    let y = forward_intensity(&mut g, o, p, grid.shared_positions())?;
    let frames = match g.take(y) {
        Value::Real(t) => t.data,
        Value::Complex(_) => unreachable!("abs2 is real"),
    };
    DiffractionSet::new(frames, grid.clone(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn exact_tiling_and_clamp() {
        let g = make_scan_grid((8, 8), (4, 4), (4, 4)).unwrap();
        assert_eq!(g.positions, vec![(0, 0), (0, 4), (4, 0), (4, 4)]);
        let g = make_scan_grid((9, 9), (4, 4), (4, 4)).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.positions[..3], [(0, 0), (0, 4), (0, 5)]);
        assert_eq!(g.positions[8], (5, 5));
        assert!(make_scan_grid((4, 4), (5, 4), (1, 1)).is_err());
    }

    #[test]
    fn reference_overlaps() {
        assert!((overlap_ratio(0.6, 1.0) - 40.0).abs() < 1e-12);
        assert!((overlap_ratio(6.4, 1.0) + 540.0).abs() < 1e-12);
        assert!((overlap_ratio(9.0, 1.0) + 800.0).abs() < 1e-12);
    }

    fn disk(n: usize, radius: f64, cy: f64, cx: f64) -> ComplexField {
        ComplexField::from_fn(n, n, |r, col| {
            let d = ((r as f64 - cy).powi(2) + (col as f64 - cx).powi(2)).sqrt();
            if d <= radius {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }

    #[test]
    fn top_hat_fwhm() {
        let d = probe_fwhm_diameter(&disk(32, 6.0, 16.0, 16.0)).unwrap();
        assert!((d - 12.0).abs() <= 1.0, "{d}");
    }

    #[test]
    fn gaussian_fwhm() {
        let s = 4.0;
        let p = ComplexField::from_fn(64, 64, |r, col| {
            let q = ((r as f64 - 32.0).powi(2) + (col as f64 - 32.0).powi(2)) / (2.0 * s * s);
            // amplitude sqrt of a Gaussian intensity
            c((-q).exp().sqrt(), 0.0)
        });
        let d = probe_fwhm_diameter(&p).unwrap();
        let want = 2.0 * (2.0 * 2f64.ln()).sqrt() * s;
        assert!((want - 2.3548 * s).abs() < 1e-3);
        assert!((d - want).abs() / want < 0.02, "{d} vs {want}");
    }

    #[test]
    fn fwhm_translation_invariant() {
        let p = disk(40, 7.5, 20.0, 20.0).rotate_phase(0.3);
        let a = probe_fwhm_diameter(&p).unwrap();
        let b = probe_fwhm_diameter(&p.roll(3, -2)).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn unbounded_probe() {
        let p = ComplexField::filled(8, 8, c(1.0, 0.0));
        assert!(matches!(probe_fwhm_diameter(&p), Err(Error::UnboundedProbe)));
    }

    #[test]
    fn patches() {
        let o = ComplexField::from_fn(5, 6, |r, col| c(r as f64, col as f64));
        let p = extract_patch(&o, (0, 0), (2, 3)).unwrap();
        assert_eq!(p.data(), &[c(0., 0.), c(0., 1.), c(0., 2.), c(1., 0.), c(1., 1.), c(1., 2.)]);
        assert_eq!(extract_patch(&o, (0, 0), (5, 6)).unwrap(), o);
        assert!(matches!(extract_patch(&o, (4, 0), (2, 2)), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn impulse_probe_gives_flat_frames() {
        let o = ComplexField::from_fn(8, 8, |r, col| c(0.1 * r as f64, 0.05 * col as f64));
        let grid = make_scan_grid((8, 8), (4, 4), (2, 2)).unwrap();
        let mut p = ComplexField::zeros(4, 4);
        p.set(2, 2, c(1.0, 0.0));
        let set = simulate_intensity(&o, &p, &grid).unwrap();
        for (j, &(r, col)) in grid.positions.iter().enumerate() {
            let want = o.get(r + 2, col + 2).norm_sqr() / 16.0;
            assert!(set.frame(j).iter().all(|v| (v - want).abs() < 1e-15));
        }
    }

    #[test]
    fn unit_object_repeats_probe_spectrum() {
        let o = ComplexField::filled(8, 8, c(1.0, 0.0));
        let p = ComplexField::from_fn(4, 4, |r, col| c((r + 1) as f64 * 0.2, col as f64 * 0.1));
        let grid = make_scan_grid((8, 8), (4, 4), (2, 2)).unwrap();
        let set = simulate_intensity(&o, &p, &grid).unwrap();
        for j in 1..set.len() {
            assert_eq!(set.frame(j), set.frame(0));
        }
    }

    #[test]
    fn shape_mismatch() {
        let o = ComplexField::zeros(8, 8);
        let grid = make_scan_grid((8, 8), (4, 4), (2, 2)).unwrap();
        assert!(matches!(
            simulate_intensity(&o, &ComplexField::zeros(3, 4), &grid),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
