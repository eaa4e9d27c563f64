//! Synthetic phantoms, focused probes and detector noise.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::cifft2_centered;
use crate::field::ComplexField;
use crate::physics::{make_scan_grid, simulate_intensity, DiffractionSet, NoiseRecord};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Siemens,
    Blobs,
    Checker,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siemens" => Ok(Self::Siemens),
            "blobs" => Ok(Self::Blobs),
            "checker" => Ok(Self::Checker),
            other => Err(Error::InvalidConfig(format!("unknown phantom kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub object_shape: (usize, usize),
    pub probe_shape: (usize, usize),
    pub spokes: usize,
    /// Target probe FWHM as a fraction of the probe window.
    pub probe_fwhm_fraction: f64,
    /// Quadratic pupil phase at the aperture edge, radians.
    pub probe_defocus: f64,
    pub seed: u64,
    /// Border excluded from evaluation, pixels; `None` means half the probe.
    pub eval_margin: Option<usize>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            kind: PhantomKind::Blobs,
            object_shape: (64, 64),
            probe_shape: (16, 16),
            spokes: 12,
            probe_fwhm_fraction: 0.25,
            probe_defocus: 1.0,
            seed: 0,
            eval_margin: None,
        }
    }
}

impl PhantomConfig {
    pub fn margin(&self) -> usize {
        self.eval_margin.unwrap_or(self.probe_shape.0.min(self.probe_shape.1) / 2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub description: String,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Spoke pattern `s in [0, 1]`: amplitude `1 - 0.6 s`, phase `s` rad.
fn siemens(rows: usize, cols: usize, spokes: usize) -> ComplexField {
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let outer = 0.45 * rows.min(cols) as f64;
    let inner = 0.12 * outer;
    ComplexField::from_fn(rows, cols, |r, c| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let rho = dy.hypot(dx);
        let theta = dy.atan2(dx);
        let spoke = 0.5 + 0.5 * (2.5 * (spokes as f64 * theta).sin()).tanh() / 2.5f64.tanh();
        // fade to a flat core where spokes would alias, and to zero outside
        let core = smoothstep(0.5 * inner, inner, rho);
        let s = (0.5 + (spoke - 0.5) * core) * (1.0 - smoothstep(outer - 2.0, outer, rho));
        Complex64::from_polar(1.0 - 0.6 * s, s)
    })
}

fn gaussian_mixture(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let n = rows.min(cols) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..7)
        .map(|_| {
            (
                rng.random_range(0.15..0.85) * rows as f64,
                rng.random_range(0.15..0.85) * cols as f64,
                rng.random_range(0.07..0.18) * n,
                rng.random_range(0.4..1.0),
            )
        })
        .collect();
    let mut v: Vec<f64> = (0..rows * cols)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            blobs
                .iter()
                .map(|&(y, x, s, a)| a * (-((r - y).powi(2) + (c - x).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let m = v.iter().cloned().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= m);
    v
}

fn blobs(rows: usize, cols: usize, rng: &mut Rng) -> ComplexField {
    let a = gaussian_mixture(rows, cols, rng);
    let p = gaussian_mixture(rows, cols, rng);
    // stays clear of 1 so a sigmoid amplitude head can reach it without saturating
    let amp: Vec<f64> = a.iter().map(|x| 0.9 - 0.5 * x).collect();
    ComplexField::from_polar(rows, cols, &amp, &p).expect("matching sizes")
}

fn checker(rows: usize, cols: usize) -> ComplexField {
    let tile = (rows.min(cols) / 8).max(2);
    ComplexField::from_fn(rows, cols, |r, c| {
        if (r / tile + c / tile) % 2 == 0 {
            Complex64::from_polar(1.0, 0.0)
        } else {
            Complex64::from_polar(0.6, 0.8)
        }
    })
}

/// Focused spot: a circular pupil with quadratic phase, propagated to the
/// sample plane and max-normalized with a real peak.
pub fn focused_probe(shape: (usize, usize), fwhm_fraction: f64, defocus: f64) -> Result<ComplexField> {
    let (h, w) = shape;
    if !(fwhm_fraction > 0.0) {
        return Err(Error::InvalidConfig("probe FWHM fraction must be positive".into()));
    }
    let fwhm = fwhm_fraction * h.min(w) as f64;
    // Airy intensity FWHM ~ 0.514 / cutoff (cycles per pixel)
    let cutoff = 0.514 / fwhm;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let pupil = ComplexField::from_fn(h, w, |r, c| {
        let fy = (r as f64 - cy) / h as f64;
        let fx = (c as f64 - cx) / w as f64;
        let q = fy.hypot(fx) / cutoff;
        if q <= 1.0 {
            Complex64::from_polar(1.0, defocus * q * q)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let p = cifft2_centered(&pupil)?;
    let peak = p.data().iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
    if !(peak.norm() > 0.0) {
        return Err(Error::DegenerateProbe);
    }
    // dividing by the complex peak makes it exactly 1 + 0i
    let data = p.data().iter().map(|z| z / peak).collect();
    ComplexField::new(h, w, data)
}

pub fn make_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    let (rows, cols) = cfg.object_shape;
    let (h, w) = cfg.probe_shape;
    if rows.min(cols) < 16 || h.min(w) < 16 {
        return Err(Error::InvalidConfig("phantom and probe sides must be at least 16".into()));
    }
    let mut rng = Rng::stream(cfg.seed, "phantom");
    let object = match cfg.kind {
        PhantomKind::Siemens => siemens(rows, cols, cfg.spokes.max(1)),
        PhantomKind::Blobs => blobs(rows, cols, &mut rng),
        PhantomKind::Checker => checker(rows, cols),
    };
    let probe = focused_probe(cfg.probe_shape, cfg.probe_fwhm_fraction, cfg.probe_defocus)?;
    Ok(Phantom {
        object,
        probe,
        description: format!("{:?} {rows}x{cols}, probe {h}x{w}", cfg.kind).to_lowercase(),
    })
}

fn check_frames(frames: &[f64]) -> Result<()> {
    match frames.iter().find(|v| !(**v >= 0.0)) {
        Some(&v) => Err(Error::NegativeIntensity(v)),
        None => Ok(()),
    }
}

fn per_frame(frames: &[f64], frame_len: usize, rng: &Rng, mut f: impl FnMut(&mut Rng, f64) -> f64) -> Vec<f64> {
    let frame_len = frame_len.max(1);
    let mut out = Vec::with_capacity(frames.len());
    for (j, frame) in frames.chunks(frame_len).enumerate() {
        let mut r = rng.substream(j as u64);
        out.extend(frame.iter().map(|&v| f(&mut r, v)));
    }
    out
}

/// `(max/alpha) * Poisson(I alpha / max)` with the max over every frame.
pub fn add_poisson(frames: &[f64], frame_len: usize, alpha: f64, rng: &Rng) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!("poisson alpha must be positive, got {alpha}")));
    }
    check_frames(frames)?;
    let m = frames.iter().cloned().fold(0.0, f64::max);
    if m == 0.0 {
        return Ok(frames.to_vec());
    }
    Ok(per_frame(frames, frame_len, rng, |r, v| {
        let lam = v * alpha / m;
        if lam == 0.0 {
            0.0
        } else {
            (m / alpha) * Poisson::new(lam).expect("positive rate").sample(r)
        }
    }))
}

/// Adds `N(0, sigma^2)` and clips negatives to zero.
pub fn add_gaussian(frames: &[f64], frame_len: usize, sigma: f64, rng: &Rng) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("gaussian sigma must be nonnegative, got {sigma}")));
    }
    check_frames(frames)?;
    if sigma == 0.0 {
        return Ok(frames.to_vec());
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    Ok(per_frame(frames, frame_len, rng, |r, v| (v + n.sample(r)).max(0.0)))
}

const GAUSSIAN_STAGE: u64 = 1 << 63;

/// Poisson stage, then Gaussian stage, then clip.
pub fn add_mixed(frames: &[f64], frame_len: usize, alpha: f64, sigma: f64, rng: &Rng) -> Result<Vec<f64>> {
    let p = add_poisson(frames, frame_len, alpha, rng)?;
    add_gaussian(&p, frame_len, sigma, &rng.substream(GAUSSIAN_STAGE))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Poisson,
    Gaussian,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::None,
            alpha: 10.0,
            sigma: 100.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, NoiseKind::Poisson | NoiseKind::Mixed) && !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("noise alpha must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn apply(&self, set: &DiffractionSet) -> Result<DiffractionSet> {
        self.validate()?;
        let rng = Rng::stream(self.seed, "noise");
        let n = set.frame_len();
        let (frames, record) = match self.kind {
            NoiseKind::None => return Ok(set.clone()),
            NoiseKind::Poisson => (
                add_poisson(&set.frames, n, self.alpha, &rng)?,
                NoiseRecord { alpha: Some(self.alpha), sigma: None },
            ),
            NoiseKind::Gaussian => (
                add_gaussian(&set.frames, n, self.sigma, &rng)?,
                NoiseRecord { alpha: None, sigma: Some(self.sigma) },
            ),
            NoiseKind::Mixed => (
                add_mixed(&set.frames, n, self.alpha, self.sigma, &rng)?,
                NoiseRecord { alpha: Some(self.alpha), sigma: Some(self.sigma) },
            ),
        };
        DiffractionSet::new(frames, set.grid.clone(), Some(record))
    }
}

/// Step in pixels giving a nominal overlap percentage for a probe diameter.
pub fn step_for_overlap(overlap_percent: f64, diameter: f64) -> usize {
    ((1.0 - overlap_percent / 100.0) * diameter).round().max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub data: DiffractionSet,
    pub truth: Phantom,
}

pub fn build_dataset(phantom: &Phantom, step: (usize, usize), noise: &NoiseSpec) -> Result<SimulatedDataset> {
    let grid = make_scan_grid(phantom.object.shape(), phantom.probe.shape(), step)?;
    let clean = simulate_intensity(&phantom.object, &phantom.probe, &grid)?;
    Ok(SimulatedDataset {
        data: noise.apply(&clean)?,
        truth: phantom.clone(),
    })
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::probe_fwhm_diameter;

    fn cfg(kind: PhantomKind) -> PhantomConfig {
        PhantomConfig {
            kind,
            object_shape: (48, 48),
            probe_shape: (24, 24),
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn unknown_kind() {
        assert!(matches!("spiral".parse::<PhantomKind>(), Err(Error::InvalidConfig(_))));
        assert_eq!("siemens".parse::<PhantomKind>().unwrap(), PhantomKind::Siemens);
    }

    #[test]
    fn phantom_ranges() {
        for kind in [PhantomKind::Siemens, PhantomKind::Blobs, PhantomKind::Checker] {
            let p = make_phantom(&cfg(kind)).unwrap();
            assert!(p.object.amplitude().iter().all(|&a| a <= 1.0 + 1e-15 && a >= 0.4 - 1e-12));
            assert!((p.probe.max_amplitude() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn focused_probe_is_compact() {
        for n in [16, 24, 32, 64] {
            let p = focused_probe((n, n), 0.25, 1.0).unwrap();
            let d = probe_fwhm_diameter(&p).unwrap();
            assert!(d < n as f64 / 2.0, "n={n} fwhm={d}");
            assert!((d - n as f64 / 4.0).abs() < 0.2 * n as f64, "n={n} fwhm={d}");
        }
    }

    #[test]
    fn blobs_are_smooth() {
        let p = make_phantom(&cfg(PhantomKind::Blobs)).unwrap();
        let (rows, cols) = p.object.shape();
        let (a, ph) = (p.object.amplitude(), p.object.phase());
        let mut worst: f64 = 0.0;
        for r in 0..rows {
            for c in 0..cols - 1 {
                let i = r * cols + c;
                worst = worst.max((a[i + 1] - a[i]).abs()).max((ph[i + 1] - ph[i]).abs());
            }
        }
        assert!(worst < 0.15, "{worst}");
    }

    #[test]
    fn noise_basics() {
        let rng = Rng::stream(3, "n");
        let f = vec![0.0, 1.0, 4.0, 0.0, 2.0, 9.0];
        let p = add_poisson(&f, 3, 10.0, &rng).unwrap();
        assert_eq!((p[0], p[3]), (0.0, 0.0));
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(add_gaussian(&f, 3, 0.0, &rng).unwrap(), f);
        assert_eq!(add_mixed(&f, 3, 10.0, 0.0, &rng).unwrap(), p);
        assert_eq!(add_poisson(&[0.0; 4], 2, 10.0, &rng).unwrap(), vec![0.0; 4]);
        assert!(add_mixed(&f, 3, 10.0, 5.0, &rng).unwrap().iter().all(|&v| v >= 0.0));
        assert!(matches!(add_poisson(&[-1.0], 1, 10.0, &rng), Err(Error::NegativeIntensity(_))));
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
