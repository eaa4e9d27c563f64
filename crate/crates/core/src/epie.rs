//! Extended ptychographic iterative engine (ePIE).

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{ProbeMode, ReconResult};
use crate::error::{Error, Result};
use crate::fft::{Direction, Fft2};
use crate::field::ComplexField;
use crate::physics::DiffractionSet;
use crate::provenance::{config_hash, Provenance};
use crate::rng::Rng;

/// Below this Fourier modulus the measured amplitude is imposed with zero phase.
pub const MODULUS_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpieConfig {
    pub iterations: usize,
    pub alpha_obj: f64,
    pub alpha_probe: f64,
    pub probe_mode: ProbeMode,
    pub seed: u64,
}

impl Default for EpieConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            alpha_obj: 1.0,
            alpha_probe: 1.0,
            probe_mode: ProbeMode::Learn,
            seed: 0,
        }
    }
}

impl EpieConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("epie needs at least one iteration".into()));
        }
        for (name, a) in [("alpha_obj", self.alpha_obj), ("alpha_probe", self.alpha_probe)] {
            if !(a > 0.0 && a <= 2.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 2], got {a}")));
            }
        }
        Ok(())
    }
}

/// Replaces the modulus of `psi` by `amp` in place.
pub fn modulus_projection(psi: &mut [Complex64], amp: &[f64]) {
    for (z, &a) in psi.iter_mut().zip(amp) {
        let m = z.norm();
        *z = if m < MODULUS_FLOOR {
            Complex64::new(a, 0.0)
        } else {
            *z * (a / m)
        };
    }
}

/// `sum (|F{P O_j}| - sqrt(I_j))^2` over all frames.
pub fn fourier_error(data: &DiffractionSet, object: &ComplexField, probe: &ComplexField) -> Result<f64> {
    let (h, w) = data.grid.probe_shape;
    let fft = Fft2::for_shape(h, w);
    let mut err = 0.0;
    let mut psi = vec![Complex64::new(0.0, 0.0); h * w];
    for (j, &(r0, c0)) in data.grid.positions.iter().enumerate() {
        exit_wave(object, probe, r0, c0, &mut psi);
        fft.process_frames(&mut psi, Direction::Forward);
        err += psi
            .iter()
            .zip(data.frame(j))
            .map(|(z, &i)| (z.norm() - i.sqrt()).powi(2))
            .sum::<f64>();
    }
    Ok(err)
}

fn exit_wave(object: &ComplexField, probe: &ComplexField, r0: usize, c0: usize, out: &mut [Complex64]) {
    let (h, w) = probe.shape();
    let cols = object.cols();
    let (o, p) = (object.data(), probe.data());
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = p[r * w + c] * o[(r0 + r) * cols + c0 + c];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpieOutput {
    pub result: ReconResult,
    /// Fourier error after each iteration.
    pub fourier_errors: Vec<f64>,
}

pub fn epie_reconstruct(
    data: &DiffractionSet,
    init_object: &ComplexField,
    init_probe: &ComplexField,
    cfg: &EpieConfig,
) -> Result<EpieOutput> {
    cfg.validate()?;
    data.validate()?;
    if init_object.shape() != data.grid.object_shape || init_probe.shape() != data.grid.probe_shape {
        return Err(Error::shape(format!(
            "initial object {:?} / probe {:?} do not match data {:?} / {:?}",
            init_object.shape(),
            init_probe.shape(),
            data.grid.object_shape,
            data.grid.probe_shape
        )));
    }
    init_object.ensure_finite()?;
    init_probe.ensure_finite()?;
    let (h, w) = data.grid.probe_shape;
    let cols = data.grid.object_shape.1;
    let fft = Fft2::for_shape(h, w);
    let amps: Vec<f64> = data.frames.iter().map(|v| v.sqrt()).collect();
    let mut object = init_object.clone();
    let mut probe = init_probe.clone();
    let learn = cfg.probe_mode == ProbeMode::Learn;
    let n = h * w;
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    let mut revised = vec![Complex64::new(0.0, 0.0); n];
    let mut patch = vec![Complex64::new(0.0, 0.0); n];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let shuffle = Rng::stream(cfg.seed, "epie");
    let mut errors = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        order.sort_unstable();
        order.shuffle(&mut shuffle.substream(it as u64));
        for &j in &order {
            let (r0, c0) = data.grid.positions[j];
            for r in 0..h {
                patch[r * w..(r + 1) * w].copy_from_slice(&object.data()[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + w]);
            }
            for k in 0..n {
                psi[k] = probe.data()[k] * patch[k];
            }
            revised.copy_from_slice(&psi);
            fft.process_frames(&mut revised, Direction::Forward);
            modulus_projection(&mut revised, &amps[j * n..(j + 1) * n]);
            fft.process_frames(&mut revised, Direction::Inverse);

            let p_max = probe.data().iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
            let o_max = patch.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
            let od = object.data_mut();
            if p_max > 0.0 {
                let a = cfg.alpha_obj / p_max;
                for r in 0..h {
                    for c in 0..w {
                        let k = r * w + c;
                        od[(r0 + r) * cols + c0 + c] += a * probe.data()[k].conj() * (revised[k] - psi[k]);
                    }
                }
            }
            if learn && o_max > 0.0 {
                let a = cfg.alpha_probe / o_max;
                for (k, p) in probe.data_mut().iter_mut().enumerate() {
                    *p += a * patch[k].conj() * (revised[k] - psi[k]);
                }
            }
        }
        if !object.is_finite() || !probe.is_finite() {
            return Err(Error::NonFiniteField);
        }
        errors.push(fourier_error(data, &object, &probe)?);
    }

    let hash = config_hash(cfg)?;
    Ok(EpieOutput {
        result: ReconResult {
            object,
            probe,
            loss_history: errors.clone(),
            metrics: BTreeMap::new(),
            provenance: Provenance::new(hash, cfg.seed),
        },
        fourier_errors: errors,
    })
}

/// Flat-phase Gaussian probe with the given intensity FWHM, max amplitude 1.
pub fn gaussian_probe(shape: (usize, usize), fwhm: f64) -> ComplexField {
    let (h, w) = shape;
    let s = fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    ComplexField::from_fn(h, w, |r, c| {
        let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
        // amplitude of an intensity Gaussian with std s
        Complex64::new((-d2 / (4.0 * s * s)).exp(), 0.0)
    })
}
