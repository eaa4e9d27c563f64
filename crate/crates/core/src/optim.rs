//! Training loss and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Value, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Smooth-L1 transition on the amplitude residual.
    pub beta: f64,
    /// Weight on the mean probe amplitude.
    pub lambda: f64,
    /// Last step (inclusive) at which the probe regularizer is active.
    pub k: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1e-2,
            lambda: 0.1,
            k: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn regularized_at(&self, t: usize) -> bool {
        self.lambda > 0.0 && t <= self.k
    }
}

/// Mean smooth-L1 of `a - b` with transition `beta`.
pub fn smooth_l1(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = (x - y).abs();
            if r < beta {
                0.5 * r * r / beta
            } else {
                r - 0.5 * beta
            }
        })
        .sum();
    s / a.len() as f64
}

/// Elementwise square roots of measured intensities, rejecting negatives.
pub fn measured_amplitude(intensity: &[f64]) -> Result<Vec<f64>> {
    intensity
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.is_finite() {
                Ok(v.sqrt())
            } else if v.is_finite() {
                Err(Error::NegativeIntensity(v))
            } else {
                Err(Error::NonFiniteField)
            }
        })
        .collect()
}

/// `smooth_l1(sqrt(I_m), sqrt(I_p))`, plus `lambda * mean(A_p)` while
/// `t <= k`. `measured_sqrt` has already been through `measured_amplitude`.
pub fn ptyinr_loss<G: Graph>(
    g: &mut G,
    measured_sqrt: Var,
    predicted: Var,
    cfg: &LossConfig,
    t: usize,
    probe_amplitude: Option<Var>,
) -> Result<Var> {
    let amp = g.sqrt(predicted)?;
    let data = g.smooth_l1(measured_sqrt, amp, cfg.beta)?;
    match probe_amplitude {
        Some(a) if cfg.regularized_at(t) => {
            let m = g.mean(a)?;
            let r = g.scale(m, cfg.lambda)?;
            g.add(data, r)
        }
        _ => Ok(data),
    }
}

/// Wraps measured intensities as a graph constant holding their square roots.
pub fn measured_constant<G: Graph>(g: &mut G, shape: Vec<usize>, intensity: &[f64]) -> Result<Var> {
    Ok(g.constant(Value::real(shape, measured_amplitude(intensity)?)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one learning rate per parameter segment.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    /// `(offset, len, lr)` per segment.
    pub rates: Vec<(usize, usize, f64)>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig, lr: impl Fn(&str) -> f64) -> Self {
        let rates = store
            .segments()
            .iter()
            .map(|s| (s.offset, s.len, lr(&s.name)))
            .collect();
        Self {
            config,
            m: vec![0.0; store.len()],
            v: vec![0.0; store.len()],
            t: 0,
            rates,
        }
    }

    pub fn uniform(store: &ParamStore, lr: f64) -> Self {
        Self::new(store, AdamConfig::default(), |_| lr)
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(i) = store.grads().iter().position(|g| !g.is_finite()) {
            let name = store.segment_of(i).map(|s| s.name.clone()).unwrap_or_default();
            return Err(Error::NonFiniteGradient(name));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let grads = store.grads().to_vec();
        let values = store.values_mut();
        for &(off, len, lr) in &self.rates {
            for i in off..off + len {
                let g = grads[i];
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                values[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{tape_forward, Eager};

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[0.3, 0.7], &[0.3, 0.7], 1.0), 0.0);
        assert!((smooth_l1(&[0.5], &[0.0], 1.0) - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&[2.0], &[0.0], 1.0) - 1.5).abs() < 1e-15);
    }

    fn loss_at(cfg: &LossConfig, t: usize) -> f64 {
        let mut g = Eager::new();
        let m = measured_constant(&mut g, vec![3], &[1.0, 4.0, 0.25]).unwrap();
        let p = g.constant(Value::real(vec![3], vec![0.81, 4.41, 0.36]).unwrap());
        let a = g.constant(Value::real(vec![2], vec![0.5, 1.0]).unwrap());
        let l = ptyinr_loss(&mut g, m, p, cfg, t, Some(a)).unwrap();
        g.value(l).to_scalar().unwrap()
    }

    #[test]
    fn schedule_cutoff() {
        let cfg = LossConfig { beta: 0.5, lambda: 0.2, k: 4 };
        let plain = smooth_l1(&[1.0, 2.0, 0.5], &[0.9, 2.1, 0.6], 0.5);
        assert!((loss_at(&cfg, 5) - plain).abs() < 1e-15);
        assert!((loss_at(&cfg, 4) - (plain + 0.2 * 0.75)).abs() < 1e-15);
        let off = LossConfig { lambda: 0.0, ..cfg };
        assert_eq!(loss_at(&off, 0), loss_at(&cfg, 5));
        assert_eq!(loss_at(&off, 100), loss_at(&cfg, 5));
    }

    #[test]
    fn negative_intensity_rejected() {
        assert!(matches!(measured_amplitude(&[1.0, -0.1]), Err(Error::NegativeIntensity(_))));
    }

    #[test]
    fn quadratic_branch_gradient() {
        // d/dIp of (1/N) (sqrt(Im) - sqrt(Ip))^2 / (2 beta)
        let (im, beta) = ([1.0, 0.49], 1.0);
        let mut store = ParamStore::new();
        store.push("ip", vec![2], vec![0.81, 0.64]).unwrap();
        let (mut tape, y) = tape_forward(|g| {
            let m = measured_constant(g, vec![2], &im)?;
            let p = g.param(&store, "ip")?;
            ptyinr_loss(g, m, p, &LossConfig { beta, lambda: 0.0, k: 0 }, 0, None)
        })
        .unwrap();
        tape.backward(y, &mut store).unwrap();
        for i in 0..2 {
            let ip: f64 = store.values()[i];
            let want = -(im[i].sqrt() - ip.sqrt()) / (beta * 2.0 * 2.0 * ip.sqrt());
            assert!((store.grads()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut s = ParamStore::new();
        s.push("p", vec![2], vec![1.0, 1.0]).unwrap();
        s.grads_mut().copy_from_slice(&[3.0, -0.02]);
        let mut a = AdamState::uniform(&s, 0.01);
        a.step(&mut s).unwrap();
        assert!((s.values()[0] - 0.99).abs() < 1e-9);
        assert!((s.values()[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_grad_is_still() {
        let mut s = ParamStore::new();
        s.push("p", vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut a = AdamState::uniform(&s, 0.1);
        for _ in 0..50 {
            a.step(&mut s).unwrap();
        }
        assert_eq!(s.values(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_converges_on_parabola() {
        let mut s = ParamStore::new();
        s.push("p", vec![1], vec![0.0]).unwrap();
        let mut a = AdamState::uniform(&s, 0.1);
        for _ in 0..200 {
            let p = s.values()[0];
            s.grads_mut()[0] = 2.0 * (p - 3.0);
            a.step(&mut s).unwrap();
        }
        assert!((s.values()[0] - 3.0).abs() < 0.05, "{}", s.values()[0]);
    }

    #[test]
    fn non_finite_gradient_names_segment() {
        let mut s = ParamStore::new();
        s.push("a", vec![1], vec![0.0]).unwrap();
        s.push("b", vec![2], vec![0.0, 0.0]).unwrap();
        s.grads_mut()[2] = f64::NAN;
        let mut a = AdamState::uniform(&s, 0.1);
        match a.step(&mut s) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("{other:?}"),
        }
    }
}
