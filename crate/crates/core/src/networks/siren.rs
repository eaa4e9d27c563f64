//! Sine-activated coordinate networks.
//!
//! Hidden layer `i` computes `sin(omega_i * x W_i + b_i)`; the head is linear.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SirenConfig {
    pub in_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Set from the training configuration.
    #[serde(skip)]
    pub omega_first: f64,
    pub omega_hidden: f64,
    pub out_dim: usize,
}

impl Default for SirenConfig {
    fn default() -> Self {
        Self {
            in_dim: 2,
            hidden_layers: 3,
            hidden_width: 512,
            omega_first: 30.0,
            omega_hidden: 30.0,
            out_dim: 1,
        }
    }
}

impl SirenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 {
            return Err(Error::InvalidConfig("siren needs at least one hidden layer".into()));
        }
        if !(self.omega_first > 0.0) || !(self.omega_hidden > 0.0) {
            return Err(Error::InvalidConfig("siren omegas must be positive".into()));
        }
        if self.in_dim == 0 || self.hidden_width == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig("siren dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.in_dim, self.hidden_width)];
        for _ in 1..self.hidden_layers {
            shapes.push((self.hidden_width, self.hidden_width));
        }
        shapes.push((self.hidden_width, self.out_dim));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega_first
        } else {
            self.omega_hidden
        }
    }
}

fn layer_name(prefix: &str, layer: usize, last: bool) -> (String, String) {
    if last {
        (format!("{prefix}.out.weight"), format!("{prefix}.out.bias"))
    } else {
        (format!("{prefix}.{layer}.weight"), format!("{prefix}.{layer}.bias"))
    }
}

/// First layer `U(-1/in, 1/in)`, deeper layers `U(+-sqrt(6/fan_in)/omega)`,
/// zero biases.
pub fn siren_init(cfg: &SirenConfig, prefix: &str, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let shapes = cfg.layer_shapes();
    let mut store = ParamStore::new();
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let bound = if l == 0 {
            1.0 / fan_in as f64
        } else {
            (6.0 / fan_in as f64).sqrt() / cfg.omega_hidden
        };
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let (wn, bn) = layer_name(prefix, l, l + 1 == shapes.len());
        store.push(wn, vec![fan_in, fan_out], w)?;
        store.push(bn, vec![fan_out], vec![0.0; fan_out])?;
    }
    Ok(store)
}

/// `coords` is `[n, in_dim]`; returns `[n, out_dim]`.
pub fn siren_forward<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    cfg: &SirenConfig,
    coords: Var,
) -> Result<Var> {
    let shape = g.value(coords).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.in_dim {
        return Err(Error::shape(format!(
            "siren `{prefix}` expects [n, {}] coordinates, got {shape:?}",
            cfg.in_dim
        )));
    }
    let layers = cfg.layer_shapes().len();
    let mut x = coords;
    for l in 0..layers {
        let last = l + 1 == layers;
        let (wn, bn) = layer_name(prefix, l, last);
        let w = g.param(store, &wn)?;
        let b = g.param(store, &bn)?;
        let z = g.matmul(x, w)?;
        if last {
            x = g.add_bias(z, b)?;
        } else {
            let z = g.scale(z, cfg.omega(l))?;
            let z = g.add_bias(z, b)?;
            x = g.sin(z)?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Eager, Value};

    fn eval(store: &ParamStore, cfg: &SirenConfig, pts: Vec<f64>) -> Vec<f64> {
        let mut g = Eager::new();
        let n = pts.len() / 2;
        let c = g.constant(Value::real(vec![n, 2], pts).unwrap());
        let y = siren_forward(&mut g, store, "s", cfg, c).unwrap();
        g.value(y).as_real().unwrap().data.clone()
    }

    #[test]
    fn init_bounds() {
        let cfg = SirenConfig::default();
        let mut rng = Rng::stream(1, "siren");
        let s = siren_init(&cfg, "s", &mut rng).unwrap();
        assert!(s.get("s.0.weight").unwrap().iter().all(|w| w.abs() <= 0.5));
        let bound = (6.0f64 / 512.0).sqrt() / 30.0;
        assert!((bound - 0.003608).abs() < 1e-6);
        for name in ["s.1.weight", "s.2.weight", "s.out.weight"] {
            assert!(s.get(name).unwrap().iter().all(|w| w.abs() <= bound));
        }
        assert!(s.get("s.1.bias").unwrap().iter().all(|&b| b == 0.0));
        assert_eq!(s.len(), cfg.param_count());
    }

    #[test]
    fn zero_network_outputs_final_bias() {
        let cfg = SirenConfig {
            hidden_width: 8,
            ..SirenConfig::default()
        };
        let mut s = siren_init(&cfg, "s", &mut Rng::stream(0, "z")).unwrap();
        s.values_mut().iter_mut().for_each(|v| *v = 0.0);
        s.get_mut("s.out.bias").unwrap()[0] = 0.37;
        let y = eval(&s, &cfg, vec![0.0, 0.0, 0.2, 0.9, 1.0, 1.0]);
        assert_eq!(y, vec![0.37; 3]);
    }

    #[test]
    fn hand_computed_single_layer() {
        // 2 -> 1 -> 1, omega 30 at (0.5, 0.5)
        let cfg = SirenConfig {
            hidden_layers: 1,
            hidden_width: 1,
            ..SirenConfig::default()
        };
        let mut s = ParamStore::new();
        s.push("s.0.weight", vec![2, 1], vec![0.01, -0.03]).unwrap();
        s.push("s.0.bias", vec![1], vec![0.2]).unwrap();
        s.push("s.out.weight", vec![1, 1], vec![1.5]).unwrap();
        s.push("s.out.bias", vec![1], vec![-0.25]).unwrap();
        // sin(30 * (0.005 - 0.015) + 0.2) = sin(-0.1)
        let expected = 1.5 * (-0.1f64).sin() - 0.25;
        let y = eval(&s, &cfg, vec![0.5, 0.5]);
        assert!((y[0] - expected).abs() < 1e-15, "{} vs {expected}", y[0]);
        assert!((expected - (-0.39975012497)).abs() < 1e-10);
    }

    #[test]
    fn omega_scaling_identity() {
        let base = SirenConfig {
            hidden_layers: 1,
            hidden_width: 6,
            ..SirenConfig::default()
        };
        let doubled = SirenConfig {
            omega_first: 60.0,
            ..base.clone()
        };
        let s = siren_init(&base, "s", &mut Rng::stream(4, "w")).unwrap();
        let x = vec![0.4, 0.8, 0.1, 0.6];
        let half: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
        assert_eq!(eval(&s, &base, x), eval(&s, &doubled, half));
    }

    #[test]
    fn shape_mismatch() {
        let cfg = SirenConfig {
            hidden_width: 4,
            ..SirenConfig::default()
        };
        let s = siren_init(&cfg, "s", &mut Rng::stream(0, "z")).unwrap();
        let mut g = Eager::new();
        let c = g.constant(Value::real(vec![2, 3], vec![0.0; 6]).unwrap());
        assert!(matches!(
            siren_forward(&mut g, &s, "s", &cfg, c),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
