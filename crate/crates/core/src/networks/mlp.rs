//! Small ReLU multilayer perceptrons on encoded features.

use rand::Rng as _;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlpShape {
    pub in_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub out_dim: usize,
}

impl MlpShape {
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.in_dim;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        shapes.push((fan_in, self.out_dim));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

fn names(prefix: &str, layer: usize, last: bool) -> (String, String) {
    if last {
        (format!("{prefix}.out.weight"), format!("{prefix}.out.bias"))
    } else {
        (format!("{prefix}.{layer}.weight"), format!("{prefix}.{layer}.bias"))
    }
}

/// Weights and biases `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn relu_mlp_init(shape: &MlpShape, prefix: &str, rng: &mut Rng) -> Result<ParamStore> {
    let layers = shape.layer_shapes();
    let mut store = ParamStore::new();
    for (l, &(fi, fo)) in layers.iter().enumerate() {
        let bound = 1.0 / (fi as f64).sqrt();
        let w = (0..fi * fo).map(|_| rng.random_range(-bound..=bound)).collect();
        let b = (0..fo).map(|_| rng.random_range(-bound..=bound)).collect();
        let (wn, bn) = names(prefix, l, l + 1 == layers.len());
        store.push(wn, vec![fi, fo], w)?;
        store.push(bn, vec![fo], b)?;
    }
    Ok(store)
}

/// `features` is `[n, in_dim]`; returns `[n, out_dim]`.
pub fn relu_mlp_forward<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    shape: &MlpShape,
    features: Var,
) -> Result<Var> {
    let s = g.value(features).shape().to_vec();
    if s.len() != 2 || s[1] != shape.in_dim {
        return Err(Error::shape(format!(
            "mlp `{prefix}` expects [n, {}] features, got {s:?}",
            shape.in_dim
        )));
    }
    let layers = shape.layer_shapes().len();
    let mut x = features;
    for l in 0..layers {
        let last = l + 1 == layers;
        let (wn, bn) = names(prefix, l, last);
        let w = g.param(store, &wn)?;
        let b = g.param(store, &bn)?;
        let z = g.matmul(x, w)?;
        let z = g.add_bias(z, b)?;
        x = if last { z } else { g.relu(z)? };
    }
    Ok(x)
}
