//! Finite-difference check of the full training loss on a small problem.

use num_complex::Complex64;
use rand::Rng as _;

use super::LossProblem;
use crate::autodiff::{finite_diff_check, FdReport};
use crate::error::Result;
use crate::field::ComplexField;
use crate::networks::{FieldModel, HashGridConfig, NetworkConfig, SirenConfig};
use crate::optim::{measured_amplitude, LossConfig};
use crate::physics::{make_scan_grid, simulate_intensity};
use crate::rng::Rng;
use crate::simulate::focused_probe;

#[derive(Clone, Debug)]
pub struct ToyGradcheck {
    pub samples: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for ToyGradcheck {
    fn default() -> Self {
        Self {
            samples: 200,
            h: 1e-5,
            seed: 0,
        }
    }
}

/// Small nets sized for a 16x16 object and an 8x8 probe.
pub fn toy_networks() -> NetworkConfig {
    NetworkConfig {
        siren: SirenConfig {
            hidden_layers: 2,
            hidden_width: 8,
            omega_first: 30.0,
            ..SirenConfig::default()
        },
        hashgrid: HashGridConfig {
            levels: 3,
            features_per_entry: 2,
            table_size_log2: 6,
            base_resolution: 2,
            growth_factor: 2.0,
            mlp_hidden_layers: 1,
            mlp_hidden_width: 8,
            init_scale: 0.5,
        },
        ..NetworkConfig::default()
    }
}

/// Full loss, regularizer included, on 9 positions of a random 16x16
/// object seen through an 8x8 probe; learned object and probe.
pub fn toy_gradcheck(opts: &ToyGradcheck) -> Result<FdReport> {
    let mut rng = Rng::stream(opts.seed, "gradcheck.object");
    let object = ComplexField::from_fn(16, 16, |_, _| {
        Complex64::from_polar(rng.random_range(0.3..1.0), rng.random_range(-1.0..1.0))
    });
    let probe = focused_probe((8, 8), 0.4, 1.0)?;
    let grid = make_scan_grid((16, 16), (8, 8), (4, 4))?;
    let data = simulate_intensity(&object, &probe, &grid)?;
    let measured = measured_amplitude(&data.frames)?;
    let model = FieldModel::new(toy_networks(), (16, 16), (8, 8))?;
    let mut params = model.init_params(opts.seed)?;
    let loss = LossConfig {
        beta: 1e-2,
        lambda: 0.1,
        k: 1,
    };
    let problem = LossProblem {
        model: &model,
        data: &data,
        measured: &measured,
        fixed_probe: None,
        loss: &loss,
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut pick = Rng::stream(opts.seed, "gradcheck.sample");
    finite_diff_check(
        |p, with_grad| problem.loss(p, &all, 0, with_grad),
        &mut params,
        opts.samples,
        opts.h,
        &mut pick,
    )
}
