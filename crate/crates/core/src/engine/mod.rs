//! The reconstruction loop: networks, forward model, loss, Adam.

mod checkpoint;
mod gradcheck;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{tape_forward, Eager, Graph, ParamStore, Value};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::networks::{from_field, FieldModel, NetworkConfig};
use crate::optim::{measured_amplitude, ptyinr_loss, AdamConfig, AdamState, LossConfig};
use crate::physics::{forward_intensity, DiffractionSet};
use crate::provenance::{config_hash, Provenance};
use crate::rng::Rng;

pub use gradcheck::{toy_gradcheck, toy_networks, ToyGradcheck};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Learn,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_object: f64,
    pub lr_probe: f64,
    /// Positions per step; 0 picks full batch when it fits.
    pub batch: usize,
    pub seed: u64,
    pub omega_first: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Last regularized step; `None` means 10% of `steps`.
    pub k: Option<usize>,
    pub probe_mode: ProbeMode,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr_object: 1e-4,
            lr_probe: 1e-4,
            batch: 0,
            seed: 0,
            omega_first: 30.0,
            beta: 1e-2,
            lambda: 0.1,
            k: None,
            probe_mode: ProbeMode::Learn,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Upper bound on intensities per full-batch step.
pub const FULL_BATCH_LIMIT: usize = 1 << 24;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_object", self.lr_object), ("lr_probe", self.lr_probe)] {
            if !(lr > 0.0 && lr < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {lr}")));
            }
        }
        if !(self.omega_first > 0.0) {
            return Err(Error::InvalidConfig("omega_first must be positive".into()));
        }
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            beta: self.beta,
            lambda: self.lambda,
            k: self.k.unwrap_or(self.steps / 10),
        }
    }

    pub fn batch_size(&self, positions: usize, frame_len: usize) -> usize {
        if self.batch > 0 {
            self.batch.min(positions)
        } else if positions * frame_len <= FULL_BATCH_LIMIT {
            positions
        } else {
            (FULL_BATCH_LIMIT / frame_len).clamp(1, positions)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub loss_history: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    train: &'a TrainConfig,
    networks: &'a NetworkConfig,
    object_shape: (usize, usize),
    probe_shape: (usize, usize),
    positions: usize,
}

/// Mini-batch positions for `step`; the shuffle depends only on
/// `(seed, epoch)`, so no sampler state needs saving.
pub fn batch_indices(seed: u64, step: usize, positions: usize, batch: usize) -> Vec<usize> {
    if batch >= positions {
        return (0..positions).collect();
    }
    let per_epoch = positions.div_ceil(batch);
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let mut order: Vec<usize> = (0..positions).collect();
    order.shuffle(&mut Rng::stream(seed, "batch").substream(epoch as u64));
    order[slot * batch..((slot + 1) * batch).min(positions)].to_vec()
}

/// Everything needed to evaluate the training loss for given parameters.
pub struct LossProblem<'a> {
    pub model: &'a FieldModel,
    pub data: &'a DiffractionSet,
    /// Square roots of the measured intensities.
    pub measured: &'a [f64],
    pub fixed_probe: Option<&'a ComplexField>,
    pub loss: &'a LossConfig,
}

impl LossProblem<'_> {
    /// Loss over the frames in `indices` at step `t`; with `with_grad` the
    /// gradient is left in `params.grads()`.
    pub fn loss(&self, params: &mut ParamStore, indices: &[usize], t: usize, with_grad: bool) -> Result<f64> {
        let positions = Arc::new(self.data.grid.subset(indices));
        let n = self.data.frame_len();
        let (h, w) = self.data.grid.probe_shape;
        let mut sqrt_m = Vec::with_capacity(indices.len() * n);
        for &j in indices {
            sqrt_m.extend_from_slice(&self.measured[j * n..(j + 1) * n]);
        }
        let measured = Value::real(vec![indices.len(), h, w], sqrt_m)?;
        let (mut tape, loss) = tape_forward(|g| {
            let object = self.model.object(g, params)?;
            let (probe, amp) = match self.fixed_probe {
                Some(p) => (g.constant(from_field(p)), None),
                None => {
                    let p = self.model.probe(g, params)?;
                    (p.field, Some(p.amplitude))
                }
            };
            let pred = forward_intensity(g, object.field, probe, positions)?;
            let m = g.constant(measured);
            ptyinr_loss(g, m, pred, self.loss, t, amp)
        })?;
        let value = tape.value(loss).to_scalar()?;
        if with_grad && value.is_finite() {
            tape.backward(loss, params)?;
        }
        Ok(value)
    }
}

pub struct Trainer {
    model: FieldModel,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    data: Arc<DiffractionSet>,
    measured: Vec<f64>,
    fixed_probe: Option<ComplexField>,
    params: ParamStore,
    adam: AdamState,
    step: usize,
    losses: Vec<f64>,
    hash: String,
    checkpoint_path: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(
        data: Arc<DiffractionSet>,
        cfg: TrainConfig,
        networks: NetworkConfig,
        fixed_probe: Option<ComplexField>,
    ) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let mut networks = networks;
        networks.siren.omega_first = cfg.omega_first;
        let probe_shape = data.grid.probe_shape;
        if let Some(p) = &fixed_probe {
            if p.shape() != probe_shape {
                return Err(Error::shape(format!(
                    "fixed probe {:?} does not match frames {:?}",
                    p.shape(),
                    probe_shape
                )));
            }
            p.ensure_finite()?;
        }
        if cfg.probe_mode == ProbeMode::Fixed && fixed_probe.is_none() {
            return Err(Error::InvalidConfig("probe_mode fixed needs a probe".into()));
        }
        let model = FieldModel::new(networks.clone(), data.grid.object_shape, probe_shape)?;
        let params = if fixed_probe.is_some() {
            model.init_object_params(cfg.seed)?
        } else {
            model.init_params(cfg.seed)?
        };
        let (lr_o, lr_p) = (cfg.lr_object, cfg.lr_probe);
        let adam = AdamState::new(&params, cfg.adam, |name| {
            if name.starts_with("probe.") {
                lr_p
            } else {
                lr_o
            }
        });
        let hash = config_hash(&HashedConfig {
            train: &cfg,
            networks: &networks,
            object_shape: data.grid.object_shape,
            probe_shape,
            positions: data.len(),
        })?;
        let measured = measured_amplitude(&data.frames)?;
        Ok(Self {
            model,
            loss_cfg: cfg.loss(),
            cfg,
            data,
            measured,
            fixed_probe,
            params,
            adam,
            step: 0,
            losses: Vec::new(),
            hash,
            checkpoint_path: None,
            last_checkpoint: None,
        })
    }

    /// Periodic checkpoints overwrite this file.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Loss (and optionally gradients into the store) for a set of positions.
    fn evaluate(&mut self, indices: &[usize], t: usize, with_grad: bool) -> Result<f64> {
        let problem = LossProblem {
            model: &self.model,
            data: &self.data,
            measured: &self.measured,
            fixed_probe: self.fixed_probe.as_ref(),
            loss: &self.loss_cfg,
        };
        let value = problem.loss(&mut self.params, indices, t, with_grad)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: t,
                checkpoint: self.last_checkpoint.clone(),
            });
        }
        Ok(value)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let t = self.step;
        let b = self.cfg.batch_size(self.data.len(), self.data.frame_len());
        let idx = batch_indices(self.cfg.seed, t, self.data.len(), b);
        let loss = self.evaluate(&idx, t, true)?;
        self.adam.step(&mut self.params)?;
        self.losses.push(loss);
        self.step += 1;
        if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
            if let Some(path) = self.checkpoint_path.clone() {
                self.save_checkpoint(&path)?;
                self.last_checkpoint = Some(path);
            }
        }
        Ok(loss)
    }

    pub fn run_until(&mut self, steps: usize) -> Result<()> {
        while self.step < steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.steps)
    }

    /// Full-data loss at the current parameters, without the regularizer.
    pub fn current_loss(&mut self) -> Result<f64> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.evaluate(&all, usize::MAX, false)
    }

    pub fn object(&self) -> Result<ComplexField> {
        self.model.object_field(&self.params)
    }

    pub fn probe(&self) -> Result<ComplexField> {
        match &self.fixed_probe {
            Some(p) => Ok(p.clone()),
            None => self.model.probe_field(&self.params),
        }
    }

    pub fn result(&self) -> Result<ReconResult> {
        let object = self.object()?;
        let probe = self.probe()?;
        object.ensure_finite()?;
        probe.ensure_finite()?;
        Ok(ReconResult {
            object,
            probe,
            loss_history: self.losses.clone(),
            metrics: BTreeMap::new(),
            provenance: Provenance::new(self.hash.clone(), self.cfg.seed),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.hash.clone(),
            step: self.step as u64,
            adam_t: self.adam.t,
            segments: self.params.segments().to_vec(),
            values: self.params.values().to_vec(),
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
            losses: self.losses.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.checkpoint())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let ck = read_checkpoint(path)?;
        self.restore(ck)
    }

    pub fn restore(&mut self, ck: Checkpoint) -> Result<()> {
        if ck.config_hash != self.hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {} does not match run config {}",
                ck.config_hash, self.hash
            )));
        }
        if ck.values.len() != self.params.len() || ck.segments != self.params.segments() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                ck.values.len(),
                self.params.len()
            )));
        }
        self.params.values_mut().copy_from_slice(&ck.values);
        self.params.zero_grads();
        self.adam.m = ck.m;
        self.adam.v = ck.v;
        self.adam.t = ck.adam_t;
        self.step = ck.step as usize;
        self.losses = ck.losses;
        Ok(())
    }
}

pub fn reconstruct(data: Arc<DiffractionSet>, cfg: &TrainConfig, networks: &NetworkConfig) -> Result<ReconResult> {
    let mut t = Trainer::new(data, cfg.clone(), networks.clone(), None)?;
    t.run()?;
    t.result()
}

pub fn reconstruct_known_probe(
    data: Arc<DiffractionSet>,
    probe: &ComplexField,
    cfg: &TrainConfig,
    networks: &NetworkConfig,
) -> Result<ReconResult> {
    let cfg = TrainConfig {
        probe_mode: ProbeMode::Fixed,
        ..cfg.clone()
    };
    let mut t = Trainer::new(data, cfg, networks.clone(), Some(probe.clone()))?;
    t.run()?;
    t.result()
}

/// Data term of the loss for explicit object and probe fields.
pub fn data_loss(data: &DiffractionSet, object: &ComplexField, probe: &ComplexField, beta: f64) -> Result<f64> {
    let (h, w) = data.grid.probe_shape;
    let mut g = Eager::new();
    let o = g.constant(from_field(object));
    let p = g.constant(from_field(probe));
    let pred = forward_intensity(&mut g, o, p, data.grid.shared_positions())?;
    let m = g.constant(Value::real(vec![data.len(), h, w], measured_amplitude(&data.frames)?)?);
    let cfg = LossConfig { beta, lambda: 0.0, k: 0 };
    let l = ptyinr_loss(&mut g, m, pred, &cfg, 0, None)?;
    g.value(l).to_scalar()
}
