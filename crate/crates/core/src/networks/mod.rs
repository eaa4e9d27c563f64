//! Neural fields for the object (sine networks) and the probe (hash grid
//! encoders feeding ReLU MLPs).

mod coords;
mod hashgrid;
mod mlp;
mod siren;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use coords::CoordGrid;
pub use hashgrid::{hashgrid_encode, hashgrid_init, hashgrid_plan, HashGridConfig, HASH_PRIME_Y};
pub use mlp::{relu_mlp_forward, relu_mlp_init, MlpShape};
pub use siren::{siren_forward, siren_init, SirenConfig};

use crate::autodiff::{Eager, GatherPlan, Graph, ParamStore, Value, Var};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::rng::Rng;

/// How a raw head output becomes a nonnegative amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMap {
    Sigmoid,
    Abs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub siren: SirenConfig,
    pub hashgrid: HashGridConfig,
    pub object_amplitude: AmplitudeMap,
    pub probe_amplitude: AmplitudeMap,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            siren: SirenConfig::default(),
            hashgrid: HashGridConfig::default(),
            object_amplitude: AmplitudeMap::Sigmoid,
            probe_amplitude: AmplitudeMap::Abs,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.siren.validate()?;
        self.hashgrid.validate()?;
        if self.siren.in_dim != 2 || self.siren.out_dim != 1 {
            return Err(Error::InvalidConfig("object networks map (y, x) to one value".into()));
        }
        Ok(())
    }

    pub fn probe_mlp(&self) -> MlpShape {
        MlpShape {
            in_dim: self.hashgrid.encoding_dim(),
            hidden_layers: self.hashgrid.mlp_hidden_layers,
            hidden_width: self.hashgrid.mlp_hidden_width,
            out_dim: 1,
        }
    }
}

pub const OBJECT_AMP: &str = "object.amp";
pub const OBJECT_PHASE: &str = "object.phase";
pub const PROBE_AMP: &str = "probe.amp";
pub const PROBE_PHASE: &str = "probe.phase";

/// Trainable parameter total: two sine networks plus two hash grids with
/// their MLP heads.
pub fn count_params(siren: &SirenConfig, grid: &HashGridConfig) -> usize {
    let mlp = MlpShape {
        in_dim: grid.encoding_dim(),
        hidden_layers: grid.mlp_hidden_layers,
        hidden_width: grid.mlp_hidden_width,
        out_dim: 1,
    };
    2 * siren.param_count() + 2 * (grid.table_len() + mlp.param_count())
}

pub struct ObjectVars {
    pub field: Var,
    pub amplitude: Var,
    pub phase: Var,
}

pub struct ProbeVars {
    pub field: Var,
    /// Normalized amplitude, max exactly 1.
    pub amplitude: Var,
}

/// Object and probe networks bound to fixed output shapes, with the
/// coordinate tensors and hash lookups precomputed.
#[derive(Clone, Debug)]
pub struct FieldModel {
    config: NetworkConfig,
    object_shape: (usize, usize),
    probe_shape: (usize, usize),
    object_coords: Value,
    probe_plan: Arc<GatherPlan>,
}

fn squash<G: Graph>(g: &mut G, map: AmplitudeMap, x: Var) -> Result<Var> {
    match map {
        AmplitudeMap::Sigmoid => g.sigmoid(x),
        AmplitudeMap::Abs => g.abs(x),
    }
}

impl FieldModel {
    pub fn new(config: NetworkConfig, object_shape: (usize, usize), probe_shape: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let object_coords = CoordGrid::new(object_shape.0, object_shape.1).to_value();
        let plan = hashgrid_plan(&config.hashgrid, &CoordGrid::new(probe_shape.0, probe_shape.1))?;
        Ok(Self {
            config,
            object_shape,
            probe_shape,
            object_coords,
            probe_plan: Arc::new(plan),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn object_shape(&self) -> (usize, usize) {
        self.object_shape
    }

    pub fn probe_shape(&self) -> (usize, usize) {
        self.probe_shape
    }

    /// Fresh parameters; each network draws from its own stream of `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = self.init_object_params(seed)?;
        store.extend(self.init_probe_params(seed)?)?;
        Ok(store)
    }

    pub fn init_object_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for name in [OBJECT_AMP, OBJECT_PHASE] {
            store.extend(siren_init(&self.config.siren, name, &mut Rng::stream(seed, name))?)?;
        }
        Ok(store)
    }

    pub fn init_probe_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mlp = self.config.probe_mlp();
        for name in [PROBE_AMP, PROBE_PHASE] {
            let mut rng = Rng::stream(seed, name);
            store.extend(hashgrid_init(&self.config.hashgrid, name, &mut rng)?)?;
            store.extend(relu_mlp_init(&mlp, &format!("{name}.mlp"), &mut rng)?)?;
        }
        Ok(store)
    }

    pub fn object<G: Graph>(&self, g: &mut G, store: &ParamStore) -> Result<ObjectVars> {
        let (rows, cols) = self.object_shape;
        let c = g.constant(self.object_coords.clone());
        let raw_amp = siren_forward(g, store, OBJECT_AMP, &self.config.siren, c)?;
        let raw_phase = siren_forward(g, store, OBJECT_PHASE, &self.config.siren, c)?;
        let amp = squash(g, self.config.object_amplitude, raw_amp)?;
        let amplitude = g.reshape(amp, vec![rows, cols])?;
        let phase = g.reshape(raw_phase, vec![rows, cols])?;
        let field = g.polar(amplitude, phase)?;
        Ok(ObjectVars { field, amplitude, phase })
    }

    fn probe_head<G: Graph>(&self, g: &mut G, store: &ParamStore, prefix: &str) -> Result<Var> {
        let table = g.param(store, &format!("{prefix}.table"))?;
        let feats = g.gather(table, self.probe_plan.clone())?;
        relu_mlp_forward(g, store, &format!("{prefix}.mlp"), &self.config.probe_mlp(), feats)
    }

    pub fn probe<G: Graph>(&self, g: &mut G, store: &ParamStore) -> Result<ProbeVars> {
        let (h, w) = self.probe_shape;
        let raw_amp = self.probe_head(g, store, PROBE_AMP)?;
        let raw_phase = self.probe_head(g, store, PROBE_PHASE)?;
        let amp = squash(g, self.config.probe_amplitude, raw_amp)?;
        let amp = g.normalize_max(amp)?;
        let amplitude = g.reshape(amp, vec![h, w])?;
        let phase = g.reshape(raw_phase, vec![h, w])?;
        let field = g.polar(amplitude, phase)?;
        Ok(ProbeVars { field, amplitude })
    }

    pub fn object_field(&self, store: &ParamStore) -> Result<ComplexField> {
        let mut g = Eager::new();
        let v = self.object(&mut g, store)?.field;
        to_field(g.take(v))
    }

    pub fn probe_field(&self, store: &ParamStore) -> Result<ComplexField> {
        let mut g = Eager::new();
        let v = self.probe(&mut g, store)?.field;
        to_field(g.take(v))
    }
}

pub(crate) fn to_field(v: Value) -> Result<ComplexField> {
    let t = v.as_complex()?;
    if t.shape.len() != 2 {
        return Err(Error::shape(format!("expected a 2-D complex field, got {:?}", t.shape)));
    }
    ComplexField::new(t.shape[0], t.shape[1], t.data.clone())
}

pub(crate) fn from_field(f: &ComplexField) -> Value {
    Value::complex(vec![f.rows(), f.cols()], f.data().to_vec()).expect("field shape")
}
