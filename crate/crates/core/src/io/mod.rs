//! On-disk formats: containers, typed dataset and reconstruction views,
//! run configuration and PNG previews.

mod config;
mod container;
mod image;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ReconResult;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::physics::{DiffractionSet, NoiseRecord, ScanGrid};
use crate::provenance::Provenance;

pub use config::{RunConfig, ScanConfig};
pub use container::{
    load_container, read_manifest, save_container, Array, ArrayData, ArrayEntry, Container, DirLock, Dtype,
    Manifest, FORMAT_VERSION, MANIFEST,
};
pub use image::{amplitude_png, encode_gray_png, encode_rgb_png, phase_png, warm_colormap};

pub const DATASET_KIND: &str = "dataset";
pub const RECONSTRUCTION_KIND: &str = "reconstruction";

/// Beamline-style descriptive values; never used in computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalMetadata {
    pub energy_kev: f64,
    pub detector_distance_m: f64,
    pub scan_step_nm: Option<f64>,
}

impl Default for PhysicalMetadata {
    fn default() -> Self {
        Self {
            energy_kev: 15.0,
            detector_distance_m: 1.2,
            scan_step_nm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub object_shape: (usize, usize),
    pub probe_shape: (usize, usize),
    pub step: (usize, usize),
    pub noise: Option<NoiseRecord>,
    pub physical: PhysicalMetadata,
    /// Which phantom generated the data, if simulated.
    pub phantom: Option<String>,
    /// Border excluded from evaluation, pixels.
    pub eval_margin: Option<usize>,
}

/// A dataset and, when simulated, its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub data: DiffractionSet,
    pub truth_object: Option<ComplexField>,
    pub truth_probe: Option<ComplexField>,
    pub metadata: DatasetMetadata,
}

fn field_array(name: &str, role: &str, f: &ComplexField) -> Result<Array> {
    Array::new(name, role, vec![f.rows(), f.cols()], ArrayData::Complex128(f.data().to_vec()))
}

fn field_from(c: &Container, name: &str) -> Result<ComplexField> {
    let a = c.array(name)?;
    match (&a.data, a.shape.as_slice()) {
        (ArrayData::Complex128(v), &[r, cols]) => ComplexField::new(r, cols, v.clone()),
        _ => Err(Error::Container(format!(
            "array `{name}` must be a 2-d complex128 array, found {:?} {:?}",
            a.data.dtype(),
            a.shape
        ))),
    }
}

fn f64_from<'a>(c: &'a Container, name: &str) -> Result<&'a [f64]> {
    match &c.array(name)?.data {
        ArrayData::Float64(v) => Ok(v),
        other => Err(Error::Container(format!(
            "array `{name}` must be float64, found {:?}",
            other.dtype()
        ))),
    }
}

fn check_kind(c: &Container, kind: &str) -> Result<()> {
    if c.kind != kind {
        return Err(Error::Container(format!("expected a {kind} container, found `{}`", c.kind)));
    }
    Ok(())
}

impl DatasetBundle {
    pub fn to_container(&self, config: serde_json::Value, provenance: Provenance) -> Result<Container> {
        let d = &self.data;
        let (h, w) = d.grid.probe_shape;
        let mut c = Container::new(DATASET_KIND, provenance);
        c.push(Array::new(
            "intensities",
            "intensity",
            vec![d.len(), h, w],
            ArrayData::Float64(d.frames.clone()),
        )?)?;
        let pos = d.grid.positions.iter().flat_map(|&(r, col)| [r as i64, col as i64]).collect();
        c.push(Array::new("positions", "positions", vec![d.len(), 2], ArrayData::Int64(pos))?)?;
        if let Some(o) = &self.truth_object {
            c.push(field_array("truth_object", "truth_object", o)?)?;
        }
        if let Some(p) = &self.truth_probe {
            c.push(field_array("truth_probe", "truth_probe", p)?)?;
        }
        c.metadata = serde_json::to_value(&self.metadata)?;
        c.config = config;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        check_kind(c, DATASET_KIND)?;
        let metadata: DatasetMetadata = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::Container(format!("dataset metadata: {e}")))?;
        let frames = f64_from(c, "intensities")?.to_vec();
        let pa = c.array("positions")?;
        let positions = match (&pa.data, pa.shape.as_slice()) {
            (ArrayData::Int64(v), &[_, 2]) => v
                .chunks_exact(2)
                .map(|p| match (usize::try_from(p[0]), usize::try_from(p[1])) {
                    (Ok(r), Ok(col)) => Ok((r, col)),
                    _ => Err(Error::Container(format!("array `positions`: negative position {p:?}"))),
                })
                .collect::<Result<Vec<_>>>()?,
            _ => {
                return Err(Error::Container(format!(
                    "array `positions` must be int64 [J, 2], found {:?} {:?}",
                    pa.data.dtype(),
                    pa.shape
                )))
            }
        };
        let ia = c.array("intensities")?;
        let (h, w) = metadata.probe_shape;
        if ia.shape != [positions.len(), h, w] {
            return Err(Error::Container(format!(
                "array `intensities`: shape {:?} does not match {} positions of {h}x{w}",
                ia.shape,
                positions.len()
            )));
        }
        let grid = ScanGrid {
            positions,
            step: metadata.step,
            probe_shape: metadata.probe_shape,
            object_shape: metadata.object_shape,
        };
        let data = DiffractionSet::new(frames, grid, metadata.noise)?;
        let optional = |name: &str| -> Result<Option<ComplexField>> {
            if c.arrays.iter().any(|a| a.name == name) {
                field_from(c, name).map(Some)
            } else {
                Ok(None)
            }
        };
        let truth_object = optional("truth_object")?;
        let truth_probe = optional("truth_probe")?;
        if let Some(o) = &truth_object {
            if o.shape() != metadata.object_shape {
                return Err(Error::shape(format!("truth object {:?} vs metadata {:?}", o.shape(), metadata.object_shape)));
            }
        }
        if let Some(p) = &truth_probe {
            if p.shape() != metadata.probe_shape {
                return Err(Error::shape(format!("truth probe {:?} vs metadata {:?}", p.shape(), metadata.probe_shape)));
            }
        }
        Ok(Self {
            data,
            truth_object,
            truth_probe,
            metadata,
        })
    }

    pub fn save(&self, dir: &Path, config: serde_json::Value, provenance: Provenance, overwrite: bool) -> Result<()> {
        save_container(dir, &self.to_container(config, provenance)?, overwrite)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_container(&load_container(dir)?)
    }
}

pub fn recon_container(r: &ReconResult, config: serde_json::Value) -> Result<Container> {
    let mut c = Container::new(RECONSTRUCTION_KIND, r.provenance.clone());
    c.push(field_array("object", "object", &r.object)?)?;
    c.push(field_array("probe", "probe", &r.probe)?)?;
    c.push(Array::new(
        "loss_history",
        "loss_history",
        vec![r.loss_history.len()],
        ArrayData::Float64(r.loss_history.clone()),
    )?)?;
    c.metrics = r.metrics.clone();
    c.config = config;
    Ok(c)
}

pub fn recon_from_container(c: &Container) -> Result<ReconResult> {
    check_kind(c, RECONSTRUCTION_KIND)?;
    Ok(ReconResult {
        object: field_from(c, "object")?,
        probe: field_from(c, "probe")?,
        loss_history: f64_from(c, "loss_history")?.to_vec(),
        metrics: c.metrics.clone(),
        provenance: c.provenance.clone(),
    })
}

/// Loads a single complex field: either a container holding exactly one
/// probe-like array (`probe` or `truth_probe`) or a reconstruction.
pub fn load_probe(dir: &Path) -> Result<ComplexField> {
    let c = load_container(dir)?;
    for name in ["probe", "truth_probe"] {
        if c.arrays.iter().any(|a| a.name == name) {
            return field_from(&c, name);
        }
    }
    Err(Error::Container(format!("{} holds no probe array", dir.display())))
}

pub fn save_reconstruction(dir: &Path, r: &ReconResult, config: serde_json::Value, files: Vec<(String, Vec<u8>)>, overwrite: bool) -> Result<()> {
    let mut c = recon_container(r, config)?;
    c.files = files;
    save_container(dir, &c, overwrite)
}

pub fn load_reconstruction(dir: &Path) -> Result<ReconResult> {
    recon_from_container(&load_container(dir)?)
}

/// Amplitude and phase previews for a field, named `{stem}_amplitude.png`
/// and `{stem}_phase.png`.
pub fn field_previews(stem: &str, f: &ComplexField) -> Result<Vec<(String, Vec<u8>)>> {
    Ok(vec![
        (format!("{stem}_amplitude.png"), amplitude_png(f)?),
        (format!("{stem}_phase.png"), phase_png(f)?),
    ])
}
