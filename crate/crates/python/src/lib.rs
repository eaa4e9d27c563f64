//! Python bindings. Fields cross the boundary as nested lists of complex
//! numbers, row-major.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ptyinr::engine::{toy_gradcheck, ReconResult, ToyGradcheck, Trainer};
use ptyinr::epie::{epie_reconstruct, gaussian_probe};
use ptyinr::io::{load_reconstruction, save_reconstruction, DatasetBundle, DatasetMetadata, PhysicalMetadata, RunConfig};
use ptyinr::metrics::{self, align_global_phase};
use ptyinr::networks::count_params as core_count_params;
use ptyinr::physics::probe_fwhm_diameter;
use ptyinr::provenance::Provenance;
use ptyinr::simulate::{build_dataset, make_phantom};
use ptyinr::{ComplexField, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_rows(f: &ComplexField) -> Vec<Vec<Complex64>> {
    f.data().chunks(f.cols()).map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<ComplexField> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("shape mismatch: ragged rows"));
    }
    ComplexField::new(r, c, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn config(json: Option<&str>) -> PyResult<RunConfig> {
    match json {
        Some(s) => RunConfig::from_json(s).map_err(py_err),
        None => Ok(RunConfig::default()),
    }
}

/// A diffraction dataset, with ground truth when simulated.
#[pyclass(name = "Dataset", module = "ptyinr_py")]
struct PyDataset {
    inner: DatasetBundle,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DatasetBundle::load(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, overwrite = false))]
    fn save(&self, path: PathBuf, overwrite: bool) -> PyResult<()> {
        self.inner
            .save(&path, serde_json::Value::Null, Provenance::new(String::new(), 0), overwrite)
            .map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.data.len()
    }

    #[getter]
    fn object_shape(&self) -> (usize, usize) {
        self.inner.metadata.object_shape
    }

    #[getter]
    fn probe_shape(&self) -> (usize, usize) {
        self.inner.metadata.probe_shape
    }

    #[getter]
    fn positions(&self) -> Vec<(usize, usize)> {
        self.inner.data.grid.positions.clone()
    }

    /// Intensities of frame `j`, row-major.
    fn frame(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.data.len() {
            return Err(PyValueError::new_err(format!("frame {j} out of range")));
        }
        Ok(self.inner.data.frame(j).to_vec())
    }

    fn truth_object(&self) -> Option<Vec<Vec<Complex64>>> {
        self.inner.truth_object.as_ref().map(to_rows)
    }

    fn truth_probe(&self) -> Option<Vec<Vec<Complex64>>> {
        self.inner.truth_probe.as_ref().map(to_rows)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(frames={}, object_shape={:?}, probe_shape={:?})",
            self.inner.data.len(),
            self.inner.metadata.object_shape,
            self.inner.metadata.probe_shape
        )
    }
}

#[pyclass(name = "Reconstruction", module = "ptyinr_py")]
struct PyRecon {
    inner: ReconResult,
}

#[pymethods]
impl PyRecon {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_reconstruction(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, overwrite = false))]
    fn save(&self, path: PathBuf, overwrite: bool) -> PyResult<()> {
        save_reconstruction(&path, &self.inner, serde_json::Value::Null, Vec::new(), overwrite).map_err(py_err)
    }

    fn object(&self) -> Vec<Vec<Complex64>> {
        to_rows(&self.inner.object)
    }

    fn probe(&self) -> Vec<Vec<Complex64>> {
        to_rows(&self.inner.probe)
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.inner.loss_history.clone()
    }

    #[getter]
    fn metrics(&self) -> BTreeMap<String, f64> {
        self.inner.metrics.clone()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.provenance.config_hash.clone()
    }
}

/// Builds the phantom and dataset described by a JSON run config.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn simulate(config_json: Option<&str>) -> PyResult<PyDataset> {
    let cfg = config(config_json)?;
    let phantom = make_phantom(&cfg.phantom).map_err(py_err)?;
    let fwhm = probe_fwhm_diameter(&phantom.probe).map_err(py_err)?;
    let step = cfg.scan.resolve_step(fwhm).map_err(py_err)?;
    let sim = build_dataset(&phantom, (step, step), &cfg.noise).map_err(py_err)?;
    Ok(PyDataset {
        inner: DatasetBundle {
            metadata: DatasetMetadata {
                object_shape: cfg.phantom.object_shape,
                probe_shape: cfg.phantom.probe_shape,
                step: (step, step),
                noise: sim.data.noise,
                physical: PhysicalMetadata::default(),
                phantom: Some(phantom.description),
                eval_margin: Some(cfg.phantom.margin()),
            },
            data: sim.data,
            truth_object: Some(phantom.object),
            truth_probe: Some(phantom.probe),
        },
    })
}

/// Neural-field reconstruction; `fixed_probe` freezes the probe.
#[pyfunction]
#[pyo3(signature = (dataset, config_json = None, fixed_probe = None))]
fn reconstruct(dataset: &PyDataset, config_json: Option<&str>, fixed_probe: Option<Vec<Vec<Complex64>>>) -> PyResult<PyRecon> {
    let mut cfg = config(config_json)?;
    let fixed = fixed_probe.map(from_rows).transpose()?;
    if fixed.is_some() {
        cfg.train.probe_mode = ptyinr::engine::ProbeMode::Fixed;
    }
    let mut t = Trainer::new(Arc::new(dataset.inner.data.clone()), cfg.train, cfg.networks, fixed).map_err(py_err)?;
    t.run().map_err(py_err)?;
    Ok(PyRecon {
        inner: t.result().map_err(py_err)?,
    })
}

/// ePIE from a unit object and a Gaussian probe of nominal width.
#[pyfunction]
#[pyo3(signature = (dataset, config_json = None))]
fn epie(dataset: &PyDataset, config_json: Option<&str>) -> PyResult<PyRecon> {
    let cfg = config(config_json)?;
    let (rows, cols) = dataset.inner.metadata.object_shape;
    let (h, w) = dataset.inner.metadata.probe_shape;
    let probe = gaussian_probe((h, w), cfg.phantom.probe_fwhm_fraction * h.min(w) as f64);
    let object = ComplexField::filled(rows, cols, Complex64::new(1.0, 0.0));
    let out = epie_reconstruct(&dataset.inner.data, &object, &probe, &cfg.epie).map_err(py_err)?;
    Ok(PyRecon { inner: out.result })
}

/// Metric report of a reconstruction against the dataset's ground truth.
#[pyfunction]
fn evaluate(recon: &PyRecon, dataset: &PyDataset) -> PyResult<BTreeMap<String, f64>> {
    let d = &dataset.inner;
    let (Some(o), Some(p)) = (&d.truth_object, &d.truth_probe) else {
        return Err(PyValueError::new_err("dataset carries no ground truth"));
    };
    let margin = d.metadata.eval_margin.unwrap_or(d.metadata.probe_shape.0.min(d.metadata.probe_shape.1) / 2);
    metrics::evaluate(&recon.inner.object, &recon.inner.probe, o, p, margin).map_err(py_err)
}

#[pyfunction]
fn psnr(image: Vec<f64>, reference: Vec<f64>, max_value: f64) -> PyResult<f64> {
    metrics::psnr(&image, &reference, max_value).map_err(py_err)
}

/// Returns `(theta, aligned)` with `aligned = recon * exp(i theta)`.
#[pyfunction]
fn align_phase(recon: Vec<Vec<Complex64>>, truth: Vec<Vec<Complex64>>) -> PyResult<(f64, Vec<Vec<Complex64>>)> {
    let (theta, aligned) = align_global_phase(&from_rows(recon)?, &from_rows(truth)?).map_err(py_err)?;
    Ok((theta, to_rows(&aligned)))
}

/// Trainable parameters of the networks in a run config.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn count_params(config_json: Option<&str>) -> PyResult<usize> {
    let cfg = config(config_json)?;
    Ok(core_count_params(&cfg.networks.siren, &cfg.networks.hashgrid))
}

/// Max relative gradient error of the full loss on the toy problem.
#[pyfunction]
#[pyo3(signature = (samples = 200, h = 1e-5, seed = 0))]
fn gradcheck(samples: usize, h: f64, seed: u64) -> PyResult<f64> {
    let r = toy_gradcheck(&ToyGradcheck { samples, h, seed }).map_err(py_err)?;
    Ok(r.max_relative_error)
}

#[pymodule]
fn ptyinr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", ptyinr::provenance::VERSION)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRecon>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(epie, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(align_phase, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
