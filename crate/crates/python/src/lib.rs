//! Python bindings: world generation, embedding, gallery matching, tracking,
//! protection and whole experiments.

// triggered by the pyo3 function macros, not by this code
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trackgame::harness::{self, ExperimentConfig};
use trackgame::protection::Scheme;
use trackgame::tracking::{self, Query, TrackingReport, TrackingScenario};
use trackgame::world::{self, ExtractorId, IdentityLabel, WorldParams};
use trackgame::{Embedding, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::ZeroVector => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn unit(v: Vec<f64>) -> PyResult<Embedding> {
    Embedding::normalize(&v).map_err(py_err)
}

fn parse_config(toml: &str, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_toml_str(toml).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// A generated or loaded synthetic world.
#[pyclass(frozen)]
struct World {
    inner: world::World,
}

#[pymethods]
impl World {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn dims(&self) -> usize {
        self.inner.dims
    }

    #[getter]
    fn n_images(&self) -> usize {
        self.inner.images.len()
    }

    #[getter]
    fn n_extractors(&self) -> usize {
        self.inner.extractors.len()
    }

    /// `(image_id, identity, latent, protected)` tuples in generation order.
    fn images(&self) -> Vec<(u64, u64, Vec<f64>, bool)> {
        self.inner
            .images
            .iter()
            .map(|r| (r.image_id, r.identity.0, r.latent.clone(), r.protected))
            .collect()
    }

    /// Unit-norm embedding of `latent` under extractor `extractor`.
    fn embed(&self, extractor: u64, latent: Vec<f64>) -> PyResult<Vec<f64>> {
        let e = self.inner.extractor(ExtractorId(extractor)).map_err(py_err)?;
        Ok(e.embed(&latent).map_err(py_err)?.into_vec())
    }

    /// Writes the world as an embedding file.
    fn export(&self, path: PathBuf) -> PyResult<()> {
        trackgame::format::export_world(&self.inner, path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "World(seed={}, dims={}, images={}, extractors={})",
            self.inner.seed,
            self.inner.dims,
            self.inner.images.len(),
            self.inner.extractors.len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (seed=42, n_identities=500, images_per_identity=20, dims=128, intra_sigma=0.25,
                    n_extractors=4, extractor_noise=0.05, aux_pool_size=2000))]
#[allow(clippy::too_many_arguments)]
fn generate_world(
    seed: u64,
    n_identities: usize,
    images_per_identity: usize,
    dims: usize,
    intra_sigma: f64,
    n_extractors: usize,
    extractor_noise: f64,
    aux_pool_size: usize,
) -> PyResult<World> {
    let params = WorldParams {
        n_identities,
        images_per_identity,
        dims,
        intra_sigma,
        n_extractors,
        extractor_noise,
        aux_pool_size,
    };
    Ok(World {
        inner: world::generate_world(&params, seed).map_err(py_err)?,
    })
}

#[pyfunction]
fn load_world(path: PathBuf) -> PyResult<World> {
    Ok(World {
        inner: trackgame::format::import_embeddings(path).map_err(py_err)?,
    })
}

/// Cosine dissimilarity `1 - a.b` of two vectors after normalization.
#[pyfunction]
fn dissimilarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    trackgame::dissimilarity(&unit(a)?, &unit(b)?).map_err(py_err)
}

/// Append-only gallery with exact nearest-neighbour recognition.
#[pyclass]
#[derive(Clone)]
struct Gallery {
    inner: trackgame::GalleryDatabase,
}

#[pymethods]
impl Gallery {
    #[new]
    fn new() -> Self {
        Gallery {
            inner: trackgame::GalleryDatabase::new(),
        }
    }

    /// Inserts a (normalized) embedding; returns its insertion index.
    fn insert(&mut self, embedding: Vec<f64>, identity: u64, image_id: u64) -> PyResult<usize> {
        self.inner
            .insert(unit(embedding)?, IdentityLabel(identity), image_id)
            .map_err(py_err)
    }

    /// `(identity, score, image_id, insertion_index)` of the best match.
    fn recognize(&self, query: Vec<f64>) -> PyResult<(u64, f64, u64, usize)> {
        let m = self.inner.recognize(&unit(query)?).map_err(py_err)?;
        Ok((m.identity.0, m.best_score, m.matched_record, m.insertion_index))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn report_dict<'py>(py: Python<'py>, r: &TrackingReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("strategy", r.strategy.to_string())?;
    d.set_item("total_iterations", r.total_iterations)?;
    d.set_item("tsr", r.cumulative_tsr)?;
    d.set_item("psr", r.cumulative_psr)?;
    d.set_item("false_positives", r.cumulative_false_positives)?;
    let its: Vec<(usize, Vec<u64>, usize, usize, usize)> = r
        .iterations
        .iter()
        .map(|i| {
            (
                i.iteration,
                i.recognized_image_ids.clone(),
                i.true_positives,
                i.false_positives,
                i.gallery_size_after,
            )
        })
        .collect();
    d.set_item("iterations", its)?;
    Ok(d)
}

/// Tracks `trackee` through `queries` (`(image_id, identity, embedding)`
/// tuples). `strategy` is "static" or "dynamic".
#[pyfunction]
#[pyo3(signature = (gallery, queries, trackee, strategy="dynamic"))]
fn track<'py>(
    py: Python<'py>,
    gallery: &Gallery,
    queries: Vec<(u64, u64, Vec<f64>)>,
    trackee: u64,
    strategy: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let qs = queries
        .into_iter()
        .map(|(id, ident, e)| {
            Ok(Query {
                image_id: id,
                identity: IdentityLabel(ident),
                embedding: unit(e)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let sc = TrackingScenario::default();
    let t = IdentityLabel(trackee);
    let r = match strategy {
        "static" => tracking::run_static(&gallery.inner, &qs, t, &sc),
        "dynamic" => tracking::run_dynamic(gallery.inner.clone(), &qs, t, &sc),
        other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
    }
    .map_err(py_err)?;
    report_dict(py, &r)
}

/// Protects every image of `identity` with `scheme`, using the protection
/// section of `config` (TOML, experiment schema). Returns
/// `(image_id, latent, displacement)` tuples in generation order.
#[pyfunction]
#[pyo3(signature = (world, identity, scheme="divtrackee", config="", seed=0))]
fn protect_identity(
    world: &World,
    identity: u64,
    scheme: &str,
    config: &str,
    seed: u64,
) -> PyResult<Vec<(u64, Vec<f64>, f64)>> {
    let scheme = Scheme::ALL
        .into_iter()
        .find(|s| s.name() == scheme)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scheme `{scheme}`")))?;
    let mut pconf = parse_config(config, None, None)?.protection;
    pconf.seed = seed;
    let imgs: Vec<_> = world.inner.images_of(IdentityLabel(identity)).cloned().collect();
    if imgs.is_empty() {
        return Err(PyValueError::new_err(format!("no images for identity {identity}")));
    }
    let set = trackgame::protection::baseline_protect(scheme, &imgs, &pconf, &world.inner).map_err(py_err)?;
    Ok(set
        .images
        .into_iter()
        .map(|p| (p.record.image_id, p.record.latent, p.displacement))
        .collect())
}

fn aggregates_list<'py>(py: Python<'py>, aggs: &[harness::Aggregate]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    aggs.iter()
        .map(|a| {
            let d = PyDict::new_bound(py);
            d.set_item("scheme", a.scheme.to_string())?;
            d.set_item("initial_knowledge", a.knowledge.to_string())?;
            d.set_item("strategy", a.strategy.to_string())?;
            d.set_item("tsr", a.tsr)?;
            d.set_item("psr", a.psr)?;
            d.set_item("fp_mean", a.fp_mean)?;
            d.set_item("mean_iterations", a.mean_iterations)?;
            d.set_item("mean_displacement", a.mean_displacement)?;
            Ok(d)
        })
        .collect()
}

/// Runs the experiment described by `config` (TOML). With `out`, report
/// files are written there; otherwise results stay in memory. Returns one
/// dict per (scheme, knowledge, strategy) cell.
#[pyfunction]
#[pyo3(signature = (config="", seed=None, out=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let write = out.is_some();
    let cfg = parse_config(config, seed, out)?;
    let aggs = py.allow_threads(|| {
        if write {
            harness::run_experiment(&cfg).map(|w| w.aggregates)
        } else {
            harness::run_experiment_in_memory(&cfg).map(|r| r.aggregates)
        }
    });
    aggregates_list(py, &aggs.map_err(py_err)?)
}

/// The default experiment config as TOML.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_toml_string()
}

#[pymodule]
fn trackgame_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<World>()?;
    m.add_class::<Gallery>()?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(load_world, m)?)?;
    m.add_function(wrap_pyfunction!(dissimilarity, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(protect_identity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
