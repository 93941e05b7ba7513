//! Python bindings for `castelo_core`.
//!
//! Build with `--features extension-module` to produce an importable
//! `castelo` module.

use std::collections::BTreeMap;
use std::path::PathBuf;

use castelo_core::{clustering, contacts, fep, geometry, model_io, pipeline, ranking, subtypes, synth};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Topology", module = "castelo")]
#[derive(Clone)]
struct PyTopology {
    inner: model_io::Topology,
}

#[pymethods]
impl PyTopology {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model_io::parse_topology(&path).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model_io::parse_topology_str(text).map_err(value_err)?,
        })
    }

    #[getter]
    fn atom_count(&self) -> usize {
        self.inner.atom_count()
    }

    #[getter]
    fn ligand_indices(&self) -> Vec<usize> {
        self.inner.ligand_indices().to_vec()
    }

    #[getter]
    fn protein_indices(&self) -> Vec<usize> {
        self.inner.protein_indices().to_vec()
    }

    /// `[(index, name, type, sigma, epsilon, role), ...]`
    fn atoms(&self) -> Vec<(usize, String, String, f64, f64, String)> {
        self.inner
            .atoms()
            .iter()
            .map(|a| {
                let role = match a.role {
                    model_io::Role::Ligand => "ligand",
                    model_io::Role::Protein => "protein",
                    model_io::Role::Other => "other",
                };
                (a.index, a.name.clone(), a.atom_type.clone(), a.sigma, a.epsilon, role.to_string())
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Topology(atoms={}, ligand={}, protein={})",
            self.inner.atom_count(),
            self.inner.ligand_count(),
            self.inner.protein_count()
        )
    }
}

#[pyclass(name = "Trajectory", module = "castelo")]
#[derive(Clone)]
struct PyTrajectory {
    inner: model_io::TrajectoryFrameSeries,
}

#[pymethods]
impl PyTrajectory {
    #[staticmethod]
    fn load(path: PathBuf, topology: &PyTopology) -> PyResult<Self> {
        Ok(Self {
            inner: model_io::parse_trajectory(&path, &topology.inner).map_err(value_err)?,
        })
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn atom_count(&self) -> usize {
        self.inner.atom_count()
    }

    #[getter]
    fn frame_stride_ps(&self) -> f64 {
        self.inner.frame_stride_ps
    }

    fn frame(&self, t: usize) -> PyResult<Vec<[f64; 3]>> {
        if t >= self.inner.frame_count() {
            return Err(PyValueError::new_err(format!("frame {t} out of range")));
        }
        Ok(self.inner.frame(t).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count()
    }
}

/// Subtype id → member atom indices.
#[pyfunction]
#[pyo3(signature = (topology, tolerance = subtypes::DEFAULT_TOLERANCE))]
fn subtype_map(topology: &PyTopology, tolerance: f64) -> PyResult<BTreeMap<usize, Vec<usize>>> {
    let map = subtypes::build_subtype_map(&topology.inner, tolerance).map_err(value_err)?;
    Ok(map.subtype_members.into_iter().enumerate().collect())
}

/// Binary N × M contact matrix of one frame against the pocket selection.
#[pyfunction]
#[pyo3(signature = (trajectory, topology, frame, cutoff = 4.5, pocket_radius = 10.0, all_protein = false, heavy_atoms_only = false))]
fn contact_matrix(
    trajectory: &PyTrajectory,
    topology: &PyTopology,
    frame: usize,
    cutoff: f64,
    pocket_radius: f64,
    all_protein: bool,
    heavy_atoms_only: bool,
) -> PyResult<Vec<Vec<u8>>> {
    let cfg = contacts::ContactConfig {
        cutoff,
        pocket_radius,
        all_protein,
        heavy_atoms_only,
        ..contacts::ContactConfig::default()
    };
    if frame >= trajectory.inner.frame_count() {
        return Err(PyValueError::new_err(format!("frame {frame} out of range")));
    }
    let sel = contacts::select_pocket(&trajectory.inner, &topology.inner, &cfg).map_err(value_err)?;
    let m = contacts::contact_matrix(trajectory.inner.frame(frame), frame, &topology.inner, &sel, &cfg);
    Ok((0..m.rows()).map(|i| m.row(i).to_vec()).collect())
}

/// Returns `(rotation, translation, rmsd)` superposing `moving` onto `target`.
#[pyfunction]
fn kabsch(moving: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<([[f64; 3]; 3], [f64; 3], f64)> {
    let s = geometry::kabsch(&moving, &target).map_err(value_err)?;
    Ok((s.rotation, s.translation, s.rmsd_after))
}

#[pyfunction]
fn ligand_rmsd(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>, align_on: Vec<usize>, measure_on: Vec<usize>) -> PyResult<f64> {
    let n = a.len();
    if align_on.iter().chain(&measure_on).any(|&i| i >= n) {
        return Err(PyValueError::new_err("atom index out of range"));
    }
    geometry::ligand_rmsd(&a, &b, &align_on, &measure_on).map_err(value_err)
}

#[pyfunction]
fn cossim(a: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
    ranking::cossim_values(&a, &s).map_err(value_err)
}

#[pyfunction]
fn avgdiff(a: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
    ranking::avgdiff_values(&a, &s).map_err(value_err)
}

/// Labels per point, −1 for noise.
#[pyfunction]
#[pyo3(signature = (points, min_cluster_size = 50, min_samples = None))]
fn hdbscan(points: Vec<Vec<f64>>, min_cluster_size: usize, min_samples: Option<usize>) -> PyResult<Vec<i64>> {
    let cfg = clustering::HdbscanConfig {
        min_cluster_size,
        min_samples,
    };
    Ok(clustering::hdbscan(&points, &cfg).map_err(value_err)?.labels)
}

/// `(delta_f, stderr)` in kcal/mol.
#[pyfunction]
#[pyo3(signature = (delta_u, temperature = fep::DEFAULT_TEMPERATURE, seed = fep::DEFAULT_BOOTSTRAP_SEED))]
fn zwanzig(delta_u: Vec<f64>, temperature: f64, seed: u64) -> PyResult<(f64, f64)> {
    let samples = fep::EnergySamples::new(delta_u, temperature).map_err(value_err)?;
    let r = fep::zwanzig_seeded(&samples, seed).map_err(value_err)?;
    Ok((r.delta_f, r.stderr))
}

/// `(crs, log10_crs)` of a ΔΔF against a reference ΔΔF.
#[pyfunction]
#[pyo3(signature = (ddf, reference, temperature = fep::DEFAULT_TEMPERATURE))]
fn relative_sweetness(ddf: f64, reference: f64, temperature: f64) -> PyResult<(f64, f64)> {
    let r = fep::computed_relative_sweetness(ddf, reference, temperature).map_err(value_err)?;
    Ok((r.crs, r.log10_crs))
}

/// Writes topology.json, trajectory.xyz and ground_truth.json into `out`;
/// returns the planted flip rate per subtype.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, frames = None, spec_json = None))]
fn synth_system(out: PathBuf, seed: u64, frames: Option<usize>, spec_json: Option<&str>) -> PyResult<BTreeMap<usize, f64>> {
    let mut spec: synth::SynthSpec = match spec_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => synth::SynthSpec::default(),
    };
    spec.seed = seed;
    if let Some(f) = frames {
        spec.frames = f;
    }
    let generated = synth::generate(&spec).map_err(value_err)?;
    castelo_core::cli::write_synth(&out, &generated).map_err(|e| PyRuntimeError::new_err(e.message))?;
    Ok(generated.ground_truth.flip_rates)
}

fn parse_stage(name: &str) -> PyResult<pipeline::Stage> {
    use pipeline::Stage::*;
    Ok(match name {
        "subtype" => Subtype,
        "contacts" => Contacts,
        "refcluster" => RefCluster,
        "train" => Train,
        "cluster" => Cluster,
        "rank" => Rank,
        "report" => Report,
        other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
    })
}

/// Runs the pipeline up to `until`. `config_json` is a config document;
/// path arguments override its `paths` section.
#[pyfunction]
#[pyo3(signature = (config_json = None, topology = None, trajectory = None, workdir = None, until = "report"))]
fn run_pipeline(
    py: Python<'_>,
    config_json: Option<&str>,
    topology: Option<PathBuf>,
    trajectory: Option<PathBuf>,
    workdir: Option<PathBuf>,
    until: &str,
) -> PyResult<PyObject> {
    let mut cfg: pipeline::PipelineConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => pipeline::PipelineConfig::default(),
    };
    if topology.is_some() {
        cfg.paths.topology = topology;
    }
    if trajectory.is_some() {
        cfg.paths.trajectory = trajectory;
    }
    if workdir.is_some() {
        cfg.paths.workdir = workdir;
    }
    let stage = parse_stage(until)?;
    let outcome = py
        .allow_threads(|| pipeline::run_until(&cfg, stage, true))
        .map_err(|e| match e.kind {
            pipeline::ErrorKind::Config => PyValueError::new_err(e.message),
            _ => PyRuntimeError::new_err(e.to_json_line()),
        })?;
    let out = pyo3::types::PyDict::new_bound(py);
    out.set_item("workdir", outcome.workdir)?;
    let stages: Vec<(String, String)> = outcome.stages.iter().map(|s| (s.stage.clone(), s.status.clone())).collect();
    out.set_item("stages", stages)?;
    if let Some(report) = outcome.report {
        out.set_item("suggestion", report.suggestion())?;
        let metrics: BTreeMap<usize, (f64, f64, f64, f64, usize)> = report
            .metrics
            .iter()
            .map(|m| (m.subtype_id, (m.cossim_mean, m.cossim_std, m.avgdiff_mean, m.avgdiff_std, m.rank)))
            .collect();
        out.set_item("metrics", metrics)?;
    }
    Ok(out.into())
}

#[pymodule]
fn castelo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(subtype_map, m)?)?;
    m.add_function(wrap_pyfunction!(contact_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch, m)?)?;
    m.add_function(wrap_pyfunction!(ligand_rmsd, m)?)?;
    m.add_function(wrap_pyfunction!(cossim, m)?)?;
    m.add_function(wrap_pyfunction!(avgdiff, m)?)?;
    m.add_function(wrap_pyfunction!(hdbscan, m)?)?;
    m.add_function(wrap_pyfunction!(zwanzig, m)?)?;
    m.add_function(wrap_pyfunction!(relative_sweetness, m)?)?;
    m.add_function(wrap_pyfunction!(synth_system, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
