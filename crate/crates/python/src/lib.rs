//! Python bindings: samples, synthetic channels, precoding, scheduling,
//! localization and campaign planning.

use std::path::PathBuf;

use mamimo_csi::campaign::{plan_campaign, plan_traversal, run_campaign, CampaignSetup};
use mamimo_csi::channel::{add_noise, synth_channel, ChannelConfig, NoiseSpec};
use mamimo_csi::dataset::{load_index, read_sample, write_sample};
use mamimo_csi::localization::{self, FeatureMode, Weighting};
use mamimo_csi::powermap::{synthetic_power_map, SyntheticScene};
use mamimo_csi::precoding::{self, group_spectral_efficiency, mrt_weights, received_power};
use mamimo_csi::scheduling::{self, PoolUser, UserPool};
use mamimo_csi::topology::{build_topology, SceneLayout, TopologyParams};
use mamimo_csi::{LinkBudget, Position3, PrecodingScheme, RadioConfig, SampleGrid, TopologyKind, Traversal};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: mamimo_csi::Error) -> PyErr {
    match e {
        mamimo_csi::Error::Io(io) => PyIOError::new_err(io.to_string()),
        mamimo_csi::Error::MissingFile(p) => PyIOError::new_err(format!("missing file {}", p.display())),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = mamimo_csi::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn budget(noise_dbm: Option<f64>) -> LinkBudget {
    match noise_dbm {
        Some(n) => {
            let radio = RadioConfig::default();
            LinkBudget::from_dbm(radio.tx_power_dbm + radio.rx_gain_db, n)
        }
        None => LinkBudget::default(),
    }
}

fn point((x, y, z): (f64, f64, f64)) -> Position3 {
    Position3::new(x, y, z)
}

/// One channel snapshot: `antennas x subcarriers` complex gains.
#[pyclass(name = "CsiSample", module = "mamimo", from_py_object)]
#[derive(Clone)]
struct PyCsiSample {
    inner: mamimo_csi::CsiSample,
}

#[pymethods]
impl PyCsiSample {
    /// `entries` is antenna-major: entry `m * subcarriers + k`.
    #[new]
    #[pyo3(signature = (antennas, subcarriers, entries, label=None, user_id=0))]
    fn new(
        antennas: usize,
        subcarriers: usize,
        entries: Vec<Complex64>,
        label: Option<(f64, f64, f64)>,
        user_id: u8,
    ) -> PyResult<Self> {
        let mut inner = mamimo_csi::CsiSample::new(antennas, subcarriers, entries).map_err(py_err)?;
        inner.label = label.map(point);
        inner.set_user_id(user_id).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.antennas()
    }

    #[getter]
    fn subcarriers(&self) -> usize {
        self.inner.subcarriers()
    }

    #[getter]
    fn user_id(&self) -> u8 {
        self.inner.user_id()
    }

    #[getter]
    fn label(&self) -> Option<(f64, f64, f64)> {
        self.inner.label.map(|p| (p.x, p.y, p.z))
    }

    #[getter]
    fn sample_id(&self) -> String {
        self.inner.sample_id.to_string()
    }

    fn entries(&self) -> Vec<Complex64> {
        self.inner.entries().to_vec()
    }

    fn get(&self, antenna: usize, subcarrier: usize) -> PyResult<Complex64> {
        if antenna >= self.inner.antennas() || subcarrier >= self.inner.subcarriers() {
            return Err(PyValueError::new_err(format!("entry ({antenna}, {subcarrier}) out of range")));
        }
        Ok(self.inner.get(antenna, subcarrier))
    }

    fn frobenius_norm_sqr(&self) -> f64 {
        self.inner.frobenius_norm_sqr()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "CsiSample(antennas={}, subcarriers={}, user_id={}, label={:?})",
            self.inner.antennas(),
            self.inner.subcarriers(),
            self.inner.user_id(),
            self.label()
        )
    }
}

fn unwrap_samples(samples: &[PyCsiSample]) -> Vec<mamimo_csi::CsiSample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// Synthetic channel at `position` (mm) for one topology, optionally noisy.
#[pyfunction]
#[pyo3(signature = (topology, position, user_id=0, snr_db=None, seed=0, pattern_exponent=0.0))]
fn synth(
    topology: &str,
    position: (f64, f64, f64),
    user_id: u8,
    snr_db: Option<f64>,
    seed: u64,
    pattern_exponent: f64,
) -> PyResult<PyCsiSample> {
    let geometry = build_topology(parse(topology)?, &TopologyParams::default()).map_err(py_err)?;
    let channel = ChannelConfig { pattern_exponent, ..ChannelConfig::default() };
    let p = point(position);
    let clean = synth_channel(&geometry, p, &RadioConfig::default(), &channel, &[], user_id).map_err(py_err)?;
    let csi = match snr_db {
        Some(snr_db) => add_noise(&clean, &NoiseSpec { snr_db, seed }).map_err(py_err)?,
        None => clean,
    };
    Ok(PyCsiSample { inner: csi.with_label(p) })
}

/// Writes a sample file; returns the byte count.
#[pyfunction(name = "write_sample")]
fn py_write_sample(path: PathBuf, sample: &PyCsiSample) -> PyResult<u64> {
    write_sample(path, &sample.inner).map_err(py_err)
}

#[pyfunction(name = "read_sample")]
fn py_read_sample(path: PathBuf) -> PyResult<PyCsiSample> {
    read_sample(path).map(|inner| PyCsiSample { inner }).map_err(py_err)
}

/// Every labelled sample listed in an index CSV, in index order.
#[pyfunction(name = "load_dataset")]
fn py_load_dataset(path: PathBuf) -> PyResult<Vec<PyCsiSample>> {
    let index = load_index(path).map_err(py_err)?;
    index.samples().map(|r| r.map(|(_, inner)| PyCsiSample { inner }).map_err(py_err)).collect()
}

/// Mean received power at `evaluate` of the MRT beam towards `target`.
#[pyfunction]
#[pyo3(signature = (target, evaluate=None, noise_dbm=None))]
fn mrt_received_power(target: &PyCsiSample, evaluate: Option<&PyCsiSample>, noise_dbm: Option<f64>) -> PyResult<f64> {
    let w = mrt_weights(&target.inner).map_err(py_err)?;
    let h = evaluate.map_or(&target.inner, |e| &e.inner);
    Ok(received_power(h, &w, 0, &budget(noise_dbm)).map_err(py_err)?.mean)
}

/// Per-user and sum spectral efficiency (bits/s/Hz) of users served together.
#[pyfunction]
#[pyo3(signature = (users, scheme="zf", noise_dbm=None))]
fn spectral_efficiency(users: Vec<PyCsiSample>, scheme: &str, noise_dbm: Option<f64>) -> PyResult<(Vec<f64>, f64)> {
    let owned = unwrap_samples(&users);
    let refs: Vec<&mamimo_csi::CsiSample> = owned.iter().collect();
    let se = group_spectral_efficiency(&refs, parse::<PrecodingScheme>(scheme)?, &budget(noise_dbm)).map_err(py_err)?;
    Ok((se.per_user, se.sum))
}

#[pyfunction]
#[pyo3(signature = (pool, se_threshold=1.0, trials=11, seed=0, noise_dbm=None))]
fn max_served_users(
    pool: Vec<PyCsiSample>,
    se_threshold: f64,
    trials: usize,
    seed: u64,
    noise_dbm: Option<f64>,
) -> PyResult<usize> {
    precoding::max_served_users(&unwrap_samples(&pool), se_threshold, trials, seed, &budget(noise_dbm)).map_err(py_err)
}

/// Normalised dB map (rows along y) of an MRT or ZF beam on a square grid,
/// plus the `(ix, iy)` of its peak.
#[pyfunction]
#[pyo3(signature = (topology, nodes=51, resolution_mm=None, centre=None, target=None, scheme="mrt"))]
fn power_map(
    topology: &str,
    nodes: usize,
    resolution_mm: Option<f64>,
    centre: Option<(f64, f64, f64)>,
    target: Option<(f64, f64, f64)>,
    scheme: &str,
) -> PyResult<(Vec<Vec<f64>>, (usize, usize))> {
    let layout = SceneLayout::default();
    let geometry = build_topology(parse(topology)?, &TopologyParams::for_layout(&layout)).map_err(py_err)?;
    let radio = RadioConfig::default();
    let channel = ChannelConfig::default();
    let scene = SyntheticScene { geometry: &geometry, radio: &radio, channel: &channel, scatterers: &[], user_id: 0 };
    let resolution = resolution_mm.unwrap_or(layout.roi_width_mm() / nodes.saturating_sub(1).max(1) as f64);
    let grid = SampleGrid::centred(centre.map_or(layout.roi_centre(), point), nodes, resolution).map_err(py_err)?;
    let target = target.map_or(layout.roi_centre(), point);
    let map = synthetic_power_map(&grid, &scene, target, parse(scheme)?, &LinkBudget::default()).map_err(py_err)?;
    let db = map.normalized_db();
    let rows = db.chunks(grid.nx()).map(<[f64]>::to_vec).collect();
    Ok((rows, map.argmax_node()))
}

fn pool_from_samples(samples: &[PyCsiSample]) -> PyResult<UserPool> {
    UserPool::from_labelled(unwrap_samples(samples)).map_err(py_err)
}

/// DEF grouping of labelled samples; groups hold sample indices.
#[pyfunction]
fn def_schedule(samples: Vec<PyCsiSample>, group_size: usize) -> PyResult<Vec<Vec<usize>>> {
    let pool = pool_from_samples(&samples)?;
    Ok(scheduling::def_schedule(&pool, group_size).map_err(py_err)?.groups)
}

/// SUS grouping of samples, by repeated selection on the unplaced users.
#[pyfunction]
#[pyo3(signature = (samples, group_size, alpha=0.3))]
fn sus_schedule(samples: Vec<PyCsiSample>, group_size: usize, alpha: f64) -> PyResult<Vec<Vec<usize>>> {
    let pool = pool_with_any_labels(&samples)?;
    Ok(scheduling::sus_schedule(&pool, alpha, group_size).map_err(py_err)?.groups)
}

/// One SUS pass; indices in selection order.
#[pyfunction]
#[pyo3(signature = (samples, max_users, alpha=0.3))]
fn sus_select(samples: Vec<PyCsiSample>, max_users: usize, alpha: f64) -> PyResult<Vec<usize>> {
    let pool = pool_with_any_labels(&samples)?;
    scheduling::sus_select(&pool, alpha, max_users).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (users, group_size, seed=0))]
fn random_schedule(users: usize, group_size: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(scheduling::random_schedule(users, group_size, seed).map_err(py_err)?.groups)
}

/// SUS only looks at channels, so unlabelled samples sit at the origin.
fn pool_with_any_labels(samples: &[PyCsiSample]) -> PyResult<UserPool> {
    let users = samples
        .iter()
        .enumerate()
        .map(|(i, s)| PoolUser { user_ref: i, csi: s.inner.clone(), position: s.inner.label.unwrap_or(Position3::ORIGIN) })
        .collect();
    UserPool::new(users).map_err(py_err)
}

/// kNN fingerprint database over labelled samples.
#[pyclass(name = "FingerprintDb", module = "mamimo")]
struct PyFingerprintDb {
    inner: localization::FingerprintDb,
}

#[pymethods]
impl PyFingerprintDb {
    /// `mode` is `raw`, `magnitude` or `phase`.
    #[new]
    #[pyo3(signature = (samples, mode="raw"))]
    fn new(samples: Vec<PyCsiSample>, mode: &str) -> PyResult<Self> {
        let mode: FeatureMode = parse(mode)?;
        let inner = localization::build_fingerprints(samples.into_iter().map(|s| Ok(s.inner)), mode, None)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        localization::FingerprintDb::load(path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (query, k=5, weighting="idw"))]
    fn locate(&self, query: &PyCsiSample, k: usize, weighting: &str) -> PyResult<(f64, f64, f64)> {
        let p = localization::knn_locate(&self.inner, &query.inner, k, parse::<Weighting>(weighting)?).map_err(py_err)?;
        Ok((p.x, p.y, p.z))
    }

    /// `(mean, median, p95)` leave-one-out error in mm.
    #[pyo3(signature = (k=5, weighting="idw"))]
    fn leave_one_out(&self, k: usize, weighting: &str) -> PyResult<(f64, f64, f64)> {
        let r = localization::leave_one_out(&self.inner, k, parse::<Weighting>(weighting)?).map_err(py_err)?;
        Ok((r.mean_mm, r.median_mm, r.p95_mm))
    }
}

/// Waypoints per positioner and the per-positioner duration in hours for
/// the default layout.
#[pyfunction]
#[pyo3(signature = (pattern="serpentine"))]
fn campaign_plan(pattern: &str) -> PyResult<(Vec<usize>, f64)> {
    let grids = SceneLayout::default().positioner_grids().map_err(py_err)?;
    let pattern: Traversal = parse(pattern)?;
    let plan = plan_campaign(&grids, pattern).map_err(py_err)?;
    let counts = plan.positioners.iter().map(|p| p.waypoints.len()).collect();
    let hours = plan_traversal(&grids[0], pattern).map_err(py_err)?.duration_estimate().as_secs_f64() / 3600.0;
    Ok((counts, hours))
}

/// Runs a simulated campaign over a `nodes x nodes` patch of positioner 0
/// and writes samples plus `index.csv` to `out_dir`; returns the index path.
#[pyfunction]
#[pyo3(signature = (out_dir, nodes=5, topology="ura", resolution_mm=None))]
fn simulate_campaign(out_dir: PathBuf, nodes: usize, topology: &str, resolution_mm: Option<f64>) -> PyResult<String> {
    let layout = SceneLayout::default();
    let kind: TopologyKind = parse(topology)?;
    let geometry = build_topology(kind, &TopologyParams::for_layout(&layout)).map_err(py_err)?;
    let origin = layout.positioner_grid(0).map_err(py_err)?.origin;
    let grid = SampleGrid::square(origin, nodes, resolution_mm.unwrap_or(layout.resolution_mm)).map_err(py_err)?;
    let plan = plan_traversal(&grid, Traversal::Serpentine).map_err(py_err)?;
    let outcome = run_campaign(&plan, &CampaignSetup::new(geometry, RadioConfig::default()), &out_dir).map_err(py_err)?;
    Ok(outcome.index_path.display().to_string())
}

#[pymodule]
fn mamimo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCsiSample>()?;
    m.add_class::<PyFingerprintDb>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(py_write_sample, m)?)?;
    m.add_function(wrap_pyfunction!(py_read_sample, m)?)?;
    m.add_function(wrap_pyfunction!(py_load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(mrt_received_power, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(max_served_users, m)?)?;
    m.add_function(wrap_pyfunction!(power_map, m)?)?;
    m.add_function(wrap_pyfunction!(def_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(sus_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(sus_select, m)?)?;
    m.add_function(wrap_pyfunction!(random_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(campaign_plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_campaign, m)?)?;
    Ok(())
}
