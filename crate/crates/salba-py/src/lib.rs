//! Python bindings for the salba library: pose algebra, saliency maps and
//! weights, motion entropy, the synthetic odometry pipeline, and trajectory
//! metrics.
//!
//! Trajectories cross the language boundary as plain row tuples in TUM
//! column order `(t, tx, ty, tz, qx, qy, qz, qw)`, so they drop straight
//! into `numpy.array` and compare exactly under `==` for determinism
//! checks. Structured results come back as small frozen classes.

use std::path::PathBuf;

use nalgebra::{DMatrix, Matrix6, Vector2, Vector3, Vector6};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use salba::entropy::{self, EntropyGateConfig};
use salba::eval::{self, Alignment, TimedPose, Trajectory, DEFAULT_MAX_DT};
use salba::geometry::SE3Pose;
use salba::pipeline::{self, frame_timestamp, OdometryOptions, ScenarioConfig, Weighting};
use salba::saliency::{self, EmaState, SaliencyMap};

/// One trajectory row in TUM column order.
type TumRow = (f64, f64, f64, f64, f64, f64, f64, f64);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pose_row(timestamp: f64, pose: &SE3Pose) -> TumRow {
    let q = pose.rotation.coords;
    let t = pose.translation;
    (timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w)
}

fn rows_from_trajectory(traj: &[TimedPose]) -> Vec<TumRow> {
    traj.iter().map(|e| pose_row(e.timestamp, &e.pose)).collect()
}

fn trajectory_from_rows(rows: &[TumRow]) -> PyResult<Trajectory> {
    let entries = rows
        .iter()
        .map(|&(t, tx, ty, tz, qx, qy, qz, qw)| TimedPose {
            timestamp: t,
            pose: SE3Pose::from_wxyz(qw, qx, qy, qz, Vector3::new(tx, ty, tz)),
        })
        .collect();
    Trajectory::new(entries).map_err(value_err)
}

/// A rigid camera pose (world-to-camera rotation and translation).
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Pose {
    inner: SE3Pose,
}

#[pymethods]
impl Pose {
    /// Builds a pose from a translation and an xyzw quaternion, which is
    /// normalized on the way in.
    #[new]
    fn new(tx: f64, ty: f64, tz: f64, qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        Self { inner: SE3Pose::from_wxyz(qw, qx, qy, qz, Vector3::new(tx, ty, tz)) }
    }

    #[staticmethod]
    fn identity() -> Self {
        Self { inner: SE3Pose::identity() }
    }

    /// Exponential map of a twist `(rx, ry, rz, vx, vy, vz)`, rotation first.
    #[staticmethod]
    fn exp(twist: [f64; 6]) -> Self {
        Self { inner: SE3Pose::exp(&Vector6::from_column_slice(&twist)) }
    }

    /// Inverse of `exp`: the twist whose exponential is this pose.
    fn log(&self) -> [f64; 6] {
        let v = self.inner.log();
        [v[0], v[1], v[2], v[3], v[4], v[5]]
    }

    fn compose(&self, other: &Pose) -> Pose {
        Pose { inner: self.inner.compose(&other.inner) }
    }

    fn inverse(&self) -> Pose {
        Pose { inner: self.inner.inverse() }
    }

    fn transform_point(&self, point: (f64, f64, f64)) -> (f64, f64, f64) {
        let p = self.inner.transform_point(&Vector3::new(point.0, point.1, point.2));
        (p.x, p.y, p.z)
    }

    /// Camera center in the world frame, `-R^T t`.
    fn camera_center(&self) -> (f64, f64, f64) {
        let c = self.inner.camera_center();
        (c.x, c.y, c.z)
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation;
        (t.x, t.y, t.z)
    }

    #[getter]
    fn quaternion_xyzw(&self) -> (f64, f64, f64, f64) {
        let q = self.inner.rotation.coords;
        (q.x, q.y, q.z, q.w)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation;
        let q = self.inner.rotation.coords;
        format!("Pose(t=({:.6}, {:.6}, {:.6}), q_xyzw=({:.6}, {:.6}, {:.6}, {:.6}))", t.x, t.y, t.z, q.x, q.y, q.z, q.w)
    }
}

/// An 8-bit saliency map with bilinear sampling and the ramp weight.
#[pyclass(name = "SaliencyMap", skip_from_py_object)]
#[derive(Clone)]
struct PySaliencyMap {
    inner: SaliencyMap,
}

#[pymethods]
impl PySaliencyMap {
    /// Builds a map from a row-major byte buffer of length `width * height`.
    #[new]
    fn new(width: u32, height: u32, values: Vec<u8>) -> PyResult<Self> {
        if width == 0 || height == 0 {
            return Err(PyValueError::new_err("map dimensions must be at least 1x1"));
        }
        if values.len() != width as usize * height as usize {
            return Err(PyValueError::new_err(format!(
                "value buffer has {} bytes, expected {}",
                values.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self { inner: SaliencyMap::new(width, height, values) })
    }

    #[staticmethod]
    fn constant(width: u32, height: u32, value: u8) -> PyResult<Self> {
        if width == 0 || height == 0 {
            return Err(PyValueError::new_err("map dimensions must be at least 1x1"));
        }
        Ok(Self { inner: SaliencyMap::constant(width, height, value) })
    }

    /// Reads a binary (P5, maxval 255) PGM file.
    #[staticmethod]
    fn read_pgm(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: saliency::read_pgm(&path).map_err(value_err)? })
    }

    fn write_pgm(&self, path: PathBuf) -> PyResult<()> {
        saliency::write_pgm(&self.inner, &path).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    /// Row-major pixel buffer as bytes.
    fn values<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.values())
    }

    fn get(&self, x: u32, y: u32) -> PyResult<u8> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!(
                "pixel ({x}, {y}) outside {}x{} map",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.get(x, y))
    }

    /// Bilinearly interpolated intensity at a subpixel position.
    fn sample(&self, u: f64, v: f64) -> PyResult<f64> {
        self.inner.sample_bilinear(&Vector2::new(u, v)).map_err(value_err)
    }

    /// Observation weight at a subpixel position: `min((p + b) / 255, 1)`
    /// over the bilinearly sampled intensity `p`.
    #[pyo3(signature = (u, v, b = saliency::DEFAULT_WEIGHT_BIAS))]
    fn weight_at(&self, u: f64, v: f64, b: f64) -> PyResult<f64> {
        saliency::weight_at(&self.inner, &Vector2::new(u, v), b).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("SaliencyMap({}x{})", self.inner.width(), self.inner.height())
    }
}

/// The correlation-gained EMA filter over a saliency stream. Feed frames in
/// order with `filter`; the first frame passes through unchanged.
#[pyclass]
struct AdaptiveEma {
    state: EmaState,
}

#[pymethods]
impl AdaptiveEma {
    #[new]
    #[pyo3(signature = (gain_floor = saliency::DEFAULT_GAIN_FLOOR))]
    fn new(gain_floor: f64) -> PyResult<Self> {
        if !gain_floor.is_finite() || !(0.0..=1.0).contains(&gain_floor) {
            return Err(PyValueError::new_err(format!("gain floor {gain_floor} outside [0, 1]")));
        }
        Ok(Self { state: EmaState::new(gain_floor) })
    }

    fn filter(&mut self, map: &PySaliencyMap) -> PyResult<PySaliencyMap> {
        let (state, filtered) = saliency::adaptive_ema(self.state.clone(), &map.inner).map_err(value_err)?;
        self.state = state;
        Ok(PySaliencyMap { inner: filtered })
    }
}

fn matrix6_from_rows(rows: &[Vec<f64>]) -> PyResult<Matrix6<f64>> {
    if rows.len() != 6 || rows.iter().any(|r| r.len() != 6) {
        return Err(PyValueError::new_err("covariance must be 6x6"));
    }
    Ok(Matrix6::from_fn(|i, j| rows[i][j]))
}

/// Differential entropy of a 6-dof Gaussian with the given covariance,
/// `3 (1 + ln 2 pi) + ln det / 2` in nats.
#[pyfunction]
fn motion_entropy(covariance: Vec<Vec<f64>>) -> PyResult<f64> {
    entropy::motion_entropy(&matrix6_from_rows(&covariance)?).map_err(value_err)
}

/// Differential entropy of an m-dof Gaussian covariance (square, any m).
#[pyfunction]
fn differential_entropy(covariance: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = covariance.len();
    if m == 0 || covariance.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("covariance must be square and non-empty"));
    }
    let matrix = DMatrix::from_fn(m, m, |i, j| covariance[i][j]);
    entropy::differential_entropy(&matrix).map_err(value_err)
}

/// Entropy reduction `log(beta_baseline / beta_method)` in the given base.
#[pyfunction]
#[pyo3(signature = (beta_baseline, beta_method, log_base = 2.0))]
fn entropy_reduction(beta_baseline: f64, beta_method: f64, log_base: f64) -> PyResult<f64> {
    entropy::entropy_reduction(beta_baseline, beta_method, log_base).map_err(value_err)
}

/// Loads a TUM trajectory file into rows.
#[pyfunction]
fn load_tum(path: PathBuf) -> PyResult<Vec<TumRow>> {
    Ok(rows_from_trajectory(eval::load_tum(&path).map_err(value_err)?.entries()))
}

/// Writes rows as a TUM trajectory file.
#[pyfunction]
fn write_tum(rows: Vec<TumRow>, path: PathBuf) -> PyResult<()> {
    eval::write_tum(&trajectory_from_rows(&rows)?, &path).map_err(value_err)
}

/// Absolute trajectory error of an estimate against a reference.
#[pyclass(frozen, skip_from_py_object)]
struct AteReport {
    #[pyo3(get)]
    mean: f64,
    #[pyo3(get)]
    rmse: f64,
    /// Per-matched-pair translation error in meters, in time order.
    #[pyo3(get)]
    errors: Vec<f64>,
    #[pyo3(get)]
    scale: f64,
    #[pyo3(get)]
    matched_pairs: usize,
}

#[pymethods]
impl AteReport {
    fn __repr__(&self) -> String {
        format!(
            "AteReport(mean={:.6}, rmse={:.6}, scale={:.6}, matched_pairs={})",
            self.mean, self.rmse, self.scale, self.matched_pairs
        )
    }
}

/// Associates two trajectories by timestamp, aligns the estimate onto the
/// reference (`"sim3"`, `"se3"`, or `"none"`), and reports translation-only
/// ATE.
#[pyfunction]
#[pyo3(signature = (est, reference, alignment = "sim3", max_dt = DEFAULT_MAX_DT))]
fn ate(est: Vec<TumRow>, reference: Vec<TumRow>, alignment: &str, max_dt: f64) -> PyResult<AteReport> {
    let alignment = match alignment {
        "sim3" => Alignment::Sim3,
        "se3" => Alignment::Se3,
        "none" => Alignment::None,
        other => return Err(PyValueError::new_err(format!("unknown alignment {other:?}, use sim3, se3, or none"))),
    };
    let result = eval::compute_ate(&trajectory_from_rows(&est)?, &trajectory_from_rows(&reference)?, alignment, max_dt)
        .map_err(value_err)?;
    Ok(AteReport {
        mean: result.mean,
        rmse: result.rmse,
        errors: result.errors,
        scale: result.alignment.scale,
        matched_pairs: result.matched_pairs,
    })
}

/// A synthetic-world recipe; everything downstream is reproducible from it.
#[pyclass(name = "ScenarioConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyScenarioConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenarioConfig {
    /// Parses and validates a scenario config from its JSON document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ScenarioConfig = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Reseeding is the one mutation sweeps need; everything else goes
    /// through from_json.
    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn n_landmarks(&self) -> usize {
        self.inner.n_landmarks
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.trajectory.n_frames
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(seed={}, n_landmarks={}, n_frames={})",
            self.inner.seed, self.inner.n_landmarks, self.inner.trajectory.n_frames
        )
    }
}

/// One accepted keyframe: its pose and the motion-covariance scalars the
/// entropy machinery consumes.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Keyframe {
    #[pyo3(get)]
    frame_id: usize,
    #[pyo3(get)]
    timestamp: f64,
    pose: SE3Pose,
    #[pyo3(get)]
    covariance_det: f64,
    #[pyo3(get)]
    entropy: f64,
}

#[pymethods]
impl Keyframe {
    #[getter]
    fn pose(&self) -> Pose {
        Pose { inner: self.pose }
    }

    fn __repr__(&self) -> String {
        format!(
            "Keyframe(frame_id={}, covariance_det={:.3e}, entropy={:.6})",
            self.frame_id, self.covariance_det, self.entropy
        )
    }
}

/// Everything a single odometry run produced.
#[pyclass(frozen, skip_from_py_object)]
struct RunSummary {
    /// Estimated camera-in-world poses, one row per frame.
    #[pyo3(get)]
    trajectory: Vec<TumRow>,
    /// Ground-truth camera-in-world poses on the same timestamps.
    #[pyo3(get)]
    groundtruth: Vec<TumRow>,
    keyframes: Vec<Keyframe>,
    /// Average keyframe covariance determinant (beta); None with fewer than
    /// two keyframes.
    #[pyo3(get)]
    beta: Option<f64>,
    #[pyo3(get)]
    total_tracking_time_s: f64,
    #[pyo3(get)]
    mean_track_time_s: f64,
}

#[pymethods]
impl RunSummary {
    #[getter]
    fn keyframes(&self) -> Vec<Keyframe> {
        self.keyframes.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunSummary(frames={}, keyframes={}, mean_track_time_s={:.6})",
            self.trajectory.len(),
            self.keyframes.len(),
            self.mean_track_time_s
        )
    }
}

/// Runs the full synthetic odometry loop for a config: world generation,
/// per-frame tracking, entropy-gated keyframe selection, and windowed
/// bundle adjustment.
///
/// Raises ValueError for invalid arguments and RuntimeError when tracking
/// is lost or the geometry degenerates mid-run.
#[pyfunction]
#[pyo3(signature = (config, weighting = "saliency", gate = true, gate_threshold = 0.9, baseline_heuristics = true))]
fn run_odometry(
    config: &PyScenarioConfig,
    weighting: &str,
    gate: bool,
    gate_threshold: f64,
    baseline_heuristics: bool,
) -> PyResult<RunSummary> {
    let weighting = match weighting {
        "uniform" => Weighting::Uniform,
        "saliency" => Weighting::Saliency,
        other => return Err(PyValueError::new_err(format!("unknown weighting {other:?}, use uniform or saliency"))),
    };
    let gate = EntropyGateConfig { threshold: gate_threshold, enabled: gate };
    gate.validate().map_err(value_err)?;
    let world = pipeline::generate_world(&config.inner).map_err(value_err)?;
    let options = OdometryOptions { baseline_heuristics };
    let result = pipeline::run_odometry_with(&world, &config.inner, &gate, weighting, &options)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let groundtruth: Vec<TumRow> = world
        .trajectory
        .iter()
        .enumerate()
        .map(|(frame_id, pose)| pose_row(frame_timestamp(frame_id), &pose.inverse()))
        .collect();
    let keyframes: Vec<Keyframe> = result
        .keyframes
        .iter()
        .map(|r| Keyframe {
            frame_id: r.frame_id,
            timestamp: frame_timestamp(r.frame_id),
            pose: r.pose,
            covariance_det: r.covariance_det,
            entropy: r.entropy,
        })
        .collect();
    let beta = entropy::average_entropy(&result.keyframes).ok().map(|s| s.beta);
    let n_frames = result.trajectory.len();
    Ok(RunSummary {
        trajectory: rows_from_trajectory(&result.trajectory),
        groundtruth,
        keyframes,
        beta,
        total_tracking_time_s: result.total_tracking_time_s,
        mean_track_time_s: eval::mean_tracking_time(result.total_tracking_time_s, n_frames),
    })
}

#[pymodule(name = "salba")]
fn salba_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose>()?;
    m.add_class::<PySaliencyMap>()?;
    m.add_class::<AdaptiveEma>()?;
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<Keyframe>()?;
    m.add_class::<RunSummary>()?;
    m.add_class::<AteReport>()?;
    m.add_function(wrap_pyfunction!(motion_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(differential_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_reduction, m)?)?;
    m.add_function(wrap_pyfunction!(load_tum, m)?)?;
    m.add_function(wrap_pyfunction!(write_tum, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(run_odometry, m)?)?;
    m.add("DEFAULT_WEIGHT_BIAS", saliency::DEFAULT_WEIGHT_BIAS)?;
    m.add("DEFAULT_GAIN_FLOOR", saliency::DEFAULT_GAIN_FLOOR)?;
    Ok(())
}
