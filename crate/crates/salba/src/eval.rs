//! Trajectory evaluation: timestamp association, sim(3)/SE(3) alignment,
//! absolute trajectory error, tracking-time metrics, trajectory file I/O
//! (TUM and Euroc ground truth), and the comparison report writer.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::entropy_reduction;
use crate::geometry::SE3Pose;

/// Association tolerance matching a 20 Hz camera's half period.
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no timestamp pairs within tolerance")]
    NoMatches,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("trajectory has no entries")]
    EmptyTrajectory,
    #[error("timestamps not strictly increasing: {prev} then {next}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    NonMonotonicTimestamps { prev: f64, next: f64, line: Option<usize> },
    #[error("{}:{line}: {reason}", path.display())]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report has no method summaries")]
    EmptyReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: SE3Pose,
}

/// Time-ordered pose sequence; construction enforces at least one entry and
/// strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TimedPose>", into = "Vec<TimedPose>")]
pub struct Trajectory {
    entries: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(entries: Vec<TimedPose>) -> Result<Self, EvalError> {
        if entries.is_empty() {
            return Err(EvalError::EmptyTrajectory);
        }
        for pair in entries.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(EvalError::NonMonotonicTimestamps {
                    prev: pair[0].timestamp,
                    next: pair[1].timestamp,
                    line: None,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pose translations in order.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| e.pose.translation).collect()
    }
}

impl TryFrom<Vec<TimedPose>> for Trajectory {
    type Error = String;

    fn try_from(entries: Vec<TimedPose>) -> Result<Self, String> {
        Trajectory::new(entries).map_err(|e| e.to_string())
    }
}

impl From<Trajectory> for Vec<TimedPose> {
    fn from(traj: Trajectory) -> Self {
        traj.entries
    }
}

/// One associated (estimate, reference) index pair; `dt` is the signed
/// timestamp gap est - ref.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPair {
    pub est_index: usize,
    pub ref_index: usize,
}

/// Greedy nearest-timestamp association. Candidate pairs are processed by
/// ascending |dt| (ties broken by index), each pose matched at most once,
/// pairs farther apart than `max_dt` dropped. Output is sorted by estimate
/// time.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<MatchedPair>, EvalError> {
    assert!(max_dt > 0.0, "association tolerance must be positive");
    let mut candidates = Vec::new();
    for (i, e) in est.entries().iter().enumerate() {
        for (j, r) in reference.entries().iter().enumerate() {
            let gap = (e.timestamp - r.timestamp).abs();
            if gap <= max_dt {
                candidates.push((gap, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !ref_used[j] {
            est_used[i] = true;
            ref_used[j] = true;
            pairs.push(MatchedPair { est_index: i, ref_index: j });
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoMatches);
    }
    pairs.sort_by_key(|p| p.est_index);
    Ok(pairs)
}

/// Similarity transform `p -> scale * (rotation * p) + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * point) + self.translation
    }

    /// Maps a camera-in-world pose through the similarity: the camera
    /// position transforms as a point, the orientation is left-composed.
    pub fn apply_to_pose(&self, pose: &SE3Pose) -> SE3Pose {
        SE3Pose::new(self.rotation * pose.rotation, self.apply(&pose.translation))
    }
}

/// Applies a similarity transform to every pose of a trajectory.
pub fn transform_trajectory(traj: &Trajectory, transform: &Sim3) -> Trajectory {
    let entries = traj
        .entries()
        .iter()
        .map(|e| TimedPose { timestamp: e.timestamp, pose: transform.apply_to_pose(&e.pose) })
        .collect();
    Trajectory::new(entries).expect("timestamps unchanged")
}

/// Least-squares similarity aligning `est` onto `reference`: minimizes
/// `sum ||ref_i - s R est_i - t||^2` by the SVD of the cross-covariance,
/// with det(R) = +1 enforced; `with_scale = false` pins s = 1 (SE(3)
/// alignment). Needs at least 3 pairs spanning more than a line.
pub fn umeyama_align(est: &[Vector3<f64>], reference: &[Vector3<f64>], with_scale: bool) -> Result<Sim3, EvalError> {
    if est.len() != reference.len() {
        return Err(EvalError::DegenerateConfiguration(format!(
            "point count mismatch: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateConfiguration(format!("{n} pairs, need at least 3")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_est: Vector3<f64> = est.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_ref: Vector3<f64> = reference.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cross = Matrix3::zeros();
    let mut est_var = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let de = e - mu_est;
        cross += (r - mu_ref) * de.transpose();
        est_var += de.norm_squared();
    }
    cross *= inv_n;
    est_var *= inv_n;
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let d = svd.singular_values;
    // Rank < 2 leaves the rotation about the point axis unconstrained.
    if est_var == 0.0 || d[1] <= 1e-9 * d[0].max(f64::MIN_POSITIVE) {
        return Err(EvalError::DegenerateConfiguration("points are coincident or collinear".into()));
    }
    let mut s_fix = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_fix[(2, 2)] = -1.0;
    }
    let rotation_mat = u * s_fix * v_t;
    let rotation = UnitQuaternion::from_matrix(&rotation_mat);
    let scale =
        if with_scale { (d[0] * s_fix[(0, 0)] + d[1] * s_fix[(1, 1)] + d[2] * s_fix[(2, 2)]) / est_var } else { 1.0 };
    let translation = mu_ref - scale * (rotation * mu_est);
    Ok(Sim3 { scale, rotation, translation })
}

/// Alignment applied before measuring trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    /// Similarity alignment (rotation, translation, scale); the default for
    /// monocular estimates, which carry no metric scale.
    Sim3,
    /// Rigid alignment only (scale pinned to 1).
    Se3,
    /// Compare as-is.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub mean: f64,
    pub rmse: f64,
    /// Per-matched-pair translation error in meters, in time order.
    pub errors: Vec<f64>,
    pub alignment: Sim3,
    pub matched_pairs: usize,
}

/// Absolute trajectory error: associates by timestamp, aligns the estimate
/// onto the reference, then measures translation-only errors
/// `||ref_i - aligned(est_i)||`.
pub fn compute_ate(
    est: &Trajectory,
    reference: &Trajectory,
    alignment: Alignment,
    max_dt: f64,
) -> Result<AteResult, EvalError> {
    let pairs = associate(est, reference, max_dt)?;
    let est_points: Vec<Vector3<f64>> = pairs.iter().map(|p| est.entries()[p.est_index].pose.translation).collect();
    let ref_points: Vec<Vector3<f64>> =
        pairs.iter().map(|p| reference.entries()[p.ref_index].pose.translation).collect();
    let transform = match alignment {
        Alignment::Sim3 => umeyama_align(&est_points, &ref_points, true)?,
        Alignment::Se3 => umeyama_align(&est_points, &ref_points, false)?,
        Alignment::None => Sim3::identity(),
    };
    let errors: Vec<f64> = est_points.iter().zip(&ref_points).map(|(e, r)| (r - transform.apply(e)).norm()).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    Ok(AteResult { mean, rmse, errors, alignment: transform, matched_pairs: pairs.len() })
}

/// Mean tracking time `T_total / N`.
pub fn mean_tracking_time(total_seconds: f64, n_frames: usize) -> f64 {
    assert!(n_frames >= 1, "mean tracking time needs at least one frame");
    total_seconds / n_frames as f64
}

/// Efficiency gain `P = (T_baseline - T_method) / T_baseline`; positive
/// when the method is faster than the baseline.
pub fn efficiency_gain(t_baseline: f64, t_method: f64) -> f64 {
    debug_assert!(t_baseline > 0.0, "baseline time must be positive");
    (t_baseline - t_method) / t_baseline
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub mean_time_baseline: f64,
    pub mean_time_method: f64,
    pub gain: f64,
}

pub fn efficiency(mean_time_baseline: f64, mean_time_method: f64) -> EfficiencyResult {
    EfficiencyResult {
        mean_time_baseline,
        mean_time_method,
        gain: efficiency_gain(mean_time_baseline, mean_time_method),
    }
}

fn parse_field<T: std::str::FromStr>(token: &str, path: &Path, line: usize, what: &str) -> Result<T, EvalError> {
    token.trim().parse().map_err(|_| EvalError::Parse {
        path: path.to_owned(),
        line,
        reason: format!("cannot parse {what} from {token:?}"),
    })
}

fn check_quaternion_norm(norm: f64, path: &Path, line: usize) -> Result<(), EvalError> {
    if norm < 1e-12 {
        return Err(EvalError::Parse { path: path.to_owned(), line, reason: "zero-norm quaternion".into() });
    }
    Ok(())
}

fn push_monotonic(entries: &mut Vec<TimedPose>, entry: TimedPose, line: usize) -> Result<(), EvalError> {
    if let Some(last) = entries.last() {
        if entry.timestamp <= last.timestamp {
            return Err(EvalError::NonMonotonicTimestamps {
                prev: last.timestamp,
                next: entry.timestamp,
                line: Some(line),
            });
        }
    }
    entries.push(entry);
    Ok(())
}

/// Loads a TUM trajectory file: whitespace-separated
/// `t tx ty tz qx qy qz qw` lines; `#` comments and blank lines skipped.
pub fn load_tum(path: &Path) -> Result<Trajectory, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_owned(), source })?;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(EvalError::Parse {
                path: path.to_owned(),
                line,
                reason: format!("expected 8 fields (t tx ty tz qx qy qz qw), found {}", tokens.len()),
            });
        }
        let mut f = [0.0f64; 8];
        for (slot, token) in f.iter_mut().zip(&tokens) {
            *slot = parse_field(token, path, line, "number")?;
        }
        let norm = (f[4] * f[4] + f[5] * f[5] + f[6] * f[6] + f[7] * f[7]).sqrt();
        check_quaternion_norm(norm, path, line)?;
        let pose = SE3Pose::from_wxyz(f[7], f[4], f[5], f[6], Vector3::new(f[1], f[2], f[3]));
        push_monotonic(&mut entries, TimedPose { timestamp: f[0], pose }, line)?;
    }
    Trajectory::new(entries)
}

/// Writes a trajectory in TUM format, one pose per line, quaternion last in
/// xyzw order. Nine decimals on the timestamp, twelve on pose fields, so a
/// read-back reproduces every field well within 1e-9.
pub fn write_tum(traj: &Trajectory, path: &Path) -> Result<(), EvalError> {
    let mut out = String::new();
    for e in traj.entries() {
        let q = e.pose.rotation.coords;
        let t = e.pose.translation;
        writeln!(
            out,
            "{:.9} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12}",
            e.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
        )
        .expect("infallible");
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io { path: path.to_owned(), source })
}

/// Loads a Euroc ground-truth CSV: comma-separated rows starting
/// `timestamp_ns, p_x, p_y, p_z, q_w, q_x, q_y, q_z`; any further columns
/// (velocity, biases) are ignored, as are `#` header lines. Timestamps
/// convert to seconds.
pub fn load_euroc_groundtruth(path: &Path) -> Result<Trajectory, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_owned(), source })?;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split(',').collect();
        if tokens.len() < 8 {
            return Err(EvalError::Parse {
                path: path.to_owned(),
                line,
                reason: format!("expected at least 8 comma-separated fields, found {}", tokens.len()),
            });
        }
        let ns: u64 = parse_field(tokens[0], path, line, "nanosecond timestamp")?;
        let mut f = [0.0f64; 7];
        for (slot, token) in f.iter_mut().zip(&tokens[1..8]) {
            *slot = parse_field(token, path, line, "number")?;
        }
        let norm = (f[3] * f[3] + f[4] * f[4] + f[5] * f[5] + f[6] * f[6]).sqrt();
        check_quaternion_norm(norm, path, line)?;
        let pose = SE3Pose::from_wxyz(f[3], f[4], f[5], f[6], Vector3::new(f[0], f[1], f[2]));
        push_monotonic(&mut entries, TimedPose { timestamp: ns as f64 * 1e-9, pose }, line)?;
    }
    Trajectory::new(entries)
}

/// Everything known about one method's run on one sequence, as consumed by
/// the report writer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub seq: String,
    pub method: String,
    pub ate_mean_m: f64,
    pub ate_rmse_m: f64,
    pub keyframes: usize,
    pub beta: f64,
    pub mean_track_time_s: f64,
    pub per_pose_errors: Vec<f64>,
    pub per_frame_times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seq: String,
    pub method: String,
    pub ate_mean_m: f64,
    pub ate_rmse_m: f64,
    pub keyframes: usize,
    pub beta: f64,
    pub gamma_base2: f64,
    pub gamma_base10: f64,
    pub mean_track_time_s: f64,
    pub efficiency_gain: f64,
    pub per_pose_errors: Vec<f64>,
    pub per_frame_times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub rows: Vec<ReportRow>,
}

/// Renders a value with 6 significant digits: plain decimal while the
/// exponent stays in [-4, 8], scientific notation outside, bare "0" for
/// zero.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..=8).contains(&exp) {
        return sci;
    }
    let neg = mantissa.starts_with('-');
    let digits: Vec<u8> = mantissa.bytes().filter(|b| b.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp >= 5 {
        out.push_str(std::str::from_utf8(&digits).expect("ascii"));
        for _ in 0..(exp - 5) {
            out.push('0');
        }
    } else if exp >= 0 {
        let split = (exp + 1) as usize;
        out.push_str(std::str::from_utf8(&digits[..split]).expect("ascii"));
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii"));
    } else {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(std::str::from_utf8(&digits).expect("ascii"));
    }
    out
}

/// Builds comparison rows against the first summary (the baseline) and
/// writes the CSV table plus a JSON mirror carrying per-frame detail.
/// Nothing is written when the input is empty. Gammas degrade to NaN when a
/// beta is non-positive.
pub fn emit_report(summaries: &[MethodSummary], csv_path: &Path, json_path: &Path) -> Result<Report, EvalError> {
    let baseline = summaries.first().ok_or(EvalError::EmptyReport)?;
    let mut rows = Vec::with_capacity(summaries.len());
    for s in summaries {
        let gamma_base2 = entropy_reduction(baseline.beta, s.beta, 2.0).unwrap_or(f64::NAN);
        let gamma_base10 = entropy_reduction(baseline.beta, s.beta, 10.0).unwrap_or(f64::NAN);
        let gain = if baseline.mean_track_time_s > 0.0 {
            efficiency(baseline.mean_track_time_s, s.mean_track_time_s).gain
        } else {
            f64::NAN
        };
        rows.push(ReportRow {
            seq: s.seq.clone(),
            method: s.method.clone(),
            ate_mean_m: s.ate_mean_m,
            ate_rmse_m: s.ate_rmse_m,
            keyframes: s.keyframes,
            beta: s.beta,
            gamma_base2,
            gamma_base10,
            mean_track_time_s: s.mean_track_time_s,
            efficiency_gain: gain,
            per_pose_errors: s.per_pose_errors.clone(),
            per_frame_times_s: s.per_frame_times_s.clone(),
        });
    }
    let mut csv = String::from(
        "seq,method,ate_mean_m,ate_rmse_m,keyframes,beta,gamma_base2,gamma_base10,mean_track_time_s,efficiency_gain\n",
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seq,
            r.method,
            format_sig6(r.ate_mean_m),
            format_sig6(r.ate_rmse_m),
            r.keyframes,
            format_sig6(r.beta),
            format_sig6(r.gamma_base2),
            format_sig6(r.gamma_base10),
            format_sig6(r.mean_track_time_s),
            format_sig6(r.efficiency_gain),
        )
        .expect("infallible");
    }
    let report = Report { baseline: baseline.method.clone(), rows };
    std::fs::write(csv_path, csv).map_err(|source| EvalError::Io { path: csv_path.to_owned(), source })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(json_path, json).map_err(|source| EvalError::Io { path: json_path.to_owned(), source })?;
    Ok(report)
}
