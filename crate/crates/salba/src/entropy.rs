//! Information-theoretic layer: differential entropy of Gaussian motion
//! estimates, the entropy-ratio keyframe gate, average keyframe uncertainty
//! beta, and the entropy-reduction score gamma.

use nalgebra::{DMatrix, Matrix6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SE3Pose;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("covariance is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance asymmetric: max |a_ij - a_ji| = {max_gap:.3e}")]
    Asymmetric { max_gap: f64 },
    #[error("covariance determinant {determinant:.6e} is not positive; entropy undefined")]
    NonPositiveDeterminant { determinant: f64 },
    #[error("entropy ratio undefined: reference entropy is zero")]
    ZeroDenominator,
    #[error("average uncertainty needs at least 2 keyframes, got {count}")]
    TooFewKeyframes { count: usize },
    #[error("entropy reduction needs positive betas, got baseline {beta_baseline:.6e} and method {beta_method:.6e}")]
    NonPositiveBeta { beta_baseline: f64, beta_method: f64 },
    #[error("log base {base} is not a valid logarithm base")]
    InvalidLogBase { base: f64 },
}

const SYMMETRY_TOL: f64 = 1e-9;

/// Differential entropy of an m-dimensional Gaussian in nats:
/// `0.5 m (1 + ln 2 pi) + 0.5 ln det(cov)`.
///
/// The covariance must be square and symmetric within 1e-9 (relative to its
/// largest entry). A non-positive determinant signals a degenerate estimate;
/// callers treat such frames as unusable for gating.
pub fn differential_entropy(covariance: &DMatrix<f64>) -> Result<f64, EntropyError> {
    let (rows, cols) = covariance.shape();
    if rows != cols {
        return Err(EntropyError::NotSquare { rows, cols });
    }
    let scale = covariance.amax().max(1.0);
    let mut max_gap = 0.0f64;
    for i in 0..rows {
        for j in (i + 1)..cols {
            max_gap = max_gap.max((covariance[(i, j)] - covariance[(j, i)]).abs());
        }
    }
    if max_gap > SYMMETRY_TOL * scale {
        return Err(EntropyError::Asymmetric { max_gap });
    }
    let det = covariance.determinant();
    // Written negated so a NaN determinant also lands in the error branch.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(det > 0.0) {
        return Err(EntropyError::NonPositiveDeterminant { determinant: det });
    }
    let m = rows as f64;
    Ok(0.5 * m * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 0.5 * det.ln())
}

/// [`differential_entropy`] specialized to the 6-DoF motion covariance.
pub fn motion_entropy(covariance: &Matrix6<f64>) -> Result<f64, EntropyError> {
    differential_entropy(&DMatrix::from_column_slice(6, 6, covariance.as_slice()))
}

/// Entropy ratio `alpha = H_current / H_first`, where `H_first` is the
/// entropy of the motion estimate from the last keyframe k to frame k+1 and
/// `H_current` the entropy from k to the current frame. The first frame
/// after a keyframe yields alpha = 1 by construction.
pub fn entropy_ratio(h_current: f64, h_first: f64) -> Result<f64, EntropyError> {
    if h_first == 0.0 {
        return Err(EntropyError::ZeroDenominator);
    }
    Ok(h_current / h_first)
}

/// Entropy-gate parameters. An alpha strictly over the threshold rejects
/// keyframe insertion; the boundary value is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyGateConfig {
    pub threshold: f64,
    pub enabled: bool,
}

impl Default for EntropyGateConfig {
    fn default() -> Self {
        Self { threshold: 0.9, enabled: true }
    }
}

impl EntropyGateConfig {
    /// Rejects non-finite or non-positive thresholds; thresholds above 1
    /// are legal but suspicious, reported as a warning string.
    pub fn validate(&self) -> Result<Option<String>, String> {
        if !self.threshold.is_finite() || self.threshold <= 0.0 {
            return Err(format!("entropy gate threshold must be a positive finite number, got {}", self.threshold));
        }
        if self.threshold > 1.0 {
            return Ok(Some(format!(
                "entropy gate threshold {} exceeds 1; the gate will accept frames whose uncertainty grew",
                self.threshold
            )));
        }
        Ok(None)
    }
}

/// Keyframe acceptance by entropy ratio: accept iff `alpha <= threshold`.
/// A disabled gate always returns true, deferring entirely to the caller's
/// baseline heuristics.
pub fn keyframe_decision(alpha: f64, config: &EntropyGateConfig) -> bool {
    debug_assert!(alpha.is_finite(), "entropy ratio must be finite, got {alpha}");
    if !config.enabled {
        return true;
    }
    alpha <= config.threshold
}

/// An accepted keyframe and the uncertainty of the motion estimate that led
/// to it. `motion_covariance` is relative to the previous keyframe; the
/// derived fields are kept consistent by the constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub frame_id: usize,
    pub pose: SE3Pose,
    pub motion_covariance: Matrix6<f64>,
    pub covariance_det: f64,
    pub entropy: f64,
}

impl KeyframeRecord {
    pub fn new(frame_id: usize, pose: SE3Pose, motion_covariance: Matrix6<f64>) -> Result<Self, EntropyError> {
        let entropy = motion_entropy(&motion_covariance)?;
        Ok(Self { frame_id, pose, covariance_det: motion_covariance.determinant(), entropy, motion_covariance })
    }

    /// Record with an identity-covariance placeholder, used for the anchor
    /// keyframe (which has no predecessor and hence no relative motion
    /// estimate). Its determinant term never enters the uncertainty average.
    pub fn anchor(frame_id: usize, pose: SE3Pose) -> Self {
        Self::new(frame_id, pose, Matrix6::identity()).expect("identity covariance is positive definite")
    }

    /// Record for a keyframe whose motion covariance was unusable
    /// (non-positive determinant). The zero determinant keeps it out of the
    /// uncertainty average; the stored entropy of 0 is a filler, meaningful
    /// only when `covariance_det > 0`.
    pub fn degenerate(frame_id: usize, pose: SE3Pose) -> Self {
        Self { frame_id, pose, motion_covariance: Matrix6::zeros(), covariance_det: 0.0, entropy: 0.0 }
    }
}

/// Average uncertainty over a keyframe chain plus the count of records
/// whose determinant was unusable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub beta: f64,
    /// Non-anchor records with a non-positive covariance determinant; they
    /// contribute nothing to the sum but still count toward n.
    pub excluded: usize,
}

/// Average uncertainty `beta = sum_(i=1)^(n-1) det(cov_i) / n` over n
/// keyframes. The first record is the anchor: it carries no relative motion,
/// so only the n-1 subsequent determinants are summed, while the divisor
/// stays n. Records with a non-positive determinant are skipped and counted.
pub fn average_entropy(records: &[KeyframeRecord]) -> Result<BetaSummary, EntropyError> {
    if records.len() < 2 {
        return Err(EntropyError::TooFewKeyframes { count: records.len() });
    }
    let mut sum = 0.0;
    let mut excluded = 0;
    for record in &records[1..] {
        if record.covariance_det > 0.0 {
            sum += record.covariance_det;
        } else {
            excluded += 1;
        }
    }
    Ok(BetaSummary { beta: sum / records.len() as f64, excluded })
}

/// Entropy reduction `gamma = log_base(beta_baseline / beta_method)`.
/// Positive gamma means the method is less uncertain than the baseline.
pub fn entropy_reduction(beta_baseline: f64, beta_method: f64, log_base: f64) -> Result<f64, EntropyError> {
    if !(beta_baseline > 0.0 && beta_method > 0.0) {
        return Err(EntropyError::NonPositiveBeta { beta_baseline, beta_method });
    }
    if !log_base.is_finite() || log_base <= 0.0 || log_base == 1.0 {
        return Err(EntropyError::InvalidLogBase { base: log_base });
    }
    Ok((beta_baseline / beta_method).ln() / log_base.ln())
}
