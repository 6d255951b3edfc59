//! Weighted robust bundle adjustment: Levenberg-Marquardt over poses and
//! landmarks with a Schur complement on the landmark block, motion-only
//! pose estimation, and covariance extraction from the undamped
//! Gauss-Newton Hessian.
//!
//! The cost is `sum_obs omega * rho(info * ||r||^2)` with `rho` the Huber
//! function; `omega` sits outside the robustifier. Inside the normal
//! equations each observation carries the scalar weight
//! `omega * info * rho'(E)`, the IRLS form of the same objective.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{reprojection_error, reprojection_jacobian, CameraIntrinsics, Landmark, Observation, SE3Pose};

/// 95% chi-square quantile with 2 degrees of freedom, the usual monocular
/// reprojection gate.
pub fn default_huber_delta() -> f64 {
    5.991_f64.sqrt()
}

pub const DEFAULT_MAX_ITERATIONS: usize = 20;
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-10;

const LAMBDA_INIT_SCALE: f64 = 1e-4;
const LAMBDA_REJECT_FACTOR: f64 = 10.0;
const LAMBDA_ACCEPT_FACTOR: f64 = 0.5;
const LAMBDA_BAIL: f64 = 1e32;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("reduced camera system is singular even under damping; geometry under-constrains the free variables")]
    SingularReducedSystem,
    #[error("motion Hessian is singular; observed geometry does not constrain all 6 degrees of freedom")]
    SingularHessian,
    #[error("{found} usable observations, need at least {needed}")]
    TooFewObservations { found: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVariable {
    pub pose: SE3Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkVariable {
    pub landmark: Landmark,
    pub fixed: bool,
}

/// A windowed bundle adjustment problem. The solvers treat `poses` and
/// `landmarks` as the current linearization point; fixed entries are never
/// modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BAProblem {
    pub poses: Vec<PoseVariable>,
    pub landmarks: Vec<LandmarkVariable>,
    pub observations: Vec<Observation>,
    pub intrinsics: CameraIntrinsics,
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl BAProblem {
    pub fn new(
        poses: Vec<PoseVariable>,
        landmarks: Vec<LandmarkVariable>,
        observations: Vec<Observation>,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        Self {
            poses,
            landmarks,
            observations,
            intrinsics,
            huber_delta: default_huber_delta(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        }
    }

    /// Checks the structural invariants: observation indices in range,
    /// finite non-negative weights and info scalars, a positive robust
    /// threshold, and a fixed gauge pose whenever two or more poses are
    /// free.
    pub fn validate(&self) -> Result<(), SolveError> {
        self.intrinsics.validate().map_err(SolveError::InvalidProblem)?;
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(SolveError::InvalidProblem(format!("huber_delta must be positive, got {}", self.huber_delta)));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(SolveError::InvalidProblem(format!(
                "convergence_tol must be non-negative, got {}",
                self.convergence_tol
            )));
        }
        let free_poses = self.poses.iter().filter(|p| !p.fixed).count();
        if free_poses >= 2 && free_poses == self.poses.len() {
            return Err(SolveError::InvalidProblem(
                "gauge is unanchored: at least one pose must be fixed when two or more are free".into(),
            ));
        }
        for (k, obs) in self.observations.iter().enumerate() {
            if obs.frame_id >= self.poses.len() {
                return Err(SolveError::InvalidProblem(format!(
                    "observation {k} references pose {} of {}",
                    obs.frame_id,
                    self.poses.len()
                )));
            }
            if obs.landmark_id >= self.landmarks.len() {
                return Err(SolveError::InvalidProblem(format!(
                    "observation {k} references landmark {} of {}",
                    obs.landmark_id,
                    self.landmarks.len()
                )));
            }
            validate_observation_scalars(obs, k)?;
        }
        Ok(())
    }
}

fn validate_observation_scalars(obs: &Observation, k: usize) -> Result<(), SolveError> {
    if !(obs.weight >= 0.0 && obs.weight.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("observation {k} has weight {}", obs.weight)));
    }
    if !(obs.info_scalar >= 0.0 && obs.info_scalar.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("observation {k} has info scalar {}", obs.info_scalar)));
    }
    if !(obs.pixel.x.is_finite() && obs.pixel.y.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("observation {k} has non-finite pixel")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_cost: f64,
    /// Levenberg-Marquardt attempts, accepted or rejected.
    pub iterations: usize,
    pub converged: bool,
    /// Initial cost followed by the cost after each accepted step;
    /// non-increasing by construction.
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub pose: SE3Pose,
    /// Inverse of the undamped Gauss-Newton Hessian at the final iterate,
    /// in the twist coordinates of [`SE3Pose::retract`]; symmetric positive
    /// definite whenever returned.
    pub covariance: Matrix6<f64>,
    /// Usable observations whose robustified error sits in the quadratic
    /// (trusted) region at the final pose.
    pub inliers: usize,
}

/// Solver knobs shared by motion-only estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            huber_delta: default_huber_delta(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        }
    }
}

/// Huber robustifier over a squared error: identity inside `delta^2`,
/// `2 delta sqrt(e) - delta^2` beyond, continuous at the boundary.
pub fn huber_rho(squared_residual: f64, delta: f64) -> f64 {
    debug_assert!(squared_residual >= 0.0 && delta > 0.0);
    if squared_residual <= delta * delta {
        squared_residual
    } else {
        2.0 * delta * squared_residual.sqrt() - delta * delta
    }
}

/// Derivative of [`huber_rho`] in its first argument, the IRLS weight:
/// 1 in the quadratic region, `delta / sqrt(e)` in the linear region.
pub fn huber_weight(squared_residual: f64, delta: f64) -> f64 {
    debug_assert!(squared_residual >= 0.0 && delta > 0.0);
    if squared_residual <= delta * delta {
        1.0
    } else {
        delta / squared_residual.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub cost: f64,
    /// Observations skipped because the landmark projected behind the
    /// camera at the current linearization point.
    pub degenerate: usize,
}

fn robust_cost(
    poses: &[PoseVariable],
    landmarks: &[LandmarkVariable],
    observations: &[Observation],
    intrinsics: &CameraIntrinsics,
    huber_delta: f64,
) -> CostReport {
    let mut cost = 0.0;
    let mut degenerate = 0;
    for obs in observations {
        if obs.weight == 0.0 {
            continue;
        }
        match reprojection_error(
            &poses[obs.frame_id].pose,
            intrinsics,
            &landmarks[obs.landmark_id].landmark.position,
            obs,
        ) {
            Ok(r) => {
                let e = obs.info_scalar * r.norm_squared();
                cost += obs.weight * huber_rho(e, huber_delta);
            }
            Err(_) => degenerate += 1,
        }
    }
    CostReport { cost, degenerate }
}

/// Robust weighted cost of the problem at its current variables.
/// Zero-weight observations are excluded outright (so deleting them changes
/// nothing); observations behind the camera contribute 0 and are counted.
/// Because a vanished observation lowers the cost for the wrong reason, the
/// solvers never accept a step that grows the degenerate count.
pub fn evaluate_cost(problem: &BAProblem) -> CostReport {
    robust_cost(&problem.poses, &problem.landmarks, &problem.observations, &problem.intrinsics, problem.huber_delta)
}

struct Indexer {
    pose_slot: Vec<Option<usize>>,
    landmark_slot: Vec<Option<usize>>,
    n_poses: usize,
    n_landmarks: usize,
}

impl Indexer {
    fn build(problem: &BAProblem) -> Self {
        let mut pose_slot = vec![None; problem.poses.len()];
        let mut n_poses = 0;
        for (i, p) in problem.poses.iter().enumerate() {
            if !p.fixed {
                pose_slot[i] = Some(n_poses);
                n_poses += 1;
            }
        }
        let mut landmark_slot = vec![None; problem.landmarks.len()];
        let mut n_landmarks = 0;
        for (i, l) in problem.landmarks.iter().enumerate() {
            if !l.fixed {
                landmark_slot[i] = Some(n_landmarks);
                n_landmarks += 1;
            }
        }
        Self { pose_slot, landmark_slot, n_poses, n_landmarks }
    }
}

struct NormalEquations {
    u: Vec<Matrix6<f64>>,
    v: Vec<Matrix3<f64>>,
    /// Per free landmark: the pose-landmark coupling blocks of the poses
    /// observing it, keyed by free-pose slot, in first-seen order.
    w: Vec<Vec<(usize, Matrix6x3<f64>)>>,
    b_pose: DVector<f64>,
    b_landmark: DVector<f64>,
    max_diag: f64,
}

fn assemble(problem: &BAProblem, indexer: &Indexer) -> NormalEquations {
    let mut eq = NormalEquations {
        u: vec![Matrix6::zeros(); indexer.n_poses],
        v: vec![Matrix3::zeros(); indexer.n_landmarks],
        w: vec![Vec::new(); indexer.n_landmarks],
        b_pose: DVector::zeros(6 * indexer.n_poses),
        b_landmark: DVector::zeros(3 * indexer.n_landmarks),
        max_diag: 0.0,
    };
    for obs in &problem.observations {
        if obs.weight == 0.0 {
            continue;
        }
        let pose_slot = indexer.pose_slot[obs.frame_id];
        let landmark_slot = indexer.landmark_slot[obs.landmark_id];
        if pose_slot.is_none() && landmark_slot.is_none() {
            continue;
        }
        let pose = &problem.poses[obs.frame_id].pose;
        let point = &problem.landmarks[obs.landmark_id].landmark.position;
        let Ok(r) = reprojection_error(pose, &problem.intrinsics, point, obs) else {
            continue;
        };
        let Ok((j_pose, j_point)) = reprojection_jacobian(pose, &problem.intrinsics, point) else {
            continue;
        };
        let e = obs.info_scalar * r.norm_squared();
        let w = obs.weight * obs.info_scalar * huber_weight(e, problem.huber_delta);
        if let Some(p) = pose_slot {
            eq.u[p] += w * j_pose.transpose() * j_pose;
            let mut b = eq.b_pose.fixed_rows_mut::<6>(6 * p);
            b += w * j_pose.transpose() * r;
        }
        if let Some(l) = landmark_slot {
            eq.v[l] += w * j_point.transpose() * j_point;
            let mut b = eq.b_landmark.fixed_rows_mut::<3>(3 * l);
            b += w * j_point.transpose() * r;
            if let Some(p) = pose_slot {
                let block = w * j_pose.transpose() * j_point;
                let entries = &mut eq.w[l];
                match entries.iter_mut().find(|(slot, _)| *slot == p) {
                    Some((_, existing)) => *existing += block,
                    None => entries.push((p, block)),
                }
            }
        }
    }
    for u in &eq.u {
        for i in 0..6 {
            eq.max_diag = eq.max_diag.max(u[(i, i)]);
        }
    }
    for v in &eq.v {
        for i in 0..3 {
            eq.max_diag = eq.max_diag.max(v[(i, i)]);
        }
    }
    eq
}

/// Analytic gradient of [`evaluate_cost`] in the solver's stacked
/// coordinates: 6 twist entries per free pose (slot order), then 3 per free
/// landmark. Matches central finite differences of the robust cost.
pub fn cost_gradient(problem: &BAProblem) -> DVector<f64> {
    let indexer = Indexer::build(problem);
    let mut grad = DVector::zeros(6 * indexer.n_poses + 3 * indexer.n_landmarks);
    for obs in &problem.observations {
        if obs.weight == 0.0 {
            continue;
        }
        let pose_slot = indexer.pose_slot[obs.frame_id];
        let landmark_slot = indexer.landmark_slot[obs.landmark_id];
        if pose_slot.is_none() && landmark_slot.is_none() {
            continue;
        }
        let pose = &problem.poses[obs.frame_id].pose;
        let point = &problem.landmarks[obs.landmark_id].landmark.position;
        let Ok(r) = reprojection_error(pose, &problem.intrinsics, point, obs) else {
            continue;
        };
        let Ok((j_pose, j_point)) = reprojection_jacobian(pose, &problem.intrinsics, point) else {
            continue;
        };
        let e = obs.info_scalar * r.norm_squared();
        let w = obs.weight * obs.info_scalar * huber_weight(e, problem.huber_delta);
        if let Some(p) = pose_slot {
            let mut g = grad.fixed_rows_mut::<6>(6 * p);
            g += 2.0 * w * j_pose.transpose() * r;
        }
        if let Some(l) = landmark_slot {
            let mut g = grad.fixed_rows_mut::<3>(6 * indexer.n_poses + 3 * l);
            g += 2.0 * w * j_point.transpose() * r;
        }
    }
    grad
}

fn schur_step(eq: &NormalEquations, lambda: f64) -> Result<DVector<f64>, SolveError> {
    let n_p = eq.u.len();
    let n_l = eq.v.len();
    let damp3 = Matrix3::identity() * lambda;
    let damp6 = Matrix6::identity() * lambda;
    let mut v_inv = Vec::with_capacity(n_l);
    for v in &eq.v {
        let inv = (v + damp3).try_inverse().ok_or(SolveError::SingularReducedSystem)?;
        v_inv.push(inv);
    }
    let mut s = DMatrix::<f64>::zeros(6 * n_p, 6 * n_p);
    for (i, u) in eq.u.iter().enumerate() {
        s.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(&(u + damp6));
    }
    let mut rhs = -eq.b_pose.clone();
    for (l, blocks) in eq.w.iter().enumerate() {
        let b_l = eq.b_landmark.fixed_rows::<3>(3 * l);
        for (pi, wi) in blocks {
            let wi_vinv = wi * v_inv[l];
            let mut r = rhs.fixed_rows_mut::<6>(6 * pi);
            r += wi_vinv * b_l;
            for (pj, wj) in blocks {
                let mut block = s.fixed_view_mut::<6, 6>(6 * pi, 6 * pj);
                block -= wi_vinv * wj.transpose();
            }
        }
    }
    let delta_pose = Cholesky::new(s).ok_or(SolveError::SingularReducedSystem)?.solve(&rhs);
    let mut delta = DVector::zeros(6 * n_p + 3 * n_l);
    delta.rows_mut(0, 6 * n_p).copy_from(&delta_pose);
    for (l, blocks) in eq.w.iter().enumerate() {
        let mut t = -eq.b_landmark.fixed_rows::<3>(3 * l).clone_owned();
        for (pi, wi) in blocks {
            t -= wi.transpose() * delta_pose.fixed_rows::<6>(6 * pi);
        }
        delta.fixed_rows_mut::<3>(6 * n_p + 3 * l).copy_from(&(v_inv[l] * t));
    }
    // Landmarks unseen by any free pose still get their damped solve.
    for (l, v) in v_inv.iter().enumerate() {
        if eq.w[l].is_empty() {
            let t = -eq.b_landmark.fixed_rows::<3>(3 * l).clone_owned();
            delta.fixed_rows_mut::<3>(6 * n_p + 3 * l).copy_from(&(v * t));
        }
    }
    Ok(delta)
}

/// One damped normal-equations step, solved by eliminating the landmark
/// block (the production path of [`solve_local_ba`]). Exposed so the
/// reduced solve can be checked against [`normal_step_dense`].
pub fn normal_step_schur(problem: &BAProblem, lambda: f64) -> Result<DVector<f64>, SolveError> {
    let indexer = Indexer::build(problem);
    schur_step(&assemble(problem, &indexer), lambda)
}

/// The same damped step solved on the full dense Hessian, no elimination.
pub fn normal_step_dense(problem: &BAProblem, lambda: f64) -> Result<DVector<f64>, SolveError> {
    let indexer = Indexer::build(problem);
    let eq = assemble(problem, &indexer);
    let n_p = eq.u.len();
    let n_l = eq.v.len();
    let n = 6 * n_p + 3 * n_l;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for (i, u) in eq.u.iter().enumerate() {
        h.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(u);
    }
    for (l, v) in eq.v.iter().enumerate() {
        h.fixed_view_mut::<3, 3>(6 * n_p + 3 * l, 6 * n_p + 3 * l).copy_from(v);
    }
    for (l, blocks) in eq.w.iter().enumerate() {
        for (p, w) in blocks {
            h.fixed_view_mut::<6, 3>(6 * p, 6 * n_p + 3 * l).copy_from(w);
            h.fixed_view_mut::<3, 6>(6 * n_p + 3 * l, 6 * p).copy_from(&w.transpose());
        }
    }
    for i in 0..n {
        h[(i, i)] += lambda;
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, 6 * n_p).copy_from(&(-&eq.b_pose));
    rhs.rows_mut(6 * n_p, 3 * n_l).copy_from(&(-&eq.b_landmark));
    Ok(Cholesky::new(h).ok_or(SolveError::SingularReducedSystem)?.solve(&rhs))
}

fn retract_candidates(
    problem: &BAProblem,
    indexer: &Indexer,
    delta: &DVector<f64>,
) -> (Vec<PoseVariable>, Vec<LandmarkVariable>) {
    let mut poses = problem.poses.clone();
    for (i, slot) in indexer.pose_slot.iter().enumerate() {
        if let Some(p) = slot {
            let step = Vector6::from(delta.fixed_rows::<6>(6 * p));
            poses[i].pose = poses[i].pose.retract(&step);
        }
    }
    let mut landmarks = problem.landmarks.clone();
    for (i, slot) in indexer.landmark_slot.iter().enumerate() {
        if let Some(l) = slot {
            let step = Vector3::from(delta.fixed_rows::<3>(6 * indexer.n_poses + 3 * l));
            landmarks[i].landmark.position += step;
        }
    }
    (poses, landmarks)
}

/// Minimizes the robust weighted reprojection cost by Levenberg-Marquardt
/// with the landmark block eliminated. Damping starts at 1e-4 times the
/// largest Hessian diagonal, grows tenfold on rejection, halves on
/// acceptance. Accepted steps never increase the cost; fixed variables are
/// never touched. Terminates when an accepted step's relative cost decrease
/// drops below `convergence_tol`, the iteration budget runs out, or damping
/// growth stalls.
pub fn solve_local_ba(mut problem: BAProblem) -> Result<(BAProblem, SolveReport), SolveError> {
    problem.validate()?;
    let indexer = Indexer::build(&problem);
    let initial = evaluate_cost(&problem);
    let mut cost = initial.cost;
    let mut degenerate = initial.degenerate;
    let mut trace = vec![cost];
    if indexer.n_poses == 0 && indexer.n_landmarks == 0 {
        return Ok((problem, SolveReport { final_cost: cost, iterations: 0, converged: true, cost_trace: trace }));
    }
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    'outer: while iterations < problem.max_iterations {
        let eq = assemble(&problem, &indexer);
        if eq.max_diag <= 0.0 {
            return Err(SolveError::SingularReducedSystem);
        }
        let lam = lambda.get_or_insert(LAMBDA_INIT_SCALE * eq.max_diag);
        loop {
            if iterations >= problem.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let delta = match schur_step(&eq, *lam) {
                Ok(delta) => delta,
                Err(_) => {
                    *lam *= LAMBDA_REJECT_FACTOR;
                    if *lam > LAMBDA_BAIL {
                        return Err(SolveError::SingularReducedSystem);
                    }
                    continue;
                }
            };
            let (cand_poses, cand_landmarks) = retract_candidates(&problem, &indexer, &delta);
            let cand = robust_cost(
                &cand_poses,
                &cand_landmarks,
                &problem.observations,
                &problem.intrinsics,
                problem.huber_delta,
            );
            if cand.cost <= cost && cand.degenerate <= degenerate {
                problem.poses = cand_poses;
                problem.landmarks = cand_landmarks;
                trace.push(cand.cost);
                let rel_decrease = (cost - cand.cost) / cost.max(f64::MIN_POSITIVE);
                cost = cand.cost;
                degenerate = cand.degenerate;
                *lam *= LAMBDA_ACCEPT_FACTOR;
                if rel_decrease < problem.convergence_tol {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            *lam *= LAMBDA_REJECT_FACTOR;
            if *lam > LAMBDA_BAIL {
                // No descent direction at machine precision; stop where we
                // stand rather than spin the budget.
                break 'outer;
            }
        }
    }
    Ok((problem, SolveReport { final_cost: cost, iterations, converged, cost_trace: trace }))
}

struct MotionEquations {
    h: Matrix6<f64>,
    b: Vector6<f64>,
    cost: f64,
    /// Usable observations that fell behind the camera at this pose.
    degenerate: usize,
}

fn motion_normal_equations(
    pose: &SE3Pose,
    observations: &[Observation],
    landmarks: &[Landmark],
    intrinsics: &CameraIntrinsics,
    huber_delta: f64,
) -> MotionEquations {
    let mut eq = MotionEquations { h: Matrix6::zeros(), b: Vector6::zeros(), cost: 0.0, degenerate: 0 };
    for obs in observations {
        if obs.weight == 0.0 {
            continue;
        }
        let point = &landmarks[obs.landmark_id].position;
        let Ok(r) = reprojection_error(pose, intrinsics, point, obs) else {
            eq.degenerate += 1;
            continue;
        };
        let Ok((j_pose, _)) = reprojection_jacobian(pose, intrinsics, point) else {
            eq.degenerate += 1;
            continue;
        };
        let e = obs.info_scalar * r.norm_squared();
        eq.cost += obs.weight * huber_rho(e, huber_delta);
        let w = obs.weight * obs.info_scalar * huber_weight(e, huber_delta);
        eq.h += w * j_pose.transpose() * j_pose;
        eq.b += w * j_pose.transpose() * r;
    }
    eq
}

/// Estimates a single pose against a fixed local map and reports its
/// uncertainty. Observations' `landmark_id` indexes into `landmarks`.
/// The covariance is the inverse of the undamped `J^T W J` at the final
/// iterate; a rank-deficient Hessian (degenerate geometry) is an error, as
/// are fewer than 6 usable (positive-weight) observations.
pub fn motion_only_ba(
    observations: &[Observation],
    landmarks: &[Landmark],
    intrinsics: &CameraIntrinsics,
    initial_pose: &SE3Pose,
    settings: &SolverSettings,
) -> Result<MotionEstimate, SolveError> {
    intrinsics.validate().map_err(SolveError::InvalidProblem)?;
    if !(settings.huber_delta > 0.0 && settings.huber_delta.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("huber_delta must be positive, got {}", settings.huber_delta)));
    }
    for (k, obs) in observations.iter().enumerate() {
        if obs.landmark_id >= landmarks.len() {
            return Err(SolveError::InvalidProblem(format!(
                "observation {k} references landmark {} of {}",
                obs.landmark_id,
                landmarks.len()
            )));
        }
        validate_observation_scalars(obs, k)?;
    }
    let usable = observations.iter().filter(|o| o.weight > 0.0).count();
    if usable < 6 {
        return Err(SolveError::TooFewObservations { found: usable, needed: 6 });
    }
    let mut pose = *initial_pose;
    let mut eq = motion_normal_equations(&pose, observations, landmarks, intrinsics, settings.huber_delta);
    let max_diag = (0..6).map(|i| eq.h[(i, i)]).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        return Err(SolveError::SingularHessian);
    }
    let mut lambda = LAMBDA_INIT_SCALE * max_diag;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let damped = eq.h + Matrix6::identity() * lambda;
        let Some(chol) = Cholesky::new(damped) else {
            lambda *= LAMBDA_REJECT_FACTOR;
            if lambda > LAMBDA_BAIL {
                return Err(SolveError::SingularHessian);
            }
            continue;
        };
        let delta = chol.solve(&(-eq.b));
        let cand_pose = pose.retract(&delta);
        let cand = motion_normal_equations(&cand_pose, observations, landmarks, intrinsics, settings.huber_delta);
        if cand.cost <= eq.cost && cand.degenerate <= eq.degenerate {
            let rel_decrease = (eq.cost - cand.cost) / eq.cost.max(f64::MIN_POSITIVE);
            pose = cand_pose;
            eq = cand;
            lambda *= LAMBDA_ACCEPT_FACTOR;
            if rel_decrease < settings.convergence_tol {
                break;
            }
        } else {
            lambda *= LAMBDA_REJECT_FACTOR;
            if lambda > LAMBDA_BAIL {
                break;
            }
        }
    }
    // Covariance from the undamped Hessian; eigendecomposition keeps the
    // inverse exactly symmetric and exposes rank deficiency.
    let eigen = SymmetricEigen::new(eq.h);
    let max_eig = eigen.eigenvalues.amax();
    // Written negated so a NaN spectrum also lands in the error branch.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(max_eig > 0.0) || eigen.eigenvalues.iter().any(|&e| e <= 1e-12 * max_eig) {
        return Err(SolveError::SingularHessian);
    }
    let mut covariance = Matrix6::zeros();
    for i in 0..6 {
        let q = eigen.eigenvectors.column(i);
        covariance += q * q.transpose() / eigen.eigenvalues[i];
    }
    covariance = (covariance + covariance.transpose()) * 0.5;
    let mut inliers = 0;
    for obs in observations {
        if obs.weight == 0.0 {
            continue;
        }
        if let Ok(r) = reprojection_error(&pose, intrinsics, &landmarks[obs.landmark_id].position, obs) {
            if obs.info_scalar * r.norm_squared() <= settings.huber_delta * settings.huber_delta {
                inliers += 1;
            }
        }
    }
    Ok(MotionEstimate { pose, covariance, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::umeyama_align;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    fn look_at_origin(center: Vector3<f64>) -> SE3Pose {
        // World-to-camera pose for a camera at `center` with +z toward the
        // origin and +y roughly down.
        let forward = (-center).normalize();
        let up_hint = if forward.cross(&Vector3::z()).norm() < 1e-6 { Vector3::y() } else { Vector3::z() };
        let right = up_hint.cross(&forward).normalize();
        let down = forward.cross(&right);
        let r_wc = nalgebra::Matrix3::from_columns(&[right, down, forward]);
        let r_cw = r_wc.transpose();
        let rotation = UnitQuaternion::from_matrix(&r_cw);
        SE3Pose::new(rotation, -(rotation * center))
    }

    /// Ring of cameras around a landmark cloud at the origin; observations
    /// are exact projections plus `pixel_noise`-scale uniform noise.
    fn synthetic_problem(
        rng: &mut StdRng,
        n_poses: usize,
        n_landmarks: usize,
        pixel_noise: f64,
        n_fixed_landmarks: usize,
    ) -> (BAProblem, Vec<SE3Pose>, Vec<Vector3<f64>>) {
        let intrinsics = test_intrinsics();
        let true_poses: Vec<SE3Pose> = (0..n_poses)
            .map(|i| {
                let angle = i as f64 / n_poses as f64 * std::f64::consts::TAU;
                let center = Vector3::new(6.0 * angle.cos(), 6.0 * angle.sin(), 1.0 + 0.3 * (i as f64));
                look_at_origin(center)
            })
            .collect();
        let true_points: Vec<Vector3<f64>> = (0..n_landmarks)
            .map(|_| {
                Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
            })
            .collect();
        let mut observations = Vec::new();
        for (frame_id, pose) in true_poses.iter().enumerate() {
            for (landmark_id, point) in true_points.iter().enumerate() {
                if let Ok(pixel) = crate::geometry::project(pose, &intrinsics, point) {
                    let noisy = pixel
                        + Vector2::new(
                            rng.random_range(-1.0..1.0) * pixel_noise,
                            rng.random_range(-1.0..1.0) * pixel_noise,
                        );
                    observations.push(Observation {
                        frame_id,
                        landmark_id,
                        pixel: noisy,
                        info_scalar: 1.0,
                        weight: 1.0,
                    });
                }
            }
        }
        let poses = true_poses.iter().enumerate().map(|(i, p)| PoseVariable { pose: *p, fixed: i == 0 }).collect();
        let landmarks = true_points
            .iter()
            .enumerate()
            .map(|(i, p)| LandmarkVariable { landmark: Landmark::new(*p), fixed: i < n_fixed_landmarks })
            .collect();
        (BAProblem::new(poses, landmarks, observations, intrinsics), true_poses, true_points)
    }

    fn perturb_problem(problem: &mut BAProblem, rng: &mut StdRng, magnitude: f64) {
        for p in problem.poses.iter_mut().filter(|p| !p.fixed) {
            let delta = Vector6::from_fn(|_, _| rng.random_range(-magnitude..magnitude));
            p.pose = p.pose.retract(&delta);
        }
        for l in problem.landmarks.iter_mut().filter(|l| !l.fixed) {
            l.landmark.position += Vector3::from_fn(|_, _| rng.random_range(-magnitude..magnitude));
        }
    }

    #[test]
    fn huber_rho_branches() {
        assert_eq!(huber_rho(0.25, 1.0), 0.25);
        assert_eq!(huber_rho(4.0, 1.0), 3.0);
        let delta: f64 = 1.7;
        let boundary = delta * delta;
        assert_relative_eq!(huber_rho(boundary, delta), boundary, epsilon = 1e-15);
        assert_relative_eq!(2.0 * delta * boundary.sqrt() - delta * delta, boundary, epsilon = 1e-15);
        assert_eq!(huber_weight(0.25, 1.0), 1.0);
        assert_relative_eq!(huber_weight(4.0, 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(huber_weight(boundary * 1.0000001, delta), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cost_zero_when_residuals_vanish() {
        let mut rng = StdRng::seed_from_u64(101);
        let (problem, _, _) = synthetic_problem(&mut rng, 3, 15, 0.0, 0);
        let report = evaluate_cost(&problem);
        assert!(report.cost < 1e-20);
        assert_eq!(report.degenerate, 0);
    }

    #[test]
    fn cost_single_weighted_observation() {
        let intrinsics = test_intrinsics();
        let point = Vector3::new(0.0, 0.0, 5.0);
        let pose = SE3Pose::identity();
        let pixel = crate::geometry::project(&pose, &intrinsics, &point).unwrap();
        let obs = Observation {
            frame_id: 0,
            landmark_id: 0,
            pixel: pixel + Vector2::new(1.0, 0.0),
            info_scalar: 1.0,
            weight: 2.0,
        };
        let problem = BAProblem::new(
            vec![PoseVariable { pose, fixed: false }],
            vec![LandmarkVariable { landmark: Landmark::new(point), fixed: true }],
            vec![obs],
            intrinsics,
        );
        let mut problem = problem;
        problem.huber_delta = 100.0;
        assert_relative_eq!(evaluate_cost(&problem).cost, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_matches_naive_summation() {
        let mut rng = StdRng::seed_from_u64(103);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 5, 20, 3.0, 0);
        for obs in problem.observations.iter_mut() {
            obs.weight = rng.random_range(0.2..1.4);
            obs.info_scalar = rng.random_range(0.5..2.0);
        }
        problem.huber_delta = 2.0; // push several observations into the linear region
        let report = evaluate_cost(&problem);
        let mut naive = 0.0;
        for obs in &problem.observations {
            let projected = crate::geometry::project(
                &problem.poses[obs.frame_id].pose,
                &problem.intrinsics,
                &problem.landmarks[obs.landmark_id].landmark.position,
            )
            .unwrap();
            let dx = obs.pixel.x - projected.x;
            let dy = obs.pixel.y - projected.y;
            let e = obs.info_scalar * (dx * dx + dy * dy);
            let d = problem.huber_delta;
            naive += obs.weight * if e <= d * d { e } else { 2.0 * d * e.sqrt() - d * d };
        }
        assert_relative_eq!(report.cost, naive, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(107);
        for case in 0..6 {
            let (mut problem, _, _) = synthetic_problem(&mut rng, 3, 10, 4.0, 2);
            if case % 2 == 0 {
                problem.huber_delta = 2.5; // mixed quadratic/linear regions
            }
            perturb_problem(&mut problem, &mut rng, 0.01);
            let analytic = cost_gradient(&problem);
            let indexer = Indexer::build(&problem);
            let h = 1e-6;
            let mut fd = DVector::zeros(analytic.len());
            for (pose_idx, slot) in indexer.pose_slot.iter().enumerate() {
                let Some(p) = slot else { continue };
                for k in 0..6 {
                    let mut step = Vector6::zeros();
                    step[k] = h;
                    let mut plus = problem.clone();
                    plus.poses[pose_idx].pose = problem.poses[pose_idx].pose.retract(&step);
                    let mut minus = problem.clone();
                    minus.poses[pose_idx].pose = problem.poses[pose_idx].pose.retract(&(-step));
                    fd[6 * p + k] = (evaluate_cost(&plus).cost - evaluate_cost(&minus).cost) / (2.0 * h);
                }
            }
            for (lm_idx, slot) in indexer.landmark_slot.iter().enumerate() {
                let Some(l) = slot else { continue };
                for k in 0..3 {
                    let mut plus = problem.clone();
                    plus.landmarks[lm_idx].landmark.position[k] += h;
                    let mut minus = problem.clone();
                    minus.landmarks[lm_idx].landmark.position[k] -= h;
                    fd[6 * indexer.n_poses + 3 * l + k] =
                        (evaluate_cost(&plus).cost - evaluate_cost(&minus).cost) / (2.0 * h);
                }
            }
            let rel = (&analytic - &fd).norm() / analytic.norm();
            assert!(rel < 1e-5, "case {case}: relative gradient error {rel}");
        }
    }

    #[test]
    fn schur_step_equals_dense_step() {
        let mut rng = StdRng::seed_from_u64(109);
        for _ in 0..5 {
            let (mut problem, _, _) = synthetic_problem(&mut rng, 5, 30, 2.0, 3);
            perturb_problem(&mut problem, &mut rng, 0.02);
            for &lambda in &[1e-6, 1e-2, 1.0] {
                let schur = normal_step_schur(&problem, lambda).unwrap();
                let dense = normal_step_dense(&problem, lambda).unwrap();
                assert_eq!(schur.len(), dense.len());
                for i in 0..schur.len() {
                    assert!((schur[i] - dense[i]).abs() < 1e-8, "component {i}: {} vs {}", schur[i], dense[i]);
                }
            }
        }
    }

    #[test]
    fn noiseless_ba_recovers_geometry() {
        let mut rng = StdRng::seed_from_u64(113);
        let (mut problem, true_poses, _) = synthetic_problem(&mut rng, 8, 60, 0.0, 0);
        problem.max_iterations = 40;
        perturb_problem(&mut problem, &mut rng, 0.05);
        let (solved, report) = solve_local_ba(problem).unwrap();
        assert!(report.final_cost < 1e-10, "final cost {}", report.final_cost);
        assert!(report.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        let est_centers: Vec<Vector3<f64>> = solved.poses.iter().map(|p| p.pose.camera_center()).collect();
        let true_centers: Vec<Vector3<f64>> = true_poses.iter().map(|p| p.camera_center()).collect();
        let align = umeyama_align(&est_centers, &true_centers, true).unwrap();
        let max_err =
            est_centers.iter().zip(&true_centers).map(|(e, t)| (t - align.apply(e)).norm()).fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "max aligned translation error {max_err}");
    }

    #[test]
    fn all_fixed_problem_is_a_no_op() {
        let mut rng = StdRng::seed_from_u64(127);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 3, 12, 1.0, 0);
        for p in &mut problem.poses {
            p.fixed = true;
        }
        for l in &mut problem.landmarks {
            l.fixed = true;
        }
        let before = evaluate_cost(&problem).cost;
        let snapshot = problem.clone();
        let (solved, report) = solve_local_ba(problem).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.converged);
        assert_eq!(report.final_cost, before);
        assert_eq!(solved, snapshot);
    }

    #[test]
    fn fixed_variables_are_bit_unchanged_by_solving() {
        let mut rng = StdRng::seed_from_u64(131);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 4, 25, 1.5, 5);
        perturb_problem(&mut problem, &mut rng, 0.02);
        let fixed_pose = problem.poses[0];
        let fixed_landmarks: Vec<_> = problem.landmarks.iter().take(5).copied().collect();
        let (solved, _) = solve_local_ba(problem).unwrap();
        assert_eq!(solved.poses[0], fixed_pose);
        for (before, after) in fixed_landmarks.iter().zip(&solved.landmarks) {
            assert_eq!(before, after);
        }
    }

    #[test]
    fn uniform_weight_scaling_preserves_minimizer() {
        let mut rng = StdRng::seed_from_u64(137);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 4, 20, 1.0, 0);
        perturb_problem(&mut problem, &mut rng, 0.02);
        let mut scaled = problem.clone();
        for obs in scaled.observations.iter_mut() {
            obs.weight *= 3.7;
        }
        let (a, _) = solve_local_ba(problem).unwrap();
        let (b, _) = solve_local_ba(scaled).unwrap();
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            assert!(pa.pose.rotation_distance(&pb.pose) < 1e-10);
            assert!((pa.pose.translation - pb.pose.translation).norm() < 1e-10);
        }
        for (la, lb) in a.landmarks.iter().zip(&b.landmarks) {
            assert!((la.landmark.position - lb.landmark.position).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_weight_observations_are_inert() {
        let mut rng = StdRng::seed_from_u64(139);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 4, 18, 1.0, 0);
        perturb_problem(&mut problem, &mut rng, 0.02);
        let mut with_zeros = problem.clone();
        // Interleave zero-weight junk observations, including wild pixels.
        for k in (0..with_zeros.observations.len()).step_by(7) {
            let mut junk = with_zeros.observations[k];
            junk.pixel += Vector2::new(1e4, -1e4);
            junk.weight = 0.0;
            with_zeros.observations.insert(k, junk);
        }
        let (a, ra) = solve_local_ba(problem).unwrap();
        let (b, rb) = solve_local_ba(with_zeros).unwrap();
        assert_eq!(ra.cost_trace.len(), rb.cost_trace.len());
        for (ca, cb) in ra.cost_trace.iter().zip(&rb.cost_trace) {
            assert_eq!(ca.to_bits(), cb.to_bits());
        }
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            assert_eq!(pa.pose.translation, pb.pose.translation);
            assert_eq!(pa.pose.rotation.coords, pb.pose.rotation.coords);
        }
        for (la, lb) in a.landmarks.iter().zip(&b.landmarks) {
            assert_eq!(la.landmark.position, lb.landmark.position);
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let mut rng = StdRng::seed_from_u64(149);
        let (mut problem, _, _) = synthetic_problem(&mut rng, 4, 22, 2.0, 0);
        perturb_problem(&mut problem, &mut rng, 0.03);
        let (a, ra) = solve_local_ba(problem.clone()).unwrap();
        let (b, rb) = solve_local_ba(problem).unwrap();
        assert_eq!(ra.final_cost.to_bits(), rb.final_cost.to_bits());
        assert_eq!(ra.iterations, rb.iterations);
        let bits = |t: &[f64]| t.iter().map(|c| c.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ra.cost_trace), bits(&rb.cost_trace));
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_solve_trace_is_monotone_and_converges() {
        for seed in [151, 157, 163] {
            let mut rng = StdRng::seed_from_u64(seed);
            let (mut problem, _, _) = synthetic_problem(&mut rng, 5, 30, 1.0, 0);
            perturb_problem(&mut problem, &mut rng, 0.03);
            let initial = evaluate_cost(&problem).cost;
            let (_, report) = solve_local_ba(problem).unwrap();
            assert_eq!(report.cost_trace[0], initial);
            assert!(report.cost_trace.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(report.final_cost, *report.cost_trace.last().unwrap());
            assert!(report.final_cost < initial);
        }
    }

    #[test]
    fn validate_rejects_malformed_problems() {
        let mut rng = StdRng::seed_from_u64(167);
        let (problem, _, _) = synthetic_problem(&mut rng, 3, 10, 0.5, 0);

        let mut bad = problem.clone();
        bad.observations[0].landmark_id = 999;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));

        let mut bad = problem.clone();
        bad.observations[0].frame_id = 999;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));

        let mut bad = problem.clone();
        bad.poses[0].fixed = false;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));

        let mut bad = problem.clone();
        bad.huber_delta = 0.0;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));

        let mut bad = problem.clone();
        bad.observations[0].weight = -0.5;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));

        let mut bad = problem;
        bad.observations[0].pixel.x = f64::NAN;
        assert!(matches!(solve_local_ba(bad), Err(SolveError::InvalidProblem(_))));
    }

    fn frontal_landmarks(rng: &mut StdRng, n: usize) -> Vec<Landmark> {
        (0..n)
            .map(|_| {
                Landmark::new(Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(6.0..14.0),
                ))
            })
            .collect()
    }

    fn observe_all(pose: &SE3Pose, landmarks: &[Landmark], intrinsics: &CameraIntrinsics) -> Vec<Observation> {
        landmarks
            .iter()
            .enumerate()
            .filter_map(|(landmark_id, lm)| {
                crate::geometry::project(pose, intrinsics, &lm.position).ok().map(|pixel| Observation {
                    frame_id: 0,
                    landmark_id,
                    pixel,
                    info_scalar: 1.0,
                    weight: 1.0,
                })
            })
            .collect()
    }

    #[test]
    fn motion_ba_is_stationary_at_the_optimum() {
        let mut rng = StdRng::seed_from_u64(173);
        let intrinsics = test_intrinsics();
        let landmarks = frontal_landmarks(&mut rng, 40);
        let truth = SE3Pose::exp(&Vector6::new(0.02, -0.03, 0.01, 0.1, -0.2, 0.05));
        let observations = observe_all(&truth, &landmarks, &intrinsics);
        let estimate =
            motion_only_ba(&observations, &landmarks, &intrinsics, &truth, &SolverSettings::default()).unwrap();
        assert!(estimate.pose.local_coordinates(&truth).norm() < 1e-10);
        assert_eq!(estimate.inliers, observations.len());
        let eigen = SymmetricEigen::new(estimate.covariance);
        assert!(eigen.eigenvalues.iter().all(|&e| e > 0.0 && e.is_finite()));
        let gap = (estimate.covariance - estimate.covariance.transpose()).amax();
        assert!(gap < 1e-10);
    }

    #[test]
    fn motion_ba_rejects_collinear_geometry() {
        let intrinsics = test_intrinsics();
        // All landmarks on the optical axis: rotation about it and motion
        // along it are unobservable.
        let landmarks: Vec<Landmark> = (2..12).map(|z| Landmark::new(Vector3::new(0.0, 0.0, z as f64))).collect();
        let pose = SE3Pose::identity();
        let observations = observe_all(&pose, &landmarks, &intrinsics);
        let result = motion_only_ba(&observations, &landmarks, &intrinsics, &pose, &SolverSettings::default());
        assert!(matches!(result, Err(SolveError::SingularHessian)));
    }

    #[test]
    fn motion_ba_needs_six_usable_observations() {
        let mut rng = StdRng::seed_from_u64(179);
        let intrinsics = test_intrinsics();
        let landmarks = frontal_landmarks(&mut rng, 8);
        let pose = SE3Pose::identity();
        let mut observations = observe_all(&pose, &landmarks, &intrinsics);
        observations.truncate(5);
        let result = motion_only_ba(&observations, &landmarks, &intrinsics, &pose, &SolverSettings::default());
        assert!(matches!(result, Err(SolveError::TooFewObservations { found: 5, needed: 6 })));
        // Zero-weight observations do not count toward the minimum.
        let mut observations = observe_all(&pose, &landmarks, &intrinsics);
        for obs in observations.iter_mut().skip(4) {
            obs.weight = 0.0;
        }
        let result = motion_only_ba(&observations, &landmarks, &intrinsics, &pose, &SolverSettings::default());
        assert!(matches!(result, Err(SolveError::TooFewObservations { found: 4, needed: 6 })));
    }

    #[test]
    fn motion_ba_tolerates_an_outlier() {
        let mut rng = StdRng::seed_from_u64(181);
        let intrinsics = test_intrinsics();
        let landmarks = frontal_landmarks(&mut rng, 30);
        let truth = SE3Pose::exp(&Vector6::new(0.01, 0.02, -0.01, 0.05, 0.1, -0.02));
        let mut observations = observe_all(&truth, &landmarks, &intrinsics);
        observations[3].pixel += Vector2::new(50.0, -35.0);
        let initial = truth.retract(&Vector6::new(0.005, -0.005, 0.002, 0.01, -0.01, 0.02));
        let estimate =
            motion_only_ba(&observations, &landmarks, &intrinsics, &initial, &SolverSettings::default()).unwrap();
        let robust_err = estimate.pose.local_coordinates(&truth).norm();
        // Huber bounds the outlier's pull at a constant; a quadratic fit
        // lets it pull proportionally to its 60-pixel residual.
        let quadratic = SolverSettings { huber_delta: 1e6, ..SolverSettings::default() };
        let est_quad = motion_only_ba(&observations, &landmarks, &intrinsics, &initial, &quadratic).unwrap();
        let quad_err = est_quad.pose.local_coordinates(&truth).norm();
        assert!(robust_err < 0.05, "robust error {robust_err}");
        assert!(robust_err < 0.1 * quad_err, "robust {robust_err} vs quadratic {quad_err}");
        assert_eq!(estimate.inliers, observations.len() - 1);
    }

    /// Sample covariance over Monte Carlo noise draws against the reported
    /// inverse-Hessian covariance. With unit-information observations and
    /// sigma = 1 pixel noise the two should agree as estimator theory says.
    #[test]
    fn motion_ba_covariance_matches_monte_carlo() {
        let mut rng = StdRng::seed_from_u64(191);
        let intrinsics = test_intrinsics();
        let landmarks = frontal_landmarks(&mut rng, 50);
        let truth = SE3Pose::exp(&Vector6::new(0.01, -0.02, 0.03, 0.2, -0.1, 0.15));
        let clean = observe_all(&truth, &landmarks, &intrinsics);
        // Keep the estimator in the pure quadratic region so the Fisher
        // comparison is exact.
        let settings = SolverSettings { huber_delta: 1e3, ..SolverSettings::default() };
        let n_draws = 2000;
        let mut samples: Vec<Vector6<f64>> = Vec::with_capacity(n_draws);
        let mut reported_sum = Matrix6::zeros();
        for _ in 0..n_draws {
            let noisy: Vec<Observation> = clean
                .iter()
                .map(|obs| {
                    let mut o = *obs;
                    let nx: f64 = StandardNormal.sample(&mut rng);
                    let ny: f64 = StandardNormal.sample(&mut rng);
                    o.pixel += Vector2::new(nx, ny);
                    o
                })
                .collect();
            let estimate = motion_only_ba(&noisy, &landmarks, &intrinsics, &truth, &settings).unwrap();
            samples.push(estimate.pose.local_coordinates(&truth));
            reported_sum += estimate.covariance;
        }
        let reported = reported_sum / n_draws as f64;
        let mean: Vector6<f64> = samples.iter().sum::<Vector6<f64>>() / n_draws as f64;
        let mut sample_cov = Matrix6::zeros();
        for s in &samples {
            let d = s - mean;
            sample_cov += d * d.transpose();
        }
        sample_cov /= (n_draws - 1) as f64;
        for i in 0..6 {
            let rel = (sample_cov[(i, i)] - reported[(i, i)]).abs() / reported[(i, i)];
            assert!(
                rel < 0.15,
                "diagonal {i}: sampled {} vs reported {} (rel {rel})",
                sample_cov[(i, i)],
                reported[(i, i)]
            );
        }
    }
}
