//! Deterministic synthetic front end plus the sequential odometry loop.
//!
//! [`generate_world`] builds a landmark cloud, a ground-truth camera path,
//! and per-frame saliency maps whose bright blobs sit on the projections of
//! salient landmarks. [`render_frame`] turns a frame into noisy, possibly
//! outlier-corrupted pixel observations carrying saliency-derived weights.
//! [`run_odometry`] tracks frame to frame with motion-only estimation,
//! gates keyframes on the entropy ratio of the motion covariance, and
//! refines a sliding window of keyframes with weighted bundle adjustment.
//!
//! Everything downstream of a [`ScenarioConfig`] is bit-reproducible: each
//! randomized stage draws from its own fixed stream of a counter-based
//! generator seeded by `config.seed`, so changing one stage's draw count
//! never shifts another stage.

use std::time::Instant;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{entropy_ratio, keyframe_decision, motion_entropy, EntropyGateConfig, KeyframeRecord};
use crate::eval::TimedPose;
use crate::geometry::{project, reprojection_error, CameraIntrinsics, Landmark, Observation, SE3Pose};
use crate::optimizer::{
    motion_only_ba, solve_local_ba, BAProblem, LandmarkVariable, PoseVariable, SolveError, SolverSettings,
};
use crate::saliency::{synthesize_map, weight_at, SaliencyBlobSpec, SaliencyMap, DEFAULT_WEIGHT_BIAS};

/// Frame period of the synthetic camera (20 Hz).
pub const FRAME_PERIOD: f64 = 0.05;

/// Saliency level of unremarkable image regions.
pub const BACKGROUND_SALIENCY: u8 = 20;

/// Fewest usable observations tracking can survive on.
pub const MIN_TRACKED_OBSERVATIONS: usize = 6;

const TRACKED_RATIO_FLOOR: f64 = 0.8;
const MAX_FRAMES_BETWEEN_KEYFRAMES: usize = 10;

/// A refined landmark whose residual in some observing keyframe exceeds this
/// is treated as an outlier association and evicted from the map.
const CULL_RESIDUAL_PX: f64 = 10.0;
/// A refined landmark closer than this to an observing keyframe is evicted:
/// at near-zero depth its Jacobian dwarfs every honest constraint in the
/// next motion solve and the covariance eigencheck reads the solve as
/// singular.
const CULL_NEAR_PLANE_M: f64 = 0.05;

const STREAM_LANDMARKS: u64 = 1;
const STREAM_SALIENT_FLAGS: u64 = 2;
const STREAM_FRAME_NOISE_BASE: u64 = 1_000;
const STREAM_LANDMARK_INIT_BASE: u64 = 2_000_000;

pub fn frame_timestamp(frame_id: usize) -> f64 {
    frame_id as f64 * FRAME_PERIOD
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error(
        "tracking lost at frame {frame_id}: {usable} usable observations, need at least {MIN_TRACKED_OBSERVATIONS}"
    )]
    TrackingLost {
        frame_id: usize,
        usable: usize,
        /// Everything estimated before the failing frame.
        partial: Box<RunResult>,
    },
    #[error("degenerate geometry at frame {frame_id}: {source}")]
    Degenerate {
        frame_id: usize,
        source: SolveError,
        /// Everything estimated before the failing frame.
        partial: Box<RunResult>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Circle,
    Lissajous,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Spatial extent in meters: circle radius, lissajous amplitude, or the
    /// half-length of a line sweep.
    pub radius: f64,
    pub n_frames: usize,
}

fn default_weight_bias() -> f64 {
    DEFAULT_WEIGHT_BIAS
}

fn default_window() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_landmarks: usize,
    pub trajectory: TrajectorySpec,
    pub intrinsics: CameraIntrinsics,
    /// Fraction of landmarks flagged salient (exact count, rounded).
    pub salient_fraction: f64,
    /// Pixel-noise standard deviation on salient landmarks.
    pub sigma_salient: f64,
    /// Pixel-noise standard deviation on the rest.
    pub sigma_plain: f64,
    /// Fraction of each frame's observations replaced by uniform in-image
    /// pixels (exact count, rounded).
    pub outlier_rate: f64,
    /// Spread of the synthetic attention blob around each salient
    /// projection, in pixels.
    pub saliency_blob_sigma: f64,
    /// Weight bias: omega = (p + b)/255.
    #[serde(default = "default_weight_bias")]
    pub b: f64,
    /// Keyframes in the local bundle adjustment window.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.intrinsics.validate().map_err(PipelineError::InvalidConfig)?;
        if self.n_landmarks == 0 {
            return Err(PipelineError::InvalidConfig("n_landmarks must be at least 1".into()));
        }
        if self.trajectory.n_frames < 2 {
            return Err(PipelineError::InvalidConfig(format!(
                "n_frames must be at least 2, got {}",
                self.trajectory.n_frames
            )));
        }
        if !(self.trajectory.radius > 0.0 && self.trajectory.radius.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!(
                "trajectory radius must be positive, got {}",
                self.trajectory.radius
            )));
        }
        if !(0.0..=1.0).contains(&self.salient_fraction) {
            return Err(PipelineError::InvalidConfig(format!(
                "salient_fraction must lie in [0, 1], got {}",
                self.salient_fraction
            )));
        }
        for (name, sigma) in [("sigma_salient", self.sigma_salient), ("sigma_plain", self.sigma_plain)] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(PipelineError::InvalidConfig(format!("{name} must be non-negative, got {sigma}")));
            }
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(PipelineError::InvalidConfig(format!(
                "outlier_rate must lie in [0, 1), got {}",
                self.outlier_rate
            )));
        }
        if !(self.saliency_blob_sigma > 0.0 && self.saliency_blob_sigma.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!(
                "saliency_blob_sigma must be positive, got {}",
                self.saliency_blob_sigma
            )));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!("b must be non-negative, got {}", self.b)));
        }
        if self.window == 0 {
            return Err(PipelineError::InvalidConfig("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldLandmark {
    pub position: Vector3<f64>,
    pub salient: bool,
}

/// Ground truth: landmark cloud, world-to-camera pose per frame, and the
/// attention map each frame would see.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub landmarks: Vec<WorldLandmark>,
    pub trajectory: Vec<SE3Pose>,
    pub saliency_maps: Vec<SaliencyMap>,
}

/// One rendered frame: ground-truth pose plus the noisy observations and
/// attention map the estimator is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_id: usize,
    pub timestamp: f64,
    pub true_pose: SE3Pose,
    pub observations: Vec<Observation>,
    pub saliency_map: SaliencyMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Saliency,
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weighting::Uniform => write!(f, "uniform"),
            Weighting::Saliency => write!(f, "saliency"),
        }
    }
}

/// Per-frame record of how the keyframe decision was reached; enough to
/// replay the predicate offline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub frame_id: usize,
    pub usable: usize,
    /// Usable observations relative to the count at the last keyframe.
    pub tracked_ratio: f64,
    pub frames_since_keyframe: usize,
    /// Motion-estimate entropy; absent when the covariance determinant was
    /// not positive.
    pub entropy: Option<f64>,
    /// Entropy ratio against the first post-keyframe frame; absent while
    /// undefined (gate abstains).
    pub alpha: Option<f64>,
    pub gate_pass: bool,
    pub heuristic_pass: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub weighting: Weighting,
    pub gate: EntropyGateConfig,
    /// Camera-in-world pose per frame, in the odometry frame anchored at
    /// frame 0.
    pub trajectory: Vec<TimedPose>,
    pub keyframes: Vec<KeyframeRecord>,
    pub gate_log: Vec<GateDecision>,
    pub per_frame_times_s: Vec<f64>,
    pub total_tracking_time_s: f64,
}

/// Runtime knobs that are not part of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryOptions {
    /// Couple the entropy gate with the tracked-ratio and
    /// frames-since-keyframe heuristics (the default). Disabled, the gate
    /// alone decides.
    pub baseline_heuristics: bool,
}

impl Default for OdometryOptions {
    fn default() -> Self {
        Self { baseline_heuristics: true }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// World-to-camera pose for a camera at `center` whose optical axis points
/// at `target`; `up_hint` breaks the roll ambiguity. Camera +x spans right,
/// +y down, +z forward.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, up_hint: &Vector3<f64>) -> SE3Pose {
    let gaze = target - center;
    assert!(gaze.norm() > 1e-12, "look_at target coincides with the camera center");
    let forward = gaze.normalize();
    let hint = if forward.cross(up_hint).norm() < 1e-6 { Vector3::x() } else { *up_hint };
    let right = hint.cross(&forward).normalize();
    let down = forward.cross(&right);
    let r_world_from_cam = Matrix3::from_columns(&[right, down, forward]);
    let rotation = nalgebra::UnitQuaternion::from_matrix(&r_world_from_cam.transpose());
    SE3Pose::new(rotation, -(rotation * center))
}

fn true_trajectory(spec: &TrajectorySpec) -> Vec<SE3Pose> {
    let n = spec.n_frames;
    let r = spec.radius;
    let origin = Vector3::zeros();
    let up = Vector3::z();
    (0..n)
        .map(|i| match spec.kind {
            TrajectoryKind::Circle => {
                let theta = i as f64 / n as f64 * std::f64::consts::TAU;
                let center = Vector3::new(r * theta.cos(), r * theta.sin(), 0.0);
                look_at(&center, &origin, &up)
            }
            TrajectoryKind::Lissajous => {
                let theta = i as f64 / n as f64 * std::f64::consts::TAU;
                let center = Vector3::new(
                    r * (3.0 * theta + std::f64::consts::FRAC_PI_2).sin(),
                    r * (2.0 * theta).sin(),
                    0.3 * r * theta.sin(),
                );
                look_at(&center, &origin, &up)
            }
            TrajectoryKind::Line => {
                // Sideways dolly: sweep along x, optical axis fixed at +y.
                let s = i as f64 / (n - 1) as f64;
                let center = Vector3::new(r * (2.0 * s - 1.0), 0.0, 0.0);
                let target = center + Vector3::y();
                look_at(&center, &target, &up)
            }
        })
        .collect()
}

/// Axis-aligned landmark sampling box: the camera-center bounding box grown
/// 1.2x, with each half-extent floored at half the box scale so flat
/// trajectories still get a volumetric cloud.
fn landmark_box(trajectory: &[SE3Pose]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for pose in trajectory {
        let c = pose.camera_center();
        lo = lo.inf(&c);
        hi = hi.sup(&c);
    }
    let mid = (lo + hi) * 0.5;
    let mut half = (hi - lo) * 0.6;
    let scale = half.amax();
    let floor = 0.5 * scale;
    for k in 0..3 {
        half[k] = half[k].max(floor);
    }
    (mid, half)
}

pub fn generate_world(config: &ScenarioConfig) -> Result<World, PipelineError> {
    config.validate()?;
    let trajectory = true_trajectory(&config.trajectory);
    let (mid, half) = landmark_box(&trajectory);

    let mut rng = stream_rng(config.seed, STREAM_LANDMARKS);
    let mut landmarks: Vec<WorldLandmark> = (0..config.n_landmarks)
        .map(|_| {
            let position = Vector3::new(
                mid.x + rng.random_range(-half.x..half.x),
                mid.y + rng.random_range(-half.y..half.y),
                mid.z + rng.random_range(-half.z..half.z),
            );
            WorldLandmark { position, salient: false }
        })
        .collect();

    let n_salient = ((config.salient_fraction * config.n_landmarks as f64).round() as usize).min(config.n_landmarks);
    let mut rng = stream_rng(config.seed, STREAM_SALIENT_FLAGS);
    for index in rand::seq::index::sample(&mut rng, config.n_landmarks, n_salient) {
        landmarks[index].salient = true;
    }

    let saliency_maps = trajectory
        .iter()
        .map(|pose| {
            let blobs: Vec<SaliencyBlobSpec> = landmarks
                .iter()
                .filter(|lm| lm.salient)
                .filter_map(|lm| project(pose, &config.intrinsics, &lm.position).ok())
                .filter(|pixel| config.intrinsics.contains(pixel))
                .map(|pixel| SaliencyBlobSpec { center: pixel, sigma: config.saliency_blob_sigma, peak: 255.0 })
                .collect();
            synthesize_map(config.intrinsics.width, config.intrinsics.height, &blobs, BACKGROUND_SALIENCY)
        })
        .collect();

    Ok(World { landmarks, trajectory, saliency_maps })
}

/// Renders the observations of one frame: every landmark that projects into
/// the image at the true pose yields a pixel measurement with per-class
/// Gaussian noise; a rounded `outlier_rate` fraction is then replaced by
/// uniform in-image pixels, and every surviving observation gets its
/// saliency weight. Observations whose noisy pixel leaves the image are
/// dropped (a detector would not have fired).
pub fn render_frame(world: &World, frame_id: usize, config: &ScenarioConfig) -> FrameBundle {
    assert!(frame_id < world.trajectory.len(), "frame {frame_id} out of range");
    let pose = world.trajectory[frame_id];
    let map = &world.saliency_maps[frame_id];
    let mut rng = stream_rng(config.seed, STREAM_FRAME_NOISE_BASE + frame_id as u64);

    let mut observations = Vec::new();
    for (landmark_id, lm) in world.landmarks.iter().enumerate() {
        let Ok(true_pixel) = project(&pose, &config.intrinsics, &lm.position) else {
            continue;
        };
        if !config.intrinsics.contains(&true_pixel) {
            continue;
        }
        let sigma = if lm.salient { config.sigma_salient } else { config.sigma_plain };
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        let pixel = true_pixel + sigma * Vector2::new(nx, ny);
        if !config.intrinsics.contains(&pixel) {
            continue;
        }
        observations.push(Observation { frame_id, landmark_id, pixel, info_scalar: 1.0, weight: 0.0 });
    }

    let n_outliers = (config.outlier_rate * observations.len() as f64).round() as usize;
    if n_outliers > 0 {
        let chosen = rand::seq::index::sample(&mut rng, observations.len(), n_outliers);
        for k in chosen {
            observations[k].pixel = Vector2::new(
                rng.random_range(0.0..config.intrinsics.width as f64),
                rng.random_range(0.0..config.intrinsics.height as f64),
            );
        }
    }

    for obs in &mut observations {
        obs.weight = weight_at(map, &obs.pixel, config.b).expect("observed pixel lies inside the image");
    }

    FrameBundle {
        frame_id,
        timestamp: frame_timestamp(frame_id),
        true_pose: pose,
        observations,
        saliency_map: map.clone(),
    }
}

/// Observations as the solver sees them: saliency weighting keeps the
/// rendered omega, uniform weighting overrides it with 1.
fn solver_observations(bundle: &FrameBundle, weighting: Weighting) -> Vec<Observation> {
    bundle
        .observations
        .iter()
        .map(|obs| {
            let mut o = *obs;
            if weighting == Weighting::Uniform {
                o.weight = 1.0;
            }
            o
        })
        .collect()
}

/// Map points are initialized from the true position (in the odometry
/// frame) perturbed along the noise model: sigma_px * depth / fx per axis,
/// drawn from the landmark's own stream.
fn initial_map_point(
    world: &World,
    config: &ScenarioConfig,
    gauge: &SE3Pose,
    landmark_id: usize,
    observing_pose: &SE3Pose,
) -> Vector3<f64> {
    let lm = &world.landmarks[landmark_id];
    let depth = observing_pose.transform_point(&lm.position).z;
    let sigma_px = if lm.salient { config.sigma_salient } else { config.sigma_plain };
    let scale = sigma_px * depth / config.intrinsics.fx;
    let mut rng = stream_rng(config.seed, STREAM_LANDMARK_INIT_BASE + landmark_id as u64);
    let noise =
        Vector3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
    gauge.transform_point(&lm.position) + scale * noise
}

struct KeyframeState {
    frame_id: usize,
    /// World-to-camera in the odometry frame.
    pose: SE3Pose,
    /// Solver-weighted observations restricted to mapped landmarks.
    observations: Vec<Observation>,
}

/// Refines the sliding window: all window keyframe poses but the oldest are
/// freed, together with every landmark seen from at least two window
/// keyframes; the rest of the map is untouched. Single-view landmarks stay
/// fixed at their initialized positions: one view leaves their depth
/// unobservable, so freeing them lets the solver zero any residual (gross
/// outliers included) by sliding them along the ray, dragging the shared
/// pose with them and poisoning later tracking.
fn window_bundle_adjustment(
    window: &mut [KeyframeState],
    map: &mut [Option<Vector3<f64>>],
    config: &ScenarioConfig,
) -> Result<(), SolveError> {
    let mut view_count = vec![0usize; map.len()];
    for kf in window.iter() {
        for obs in kf.observations.iter().filter(|obs| obs.weight > 0.0) {
            view_count[obs.landmark_id] += 1;
        }
    }
    let mut landmark_ids: Vec<usize> = window
        .iter()
        .flat_map(|kf| kf.observations.iter())
        .filter(|obs| obs.weight > 0.0)
        .map(|obs| obs.landmark_id)
        .collect();
    landmark_ids.sort_unstable();
    landmark_ids.dedup();
    let mut slot_of = vec![usize::MAX; map.len()];
    for (slot, &id) in landmark_ids.iter().enumerate() {
        slot_of[id] = slot;
    }

    let poses: Vec<PoseVariable> =
        window.iter().enumerate().map(|(k, kf)| PoseVariable { pose: kf.pose, fixed: k == 0 }).collect();
    let landmarks: Vec<LandmarkVariable> = landmark_ids
        .iter()
        .map(|&id| LandmarkVariable {
            landmark: Landmark::new(map[id].expect("window observations reference mapped landmarks")),
            fixed: view_count[id] < 2,
        })
        .collect();
    let mut observations = Vec::new();
    for (k, kf) in window.iter().enumerate() {
        for obs in kf.observations.iter().filter(|obs| obs.weight > 0.0) {
            observations.push(Observation { frame_id: k, landmark_id: slot_of[obs.landmark_id], ..*obs });
        }
    }

    let mut problem = BAProblem::new(poses, landmarks, observations, config.intrinsics);
    problem.huber_delta = SolverSettings::default().huber_delta;
    let (solved, _) = solve_local_ba(problem)?;

    for (k, kf) in window.iter_mut().enumerate() {
        kf.pose = solved.poses[k].pose;
    }
    for (slot, &id) in landmark_ids.iter().enumerate() {
        map[id] = Some(solved.landmarks[slot].landmark.position);
    }

    // Audit what the solver did with the freed landmarks. Two views that
    // include a gross outlier can drag a point meters along a ray, sometimes
    // parking it on a camera plane; such points poison every later motion
    // solve, so they are evicted together with their window observations. A
    // later keyframe that sees an evicted landmark re-seeds it from scratch.
    let mut culled = false;
    for &id in &landmark_ids {
        if view_count[id] < 2 {
            continue;
        }
        let position = map[id].expect("refined landmark written back above");
        let healthy = window.iter().all(|kf| {
            kf.observations.iter().filter(|obs| obs.weight > 0.0 && obs.landmark_id == id).all(|obs| {
                kf.pose.transform_point(&position).z >= CULL_NEAR_PLANE_M
                    && matches!(
                        reprojection_error(&kf.pose, &config.intrinsics, &position, obs),
                        Ok(residual) if residual.norm() <= CULL_RESIDUAL_PX
                    )
            })
        });
        if !healthy {
            map[id] = None;
            culled = true;
        }
    }
    if culled {
        for kf in window.iter_mut() {
            kf.observations.retain(|obs| map[obs.landmark_id].is_some());
        }
    }
    Ok(())
}

pub fn run_odometry(
    world: &World,
    config: &ScenarioConfig,
    gate: &EntropyGateConfig,
    weighting: Weighting,
) -> Result<RunResult, PipelineError> {
    run_odometry_with(world, config, gate, weighting, &OdometryOptions::default())
}

/// The sequential odometry loop. Frame 0 anchors the odometry frame at the
/// identity and seeds the map; each later frame is tracked with motion-only
/// estimation against the current map, the entropy gate and baseline
/// heuristics decide keyframe insertion, and accepted keyframes extend the
/// map and trigger a windowed bundle adjustment. The per-frame clock covers
/// the tracking path only (weight selection, motion estimation, gating);
/// map maintenance runs off the clock, as a mapping thread would.
pub fn run_odometry_with(
    world: &World,
    config: &ScenarioConfig,
    gate: &EntropyGateConfig,
    weighting: Weighting,
    options: &OdometryOptions,
) -> Result<RunResult, PipelineError> {
    config.validate()?;
    gate.validate().map_err(PipelineError::InvalidConfig)?;
    let n_frames = config.trajectory.n_frames;
    if world.trajectory.len() != n_frames
        || world.landmarks.len() != config.n_landmarks
        || world.saliency_maps.len() != n_frames
    {
        return Err(PipelineError::InvalidConfig(
            "world shape does not match the scenario config it was supposedly generated from".into(),
        ));
    }

    let gauge = world.trajectory[0];
    let mut map: Vec<Option<Vector3<f64>>> = vec![None; world.landmarks.len()];
    let mut result = RunResult {
        config: config.clone(),
        weighting,
        gate: *gate,
        trajectory: Vec::with_capacity(n_frames),
        keyframes: Vec::new(),
        gate_log: Vec::with_capacity(n_frames),
        per_frame_times_s: Vec::with_capacity(n_frames),
        total_tracking_time_s: 0.0,
    };
    let settings = SolverSettings::default();

    // Frame 0: anchor keyframe at the identity; its usable observations
    // seed the map.
    let bundle = render_frame(world, 0, config);
    let clock = Instant::now();
    let anchor_obs = solver_observations(&bundle, weighting);
    let usable: Vec<&Observation> = anchor_obs.iter().filter(|o| o.weight > 0.0).collect();
    result.per_frame_times_s.push(clock.elapsed().as_secs_f64());
    let anchor_pose = SE3Pose::identity();
    result.trajectory.push(TimedPose { timestamp: bundle.timestamp, pose: anchor_pose.inverse() });
    result.gate_log.push(GateDecision {
        frame_id: 0,
        usable: usable.len(),
        tracked_ratio: 1.0,
        frames_since_keyframe: 0,
        entropy: None,
        alpha: None,
        gate_pass: true,
        heuristic_pass: true,
        accepted: true,
    });
    result.keyframes.push(KeyframeRecord::anchor(0, anchor_pose.inverse()));
    if usable.len() < MIN_TRACKED_OBSERVATIONS {
        let usable = usable.len();
        result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
        return Err(PipelineError::TrackingLost { frame_id: 0, usable, partial: Box::new(result) });
    }
    for obs in &usable {
        map[obs.landmark_id] = Some(initial_map_point(world, config, &gauge, obs.landmark_id, &bundle.true_pose));
    }
    let mapped_anchor_obs: Vec<Observation> = anchor_obs.iter().filter(|o| o.weight > 0.0).copied().collect();
    let mut reference_tracked = mapped_anchor_obs.len();
    let mut window: Vec<KeyframeState> =
        vec![KeyframeState { frame_id: 0, pose: anchor_pose, observations: mapped_anchor_obs }];
    let mut last_keyframe = 0usize;
    let mut h_first: Option<f64> = None;
    let mut previous_pose = anchor_pose;

    for frame_id in 1..n_frames {
        let bundle = render_frame(world, frame_id, config);

        // ---- tracking path (timed) ----
        let clock = Instant::now();
        let all_obs = solver_observations(&bundle, weighting);
        let mut packed_landmarks = Vec::new();
        let mut packed_obs = Vec::new();
        for obs in &all_obs {
            if obs.weight <= 0.0 {
                continue;
            }
            if let Some(position) = map[obs.landmark_id] {
                let mut o = *obs;
                o.landmark_id = packed_landmarks.len();
                packed_landmarks.push(Landmark::new(position));
                packed_obs.push(o);
            }
        }
        let usable = packed_obs.len();
        if usable < MIN_TRACKED_OBSERVATIONS {
            result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
            return Err(PipelineError::TrackingLost { frame_id, usable, partial: Box::new(result) });
        }
        let estimate =
            match motion_only_ba(&packed_obs, &packed_landmarks, &config.intrinsics, &previous_pose, &settings) {
                Ok(estimate) => estimate,
                Err(SolveError::TooFewObservations { found, .. }) => {
                    result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
                    return Err(PipelineError::TrackingLost { frame_id, usable: found, partial: Box::new(result) });
                }
                Err(source) => {
                    result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
                    return Err(PipelineError::Degenerate { frame_id, source, partial: Box::new(result) });
                }
            };
        let entropy = motion_entropy(&estimate.covariance).ok();
        let alpha = match (entropy, h_first) {
            (Some(h), None) => {
                h_first = Some(h);
                Some(1.0)
            }
            (Some(h), Some(first)) => entropy_ratio(h, first).ok(),
            (None, _) => None,
        };
        // The gate abstains (passes) when alpha is undefined; with the gate
        // disabled keyframe_decision is always true.
        let gate_pass = alpha.is_none_or(|a| keyframe_decision(a, gate));
        let tracked_ratio = usable as f64 / reference_tracked.max(1) as f64;
        let frames_since_keyframe = frame_id - last_keyframe;
        let heuristic_pass = !options.baseline_heuristics
            || tracked_ratio < TRACKED_RATIO_FLOOR
            || frames_since_keyframe >= MAX_FRAMES_BETWEEN_KEYFRAMES;
        let accepted = gate_pass && heuristic_pass;
        result.per_frame_times_s.push(clock.elapsed().as_secs_f64());

        // ---- bookkeeping and mapping (off the clock) ----
        result.trajectory.push(TimedPose { timestamp: bundle.timestamp, pose: estimate.pose.inverse() });
        result.gate_log.push(GateDecision {
            frame_id,
            usable,
            tracked_ratio,
            frames_since_keyframe,
            entropy,
            alpha,
            gate_pass,
            heuristic_pass,
            accepted,
        });
        previous_pose = estimate.pose;

        if accepted {
            for obs in &all_obs {
                if obs.weight > 0.0 && map[obs.landmark_id].is_none() {
                    map[obs.landmark_id] =
                        Some(initial_map_point(world, config, &gauge, obs.landmark_id, &bundle.true_pose));
                }
            }
            let record = KeyframeRecord::new(frame_id, estimate.pose.inverse(), estimate.covariance)
                .unwrap_or_else(|_| KeyframeRecord::degenerate(frame_id, estimate.pose.inverse()));
            result.keyframes.push(record);

            let kf_obs: Vec<Observation> =
                all_obs.iter().filter(|o| o.weight > 0.0 && map[o.landmark_id].is_some()).copied().collect();
            window.push(KeyframeState { frame_id, pose: estimate.pose, observations: kf_obs });
            if window.len() > config.window {
                window.remove(0);
            }
            if let Err(source) = window_bundle_adjustment(&mut window, &mut map, config) {
                result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
                return Err(PipelineError::Degenerate { frame_id, source, partial: Box::new(result) });
            }
            // The tracked-ratio baseline counts only observations that
            // survived the post-refinement cull.
            reference_tracked = window.last().expect("window never empty").observations.len();

            // Refined poses flow back into the keyframe records and into
            // the next frame's tracking seed; the per-frame trajectory
            // keeps the raw tracking output.
            for kf in window.iter() {
                if let Some(record) = result.keyframes.iter_mut().find(|r| r.frame_id == kf.frame_id) {
                    record.pose = kf.pose.inverse();
                }
            }
            previous_pose = window.last().expect("window never empty").pose;
            last_keyframe = frame_id;
            h_first = None;
        }
    }

    result.total_tracking_time_s = result.per_frame_times_s.iter().sum();
    Ok(result)
}
