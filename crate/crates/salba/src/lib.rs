//! Monocular SLAM back end built around saliency-weighted bundle adjustment.
//!
//! The crate is organized as six layers, lowest first:
//!
//! * [`geometry`] - SE(3) poses, pinhole projection, reprojection residuals
//!   and their analytic Jacobians.
//! * [`saliency`] - 8-bit saliency maps, the `(p + b)/255` weight rule,
//!   frame correlation, an adaptive EMA temporal filter, BCE loss, and
//!   binary PGM I/O plus procedural map synthesis.
//! * [`optimizer`] - robust weighted bundle adjustment (Levenberg-Marquardt
//!   with a Schur complement on the landmark block) and motion-only pose
//!   estimation with covariance extraction.
//! * [`entropy`] - differential entropy of motion estimates, the
//!   entropy-ratio keyframe gate, average uncertainty beta, and entropy
//!   reduction gamma.
//! * [`pipeline`] - a deterministic synthetic front end and a sequential
//!   odometry loop that ties tracking, gating, and local BA together.
//! * [`eval`] - trajectory association, Umeyama sim(3) alignment, ATE,
//!   timing metrics, TUM/Euroc ingestion, and comparative reports.
//!
//! The `salba` binary exposes the pipeline and evaluation layers as CLI
//! subcommands (`synth`, `run`, `eval`, `compare`, `saliency-filter`).

pub mod entropy;
pub mod eval;
pub mod geometry;
pub mod optimizer;
pub mod pipeline;
pub mod saliency;
