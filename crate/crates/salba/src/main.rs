//! Command-line front end: scenario synthesis, odometry runs, trajectory
//! evaluation, multi-run comparison, and offline saliency filtering.
//!
//! Exit codes: 0 success, 2 usage or input errors, 3 tracking lost
//! (partial outputs are still written), 4 degenerate geometry or numerics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use salba::entropy::{average_entropy, EntropyGateConfig};
use salba::eval::{
    compute_ate, emit_report, load_euroc_groundtruth, load_tum, write_tum, Alignment, MethodSummary, TimedPose,
    Trajectory, DEFAULT_MAX_DT,
};
use salba::pipeline::{
    frame_timestamp, generate_world, render_frame, run_odometry_with, OdometryOptions, PipelineError, RunResult,
    ScenarioConfig, Weighting, World,
};
use salba::saliency::{adaptive_ema, read_pgm, write_pgm, EmaState, SaliencyError, DEFAULT_GAIN_FLOOR};

const EXIT_INPUT: u8 = 2;
const EXIT_TRACKING_LOST: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Parser)]
#[command(name = "salba", version, about = "Saliency-weighted odometry sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario directory from a config file.
    Synth {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the odometry pipeline on a synthesized scenario.
    Run {
        /// Scenario directory produced by `synth`.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        weighting: WeightingFlag,
        /// Entropy gate on keyframe insertion.
        #[arg(long, value_enum)]
        gate: GateFlag,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Drop the tracked-ratio / frames-since-keyframe heuristics and let
        /// the gate decide alone.
        #[arg(long)]
        no_heuristics: bool,
    },
    /// Absolute trajectory error of an estimate against a reference.
    Eval {
        /// Estimated trajectory (TUM format).
        #[arg(long)]
        est: PathBuf,
        /// Reference trajectory: TUM, or EuRoC ground-truth CSV if the file
        /// ends in .csv.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Rigid SE(3) alignment instead of the default sim(3).
        #[arg(long)]
        no_scale: bool,
    },
    /// Tabulate several run directories against the first one.
    Compare {
        /// Run directories; the first is the baseline.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// CSV report path; a JSON mirror with per-frame detail is written
        /// next to it with a .json extension.
        #[arg(long)]
        report: PathBuf,
    },
    /// Temporally smooth a directory of saliency maps with the adaptive EMA.
    SaliencyFilter {
        /// Directory of <timestamp_ns>.pgm maps.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAIN_FLOOR)]
        gain_floor: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingFlag {
    Uniform,
    Saliency,
}

impl From<WeightingFlag> for Weighting {
    fn from(flag: WeightingFlag) -> Self {
        match flag {
            WeightingFlag::Uniform => Weighting::Uniform,
            WeightingFlag::Saliency => Weighting::Saliency,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GateFlag {
    On,
    Off,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<salba::eval::EvalError> for CliError {
    fn from(err: salba::eval::EvalError) -> Self {
        use salba::eval::EvalError::*;
        let code = match err {
            NoMatches | DegenerateConfiguration(_) => EXIT_DEGENERATE,
            _ => EXIT_INPUT,
        };
        Self { code, message: err.to_string() }
    }
}

impl From<SaliencyError> for CliError {
    fn from(err: SaliencyError) -> Self {
        Self::input(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        let code = match &err {
            PipelineError::InvalidConfig(_) => EXIT_INPUT,
            PipelineError::TrackingLost { .. } => EXIT_TRACKING_LOST,
            PipelineError::Degenerate { .. } => EXIT_DEGENERATE,
        };
        Self { code, message: err.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { config, out } => cmd_synth(&config, &out),
        Command::Run { scenario, weighting, gate, out, no_heuristics } => {
            cmd_run(&scenario, weighting.into(), matches!(gate, GateFlag::On), &out, no_heuristics)
        }
        Command::Eval { est, reference, no_scale } => cmd_eval(&est, &reference, no_scale),
        Command::Compare { runs, report } => cmd_compare(&runs, &report),
        Command::SaliencyFilter { input, out, gain_floor } => cmd_saliency_filter(&input, &out, gain_floor),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|err| CliError::input(format!("{}: {err}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|err| CliError::input(format!("{}: {err}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|err| CliError::input(format!("{}: {err}", path.display())))
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = read_to_string(path)?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|err| CliError::input(format!("{}: {err}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Saliency map file name for a frame: the timestamp in integer nanoseconds.
fn map_file_name(frame_id: usize) -> String {
    format!("{}.pgm", frame_id as u64 * 50_000_000)
}

/// The true camera-in-world trajectory, timestamped on the frame clock.
fn groundtruth_trajectory(world: &World) -> Trajectory {
    let entries = world
        .trajectory
        .iter()
        .enumerate()
        .map(|(frame_id, pose)| TimedPose { timestamp: frame_timestamp(frame_id), pose: pose.inverse() })
        .collect();
    Trajectory::new(entries).expect("frame clock is strictly increasing")
}

fn cmd_synth(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let world = generate_world(&config)?;

    create_dir(out)?;
    let map_dir = out.join("saliency");
    create_dir(&map_dir)?;

    // Echo the effective config (defaults filled in) so the scenario
    // directory is self-describing.
    let echo = serde_json::to_string_pretty(&config).expect("config serializes");
    write_file(&out.join("config.json"), &format!("{echo}\n"))?;

    write_tum(&groundtruth_trajectory(&world), &out.join("groundtruth.tum"))?;

    let mut observations = String::from("frame_id,timestamp,landmark_id,u,v,omega\n");
    for frame_id in 0..world.trajectory.len() {
        let bundle = render_frame(&world, frame_id, &config);
        write_pgm(&bundle.saliency_map, &map_dir.join(map_file_name(frame_id)))?;
        for obs in &bundle.observations {
            writeln!(
                observations,
                "{},{:.9},{},{:.12},{:.12},{}",
                frame_id, bundle.timestamp, obs.landmark_id, obs.pixel.x, obs.pixel.y, obs.weight
            )
            .expect("infallible");
        }
    }
    write_file(&out.join("observations.csv"), &observations)?;

    println!("synthesized {} frames, {} landmarks -> {}", world.trajectory.len(), world.landmarks.len(), out.display());
    Ok(())
}

/// Keyframe table: pose as TUM-style fields plus the uncertainty scalars.
fn keyframes_csv(result: &RunResult) -> String {
    let mut text = String::from("frame_id,timestamp,tx,ty,tz,qx,qy,qz,qw,covariance_det,entropy\n");
    for record in &result.keyframes {
        let t = record.pose.translation;
        let q = record.pose.rotation.coords;
        writeln!(
            text,
            "{},{:.9},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{},{}",
            record.frame_id,
            frame_timestamp(record.frame_id),
            t.x,
            t.y,
            t.z,
            q.x,
            q.y,
            q.z,
            q.w,
            record.covariance_det,
            record.entropy
        )
        .expect("infallible");
    }
    text
}

fn write_run_artifacts(out: &Path, scenario: &Path, result: &RunResult) -> Result<(), CliError> {
    create_dir(out)?;
    let trajectory = Trajectory::new(result.trajectory.clone())?;
    write_tum(&trajectory, &out.join("trajectory.tum"))?;
    write_file(&out.join("keyframes.csv"), &keyframes_csv(result))?;
    let json = serde_json::to_string_pretty(result).expect("run result serializes");
    write_file(&out.join("run.json"), &format!("{json}\n"))?;
    // Copy the reference in so the run directory evaluates stand-alone.
    std::fs::copy(scenario.join("groundtruth.tum"), out.join("groundtruth.tum"))
        .map_err(|err| CliError::input(format!("{}: {err}", scenario.join("groundtruth.tum").display())))?;
    Ok(())
}

fn cmd_run(
    scenario: &Path,
    weighting: Weighting,
    gate_on: bool,
    out: &Path,
    no_heuristics: bool,
) -> Result<(), CliError> {
    let config = load_config(&scenario.join("config.json"))?;
    let world = generate_world(&config)?;
    let gate = EntropyGateConfig { enabled: gate_on, ..EntropyGateConfig::default() };
    let options = OdometryOptions { baseline_heuristics: !no_heuristics };

    match run_odometry_with(&world, &config, &gate, weighting, &options) {
        Ok(result) => {
            write_run_artifacts(out, scenario, &result)?;
            println!(
                "tracked {} frames, {} keyframes, total tracking time {:.3}s -> {}",
                result.trajectory.len(),
                result.keyframes.len(),
                result.total_tracking_time_s,
                out.display()
            );
            Ok(())
        }
        Err(PipelineError::TrackingLost { frame_id, usable, partial }) => {
            write_run_artifacts(out, scenario, &partial)?;
            Err(CliError {
                code: EXIT_TRACKING_LOST,
                message: format!(
                    "tracking lost at frame {frame_id} ({usable} usable observations); partial results in {}",
                    out.display()
                ),
            })
        }
        Err(PipelineError::Degenerate { frame_id, source, partial }) => {
            write_run_artifacts(out, scenario, &partial)?;
            Err(CliError {
                code: EXIT_DEGENERATE,
                message: format!(
                    "degenerate geometry at frame {frame_id}: {source}; partial results in {}",
                    out.display()
                ),
            })
        }
        Err(err) => Err(err.into()),
    }
}

fn cmd_eval(est_path: &Path, ref_path: &Path, no_scale: bool) -> Result<(), CliError> {
    let est = load_tum(est_path)?;
    let reference = if ref_path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv")) {
        load_euroc_groundtruth(ref_path)?
    } else {
        load_tum(ref_path)?
    };
    let alignment = if no_scale { Alignment::Se3 } else { Alignment::Sim3 };
    let ate = compute_ate(&est, &reference, alignment, DEFAULT_MAX_DT)?;
    println!("matched_pairs: {}", ate.matched_pairs);
    println!("alignment_scale: {}", ate.alignment.scale);
    println!("ate_mean_m: {}", ate.mean);
    println!("ate_rmse_m: {}", ate.rmse);
    Ok(())
}

fn summarize_run(dir: &Path) -> Result<MethodSummary, CliError> {
    let run_path = dir.join("run.json");
    let text = read_to_string(&run_path)?;
    let result: RunResult =
        serde_json::from_str(&text).map_err(|err| CliError::input(format!("{}: {err}", run_path.display())))?;

    let est = load_tum(&dir.join("trajectory.tum"))?;
    let reference = load_tum(&dir.join("groundtruth.tum"))?;
    let ate = compute_ate(&est, &reference, Alignment::Sim3, DEFAULT_MAX_DT)?;

    let seq =
        dir.file_name().map(|name| name.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    let method = format!("{}/gate-{}", result.weighting, if result.gate.enabled { "on" } else { "off" });
    let beta = average_entropy(&result.keyframes).map(|s| s.beta).unwrap_or(f64::NAN);
    let n_frames = result.per_frame_times_s.len().max(1);

    Ok(MethodSummary {
        seq,
        method,
        ate_mean_m: ate.mean,
        ate_rmse_m: ate.rmse,
        keyframes: result.keyframes.len(),
        beta,
        mean_track_time_s: result.total_tracking_time_s / n_frames as f64,
        per_pose_errors: ate.errors,
        per_frame_times_s: result.per_frame_times_s,
    })
}

fn cmd_compare(runs: &[PathBuf], report: &Path) -> Result<(), CliError> {
    let summaries = runs.iter().map(|dir| summarize_run(dir)).collect::<Result<Vec<_>, _>>()?;
    let json_path = report.with_extension("json");
    let table = emit_report(&summaries, report, &json_path)?;
    for row in &table.rows {
        println!(
            "{} {} ate_rmse_m={} beta={} gamma10={} gain={}",
            row.seq, row.method, row.ate_rmse_m, row.beta, row.gamma_base10, row.efficiency_gain
        );
    }
    println!("wrote {} and {}", report.display(), json_path.display());
    Ok(())
}

/// Frames in a map directory, sorted by their integer-nanosecond names.
fn sorted_pgm_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|err| CliError::input(format!("{}: {err}", dir.display())))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|err| CliError::input(format!("{}: {err}", dir.display())))?.path();
        if !path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("pgm")) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let timestamp: u64 = stem
            .parse()
            .map_err(|_| CliError::input(format!("{}: file stem is not a nanosecond timestamp", path.display())))?;
        frames.push((timestamp, path));
    }
    if frames.is_empty() {
        return Err(CliError::input(format!("{}: no .pgm maps found", dir.display())));
    }
    frames.sort_by_key(|(timestamp, _)| *timestamp);
    Ok(frames)
}

fn cmd_saliency_filter(input: &Path, out: &Path, gain_floor: f64) -> Result<(), CliError> {
    if !(gain_floor.is_finite() && (0.0..=1.0).contains(&gain_floor)) {
        return Err(CliError::input(format!("gain floor must lie in [0, 1], got {gain_floor}")));
    }
    let frames = sorted_pgm_frames(input)?;
    create_dir(out)?;
    let mut state = EmaState::new(gain_floor);
    for (timestamp, path) in &frames {
        let map = read_pgm(path)?;
        let (next, filtered) =
            adaptive_ema(state, &map).map_err(|err| CliError::input(format!("{}: {err}", path.display())))?;
        state = next;
        write_pgm(&filtered, &out.join(format!("{timestamp}.pgm")))?;
    }
    println!("filtered {} maps -> {}", frames.len(), out.display());
    Ok(())
}
