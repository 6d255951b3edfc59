#!/usr/bin/env python3
"""Smoke test for the salba Python extension.

Expects the extension to be built first:

    cargo build -p salba-py --release

The cdylib is staged into a temp directory under the import name `salba`
and exercised end to end: weight arithmetic, entropy closed forms, pose
algebra, PGM and TUM round trips, the adaptive EMA filter, and a full
odometry run under both weightings.
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]

CONFIG = """{
  "seed": 7,
  "n_landmarks": 160,
  "trajectory": { "kind": "circle", "radius": 2.0, "n_frames": 40 },
  "intrinsics": { "fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480 },
  "salient_fraction": 0.3,
  "sigma_salient": 0.5,
  "sigma_plain": 2.0,
  "outlier_rate": 0.0,
  "saliency_blob_sigma": 4.0
}"""


def load_module(stage: pathlib.Path):
    candidates = [ROOT / "target" / mode / "libsalba_py.so" for mode in ("release", "debug")]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("extension not built; run: cargo build -p salba-py --release")
    shutil.copy2(lib, stage / "salba.so")
    sys.path.insert(0, str(stage))
    import salba

    return salba


def main() -> None:
    with tempfile.TemporaryDirectory(prefix="salba-py.") as tmp:
        stage = pathlib.Path(tmp)
        salba = load_module(stage)

        # Weight ramp fixed points: (p, b) of (0, 51), (255, 0), (204, 51).
        assert salba.SaliencyMap.constant(4, 4, 0).weight_at(1.0, 1.0, 51.0) == 0.2
        assert salba.SaliencyMap.constant(4, 4, 255).weight_at(1.0, 1.0, 0.0) == 1.0
        assert salba.SaliencyMap.constant(4, 4, 204).weight_at(2.0, 2.0) == 1.0
        assert salba.DEFAULT_WEIGHT_BIAS == 51.0

        # Identity-covariance motion entropy against the closed form, and
        # the entropy-reduction unit: a factor-of-two beta ratio in base 2.
        identity = [[1.0 if i == j else 0.0 for j in range(6)] for i in range(6)]
        assert abs(salba.motion_entropy(identity) - 3.0 * (1.0 + math.log(2.0 * math.pi))) < 1e-12
        assert abs(salba.differential_entropy(identity) - salba.motion_entropy(identity)) == 0.0
        assert abs(salba.entropy_reduction(2.0, 1.0, 2.0) - 1.0) < 1e-12

        # Pose algebra: exp/log round trip, compose with inverse.
        twist = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6]
        pose = salba.Pose.exp(twist)
        assert max(abs(a - b) for a, b in zip(pose.log(), twist)) < 1e-12
        assert max(abs(x) for x in pose.compose(pose.inverse()).log()) < 1e-12

        # PGM round trip is byte-exact.
        checker = salba.SaliencyMap(8, 6, bytes((x * 37) % 256 for x in range(48)))
        pgm = stage / "map.pgm"
        checker.write_pgm(pgm)
        assert salba.SaliencyMap.read_pgm(pgm).values() == checker.values()

        # Adaptive EMA: first frame passes through; a constant stream is a
        # fixed point regardless of gain.
        ema = salba.AdaptiveEma(gain_floor=0.2)
        first = ema.filter(checker)
        assert first.values() == checker.values()
        assert ema.filter(checker).values() == checker.values()

        # Full odometry on a heteroscedastic scenario: runs are
        # deterministic, both weightings track, and saliency weighting
        # tracks tighter than uniform.
        config = salba.ScenarioConfig.from_json(CONFIG)
        assert config.seed == 7 and config.n_frames == 40
        rmse = {}
        for weighting in ("uniform", "saliency"):
            run = salba.run_odometry(config, weighting=weighting)
            again = salba.run_odometry(config, weighting=weighting)
            assert run.trajectory == again.trajectory, "run is not deterministic"
            assert len(run.trajectory) == config.n_frames
            assert run.keyframes and run.keyframes[0].frame_id == 0
            report = salba.ate(run.trajectory, run.groundtruth, alignment="sim3")
            assert report.matched_pairs == config.n_frames
            rmse[weighting] = report.rmse

        # TUM round trip through a file.
        est = salba.run_odometry(config, weighting="saliency")
        tum = stage / "est.tum"
        salba.write_tum(est.trajectory, tum)
        reloaded = salba.load_tum(tum)
        worst = max(
            abs(a - b) for row, back in zip(est.trajectory, reloaded) for a, b in zip(row, back)
        )
        assert worst < 1e-9

        assert rmse["saliency"] < rmse["uniform"] < 0.05, rmse
        print(f"ate rmse [m]: uniform {rmse['uniform']:.6f}, saliency {rmse['saliency']:.6f}")
        print("smoke test passed")


if __name__ == "__main__":
    main()
