# Copyright 2021 Agnostiq Inc.
#
# This file is part of Covalent.
#
# Licensed under the GNU Affero General Public License 3.0 (the "License").
# A copy of the License may be obtained with this software package or at
#
#      https://www.gnu.org/licenses/agpl-3.0.en.html
#
# Use of this file is prohibited except in compliance with the License. Any
# modifications or derivative works of this file must retain this copyright
# notice, and modified files must contain a notice indicating that they have
# been altered from the originals.
#
# Covalent is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or
# FITNESS FOR A PARTICULAR PURPOSE. See the License for more details.
#
# Relief from the License may be granted by purchasing a commercial license.

"""Command line driver: ``circle-calib <subcommand> [options]``.

Exit codes: 0 on success, 1 when a computation fails, 2 for invalid input or configuration.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from covalent._shared_files.logger import app_log

from . import io
from .calibration import (
    CalibrationProblem,
    SolverOptions,
    calibrate,
    reprojection_report,
    repeat_protocol,
    summarize_runs,
)
from .camera import Intrinsics
from .distortion import DistortionModel
from .errors import CircleCalibError, ConfigError, DetectionCountMismatch
from .estimators import EstimatorSpec
from .executor import ViewExecutor
from .pose_eval import PosePairSet, pose_error, solve_axxb
from .selftest import run_selftest
from .sweep import DEFAULT_D1, DEFAULT_ESTIMATORS, DEFAULT_RADII, run_sweep
from .synthetic import (
    REFERENCE_IMAGE_SIZE,
    TargetSpec,
    generate_scene,
    measure_centroids,
    oracle_measurements,
    render_view,
)

DEFAULT_SCENE = {
    "target": {},
    "intrinsics": {"fx": 600.0, "fy": 600.0, "cx": 600.0, "cy": 450.0},
    "distortion": [1.0, -0.2],
    "n_views": 100,
    "image_size": list(REFERENCE_IMAGE_SIZE),
    "blur_sigma": 0.0,
}


@dataclass
class RunConfig:
    subcommand: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: List[Path] = field(default_factory=list)
    out: Path = Path(".")
    seed: Optional[int] = None
    estimator: Optional[EstimatorSpec] = None
    oracle: bool = False
    blur: Optional[float] = None
    repeats: Optional[int] = None

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"{self.subcommand} needs --seed")
        return self.seed


def _scene_dir(path: Path) -> Path:
    return path.parent if path.is_file() else path


def cmd_gen_scene(run: RunConfig) -> int:
    settings = {**DEFAULT_SCENE, **run.config}
    try:
        spec = TargetSpec(**settings["target"])
        intrinsics = Intrinsics(**settings["intrinsics"])
        distortion = DistortionModel(tuple(settings["distortion"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid scene configuration: {e}") from e
    blur = settings["blur_sigma"] if run.blur is None else run.blur
    scene = generate_scene(
        spec,
        intrinsics,
        distortion,
        n_views=int(settings["n_views"]),
        seed=run.require_seed(),
        image_size=tuple(settings["image_size"]),
        blur_sigma=float(blur),
        supersample=settings.get("supersample"),
    )
    io.save_scene(run.out / "scene.json", scene)

    def render(view_id):
        io.write_pgm(run.out / io.view_image_name(view_id), render_view(scene, view_id))

    ViewExecutor().run(render, range(scene.n_views))
    print(f"Wrote {scene.n_views} views to {run.out}")
    return 0


def cmd_measure(run: RunConfig) -> int:
    scene_path = run.inputs[0]
    scene_path = scene_path / "scene.json" if scene_path.is_dir() else scene_path
    scene = io.load_scene(scene_path)
    images = _scene_dir(scene_path)

    def measure(view_id):
        if run.oracle:
            return oracle_measurements(scene, view_id)
        image = io.read_pgm(images / io.view_image_name(view_id))
        try:
            return measure_centroids(image, scene, view_id)
        except DetectionCountMismatch as e:
            app_log.warning(str(e))
            return e

    results = ViewExecutor().run(measure, range(scene.n_views))
    failures = [r for r in results if isinstance(r, DetectionCountMismatch)]
    measurements = [m for r in results if not isinstance(r, Exception) for m in r]
    io.write_measurements(run.out / "measurements.csv", measurements)
    print(f"Measured {len(measurements)} centroids in {scene.n_views - len(failures)} views")
    for failure in failures:
        print(f"  failed: {failure}")
    return 1 if failures else 0


def _problem(run: RunConfig) -> CalibrationProblem:
    measurements = io.read_measurements(run.inputs[0])
    settings = run.config
    if "target" not in settings:
        raise ConfigError("calibrate needs --config with a 'target' section (scene.json works)")
    try:
        spec = TargetSpec(**settings["target"])
        solver = dict(settings.get("solver", {}))
        if run.estimator is not None:
            solver["estimator"] = run.estimator
        options = SolverOptions(**solver)
    except TypeError as e:
        raise ConfigError(f"invalid solver configuration: {e}") from e
    return CalibrationProblem(spec, tuple(measurements), options)


def cmd_calibrate(run: RunConfig) -> int:
    problem = _problem(run)
    if run.repeats:
        subset = min(int(run.config.get("subset_size", 30)), len(problem.view_ids))
        runs = repeat_protocol(problem, subset, run.repeats, run.require_seed())
        io.write_table(run.out / "repeats.csv", runs)
        print(summarize_runs(runs).to_string(float_format=lambda v: f"{v:.6f}"))
        return 0

    result = calibrate(problem)
    io.write_json(run.out / "result.json", {**result.to_dict(), "seed": run.seed})
    residuals = pd.DataFrame(
        {
            "view_id": [m.view_id for m in problem.measurements],
            "point_id": [m.point_id for m in problem.measurements],
            "du": result.residuals[:, 0],
            "dv": result.residuals[:, 1],
        },
        columns=io.RESIDUAL_COLUMNS,
    )
    io.write_table(run.out / "residuals.csv", residuals)
    io.write_table(run.out / "report.csv", reprojection_report(result, problem))

    k = result.intrinsics
    table = pd.Series(
        {
            "fx": k.fx,
            "fy": k.fy,
            "cx": k.cx,
            "cy": k.cy,
            "skew": k.skew,
            **{f"d{i}": v for i, v in enumerate(result.distortion.radial, start=1)},
        }
    )
    print(f"estimator: {result.estimator}")
    print(table.to_string(float_format=lambda v: f"{v:.6f}"))
    print(f"RMS: {result.rms:.3e} px")
    print(f"termination: {result.termination_reason} after {result.iterations} iterations")
    return 0


def cmd_sweep(run: RunConfig) -> int:
    settings = run.config
    seed = 0 if run.seed is None else run.seed
    grid = {
        "radii": [float(r) for r in settings.get("radii", DEFAULT_RADII)],
        "d1": [float(d) for d in settings.get("d1", DEFAULT_D1)],
        "estimators": [str(e) for e in settings.get("estimators", DEFAULT_ESTIMATORS)],
        "n_scenes": int(settings.get("n_scenes", 24)),
    }
    table = run_sweep(
        radii=grid["radii"],
        d1_values=grid["d1"],
        estimators=grid["estimators"],
        n_scenes=grid["n_scenes"],
        seed=seed,
        oracle_samples=settings.get("oracle_samples"),
    )
    io.write_table(run.out / "sweep.csv", table)
    io.write_json(run.out / "sweep.json", {"seed": seed, "table": "sweep.csv", **grid})
    worst = table.groupby("estimator")["mean_error"].max()
    print(worst.to_string(float_format=lambda v: f"{v:.3e}"))
    return 0


def cmd_eval_pose(run: RunConfig) -> int:
    pairs = PosePairSet(tuple(io.read_pose_pairs(run.inputs[0])))
    x, y = solve_axxb(pairs)
    error = pose_error(pairs, x, y)
    io.write_json(
        run.out / "pose_error.json",
        {
            "rotation_deg": error.rotation_deg,
            "translation_mm": error.translation_mm,
            "X": io.pose_to_dict(x),
            "Y": io.pose_to_dict(y),
        },
    )
    print(f"rotation error: {error.rotation_deg:.4f} deg")
    print(f"translation error: {error.translation_mm:.4f} mm")
    return 0


def cmd_selftest(run: RunConfig) -> int:
    results = run_selftest(0 if run.seed is None else run.seed)
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        deviation = f"max deviation {r.max_deviation:.3e} (tol {r.tolerance:.0e})"
        print(f"{verdict}  {r.name:<20} {deviation}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "gen-scene": (cmd_gen_scene, 0),
    "measure": (cmd_measure, 1),
    "calibrate": (cmd_calibrate, 1),
    "sweep": (cmd_sweep, 0),
    "eval-pose": (cmd_eval_pose, 1),
    "selftest": (cmd_selftest, 0),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with command settings")
    common.add_argument("--seed", type=int, help="Seed for every random draw")
    common.add_argument("--out", type=Path, default=Path("."), help="Output directory")
    common.add_argument(
        "--estimator",
        default=None,
        help="unbiased | point | conic | numerical:<n> (default from config)",
    )
    common.add_argument("--oracle", action="store_true", help="Bypass images in measure")
    common.add_argument("--blur", type=float, help="Gaussian blur sigma in pixels")
    common.add_argument("--repeats", type=int, help="Calibrate on random view subsets k times")

    parser = argparse.ArgumentParser(prog="circle-calib", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("gen-scene", parents=[common], help="Sample a scene and render its views")
    sub.add_parser("measure", parents=[common], help="Measure centroids").add_argument(
        "scene", type=Path, help="scene.json or the directory holding it"
    )
    sub.add_parser("calibrate", parents=[common], help="Calibrate from centroids").add_argument(
        "measurements", type=Path, help="Measurements CSV"
    )
    sub.add_parser("sweep", parents=[common], help="Estimator bias sweep")
    sub.add_parser("eval-pose", parents=[common], help="Solve AX=XB, report errors").add_argument(
        "pairs", type=Path, help="Pose pairs JSON"
    )
    sub.add_parser("selftest", parents=[common], help="Closed forms against references")
    return parser


def parse_run_config(argv: List[str] = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    _, n_inputs = COMMANDS[args.subcommand]
    names = ("scene", "measurements", "pairs")
    inputs = [getattr(args, name) for name in names if hasattr(args, name)]
    for path in inputs[:n_inputs]:
        if not path.exists():
            raise ConfigError(f"input {path} does not exist")
    config = {}
    if args.config is not None:
        try:
            config = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    if args.repeats is not None and args.repeats < 1:
        raise ConfigError(f"--repeats must be positive, got {args.repeats}")
    if args.blur is not None and args.blur < 0:
        raise ConfigError(f"--blur must be non-negative, got {args.blur}")
    return RunConfig(
        subcommand=args.subcommand,
        config=config,
        inputs=inputs,
        out=args.out,
        seed=args.seed,
        estimator=None if args.estimator is None else EstimatorSpec.parse(args.estimator),
        oracle=args.oracle,
        blur=args.blur,
        repeats=args.repeats,
    )


def main(argv: List[str] = None) -> int:
    try:
        run = parse_run_config(argv)
        command, _ = COMMANDS[run.subcommand]
        return command(run)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CircleCalibError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
