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

"""Two-stage camera calibration from circle centroids.

Stage one assumes no distortion: a homography per view (normalized DLT), intrinsics from the
image of the absolute conic, and a pose per view from its homography. Stage two refines
intrinsics, radial distortion and all poses jointly with Levenberg-Marquardt, predicting each
measurement with the selected control-point estimator.
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from covalent._shared_files.logger import app_log
from scipy import linalg
from scipy.spatial.transform import Rotation

from .camera import Intrinsics, PoseSE3, extrinsic_matrices_batch
from .config import calib_config
from .conic import Homography
from .distortion import DistortionModel
from .errors import (
    BehindCamera,
    ConfigError,
    DegenerateConfiguration,
    DivergedNonFinite,
    GeometryError,
    NonPositiveDefinite,
)
from .estimators import EstimatorSpec, predict_points
from .synthetic import Measurement, TargetSpec

RANK_EPS = 1e-10
CONVERGED_REASONS = ("cost_converged", "gradient_converged", "step_converged")


@dataclass(frozen=True)
class SolverOptions:
    """Refinement settings; any field left as None is read from the config."""

    estimator: Optional[EstimatorSpec] = None
    n_distortion: Optional[int] = None
    estimate_skew: Optional[bool] = None
    max_iterations: Optional[int] = None
    lm_lambda: Optional[float] = None
    lm_lambda_max: Optional[float] = None
    cost_rtol: Optional[float] = None
    cost_atol: Optional[float] = None
    gradient_tol: Optional[float] = None
    step_tol: Optional[float] = None
    fd_step: Optional[float] = None

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) is None:
                object.__setattr__(self, name, calib_config(name))
        if not isinstance(self.estimator, EstimatorSpec):
            object.__setattr__(self, "estimator", EstimatorSpec.parse(self.estimator))
        if not 0 <= self.n_distortion <= 8:
            raise ConfigError(f"n_distortion must be in [0, 8], got {self.n_distortion}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be positive, got {self.max_iterations}")


@dataclass(frozen=True)
class CalibrationProblem:
    """Measured centroids of a circle grid over several views."""

    spec: TargetSpec
    measurements: Tuple[Measurement, ...]
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        measurements = tuple(sorted(self.measurements, key=lambda m: (m.view_id, m.point_id)))
        object.__setattr__(self, "measurements", measurements)
        keys = [(m.view_id, m.point_id) for m in measurements]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate (view_id, point_id) measurements")
        if any(not 0 <= m.point_id < self.spec.n_points for m in measurements):
            raise ConfigError(f"point ids must lie in [0, {self.spec.n_points})")
        if len(self.view_ids) < 3:
            raise DegenerateConfiguration(f"need at least 3 views, got {len(self.view_ids)}")
        counts = np.bincount(self.view_index, minlength=len(self.view_ids))
        if np.any(counts < 4):
            view = self.view_ids[int(np.argmin(counts))]
            raise DegenerateConfiguration(f"view {view} has fewer than 4 points")

    @property
    def view_ids(self) -> List[int]:
        return sorted({m.view_id for m in self.measurements})

    @property
    def view_index(self) -> np.ndarray:
        lookup = {v: i for i, v in enumerate(self.view_ids)}
        return np.array([lookup[m.view_id] for m in self.measurements])

    @property
    def point_ids(self) -> np.ndarray:
        return np.array([m.point_id for m in self.measurements])

    @property
    def centers(self) -> np.ndarray:
        return self.spec.centers()[self.point_ids]

    @property
    def observed(self) -> np.ndarray:
        return np.array([[m.u, m.v] for m in self.measurements])

    def subset(self, view_ids: Sequence[int]) -> "CalibrationProblem":
        keep = set(view_ids)
        return CalibrationProblem(
            self.spec, tuple(m for m in self.measurements if m.view_id in keep), self.options
        )

    def with_options(self, **overrides) -> "CalibrationProblem":
        fields = SolverOptions.__dataclass_fields__
        current = {name: getattr(self.options, name) for name in fields}
        current.update(overrides)
        return CalibrationProblem(self.spec, self.measurements, SolverOptions(**current))


@dataclass(frozen=True)
class CalibrationResult:
    intrinsics: Intrinsics
    distortion: DistortionModel
    poses: Tuple[PoseSE3, ...]
    view_ids: Tuple[int, ...]
    rms: float
    residuals: np.ndarray
    iterations: int
    final_cost: float
    termination_reason: str
    estimator: str

    @property
    def converged(self) -> bool:
        return self.termination_reason in CONVERGED_REASONS

    def pose_for(self, view_id: int) -> PoseSE3:
        return self.poses[self.view_ids.index(view_id)]

    def to_dict(self) -> Dict:
        k = self.intrinsics
        return {
            "estimator": self.estimator,
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "skew": k.skew},
            "distortion": list(self.distortion.coefficients),
            "views": [
                {"view_id": v, "rotvec": p.rotvec.tolist(), "translation": p.translation.tolist()}
                for v, p in zip(self.view_ids, self.poses)
            ],
            "rms": self.rms,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "termination_reason": self.termination_reason,
        }


def _similarity_normalization(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the RMS distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((points - centroid) ** 2, axis=1)))
    if not rms > 0:
        raise DegenerateConfiguration("all points coincide")
    scale = np.sqrt(2.0) / rms
    return np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _apply(t: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ t[:2, :2].T + t[:2, 2]


def estimate_homography(points_w: Sequence, points_i: Sequence) -> Homography:
    """Homography mapping target-plane points to image points by normalized DLT."""
    pw = np.asarray(points_w, dtype=float).reshape(-1, 2)
    pi = np.asarray(points_i, dtype=float).reshape(-1, 2)
    if pw.shape != pi.shape or len(pw) < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {len(pw)}")

    tw, ti = _similarity_normalization(pw), _similarity_normalization(pi)
    xw, xi = _apply(tw, pw), _apply(ti, pi)
    spread = np.linalg.svd(xw, compute_uv=False)
    if spread[-1] < RANK_EPS * spread[0]:
        raise DegenerateConfiguration("target points are collinear")

    n = len(pw)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:2] = -xw
    a[0::2, 2] = -1.0
    a[0::2, 6:8] = xw * xi[:, :1]
    a[0::2, 8] = xi[:, 0]
    a[1::2, 3:5] = -xw
    a[1::2, 5] = -1.0
    a[1::2, 6:8] = xw * xi[:, 1:]
    a[1::2, 8] = xi[:, 1]
    _, s, vt = np.linalg.svd(a)
    if s[-2] < RANK_EPS * s[0]:
        raise DegenerateConfiguration("homography is not unique for these correspondences")
    h = np.linalg.solve(ti, vt[-1].reshape(3, 3) @ tw)
    try:
        return Homography(h / np.linalg.norm(h) * np.sign(h[2, 2] or 1.0))
    except GeometryError as e:
        raise DegenerateConfiguration(str(e)) from e


def _iac_row(h: np.ndarray, i: int, j: int) -> np.ndarray:
    hi, hj = h[:, i], h[:, j]
    return np.array(
        [
            hi[0] * hj[0],
            hi[0] * hj[1] + hi[1] * hj[0],
            hi[1] * hj[1],
            hi[2] * hj[0] + hi[0] * hj[2],
            hi[2] * hj[1] + hi[1] * hj[2],
            hi[2] * hj[2],
        ]
    )


def zhang_init(homographies: Sequence[Homography], estimate_skew: bool = None) -> Intrinsics:
    """Intrinsics from plane homographies through the image of the absolute conic."""
    if estimate_skew is None:
        estimate_skew = calib_config("estimate_skew")
    needed = 3 if estimate_skew else 2
    if len(homographies) < needed:
        raise DegenerateConfiguration(f"need at least {needed} views, got {len(homographies)}")

    hs = [np.asarray(getattr(h, "matrix", h), dtype=float) for h in homographies]
    origins = np.array([h[:2, 2] / h[2, 2] for h in hs])
    c = origins.mean(axis=0)
    scale = 1.0 / max(np.linalg.norm(c), 1.0)
    t = np.array([[scale, 0.0, -scale * c[0]], [0.0, scale, -scale * c[1]], [0.0, 0.0, 1.0]])

    rows = []
    for h in hs:
        h = t @ h
        h = h / np.linalg.norm(h)
        rows.append(_iac_row(h, 0, 1))
        rows.append(_iac_row(h, 0, 0) - _iac_row(h, 1, 1))
    if not estimate_skew:
        rows.append(np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]))
    _, s, vt = np.linalg.svd(np.array(rows))
    if len(s) < 5 or s[4] < RANK_EPS * s[0]:
        raise DegenerateConfiguration("views do not constrain the intrinsics")

    b11, b12, b22, b13, b23, b33 = vt[-1] if vt[-1][0] > 0 else -vt[-1]
    det2 = b11 * b22 - b12 * b12
    if not (b11 > 0 and det2 > 0):
        raise NonPositiveDefinite(f"image of the absolute conic is indefinite (det={det2:.3e})")
    v0 = (b12 * b13 - b11 * b23) / det2
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if not lam > 0:
        raise NonPositiveDefinite(f"image of the absolute conic is indefinite (lambda={lam:.3e})")
    alpha = np.sqrt(lam / b11)
    beta = np.sqrt(lam * b11 / det2)
    gamma = -b12 * alpha * alpha * beta / lam if estimate_skew else 0.0
    u0 = gamma * v0 / beta - b13 * alpha * alpha / lam

    k = np.linalg.solve(t, np.array([[alpha, gamma, u0], [0.0, beta, v0], [0.0, 0.0, 1.0]]))
    k = k / k[2, 2]
    return Intrinsics(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], skew=k[0, 1])


def init_extrinsics(h: Homography, intrinsics: Intrinsics) -> PoseSE3:
    """Pose of the target from its homography, with the target in front of the camera."""
    m = np.linalg.solve(intrinsics.matrix, np.asarray(getattr(h, "matrix", h), dtype=float))
    lam = 1.0 / np.linalg.norm(m[:, 0])
    if m[2, 2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * m[:, 0], lam * m[:, 1], lam * m[:, 2]
    if not t[2] > 0:
        raise BehindCamera(f"target plane is not in front of the camera (t_z={t[2]:.3e})")
    r = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(r)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0:
        rotation = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return PoseSE3(rotation, t)


@dataclass(frozen=True)
class ParameterLayout:
    """[fx, fy, (skew), cx, cy, d_1..d_n, (rotvec, t) per view]."""

    n_views: int
    n_distortion: int
    estimate_skew: bool

    @property
    def names(self) -> List[str]:
        names = ["fx", "fy"] + (["skew"] if self.estimate_skew else []) + ["cx", "cy"]
        return names + [f"d{i}" for i in range(1, self.n_distortion + 1)]

    @property
    def n_shared(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return self.n_shared + 6 * self.n_views

    def pack(
        self, intrinsics: Intrinsics, radial: Sequence[float], poses: Sequence[PoseSE3]
    ) -> np.ndarray:
        shared = [intrinsics.fx, intrinsics.fy]
        if self.estimate_skew:
            shared.append(intrinsics.skew)
        shared += [intrinsics.cx, intrinsics.cy] + list(radial)
        views = [np.concatenate([p.rotvec, p.translation]) for p in poses]
        return np.concatenate([np.array(shared, dtype=float)] + views)

    def unpack(self, theta: np.ndarray):
        """Split (..., size) into intrinsics rows (..., 5), distortion rows, rotvecs and t."""
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        fx, fy = theta[..., 0], theta[..., 1]
        i = 2
        skew = np.zeros(lead)
        if self.estimate_skew:
            skew = theta[..., 2]
            i = 3
        cx, cy = theta[..., i], theta[..., i + 1]
        i += 2
        k = np.stack([fx, fy, cx, cy, skew], axis=-1)
        d = np.concatenate([np.ones(lead + (1,)), theta[..., i : i + self.n_distortion]], axis=-1)
        views = theta[..., self.n_shared :].reshape(lead + (self.n_views, 6))
        return k, d, views[..., :3], views[..., 3:]


class _Objective:
    """Residuals and finite-difference Jacobian of the reprojection error."""

    def __init__(self, problem: CalibrationProblem, layout: ParameterLayout):
        self.problem = problem
        self.layout = layout
        self.estimator = problem.options.estimator
        self.fd_step = problem.options.fd_step
        self.centers = problem.centers
        self.observed = problem.observed
        self.view_index = problem.view_index
        self.n_points = len(self.observed)

    def predict(self, thetas: np.ndarray) -> np.ndarray:
        """Predicted centroids for a batch of parameter vectors, shape (B, N, 2)."""
        thetas = np.atleast_2d(thetas)
        b, n = thetas.shape[0], self.n_points
        k, d, rotvecs, translations = self.layout.unpack(thetas)
        rotations = Rotation.from_rotvec(rotvecs.reshape(-1, 3)).as_matrix()
        e = extrinsic_matrices_batch(rotations, translations.reshape(-1, 3))
        e = e.reshape(b, self.layout.n_views, 3, 3)[:, self.view_index].reshape(-1, 3, 3)
        predicted = predict_points(
            self.estimator,
            np.tile(self.centers, (b, 1)),
            self.problem.spec.radius,
            e,
            np.repeat(k, n, axis=0),
            np.repeat(d, n, axis=0),
        )
        return predicted.reshape(b, n, 2)

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        return (self.predict(theta)[0] - self.observed).ravel()

    def jacobian(self, theta: np.ndarray, step_scale: float = 1.0) -> np.ndarray:
        """Central differences; each pose parameter slot is perturbed in every view at once."""
        layout, n = self.layout, self.n_points
        steps = step_scale * np.maximum(self.fd_step, self.fd_step * np.abs(theta))
        columns = list(range(layout.n_shared))
        for q in range(6):
            columns.append(layout.n_shared + q + 6 * np.arange(layout.n_views))

        trials = []
        for col in columns:
            delta = np.zeros_like(theta)
            delta[col] = steps[col]
            trials += [theta + delta, theta - delta]
        predicted = self.predict(np.array(trials)).reshape(len(columns), 2, n, 2)
        derivative = predicted[:, 0] - predicted[:, 1]

        jac = np.zeros((2 * n, layout.size))
        for c, col in enumerate(columns):
            if c < layout.n_shared:
                jac[:, col] = derivative[c].ravel() / (2.0 * steps[col])
                continue
            own = col[self.view_index]
            rows = 2 * np.arange(n)
            jac[rows, own] = derivative[c, :, 0] / (2.0 * steps[own])
            jac[rows + 1, own] = derivative[c, :, 1] / (2.0 * steps[own])
        return jac


def refine(
    problem: CalibrationProblem,
    intrinsics: Intrinsics,
    poses: Sequence[PoseSE3],
    distortion: DistortionModel = None,
) -> CalibrationResult:
    """Joint Levenberg-Marquardt refinement of intrinsics, distortion and poses.

    Distortion starts at zero unless given. Hitting the iteration cap is not an error: the
    result comes back with ``termination_reason="max_iterations"``. Running out of damping
    counts as converged only when the first trial step was already below ``step_tol``.

    Raises:
        DivergedNonFinite: the cost at the seed is not finite.
    """
    options = problem.options
    layout = ParameterLayout(len(problem.view_ids), options.n_distortion, options.estimate_skew)
    radial = np.zeros(options.n_distortion)
    if distortion is not None:
        given = np.asarray(distortion.radial[: options.n_distortion])
        radial[: given.size] = given
    objective = _Objective(problem, layout)

    theta = layout.pack(intrinsics, radial, poses)
    if not np.all(np.isfinite(theta)):
        raise DivergedNonFinite("seed parameters are not finite")
    residual = objective.residuals(theta)
    cost = float(residual @ residual)
    if not np.isfinite(cost):
        raise DivergedNonFinite(f"initial cost is {cost}")

    start = time.perf_counter()
    lam = options.lm_lambda
    reason = "max_iterations"
    iteration = 0
    for iteration in range(1, options.max_iterations + 1):
        if cost <= options.cost_atol:
            reason = "cost_converged"
            break
        jac = objective.jacobian(theta)
        gradient = jac.T @ residual
        if np.max(np.abs(gradient)) < options.gradient_tol:
            reason = "gradient_converged"
            break
        normal = jac.T @ jac
        damping = np.diag(normal).copy()
        damping[damping == 0.0] = 1.0
        step_floor = options.step_tol * (np.linalg.norm(theta) + options.step_tol)

        accepted = False
        first_step = None
        while lam <= options.lm_lambda_max:
            try:
                factor = linalg.cho_factor(normal + lam * np.diag(damping))
                step = linalg.cho_solve(factor, -gradient)
                if first_step is None:
                    first_step = float(np.linalg.norm(step))
                trial = theta + step
                trial_residual = objective.residuals(trial)
            except (linalg.LinAlgError, GeometryError) as e:
                app_log.debug(f"LM step rejected at lambda={lam:.1e}: {e}")
                lam *= 10.0
                continue
            trial_cost = float(trial_residual @ trial_residual)
            if np.isfinite(trial_cost) and trial_cost < cost:
                accepted = True
                break
            lam *= 10.0

        if not accepted:
            # no decrease even from a step below the parameter resolution: at the minimum
            if first_step is not None and first_step <= step_floor:
                reason = "step_converged"
            else:
                reason = "damping_exhausted"
                app_log.warning(
                    f"Refinement stalled at iteration {iteration} with cost {cost:.6e}"
                )
            break
        change = (cost - trial_cost) / cost
        theta, residual, cost = trial, trial_residual, trial_cost
        lam = max(lam / 10.0, np.finfo(float).tiny)
        app_log.debug(f"LM iteration {iteration}: cost={cost:.6e} lambda={lam:.1e}")
        if change < options.cost_rtol or cost <= options.cost_atol:
            reason = "cost_converged"
            break
        if np.linalg.norm(step) <= step_floor:
            reason = "step_converged"
            break

    if reason == "max_iterations":
        app_log.warning(f"Refinement stopped after {options.max_iterations} iterations")
    app_log.debug(
        f"Refinement with {options.estimator} finished ({reason}) after {iteration} iterations "
        f"in {time.perf_counter() - start:.2f} s"
    )

    k, d, rotvecs, translations = layout.unpack(theta)
    n = objective.n_points
    return CalibrationResult(
        intrinsics=Intrinsics.from_array(k),
        distortion=DistortionModel(tuple(d)),
        poses=tuple(
            PoseSE3.from_axis_angle(rv, t) for rv, t in zip(rotvecs, translations)
        ),
        view_ids=tuple(problem.view_ids),
        rms=float(np.sqrt(cost / (2 * n))),
        residuals=residual.reshape(n, 2),
        iterations=iteration,
        final_cost=cost,
        termination_reason=reason,
        estimator=str(options.estimator),
    )


def view_homographies(problem: CalibrationProblem) -> List[Homography]:
    observed, centers, index = problem.observed, problem.centers, problem.view_index
    return [
        estimate_homography(centers[index == i], observed[index == i])
        for i in range(len(problem.view_ids))
    ]


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Closed-form initialization followed by refinement."""
    homographies = view_homographies(problem)
    intrinsics = zhang_init(homographies, problem.options.estimate_skew)
    app_log.debug(f"Closed-form intrinsics: {intrinsics}")
    poses = [init_extrinsics(h, intrinsics) for h in homographies]
    return refine(problem, intrinsics, poses)


def repeat_protocol(
    problem: CalibrationProblem, subset_size: int, repeats: int, seed: int
) -> pd.DataFrame:
    """Calibrate on ``repeats`` random view subsets; one row of parameters per run."""
    views = problem.view_ids
    if not 3 <= subset_size <= len(views):
        raise ConfigError(f"subset size must be in [3, {len(views)}], got {subset_size}")
    rng = np.random.default_rng(seed)
    rows = []
    for run in range(repeats):
        chosen = sorted(rng.choice(views, size=subset_size, replace=False).tolist())
        result = calibrate(problem.subset(chosen))
        k = result.intrinsics
        row = {"run": run, "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "skew": k.skew}
        row.update({f"d{i}": v for i, v in enumerate(result.distortion.radial, start=1)})
        row.update({"rms": result.rms, "termination_reason": result.termination_reason})
        rows.append(row)
        app_log.debug(f"Repeat {run}: {row}")
    return pd.DataFrame(rows)


def summarize_runs(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of every numeric parameter column."""
    numeric = runs.drop(columns=["run"]).select_dtypes("number")
    return numeric.agg(["mean", "std"]).T


def reprojection_report(result: CalibrationResult, problem: CalibrationProblem) -> pd.DataFrame:
    """Per-view residual statistics with near/mid/far distance terciles."""
    norms = np.linalg.norm(result.residuals, axis=1)
    frame = pd.DataFrame({"view_id": [m.view_id for m in problem.measurements], "error": norms})
    report = frame.groupby("view_id")["error"].agg(mean_error="mean", max_error="max")
    report = report.reset_index()
    report["distance"] = [
        float(np.linalg.norm(result.pose_for(v).translation)) for v in report["view_id"]
    ]
    report["error_per_metre"] = report["mean_error"] / report["distance"]
    ranks = report["distance"].rank(method="first")
    report["bucket"] = pd.qcut(ranks, 3, labels=["near", "mid", "far"])
    return report


def bucket_means(report: pd.DataFrame) -> pd.Series:
    return report.groupby("bucket", observed=False)["mean_error"].mean()
