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

"""Unit tests for the two-stage calibration."""

import numpy as np
import pytest

from circle_calib.calibration import (
    CalibrationProblem,
    ParameterLayout,
    SolverOptions,
    _Objective,
    bucket_means,
    calibrate,
    estimate_homography,
    init_extrinsics,
    refine,
    repeat_protocol,
    reprojection_report,
    summarize_runs,
    zhang_init,
)
from circle_calib.camera import Intrinsics, PoseSE3, extrinsic_homography
from circle_calib.conic import Homography
from circle_calib.errors import ConfigError, DegenerateConfiguration
from circle_calib.estimators import EstimatorSpec
from circle_calib.synthetic import Measurement, TargetSpec
from tests.conftest import exact_measurements

MOCK_CONFIG = {
    "estimator": "unbiased",
    "n_distortion": 1,
    "estimate_skew": False,
    "max_iterations": 100,
    "lm_lambda": 1e-3,
    "lm_lambda_max": 1e16,
    "cost_rtol": 1e-12,
    "cost_atol": 1e-20,
    "gradient_tol": 1e-10,
    "step_tol": 1e-10,
    "fd_step": 1e-6,
}


@pytest.fixture
def solver_config(mocker):
    return mocker.patch(
        "circle_calib.calibration.calib_config", side_effect=lambda key: MOCK_CONFIG[key]
    )


@pytest.fixture
def problem(solver_config, reference_scene):
    return CalibrationProblem(reference_scene.spec, tuple(exact_measurements(reference_scene)))


def camera_homographies(scene):
    k = scene.intrinsics.matrix
    return [Homography(k @ extrinsic_homography(p).matrix) for p in scene.poses]


def test_solver_options_from_config(solver_config):
    """Test that unset options are read from the config and the estimator is parsed."""

    options = SolverOptions(max_iterations=7)
    assert options.estimator == EstimatorSpec("unbiased")
    assert options.n_distortion == 1
    assert options.max_iterations == 7
    solver_config.assert_any_call("fd_step")


@pytest.mark.parametrize(
    "kwargs", [{"n_distortion": 9}, {"estimator": "bogus"}, {"max_iterations": 0}]
)
def test_solver_options_validation(solver_config, kwargs):
    """Test that invalid refinement settings are configuration errors."""

    with pytest.raises(ConfigError):
        SolverOptions(**kwargs)


def test_problem_validation(solver_config, reference_scene):
    """Test the view and point count requirements of a problem."""

    measurements = exact_measurements(reference_scene)
    spec = reference_scene.spec
    two_views = tuple(m for m in measurements if m.view_id < 2)
    with pytest.raises(DegenerateConfiguration):
        CalibrationProblem(spec, two_views)
    sparse = tuple(m for m in measurements if m.view_id != 0 or m.point_id < 3)
    with pytest.raises(DegenerateConfiguration):
        CalibrationProblem(spec, sparse)
    with pytest.raises(ConfigError):
        CalibrationProblem(spec, tuple(measurements) + (measurements[0],))
    with pytest.raises(ConfigError):
        CalibrationProblem(spec, tuple(measurements) + (Measurement(0, 99, 1.0, 1.0),))


def test_problem_views(problem):
    """Test the view bookkeeping and subsets."""

    assert problem.view_ids == list(range(6))
    assert problem.observed.shape == (6 * 24, 2)
    assert problem.centers.shape == (6 * 24, 2)
    assert problem.subset([1, 3, 5]).view_ids == [1, 3, 5]
    assert problem.with_options(n_distortion=2).options.n_distortion == 2


def test_homography_identity():
    """Test that identical point sets give the identity homography."""

    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.3, 0.6]])
    h = estimate_homography(square, square).matrix
    assert h / h[2, 2] == pytest.approx(np.eye(3), abs=1e-12)


def test_homography_recovers_projection(reference_scene):
    """Test the normalized DLT on exact projections of the grid."""

    centers = reference_scene.spec.centers()
    for h in camera_homographies(reference_scene):
        estimated = estimate_homography(centers, h.apply(centers))
        assert estimated.normalized() == pytest.approx(h.normalized(), abs=1e-9)


def test_homography_degenerate():
    """Test that collinear or too few points are rejected."""

    line = np.column_stack([np.linspace(0.0, 1.0, 6), np.zeros(6)])
    with pytest.raises(DegenerateConfiguration):
        estimate_homography(line, line)
    with pytest.raises(DegenerateConfiguration):
        estimate_homography(line[:3], line[:3])


def test_zhang_init_exact(reference_scene):
    """Test that exact homographies give back the intrinsics."""

    k = zhang_init(camera_homographies(reference_scene), estimate_skew=False)
    assert k.as_array() == pytest.approx([600.0, 600.0, 600.0, 450.0, 0.0], abs=1e-6)


def test_zhang_init_with_skew(reference_scene):
    """Test that skew is recovered when it is estimated."""

    skewed = Intrinsics(fx=610.0, fy=590.0, cx=580.0, cy=470.0, skew=2.0)
    homographies = [
        Homography(skewed.matrix @ extrinsic_homography(p).matrix) for p in reference_scene.poses
    ]
    k = zhang_init(homographies, estimate_skew=True)
    assert k.as_array() == pytest.approx(skewed.as_array(), abs=1e-6)


def test_zhang_init_frontal_views():
    """Test that views without tilt do not constrain the intrinsics."""

    k = Intrinsics(fx=600.0, fy=600.0, cx=600.0, cy=450.0)
    homographies = [
        Homography(k.matrix @ extrinsic_homography(PoseSE3.from_axis_angle([0, 0, a], t)).matrix)
        for a, t in [(0.1, [0.0, 0.0, 0.5]), (0.7, [0.05, 0.0, 0.6]), (-0.4, [0.0, -0.02, 0.4])]
    ]
    with pytest.raises(DegenerateConfiguration):
        zhang_init(homographies, estimate_skew=False)


def test_init_extrinsics(tilted_pose, reference_intrinsics):
    """Test the pose recovered from a homography of either sign."""

    h = reference_intrinsics.matrix @ extrinsic_homography(tilted_pose).matrix
    for scale in (1.0, -2.0):
        pose = init_extrinsics(Homography(scale * h), reference_intrinsics)
        assert pose.rotation == pytest.approx(tilted_pose.rotation, abs=1e-9)
        assert pose.translation == pytest.approx(tilted_pose.translation, abs=1e-9)


def test_parameter_layout(tilted_pose, reference_intrinsics):
    """Test packing and unpacking of the parameter vector."""

    layout = ParameterLayout(n_views=2, n_distortion=2, estimate_skew=False)
    assert layout.names == ["fx", "fy", "cx", "cy", "d1", "d2"]
    theta = layout.pack(reference_intrinsics, [-0.2, 0.05], [tilted_pose, PoseSE3()])
    assert theta.shape == (layout.size,) == (18,)
    k, d, rotvecs, translations = layout.unpack(np.stack([theta, theta]))
    assert k[1] == pytest.approx(reference_intrinsics.as_array())
    assert d[0] == pytest.approx([1.0, -0.2, 0.05])
    assert rotvecs[0, 0] == pytest.approx(tilted_pose.rotvec)
    assert translations[0, 1] == pytest.approx([0.0, 0.0, 0.0])
    assert ParameterLayout(1, 0, True).names == ["fx", "fy", "skew", "cx", "cy"]


def test_jacobian_step_independent(problem, reference_scene):
    """Test that the finite-difference Jacobian does not depend on the step size."""

    layout = ParameterLayout(6, 1, False)
    objective = _Objective(problem, layout)
    theta = layout.pack(reference_scene.intrinsics, [-0.15], reference_scene.poses)
    jac = objective.jacobian(theta)
    assert jac.shape == (2 * 6 * 24, layout.size)
    np.testing.assert_allclose(
        jac, objective.jacobian(theta, 2.0), rtol=1e-4, atol=1e-6 * np.max(np.abs(jac))
    )
    # points only depend on the pose of their own view
    assert np.all(jac[:48, layout.n_shared + 6 :] == 0.0)


def test_calibrate_noise_free(problem):
    """Test that exact centroids give back the true camera."""

    result = calibrate(problem)
    assert result.converged
    expected = [600.0, 600.0, 600.0, 450.0, 0.0]
    assert result.intrinsics.as_array() == pytest.approx(expected, abs=1e-6)
    assert result.distortion.radial == pytest.approx((-0.2,), abs=1e-8)
    assert result.rms < 1e-8
    assert result.rms**2 * 2 * len(problem.measurements) == pytest.approx(result.final_cost)
    assert result.to_dict()["termination_reason"] == result.termination_reason


def test_calibrate_duplicated_views(problem):
    """Test that duplicating every view under new ids leaves the intrinsics unchanged."""

    copies = tuple(
        Measurement(m.view_id + 100, m.point_id, m.u, m.v) for m in problem.measurements
    )
    doubled = CalibrationProblem(problem.spec, problem.measurements + copies, problem.options)
    single, double = calibrate(problem), calibrate(doubled)
    assert double.intrinsics.as_array() == pytest.approx(single.intrinsics.as_array(), abs=1e-7)
    assert double.pose_for(103).matrix == pytest.approx(double.pose_for(3).matrix, abs=1e-8)


def test_refine_iteration_cap(problem, reference_scene):
    """Test that hitting the iteration cap is reported, not raised."""

    seed = Intrinsics(fx=610.0, fy=595.0, cx=605.0, cy=445.0)
    result = refine(problem.with_options(max_iterations=1), seed, reference_scene.poses)
    assert result.termination_reason == "max_iterations"
    assert not result.converged
    assert result.iterations == 1


def test_refine_perfect_fit_converges(problem, reference_scene):
    """Test that an exact fit stops on the absolute cost and reports convergence."""

    result = refine(
        problem, reference_scene.intrinsics, reference_scene.poses, reference_scene.distortion
    )
    assert result.termination_reason == "cost_converged"
    assert result.converged
    assert result.iterations == 1


def test_refine_stall_is_not_converged(mocker, problem, reference_scene):
    """Test that running out of damping far from the minimum is not reported as converged."""

    jacobian = _Objective.jacobian
    mocker.patch.object(
        _Objective, "jacobian", lambda self, theta, step_scale=1.0: -jacobian(self, theta)
    )
    seed = Intrinsics(fx=610.0, fy=595.0, cx=605.0, cy=445.0)
    result = refine(problem.with_options(lm_lambda_max=100.0), seed, reference_scene.poses)
    assert result.termination_reason == "damping_exhausted"
    assert not result.converged
    assert result.intrinsics.fx == pytest.approx(610.0)


def test_refine_cost_never_increases(problem, reference_scene):
    """Test that every Levenberg-Marquardt iteration lowers or keeps the cost."""

    seed = Intrinsics(fx=610.0, fy=595.0, cx=605.0, cy=445.0)
    costs = [
        refine(problem.with_options(max_iterations=n), seed, reference_scene.poses).final_cost
        for n in range(1, 6)
    ]
    assert all(later <= earlier for earlier, later in zip(costs, costs[1:]))
    assert costs[-1] < costs[0]


def test_repeat_protocol(problem):
    """Test random view subsets and their summary."""

    runs = repeat_protocol(problem, subset_size=4, repeats=2, seed=0)
    assert list(runs["run"]) == [0, 1]
    assert runs["fx"].to_numpy() == pytest.approx([600.0, 600.0], abs=1e-6)
    summary = summarize_runs(runs)
    assert summary.loc["fx", "mean"] == pytest.approx(600.0, abs=1e-6)
    with pytest.raises(ConfigError):
        repeat_protocol(problem, subset_size=2, repeats=1, seed=0)


def test_reprojection_report(problem):
    """Test the per-view report of a perfect fit."""

    result = calibrate(problem)
    report = reprojection_report(result, problem)
    assert list(report.columns) == [
        "view_id",
        "mean_error",
        "max_error",
        "distance",
        "error_per_metre",
        "bucket",
    ]
    assert len(report) == 6
    assert report["max_error"].max() < 1e-6
    assert set(report["bucket"]) == {"near", "mid", "far"}
    near = report.loc[report["bucket"] == "near", "distance"].max()
    far = report.loc[report["bucket"] == "far", "distance"].min()
    assert near < far
    assert len(bucket_means(report)) == 3


def test_target_spec_matches_problem(problem):
    """Test that the problem keeps the target it was built with."""

    assert problem.spec == TargetSpec()
