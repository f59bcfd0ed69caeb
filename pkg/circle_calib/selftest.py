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

"""Agreement checks between the closed forms and independent references."""

from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from covalent._shared_files.logger import app_log
from scipy.special import comb

from .camera import PoseSE3
from .distortion import DistortionModel
from .estimators import EstimatorSpec, predict_view
from .moments import (
    COMBINATIONS,
    EllipseFrame,
    moment_vector_unrotated,
    quadrature_moment_vector,
)
from .sweep import REFERENCE_INTRINSICS


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tolerance)


def check_binomial_table(combinations=COMBINATIONS) -> CheckResult:
    deviation = 0.0
    for n in range(combinations.n_max + 1):
        for k in range(n + 1):
            deviation = max(deviation, abs(combinations(n, k) - comb(n, k, exact=True)))
    return CheckResult("binomial_table", float(deviation), 0.0)


def check_moments(rng: np.random.Generator, r_max: int = 12, n_frames: int = 4) -> CheckResult:
    deviation = 0.0
    for _ in range(n_frames):
        frame = EllipseFrame(
            tx=rng.uniform(-0.5, 0.5),
            ty=rng.uniform(-0.5, 0.5),
            a=rng.uniform(0.05, 0.3),
            b=rng.uniform(0.05, 0.3),
        )
        for r in range(r_max + 1):
            closed = moment_vector_unrotated(frame, r).as_array()
            reference = quadrature_moment_vector(frame, r).as_array()
            deviation = max(deviation, float(np.max(np.abs(closed - reference))))
    return CheckResult("moment_vectors", deviation, 1e-10)


def check_w_coefficients(rng: np.random.Generator, n_models: int = 8) -> CheckResult:
    deviation = 0.0
    s = np.linspace(0.0, 1.5, 31)
    for _ in range(n_models):
        model = DistortionModel.from_radial(*rng.uniform(-0.3, 0.3, size=rng.integers(1, 5)))
        w = model.w_coefficients()
        k, slope = model.scale(s), model.radial_slope(s)
        deviation = max(
            deviation,
            float(np.max(np.abs(np.polynomial.polynomial.polyval(s, w.w0) - k * slope))),
            float(np.max(np.abs(np.polynomial.polynomial.polyval(s, w.w1) - k * k * slope))),
        )
    return CheckResult("w_coefficients", deviation, 1e-12)


def check_estimators(rng: np.random.Generator, n_views: int = 4) -> CheckResult:
    deviation = 0.0
    distortion = DistortionModel.from_radial(-0.2, 0.05)
    centers = np.array([[0.0, 0.0], [0.05, -0.03], [-0.04, 0.06]])
    for _ in range(n_views):
        pose = PoseSE3.from_axis_angle(
            rng.uniform(-0.5, 0.5, size=3), [rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.5]
        )
        closed = predict_view("unbiased", centers, 0.02, pose, REFERENCE_INTRINSICS, distortion)
        dense = predict_view(
            EstimatorSpec("numerical", 256**2),
            centers,
            0.02,
            pose,
            REFERENCE_INTRINSICS,
            distortion,
        )
        deviation = max(deviation, float(np.max(np.abs(closed - dense))))
    return CheckResult("unbiased_estimator", deviation, 1e-6)


CHECKS: List[Callable[[np.random.Generator], CheckResult]] = [
    lambda rng: check_binomial_table(),
    check_moments,
    check_w_coefficients,
    check_estimators,
]


def run_selftest(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for check in CHECKS:
        result = check(rng)
        app_log.debug(f"Selftest {result.name}: deviation {result.max_deviation:.3e}")
        results.append(result)
    return results
