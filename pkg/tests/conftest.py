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

"""Fixtures shared by the unit and functional tests."""

import numpy as np
import pytest

from circle_calib.camera import Intrinsics, PoseSE3
from circle_calib.distortion import DistortionModel
from circle_calib.estimators import predict_view
from circle_calib.synthetic import Measurement, TargetSpec, generate_scene


@pytest.fixture
def reference_intrinsics():
    return Intrinsics(fx=600.0, fy=600.0, cx=600.0, cy=450.0)


@pytest.fixture
def tilted_pose():
    return PoseSE3.from_axis_angle([0.5, -0.35, 0.2], [0.04, -0.03, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def exact_measurements(scene, estimator="unbiased"):
    """Model-exact centroids for every view of ``scene``."""
    measurements = []
    for view_id, pose in enumerate(scene.poses):
        uv = predict_view(
            estimator,
            scene.spec.centers(),
            scene.spec.radius,
            pose,
            scene.intrinsics,
            scene.distortion,
        )
        measurements += [
            Measurement(view_id, point_id, float(u), float(v), 0)
            for point_id, (u, v) in enumerate(uv)
        ]
    return measurements


@pytest.fixture
def reference_scene(reference_intrinsics):
    return generate_scene(
        TargetSpec(), reference_intrinsics, DistortionModel.from_radial(-0.2), n_views=6, seed=7
    )
