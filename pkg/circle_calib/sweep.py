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

"""Estimator bias against the dense-quadrature centroid over radius and distortion grids."""

from itertools import product
from typing import Sequence

import numpy as np
import pandas as pd
from covalent._shared_files.logger import app_log

from .camera import Intrinsics, extrinsic_matrices_batch
from .config import calib_config
from .estimators import EstimatorSpec, predict_points
from .executor import ViewExecutor
from .synthetic import sample_sweep_poses

SWEEP_COLUMNS = ["radius", "d1", "estimator", "mean_error", "std_error"]
DEFAULT_RADII = tuple(np.round(np.linspace(0.01, 0.1, 10), 3))
DEFAULT_D1 = (-0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2)
DEFAULT_ESTIMATORS = ("unbiased", "point", "conic", "numerical:1600")
REFERENCE_INTRINSICS = Intrinsics(fx=600.0, fy=600.0, cx=600.0, cy=450.0)


def run_sweep(
    radii: Sequence[float] = DEFAULT_RADII,
    d1_values: Sequence[float] = DEFAULT_D1,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    n_scenes: int = 24,
    seed: int = 0,
    oracle_samples: int = None,
    intrinsics: Intrinsics = REFERENCE_INTRINSICS,
    max_workers: int = None,
) -> pd.DataFrame:
    """Mean and standard deviation of |estimate - oracle| in pixels for every grid cell.

    A single circle at the target origin is seen from ``n_scenes`` fixed poses.
    """
    oracle = EstimatorSpec("numerical", oracle_samples or calib_config("sweep_oracle_samples"))
    specs = [EstimatorSpec.parse(e) for e in estimators]
    poses = sample_sweep_poses(n_scenes, seed)
    e = extrinsic_matrices_batch(
        np.array([p.rotation for p in poses]), np.array([p.translation for p in poses])
    )
    centers = np.zeros((n_scenes, 2))
    k = intrinsics.as_array()

    def cell(job):
        radius, d1 = job
        d = np.array([1.0, d1])
        truth = predict_points(oracle, centers, radius, e, k, d)
        rows = []
        for spec in specs:
            errors = np.linalg.norm(predict_points(spec, centers, radius, e, k, d) - truth, axis=1)
            rows.append((radius, d1, str(spec), errors.mean(), errors.std()))
        app_log.debug(f"Sweep cell r={radius} d1={d1} done")
        return rows

    grid = list(product(radii, d1_values))
    cells = ViewExecutor(max_workers).run(cell, grid)
    return pd.DataFrame([row for rows in cells for row in rows], columns=SWEEP_COLUMNS)
