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

"""Calibration defaults registered in the covalent configuration."""

from typing import Any

from covalent._shared_files.config import get_config, update_config

_CALIBRATION_DEFAULTS = {
    "estimator": "unbiased",
    "n_distortion": 2,
    "estimate_skew": False,
    "max_iterations": 100,
    "lm_lambda": 1e-3,
    "lm_lambda_max": 1e16,
    "cost_rtol": 1e-12,
    "cost_atol": 1e-20,
    "gradient_tol": 1e-10,
    "step_tol": 1e-10,
    "fd_step": 1e-6,
    "undistort_tol": 1e-12,
    "undistort_max_iter": 50,
    "supersample": 4,
    "binarize_threshold": 128,
    "weight_mode": "uniform",
    "oracle_samples": 256**2,
    "sweep_oracle_samples": 512**2,
    "max_scene_rejections": 10000,
    "max_workers": 4,
}

config_section = "circle_calib"

# Values already present in the user's config file take precedence.
update_config({config_section: _CALIBRATION_DEFAULTS}, override_existing=False)


def calib_config(key: str) -> Any:
    """Look up a calibration setting, e.g. ``calib_config("max_iterations")``."""
    return get_config(f"{config_section}.{key}")
