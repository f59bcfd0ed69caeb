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

"""Unit tests for the calibration config section."""

from circle_calib import config


def test_calib_config(mocker):
    """Test that settings are read from the circle_calib section."""

    mock_get_config = mocker.patch("circle_calib.config.get_config", return_value=42)
    assert config.calib_config("max_iterations") == 42
    mock_get_config.assert_called_once_with("circle_calib.max_iterations")


def test_defaults_registered():
    """Test that every shipped default is readable through the config."""

    for key in config._CALIBRATION_DEFAULTS:
        assert config.calib_config(key) is not None
