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

"""Exceptions raised by the calibration toolkit."""


class CircleCalibError(Exception):
    """Base class for every error raised by circle_calib."""


class ConfigError(CircleCalibError):
    """Invalid user input or configuration."""


class GeometryError(CircleCalibError):
    """A geometric primitive could not be built or evaluated."""


class NonPositiveRadius(GeometryError):
    pass


class SingularHomography(GeometryError):
    pass


class DegenerateConic(GeometryError):
    pass


class DegenerateViewpoint(GeometryError):
    pass


class OrderOverflow(GeometryError):
    pass


class NoConvergence(GeometryError):
    pass


class NonInvertibleInRange(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class ProblemError(CircleCalibError):
    """A scene, measurement set or solver problem cannot be processed."""


class SceneInfeasible(ProblemError):
    pass


class DetectionCountMismatch(ProblemError):
    def __init__(self, view_id: int, expected: int, found: int):
        self.view_id = view_id
        self.expected = expected
        self.found = found
        super().__init__(f"view {view_id}: expected {expected} blobs, found {found}")


class DegenerateConfiguration(ProblemError):
    pass


class NonPositiveDefinite(ProblemError):
    pass


class DivergedNonFinite(ProblemError):
    pass


class InsufficientMotion(ProblemError):
    pass


class IllConditioned(ProblemError):
    pass
