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

"""Pinhole camera primitives: intrinsics, rigid poses and the target-plane homography."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .conic import ConicMatrix, Homography, circle_conic
from .errors import DegenerateViewpoint, NonPositiveRadius

VIEWPOINT_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.skew])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Intrinsics":
        fx, fy, cx, cy, skew = (float(v) for v in values)
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, skew=skew)

    def to_pixels(self, p_d: np.ndarray) -> np.ndarray:
        p = np.asarray(p_d, dtype=float)
        u = self.fx * p[..., 0] + self.skew * p[..., 1] + self.cx
        v = self.fy * p[..., 1] + self.cy
        return np.stack([u, v], axis=-1)

    def to_normalized(self, pixels: np.ndarray) -> np.ndarray:
        p = np.asarray(pixels, dtype=float)
        y = (p[..., 1] - self.cy) / self.fy
        x = (p[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform x -> R x + t (here: target frame to camera frame)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-10) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_axis_angle(cls, rotvec: Sequence[float], translation: Sequence[float]) -> "PoseSE3":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "PoseSE3":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class TargetCircle:
    """Circle on the target plane z_w = 0, in metres."""

    center: Sequence[float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise NonPositiveRadius(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def conic(self) -> ConicMatrix:
        return circle_conic(self.center[0], self.center[1], self.radius)


def extrinsic_matrices_batch(rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
    """[r1 r2 t] for stacks of rotation matrices (V, 3, 3) and translations (V, 3)."""
    e = np.empty(rotations.shape[:-2] + (3, 3))
    e[..., :, 0] = rotations[..., :, 0]
    e[..., :, 1] = rotations[..., :, 1]
    e[..., :, 2] = translations
    return e


def check_viewpoint(e: np.ndarray):
    """Reject target planes seen edge-on (camera centre in or near the plane)."""
    e = np.asarray(e, dtype=float)
    cols = e / np.linalg.norm(e, axis=-2, keepdims=True)
    det = np.abs(np.linalg.det(cols))
    if np.any(~(det >= VIEWPOINT_EPS)):
        raise DegenerateViewpoint(f"camera lies in the target plane (|det|={np.min(det):.3e})")


def extrinsic_homography(pose: PoseSE3) -> Homography:
    """Homography [r1 r2 t] from target-plane points to the normalized image plane."""
    e = extrinsic_matrices_batch(pose.rotation, pose.translation)
    check_viewpoint(e)
    return Homography(e)
