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

"""Conic matrix algebra: construction, homography transport and ellipse features.

A conic ``a x^2 + 2b xy + c y^2 + 2d x + 2e y + f = 0`` is stored as the symmetric matrix

    [[a, b, d],
     [b, c, e],
     [d, e, f]]

and an ellipse is the region ``p~^T Q p~ <= 0``. The batched helpers (``*_batch``) operate on
arrays of shape ``(..., 3, 3)`` and are what the estimators use; the scalar functions wrap them.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateConic, NonPositiveRadius, SingularHomography

ELLIPSE_EPS = 1e-12
HOMOGRAPHY_EPS = 1e-12


@dataclass(frozen=True)
class ConicMatrix:
    """Characteristic matrix of a conic, stored as its six distinct entries."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.a, self.b, self.d], [self.b, self.c, self.e], [self.d, self.e, self.f]],
            dtype=float,
        )

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "ConicMatrix":
        m = np.asarray(matrix, dtype=float)
        m = 0.5 * (m + m.T)
        return cls(m[0, 0], m[0, 1], m[1, 1], m[0, 2], m[1, 2], m[2, 2])

    def normalized(self) -> np.ndarray:
        """Entries (a, b, c, d, e, f) scaled so that Q and sQ compare equal."""
        entries = np.array([self.a, self.b, self.c, self.d, self.e, self.f])
        entries = entries / np.max(np.abs(entries))
        if entries[5] != 0.0:
            sign = np.sign(entries[5])
        else:
            sign = np.sign(entries[np.flatnonzero(entries)[-1]])
        return sign * entries

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Return x~^T Q x~ for each point of an (..., 2) array."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return (
            self.a * x * x
            + 2.0 * self.b * x * y
            + self.c * y * y
            + 2.0 * self.d * x
            + 2.0 * self.e * y
            + self.f
        )


@dataclass(frozen=True)
class EllipseGeometry:
    """Center, semi-axes and orientation of an ellipse.

    ``m0`` is the semi-axis along direction ``alpha``; ``alpha`` lies in (-pi/2, pi/2].
    """

    tx: float
    ty: float
    m0: float
    m1: float
    alpha: float

    def __post_init__(self):
        if not (self.m0 > 0 and self.m1 > 0):
            raise DegenerateConic(f"semi-axes must be positive, got m0={self.m0}, m1={self.m1}")


@dataclass(frozen=True)
class Homography:
    """Invertible plane-to-plane projective map acting on homogeneous column vectors."""

    matrix: np.ndarray

    def __post_init__(self):
        h = np.array(self.matrix, dtype=float)
        if h.shape != (3, 3) or not np.all(np.isfinite(h)):
            raise SingularHomography(f"homography must be a finite 3x3 matrix, got {h.shape}")
        scale = np.max(np.abs(h))
        if scale == 0.0 or abs(np.linalg.det(h / scale)) <= HOMOGRAPHY_EPS:
            raise SingularHomography("homography is singular after normalization")
        object.__setattr__(self, "matrix", h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (..., 2) array of points and dehomogenize."""
        p = np.asarray(points, dtype=float)
        hom = p @ self.matrix[:, :2].T + self.matrix[:, 2]
        return hom[..., :2] / hom[..., 2:3]

    def normalized(self) -> np.ndarray:
        """Matrix scaled to unit Frobenius norm with a positive bottom-right entry."""
        h = self.matrix / np.linalg.norm(self.matrix)
        return h if h[2, 2] >= 0 else -h


def circle_conic(cx: float, cy: float, r: float) -> ConicMatrix:
    """Conic of the circle of radius ``r`` centered at ``(cx, cy)``."""
    if not r > 0:
        raise NonPositiveRadius(f"circle radius must be positive, got {r}")
    return ConicMatrix(1.0, 0.0, 1.0, -cx, -cy, cx * cx + cy * cy - r * r)


def circle_conics_batch(centers: np.ndarray, radii) -> np.ndarray:
    """Stack of circle conics, shape (N, 3, 3), for (N, 2) centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), centers.shape[:1])
    if np.any(~(radii > 0)):
        raise NonPositiveRadius(f"circle radius must be positive, got {radii.min()}")
    q = np.zeros((centers.shape[0], 3, 3))
    q[:, 0, 0] = 1.0
    q[:, 1, 1] = 1.0
    q[:, 0, 2] = q[:, 2, 0] = -centers[:, 0]
    q[:, 1, 2] = q[:, 2, 1] = -centers[:, 1]
    q[:, 2, 2] = np.sum(centers**2, axis=1) - radii**2
    return q


def transform_conics_batch(q: np.ndarray, h: Homography) -> np.ndarray:
    """Transport conics through ``h``: H^-T Q H^-1, symmetrized."""
    h_inv = np.linalg.inv(h.matrix)
    out = np.einsum("ji,...jk,kl->...il", h_inv, q, h_inv)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def transform_conic(q: ConicMatrix, h: Homography) -> ConicMatrix:
    if not isinstance(h, Homography):
        h = Homography(h)
    return ConicMatrix.from_matrix(transform_conics_batch(q.matrix, h))


def ellipse_features_batch(q: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Return (tx, ty, m0, m1, alpha) arrays for a stack of ellipse conics.

    Raises DegenerateConic if any conic in the stack is not a real ellipse.
    """
    q = np.asarray(q, dtype=float)
    scale = np.max(np.abs(q), axis=(-2, -1))
    if np.any(scale == 0.0) or not np.all(np.isfinite(q)):
        raise DegenerateConic("conic matrix is zero or not finite")
    qs = q / scale[..., None, None]
    sign = np.where(qs[..., 0, 0] + qs[..., 1, 1] < 0.0, -1.0, 1.0)
    qs = qs * sign[..., None, None]

    a, b, c = qs[..., 0, 0], qs[..., 0, 1], qs[..., 1, 1]
    d, e = qs[..., 0, 2], qs[..., 1, 2]
    h1 = a * c - b * b
    if np.any(h1 <= ELLIPSE_EPS):
        raise DegenerateConic(f"not an ellipse: h1={np.min(h1):.3e}")
    h2 = np.sqrt((a - c) ** 2 + 4.0 * b * b)

    tx = (b * e - c * d) / h1
    ty = (b * d - a * e) / h1
    det = np.linalg.det(qs)
    rad0 = -2.0 * det / (h1 * (a + c - h2))
    rad1 = -2.0 * det / (h1 * (a + c + h2))

    axis_aligned = b == 0.0
    center_value = det / h1
    with np.errstate(divide="ignore", invalid="ignore"):
        rad0 = np.where(axis_aligned, -center_value / a, rad0)
        rad1 = np.where(axis_aligned, -center_value / c, rad1)
    if np.any(~(rad0 > 0)) or np.any(~(rad1 > 0)):
        raise DegenerateConic("ellipse has no real points (negative radicand)")

    alpha = np.where(axis_aligned, 0.0, 0.5 * np.arctan2(-2.0 * b, c - a))
    return tx, ty, np.sqrt(rad0), np.sqrt(rad1), alpha


def decompose_ellipse(q: ConicMatrix) -> EllipseGeometry:
    tx, ty, m0, m1, alpha = ellipse_features_batch(q.matrix)
    return EllipseGeometry(float(tx), float(ty), float(m0), float(m1), float(alpha))


def compose_ellipse(g: EllipseGeometry) -> ConicMatrix:
    """Conic of the ellipse described by ``g``."""
    ca, sa = np.cos(g.alpha), np.sin(g.alpha)
    rot = np.array([[ca, -sa], [sa, ca]])
    upper = rot @ np.diag([1.0 / g.m0**2, 1.0 / g.m1**2]) @ rot.T
    center = np.array([g.tx, g.ty])
    q = np.empty((3, 3))
    q[:2, :2] = upper
    q[:2, 2] = q[2, :2] = -upper @ center
    q[2, 2] = center @ upper @ center - 1.0
    return ConicMatrix.from_matrix(q)


def conic_centers_batch(q: np.ndarray) -> np.ndarray:
    """Centers Q^-1 (0, 0, 1)^T dehomogenized, shape (..., 2)."""
    ellipse_features_batch(q)
    rhs = np.zeros(q.shape[:-1] + (1,))
    rhs[..., 2, 0] = 1.0
    hom = np.linalg.solve(q, rhs)[..., 0]
    return hom[..., :2] / hom[..., 2:3]


def conic_center(q: ConicMatrix) -> np.ndarray:
    return conic_centers_batch(q.matrix)


def conic_area(q: ConicMatrix) -> float:
    g = decompose_ellipse(q)
    return float(np.pi * g.m0 * g.m1)
