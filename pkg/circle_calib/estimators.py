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

"""Control-point estimators: where does the image of a target circle's centroid land?

All four estimators share one batched entry point, ``predict_points``, which takes per-point
arrays (circle centers and radii, target-to-normalized homographies, intrinsics rows and
distortion rows). Calibration evaluates every measurement and every finite-difference
perturbation in a single call; the scalar ``estimate_*`` functions wrap the same path.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .camera import Intrinsics, PoseSE3, TargetCircle, check_viewpoint, extrinsic_matrices_batch
from .conic import circle_conics_batch, conic_centers_batch, ellipse_features_batch
from .distortion import DistortionModel, w_coefficients_batch
from .errors import BehindCamera, ConfigError
from .moments import compensated_sum, moment_vectors_batch, polar_rules

ESTIMATORS = ("unbiased", "point", "conic", "numerical")

# upper bound on the number of samples held in memory by the numerical estimator
_SAMPLE_BLOCK = 1 << 22


@dataclass(frozen=True)
class EstimatorSpec:
    """Estimator name plus the sample count for ``numerical``."""

    name: str = "unbiased"
    samples: Optional[int] = None

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.name!r}, expected one of {ESTIMATORS}")
        if self.name == "numerical":
            if self.samples is None or self.samples < 4:
                raise ConfigError(f"numerical estimator needs n >= 4 samples, got {self.samples}")
        elif self.samples is not None:
            raise ConfigError(f"estimator {self.name!r} takes no sample count")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        """Parse ``unbiased``, ``point``, ``conic`` or ``numerical:<n>``."""
        name, _, count = str(text).strip().partition(":")
        if not count:
            return cls(name)
        try:
            samples = int(count)
        except ValueError as e:
            raise ConfigError(f"invalid sample count in estimator {text!r}") from e
        return cls(name, samples)

    def __str__(self) -> str:
        return self.name if self.samples is None else f"{self.name}:{self.samples}"


def _as_spec(estimator) -> EstimatorSpec:
    return estimator if isinstance(estimator, EstimatorSpec) else EstimatorSpec.parse(estimator)


def _per_row(coefficients: np.ndarray, ndim: int) -> np.ndarray:
    return coefficients.reshape(coefficients.shape + (1,) * (ndim - 1))


def _radial_polyval(s: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Horner evaluation of one polynomial per row; ``s`` has shape (N, ...)."""
    out = np.zeros_like(s)
    for i in range(coefficients.shape[1] - 1, -1, -1):
        out = out * s + _per_row(coefficients[:, i], s.ndim)
    return out


def distort_batch(p_n: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Distort points (N, 2) with per-point coefficient rows (N, n_d + 1)."""
    s = np.sum(p_n * p_n, axis=-1)
    return p_n * _radial_polyval(s, d)[:, None]


def to_pixels_batch(p_d: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Apply per-point intrinsics rows [fx, fy, cx, cy, skew] to distorted points."""
    u = k[:, 0] * p_d[:, 0] + k[:, 4] * p_d[:, 1] + k[:, 2]
    v = k[:, 1] * p_d[:, 1] + k[:, 3]
    return np.stack([u, v], axis=-1)


def normalized_conics_batch(centers: np.ndarray, radii: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Q_n = H^-T Q_w H^-1 for per-point homographies ``e`` (N, 3, 3)."""
    q_w = circle_conics_batch(centers, radii)
    e_inv = np.linalg.inv(e)
    q_n = np.einsum("nji,njk,nkl->nil", e_inv, q_w, e_inv)
    return 0.5 * (q_n + np.swapaxes(q_n, -1, -2))


def distorted_centroid(q_n: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centroid of the distorted image of each ellipse, in closed form.

    The distorted first moments and area are linear combinations of the undistorted moment
    vectors with the w-coefficients of ``d``. Returns the centroids (N, 2) and the area ratio
    |A_d| / |A_n| (N,).
    """
    q_n = np.asarray(q_n, dtype=float).reshape(-1, 3, 3)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    d = np.broadcast_to(d, (q_n.shape[0], d.shape[-1]))
    n_d = d.shape[1] - 1
    v = moment_vectors_batch(q_n, 3 * n_d)
    w0, w1 = w_coefficients_batch(d)
    first = compensated_sum(np.moveaxis(w1[:, :, None] * v[:, :, :2], 1, 0))
    area = compensated_sum((w0 * v[:, : 2 * n_d + 1, 2]).T)
    return first / area[:, None], area


def numerical_centroid(q_n: np.ndarray, d: np.ndarray, n_samples: int) -> np.ndarray:
    """Centroid of the distorted image of each ellipse by polar quadrature.

    Each ellipse is sampled on ceil(sqrt(n)) Gauss-Legendre radii times ceil(sqrt(n)) midpoint
    angles; samples are pushed through the distortion and weighted by its area Jacobian.
    """
    q_n = np.asarray(q_n, dtype=float).reshape(-1, 3, 3)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    d = np.broadcast_to(d, (q_n.shape[0], d.shape[-1]))
    side = math.ceil(math.sqrt(n_samples))
    rho, w_rho, theta = polar_rules(side, side)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    slope = d * (2.0 * np.arange(d.shape[1]) + 1.0)

    tx, ty, m0, m1, alpha = ellipse_features_batch(q_n)
    ca, sa = np.cos(alpha), np.sin(alpha)

    n = q_n.shape[0]
    radial_block = max(1, min(side, _SAMPLE_BLOCK // side))
    circle_block = max(1, _SAMPLE_BLOCK // (radial_block * side))
    out = np.empty((n, 2))
    for c0 in range(0, n, circle_block):
        rows = slice(c0, min(n, c0 + circle_block))
        acc = np.zeros((rows.stop - rows.start, 3))
        for r0 in range(0, side, radial_block):
            rr = rho[r0 : r0 + radial_block]
            wr = w_rho[r0 : r0 + radial_block]
            xl = m0[rows, None, None] * rr[None, :, None] * cos_t
            yl = m1[rows, None, None] * rr[None, :, None] * sin_t
            x = tx[rows, None, None] + ca[rows, None, None] * xl - sa[rows, None, None] * yl
            y = ty[rows, None, None] + sa[rows, None, None] * xl + ca[rows, None, None] * yl
            s = x * x + y * y
            k = _radial_polyval(s, d[rows])
            mass = k * _radial_polyval(s, slope[rows]) * wr[None, :, None]
            acc[:, 0] += np.sum(mass * k * x, axis=(1, 2))
            acc[:, 1] += np.sum(mass * k * y, axis=(1, 2))
            acc[:, 2] += np.sum(mass, axis=(1, 2))
        out[rows] = acc[:, :2] / acc[:, 2:]
    return out


def predict_points(
    estimator,
    centers: np.ndarray,
    radii: np.ndarray,
    e: np.ndarray,
    k: np.ndarray,
    d: np.ndarray,
) -> np.ndarray:
    """Predicted pixel centroids (N, 2).

    Args:
        estimator: EstimatorSpec or its string form.
        centers: (N, 2) circle centers on the target plane.
        radii: (N,) or scalar circle radii.
        e: (N, 3, 3) homographies [r1 r2 t] from the target plane to the normalized plane.
        k: (N, 5) intrinsics rows [fx, fy, cx, cy, skew].
        d: (N, n_d + 1) distortion coefficient rows with d_0 = 1.
    """
    spec = _as_spec(estimator)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = centers.shape[0]
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (n,))
    e = np.broadcast_to(np.asarray(e, dtype=float), (n, 3, 3))
    k = np.broadcast_to(np.asarray(k, dtype=float), (n, 5))
    d = np.atleast_2d(np.asarray(d, dtype=float))
    d = np.broadcast_to(d, (n, d.shape[1]))

    if spec.name == "point":
        hom = np.einsum("nij,nj->ni", e, np.column_stack([centers, np.ones(n)]))
        if np.any(~(hom[:, 2] > 0.0)):
            raise BehindCamera("circle center projects behind the camera")
        return to_pixels_batch(distort_batch(hom[:, :2] / hom[:, 2:3], d), k)

    q_n = normalized_conics_batch(centers, radii, e)
    if spec.name == "conic" or (spec.name == "unbiased" and d.shape[1] == 1):
        p_d = distort_batch(conic_centers_batch(q_n), d)
    elif spec.name == "unbiased":
        p_d, _ = distorted_centroid(q_n, d)
    else:
        p_d = numerical_centroid(q_n, d, spec.samples)
    return to_pixels_batch(p_d, k)


def predict_view(
    estimator,
    centers: np.ndarray,
    radius,
    pose: PoseSE3,
    intrinsics: Intrinsics,
    distortion: DistortionModel,
) -> np.ndarray:
    """Predicted pixel centroids of many circles seen from one pose."""
    e = extrinsic_matrices_batch(pose.rotation, pose.translation)
    check_viewpoint(e)
    return predict_points(
        estimator,
        centers,
        radius,
        e,
        intrinsics.as_array(),
        np.asarray(distortion.coefficients),
    )


def _estimate(estimator, c: TargetCircle, pose, intrinsics, distortion) -> np.ndarray:
    return predict_view(estimator, [c.center], c.radius, pose, intrinsics, distortion)[0]


def estimate_unbiased(
    c: TargetCircle, pose: PoseSE3, intrinsics: Intrinsics, distortion: DistortionModel
) -> np.ndarray:
    return _estimate(EstimatorSpec("unbiased"), c, pose, intrinsics, distortion)


def estimate_point_based(
    c: TargetCircle, pose: PoseSE3, intrinsics: Intrinsics, distortion: DistortionModel
) -> np.ndarray:
    return _estimate(EstimatorSpec("point"), c, pose, intrinsics, distortion)


def estimate_conic_based(
    c: TargetCircle, pose: PoseSE3, intrinsics: Intrinsics, distortion: DistortionModel
) -> np.ndarray:
    return _estimate(EstimatorSpec("conic"), c, pose, intrinsics, distortion)


def estimate_numerical(
    c: TargetCircle,
    pose: PoseSE3,
    intrinsics: Intrinsics,
    distortion: DistortionModel,
    n: int,
) -> np.ndarray:
    return _estimate(EstimatorSpec("numerical", n), c, pose, intrinsics, distortion)
