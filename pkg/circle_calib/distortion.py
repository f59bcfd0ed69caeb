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

"""Polynomial radial distortion of normalized image coordinates.

A normalized point p_n with s = |p_n|^2 is mapped to k(s) * p_n with k(s) = sum_i d_i s^i and
d_0 = 1. The radial map rho -> rho k(rho^2) has derivative k + 2 s k', which is also the factor
relating area elements: dA_d = k (k + 2 s k') dA_n.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from covalent._shared_files.logger import app_log
from numpy.polynomial import polynomial as P

from .config import calib_config
from .errors import NoConvergence, NonInvertibleInRange

N_D_MAX = 8


@dataclass(frozen=True)
class WCoefficients:
    """Coefficients of k(k + 2sk') (w0) and k^2(k + 2sk') (w1) as polynomials in s."""

    w0: np.ndarray
    w1: np.ndarray


@dataclass(frozen=True)
class InvertibilityReport:
    s_max: float
    min_slope: float
    s_at_min: float
    invertible: bool


def w_coefficients_batch(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """w0 (N, 2n_d + 1) and w1 (N, 3n_d + 1) for a stack of coefficient rows (N, n_d + 1)."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    n_d = d.shape[1] - 1
    w0 = np.zeros((d.shape[0], 2 * n_d + 1))
    w1 = np.zeros((d.shape[0], 3 * n_d + 1))
    for r in range(2 * n_d + 1):
        for i in range(max(0, r - n_d), min(r, n_d) + 1):
            w0[:, r] += (2 * i + 1) * d[:, i] * d[:, r - i]
    for r in range(3 * n_d + 1):
        for i in range(max(0, r - 2 * n_d), min(r, n_d) + 1):
            inner = np.zeros(d.shape[0])
            for j in range(max(0, r - i - n_d), min(r - i, n_d) + 1):
                inner += d[:, j] * d[:, r - i - j]
            w1[:, r] += (2 * i + 1) * d[:, i] * inner
    return w0, w1


@dataclass(frozen=True)
class DistortionModel:
    """Radial coefficients (d_0 = 1, d_1, ..., d_{n_d})."""

    coefficients: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        coefficients = tuple(float(c) for c in self.coefficients)
        if not coefficients or coefficients[0] != 1.0:
            raise ValueError(f"d_0 must equal 1, got {coefficients[:1]}")
        if len(coefficients) - 1 > N_D_MAX:
            raise ValueError(f"at most {N_D_MAX} radial coefficients are supported")
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def from_radial(cls, *d: float) -> "DistortionModel":
        return cls((1.0,) + tuple(d))

    @property
    def n_d(self) -> int:
        return len(self.coefficients) - 1

    @property
    def radial(self) -> Tuple[float, ...]:
        """d_1..d_{n_d}."""
        return self.coefficients[1:]

    def _slope_coefficients(self) -> np.ndarray:
        return np.array([(2 * i + 1) * d for i, d in enumerate(self.coefficients)])

    def scale(self, s: np.ndarray) -> np.ndarray:
        """k(s)."""
        return P.polyval(s, self.coefficients)

    def radial_slope(self, s: np.ndarray) -> np.ndarray:
        """d(rho_d) / d(rho_n) = k + 2 s k'."""
        return P.polyval(s, self._slope_coefficients())

    def distort(self, p_n: np.ndarray) -> np.ndarray:
        p = np.asarray(p_n, dtype=float)
        s = np.sum(p * p, axis=-1)
        return p * self.scale(s)[..., None]

    def area_jacobian(self, p_n: np.ndarray) -> np.ndarray:
        p = np.asarray(p_n, dtype=float)
        s = np.sum(p * p, axis=-1)
        return self.scale(s) * self.radial_slope(s)

    def w_coefficients(self) -> WCoefficients:
        w0, w1 = w_coefficients_batch(np.array(self.coefficients))
        return WCoefficients(w0=w0[0], w1=w1[0])

    def monotone_limit(self) -> float:
        """Smallest s > 0 where the radial map stops increasing, or inf."""
        if self.n_d == 0:
            return np.inf
        roots = P.polyroots(self._slope_coefficients())
        real = roots[np.abs(roots.imag) <= 1e-12 * np.maximum(1.0, np.abs(roots.real))].real
        positive = real[real > 0.0]
        return float(positive.min()) if positive.size else np.inf

    def invertibility_audit(self, s_max: float, n_samples: int = 1000) -> InvertibilityReport:
        """Sample k + 2sk' on [0, s_max]; the radial map is invertible there if it stays > 0."""
        if not s_max > 0:
            raise ValueError(f"s_max must be positive, got {s_max}")
        s = np.linspace(0.0, s_max, n_samples)
        slope = self.radial_slope(s)
        idx = int(np.argmin(slope))
        report = InvertibilityReport(
            s_max=float(s_max),
            min_slope=float(slope[idx]),
            s_at_min=float(s[idx]),
            invertible=bool(slope[idx] > 0.0),
        )
        app_log.debug(f"Invertibility audit for {self.coefficients}: {report}")
        return report

    def undistort(
        self,
        p_d: np.ndarray,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
        strict: bool = True,
    ) -> np.ndarray:
        """Invert the distortion by safeguarded Newton iteration on the radius.

        With ``strict=False`` points outside the image of the monotone range, or that fail to
        converge, come back as NaN instead of raising.
        """
        tol = tol or calib_config("undistort_tol")
        max_iter = max_iter or calib_config("undistort_max_iter")

        p = np.asarray(p_d, dtype=float)
        r_d = np.sqrt(np.sum(p * p, axis=-1))
        flat = np.atleast_1d(r_d).ravel()

        def radial(rho):
            return rho * self.scale(rho * rho)

        s_lim = self.monotone_limit()
        lo = np.zeros_like(flat)
        if np.isfinite(s_lim):
            rho_lim = np.sqrt(s_lim)
            hi = np.full_like(flat, rho_lim)
            unreachable = flat > radial(rho_lim)
        else:
            hi = np.maximum(flat, 1.0)
            for _ in range(64):
                short = radial(hi) < flat
                if not np.any(short):
                    break
                hi = np.where(short, 2.0 * hi, hi)
            unreachable = np.zeros(flat.shape, dtype=bool)

        if strict and np.any(unreachable):
            raise NonInvertibleInRange(
                f"distorted radius {flat[unreachable].max():.6g} is beyond the invertible range"
            )

        rho = np.clip(flat, lo, hi)
        done = unreachable.copy()
        for _ in range(max_iter):
            residual = radial(rho) - flat
            done |= np.abs(residual) < tol
            if np.all(done):
                break
            lo = np.where(residual < 0.0, rho, lo)
            hi = np.where(residual > 0.0, rho, hi)
            slope = self.radial_slope(rho * rho)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = rho - residual / slope
            bad = ~(step > lo) | ~(step < hi) | ~(slope > 0.0)
            rho = np.where(done, rho, np.where(bad, 0.5 * (lo + hi), step))
        else:
            residual = radial(rho) - flat
            done |= np.abs(residual) < tol

        failed = ~done
        if strict and np.any(failed):
            raise NoConvergence(f"undistort did not converge for {int(failed.sum())} points")

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(flat > 0.0, rho / flat, 1.0)
        ratio = np.where(unreachable | failed, np.nan, ratio)
        return p * ratio.reshape(r_d.shape)[..., None]
