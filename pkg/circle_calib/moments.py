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

"""Closed-form area moments of ellipses.

For an ellipse A and s = x^2 + y^2 the moment vector of order r is

    v^r = (<x s^r>, <y s^r>, <s^r>)

where <.> is the area average over A. It is evaluated in three steps: moments of the centered
axis-aligned ellipse (pure table lookups), binomial expansion for the translated ellipse, and a
rotation into the working frame. All tables are built once and are read-only afterwards.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np

from .conic import ConicMatrix, ellipse_features_batch
from .errors import OrderOverflow

N_D_MAX = 8
R_MAX = 3 * N_D_MAX
BINOMIAL_N_MAX = 2 * R_MAX + 1


class CombinationTable:
    """Binomial coefficients C(n, k) for 0 <= k <= n <= n_max built from Pascal's triangle."""

    def __init__(self, n_max: int = BINOMIAL_N_MAX):
        table = np.zeros((n_max + 1, n_max + 1))
        for n in range(n_max + 1):
            table[n, 0] = table[n, n] = 1.0
            for k in range(1, n):
                table[n, k] = table[n - 1, k - 1] + table[n - 1, k]
        table.setflags(write=False)
        self.n_max = n_max
        self.table = table

    def __call__(self, n: int, k: int) -> float:
        if n > self.n_max:
            raise OrderOverflow(f"C({n}, {k}) exceeds the table capacity n <= {self.n_max}")
        if k < 0 or k > n:
            return 0.0
        return self.table[n, k]


COMBINATIONS = CombinationTable()


@dataclass(frozen=True)
class MomentVector:
    """Area-averaged (<x s^r>, <y s^r>, <s^r>) of a shape."""

    x: float
    y: float
    s: float
    order: int

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.s])


@dataclass(frozen=True)
class EllipseFrame:
    """Axis-aligned ellipse centered at (tx, ty), rotated by ``alpha`` into the working frame."""

    tx: float
    ty: float
    a: float
    b: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"semi-axes must be positive, got a={self.a}, b={self.b}")


def _check_order(r: int, limit: int = R_MAX):
    if r < 0:
        raise ValueError(f"moment order must be non-negative, got {r}")
    if r > limit:
        raise OrderOverflow(f"moment order {r} exceeds the supported maximum {limit}")


def angular_integral(m: int, n: int) -> float:
    """(1 / 2pi) * integral over [0, 2pi] of cos^m(t) sin^n(t) dt."""
    if m < 0 or n < 0:
        raise ValueError(f"exponents must be non-negative, got ({m}, {n})")
    if m + n > BINOMIAL_N_MAX:
        raise OrderOverflow(f"angular integral order {m + n} exceeds {BINOMIAL_N_MAX}")
    if m % 2 or n % 2:
        return 0.0
    i, j = m // 2, n // 2
    c = COMBINATIONS
    numerator = c(2 * i + 2 * j, i + j) * c(i + j, i)
    return numerator / (c(2 * i + 2 * j, 2 * i) * 2.0 ** (2 * i + 2 * j))


def centered_moment(m: int, n: int, a: float, b: float) -> float:
    """<x^m y^n> over the ellipse (x/a)^2 + (y/b)^2 <= 1."""
    if not (a > 0 and b > 0):
        raise ValueError(f"semi-axes must be positive, got a={a}, b={b}")
    return a**m * b**n * angular_integral(m, n) / (1.0 + 0.5 * (m + n))


@dataclass(frozen=True)
class _TermTable:
    """Flattened triple sum for v^r.

    Term t contributes coef[t] * a^pa b^pb tx^px ty^py times (tx, ty, 1) to the three
    components; coef has shape (T, 3).
    """

    coef: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    px: np.ndarray
    py: np.ndarray


@lru_cache(maxsize=None)
def _term_table(r: int) -> _TermTable:
    _check_order(r)
    c = COMBINATIONS
    coef, exponents = [], []
    for i in range(r + 1):
        for j in range(r - i + 1):
            m0 = angular_integral(2 * i, 2 * j) / (1.0 + i + j)
            for k in range(i, r - j + 1):
                base = c(r, k) * m0
                coef.append(
                    (
                        base * c(2 * k + 1, 2 * i) * c(2 * r - 2 * k, 2 * j),
                        base * c(2 * k, 2 * i) * c(2 * r - 2 * k + 1, 2 * j),
                        base * c(2 * k, 2 * i) * c(2 * r - 2 * k, 2 * j),
                    )
                )
                exponents.append((2 * i, 2 * j, 2 * k - 2 * i, 2 * r - 2 * k - 2 * j))
    coef = np.array(coef)
    exponents = np.array(exponents, dtype=int)
    for arr in (coef, exponents):
        arr.setflags(write=False)
    return _TermTable(coef, *exponents.T)


def compensated_sum(terms: np.ndarray) -> np.ndarray:
    """Kahan-compensated sum over the first axis."""
    total = np.zeros(terms.shape[1:])
    correction = np.zeros(terms.shape[1:])
    for term in terms:
        y = term - correction
        running = total + y
        correction = (running - total) - y
        total = running
    return total


def _powers(values: np.ndarray, max_power: int) -> np.ndarray:
    return np.power(values[None, :], np.arange(max_power + 1)[:, None])


def unrotated_moment_vectors_batch(
    tx: np.ndarray, ty: np.ndarray, a: np.ndarray, b: np.ndarray, r_max: int
) -> np.ndarray:
    """Moment vectors of axis-aligned ellipses for orders 0..r_max, shape (N, r_max + 1, 3)."""
    _check_order(r_max)
    tx, ty, a, b = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (tx, ty, a, b))
    top = 2 * r_max
    pow_a, pow_b = _powers(a, top), _powers(b, top)
    pow_x, pow_y = _powers(tx, top), _powers(ty, top)
    lift = np.stack([tx, ty, np.ones_like(tx)])
    out = np.empty((tx.shape[0], r_max + 1, 3))
    for r in range(r_max + 1):
        table = _term_table(r)
        base = pow_a[table.pa] * pow_b[table.pb] * pow_x[table.px] * pow_y[table.py]
        terms = table.coef[:, :, None] * base[:, None, :] * lift[None]
        out[:, r, :] = compensated_sum(terms).T
    return out


def rotate_moment_vectors_batch(v: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Rotate the (x, y) part of moment vectors (..., 3) by per-ellipse angles."""
    alpha = np.asarray(alpha, dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    while ca.ndim < v.ndim - 1:
        ca, sa = ca[..., None], sa[..., None]
    out = np.empty_like(v)
    out[..., 0] = ca * v[..., 0] - sa * v[..., 1]
    out[..., 1] = sa * v[..., 0] + ca * v[..., 1]
    out[..., 2] = v[..., 2]
    return out


def moment_vectors_batch(q: np.ndarray, r_max: int) -> np.ndarray:
    """Moment vectors v^0..v^r_max of the ellipses {p : p~^T Q p~ <= 0}, shape (N, r_max+1, 3)."""
    q = np.asarray(q, dtype=float).reshape(-1, 3, 3)
    cx, cy, m0, m1, alpha = ellipse_features_batch(q)
    ca, sa = np.cos(alpha), np.sin(alpha)
    tx = ca * cx + sa * cy
    ty = -sa * cx + ca * cy
    v = unrotated_moment_vectors_batch(tx, ty, m0, m1, r_max)
    return rotate_moment_vectors_batch(v, alpha)


def moment_vector_unrotated(frame: EllipseFrame, r: int) -> MomentVector:
    v = unrotated_moment_vectors_batch(frame.tx, frame.ty, frame.a, frame.b, r)[0, r]
    return MomentVector(v[0], v[1], v[2], r)


def rotate_moment_vector(v: MomentVector, alpha: float) -> MomentVector:
    x, y, s = rotate_moment_vectors_batch(v.as_array(), alpha)
    return MomentVector(x, y, s, v.order)


def moment_vector(q_n: ConicMatrix, r: int) -> MomentVector:
    v = moment_vectors_batch(q_n.matrix, r)[0, r]
    return MomentVector(v[0], v[1], v[2], r)


@lru_cache(maxsize=16)
def polar_rules(n_radial: int, n_angular: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1-D factors of the polar product rule on the unit disc.

    Returns (rho, rho_weight, theta): Gauss-Legendre on [0, 1] in rho with the rho Jacobian folded
    into ``rho_weight`` (normalized to sum to one), and midpoint nodes in theta (equal weights).
    """
    if n_radial < 1 or n_angular < 1:
        raise ValueError(f"node counts must be positive, got ({n_radial}, {n_angular})")
    xi, wi = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * (xi + 1.0)
    w_rho = wi * rho
    w_rho = w_rho / np.sum(w_rho)
    theta = 2.0 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    for arr in (rho, w_rho, theta):
        arr.setflags(write=False)
    return rho, w_rho, theta


def polar_nodes(n_radial: int, n_angular: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Polar product rule flattened over the grid: (rho, theta, weight), weights sum to one."""
    rho, w_rho, theta = polar_rules(n_radial, n_angular)
    rr, tt = np.meshgrid(rho, theta, indexing="ij")
    weight = np.repeat(w_rho, n_angular) / n_angular
    return rr.ravel(), tt.ravel(), weight


def ellipse_samples(frame: EllipseFrame, n_radial: int, n_angular: int):
    """Quadrature points (x, y) in the working frame and their normalized weights."""
    rho, theta, weight = polar_nodes(n_radial, n_angular)
    xs = frame.tx + frame.a * rho * np.cos(theta)
    ys = frame.ty + frame.b * rho * np.sin(theta)
    ca, sa = np.cos(frame.alpha), np.sin(frame.alpha)
    return ca * xs - sa * ys, sa * xs + ca * ys, weight


def quadrature_average(
    frame: EllipseFrame,
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_radial: int = 256,
    n_angular: int = 2048,
) -> np.ndarray:
    """Area average of ``integrand(x, y)`` over the ellipse by polar quadrature."""
    x, y, weight = ellipse_samples(frame, n_radial, n_angular)
    return np.asarray(integrand(x, y)) @ weight


def quadrature_moment_vector(
    frame: EllipseFrame, r: int, n_radial: int = 256, n_angular: int = 2048
) -> MomentVector:
    """Moment vector by brute-force quadrature; independent of the closed forms above."""

    def integrand(x, y):
        s_r = (x * x + y * y) ** r
        return np.stack([x * s_r, y * s_r, s_r])

    v = quadrature_average(frame, integrand, n_radial, n_angular)
    return MomentVector(v[0], v[1], v[2], r)
