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

"""Unit tests for the conic matrix algebra."""

import numpy as np
import pytest

from circle_calib.conic import (
    ConicMatrix,
    EllipseGeometry,
    Homography,
    circle_conic,
    circle_conics_batch,
    compose_ellipse,
    conic_area,
    conic_center,
    decompose_ellipse,
    transform_conic,
)
from circle_calib.errors import DegenerateConic, NonPositiveRadius, SingularHomography

MOCK_GEOMETRY = EllipseGeometry(tx=0.3, ty=-0.2, m0=2.0, m1=0.5, alpha=0.4)


def test_circle_conic():
    """Test that a circle conic has the expected entries and interior sign."""

    q = circle_conic(0.5, -1.0, 2.0)
    assert q.matrix == pytest.approx(
        np.array([[1.0, 0.0, -0.5], [0.0, 1.0, 1.0], [-0.5, 1.0, 1.25 - 4.0]])
    )
    assert q.evaluate([0.5, -1.0]) < 0
    assert q.evaluate([2.5, -1.0]) == pytest.approx(0.0)
    assert q.evaluate([3.0, -1.0]) > 0


@pytest.mark.parametrize("radius", [0.0, -1.0])
def test_circle_conic_rejects_radius(radius):
    """Test that non-positive radii are rejected."""

    with pytest.raises(NonPositiveRadius):
        circle_conic(0.0, 0.0, radius)
    with pytest.raises(NonPositiveRadius):
        circle_conics_batch(np.zeros((2, 2)), [1.0, radius])


def test_circle_conics_batch_matches_scalar():
    """Test that the batched circle conics agree with the scalar constructor."""

    centers = np.array([[0.1, 0.2], [-0.3, 0.05]])
    batch = circle_conics_batch(centers, 0.02)
    for row, (cx, cy) in zip(batch, centers):
        assert row == pytest.approx(circle_conic(cx, cy, 0.02).matrix)


def test_normalized_is_scale_invariant():
    """Test that Q and sQ normalize to the same entries."""

    q = compose_ellipse(MOCK_GEOMETRY)
    scaled = ConicMatrix.from_matrix(-3.0 * q.matrix)
    assert scaled.normalized() == pytest.approx(q.normalized())


def test_transform_by_scaling():
    """Test that scaling the plane by two doubles the circle radius."""

    q = transform_conic(circle_conic(0.0, 0.0, 1.0), Homography(np.diag([2.0, 2.0, 1.0])))
    assert q.normalized() == pytest.approx(circle_conic(0.0, 0.0, 2.0).normalized())


def test_transform_keeps_points_on_conic(rng):
    """Test that mapped boundary points stay on the transported conic."""

    h = Homography(np.eye(3) + 0.2 * rng.normal(size=(3, 3)))
    theta = np.linspace(0.0, 2.0 * np.pi, 17)
    boundary = np.stack([0.1 + 0.3 * np.cos(theta), -0.2 + 0.3 * np.sin(theta)], axis=1)
    q = transform_conic(circle_conic(0.1, -0.2, 0.3), h)
    scale = np.max(np.abs(q.matrix))
    assert np.max(np.abs(q.evaluate(h.apply(boundary)))) / scale < 1e-9


@pytest.mark.parametrize(
    "matrix", [np.zeros((3, 3)), np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]])]
)
def test_singular_homography(matrix):
    """Test that singular homographies are rejected on construction."""

    with pytest.raises(SingularHomography):
        Homography(matrix)


def test_decompose_recovers_geometry():
    """Test that decomposing a composed ellipse returns its geometry."""

    g = decompose_ellipse(compose_ellipse(MOCK_GEOMETRY))
    assert g.tx == pytest.approx(MOCK_GEOMETRY.tx)
    assert g.ty == pytest.approx(MOCK_GEOMETRY.ty)
    assert (g.m0, g.m1, g.alpha) == pytest.approx((2.0, 0.5, 0.4))


def test_decompose_is_scale_invariant():
    """Test that features do not depend on the overall scale or sign of Q."""

    q = compose_ellipse(MOCK_GEOMETRY)
    g = decompose_ellipse(ConicMatrix.from_matrix(-7.5 * q.matrix))
    assert (g.m0, g.m1, g.alpha) == pytest.approx((2.0, 0.5, 0.4))


def test_axis_aligned_ellipse():
    """Test the b = 0 branch of the feature extraction."""

    g = decompose_ellipse(ConicMatrix(1.0 / 4.0, 0.0, 1.0, 0.0, 0.0, -1.0))
    assert (g.tx, g.ty, g.m0, g.m1, g.alpha) == pytest.approx((0.0, 0.0, 2.0, 1.0, 0.0))


@pytest.mark.parametrize(
    "q",
    [
        ConicMatrix(1.0, 0.0, -1.0, 0.0, 0.0, -1.0),
        ConicMatrix(1.0, 0.0, 1.0, 0.0, 0.0, 1.0),
        ConicMatrix(1.0, 1.0, 1.0, 0.0, 0.0, -1.0),
    ],
    ids=["hyperbola", "imaginary", "parabolic"],
)
def test_degenerate_conics(q):
    """Test that conics that are not real ellipses raise DegenerateConic."""

    with pytest.raises(DegenerateConic):
        decompose_ellipse(q)


def test_center_and_area():
    """Test the conic center and area against the composed geometry."""

    q = compose_ellipse(MOCK_GEOMETRY)
    assert conic_center(q) == pytest.approx([0.3, -0.2])
    assert conic_area(q) == pytest.approx(np.pi * 2.0 * 0.5)


def test_ellipse_geometry_validation():
    """Test that non-positive semi-axes are rejected."""

    with pytest.raises(DegenerateConic):
        EllipseGeometry(0.0, 0.0, 1.0, 0.0, 0.0)
