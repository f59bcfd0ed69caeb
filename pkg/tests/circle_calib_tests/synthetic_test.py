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

"""Unit tests for scene generation, rendering and centroid measurement."""

import numpy as np
import pytest
from scipy import ndimage

from circle_calib.camera import Intrinsics, PoseSE3
from circle_calib.distortion import DistortionModel
from circle_calib.errors import ConfigError, DetectionCountMismatch, SceneInfeasible
from circle_calib.estimators import predict_view
from circle_calib.synthetic import (
    SyntheticScene,
    TargetSpec,
    field_of_view,
    flip_boundary_pixels,
    generate_scene,
    measure_centroids,
    oracle_measurements,
    render_view,
    sample_sweep_poses,
)

MOCK_SPEC = TargetSpec(rows=2, cols=2, spacing=0.04, radius=0.012)
# every circle center lands on a pixel center
MOCK_INTRINSICS = Intrinsics(fx=400.0, fy=400.0, cx=100.5, cy=200.5)


def mock_scene(translation=(0.0, 0.0, 0.4), blur_sigma=0.0, spec=MOCK_SPEC):
    return SyntheticScene(
        spec=spec,
        intrinsics=MOCK_INTRINSICS,
        distortion=DistortionModel(),
        poses=(PoseSE3(np.eye(3), translation),),
        image_size=(201, 401),
        blur_sigma=blur_sigma,
        supersample=4,
    )


def centroid_errors(scene, measurements):
    predicted = predict_view(
        "unbiased",
        scene.spec.centers(),
        scene.spec.radius,
        scene.poses[0],
        scene.intrinsics,
        scene.distortion,
    )
    uv = np.array([[m.u, m.v] for m in measurements])
    return np.linalg.norm(uv - predicted, axis=1)


def test_target_spec_layout():
    """Test that centers are row-major and centered on the origin."""

    spec = TargetSpec(rows=3, cols=4, spacing=0.05, radius=0.01)
    centers = spec.centers()
    assert centers.shape == (12, 2)
    assert centers.mean(axis=0) == pytest.approx([0.0, 0.0])
    assert centers[1] - centers[0] == pytest.approx([0.05, 0.0])
    assert centers[4] - centers[0] == pytest.approx([0.0, 0.05])
    assert spec.nearest_point(centers + 0.004).tolist() == list(range(12))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"rows": 1, "cols": 3},
        {"spacing": 0.02, "radius": 0.012},
        {"radius": 0.0},
        {"pattern": "dots"},
    ],
)
def test_target_spec_validation(kwargs):
    """Test that impossible targets are configuration errors."""

    with pytest.raises(ConfigError):
        TargetSpec(**kwargs)


def test_scene_validation():
    """Test scene parameter checks and view lookup."""

    scene = mock_scene()
    assert scene.n_views == 1
    with pytest.raises(ConfigError):
        scene.pose(1)
    with pytest.raises(ConfigError):
        mock_scene(blur_sigma=-1.0)


def test_field_of_view(reference_intrinsics):
    """Test the squared normalized radius of the image corners."""

    assert field_of_view(reference_intrinsics, (1200, 930)) == pytest.approx(1.0 + 0.8**2)


def test_generate_scene_is_seeded(reference_intrinsics):
    """Test that the same seed gives the same poses and different seeds do not."""

    distortion = DistortionModel.from_radial(-0.2)
    first = generate_scene(TargetSpec(), reference_intrinsics, distortion, n_views=3, seed=5)
    second = generate_scene(TargetSpec(), reference_intrinsics, distortion, n_views=3, seed=5)
    other = generate_scene(TargetSpec(), reference_intrinsics, distortion, n_views=3, seed=6)
    assert first.n_views == 3
    for a, b in zip(first.poses, second.poses):
        np.testing.assert_array_equal(a.matrix, b.matrix)
    assert not np.allclose(first.poses[0].matrix, other.poses[0].matrix)


def test_generate_scene_views_are_feasible(reference_scene):
    """Test that accepted views keep every circle in front of the camera and in the image."""

    w, h = reference_scene.image_size
    for pose in reference_scene.poses:
        assert 0.3 <= pose.translation[2] <= 0.75
        uv = predict_view(
            "point",
            reference_scene.spec.centers(),
            reference_scene.spec.radius,
            pose,
            reference_scene.intrinsics,
            reference_scene.distortion,
        )
        assert np.all((uv > 0) & (uv < [w, h]))


def test_generate_scene_infeasible_distortion(reference_intrinsics):
    """Test that distortion folding inside the field of view is rejected up front."""

    with pytest.raises(SceneInfeasible):
        generate_scene(
            TargetSpec(),
            reference_intrinsics,
            DistortionModel.from_radial(-0.4),
            n_views=3,
            seed=0,
        )
    recovering = DistortionModel.from_radial(-0.4, 0.08)
    scene = generate_scene(TargetSpec(), reference_intrinsics, recovering, n_views=3, seed=0)
    assert scene.n_views == 3


def test_generate_scene_rejection_budget(mocker, reference_intrinsics):
    """Test that running out of pose samples raises SceneInfeasible."""

    mocker.patch("circle_calib.synthetic.calib_config", return_value=3)
    tiny_image = (40, 30)
    with pytest.raises(SceneInfeasible):
        generate_scene(
            TargetSpec(),
            reference_intrinsics,
            DistortionModel(),
            n_views=1,
            seed=0,
            image_size=tiny_image,
            s_fov=10.0,
        )


def test_render_view():
    """Test the rendered image type, background and disc area."""

    scene = mock_scene()
    image = render_view(scene, 0)
    assert image.dtype == np.uint8
    assert image.shape == (401, 201)
    assert image[0, 0] == 255
    assert image[180, 80] == 0
    coverage = np.sum(255.0 - image) / 255.0 / 4.0
    assert coverage == pytest.approx(np.pi * 12.0**2, rel=5e-3)
    # lattice points within 12 px of a pixel center, the four on the rim being half covered
    assert 437 <= np.sum(image < 128) / 4.0 <= 441


def test_supersampling_converges():
    """Test that doubling the supersampling moves off-grid centroids by under 0.01 px."""

    scene = mock_scene(translation=(0.0013, -0.0027, 0.2))
    coarse, fine = (
        measure_centroids(render_view(scene, 0, supersample=s), scene, 0, weight_mode="intensity")
        for s in (4, 8)
    )
    uv_coarse = np.array([[m.u, m.v] for m in coarse])
    uv_fine = np.array([[m.u, m.v] for m in fine])
    assert np.max(np.linalg.norm(uv_fine - uv_coarse, axis=1)) < 0.01


@pytest.mark.parametrize("weight_mode", ["uniform", "intensity"])
def test_measure_symmetric_discs(weight_mode):
    """Test that discs centered on pixel centers are measured at their centers."""

    scene = mock_scene()
    measurements = measure_centroids(render_view(scene, 0), scene, 0, weight_mode=weight_mode)
    assert [m.point_id for m in measurements] == [0, 1, 2, 3]
    assert measurements[0].u == pytest.approx(80.5, abs=0.02)
    assert measurements[0].v == pytest.approx(180.5, abs=0.02)
    assert np.max(centroid_errors(scene, measurements)) < 0.02
    assert all(m.pixel_count > 400 for m in measurements)


def test_measure_blurred_discs():
    """Test that blur does not move the centroid of a symmetric disc."""

    scene = mock_scene(blur_sigma=2.0)
    for weight_mode in ("uniform", "intensity"):
        measurements = measure_centroids(render_view(scene, 0), scene, 0, weight_mode=weight_mode)
        assert np.max(centroid_errors(scene, measurements)) < 0.05


def test_measure_subpixel_offset():
    """Test intensity-weighted centroids of discs off the pixel grid."""

    scene = mock_scene(translation=(0.0013, -0.0027, 0.4))
    measurements = measure_centroids(render_view(scene, 0), scene, 0, weight_mode="intensity")
    assert np.max(centroid_errors(scene, measurements)) < 0.02


def test_measure_count_mismatch():
    """Test that a blank image reports the missing blobs."""

    scene = mock_scene()
    with pytest.raises(DetectionCountMismatch) as e:
        measure_centroids(np.full((401, 201), 255, dtype=np.uint8), scene, 0)
    assert str(e.value) == "view 0: expected 4 blobs, found 0"


def test_measure_rejects_weight_mode():
    """Test that unknown weight modes are configuration errors."""

    scene = mock_scene()
    with pytest.raises(ConfigError):
        measure_centroids(render_view(scene, 0), scene, 0, weight_mode="median")


def test_render_checkerboard_unsupported():
    """Test that only circle grids are rasterized."""

    spec = TargetSpec(rows=2, cols=2, spacing=0.04, radius=0.012, pattern="checkerboard")
    with pytest.raises(ConfigError):
        render_view(mock_scene(spec=spec), 0)


def test_oracle_measurements():
    """Test that the oracle reproduces the exact image centroids and blob areas."""

    scene = mock_scene(translation=(0.0013, -0.0027, 0.4))
    measurements = oracle_measurements(scene, 0, samples=64**2)
    assert np.max(centroid_errors(scene, measurements)) < 1e-8
    assert measurements[0].pixel_count == round(np.pi * 12.0**2)


def test_sample_sweep_poses():
    """Test that sweep poses are reproducible and in range."""

    poses = sample_sweep_poses(8, seed=3)
    assert len(poses) == 8
    assert all(0.8 <= p.translation[2] <= 1.2 for p in poses)
    np.testing.assert_array_equal(poses[0].matrix, sample_sweep_poses(8, seed=3)[0].matrix)


def test_flip_boundary_pixels(rng):
    """Test that only pixels next to a blob boundary ever flip."""

    yy, xx = np.mgrid[:41, :41]
    dark = (xx - 20) ** 2 + (yy - 20) ** 2 <= 100
    assert np.array_equal(flip_boundary_pixels(dark, 0.0, rng), dark)
    flipped = flip_boundary_pixels(dark, 1.0, rng)
    boundary = ndimage.binary_dilation(dark) & ~ndimage.binary_erosion(dark)
    assert np.array_equal(flipped ^ dark, boundary)


def test_boundary_noise_shrinks_with_blob_size():
    """Test that centroid scatter under boundary noise falls for larger blobs."""

    rng = np.random.default_rng(42)
    yy, xx = np.mgrid[:64, :64]
    spread = []
    for radius in (6, 12):
        dark = (xx - 32) ** 2 + (yy - 32) ** 2 <= radius**2
        centroids = np.array(
            [ndimage.center_of_mass(flip_boundary_pixels(dark, 0.5, rng)) for _ in range(400)]
        )
        spread.append(np.sum(np.var(centroids, axis=0)))
    assert spread[0] > 1.3 * spread[1]
