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

"""Synthetic circle-grid scenes: pose sampling, rasterization and centroid measurement.

Pixel (i, j) covers [i, i + 1) x [j, j + 1) with i the column (u) and j the row (v). Dark
circles (intensity 0) are drawn on a white background (255).
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from covalent._shared_files.logger import app_log
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from .camera import Intrinsics, PoseSE3, extrinsic_matrices_batch
from .config import calib_config
from .conic import ellipse_features_batch
from .distortion import DistortionModel
from .errors import ConfigError, DetectionCountMismatch, SceneInfeasible
from .estimators import (
    EstimatorSpec,
    distorted_centroid,
    normalized_conics_batch,
    predict_view,
)

PATTERNS = ("circle-grid", "checkerboard")
MAX_TILT = math.radians(45.0)
DISTANCE_BUCKETS = ((0.30, 0.40), (0.40, 0.55), (0.55, 0.75))
REFERENCE_IMAGE_SIZE = (1200, 930)

_BOUNDARY_SAMPLES = 64


@dataclass(frozen=True)
class TargetSpec:
    """Planar grid of circles, centered on the target origin, row-major point ids."""

    rows: int = 4
    cols: int = 6
    spacing: float = 0.04
    radius: float = 0.012
    pattern: str = "circle-grid"

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}, expected one of {PATTERNS}")
        if self.rows * self.cols < 4:
            raise ConfigError(f"target needs at least 4 circles, got {self.rows}x{self.cols}")
        if not self.radius > 0:
            raise ConfigError(f"radius must be positive, got {self.radius}")
        if not self.spacing > 2 * self.radius:
            raise ConfigError(
                f"spacing {self.spacing} must exceed the circle diameter {2 * self.radius}"
            )

    @property
    def n_points(self) -> int:
        return self.rows * self.cols

    def centers(self) -> np.ndarray:
        """Circle centers (rows * cols, 2) in metres."""
        row, col = np.divmod(np.arange(self.n_points), self.cols)
        x = (col - 0.5 * (self.cols - 1)) * self.spacing
        y = (row - 0.5 * (self.rows - 1)) * self.spacing
        return np.column_stack([x, y])

    def nearest_point(self, xy: np.ndarray) -> np.ndarray:
        """Row-major id of the grid cell containing each target-plane point."""
        col = np.rint(xy[..., 0] / self.spacing + 0.5 * (self.cols - 1))
        row = np.rint(xy[..., 1] / self.spacing + 0.5 * (self.rows - 1))
        col = np.clip(col, 0, self.cols - 1)
        row = np.clip(row, 0, self.rows - 1)
        return (row * self.cols + col).astype(int)


@dataclass(frozen=True)
class SyntheticScene:
    spec: TargetSpec
    intrinsics: Intrinsics
    distortion: DistortionModel
    poses: Tuple[PoseSE3, ...]
    image_size: Tuple[int, int] = REFERENCE_IMAGE_SIZE
    blur_sigma: float = 0.0
    supersample: int = 4
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.blur_sigma < 0:
            raise ConfigError(f"blur sigma must be non-negative, got {self.blur_sigma}")
        if self.supersample < 1:
            raise ConfigError(f"supersample must be >= 1, got {self.supersample}")

    @property
    def n_views(self) -> int:
        return len(self.poses)

    def pose(self, view_id: int) -> PoseSE3:
        if not 0 <= view_id < self.n_views:
            raise ConfigError(f"view {view_id} does not exist (scene has {self.n_views})")
        return self.poses[view_id]


@dataclass(frozen=True)
class Measurement:
    view_id: int
    point_id: int
    u: float
    v: float
    pixel_count: int = 0


def field_of_view(intrinsics: Intrinsics, image_size: Tuple[int, int]) -> float:
    """Largest squared normalized radius of the image corners."""
    w, h = image_size
    corners = np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])
    p = intrinsics.to_normalized(corners)
    return float(np.max(np.sum(p * p, axis=1)))


def _boundary_points(spec: TargetSpec) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(_BOUNDARY_SAMPLES) / _BOUNDARY_SAMPLES
    ring = spec.radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return (spec.centers()[:, None, :] + ring[None]).reshape(-1, 2)


def _view_rejection(
    pose: PoseSE3,
    boundary: np.ndarray,
    intrinsics: Intrinsics,
    distortion: DistortionModel,
    image_size: Tuple[int, int],
    s_fov: float,
    margin: float,
) -> Optional[str]:
    """Reason the view is unusable, or None."""
    cam = pose.apply(np.column_stack([boundary, np.zeros(len(boundary))]))
    if np.any(cam[:, 2] <= 0.0):
        return "target behind camera"
    p_n = cam[:, :2] / cam[:, 2:3]
    s = np.sum(p_n * p_n, axis=1)
    if np.max(s) > min(s_fov, distortion.monotone_limit()):
        return f"boundary outside invertible field of view (s={np.max(s):.3f})"
    px = intrinsics.to_pixels(distortion.distort(p_n))
    w, h = image_size
    inside = (
        (px[:, 0] >= margin)
        & (px[:, 0] <= w - margin)
        & (px[:, 1] >= margin)
        & (px[:, 1] <= h - margin)
    )
    if not np.all(inside):
        return "circle leaves the image"
    return None


def _sample_pose(rng: np.random.Generator, distance_range: Tuple[float, float]) -> PoseSE3:
    tilt_axis = rng.uniform(0.0, 2.0 * np.pi)
    tilt = rng.uniform(0.0, MAX_TILT)
    spin = rng.uniform(-np.pi, np.pi)
    rotation = Rotation.from_rotvec(tilt * np.array([np.cos(tilt_axis), np.sin(tilt_axis), 0.0]))
    rotation = rotation * Rotation.from_rotvec([0.0, 0.0, spin])
    z = rng.uniform(*distance_range)
    offset = rng.uniform(-0.35, 0.35, size=2)
    return PoseSE3(rotation.as_matrix(), [offset[0] * z, offset[1] * z, z])


def generate_scene(
    spec: TargetSpec,
    intrinsics: Intrinsics,
    distortion: DistortionModel,
    n_views: int,
    seed: int,
    image_size: Tuple[int, int] = REFERENCE_IMAGE_SIZE,
    blur_sigma: float = 0.0,
    supersample: int = None,
    s_fov: float = None,
) -> SyntheticScene:
    """Sample ``n_views`` feasible poses cycling through near, mid and far distances.

    Raises:
        SceneInfeasible: the distortion is not invertible over the field of view, or the rejection
            budget for pose samples ran out.
    """
    if n_views < 1:
        raise ConfigError(f"n_views must be positive, got {n_views}")
    supersample = supersample or calib_config("supersample")
    max_rejections = calib_config("max_scene_rejections")
    s_fov = s_fov or field_of_view(intrinsics, image_size)

    audit = distortion.invertibility_audit(s_fov)
    if not audit.invertible:
        raise SceneInfeasible(
            f"distortion {distortion.coefficients} is not invertible over the field of view: "
            f"k + 2sk' = {audit.min_slope:.4g} at s = {audit.s_at_min:.4g}"
        )

    rng = np.random.default_rng(seed)
    boundary = _boundary_points(spec)
    margin = math.ceil(3.0 * blur_sigma) + 2.0
    poses, rejections = [], 0
    while len(poses) < n_views:
        bucket = DISTANCE_BUCKETS[len(poses) % len(DISTANCE_BUCKETS)]
        pose = _sample_pose(rng, bucket)
        reason = _view_rejection(
            pose, boundary, intrinsics, distortion, image_size, s_fov, margin
        )
        if reason is None:
            poses.append(pose)
            continue
        rejections += 1
        app_log.debug(f"Rejected pose sample {rejections}: {reason}")
        if rejections >= max_rejections:
            raise SceneInfeasible(
                f"{rejections} pose samples rejected after {len(poses)} accepted views"
            )

    app_log.debug(f"Generated {n_views} views with {rejections} rejected samples")
    return SyntheticScene(
        spec=spec,
        intrinsics=intrinsics,
        distortion=distortion,
        poses=tuple(poses),
        image_size=image_size,
        blur_sigma=blur_sigma,
        supersample=supersample,
        seed=seed,
    )


def _coverage(scene: SyntheticScene, pose: PoseSE3, uv: np.ndarray) -> np.ndarray:
    """Whether each pixel-plane point (N, 2) images the inside of a circle."""
    p_d = scene.intrinsics.to_normalized(uv)
    p_n = scene.distortion.undistort(p_d, strict=False)
    e = extrinsic_matrices_batch(pose.rotation, pose.translation)
    w = np.column_stack([p_n, np.ones(len(p_n))]) @ np.linalg.inv(e).T
    reachable = np.all(np.isfinite(w), axis=1) & (w[:, 2] > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = w[:, :2] / w[:, 2:3]
    xy = np.where(reachable[:, None], xy, 0.0)
    spec = scene.spec
    nearest = spec.centers()[spec.nearest_point(xy)]
    inside = np.sum((xy - nearest) ** 2, axis=1) <= spec.radius**2
    return inside & reachable


def render_view(scene: SyntheticScene, view_id: int, supersample: int = None) -> np.ndarray:
    """Rasterize one view to an 8-bit grayscale image of shape (height, width).

    Pixels whose four corners agree are solid; the rest are supersampled s x s. Gaussian blur
    (truncated at 3 sigma) is applied to the coverage image before quantization.
    """
    if scene.spec.pattern != "circle-grid":
        raise ConfigError(f"cannot render pattern {scene.spec.pattern!r}, only circle grids")
    pose = scene.pose(view_id)
    s = supersample or scene.supersample
    w, h = scene.image_size

    cu, cv = np.meshgrid(np.arange(w + 1.0), np.arange(h + 1.0))
    corners = _coverage(scene, pose, np.column_stack([cu.ravel(), cv.ravel()]))
    corners = corners.reshape(h + 1, w + 1)
    votes = (
        corners[:-1, :-1].astype(int)
        + corners[:-1, 1:]
        + corners[1:, :-1]
        + corners[1:, 1:]
    )
    coverage = (votes == 4).astype(float)
    mixed = ndimage.binary_dilation((votes > 0) & (votes < 4), iterations=1)

    rows, cols = np.nonzero(mixed)
    if rows.size:
        offsets = (np.arange(s) + 0.5) / s
        du, dv = np.meshgrid(offsets, offsets)
        uv = np.stack(
            [cols[:, None] + du.ravel()[None, :], rows[:, None] + dv.ravel()[None, :]], axis=-1
        )
        hits = _coverage(scene, pose, uv.reshape(-1, 2)).reshape(rows.size, s * s)
        coverage[rows, cols] = hits.mean(axis=1)

    intensity = 255.0 * (1.0 - coverage)
    if scene.blur_sigma > 0:
        intensity = ndimage.gaussian_filter(
            intensity, sigma=scene.blur_sigma, mode="nearest", truncate=3.0
        )
    return np.clip(np.rint(intensity), 0, 255).astype(np.uint8)


def measure_centroids(
    image: np.ndarray,
    scene: SyntheticScene,
    view_id: int,
    weight_mode: str = None,
    threshold: int = None,
) -> List[Measurement]:
    """Centroids of the dark blobs of ``image``, associated to grid ids.

    ``weight_mode`` is ``uniform`` (binarized blob, w = 1) or ``intensity`` (w = 255 - I over
    the blob grown by ceil(3 sigma) + 1 pixels).
    """
    weight_mode = weight_mode or calib_config("weight_mode")
    threshold = threshold or calib_config("binarize_threshold")
    if weight_mode not in ("uniform", "intensity"):
        raise ConfigError(f"unknown weight mode {weight_mode!r}")

    image = np.asarray(image)
    dark = image < threshold
    labels, count = ndimage.label(dark)
    expected = scene.spec.n_points
    if count != expected:
        raise DetectionCountMismatch(view_id, expected, count)

    index = np.arange(1, count + 1)
    pixel_count = ndimage.sum_labels(dark, labels, index)
    if weight_mode == "uniform":
        rc = np.array(ndimage.center_of_mass(dark, labels, index))
    else:
        grow = math.ceil(3.0 * scene.blur_sigma) + 1
        distance, (ri, ci) = ndimage.distance_transform_edt(labels == 0, return_indices=True)
        grown = np.where(distance <= grow, labels[ri, ci], 0)
        weights = 255.0 - image.astype(float)
        rc = np.array(ndimage.center_of_mass(weights, grown, index))
    uv = rc[:, ::-1] + 0.5

    predicted = predict_view(
        EstimatorSpec("unbiased"),
        scene.spec.centers(),
        scene.spec.radius,
        scene.pose(view_id),
        scene.intrinsics,
        scene.distortion,
    )
    blob, point = linear_sum_assignment(cdist(uv, predicted))
    measurements = [
        Measurement(view_id, int(p), float(uv[b, 0]), float(uv[b, 1]), int(pixel_count[b]))
        for b, p in zip(blob, point)
    ]
    return sorted(measurements, key=lambda m: m.point_id)


def oracle_measurements(
    scene: SyntheticScene, view_id: int, samples: int = None
) -> List[Measurement]:
    """Exact distorted centroids by dense quadrature, bypassing rasterization."""
    samples = samples or calib_config("oracle_samples")
    pose = scene.pose(view_id)
    centers = scene.spec.centers()
    uv = predict_view(
        EstimatorSpec("numerical", samples),
        centers,
        scene.spec.radius,
        pose,
        scene.intrinsics,
        scene.distortion,
    )
    areas = _predicted_pixel_areas(scene, pose, centers)
    return [
        Measurement(view_id, point_id, float(u), float(v), int(round(area)))
        for point_id, ((u, v), area) in enumerate(zip(uv, areas))
    ]


def _predicted_pixel_areas(
    scene: SyntheticScene, pose: PoseSE3, centers: np.ndarray
) -> np.ndarray:
    e = extrinsic_matrices_batch(pose.rotation, pose.translation)
    e = np.broadcast_to(e, (len(centers), 3, 3))
    q_n = normalized_conics_batch(centers, np.full(len(centers), scene.spec.radius), e)
    _, ratio = distorted_centroid(q_n, np.asarray(scene.distortion.coefficients))
    _, _, m0, m1, _ = ellipse_features_batch(q_n)
    return np.pi * m0 * m1 * ratio * scene.intrinsics.fx * scene.intrinsics.fy


def sample_sweep_poses(n: int = 24, seed: int = 0) -> List[PoseSE3]:
    """Fixed single-circle viewpoints for the estimator bias sweep.

    The circle sits at the target origin; its center images within |x| <= 0.5, |y| <= 0.4 of the
    normalized plane at 0.8 to 1.2 m, with tilts up to 45 degrees.
    """
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        tilt_axis = rng.uniform(0.0, 2.0 * np.pi)
        tilt = rng.uniform(0.0, MAX_TILT)
        rotation = Rotation.from_rotvec(
            tilt * np.array([np.cos(tilt_axis), np.sin(tilt_axis), 0.0])
        )
        z = rng.uniform(0.8, 1.2)
        x, y = rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)
        poses.append(PoseSE3(rotation.as_matrix(), [x * z, y * z, z]))
    return poses


def flip_boundary_pixels(
    dark: np.ndarray, probability: float, rng: np.random.Generator
) -> np.ndarray:
    """Flip each pixel on either side of a blob boundary independently with ``probability``."""
    dark = np.asarray(dark, dtype=bool)
    boundary = ndimage.binary_dilation(dark) & ~ndimage.binary_erosion(dark)
    flips = boundary & (rng.random(dark.shape) < probability)
    return dark ^ flips
