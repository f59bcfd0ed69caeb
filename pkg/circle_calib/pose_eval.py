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

"""Six-degree-of-freedom evaluation against an external tracker.

Each pair holds a tracker pose T_mo (marker in the tracker frame) and a camera pose T_ct (target
in the camera frame) related by T_mo X = Y T_ct with unknown fixed X and Y.
"""

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence, Tuple

import numpy as np
from covalent._shared_files.logger import app_log
from scipy.spatial.transform import Rotation

from .camera import PoseSE3
from .errors import ConfigError, IllConditioned, InsufficientMotion

MOTION_EPS = 1e-12
CONDITION_MAX = 1e12


@dataclass(frozen=True)
class PosePairSet:
    pairs: Tuple[Tuple[PoseSE3, PoseSE3], ...]

    def __post_init__(self):
        pairs = tuple((mo, ct) for mo, ct in self.pairs)
        if len(pairs) < 3:
            raise ConfigError(f"need at least 3 pose pairs, got {len(pairs)}")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def relative_motions(self):
        """(A_ij, B_ij) for i < j with A_ij X = X B_ij."""
        for (mo_i, ct_i), (mo_j, ct_j) in combinations(self.pairs, 2):
            yield mo_j.inverse() @ mo_i, ct_j.inverse() @ ct_i


@dataclass(frozen=True)
class PoseError:
    rotation_deg: float
    translation_mm: float


def project_to_so3(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def solve_axxb(pairs: PosePairSet) -> Tuple[PoseSE3, PoseSE3]:
    """Closed-form X and Y from pose pairs.

    Raises:
        InsufficientMotion: relative rotations do not span two independent axes.
        IllConditioned: the translation system is near-singular.
    """
    motions = list(pairs.relative_motions())
    m = np.zeros((3, 3))
    for a, b in motions:
        m += np.outer(Rotation.from_matrix(b.rotation).as_rotvec(), a.rotvec)

    eigenvalues, eigenvectors = np.linalg.eigh(m.T @ m)
    if not eigenvalues[0] > MOTION_EPS * max(eigenvalues[-1], MOTION_EPS):
        raise InsufficientMotion(
            f"relative rotations are degenerate (eigenvalues {eigenvalues.round(12).tolist()})"
        )
    inv_sqrt = eigenvectors @ np.diag(eigenvalues**-0.5) @ eigenvectors.T
    r_x = project_to_so3(inv_sqrt @ m.T)

    c = np.concatenate([np.eye(3) - a.rotation for a, _ in motions])
    d = np.concatenate([a.translation - r_x @ b.translation for a, b in motions])
    normal = c.T @ c
    if np.linalg.cond(normal) > CONDITION_MAX:
        raise IllConditioned(f"translation system condition number {np.linalg.cond(normal):.3e}")
    x = PoseSE3(r_x, np.linalg.solve(normal, c.T @ d))

    ys = [mo @ x @ ct.inverse() for mo, ct in pairs.pairs]
    y = PoseSE3(
        project_to_so3(np.sum([p.rotation for p in ys], axis=0)),
        np.mean([p.translation for p in ys], axis=0),
    )
    app_log.debug(f"Solved AX=XB from {len(motions)} relative motions")
    return x, y


def pose_error(pairs: PosePairSet, x: PoseSE3, y: PoseSE3) -> PoseError:
    """Mean rotation (degrees) and translation (millimetres) error of T_mo against Y T_ct X^-1."""
    rotation, translation = [], []
    for mo, ct in pairs.pairs:
        predicted = y @ ct @ x.inverse()
        delta = predicted.rotation @ mo.rotation.T
        rotation.append(np.degrees(Rotation.from_matrix(delta).magnitude()))
        translation.append(1000.0 * np.linalg.norm(predicted.translation - mo.translation))
    return PoseError(float(np.mean(rotation)), float(np.mean(translation)))


def synthesize_pose_pairs(
    camera_poses: Sequence[PoseSE3], x: PoseSE3, y: PoseSE3
) -> PosePairSet:
    """Tracker poses consistent with the given camera poses: T_mo = Y T_ct X^-1."""
    x_inv = x.inverse()
    return PosePairSet(tuple((y @ ct @ x_inv, ct) for ct in camera_poses))
