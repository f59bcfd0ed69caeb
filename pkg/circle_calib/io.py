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

"""Reading and writing scenes, images, measurement tables and reports.

Every writer goes through a temporary file in the destination directory followed by a rename.
"""

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import cv2
import numpy as np
import pandas as pd

from .camera import Intrinsics, PoseSE3
from .distortion import DistortionModel
from .errors import ConfigError
from .synthetic import Measurement, SyntheticScene, TargetSpec

SCHEMA_VERSION = 1
MEASUREMENT_COLUMNS = ["view_id", "point_id", "u", "v", "pixel_count"]
RESIDUAL_COLUMNS = ["view_id", "point_id", "du", "dv"]

PathLike = Union[str, Path]


@contextmanager
def atomic_path(path: PathLike):
    """Yield a temporary path next to ``path``; rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_json(path: PathLike, payload: Dict[str, Any]):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(payload, indent=2) + "\n")


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read JSON from {path}: {e}") from e
    version = payload.get("schema_version", SCHEMA_VERSION) if isinstance(payload, dict) else None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version}")
    return payload


def pose_to_dict(pose: PoseSE3) -> Dict[str, List[float]]:
    return {"rotvec": pose.rotvec.tolist(), "translation": pose.translation.tolist()}


def pose_from_dict(data: Dict[str, Sequence[float]]) -> PoseSE3:
    return PoseSE3.from_axis_angle(data["rotvec"], data["translation"])


def intrinsics_to_dict(k: Intrinsics) -> Dict[str, float]:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "skew": k.skew}


def scene_to_dict(scene: SyntheticScene) -> Dict[str, Any]:
    spec = scene.spec
    return {
        "target": {
            "rows": spec.rows,
            "cols": spec.cols,
            "spacing": spec.spacing,
            "radius": spec.radius,
            "pattern": spec.pattern,
        },
        "intrinsics": intrinsics_to_dict(scene.intrinsics),
        "distortion": list(scene.distortion.coefficients),
        "image_size": list(scene.image_size),
        "blur_sigma": scene.blur_sigma,
        "supersample": scene.supersample,
        "seed": scene.seed,
        "views": [pose_to_dict(p) for p in scene.poses],
    }


def scene_from_dict(data: Dict[str, Any]) -> SyntheticScene:
    try:
        return SyntheticScene(
            spec=TargetSpec(**data["target"]),
            intrinsics=Intrinsics(**data["intrinsics"]),
            distortion=DistortionModel(tuple(data["distortion"])),
            poses=tuple(pose_from_dict(v) for v in data["views"]),
            image_size=tuple(data["image_size"]),
            blur_sigma=float(data.get("blur_sigma", 0.0)),
            supersample=int(data.get("supersample", 4)),
            seed=data.get("seed"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed scene description: {e}") from e


def save_scene(path: PathLike, scene: SyntheticScene):
    write_json(path, scene_to_dict(scene))


def load_scene(path: PathLike) -> SyntheticScene:
    return scene_from_dict(read_json(path))


def view_image_name(view_id: int) -> str:
    return f"view_{view_id:04d}.pgm"


def write_pgm(path: PathLike, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError(f"expected a 2-D uint8 image, got {image.dtype} {image.shape}")
    with atomic_path(path) as tmp:
        if not cv2.imwrite(str(tmp), image, [cv2.IMWRITE_PXM_BINARY, 1]):
            raise OSError(f"failed to write {path}")


def read_pgm(path: PathLike) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise ConfigError(f"cannot read image {path}")
    return image


def write_table(path: PathLike, table: pd.DataFrame):
    with atomic_path(path) as tmp:
        table.to_csv(tmp, index=False)


def measurements_to_frame(measurements: Sequence[Measurement]) -> pd.DataFrame:
    rows = [(m.view_id, m.point_id, m.u, m.v, m.pixel_count) for m in measurements]
    return pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS)


def write_measurements(path: PathLike, measurements: Sequence[Measurement]):
    write_table(path, measurements_to_frame(measurements))


def read_measurements(path: PathLike) -> List[Measurement]:
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"cannot read measurements from {path}: {e}") from e
    missing = set(MEASUREMENT_COLUMNS) - set(table.columns)
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    if table.duplicated(["view_id", "point_id"]).any():
        raise ConfigError(f"{path}: duplicate (view_id, point_id) rows")
    return [
        Measurement(int(r.view_id), int(r.point_id), float(r.u), float(r.v), int(r.pixel_count))
        for r in table.itertuples(index=False)
    ]


def read_pose_pairs(path: PathLike):
    """Pose pairs file: a list of {"T_mo": [rotvec, t], "T_ct": [rotvec, t]}."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read pose pairs from {path}: {e}") from e
    entries = payload["pairs"] if isinstance(payload, dict) else payload
    try:
        return [
            (
                PoseSE3.from_axis_angle(*entry["T_mo"]),
                PoseSE3.from_axis_angle(*entry["T_ct"]),
            )
            for entry in entries
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed pose pair in {path}: {e}") from e


def write_pose_pairs(path: PathLike, pairs: Sequence):
    entries = [
        {
            "T_mo": [mo.rotvec.tolist(), mo.translation.tolist()],
            "T_ct": [ct.rotvec.tolist(), ct.translation.tolist()],
        }
        for mo, ct in pairs
    ]
    write_json(path, {"pairs": entries})
