"""
Calibration file I/O
Purpose: Load and save the optical/thermal rig calibration (YAML)

Layout:
    schema_version: 1
    optical: {fx, fy, cx, cy, distortion: [k1, k2, p1, p2], width, height}
    thermal: {...}
    T_thermal_optical: 4x4 nested list
    assumed_scene_depth: meters (optional)
"""

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import Field, field_validator

from agents.fusion import CameraRig, RigExtrinsics
from agents.geometry import CameraIntrinsics
from utils.records import VersionedRecord, read_yaml, write_yaml

logger = logging.getLogger(__name__)


class CalibrationFile(VersionedRecord):
    optical: CameraIntrinsics
    thermal: CameraIntrinsics
    T_thermal_optical: List[List[float]] = Field(
        default_factory=lambda: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0],
                                 [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assumed_scene_depth: float = Field(50.0, gt=0)

    @field_validator("T_thermal_optical")
    def validate_matrix(cls, v):
        if len(v) != 4 or any(len(row) != 4 for row in v):
            raise ValueError("T_thermal_optical must be 4x4")
        if v[3] != [0.0, 0.0, 0.0, 1.0]:
            raise ValueError("last row of T_thermal_optical must be [0, 0, 0, 1]")
        r = np.asarray(v, dtype=np.float64)[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rig rotation is not orthonormal")
        return v

    def to_rig(self) -> CameraRig:
        extrinsics = RigExtrinsics.from_matrix(self.T_thermal_optical, self.assumed_scene_depth)
        return CameraRig(optical=self.optical, thermal=self.thermal, extrinsics=extrinsics)

    @classmethod
    def from_rig(cls, rig: CameraRig) -> "CalibrationFile":
        return cls(optical=rig.optical, thermal=rig.thermal,
                   T_thermal_optical=rig.extrinsics.as_matrix().tolist(),
                   assumed_scene_depth=rig.extrinsics.assumed_scene_depth)


def load_calibration(path) -> CameraRig:
    """
    Raises:
        ParseError: invalid YAML
        SchemaError: missing or invalid field (non-orthonormal rig rotation included)
    """
    rig = read_yaml(path, CalibrationFile).to_rig()
    logger.info(f"Loaded calibration from {path}")
    return rig


def save_calibration(path, rig: CameraRig) -> Path:
    return write_yaml(path, CalibrationFile.from_rig(rig))


def default_rig(scene_depth: Optional[float] = None) -> CameraRig:
    """Nadir-looking 1280x960 optical camera with a narrower 640x512 thermal camera 5 cm to its side"""
    optical = CameraIntrinsics(fx=1200.0, fy=1200.0, cx=640.0, cy=480.0, width=1280, height=960)
    thermal = CameraIntrinsics(fx=700.0, fy=700.0, cx=320.0, cy=256.0, width=640, height=512)
    extrinsics = RigExtrinsics(translation=[-0.05, 0.0, 0.0], assumed_scene_depth=scene_depth or 50.0)
    return CameraRig(optical=optical, thermal=thermal, extrinsics=extrinsics)
