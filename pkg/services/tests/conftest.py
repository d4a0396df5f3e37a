"""
Shared fixtures for the RescueSight test suite
"""

import logging

import numpy as np
import pytest

from agents.detector_support import BoundingBox, Detection, Spectrum
from agents.evaluation import Annotation, Posture
from agents.geometry import CameraIntrinsics, Pose
from agents.simulation import NADIR_ROTATION
from utils.calibration import default_rig

logging.basicConfig(level=logging.WARNING)


@pytest.fixture
def intrinsics():
    """Distortion-free camera with f = 100 px"""
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=200, height=200)


@pytest.fixture
def rig():
    return default_rig()


@pytest.fixture
def nadir_pose():
    """Factory for a downward-looking camera at (x, y, altitude)"""
    def make(x: float = 0.0, y: float = 0.0, altitude: float = 40.0, t: float = 0.0) -> Pose:
        return Pose(rotation=NADIR_ROTATION, translation=[x, y, altitude], timestamp=t)
    return make


@pytest.fixture
def detection():
    """Factory for a detection from [x_min, y_min, x_max, y_max]"""
    def make(bbox, score: float = 0.9, frame: int = 0, spectrum: Spectrum = Spectrum.OPTICAL,
             t: float = 0.0, human_id=None) -> Detection:
        return Detection(bbox=BoundingBox.from_list(bbox), score=score, spectrum=spectrum,
                         frame=frame, timestamp=t, human_id=human_id)
    return make


@pytest.fixture
def annotation():
    """Factory for an annotation from [x_min, y_min, x_max, y_max]"""
    def make(bbox, human_id: int = 1, frame: int = 0, posture: Posture = Posture.UPRIGHT,
             occluded: bool = False) -> Annotation:
        return Annotation(frame=frame, bbox=BoundingBox.from_list(bbox), human_id=human_id,
                          posture=posture, occluded=occluded)
    return make


@pytest.fixture
def solid_patch():
    """Factory for a BGR patch of one colour"""
    def make(color_bgr, size=(20, 40)) -> np.ndarray:
        width, height = size
        patch = np.empty((height, width, 3), dtype=np.uint8)
        patch[:] = color_bgr
        return patch
    return make
