"""
Geometry Agent
Purpose: Camera models and geo-referencing of detections
Functions:
- Pinhole + radial-tangential projection and back-projection (OpenCV)
- Two-view triangulation of bounding-box centers (ray midpoint)
- Depth and metric bounding-box area of a localized human
- Area-based outlier rejection
"""

import logging
from enum import Enum
from typing import List, Sequence, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from agents.detector_support import BoundingBox
from utils.errors import (DegenerateBaseline, NonPositiveDepth, ParallelRays,
                          PointBehindCamera)

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-9
MIN_BASELINE_M = 1e-6
UNDISTORT_CRITERIA = (cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS, 20, 1e-8)

Pixel = Tuple[float, float]


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics with (k1, k2, p1, p2) distortion"""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    distortion: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)

    @model_validator(mode="after")
    def check_principal_point(self):
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        return self

    def camera_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]], dtype=np.float64)

    def dist_coeffs(self) -> np.ndarray:
        return np.asarray(self.distortion, dtype=np.float64)

    def contains(self, box: BoundingBox) -> bool:
        return box.x_min >= 0 and box.y_min >= 0 and box.x_max <= self.width and box.y_max <= self.height


class Pose(BaseModel):
    """
    Camera pose in the world (UTM) frame

    rotation maps camera axes to world axes; translation is the camera origin in
    the world. A world point X maps to camera coordinates rotation.T @ (X - translation).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rotation: np.ndarray
    translation: np.ndarray
    timestamp: float = 0.0

    @field_validator("rotation", mode="before")
    def validate_rotation(cls, v):
        r = np.array(v, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHONORMAL_TOLERANCE, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation determinant is not 1")
        r.setflags(write=False)
        return r

    @field_validator("translation", mode="before")
    def validate_translation(cls, v):
        t = np.array(v, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        return t

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "Pose":
        return cls(rotation=np.eye(3), translation=np.zeros(3), timestamp=timestamp)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation

    @property
    def altitude(self) -> float:
        return float(self.translation[2])


class WorldPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float

    @model_validator(mode="after")
    def check_finite(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise ValueError("world point must be finite")
        return self

    @classmethod
    def from_array(cls, values) -> "WorldPoint":
        x, y, z = (float(v) for v in np.asarray(values).reshape(3))
        return cls(x=x, y=y, z=z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class GeometryConfig(BaseModel):
    t_area: float = Field(3.0, gt=0, description="Metric area threshold in square meters")
    min_ray_angle_deg: float = Field(0.1, ge=0, description="Minimum triangulation ray angle")


class AreaDecision(str, Enum):
    KEEP = "keep"
    REJECT = "reject"


def project_camera(points_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points (N, 3) to pixels (N, 2)"""
    points_cam = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    if np.any(points_cam[:, 2] <= 0):
        raise PointBehindCamera("point has non-positive depth in the camera frame")
    pixels, _ = cv2.projectPoints(points_cam.reshape(-1, 1, 3), np.zeros(3), np.zeros(3),
                                  intr.camera_matrix(), intr.dist_coeffs())
    return pixels.reshape(-1, 2)


def backproject_camera(pixels: np.ndarray, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points (N, 3) at z = depth for pixels (N, 2)"""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be > 0, got {depth}")
    return normalized_rays(pixels, intr) * depth


def normalized_rays(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Undistorted rays (x, y, 1) in the camera frame"""
    src = np.asarray(pixels, dtype=np.float64).reshape(-1, 1, 2)
    undistorted = cv2.undistortPoints(src, intr.camera_matrix(), intr.dist_coeffs(),
                                      R=None, P=None, criteria=UNDISTORT_CRITERIA).reshape(-1, 2)
    return np.hstack([undistorted, np.ones((len(undistorted), 1))])


def project(point: WorldPoint, pose: Pose, intr: CameraIntrinsics) -> Pixel:
    """
    Project a world point into the image

    Raises:
        PointBehindCamera: camera-frame z <= 0
    """
    u, v = project_camera(pose.world_to_camera(point.as_array()), intr)[0]
    return float(u), float(v)


def backproject(pixel: Pixel, depth: float, pose: Pose, intr: CameraIntrinsics) -> WorldPoint:
    """World point seen at pixel with camera-frame depth (z) of depth meters"""
    cam = backproject_camera(np.asarray(pixel), depth, intr)
    return WorldPoint.from_array(pose.camera_to_world(cam)[0])


def triangulate(obs_a: Tuple[Pixel, Pose], obs_b: Tuple[Pixel, Pose], intr: CameraIntrinsics,
                min_ray_angle_deg: float = 0.1) -> WorldPoint:
    """
    Midpoint of the shortest segment between the two viewing rays

    Args:
        obs_a: (pixel, pose) of the first observation
        obs_b: (pixel, pose) of the second observation
        intr: Intrinsics of the camera both observations come from
        min_ray_angle_deg: Rays closer than this angle are treated as parallel

    Raises:
        DegenerateBaseline: camera centers coincide
        ParallelRays: ray angle below min_ray_angle_deg
    """
    (pix_a, pose_a), (pix_b, pose_b) = obs_a, obs_b
    origin_a, origin_b = pose_a.translation, pose_b.translation
    baseline = float(np.linalg.norm(origin_b - origin_a))
    if baseline <= MIN_BASELINE_M:
        raise DegenerateBaseline(f"baseline {baseline:.3g} m")

    dir_a = pose_a.rotation @ normalized_rays(np.asarray(pix_a), intr)[0]
    dir_b = pose_b.rotation @ normalized_rays(np.asarray(pix_b), intr)[0]
    dir_a /= np.linalg.norm(dir_a)
    dir_b /= np.linalg.norm(dir_b)
    angle = np.degrees(np.arctan2(np.linalg.norm(np.cross(dir_a, dir_b)), float(dir_a @ dir_b)))
    if angle < min_ray_angle_deg:
        raise ParallelRays(f"ray angle {angle:.4f} deg below {min_ray_angle_deg} deg")

    # origin_a + s*dir_a ~ origin_b + u*dir_b
    A = np.stack([dir_a, -dir_b], axis=1)
    s, u = np.linalg.lstsq(A, origin_b - origin_a, rcond=None)[0]
    midpoint = 0.5 * ((origin_a + s * dir_a) + (origin_b + u * dir_b))
    return WorldPoint.from_array(midpoint)


def depth_of(human: WorldPoint, uav: Pose) -> float:
    return float(np.linalg.norm(uav.translation - human.as_array()))


def quadrilateral_area(corners: Sequence[Sequence[float]]) -> float:
    """Area of a (possibly non-planar) quadrilateral from its 4 ordered 3-D corners"""
    p1, p2, p3, p4 = (np.asarray(c, dtype=np.float64) for c in corners)
    return float(0.5 * np.linalg.norm(np.cross(p2 - p1, p3 - p1) + np.cross(p3 - p1, p4 - p1)))


def metric_bbox_area(bbox: BoundingBox, depth: float, pose: Pose, intr: CameraIntrinsics) -> float:
    """Square meters covered by the box when its corners are back-projected at depth"""
    cam = backproject_camera(np.asarray(bbox.corners()), depth, intr)
    return quadrilateral_area(pose.camera_to_world(cam))


def reject_by_area(area: float, t_area: float = 3.0) -> AreaDecision:
    return AreaDecision.REJECT if area > t_area else AreaDecision.KEEP


def project_ground_rectangle(corners_world: np.ndarray, pose: Pose, intr: CameraIntrinsics) -> List[float]:
    """Axis-aligned pixel hull [x_min, y_min, x_max, y_max] of projected world points"""
    pixels = project_camera(pose.world_to_camera(corners_world), intr)
    return [float(pixels[:, 0].min()), float(pixels[:, 1].min()),
            float(pixels[:, 0].max()), float(pixels[:, 1].max())]
