"""
Simulation Agent
Purpose: Generate ground truth and noisy detector output for a flight over humans
Functions:
- Camera trajectory sampling along waypoints at the frame rate
- Human ground footprints projected into the optical and thermal cameras
- Detector noise model (misses, false positives, scores, pixel jitter)
- Appearance patches for optical detections
- Writing a scenario as pipeline input files

All randomness is drawn from per-frame, per-purpose streams of the scenario seed.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from agents.detector_support import BoundingBox, Detection, Spectrum
from agents.evaluation import Annotation, Posture
from agents.fusion import CameraRig
from agents.geometry import CameraIntrinsics, Pose, backproject_camera, project_ground_rectangle
from utils.calibration import CalibrationFile, default_rig, save_calibration
from utils.records import VersionedRecord, read_yaml, write_annotations, write_detections, write_poses
from utils.rng import make_rng

logger = logging.getLogger(__name__)

# camera x = east, camera y = south, optical axis pointing down
NADIR_ROTATION = np.diag([1.0, -1.0, -1.0])

STREAM_OPTICAL = 1
STREAM_THERMAL = 2
STREAM_FP_OPTICAL = 3
STREAM_FP_THERMAL = 4

PATCH_DIR = "patches"


class CameraPath(BaseModel):
    waypoints: List[Tuple[float, float, float]] = Field(..., min_length=1, description="UTM x, y, altitude")
    speed: float = Field(2.0, ge=0, description="m/s along the waypoints")
    n_frames: Optional[int] = Field(None, ge=1, description="Frame count; default covers the whole path")

    @model_validator(mode="after")
    def check_length(self):
        if self.n_frames is None and (self.speed == 0 or len(self.waypoints) < 2):
            raise ValueError("a hovering camera needs n_frames")
        if any(z <= 0 for _, _, z in self.waypoints):
            raise ValueError("camera altitude must be positive")
        return self


class HumanSpec(BaseModel):
    human_id: int = Field(..., ge=1)
    waypoints: List[Tuple[float, float]] = Field(..., min_length=1)
    speed: float = Field(0.0, ge=0)
    width_m: float = Field(0.6, gt=0, description="Footprint along east")
    length_m: float = Field(1.8, gt=0, description="Footprint along north")
    posture: Posture = Posture.UPRIGHT
    occluded: bool = False
    color_bgr: Tuple[int, int, int] = (40, 40, 220)


class NoiseModel(BaseModel):
    miss_rate: float = Field(0.0, ge=0, le=1, description="Per detection and spectrum")
    fp_rate: float = Field(0.0, ge=0, le=1, description="Probability of one false positive per frame and spectrum")
    score_range: Tuple[float, float] = (0.6, 0.95)
    fp_score_range: Tuple[float, float] = (0.3, 0.7)
    jitter_px: float = Field(0.0, ge=0, description="Std of the box center jitter")
    thermal_offset_px: Tuple[float, float] = (0.0, 0.0)
    fp_size_m: Tuple[float, float] = (2.0, 3.0)

    @field_validator("score_range", "fp_score_range")
    def validate_score_range(cls, v):
        lo, hi = v
        if not 0 <= lo <= hi <= 1:
            raise ValueError(f"score range must satisfy 0 <= low <= high <= 1, got {v}")
        return v

    @field_validator("fp_size_m")
    def validate_fp_size(cls, v):
        lo, hi = v
        if not 0 < lo <= hi:
            raise ValueError(f"false positive size range must satisfy 0 < low <= high, got {v}")
        return v


class ScenarioSpec(VersionedRecord):
    name: str = "scenario"
    seed: int = Field(0, ge=0)
    frame_rate: float = Field(4.0, gt=0)
    start_time: float = 0.0
    thermal_time_offset_s: float = 0.0
    camera: CameraPath
    humans: List[HumanSpec] = Field(default_factory=list)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    calibration: Optional[CalibrationFile] = None
    background_bgr: Tuple[int, int, int] = (70, 110, 90)

    @field_validator("humans")
    def validate_unique_ids(cls, v):
        ids = [h.human_id for h in v]
        if len(ids) != len(set(ids)):
            raise ValueError("human IDs must be unique")
        return v

    def rig(self) -> CameraRig:
        return self.calibration.to_rig() if self.calibration is not None else default_rig()


class SimulationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    annotations: List[Annotation]
    optical: List[Detection]
    thermal: List[Detection]
    poses: List[Pose]
    rig: CameraRig
    patches: Dict[str, np.ndarray] = Field(default_factory=dict)


def polyline_length(waypoints: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum()) if len(waypoints) > 1 else 0.0


def polyline_point(waypoints: np.ndarray, distance: float) -> np.ndarray:
    """Point at arc length distance along the polyline, clamped to its end"""
    waypoints = np.asarray(waypoints, dtype=np.float64)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        segment = float(np.linalg.norm(b - a))
        if distance <= segment and segment > 0:
            return a + (b - a) * (distance / segment)
        distance -= segment
    return waypoints[-1].copy()


def camera_poses(spec: ScenarioSpec) -> List[Pose]:
    waypoints = np.asarray(spec.camera.waypoints, dtype=np.float64)
    step = spec.camera.speed / spec.frame_rate
    n_frames = spec.camera.n_frames
    if n_frames is None:
        n_frames = int(np.floor(polyline_length(waypoints) / step + 1e-9)) + 1
    return [Pose(rotation=NADIR_ROTATION, translation=polyline_point(waypoints, k * step),
                 timestamp=spec.start_time + k / spec.frame_rate)
            for k in range(n_frames)]


def human_position(h: HumanSpec, elapsed: float) -> np.ndarray:
    return polyline_point(np.asarray(h.waypoints, dtype=np.float64), h.speed * elapsed)


def ground_footprint(center: Sequence[float], width_m: float, length_m: float) -> np.ndarray:
    """Corners (4, 3) of a ground rectangle at z = 0"""
    x, y = center
    dx, dy = width_m / 2.0, length_m / 2.0
    return np.array([[x - dx, y - dy, 0.0], [x + dx, y - dy, 0.0],
                     [x + dx, y + dy, 0.0], [x - dx, y + dy, 0.0]])


def footprint_box(corners: np.ndarray, pose: Pose, intr: CameraIntrinsics) -> BoundingBox:
    return BoundingBox.from_list(project_ground_rectangle(corners, pose, intr))


def render_patch(box: BoundingBox, color_bgr: Sequence[int], background_bgr: Sequence[int]) -> np.ndarray:
    """Filled ellipse of the human colour spanning the box, on the background colour"""
    width = max(int(round(box.width)), 1)
    height = max(int(round(box.height)), 1)
    patch = np.empty((height, width, 3), dtype=np.uint8)
    patch[:] = background_bgr
    cv2.ellipse(patch, (width // 2, height // 2), (max(width // 2, 1), max(height // 2, 1)),
                0, 0, 360, tuple(int(c) for c in color_bgr), thickness=-1, lineType=cv2.LINE_8)
    return patch


def _jittered(box: BoundingBox, rng: np.random.Generator, sigma: float,
              offset: Tuple[float, float] = (0.0, 0.0)) -> BoundingBox:
    dx, dy = rng.standard_normal(size=2) * sigma
    return box.translated(float(dx + offset[0]), float(dy + offset[1]))


def _false_positive(rng: np.random.Generator, pose: Pose, intr: CameraIntrinsics,
                    noise: NoiseModel) -> Optional[Tuple[BoundingBox, float, Tuple[int, int, int]]]:
    """A ground-sized blob at a random pixel; None when it does not fit the image"""
    u, v = rng.uniform(0, intr.width), rng.uniform(0, intr.height)
    side_x, side_y = rng.uniform(*noise.fp_size_m, size=2)
    score = float(rng.uniform(*noise.fp_score_range))
    color = tuple(int(c) for c in rng.integers(0, 256, size=3))
    ground = pose.camera_to_world(backproject_camera(np.array([[u, v]]), pose.altitude, intr))[0]
    box = footprint_box(ground_footprint(ground[:2], side_x, side_y), pose, intr)
    return (box, score, color) if intr.contains(box) else None


def simulate(spec: ScenarioSpec, seed: Optional[int] = None) -> SimulationResult:
    """
    Render a scenario into annotations, detections, poses and calibration

    Humans are annotated in frames where their optical box lies fully inside the
    image. Each visible human is detected per spectrum unless missed, with a
    jittered box and a uniform score. Identical seeds give identical output.

    Raises:
        GeometryError: a footprint projects behind a camera
    """
    seed = spec.seed if seed is None else seed
    rig = spec.rig()
    noise = spec.noise
    poses = camera_poses(spec)
    humans = sorted(spec.humans, key=lambda h: h.human_id)

    annotations: List[Annotation] = []
    optical: List[Detection] = []
    thermal: List[Detection] = []
    patches: Dict[str, np.ndarray] = {}

    for frame, pose in enumerate(poses):
        elapsed = pose.timestamp - spec.start_time
        thermal_pose = rig.thermal_pose(pose)
        t_thermal = pose.timestamp + spec.thermal_time_offset_s
        rng_opt = make_rng(seed, STREAM_OPTICAL, frame)
        rng_thm = make_rng(seed, STREAM_THERMAL, frame)
        frame_optical: List[Tuple[Detection, Sequence[int]]] = []

        for h in humans:
            corners = ground_footprint(human_position(h, elapsed), h.width_m, h.length_m)
            opt_box = footprint_box(corners, pose, rig.optical)
            thm_box = footprint_box(corners, thermal_pose, rig.thermal)
            # fixed draw count per human keeps the streams aligned across noise settings
            opt_draws = rng_opt.uniform(size=2)
            thm_draws = rng_thm.uniform(size=2)
            opt_det = _jittered(opt_box, rng_opt, noise.jitter_px)
            thm_det = _jittered(thm_box, rng_thm, noise.jitter_px, noise.thermal_offset_px)

            if not rig.optical.contains(opt_box):
                continue
            annotations.append(Annotation(frame=frame, bbox=opt_box, human_id=h.human_id,
                                          posture=h.posture, occluded=h.occluded))
            lo, hi = noise.score_range
            if opt_draws[0] >= noise.miss_rate and rig.optical.contains(opt_det):
                d = Detection(bbox=opt_det, score=float(lo + (hi - lo) * opt_draws[1]), spectrum=Spectrum.OPTICAL,
                              frame=frame, timestamp=pose.timestamp)
                frame_optical.append((d, h.color_bgr))
            if thm_draws[0] >= noise.miss_rate and rig.thermal.contains(thm_det):
                thermal.append(Detection(bbox=thm_det, score=float(lo + (hi - lo) * thm_draws[1]),
                                         spectrum=Spectrum.THERMAL, frame=frame, timestamp=t_thermal))

        rng_fp = make_rng(seed, STREAM_FP_OPTICAL, frame)
        if rng_fp.uniform() < noise.fp_rate:
            fp = _false_positive(rng_fp, pose, rig.optical, noise)
            if fp is not None:
                box, score, color = fp
                frame_optical.append((Detection(bbox=box, score=score, spectrum=Spectrum.OPTICAL, frame=frame,
                                                timestamp=pose.timestamp), color))
        rng_fp = make_rng(seed, STREAM_FP_THERMAL, frame)
        if rng_fp.uniform() < noise.fp_rate:
            fp = _false_positive(rng_fp, thermal_pose, rig.thermal, noise)
            if fp is not None:
                box, score, _ = fp
                thermal.append(Detection(bbox=box, score=score, spectrum=Spectrum.THERMAL, frame=frame,
                                         timestamp=t_thermal))

        for index, (d, color) in enumerate(frame_optical):
            name = f"{PATCH_DIR}/f{frame:05d}_d{index:03d}.png"
            patches[name] = render_patch(d.bbox, color, spec.background_bgr)
            optical.append(d.model_copy(update={"patch": name}))

    logger.info(f"Simulated '{spec.name}': {len(poses)} frames, {len(annotations)} annotations, "
                f"{len(optical)} optical / {len(thermal)} thermal detections")
    return SimulationResult(annotations=annotations, optical=optical, thermal=thermal,
                            poses=poses, rig=rig, patches=patches)


def write_simulation(result: SimulationResult, out_dir) -> Dict[str, Path]:
    """Write the pipeline inputs of a simulation; patch paths are relative to out_dir"""
    out_dir = Path(out_dir)
    (out_dir / PATCH_DIR).mkdir(parents=True, exist_ok=True)
    for name, patch in sorted(result.patches.items()):
        if not cv2.imwrite(str(out_dir / name), patch):
            raise OSError(f"could not write patch {out_dir / name}")
    return {
        "optical": write_detections(out_dir / "optical.jsonl", result.optical),
        "thermal": write_detections(out_dir / "thermal.jsonl", result.thermal),
        "annotations": write_annotations(out_dir / "annotations.jsonl", result.annotations),
        "poses": write_poses(out_dir / "poses.csv", result.poses),
        "calibration": save_calibration(out_dir / "calibration.yaml", result.rig),
        "patches_dir": out_dir,
    }


def load_scenario(path) -> ScenarioSpec:
    return read_yaml(path, ScenarioSpec)
