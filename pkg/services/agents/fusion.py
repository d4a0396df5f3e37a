"""
Fusion Agent
Purpose: Merge optical and thermal detections of the same scene
Functions:
- Map boxes between spectra through the rig calibration
- Sliding-window cross-spectral matching
- Bidirectional pairing with greedy conflict resolution
- OR / AND merging with averaged scores
- Nearest-timestamp frame pairing
"""

import bisect
import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from agents.detector_support import BoundingBox, Detection, Spectrum, iou_matrix
from agents.geometry import CameraIntrinsics, Pose, backproject_camera, project_camera
from utils.errors import OutsideImage, PipelineError

logger = logging.getLogger(__name__)

FRAME_PAIRING_TOLERANCE_S = 0.125


class MergeMode(str, Enum):
    OR = "or"
    AND = "and"


class RigExtrinsics(BaseModel):
    """thermal <- optical transform: X_thermal = rotation @ X_optical + translation"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rotation: np.ndarray = Field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = Field(default_factory=lambda: np.zeros(3))
    assumed_scene_depth: float = Field(50.0, gt=0)

    @field_validator("rotation", mode="before")
    def validate_rotation(cls, v):
        r = np.array(v, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rig rotation is not orthonormal")
        return r

    @field_validator("translation", mode="before")
    def validate_translation(cls, v):
        return np.array(v, dtype=np.float64).reshape(3)

    @classmethod
    def from_matrix(cls, matrix, assumed_scene_depth: float = 50.0) -> "RigExtrinsics":
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return cls(rotation=m[:3, :3], translation=m[:3, 3], assumed_scene_depth=assumed_scene_depth)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigExtrinsics":
        """optical <- thermal"""
        return RigExtrinsics(rotation=self.rotation.T, translation=-self.rotation.T @ self.translation,
                             assumed_scene_depth=self.assumed_scene_depth)

    def at_depth(self, depth: float) -> "RigExtrinsics":
        return self.model_copy(update={"assumed_scene_depth": float(depth)})

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation


class CameraRig(BaseModel):
    """Optical + thermal camera pair"""
    model_config = ConfigDict(frozen=True)

    optical: CameraIntrinsics
    thermal: CameraIntrinsics
    extrinsics: RigExtrinsics = Field(default_factory=RigExtrinsics)

    def intrinsics(self, spectrum: Spectrum) -> CameraIntrinsics:
        return self.optical if spectrum == Spectrum.OPTICAL else self.thermal

    def thermal_pose(self, optical_pose: Pose) -> Pose:
        """World pose of the thermal camera given the optical camera pose"""
        rotation = optical_pose.rotation @ self.extrinsics.rotation.T
        translation = optical_pose.translation - rotation @ self.extrinsics.translation
        return Pose(rotation=rotation, translation=translation, timestamp=optical_pose.timestamp)


class FusionConfig(BaseModel):
    mode: MergeMode = MergeMode.OR
    match_iou: float = Field(0.5, gt=0, le=1)
    grid_size: int = Field(6, ge=1, description="Window centers per axis")
    search_scale: float = Field(3.0, ge=1, description="Search region side relative to the mapped box")
    scene_depth: Optional[float] = Field(None, gt=0, description="Fixed mapping depth; None uses UAV altitude")
    pairing_tolerance_s: float = Field(FRAME_PAIRING_TOLERANCE_S, ge=0)


class MatchResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: Detection
    matched: Optional[Detection] = None
    matched_index: Optional[int] = None
    window: BoundingBox
    iou_at_match: float = 0.0


class FusionPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    optical_index: int
    thermal_index: int
    iou: float


def map_bbox(d: Detection, rig: RigExtrinsics, intr_src: CameraIntrinsics,
             intr_dst: CameraIntrinsics, depth: Optional[float] = None) -> BoundingBox:
    """
    Transfer a box from the source camera to the destination camera

    Corners are back-projected at the scene depth, moved by rig, reprojected, and
    the axis-aligned hull is clamped to the destination image.

    Raises:
        OutsideImage: the hull lies entirely outside the destination image
    """
    scene_depth = rig.assumed_scene_depth if depth is None else depth
    corners = backproject_camera(np.asarray(d.bbox.corners()), scene_depth, intr_src)
    pixels = project_camera(rig.apply(corners), intr_dst)
    x_min, y_min = pixels.min(axis=0)
    x_max, y_max = pixels.max(axis=0)
    if x_max <= 0 or y_max <= 0 or x_min >= intr_dst.width or y_min >= intr_dst.height:
        raise OutsideImage(f"mapped box [{x_min:.1f}, {y_min:.1f}, {x_max:.1f}, {y_max:.1f}] "
                           f"outside {intr_dst.width}x{intr_dst.height} image")
    return BoundingBox(x_min=float(np.clip(x_min, 0, intr_dst.width)),
                       y_min=float(np.clip(y_min, 0, intr_dst.height)),
                       x_max=float(np.clip(x_max, 0, intr_dst.width)),
                       y_max=float(np.clip(y_max, 0, intr_dst.height)))


def window_placements(mapped: BoundingBox, grid_size: int = 6, search_scale: float = 3.0) -> np.ndarray:
    """
    Candidate windows (mapped box first, then the grid) as an (N, 4) array

    Window centers sit at the cell centers of a grid_size x grid_size split of the
    search region; every window has the mapped box's size.
    """
    w, h = mapped.width, mapped.height
    cx, cy = mapped.center
    steps = ((np.arange(grid_size) + 0.5) / grid_size - 0.5) * search_scale
    oy, ox = np.meshgrid(steps * h, steps * w, indexing="ij")
    centers = np.stack([cx + ox.ravel(), cy + oy.ravel()], axis=1)
    grid = np.hstack([centers - [w / 2.0, h / 2.0], centers + [w / 2.0, h / 2.0]])
    return np.vstack([np.asarray(mapped.as_list())[None, :], grid])


def sliding_window_match(mapped: BoundingBox, candidates: Sequence[Detection], source: Optional[Detection] = None,
                         threshold: float = 0.5, grid_size: int = 6, search_scale: float = 3.0) -> MatchResult:
    """
    Search the region around a mapped box for its cross-spectral counterpart

    A candidate matches when some window placement reaches threshold IOU with it.
    The best candidate has the highest IOU over all placements; ties go to the
    higher score, then the lower index.
    """
    w, h = mapped.width, mapped.height
    cx, cy = mapped.center
    region = BoundingBox.from_center(cx, cy, search_scale * w, search_scale * h)
    source = source or Detection(bbox=mapped, score=0.0, frame=0)
    if not candidates:
        return MatchResult(source=source, window=region)

    windows = window_placements(mapped, grid_size, search_scale)
    best_iou = iou_matrix(windows, [c.bbox for c in candidates]).max(axis=0)
    best = None
    for index, (cand, value) in enumerate(zip(candidates, best_iou)):
        if value < threshold:
            continue
        if best is None or value > best[1] or (value == best[1] and cand.score > candidates[best[0]].score):
            best = (index, float(value))
    if best is None:
        return MatchResult(source=source, window=region)
    return MatchResult(source=source, matched=candidates[best[0]], matched_index=best[0],
                       window=region, iou_at_match=best[1])


def resolve_pairs(candidates: Sequence[FusionPair]) -> List[FusionPair]:
    """Deduplicate by (optical, thermal) and keep a one-to-one set, greedily by IOU"""
    unique: Dict[Tuple[int, int], FusionPair] = {}
    for pair in candidates:
        key = (pair.optical_index, pair.thermal_index)
        if key not in unique or pair.iou > unique[key].iou:
            unique[key] = pair
    used_opt, used_thm = set(), set()
    accepted = []
    for pair in sorted(unique.values(), key=lambda p: (-p.iou, p.optical_index, p.thermal_index)):
        if pair.optical_index in used_opt or pair.thermal_index in used_thm:
            continue
        used_opt.add(pair.optical_index)
        used_thm.add(pair.thermal_index)
        accepted.append(pair)
    return sorted(accepted, key=lambda p: p.optical_index)


def _fused(opt: Detection, thm: Detection) -> Detection:
    return opt.model_copy(update={
        "score": (opt.score + thm.score) / 2.0,
        "human_id": opt.human_id if opt.human_id is not None else thm.human_id,
    })


def merge_or(opt: Sequence[Detection], thm: Sequence[Detection], pairs: Sequence[FusionPair],
             thermal_in_optical: Optional[Dict[int, BoundingBox]] = None) -> List[Detection]:
    """
    Logical OR merge

    Paired detections become one detection on the optical box with the mean score.
    Unpaired detections of both spectra pass through with their own score. When
    thermal_in_optical is given, unpaired thermal detections move onto their
    optical-frame box; those without one stay in thermal coordinates with
    spectrum thermal.
    """
    by_opt = {p.optical_index: p for p in pairs}
    paired_thm = {p.thermal_index for p in pairs}
    fused = []
    for i, d in enumerate(opt):
        pair = by_opt.get(i)
        fused.append(_fused(d, thm[pair.thermal_index]) if pair else d)
    for j, d in enumerate(thm):
        if j in paired_thm:
            continue
        if thermal_in_optical is not None and j in thermal_in_optical:
            d = d.model_copy(update={"bbox": thermal_in_optical[j], "spectrum": Spectrum.OPTICAL})
        fused.append(d)
    return fused


def merge_and(opt: Sequence[Detection], thm: Sequence[Detection], pairs: Sequence[FusionPair]) -> List[Detection]:
    """Logical AND merge: only cross-matched pairs survive"""
    return [_fused(opt[p.optical_index], thm[p.thermal_index]) for p in sorted(pairs, key=lambda p: p.optical_index)]


def pair_frames(optical_times: Sequence[float], thermal_times: Sequence[float],
                tolerance: float = FRAME_PAIRING_TOLERANCE_S) -> List[Optional[int]]:
    """
    Nearest thermal frame for every optical frame

    Returns:
        Per optical frame, the thermal frame index within tolerance (earlier one on
        ties) or None
    """
    order = sorted(range(len(thermal_times)), key=lambda j: thermal_times[j])
    sorted_times = [thermal_times[j] for j in order]
    paired: List[Optional[int]] = []
    for t in optical_times:
        k = bisect.bisect_left(sorted_times, t)
        best = None
        for cand in (k - 1, k):
            if 0 <= cand < len(sorted_times):
                gap = abs(sorted_times[cand] - t)
                if gap <= tolerance and (best is None or gap < best[1]):
                    best = (order[cand], gap)
        paired.append(best[0] if best else None)
    return paired


class FusionAgent:
    """
    Fusion Agent

    Runs mapping, bidirectional matching and merging on one frame at a time.
    """

    def __init__(self, rig: CameraRig, config: Optional[FusionConfig] = None):
        self.rig = rig
        self.config = config or FusionConfig()
        self.frames_processed = 0
        self.pairs_found = 0
        logger.info(f"Fusion Agent initialized (mode={self.config.mode.value})")

    def _scene_depth(self, pose: Optional[Pose]) -> float:
        if self.config.scene_depth is not None:
            return self.config.scene_depth
        if pose is not None and pose.altitude > 0:
            return pose.altitude
        return self.rig.extrinsics.assumed_scene_depth

    def _map_all(self, dets: Sequence[Detection], rig: RigExtrinsics, src: CameraIntrinsics,
                 dst: CameraIntrinsics, depth: float) -> Dict[int, BoundingBox]:
        mapped = {}
        for i, d in enumerate(dets):
            try:
                mapped[i] = map_bbox(d, rig, src, dst, depth)
            except PipelineError as e:
                logger.warning(f"Frame {d.frame}: {d.spectrum.value} detection {i} not mapped: {e}")
        return mapped

    def match_frame(self, opt: Sequence[Detection], thm: Sequence[Detection],
                    pose: Optional[Pose] = None) -> Tuple[List[FusionPair], Dict[int, BoundingBox]]:
        """
        Match both directions and resolve conflicts

        Returns:
            Accepted pairs and the optical-frame boxes of the thermal detections
        """
        cfg = self.config
        depth = self._scene_depth(pose)
        forward = self.rig.extrinsics
        backward = forward.inverse()
        opt_in_thm = self._map_all(opt, forward, self.rig.optical, self.rig.thermal, depth)
        thm_in_opt = self._map_all(thm, backward, self.rig.thermal, self.rig.optical, depth)

        candidates = []
        for i, box in opt_in_thm.items():
            result = sliding_window_match(box, thm, opt[i], cfg.match_iou, cfg.grid_size, cfg.search_scale)
            if result.matched_index is not None:
                candidates.append(FusionPair(optical_index=i, thermal_index=result.matched_index,
                                             iou=result.iou_at_match))
        for j, box in thm_in_opt.items():
            result = sliding_window_match(box, opt, thm[j], cfg.match_iou, cfg.grid_size, cfg.search_scale)
            if result.matched_index is not None:
                candidates.append(FusionPair(optical_index=result.matched_index, thermal_index=j,
                                             iou=result.iou_at_match))
        pairs = resolve_pairs(candidates)
        self.pairs_found += len(pairs)
        return pairs, thm_in_opt

    def fuse_frame(self, opt: Sequence[Detection], thm: Sequence[Detection],
                   pose: Optional[Pose] = None) -> List[Detection]:
        pairs, thm_in_opt = self.match_frame(opt, thm, pose)
        self.frames_processed += 1
        if self.config.mode == MergeMode.AND:
            return merge_and(opt, thm, pairs)
        return merge_or(opt, thm, pairs, thm_in_opt)

    def fuse_sequence(self, optical: Sequence[Detection], thermal: Sequence[Detection],
                      poses: Optional[Sequence[Pose]] = None) -> List[Detection]:
        """
        Fuse whole detection sequences

        Optical frames come from poses when given (frame = pose index), otherwise
        from the optical detections. Each is paired with the nearest thermal frame
        within the pairing tolerance. Without poses, thermal frames left over become
        frames of their own; with poses they lie off the flight and are dropped.
        """
        opt_by_frame = _group_by_frame(optical)
        thm_by_frame = _group_by_frame(thermal)
        if poses is not None:
            opt_frames = list(range(len(poses)))
            opt_times = [p.timestamp for p in poses]
        else:
            opt_frames = sorted(opt_by_frame)
            opt_times = [opt_by_frame[f][0].timestamp for f in opt_frames]
        thm_frames = sorted(thm_by_frame)
        thm_times = [thm_by_frame[f][0].timestamp for f in thm_frames]

        pairing = pair_frames(opt_times, thm_times, self.config.pairing_tolerance_s)
        used = {j for j in pairing if j is not None}
        axis = list(zip(opt_frames, opt_times, pairing))
        taken = set(opt_frames)
        for j, f in enumerate(thm_frames):
            if j in used:
                continue
            if poses is None and f not in taken:
                axis.append((f, thm_times[j], j))
                taken.add(f)
            else:
                logger.warning(f"Thermal frame {f} has no optical frame within "
                               f"{self.config.pairing_tolerance_s:.3f} s, dropped")
        axis.sort(key=lambda entry: entry[0])

        fused: List[Detection] = []
        for frame, t, j in axis:
            opt = opt_by_frame.get(frame, [])
            thm = thm_by_frame.get(thm_frames[j], []) if j is not None else []
            # thermal detections take the optical frame they were paired with
            thm = [d.model_copy(update={"frame": frame, "timestamp": t}) for d in thm]
            pose = poses[frame] if poses is not None else None
            fused.extend(self.fuse_frame(opt, thm, pose))
        logger.info(f"Fused {len(optical)} optical + {len(thermal)} thermal detections "
                    f"into {len(fused)} ({self.pairs_found} cross-spectral pairs)")
        return fused


def _group_by_frame(detections: Sequence[Detection]) -> Dict[int, List[Detection]]:
    grouped: Dict[int, List[Detection]] = {}
    for d in detections:
        grouped.setdefault(d.frame, []).append(d)
    return grouped
