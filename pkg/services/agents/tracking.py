"""
Tracking Agent
Purpose: Keep one identity per human across consecutive frames
Functions:
- Track store and tracker interface
- IOU-gated constant-velocity baseline tracker (greedy association)
- Half-sampling of boxes for association
"""

import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from agents.detector_support import BoundingBox, Detection, iou_matrix
from utils.errors import NonMonotonicFrame

logger = logging.getLogger(__name__)


class TrackState(str, Enum):
    ACTIVE = "active"
    LOST = "lost"


class TrackObservation(BaseModel):
    frame: int
    bbox: BoundingBox
    score: float
    timestamp: float = 0.0


class Track(BaseModel):
    human_id: int
    observations: List[TrackObservation] = Field(default_factory=list)
    state: TrackState = TrackState.ACTIVE
    frames_since_seen: int = 0

    @property
    def last_frame(self) -> int:
        return self.observations[-1].frame


class TrackerConfig(BaseModel):
    downsample_factor: float = Field(2.0, ge=1)
    iou_gate: float = Field(0.3, gt=0, lt=1)
    max_missed_frames: int = Field(8, ge=1, description="About 2 s at 4 Hz")
    frame_rate_hz: float = Field(4.0, gt=0)


class TrackStore(BaseModel):
    tracks: Dict[int, Track] = Field(default_factory=dict)
    next_id: int = 1
    last_frame: Optional[int] = None

    def active(self) -> List[Track]:
        return [t for t in self.tracks.values() if t.state == TrackState.ACTIVE]


def downsample_bbox(b: BoundingBox, factor: float) -> BoundingBox:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    return b.scaled(1.0 / factor)


def upsample_bbox(b: BoundingBox, factor: float) -> BoundingBox:
    return b.scaled(factor)


def predict_bbox(track: Track, frame: int, frame_rate_hz: float) -> BoundingBox:
    """Constant-velocity extrapolation of the box center from the last two observations"""
    last = track.observations[-1]
    if len(track.observations) < 2:
        return last.bbox
    prev = track.observations[-2]
    dt_obs = (last.frame - prev.frame) / frame_rate_hz
    (px, py), (lx, ly) = prev.bbox.center, last.bbox.center
    vx, vy = (lx - px) / dt_obs, (ly - py) / dt_obs
    dt = (frame - last.frame) / frame_rate_hz
    return last.bbox.translated(vx * dt, vy * dt)


def step(store: TrackStore, detections: Sequence[Detection], frame: int,
         cfg: Optional[TrackerConfig] = None) -> Tuple[TrackStore, List[int]]:
    """
    Associate one frame of detections with the active tracks

    Args:
        store: Track store, updated in place
        detections: Detections of this frame
        frame: Frame index, strictly greater than the previous one
        cfg: Tracker configuration

    Returns:
        The store and the track ID of every detection, in input order
    """
    cfg = cfg or TrackerConfig()
    if store.last_frame is not None and frame <= store.last_frame:
        raise NonMonotonicFrame(f"frame {frame} after frame {store.last_frame}")

    active = sorted(store.active(), key=lambda t: t.human_id)
    ids: List[Optional[int]] = [None] * len(detections)
    matched_tracks = set()
    if active and detections:
        predicted = [downsample_bbox(predict_bbox(t, frame, cfg.frame_rate_hz), cfg.downsample_factor) for t in active]
        observed = [downsample_bbox(d.bbox, cfg.downsample_factor) for d in detections]
        ious = iou_matrix(predicted, observed)
        candidates = [(ious[ti, di], active[ti].human_id, di)
                      for ti, di in zip(*np.nonzero(ious >= cfg.iou_gate))]
        for _, track_id, di in sorted(candidates, key=lambda c: (-c[0], c[1], c[2])):
            if track_id in matched_tracks or ids[di] is not None:
                continue
            matched_tracks.add(track_id)
            ids[di] = track_id

    for di, d in enumerate(detections):
        if ids[di] is None:
            ids[di] = store.next_id
            store.tracks[store.next_id] = Track(human_id=store.next_id)
            store.next_id += 1
        track = store.tracks[ids[di]]
        track.observations.append(TrackObservation(frame=frame, bbox=d.bbox, score=d.score, timestamp=d.timestamp))
        track.frames_since_seen = 0

    for track in active:
        if track.human_id in matched_tracks:
            continue
        track.frames_since_seen = frame - track.last_frame
        if track.frames_since_seen >= cfg.max_missed_frames:
            track.state = TrackState.LOST
            logger.debug(f"Track {track.human_id} lost at frame {frame}")

    store.last_frame = frame
    return store, [int(i) for i in ids]


class Tracker(ABC):
    """Frame-by-frame tracker interface"""

    @abstractmethod
    def update(self, detections: Sequence[Detection], frame: int) -> List[int]:
        """Track IDs of the given detections of one frame"""

    @abstractmethod
    def tracks(self) -> List[Track]:
        pass


class IouTracker(Tracker):
    """Baseline tracker: IOU gate on constant-velocity predictions"""

    def __init__(self, config: Optional[TrackerConfig] = None):
        self.config = config or TrackerConfig()
        self.store = TrackStore()

    def update(self, detections: Sequence[Detection], frame: int) -> List[int]:
        _, ids = step(self.store, detections, frame, self.config)
        return ids

    def tracks(self) -> List[Track]:
        return [self.store.tracks[k] for k in sorted(self.store.tracks)]


class TrackingAgent:
    """
    Tracking Agent

    Runs a tracker over a whole sequence and labels every detection with its track ID.
    """

    def __init__(self, config: Optional[TrackerConfig] = None):
        self.config = config or TrackerConfig()
        self.sequences_processed = 0
        logger.info("Tracking Agent initialized")

    def track_sequence(self, detections: Sequence[Detection],
                       frames: Optional[Sequence[int]] = None,
                       tracker: Optional[Tracker] = None) -> List[Detection]:
        """
        Args:
            detections: Detections of one sequence, any order
            frames: Every frame of the sequence, including frames without
                detections (missed-frame counting needs them)
            tracker: Tracker to use (fresh IouTracker by default)

        Returns:
            Detections in frame order with human_id set to the track ID
        """
        tracker = tracker or IouTracker(self.config)
        by_frame: Dict[int, List[Detection]] = {}
        for d in detections:
            by_frame.setdefault(d.frame, []).append(d)
        all_frames = sorted(set(frames or []) | set(by_frame))

        labelled: List[Detection] = []
        for frame in all_frames:
            dets = by_frame.get(frame, [])
            ids = tracker.update(dets, frame)
            labelled.extend(d.model_copy(update={"human_id": i}) for d, i in zip(dets, ids))
        self.sequences_processed += 1
        logger.info(f"Tracked {len(labelled)} detections over {len(all_frames)} frames "
                    f"into {len(tracker.tracks())} tracks")
        return labelled


# Global instance for easy access
_tracking_agent = None


def get_tracking_agent() -> TrackingAgent:
    global _tracking_agent
    if _tracking_agent is None:
        _tracking_agent = TrackingAgent()
    return _tracking_agent
