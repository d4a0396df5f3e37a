"""
Localization Agent
Purpose: Geo-reference tracked detections
Functions:
- Two-view triangulation of consecutive observations of a track
- Depth and metric bounding-box area per localized observation
- Area-threshold outlier rejection
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from agents.detector_support import Detection
from agents.geometry import (AreaDecision, CameraIntrinsics, GeometryConfig, Pose, WorldPoint, depth_of,
                             metric_bbox_area, reject_by_area, triangulate)
from utils.errors import GeometryError

logger = logging.getLogger(__name__)


class Localization(BaseModel):
    """World position of one tracked detection"""
    model_config = ConfigDict(frozen=True)

    track_id: int
    frame: int
    t: float
    position: WorldPoint
    depth: float
    area: float
    decision: AreaDecision

    def as_row(self) -> dict:
        return {"track_id": self.track_id, "frame": self.frame, "t": self.t,
                "x": self.position.x, "y": self.position.y, "z": self.position.z,
                "depth": self.depth, "area": self.area, "decision": self.decision.value}


class LocalizationResult(BaseModel):
    localizations: List[Localization]
    kept: List[Detection]
    rejected: int = 0
    skipped_pairs: int = 0


def localize_pair(prev: Detection, cur: Detection, poses: Sequence[Pose], intr: CameraIntrinsics,
                  cfg: GeometryConfig) -> Localization:
    """
    Triangulate the box centers of two observations of one track

    The localization belongs to the later observation: its depth and area come
    from the later pose.

    Raises:
        GeometryError: degenerate pair (same pose, near-parallel rays, ...)
    """
    pose_prev, pose_cur = poses[prev.frame], poses[cur.frame]
    point = triangulate((prev.bbox.center, pose_prev), (cur.bbox.center, pose_cur), intr,
                        cfg.min_ray_angle_deg)
    depth = depth_of(point, pose_cur)
    area = metric_bbox_area(cur.bbox, depth, pose_cur, intr)
    return Localization(track_id=cur.human_id, frame=cur.frame, t=cur.timestamp, position=point,
                        depth=depth, area=area, decision=reject_by_area(area, cfg.t_area))


def localize_track(observations: Sequence[Detection], poses: Sequence[Pose], intr: CameraIntrinsics,
                   cfg: GeometryConfig) -> Tuple[List[Localization], List[Detection], int]:
    """
    Localize one track, observations in frame order

    The first observation takes the decision of the first localized pair.
    Observations without a localization are dropped.

    Returns:
        Localizations, kept detections, and the number of skipped pairs
    """
    localizations: List[Localization] = []
    decisions: Dict[int, AreaDecision] = {}
    skipped = 0
    for k in range(1, len(observations)):
        prev, cur = observations[k - 1], observations[k]
        try:
            loc = localize_pair(prev, cur, poses, intr, cfg)
        except GeometryError as e:
            skipped += 1
            logger.warning(f"Track {cur.human_id}: frames {prev.frame}/{cur.frame} not triangulated: {e}")
            continue
        localizations.append(loc)
        decisions[k] = loc.decision
        if k == 1:
            decisions[0] = loc.decision
    kept = [d for k, d in enumerate(observations) if decisions.get(k) == AreaDecision.KEEP]
    return localizations, kept, skipped


class LocalizationAgent:
    """
    Localization Agent

    Works on tracked detections in optical pixel coordinates with one optical
    pose per frame.
    """

    def __init__(self, intrinsics: CameraIntrinsics, config: Optional[GeometryConfig] = None):
        self.intrinsics = intrinsics
        self.config = config or GeometryConfig()
        self.tracks_processed = 0
        logger.info(f"Localization Agent initialized (T_area={self.config.t_area} m^2)")

    def localize(self, tracked: Sequence[Detection], poses: Sequence[Pose]) -> LocalizationResult:
        by_track: Dict[int, List[Detection]] = {}
        for d in tracked:
            if d.human_id is None:
                raise ValueError(f"detection in frame {d.frame} has no track ID")
            if not 0 <= d.frame < len(poses):
                raise ValueError(f"no pose for frame {d.frame} ({len(poses)} poses)")
            by_track.setdefault(d.human_id, []).append(d)

        localizations: List[Localization] = []
        kept: List[Detection] = []
        skipped = 0
        for track_id in sorted(by_track):
            observations = sorted(by_track[track_id], key=lambda d: d.frame)
            locs, track_kept, track_skipped = localize_track(observations, poses, self.intrinsics, self.config)
            localizations.extend(locs)
            kept.extend(track_kept)
            skipped += track_skipped
            self.tracks_processed += 1

        rejected = sum(1 for loc in localizations if loc.decision == AreaDecision.REJECT)
        kept.sort(key=lambda d: (d.frame, d.human_id))
        localizations.sort(key=lambda loc: (loc.t, loc.track_id))
        logger.info(f"Localized {len(localizations)} observations of {len(by_track)} tracks "
                    f"({rejected} rejected by area, {skipped} degenerate pairs)")
        return LocalizationResult(localizations=localizations, kept=kept, rejected=rejected, skipped_pairs=skipped)
