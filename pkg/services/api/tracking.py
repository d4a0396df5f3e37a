"""
Tracking API Endpoints
Purpose: Assign track IDs to the detections of a sequence
"""

import logging
from typing import List, Optional

from fastapi import APIRouter
from pydantic import BaseModel, Field

from agents.tracking import TrackerConfig, TrackingAgent
from api.common import raise_http, to_detections, to_records
from utils.records import DetectionRecord

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/tracking", tags=["tracking"])


class TrackingRequest(BaseModel):
    detections: List[DetectionRecord]
    frames: Optional[List[int]] = Field(None, description="Every frame of the sequence, including empty ones")
    config: TrackerConfig = Field(default_factory=TrackerConfig)


class TrackingResponse(BaseModel):
    success: bool
    n_tracks: int
    tracks: List[DetectionRecord]


@router.post("/sequence", response_model=TrackingResponse)
async def track_sequence(request: TrackingRequest) -> TrackingResponse:
    try:
        tracked = TrackingAgent(request.config).track_sequence(to_detections(request.detections), request.frames)
        return TrackingResponse(success=True, n_tracks=len({d.human_id for d in tracked}),
                                tracks=to_records(tracked))
    except Exception as e:
        raise_http(e, "Tracking")
