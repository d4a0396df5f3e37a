"""
Fusion API Endpoints
Purpose: Fuse one frame of optical and thermal detections
"""

import logging
from typing import List, Optional

from fastapi import APIRouter
from pydantic import BaseModel, Field

from agents.fusion import FusionAgent, FusionConfig, MergeMode
from api.common import raise_http, to_detections, to_records
from utils.calibration import CalibrationFile, default_rig
from utils.records import DetectionRecord

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/fusion", tags=["fusion"])


class FusionFrameRequest(BaseModel):
    optical: List[DetectionRecord] = Field(default_factory=list)
    thermal: List[DetectionRecord] = Field(default_factory=list)
    calibration: Optional[CalibrationFile] = Field(None, description="Default rig when omitted")
    mode: MergeMode = MergeMode.OR
    altitude: Optional[float] = Field(None, gt=0, description="UAV altitude used as mapping depth")
    match_iou: float = Field(0.5, gt=0, le=1)


class FusionFrameResponse(BaseModel):
    success: bool
    mode: MergeMode
    pairs: int
    fused: List[DetectionRecord]


@router.post("/frame", response_model=FusionFrameResponse)
async def fuse_frame(request: FusionFrameRequest) -> FusionFrameResponse:
    try:
        rig = request.calibration.to_rig() if request.calibration else default_rig()
        config = FusionConfig(mode=request.mode, match_iou=request.match_iou, scene_depth=request.altitude)
        agent = FusionAgent(rig, config)
        fused = agent.fuse_frame(to_detections(request.optical), to_detections(request.thermal))
        logger.info(f"Fused frame: {len(request.optical)} optical + {len(request.thermal)} thermal "
                    f"-> {len(fused)} ({agent.pairs_found} pairs)")
        return FusionFrameResponse(success=True, mode=request.mode, pairs=agent.pairs_found,
                                   fused=to_records(fused))
    except Exception as e:
        raise_http(e, "Frame fusion")
