"""
Anchor Analysis API Endpoints
Purpose: Anchor assignment coverage and k-means anchor shapes for ground-truth boxes
"""

import logging
from typing import Any, Dict, List, Optional, Tuple

from fastapi import APIRouter, Depends
from pydantic import BaseModel, Field, field_validator

from agents.detector_support import (AnchorAnalysisAgent, BoundingBox, get_anchor_analysis_agent,
                                     kmeans_anchors)
from api.common import raise_http

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/anchors", tags=["anchors"])


class AnchorAnalysisRequest(BaseModel):
    """Ground-truth boxes as [x_min, y_min, x_max, y_max]"""
    boxes: List[List[float]] = Field(..., min_length=1)
    image_size: Tuple[int, int] = Field(..., description="(width, height) in pixels")
    upscale: List[float] = Field(default_factory=lambda: [1.0])
    k: Optional[int] = Field(None, ge=1, description="Also cluster k anchor shapes")
    seed: int = Field(0, ge=0)

    @field_validator("upscale")
    def validate_upscale(cls, v):
        if not v or any(f <= 0 for f in v):
            raise ValueError("upscale factors must be > 0")
        return v


class AnchorAnalysisResponse(BaseModel):
    success: bool
    coverage: List[Dict[str, Any]]
    kmeans_anchors: Optional[List[Tuple[float, float]]] = None


@router.post("/analyze", response_model=AnchorAnalysisResponse)
async def analyze_anchors(
    request: AnchorAnalysisRequest,
    agent: AnchorAnalysisAgent = Depends(get_anchor_analysis_agent)
) -> AnchorAnalysisResponse:
    """Coverage per scale set, assignment rule and upscale factor"""
    try:
        gt = [BoundingBox.from_list(b) for b in request.boxes]
        table = agent.analyze(gt, request.image_size, request.upscale)
        anchors = kmeans_anchors(gt, request.k, request.seed) if request.k else None
        return AnchorAnalysisResponse(success=True, coverage=table.to_dict(orient="records"),
                                      kmeans_anchors=anchors)
    except Exception as e:
        raise_http(e, "Anchor analysis")
