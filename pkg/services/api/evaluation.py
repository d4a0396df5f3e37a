"""
Evaluation API Endpoints
Purpose: fppi / miss-rate evaluation of labelled detection sets
"""

import logging
from typing import Any, Dict, List, Optional

from fastapi import APIRouter
from pydantic import BaseModel, Field

from agents.evaluation import EvalCurve, EvaluationAgent, EvaluationConfig
from api.common import raise_http, to_detections
from utils.records import AnnotationRecord, DetectionRecord

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/evaluation", tags=["evaluation"])


class EvaluationRequest(BaseModel):
    annotations: List[AnnotationRecord]
    detections: Dict[str, List[DetectionRecord]] = Field(..., description="Detections per label")
    frames: Optional[List[int]] = None
    config: EvaluationConfig = Field(default_factory=EvaluationConfig)


class EvaluationResponse(BaseModel):
    success: bool
    curves: Dict[str, EvalCurve]
    summary: Dict[str, Dict[str, Any]]


@router.post("/curve", response_model=EvaluationResponse)
async def evaluation_curve(request: EvaluationRequest) -> EvaluationResponse:
    try:
        annotations = [a.to_annotation() for a in request.annotations]
        sets = {label: to_detections(records) for label, records in request.detections.items()}
        report = EvaluationAgent(request.config).evaluate(annotations, sets, request.frames)
        return EvaluationResponse(success=True, curves=report.curves, summary=report.summary)
    except Exception as e:
        raise_http(e, "Evaluation")
