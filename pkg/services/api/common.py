"""
Shared API helpers
Purpose: Map pipeline errors to HTTP errors and convert request records
"""

import logging
from typing import List, NoReturn, Sequence

from fastapi import HTTPException
from pydantic import ValidationError

from agents.detector_support import Detection
from utils.errors import InputError, PipelineError
from utils.records import DetectionRecord

logger = logging.getLogger(__name__)


def raise_http(e: Exception, action: str) -> NoReturn:
    """
    Re-raise as HTTPException: 422 for invalid input, 400 for other pipeline
    errors, 500 otherwise
    """
    if isinstance(e, HTTPException):
        raise e
    if isinstance(e, (InputError, ValidationError)):
        logger.warning(f"{action}: invalid input: {e}")
        raise HTTPException(status_code=422, detail=str(e)) from e
    if isinstance(e, PipelineError):
        logger.warning(f"{action} failed: {e}")
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}") from e
    logger.error(f"{action} error: {str(e)}")
    raise HTTPException(status_code=500, detail=str(e)) from e


def to_detections(records: Sequence[DetectionRecord]) -> List[Detection]:
    return [r.to_detection() for r in records]


def to_records(detections: Sequence[Detection]) -> List[DetectionRecord]:
    return [DetectionRecord.from_detection(d) for d in detections]
