"""
Re-identification API Endpoints
Purpose: Appearance histograms of uploaded detection patches
"""

import logging
from typing import List, Tuple

import cv2
import numpy as np
from fastapi import APIRouter, File, HTTPException, UploadFile
from pydantic import BaseModel

from agents.reid import center_prior_mask, histogram_of
from api.common import raise_http

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/reid", tags=["reid"])

ALLOWED_EXTENSIONS = ("png", "jpg", "jpeg")


class HistogramBin(BaseModel):
    hue_bin: int
    saturation_bin: int
    mass: float


class HistogramResponse(BaseModel):
    success: bool
    patch_size: Tuple[int, int]
    masked: bool
    foreground_fraction: float
    nonzero_bins: int
    top_bins: List[HistogramBin]


@router.post("/histogram", response_model=HistogramResponse)
async def patch_histogram(
    file: UploadFile = File(...),
    masked: bool = True,
    ellipse_scale: float = 0.8,
    top: int = 5
) -> HistogramResponse:
    """
    Hue-saturation histogram of a BGR patch, optionally restricted to the
    center-prior ellipse
    """
    try:
        if not file.filename:
            raise HTTPException(status_code=400, detail="No filename provided")
        extension = file.filename.lower().rsplit(".", 1)[-1]
        if extension not in ALLOWED_EXTENSIONS:
            raise HTTPException(status_code=400, detail="Invalid file type. Only PNG and JPEG patches are supported")

        content = await file.read()
        patch = cv2.imdecode(np.frombuffer(content, dtype=np.uint8), cv2.IMREAD_COLOR)
        if patch is None:
            raise HTTPException(status_code=400, detail="Could not decode image")

        mask = center_prior_mask(patch.shape[:2], ellipse_scale) if masked else None
        hist = histogram_of(patch, mask)
        flat = hist.bins.ravel()
        order = np.argsort(-flat, kind="stable")[:max(top, 0)]
        n_sat = hist.bins.shape[1]
        top_bins = [HistogramBin(hue_bin=int(i // n_sat), saturation_bin=int(i % n_sat), mass=float(flat[i]))
                    for i in order if flat[i] > 0]
        fraction = float((mask > 0).mean()) if mask is not None else 1.0
        return HistogramResponse(success=True, patch_size=(patch.shape[1], patch.shape[0]), masked=masked,
                                 foreground_fraction=fraction, nonzero_bins=int(np.count_nonzero(flat)),
                                 top_bins=top_bins)
    except Exception as e:
        raise_http(e, "Histogram")
