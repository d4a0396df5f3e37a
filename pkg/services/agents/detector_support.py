"""
Detector Support Agent
Purpose: Bounding-box algebra and anchor analysis for small-human detection
Functions:
- Box and detection types shared by every stage
- Vectorised IOU
- RetinaNet-style anchor generation with custom scale multipliers
- RetinaNet dual-threshold and YOLO best-match assignment rules
- k-means anchor clustering with a 1 - IOU distance
- Focal loss (and its derivative) as a standalone function
- Coverage reports comparing standard and custom anchor scales
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import DomainError, EmptyConfig, TooFewSamples
from utils.rng import make_rng

logger = logging.getLogger(__name__)

STANDARD_SCALES = (1.0, 2.0 ** (1.0 / 3.0), 2.0 ** (2.0 / 3.0))
CUSTOM_SCALES = (2.0 ** -2, 2.0 ** -1, 1.0)

RETINANET_POSITIVE_IOU = 0.5
RETINANET_NEGATIVE_IOU = 0.4
YOLO_IGNORE_IOU = 0.5


class Spectrum(str, Enum):
    OPTICAL = "optical"
    THERMAL = "thermal"


class BoundingBox(BaseModel):
    """Axis-aligned pixel rectangle, continuous coordinates, half-open extent"""
    model_config = ConfigDict(frozen=True)

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @model_validator(mode="after")
    def check_order(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"unordered box {self.as_list()}")
        return self

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BoundingBox":
        return cls(x_min=cx - width / 2.0, y_min=cy - height / 2.0,
                   x_max=cx + width / 2.0, y_max=cy + height / 2.0)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        x_min, y_min, x_max, y_max = (float(v) for v in values)
        return cls(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def corners(self) -> List[Tuple[float, float]]:
        """Top-left, top-right, bottom-right, bottom-left (clockwise in image coordinates)"""
        return [(self.x_min, self.y_min), (self.x_max, self.y_min),
                (self.x_max, self.y_max), (self.x_min, self.y_max)]

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(x_min=self.x_min + dx, y_min=self.y_min + dy,
                           x_max=self.x_max + dx, y_max=self.y_max + dy)

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(x_min=self.x_min * factor, y_min=self.y_min * factor,
                           x_max=self.x_max * factor, y_max=self.y_max * factor)

    def as_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


class Detection(BaseModel):
    """One detector output in one spectrum and frame"""
    model_config = ConfigDict(frozen=True)

    bbox: BoundingBox
    score: float = Field(..., ge=0.0, le=1.0)
    spectrum: Spectrum = Spectrum.OPTICAL
    frame: int = Field(..., ge=0)
    timestamp: float = 0.0
    human_id: Optional[int] = None
    patch: Optional[str] = None


class AnchorConfig(BaseModel):
    """Anchor pyramid description; one base size per level"""
    base_sizes: List[float] = Field(default_factory=lambda: [32.0, 64.0, 128.0, 256.0, 512.0])
    aspect_ratios: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    scale_multipliers: List[float] = Field(default_factory=lambda: list(CUSTOM_SCALES))

    @field_validator("base_sizes", "aspect_ratios", "scale_multipliers")
    def validate_positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("anchor configuration entries must be > 0")
        return v

    @classmethod
    def standard(cls) -> "AnchorConfig":
        return cls(scale_multipliers=list(STANDARD_SCALES))

    @classmethod
    def custom(cls) -> "AnchorConfig":
        return cls(scale_multipliers=list(CUSTOM_SCALES))


class GtStatus(str, Enum):
    ASSIGNED = "assigned"
    IGNORED = "ignored"
    BACKGROUND = "background"


class AssignmentReport(BaseModel):
    total_gt: int = 0
    assigned: int = 0
    ignored: int = 0
    background_only: int = 0
    coverage: float = 0.0
    ignored_anchors: int = 0
    statuses: List[GtStatus] = Field(default_factory=list)
    matched_anchor: List[Optional[int]] = Field(default_factory=list)

    @classmethod
    def from_statuses(cls, statuses: List[GtStatus], matched: List[Optional[int]],
                      ignored_anchors: int = 0) -> "AssignmentReport":
        total = len(statuses)
        assigned = sum(1 for s in statuses if s == GtStatus.ASSIGNED)
        return cls(
            total_gt=total,
            assigned=assigned,
            ignored=sum(1 for s in statuses if s == GtStatus.IGNORED),
            background_only=sum(1 for s in statuses if s == GtStatus.BACKGROUND),
            coverage=assigned / total if total else 0.0,
            ignored_anchors=ignored_anchors,
            statuses=statuses,
            matched_anchor=matched,
        )


BoxesLike = Union[Sequence[BoundingBox], np.ndarray]


def boxes_to_array(boxes: BoxesLike) -> np.ndarray:
    """Convert boxes to an (N, 4) float64 array [x_min, y_min, x_max, y_max]"""
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64, copy=False)
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_list() for b in boxes], dtype=np.float64)


def iou_matrix(a: BoxesLike, b: BoxesLike) -> np.ndarray:
    """
    Pairwise IOU between two box sets

    Returns:
        (len(a), len(b)) array; 0 where the union is empty
    """
    a = boxes_to_array(a)
    b = boxes_to_array(b)
    ix_min = np.maximum(a[:, None, 0], b[None, :, 0])
    iy_min = np.maximum(a[:, None, 1], b[None, :, 1])
    ix_max = np.minimum(a[:, None, 2], b[None, :, 2])
    iy_max = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix_max - ix_min, 0.0, None) * np.clip(iy_max - iy_min, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes (0 when disjoint or both degenerate)"""
    return float(iou_matrix([a], [b])[0, 0])


def generate_anchor_array(config: AnchorConfig, image_size: Tuple[int, int],
                          strides: Sequence[int]) -> np.ndarray:
    """
    Anchors as an (N, 4) array, ordered level-major, row-major, ratio, scale

    Args:
        config: Anchor configuration (one base size per stride)
        image_size: (width, height) in pixels
        strides: Feature-map stride of every pyramid level
    """
    if not config.base_sizes or not config.aspect_ratios or not config.scale_multipliers or not strides:
        raise EmptyConfig("anchor configuration needs base sizes, ratios, scales and strides")
    if len(strides) != len(config.base_sizes):
        raise EmptyConfig(f"{len(strides)} strides for {len(config.base_sizes)} base sizes")

    width, height = image_size
    ratios = np.asarray(config.aspect_ratios, dtype=np.float64)
    scales = np.asarray(config.scale_multipliers, dtype=np.float64)
    levels = []
    for base, stride in zip(config.base_sizes, strides):
        sides = base * scales
        # h / w = ratio, area = side^2
        ws = (sides[None, :] / np.sqrt(ratios)[:, None]).ravel()
        hs = (sides[None, :] * np.sqrt(ratios)[:, None]).ravel()
        cols, rows = width // stride, height // stride
        cx = (np.arange(cols) + 0.5) * stride
        cy = (np.arange(rows) + 0.5) * stride
        gy, gx = np.meshgrid(cy, cx, indexing="ij")
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        c = centers[:, None, :]
        level = np.concatenate([c[..., 0:1] - ws[None, :, None] / 2.0,
                                c[..., 1:2] - hs[None, :, None] / 2.0,
                                c[..., 0:1] + ws[None, :, None] / 2.0,
                                c[..., 1:2] + hs[None, :, None] / 2.0], axis=2)
        levels.append(level.reshape(-1, 4))
    return np.concatenate(levels, axis=0)


def generate_anchors(config: AnchorConfig, image_size: Tuple[int, int],
                     strides: Sequence[int]) -> List[BoundingBox]:
    """List-of-boxes form of generate_anchor_array"""
    return [BoundingBox.from_list(row) for row in generate_anchor_array(config, image_size, strides)]


def assign_retinanet(gt: BoxesLike, anchors: BoxesLike,
                     positive_iou: float = RETINANET_POSITIVE_IOU,
                     negative_iou: float = RETINANET_NEGATIVE_IOU) -> AssignmentReport:
    """
    RetinaNet dual-threshold rule

    Every anchor goes to its highest-IOU ground truth (lowest index on ties). A
    ground truth is assigned when one of its anchors reaches positive_iou, ignored
    when its best IOU lies in [negative_iou, positive_iou) or its only positive
    anchors went to another box, and background otherwise.
    """
    gt_arr = boxes_to_array(gt)
    anchor_arr = boxes_to_array(anchors)
    if len(anchor_arr) == 0:
        raise EmptyConfig("anchor list is empty")
    if len(gt_arr) == 0:
        return AssignmentReport.from_statuses([], [])

    ious = iou_matrix(anchor_arr, gt_arr)
    owner = ious.argmax(axis=1)  # argmax returns the first maximum
    owner_iou = ious[np.arange(len(anchor_arr)), owner]
    positive = owner_iou >= positive_iou

    statuses: List[GtStatus] = []
    matched: List[Optional[int]] = []
    best_iou = ious.max(axis=0)
    for g in range(len(gt_arr)):
        mine = np.flatnonzero(positive & (owner == g))
        if len(mine):
            statuses.append(GtStatus.ASSIGNED)
            matched.append(int(mine[np.argmax(owner_iou[mine])]))
        elif best_iou[g] >= negative_iou:
            statuses.append(GtStatus.IGNORED)
            matched.append(None)
        else:
            statuses.append(GtStatus.BACKGROUND)
            matched.append(None)
    return AssignmentReport.from_statuses(statuses, matched)


def assign_yolo(gt: BoxesLike, anchors: BoxesLike,
                ignore_iou: float = YOLO_IGNORE_IOU) -> AssignmentReport:
    """
    YOLO best-match rule

    Each ground truth takes its argmax-IOU anchor (lowest index on ties) if the IOU
    is positive. Non-best anchors above ignore_iou are counted as ignored anchors.
    """
    gt_arr = boxes_to_array(gt)
    anchor_arr = boxes_to_array(anchors)
    if len(anchor_arr) == 0:
        raise EmptyConfig("anchor list is empty")
    if len(gt_arr) == 0:
        return AssignmentReport.from_statuses([], [])

    ious = iou_matrix(gt_arr, anchor_arr)
    best = ious.argmax(axis=1)
    statuses: List[GtStatus] = []
    matched: List[Optional[int]] = []
    for g, a in enumerate(best):
        if ious[g, a] > 0.0:
            statuses.append(GtStatus.ASSIGNED)
            matched.append(int(a))
        else:
            statuses.append(GtStatus.BACKGROUND)
            matched.append(None)

    best_anchors = {m for m in matched if m is not None}
    over = np.flatnonzero((ious > ignore_iou).any(axis=0))
    ignored_anchors = sum(1 for a in over if int(a) not in best_anchors)
    return AssignmentReport.from_statuses(statuses, matched, ignored_anchors=ignored_anchors)


def shape_iou(wh: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IOU of origin-aligned (w, h) boxes, shape (len(wh), len(centroids))"""
    inter = (np.minimum(wh[:, None, 0], centroids[None, :, 0])
             * np.minimum(wh[:, None, 1], centroids[None, :, 1]))
    union = (wh[:, 0] * wh[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def kmeans_objective(wh: np.ndarray, centroids: np.ndarray) -> float:
    """Mean 1 - IOU of every box to its nearest centroid"""
    return float(np.mean(1.0 - shape_iou(wh, centroids).max(axis=1)))


class KMeansResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    anchors: List[Tuple[float, float]]
    objective_history: List[float]
    iterations: int


def kmeans_anchors_detailed(gt: BoxesLike, k: int, seed: int, max_iter: int = 300) -> KMeansResult:
    """
    k-means dimension clustering with distance 1 - IOU and median updates

    An update that would raise the objective is rejected and clustering stops, so
    the objective history is non-increasing.
    """
    boxes = boxes_to_array(gt)
    if k < 1 or len(boxes) < k:
        raise TooFewSamples(f"need at least k={k} boxes, got {len(boxes)}")
    wh = np.stack([boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]], axis=1)

    rng = make_rng(seed)
    centroids = wh[rng.choice(len(wh), size=k, replace=False)].copy()
    history = [kmeans_objective(wh, centroids)]
    labels = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_labels = shape_iou(wh, centroids).argmax(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        updated = centroids.copy()
        for c in range(k):
            members = wh[labels == c]
            if len(members):
                updated[c] = np.median(members, axis=0)
        objective = kmeans_objective(wh, updated)
        if objective > history[-1]:
            logger.debug(f"k-means update raised objective to {objective:.6f}, stopping")
            break
        centroids = updated
        history.append(objective)

    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    anchors = [(float(w), float(h)) for w, h in centroids[order]]
    return KMeansResult(anchors=anchors, objective_history=history, iterations=iterations)


def kmeans_anchors(gt: BoxesLike, k: int, seed: int) -> List[Tuple[float, float]]:
    """k anchor (w, h) pairs sorted by area ascending"""
    return kmeans_anchors_detailed(gt, k, seed).anchors


def _check_focal_domain(p: np.ndarray) -> None:
    if np.any(p <= 0.0) or np.any(p > 1.0) or np.any(~np.isfinite(p)):
        raise DomainError("focal loss needs 0 < p_t <= 1")


def focal_loss(p_t, gamma: float = 2.0, alpha: Optional[float] = None):
    """
    Focal loss -alpha * (1 - p_t)^gamma * ln(p_t)

    Args:
        p_t: Probability of the true class, scalar or array in (0, 1]
        gamma: Focusing parameter >= 0 (0 gives cross-entropy)
        alpha: Optional class weight in [0, 1]
    """
    if gamma < 0:
        raise DomainError(f"gamma must be >= 0, got {gamma}")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must be in [0, 1], got {alpha}")
    p = np.asarray(p_t, dtype=np.float64)
    _check_focal_domain(p)
    weight = 1.0 if alpha is None else alpha
    loss = -weight * np.power(1.0 - p, gamma) * np.log(p)
    return float(loss) if loss.ndim == 0 else loss


def focal_loss_grad(p_t, gamma: float = 2.0, alpha: Optional[float] = None):
    """Analytic d(loss)/d(p_t) for 0 < p_t < 1"""
    p = np.asarray(p_t, dtype=np.float64)
    _check_focal_domain(p)
    weight = 1.0 if alpha is None else alpha
    one_minus = 1.0 - p
    grad = weight * (gamma * np.power(one_minus, gamma - 1.0) * np.log(p) - np.power(one_minus, gamma) / p)
    return float(grad) if grad.ndim == 0 else grad


class AnchorAnalysisAgent:
    """
    Anchor Analysis Agent

    Compares how many ground-truth boxes contribute to training under standard
    and custom anchor scales, for both assignment rules and optional image
    upscaling.
    """

    def __init__(self, base_config: Optional[AnchorConfig] = None,
                 strides: Sequence[int] = (8, 16, 32, 64, 128)):
        self.base_config = base_config or AnchorConfig()
        self.strides = list(strides)
        self.analyses_run = 0
        logger.info("Anchor Analysis Agent initialized")

    def _config_with(self, scales: Sequence[float]) -> AnchorConfig:
        return self.base_config.model_copy(update={"scale_multipliers": list(scales)})

    def analyze(self, gt: BoxesLike, image_size: Tuple[int, int],
                upscale: Sequence[float] = (1.0,),
                scale_sets: Optional[Dict[str, Sequence[float]]] = None) -> pd.DataFrame:
        """
        Coverage table, one row per (scale set, rule, upscale factor)

        Args:
            gt: Ground-truth boxes in original image pixels
            image_size: (width, height) of the original images
            upscale: Image resize factors applied to boxes and image before assignment
            scale_sets: Named scale multiplier sets (default standard and custom)
        """
        scale_sets = scale_sets or {"standard": STANDARD_SCALES, "custom": CUSTOM_SCALES}
        gt_arr = boxes_to_array(gt)
        rows = []
        for factor in upscale:
            size = (int(round(image_size[0] * factor)), int(round(image_size[1] * factor)))
            scaled = gt_arr * factor
            for name, scales in scale_sets.items():
                anchors = generate_anchor_array(self._config_with(scales), size, self.strides)
                for rule, assign in (("retinanet", assign_retinanet), ("yolo", assign_yolo)):
                    report = assign(scaled, anchors)
                    rows.append({
                        "scales": name,
                        "rule": rule,
                        "upscale": float(factor),
                        "total_gt": report.total_gt,
                        "assigned": report.assigned,
                        "ignored": report.ignored,
                        "background_only": report.background_only,
                        "coverage": report.coverage,
                    })
        self.analyses_run += 1
        logger.info(f"Anchor analysis over {len(gt_arr)} boxes, {len(rows)} configurations")
        return pd.DataFrame(rows)


# Global instance for easy access
_anchor_analysis_agent = None


def get_anchor_analysis_agent() -> AnchorAnalysisAgent:
    """
    Get or create the global AnchorAnalysisAgent instance

    Returns:
        AnchorAnalysisAgent instance
    """
    global _anchor_analysis_agent
    if _anchor_analysis_agent is None:
        _anchor_analysis_agent = AnchorAnalysisAgent()
    return _anchor_analysis_agent
