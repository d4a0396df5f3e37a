"""
Evaluation Agent
Purpose: Score detections against annotations the way pedestrian benchmarks do
Functions:
- Greedy per-frame matching at IOU 0.5 with ignore regions
- fppi / miss-rate curves and log-average miss rate
- Per-individual miss rate
- Ground-truth box-size histogram
- Miss rate per posture and occlusion
- SVG curve plots
"""

import logging
import threading
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from pydantic import BaseModel, Field

from agents.detector_support import BoundingBox, Detection, iou_matrix
from utils.errors import EmptyGroundTruth

logger = logging.getLogger(__name__)

LAMR_REFERENCE_FPPI = np.logspace(-2.0, 0.0, 9)
# zero fppi and zero miss rate land here on the log axes
PLOT_FLOOR = 1e-3

# rcParams are process-global
_RC_LOCK = threading.Lock()


class Posture(str, Enum):
    UPRIGHT = "upright"
    SITTING = "sitting"
    LYING = "lying"


class Annotation(BaseModel):
    frame: int = Field(..., ge=0)
    bbox: BoundingBox
    human_id: int
    posture: Posture = Posture.UPRIGHT
    occluded: bool = False


class DetectionStatus(str, Enum):
    TP = "tp"
    FP = "fp"
    IGNORED = "ignored"


class FrameMatch(BaseModel):
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt_matched: List[bool] = Field(default_factory=list)
    gt_ignored: List[bool] = Field(default_factory=list)
    det_status: List[DetectionStatus] = Field(default_factory=list)


class CurvePoint(BaseModel):
    threshold: float
    fppi: float
    missrate: float


class EvalCurve(BaseModel):
    points: List[CurvePoint]
    log_average_missrate: float


class SizeBin(BaseModel):
    lower: float
    upper: float
    tp: int = 0
    fn: int = 0


class EvaluationReport(BaseModel):
    curves: Dict[str, EvalCurve]
    summary: Dict[str, dict]

    def curve_table(self) -> pd.DataFrame:
        rows = [{"label": label, **p.model_dump()} for label, curve in self.curves.items() for p in curve.points]
        return pd.DataFrame(rows, columns=["label", "threshold", "fppi", "missrate"])


class EvaluationConfig(BaseModel):
    iou_threshold: float = Field(0.5, gt=0, le=1)
    exclude_occluded: bool = False
    size_bin_px2: float = Field(500.0, gt=0)
    operating_fppi: float = Field(1.0, gt=0, description="Operating point for per-ID and per-attribute summaries")


FrameData = Tuple[Sequence[Detection], Sequence[Annotation]]


def match_frame(dets: Sequence[Detection], gts: Sequence[Annotation], iou_thresh: float = 0.5,
                exclude_occluded: bool = False) -> FrameMatch:
    """
    Greedy one-to-one matching of one frame

    Detections are taken by descending score (lower index first on ties); each
    claims the unmatched ground truth of highest IOU >= iou_thresh. Detections
    landing only on excluded (occluded) ground truth are ignored.
    """
    ignored = [exclude_occluded and g.occluded for g in gts]
    matched = [False] * len(gts)
    status = [DetectionStatus.FP] * len(dets)
    if dets and gts:
        ious = iou_matrix([d.bbox for d in dets], [g.bbox for g in gts])
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        for di in order:
            best, best_iou = None, iou_thresh
            for gi in range(len(gts)):
                if ignored[gi] or matched[gi]:
                    continue
                if ious[di, gi] >= best_iou and (best is None or ious[di, gi] > ious[di, best]):
                    best, best_iou = gi, ious[di, gi]
            if best is not None:
                matched[best] = True
                status[di] = DetectionStatus.TP
            elif any(ignored[gi] and ious[di, gi] >= iou_thresh for gi in range(len(gts))):
                status[di] = DetectionStatus.IGNORED
    tp = sum(1 for s in status if s == DetectionStatus.TP)
    fp = sum(1 for s in status if s == DetectionStatus.FP)
    fn = sum(1 for m, ig in zip(matched, ignored) if not m and not ig)
    return FrameMatch(tp=tp, fp=fp, fn=fn, gt_matched=matched, gt_ignored=ignored, det_status=status)


def _above(dets: Sequence[Detection], threshold: float) -> List[Detection]:
    return [d for d in dets if d.score >= threshold]


def match_sequence(frames: Sequence[FrameData], threshold: float = 0.0, iou_thresh: float = 0.5,
                   exclude_occluded: bool = False) -> List[FrameMatch]:
    return [match_frame(_above(dets, threshold), gts, iou_thresh, exclude_occluded) for dets, gts in frames]


def _evaluated_gt(frames: Sequence[FrameData], exclude_occluded: bool) -> int:
    return sum(1 for _, gts in frames for g in gts if not (exclude_occluded and g.occluded))


def default_thresholds(frames: Sequence[FrameData]) -> List[float]:
    scores = {d.score for dets, _ in frames for d in dets}
    return sorted(scores | {0.0})


def log_average_missrate(points: Sequence[CurvePoint]) -> float:
    """
    Geometric mean of the miss rate at 9 fppi references in [0.01, 1]

    Each reference takes the lowest miss rate reachable at fppi <= reference (1.0
    when none is).
    """
    samples = []
    for ref in LAMR_REFERENCE_FPPI:
        reachable = [p.missrate for p in points if p.fppi <= ref]
        samples.append(min(reachable) if reachable else 1.0)
    return float(np.exp(np.mean(np.log(np.maximum(samples, 1e-10)))))


def fppi_missrate_curve(frames: Sequence[FrameData], thresholds: Optional[Sequence[float]] = None,
                        iou_thresh: float = 0.5, exclude_occluded: bool = False) -> EvalCurve:
    """
    fppi and miss rate at every score threshold (ascending)

    Raises:
        EmptyGroundTruth: no frames or no evaluated ground truth
    """
    if not frames:
        raise EmptyGroundTruth("no frames to evaluate")
    total_gt = _evaluated_gt(frames, exclude_occluded)
    if total_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes to evaluate")
    thresholds = sorted(thresholds) if thresholds is not None else default_thresholds(frames)
    # greedy matching visits detections by descending score, so the outcome of a
    # detection does not depend on lower-scored ones: one full match serves every threshold
    scores, statuses = [], []
    for (dets, _), result in zip(frames, match_sequence(frames, -np.inf, iou_thresh, exclude_occluded)):
        scores.extend(d.score for d in dets)
        statuses.extend(result.det_status)
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.array([s == DetectionStatus.TP for s in statuses], dtype=bool)
    is_fp = np.array([s == DetectionStatus.FP for s in statuses], dtype=bool)
    points = []
    for threshold in thresholds:
        kept = scores >= threshold
        fp = int(np.count_nonzero(is_fp & kept))
        fn = total_gt - int(np.count_nonzero(is_tp & kept))
        points.append(CurvePoint(threshold=float(threshold), fppi=fp / len(frames), missrate=fn / total_gt))
    return EvalCurve(points=points, log_average_missrate=log_average_missrate(points))


def per_id_missrate(frames: Sequence[FrameData], threshold: float = 0.0, iou_thresh: float = 0.5,
                    exclude_occluded: bool = False) -> float:
    """
    Fraction of human IDs never detected in the sequence

    An ID counts as detected if any of its boxes is a true positive.

    Raises:
        EmptyGroundTruth: no evaluated ground truth
    """
    seen: Dict[int, bool] = {}
    for (_, gts), result in zip(frames, match_sequence(frames, threshold, iou_thresh, exclude_occluded)):
        for g, hit, ignored in zip(gts, result.gt_matched, result.gt_ignored):
            if ignored:
                continue
            seen[g.human_id] = seen.get(g.human_id, False) or hit
    if not seen:
        raise EmptyGroundTruth("no annotated human IDs")
    return sum(1 for hit in seen.values() if not hit) / len(seen)


def size_histogram(frames: Sequence[FrameData], bin_width_px2: float, threshold: float = 0.0,
                   iou_thresh: float = 0.5, exclude_occluded: bool = False) -> List[SizeBin]:
    """Per pixel-area bucket TP / FN counts of the ground truth (non-empty buckets only)"""
    if bin_width_px2 <= 0:
        raise ValueError("bin width must be > 0")
    counts: Dict[int, SizeBin] = {}
    for (_, gts), result in zip(frames, match_sequence(frames, threshold, iou_thresh, exclude_occluded)):
        for g, hit, ignored in zip(gts, result.gt_matched, result.gt_ignored):
            if ignored:
                continue
            k = int(np.floor(g.bbox.area / bin_width_px2))
            bucket = counts.setdefault(k, SizeBin(lower=k * bin_width_px2, upper=(k + 1) * bin_width_px2))
            if hit:
                bucket.tp += 1
            else:
                bucket.fn += 1
    return [counts[k] for k in sorted(counts)]


def missrate_by_attribute(frames: Sequence[FrameData], threshold: float = 0.0, iou_thresh: float = 0.5,
                          exclude_occluded: bool = False) -> Dict[str, float]:
    """Box miss rate per posture value and per occlusion flag (only groups present)"""
    totals: Dict[str, List[int]] = {}
    for (_, gts), result in zip(frames, match_sequence(frames, threshold, iou_thresh, exclude_occluded)):
        for g, hit, ignored in zip(gts, result.gt_matched, result.gt_ignored):
            if ignored:
                continue
            for key in (f"posture={g.posture.value}", f"occluded={str(g.occluded).lower()}"):
                entry = totals.setdefault(key, [0, 0])
                entry[0] += 0 if hit else 1
                entry[1] += 1
    return {key: missed / total for key, (missed, total) in sorted(totals.items())}


def group_frames(detections: Sequence[Detection], annotations: Sequence[Annotation],
                 frames: Optional[Sequence[int]] = None) -> List[FrameData]:
    """Per-frame (detections, annotations); frames default to every frame either side mentions"""
    det_by: Dict[int, List[Detection]] = {}
    gt_by: Dict[int, List[Annotation]] = {}
    for d in detections:
        det_by.setdefault(d.frame, []).append(d)
    for a in annotations:
        gt_by.setdefault(a.frame, []).append(a)
    keys = sorted(set(frames) if frames is not None else set(det_by) | set(gt_by))
    return [(det_by.get(f, []), gt_by.get(f, [])) for f in keys]


def operating_threshold(curve: EvalCurve, max_fppi: float = 1.0) -> float:
    """Lowest threshold whose fppi is within max_fppi (highest threshold if none)"""
    for p in curve.points:
        if p.fppi <= max_fppi:
            return p.threshold
    return curve.points[-1].threshold


def curve_figure(curves: Dict[str, EvalCurve]) -> Figure:
    """Miss rate over fppi on log axes, one line per label"""
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    for label, curve in curves.items():
        pts = sorted(curve.points, key=lambda p: p.fppi)
        fppi = [max(p.fppi, PLOT_FLOOR) for p in pts]
        missrate = [max(p.missrate, PLOT_FLOOR) for p in pts]
        ax.plot(fppi, missrate, marker=".",
                label=f"{label} ({curve.log_average_missrate:.1%})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("false positives per image")
    ax.set_ylabel("miss rate")
    ax.grid(True, which="both", alpha=0.3)
    if curves:
        ax.legend(loc="lower left")
    return fig


def plot_curves(curves: Dict[str, EvalCurve], path: Path) -> Path:
    """Write curve_figure as SVG"""
    fig = curve_figure(curves)
    path = Path(path)
    with _RC_LOCK, matplotlib.rc_context({"svg.hashsalt": "rescuesight", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


class EvaluationAgent:
    """
    Evaluation Agent

    Evaluates one or more labelled detection sets against the same annotations.
    """

    def __init__(self, config: Optional[EvaluationConfig] = None):
        self.config = config or EvaluationConfig()
        self.evaluations_run = 0
        logger.info("Evaluation Agent initialized")

    def evaluate(self, annotations: Sequence[Annotation], detection_sets: Dict[str, Sequence[Detection]],
                 frames: Optional[Sequence[int]] = None) -> EvaluationReport:
        """
        Args:
            annotations: Ground truth of the sequence
            detection_sets: Detections per label (e.g. optical, or, and)
            frames: Every evaluated frame; defaults to frames either side mentions
        """
        cfg = self.config
        if frames is None:
            frames = sorted({a.frame for a in annotations} | {d.frame for ds in detection_sets.values() for d in ds})
        curves, summary = {}, {}
        for label, detections in detection_sets.items():
            data = group_frames(detections, annotations, frames)
            curve = fppi_missrate_curve(data, iou_thresh=cfg.iou_threshold, exclude_occluded=cfg.exclude_occluded)
            threshold = operating_threshold(curve, cfg.operating_fppi)
            kwargs = dict(threshold=threshold, iou_thresh=cfg.iou_threshold, exclude_occluded=cfg.exclude_occluded)
            point = next(p for p in curve.points if p.threshold == threshold)
            summary[label] = {
                "frames": len(data),
                "log_average_missrate": curve.log_average_missrate,
                "operating_point": point.model_dump(),
                "per_id_missrate": per_id_missrate(data, **kwargs),
                "missrate_by_attribute": missrate_by_attribute(data, **kwargs),
                "size_histogram": [b.model_dump() for b in size_histogram(data, cfg.size_bin_px2, **kwargs)],
            }
            curves[label] = curve
            logger.info(f"Evaluated '{label}': LAMR {curve.log_average_missrate:.3f}, "
                        f"per-ID miss rate {summary[label]['per_id_missrate']:.3f}")
        self.evaluations_run += 1
        return EvaluationReport(curves=curves, summary=summary)


# Global instance for easy access
_evaluation_agent = None


def get_evaluation_agent() -> EvaluationAgent:
    global _evaluation_agent
    if _evaluation_agent is None:
        _evaluation_agent = EvaluationAgent()
    return _evaluation_agent
