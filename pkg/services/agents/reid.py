"""
Re-identification Agent
Purpose: Decide whether a localized detection is a known human or a new one
Functions:
- Masked hue-saturation histograms of detection patches (OpenCV)
- Center-prior elliptical foreground mask
- Correlation / Chi-square / Intersection / Bhattacharyya comparison
- Sigmoid appearance prior and Gaussian spatial likelihood
- Bayesian association against the registry of known humans
- Similarity tables with and without background masking
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit
from scipy.stats import multivariate_normal

from agents.particle_filter import ParticleFilter, PfConfig, pf_estimate
from utils.errors import EmptyForeground, LayoutMismatch

logger = logging.getLogger(__name__)

HUE_BINS = 30
SATURATION_BINS = 32
MAX_REFERENCE_HISTOGRAMS = 5

PatchMask = np.ndarray


class HistogramMetric(str, Enum):
    CORRELATION = "correlation"
    CHI_SQUARE = "chi-square"
    INTERSECTION = "intersection"
    BHATTACHARYYA = "bhattacharyya"


_CV_METHODS = {
    HistogramMetric.CORRELATION: cv2.HISTCMP_CORREL,
    HistogramMetric.CHI_SQUARE: cv2.HISTCMP_CHISQR,
    HistogramMetric.INTERSECTION: cv2.HISTCMP_INTERSECT,
    HistogramMetric.BHATTACHARYYA: cv2.HISTCMP_BHATTACHARYYA,
}


class ColorHistogram(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bins: np.ndarray
    total: float
    normalized: bool = True

    @classmethod
    def from_counts(cls, counts: np.ndarray, normalize: bool = True) -> "ColorHistogram":
        counts = np.asarray(counts, dtype=np.float64)
        if normalize:
            counts = counts / counts.sum()
        return cls(bins=counts, total=float(counts.sum()), normalized=normalize)


class ReidConfig(BaseModel):
    t_redetect: float = Field(1e-4, gt=0, lt=1)
    sigmoid_scale: float = Field(0.25, gt=0, description="a")
    sigmoid_center: Optional[float] = Field(None, description="b; None means half the self-intersection mass")
    metric: HistogramMetric = HistogramMetric.INTERSECTION
    hue_bins: int = Field(HUE_BINS, ge=1)
    saturation_bins: int = Field(SATURATION_BINS, ge=1)
    ellipse_scale: float = Field(0.8, ge=0)
    use_mask: bool = True
    max_references: int = Field(MAX_REFERENCE_HISTOGRAMS, ge=1)

    @field_validator("metric")
    def validate_metric(cls, v):
        if v not in (HistogramMetric.INTERSECTION, HistogramMetric.CORRELATION):
            raise ValueError("appearance prior needs a similarity metric (intersection or correlation)")
        return v


class HumanRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    human_id: int
    pf: ParticleFilter
    references: List[ColorHistogram] = Field(default_factory=list)
    last_frame: Optional[int] = None
    last_time: Optional[float] = None

    def add_reference(self, hist: ColorHistogram, limit: int = MAX_REFERENCE_HISTOGRAMS) -> None:
        self.references.append(hist)
        del self.references[:-limit]


class Observation(BaseModel):
    """A localized detection offered to re-identification"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    position: Tuple[float, float]
    frame: int = 0
    t: float = 0.0
    histogram: Optional[ColorHistogram] = None


class AssociationResult(BaseModel):
    human_id: int
    is_new: bool
    scores: Dict[int, float] = Field(default_factory=dict)
    posterior: Dict[int, float] = Field(default_factory=dict)


def center_prior_mask(dims: Tuple[int, int], ellipse_scale: float = 0.8) -> PatchMask:
    """
    Centered elliptical foreground mask (uint8, 255 = foreground)

    Args:
        dims: (height, width) of the patch
        ellipse_scale: Semi-axes as a fraction of (width/2, height/2)
    """
    height, width = dims
    if height < 1 or width < 1:
        raise ValueError(f"patch dims must be >= 1x1, got {dims}")
    if ellipse_scale <= 0:
        return np.zeros((height, width), dtype=np.uint8)
    ys, xs = np.mgrid[0:height, 0:width]
    nx = (xs + 0.5 - width / 2.0) / (ellipse_scale * width / 2.0)
    ny = (ys + 0.5 - height / 2.0) / (ellipse_scale * height / 2.0)
    return np.where(nx ** 2 + ny ** 2 <= 1.0, 255, 0).astype(np.uint8)


def histogram_of(patch: np.ndarray, mask: Optional[PatchMask] = None,
                 bins: Tuple[int, int] = (HUE_BINS, SATURATION_BINS)) -> ColorHistogram:
    """
    Normalized hue-saturation histogram of a BGR patch over its foreground

    Raises:
        EmptyForeground: empty patch or a mask without foreground pixels
    """
    patch = np.asarray(patch)
    if patch.size == 0 or patch.ndim != 3 or patch.shape[0] == 0 or patch.shape[1] == 0:
        raise EmptyForeground("patch is empty")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.uint8)
        if mask.shape != patch.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match patch {patch.shape[:2]}")
        if not mask.any():
            raise EmptyForeground("mask has no foreground pixels")
    hsv = cv2.cvtColor(patch.astype(np.uint8), cv2.COLOR_BGR2HSV)
    counts = cv2.calcHist([hsv], [0, 1], mask, list(bins), [0, 180, 0, 256])
    return ColorHistogram.from_counts(counts)


def compare(a: ColorHistogram, b: ColorHistogram, metric: HistogramMetric) -> float:
    """
    Histogram similarity with OpenCV's definitions

    Raises:
        LayoutMismatch: different bin layouts
    """
    if a.bins.shape != b.bins.shape:
        raise LayoutMismatch(f"{a.bins.shape} vs {b.bins.shape}")
    return float(cv2.compareHist(a.bins.astype(np.float32), b.bins.astype(np.float32),
                                 _CV_METHODS[HistogramMetric(metric)]))


def appearance_prior(sim: float, cfg: ReidConfig, self_mass: float = 1.0) -> float:
    """Sigmoid 1 / (1 + exp(-(sim - b) / a))"""
    center = cfg.sigmoid_center if cfg.sigmoid_center is not None else 0.5 * self_mass
    return float(expit((sim - center) / cfg.sigmoid_scale))


def spatial_likelihood(z: Sequence[float], h: HumanRecord) -> float:
    """Gaussian density of z under the human's filter estimate, covariance inflated by R"""
    estimate = pf_estimate(h.pf.state)
    sigma_z = h.pf.config.sigma_z
    cov = estimate.covariance + sigma_z ** 2 * np.eye(2)
    return float(multivariate_normal(mean=estimate.mean, cov=cov).pdf(np.asarray(z, dtype=np.float64)))


def best_reference_similarity(hist: ColorHistogram, h: HumanRecord,
                              metric: HistogramMetric = HistogramMetric.INTERSECTION) -> Optional[float]:
    if not h.references:
        return None
    return max(compare(hist, ref, metric) for ref in h.references)


def posterior(scores: Dict[int, float]) -> Dict[int, float]:
    """Normalize p(z|h)p(h) over the candidates"""
    total = sum(scores.values())
    if total <= 0:
        return {k: 0.0 for k in scores}
    return {k: v / total for k, v in scores.items()}


def associate(z: Observation, humans: List[HumanRecord], cfg: ReidConfig, pf_config: PfConfig,
              seed: int, record_history: bool = False) -> AssociationResult:
    """
    Assign an observation to a known human or create a new one

    Every record scores p(z|h) * p(h). If all scores stay below t_redetect a new
    record (ID max + 1, fresh filter) is appended to humans; otherwise the
    argmax record (lowest ID on ties) takes the observation into its filter.
    Without a histogram on either side the appearance prior is 0.5.
    """
    scores: Dict[int, float] = {}
    for h in sorted(humans, key=lambda r: r.human_id):
        sim = best_reference_similarity(z.histogram, h, cfg.metric) if z.histogram is not None else None
        prior = 0.5 if sim is None else appearance_prior(sim, cfg, self_mass=z.histogram.total)
        scores[h.human_id] = spatial_likelihood(z.position, h) * prior

    if not scores or all(s < cfg.t_redetect for s in scores.values()):
        new_id = max((h.human_id for h in humans), default=0) + 1
        record = HumanRecord(human_id=new_id,
                             pf=ParticleFilter(pf_config, seed=seed, stream=new_id, record_history=record_history))
        humans.append(record)
        chosen, is_new = record, True
    else:
        best_id = max(scores, key=lambda k: (scores[k], -k))
        chosen, is_new = next(h for h in humans if h.human_id == best_id), False

    chosen.pf.update(z.position, z.t)
    if z.histogram is not None:
        chosen.add_reference(z.histogram, cfg.max_references)
    chosen.last_frame, chosen.last_time = z.frame, z.t
    return AssociationResult(human_id=chosen.human_id, is_new=is_new, scores=scores, posterior=posterior(scores))


def similarity_table(patches: Dict[int, np.ndarray], cfg: Optional[ReidConfig] = None,
                     masked: bool = True, query_id: Optional[int] = None) -> pd.DataFrame:
    """
    Metric-by-human similarity of a query patch against every human's patch

    Rows are the four metrics, columns the reference human IDs; the query is the
    lowest ID unless given.
    """
    cfg = cfg or ReidConfig()
    if not patches:
        return pd.DataFrame(index=[m.value for m in HistogramMetric])
    hists = {}
    for human_id in sorted(patches):
        patch = patches[human_id]
        mask = center_prior_mask(patch.shape[:2], cfg.ellipse_scale) if masked else None
        hists[human_id] = histogram_of(patch, mask, (cfg.hue_bins, cfg.saturation_bins))
    query = hists[query_id if query_id is not None else min(hists)]
    table = {human_id: [compare(query, ref, m) for m in HistogramMetric] for human_id, ref in hists.items()}
    return pd.DataFrame(table, index=[m.value for m in HistogramMetric])


class ReidAgent:
    """
    Re-identification Agent

    Owns the registry of known humans for one sequence (single writer).
    """

    def __init__(self, config: Optional[ReidConfig] = None, pf_config: Optional[PfConfig] = None,
                 seed: int = 0, record_history: bool = False):
        self.config = config or ReidConfig()
        self.pf_config = pf_config or PfConfig()
        self.seed = seed
        self.record_history = record_history
        self.humans: List[HumanRecord] = []
        self.exemplars: Dict[int, np.ndarray] = {}
        self.observations_processed = 0
        logger.info("Re-identification Agent initialized")

    def histogram(self, patch: Optional[np.ndarray]) -> Optional[ColorHistogram]:
        if patch is None:
            return None
        mask = center_prior_mask(patch.shape[:2], self.config.ellipse_scale) if self.config.use_mask else None
        try:
            return histogram_of(patch, mask, (self.config.hue_bins, self.config.saturation_bins))
        except EmptyForeground as e:
            logger.warning(f"Patch ignored: {e}")
            return None

    def associate(self, position: Tuple[float, float], frame: int, t: float,
                  patch: Optional[np.ndarray] = None) -> AssociationResult:
        observation = Observation(position=position, frame=frame, t=t, histogram=self.histogram(patch))
        result = associate(observation, self.humans, self.config, self.pf_config, self.seed, self.record_history)
        if result.is_new:
            if patch is not None:
                self.exemplars[result.human_id] = patch
            logger.info(f"New human {result.human_id} at ({position[0]:.1f}, {position[1]:.1f})")
        self.observations_processed += 1
        return result

    def update(self, human_id: int, position: Tuple[float, float], frame: int, t: float,
               patch: Optional[np.ndarray] = None) -> None:
        """Feed a further observation of an already identified human"""
        record = self.record(human_id)
        record.pf.update(position, t)
        hist = self.histogram(patch)
        if hist is not None:
            record.add_reference(hist, self.config.max_references)
        record.last_frame, record.last_time = frame, t
        self.observations_processed += 1

    def record(self, human_id: int) -> HumanRecord:
        return next(h for h in self.humans if h.human_id == human_id)

    def similarity_report(self) -> Dict[str, pd.DataFrame]:
        return {
            "masked": similarity_table(self.exemplars, self.config, masked=True),
            "unmasked": similarity_table(self.exemplars, self.config, masked=False),
        }
