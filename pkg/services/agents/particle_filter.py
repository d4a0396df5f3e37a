"""
Particle Filter Agent
Purpose: Per-human 2-D position filtering in UTM coordinates
Functions:
- Gaussian initialization around the first localization
- Uniform random-walk propagation bounded by the maximum walking speed
- Log-space Gaussian measurement update
- Systematic resampling (every update, or by effective sample size)
- Weighted mean / covariance estimate

Every random step derives its generator from the set's (seed, stream, counter)
and returns a new set with the counter advanced.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from utils.errors import DegenerateWeights, NonMonotonicFrame
from utils.rng import make_rng

logger = logging.getLogger(__name__)

LOG_TINY = float(np.log(np.finfo(np.float64).tiny))


class PfConfig(BaseModel):
    sigma_z: float = Field(3.0, gt=0, description="Measurement noise std in meters")
    v_max: float = Field(1.2, ge=0, description="Maximum human speed in m/s")
    n: int = Field(100, ge=1, description="Number of particles")
    ess_threshold: Optional[float] = Field(None, gt=0, le=1,
                                           description="Resample only when ESS < threshold * N")


class ParticleSet(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    particles: np.ndarray
    weights: np.ndarray
    rng_seed: int
    rng_stream: int = 0
    rng_counter: int = 0

    @property
    def n(self) -> int:
        return len(self.weights)

    def rng(self) -> np.random.Generator:
        return make_rng(self.rng_seed, self.rng_stream, self.rng_counter)

    def advanced(self, **update) -> "ParticleSet":
        update["rng_counter"] = self.rng_counter + 1
        return self.model_copy(update=update)


class PfEstimate(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: Tuple[float, float]
    covariance: np.ndarray


def pf_init(z0: Sequence[float], cfg: PfConfig, seed: int, stream: int = 0, counter: int = 0) -> ParticleSet:
    """N Gaussian particles around z0 with per-axis std sigma_z, uniform weights"""
    z0 = np.asarray(z0, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial measurement must be finite")
    rng = make_rng(seed, stream, counter)
    particles = z0 + rng.normal(0.0, cfg.sigma_z, size=(cfg.n, 2))
    return ParticleSet(particles=particles, weights=np.full(cfg.n, 1.0 / cfg.n),
                       rng_seed=seed, rng_stream=stream, rng_counter=counter + 1)


def pf_propagate(s: ParticleSet, dt: float, cfg: PfConfig) -> ParticleSet:
    """Displace every particle by U(-v_max, v_max) * dt per axis"""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    velocity = s.rng().uniform(-cfg.v_max, cfg.v_max, size=s.particles.shape)
    return s.advanced(particles=s.particles + velocity * dt)


def pf_measure(s: ParticleSet, z: Sequence[float], cfg: PfConfig) -> ParticleSet:
    """
    Reweight by the Gaussian likelihood of z with R = sigma_z^2 * I

    Raises:
        DegenerateWeights: every likelihood underflows (or the prior has no mass)
    """
    z = np.asarray(z, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    log_lik = -0.5 * np.sum((s.particles - z) ** 2, axis=1) / cfg.sigma_z ** 2
    if log_lik.max() < LOG_TINY:
        raise DegenerateWeights(f"measurement {z.tolist()} is {np.sqrt(-2 * log_lik.max()):.1f} sigma "
                                f"from every particle")
    with np.errstate(divide="ignore"):
        log_w = np.log(s.weights) + log_lik
    if not np.isfinite(log_w.max()):
        raise DegenerateWeights("prior weights have no mass")
    weights = np.exp(log_w - logsumexp(log_w))
    return s.model_copy(update={"weights": weights / weights.sum()})


def systematic_indices(weights: np.ndarray, offset: float) -> np.ndarray:
    """Indices picked by a comb of N pointers offset + k/N over the cumulative weights"""
    n = len(weights)
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    pointers = offset + np.arange(n) / n
    return np.minimum(np.searchsorted(cumulative, pointers, side="right"), n - 1)


def pf_resample(s: ParticleSet) -> ParticleSet:
    """Systematic resampling with one uniform offset in [0, 1/N); output weights uniform"""
    n = s.n
    offset = s.rng().uniform(0.0, 1.0 / n)
    idx = systematic_indices(s.weights, offset)
    return s.advanced(particles=s.particles[idx], weights=np.full(n, 1.0 / n))


def pf_estimate(s: ParticleSet) -> PfEstimate:
    """Weighted mean and weighted (biased) covariance"""
    mean = s.weights @ s.particles
    cov = np.atleast_2d(np.cov(s.particles, rowvar=False, aweights=s.weights, bias=True))
    return PfEstimate(mean=(float(mean[0]), float(mean[1])), covariance=cov)


def effective_sample_size(s: ParticleSet) -> float:
    return float(1.0 / np.sum(s.weights ** 2))


class ParticleFilter:
    """
    One human's filter with time bookkeeping

    update() runs propagate (dt from timestamps), measure and resample. With
    ess_threshold set, resampling only happens when ESS drops below
    ess_threshold * N.
    """

    def __init__(self, config: PfConfig, seed: int, stream: int = 0, record_history: bool = False):
        self.config = config
        self.seed = seed
        self.stream = stream
        self.state: Optional[ParticleSet] = None
        self.last_time: Optional[float] = None
        self.updates = 0
        self.history: Optional[List[Tuple[int, float, ParticleSet]]] = [] if record_history else None

    def _record(self, t: float) -> None:
        if self.history is not None:
            self.history.append((self.updates, t, self.state))

    def update(self, z: Sequence[float], t: float) -> ParticleSet:
        if self.state is None:
            self.state = pf_init(z, self.config, self.seed, self.stream)
        else:
            dt = t - self.last_time
            if dt < 0:
                raise NonMonotonicFrame(f"measurement at t={t} precedes t={self.last_time}")
            state = pf_propagate(self.state, dt, self.config)
            try:
                state = pf_measure(state, z, self.config)
            except DegenerateWeights as e:
                logger.warning(f"Particle filter re-initialized at {list(z)}: {e}")
                state = pf_init(z, self.config, self.seed, self.stream, state.rng_counter)
            else:
                threshold = self.config.ess_threshold
                if threshold is None or effective_sample_size(state) < threshold * state.n:
                    state = pf_resample(state)
            self.state = state
        self.last_time = t
        self.updates += 1
        self._record(t)
        return self.state

    def estimate(self) -> PfEstimate:
        if self.state is None:
            raise ValueError("filter has not been initialized")
        return pf_estimate(self.state)
