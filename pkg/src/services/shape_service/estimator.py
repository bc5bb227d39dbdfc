"""
Feature shape reconstruction from a capture.

The sample covariance of spatially laid-out features has a grid structure:
features one image row apart (lag W) co-vary more than their neighbours.
The row means of the covariance keep that periodicity, so the width shows
up as the highest interior peak of their autocorrelation.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import argrelextrema

from src.services.wire_service.capture import read_capture
from src.shared.constants import COVARIANCE_BLOCK_LIMIT, SHAPE_KMAX
from src.shared.exceptions import (
    BlockTooLarge, DegenerateSignal, InvalidConfig, NoPeakFound, NonFinite, NoValidFactorization,
    SplitLeakError, StageError, TooFewSamples,
)

logger = logging.getLogger(__name__)


@dataclass
class AutocorrProfile:
    """R(k) for k = 0..k_max (index 0 is the normaliser R(0))"""
    values: np.ndarray

    @property
    def k_max(self):
        return len(self.values) - 1

    @property
    def lags(self):
        return np.arange(1, len(self.values))

    @property
    def r0(self):
        return float(self.values[0])

    @property
    def normalized(self):
        return self.values / self.values[0]

    def rows(self):
        """(k, R, R_norm) for k = 1..k_max"""
        norm = self.normalized
        return [(int(k), float(self.values[k]), float(norm[k])) for k in self.lags]


@dataclass
class ShapeEstimate:
    width: int
    height: int
    candidates: list
    peak_score: float
    aspect: float
    d: int
    n: int
    profile: AutocorrProfile = field(repr=False, default=None)

    @property
    def shape(self):
        """Top-ranked (C, H, W)"""
        return self.candidates[0]


def _as_matrix(capture):
    X = np.asarray(capture, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidConfig(f"Capture must be a 2-D matrix, got {X.ndim} dimensions")
    if X.shape[0] < 2:
        raise TooFewSamples(f"Covariance needs at least 2 samples, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise NonFinite('Capture contains NaN or Inf')
    return X


def _centered(X):
    """Column-centred capture; constant columns are exactly zero rather than rounding residue"""
    centered = X - X.mean(axis=0)
    centered[:, np.ptp(X, axis=0) == 0] = 0.0
    return centered


def covariance_row_means(capture):
    """
    mu_i = mean of row i of the 1/N sample covariance, without forming it:
    mu = Xc^T (Xc 1) / (N d)
    """
    X = _as_matrix(capture)
    n, d = X.shape
    centered = _centered(X)
    return centered.T @ centered.sum(axis=1) / (n * d)


def covariance_matrix(capture):
    """Materialised d x d covariance; only for small d"""
    X = _as_matrix(capture)
    centered = _centered(X)
    return centered.T @ centered / X.shape[0]


def covariance_block(capture, i0, i1):
    """Dense covariance sub-block over features [i0, i1)"""
    X = _as_matrix(capture)
    d = X.shape[1]
    if not 0 <= i0 < i1 <= d:
        raise InvalidConfig(f"Block [{i0}, {i1}) is outside [0, {d})")
    if i1 - i0 > COVARIANCE_BLOCK_LIMIT:
        raise BlockTooLarge(
            f"Block of {i1 - i0} features exceeds {COVARIANCE_BLOCK_LIMIT}",
            {'size': i1 - i0, 'limit': COVARIANCE_BLOCK_LIMIT},
        )
    columns = _centered(X[:, i0:i1])
    return columns.T @ columns / X.shape[0]


def autocorrelation(mu, k_max):
    """R(k) = sum_{i < d-k} mu_i mu_{i+k} for k = 0..k_max"""
    mu = np.asarray(mu, dtype=np.float64)
    d = len(mu)
    if not 1 <= k_max <= d - 1:
        raise InvalidConfig(f"k_max must lie in [1, {d - 1}], got {k_max}")
    if not np.any(mu):
        raise DegenerateSignal('Covariance row means are identically zero')
    full = np.correlate(mu, mu, mode='full')
    return AutocorrProfile(values=full[d - 1:d + k_max].copy())


def detect_width(profile, d):
    """
    Highest strict local maximum of R among divisors of d in [2, k_max].
    Returns (width, peak score R(W)/R(0)); ties go to the smaller lag.
    """
    values = profile.values
    peaks = argrelextrema(values, np.greater)[0]
    candidates = [int(k) for k in peaks if k >= 2 and d % k == 0]
    if not candidates:
        raise NoPeakFound(f"No interior peak at a divisor of d={d} within k_max={profile.k_max}")
    best = max(candidates, key=lambda k: (values[k], -k))
    return best, float(values[best] / values[0])


def enumerate_shapes(d, width, aspect=1.0, limit=3):
    """(C, H, W) candidates with C*H*W == d, ranked by distance of H from aspect * W"""
    if aspect <= 0:
        raise InvalidConfig(f"Aspect ratio must be positive, got {aspect}")
    if width < 1 or d % width:
        raise NoValidFactorization(f"Width {width} does not divide d={d}")
    target = aspect * width
    height = max(1, math.floor(target + 0.5))
    if d % (height * width) == 0:
        return [(d // (height * width), height, width)]

    heights = [h for h in range(1, d // width + 1) if d % (h * width) == 0]
    heights.sort(key=lambda h: (abs(h - target), h))
    if not heights:
        raise NoValidFactorization(f"No height makes {d} divisible by H*{width}")
    return [(d // (h * width), h, width) for h in heights[:limit]]


def _stage(name, func, *args):
    try:
        return func(*args)
    except SplitLeakError as e:
        raise StageError(name, e) from e


def estimate_from_matrix(capture, aspect=1.0, k_max=None):
    X = _stage('row_means', _as_matrix, capture)
    n, d = X.shape
    if k_max is None:
        k_max = min(d - 1, SHAPE_KMAX)
    mu = _stage('row_means', covariance_row_means, X)
    profile = _stage('autocorrelation', autocorrelation, mu, k_max)
    width, score = _stage('width', detect_width, profile, d)
    candidates = _stage('factorization', enumerate_shapes, d, width, aspect)
    estimate = ShapeEstimate(
        width=width,
        height=candidates[0][1],
        candidates=candidates,
        peak_score=score,
        aspect=aspect,
        d=d,
        n=n,
        profile=profile,
    )
    logger.info(f"Estimated feature shape {estimate.shape} from N={n}, d={d} (peak score {score:.4f})")
    return estimate


def estimate_shape(capture_path, aspect=1.0, k_max=None):
    """Capture file -> ShapeEstimate; failures are StageError labelled by pipeline stage"""
    rows = _stage('read', read_capture, capture_path)
    return estimate_from_matrix(rows, aspect=aspect, k_max=k_max)
