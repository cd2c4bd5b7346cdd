"""Absolute-CTR calibration: bucketed empirical rates, weighted isotonic fit,
a small strictifying slope, and linear interpolation between bucket rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, ValidationError

CALIBRATION_FORMAT = "rganctr-calibration/1"


def normalize_scores(scores) -> np.ndarray:
    """Map raw scores into (0, 1) with the logistic sigmoid."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    return expit(scores)


def bucket_index(sigma, n: int) -> np.ndarray:
    """Zero-based bucket of each value on ``n`` equal buckets over [0, 1].

    Buckets are half-open ``[v_j, v_{j+1})`` except the last, which includes 1.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.minimum(np.floor(sigma * n).astype(np.int64), n - 1)


def empirical_bucket_rates(sigma, labels, n: int):
    """Positive fraction and sample count per bucket.

    Empty buckets get rate ``nan`` and count 0.
    """
    if n < 1:
        raise ConfigurationError("bucket count must be >= 1")
    sigma = np.asarray(sigma, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if sigma.shape != labels.shape:
        raise ValidationError("sigma values and labels differ in length")
    if sigma.size and (sigma.min() < 0 or sigma.max() > 1):
        raise ValidationError("sigma values must lie in [0, 1]")
    idx = bucket_index(sigma, n)
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    pos = np.bincount(idx, weights=labels, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts > 0, pos / np.where(counts > 0, counts, 1.0), np.nan)
    return rates, counts


def pava_fit(rates, weights) -> np.ndarray:
    """Weighted isotonic (nondecreasing) least-squares fit by pooling adjacent violators.

    Zero-weight entries do not influence the fit; they take the value of the
    pooled block they fall in, or the nearest fitted value at the ends.
    """
    rates = np.asarray(rates, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if rates.shape != weights.shape or rates.ndim != 1:
        raise ValidationError("rates and weights must be 1-D arrays of equal length")
    if np.any(weights < 0):
        raise ValidationError("weights must be nonnegative")
    live = np.flatnonzero(weights > 0)
    out = np.empty_like(rates)
    if live.size == 0:
        out.fill(np.nan)
        return out

    # stack of blocks: (mean, weight, first live position); a block that is
    # never pooled keeps its input value bit for bit
    means, wts, starts = [], [], []
    for k, j in enumerate(live):
        m, w, st = rates[j], weights[j], k
        while means and means[-1] > m:
            pm, pw = means.pop(), wts.pop()
            m = (pm * pw + m * w) / (pw + w)
            w += pw
            st = starts.pop()
        means.append(m)
        wts.append(w)
        starts.append(st)

    fitted_live = np.empty(live.size)
    bounds = starts[1:] + [live.size]
    for m, a, b in zip(means, starts, bounds):
        fitted_live[a:b] = m

    # zero-weight entries take the preceding fitted value (inside a pooled
    # block that is the block value); leading ones take the first
    pos = np.searchsorted(live, np.arange(rates.size), side="right") - 1
    out[:] = fitted_live[np.maximum(pos, 0)]
    return out


def strictify(rates, epsilon: float) -> np.ndarray:
    """Add a linear ramp rising from 0 to ``epsilon`` across the buckets."""
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be > 0")
    rates = np.asarray(rates, dtype=np.float64)
    if np.any(np.diff(rates) < 0):
        raise ValidationError("strictify needs nondecreasing rates")
    n = rates.size
    if n == 1:
        return rates.copy()
    return rates + epsilon * np.arange(n) / (n - 1)


@dataclass(frozen=True)
class CalibrationModel:
    n: int
    epsilon: float
    rates: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("bucket count must be >= 1")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if self.rates is not None:
            r = np.asarray(self.rates, dtype=np.float64)
            r.setflags(write=False)
            object.__setattr__(self, "rates", r)
            if r.shape != (self.n,):
                raise ValidationError(f"expected {self.n} rates, got {r.shape}")

    @property
    def fitted(self) -> bool:
        return self.rates is not None

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @classmethod
    def fit(cls, sigma, labels, n: int, epsilon: float = 0.1) -> "CalibrationModel":
        raw, counts = empirical_bucket_rates(sigma, labels, n)
        if counts.sum() == 0:
            raise ValidationError("cannot fit calibration on an empty set")
        mono = pava_fit(np.nan_to_num(raw), counts)
        return cls(n=n, epsilon=epsilon, rates=strictify(mono, epsilon))

    def to_json(self) -> dict:
        if not self.fitted:
            raise ContractError("calibration model is not fitted")
        return {"format": CALIBRATION_FORMAT, "n": self.n, "epsilon": self.epsilon,
                "rates": [float(r) for r in self.rates]}

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationModel":
        try:
            return cls(n=int(obj["n"]), epsilon=float(obj["epsilon"]),
                       rates=np.asarray(obj["rates"], dtype=np.float64))
        except KeyError as exc:
            raise ValidationError(f"calibration file lacks field {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def calibrate_sample(sigma_hat, model: CalibrationModel):
    """Interpolated CTR for one or many normalized scores, clipped to [0, 1].

    Inside bucket j the estimate is ``a*p_j + (1-a)*p_{j+1}`` with
    ``a = (v_{j+1} - s) / (v_{j+1} - v_j)``; the last bucket returns its own rate.
    """
    if not model.fitted:
        raise ContractError("calibration model is not fitted")
    s = np.asarray(sigma_hat, dtype=np.float64)
    if s.size and (np.nanmin(s) < 0 or np.nanmax(s) > 1):
        raise ValidationError("normalized scores must lie in [0, 1]")
    n, p = model.n, model.rates
    j = bucket_index(s, n)
    width = 1.0 / n
    alpha = ((j + 1) * width - s) / width
    upper = p[np.minimum(j + 1, n - 1)]
    est = np.where(j == n - 1, p[j], alpha * p[j] + (1.0 - alpha) * upper)
    out = np.clip(est, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def calibrate_dataset(sigma, model: CalibrationModel, cid3=None, category=None) -> float:
    """Mean calibrated CTR over a test set, optionally restricted to one category."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if category is not None:
        if cid3 is None:
            raise ValidationError("category filter needs the cid3 column")
        sigma = sigma[np.asarray(cid3) == category]
    if sigma.size == 0:
        raise ValidationError("cannot calibrate an empty test set")
    return float(np.mean(calibrate_sample(sigma, model)))


def relative_error(estimate: float, truth: float) -> float:
    if truth == 0:
        raise ValidationError("relative error against a zero CTR")
    return abs(estimate - truth) / truth
