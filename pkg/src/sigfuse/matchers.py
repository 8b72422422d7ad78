"""Per-subject statistics and the three matchers.

* weighted, variance-scaled Euclidean distance (smaller is better)
* Mahalanobis distance under a shrunk covariance (smaller is better)
* Gaussian empirical-rule agreement count (larger is better)

Statistics use the population (1/N) convention for both std and covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, InsufficientEnrollmentError, NumericalError, ShapeError

STATS_VERSION = "sigfuse-stats/1"


@dataclass(frozen=True)
class MatcherConfig:
    weights: np.ndarray | None = None  # None means all ones
    k: int = 3
    epsilon_std: float = 1e-6
    shrinkage_lambda: float = 0.9
    split_seed: int = 0

    def __post_init__(self):
        if self.k not in (1, 2, 3):
            raise ConfigError(f"k must be 1, 2 or 3, got {self.k}")
        if not self.epsilon_std > 0:
            raise ConfigError("epsilon_std must be positive")
        if not 0.0 <= self.shrinkage_lambda <= 1.0:
            raise ConfigError("shrinkage_lambda must lie in [0, 1]")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise ConfigError("feature weights must be non-negative")

    def weight_vector(self, dim: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(dim)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (dim,):
            raise ShapeError(f"weights have shape {w.shape}, expected ({dim},)")
        return w


@dataclass(frozen=True)
class SubjectStats:
    subject_id: str
    mean: np.ndarray
    std: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of the regularized covariance
    selected_mask: np.ndarray
    n_enrolled: int
    shrinkage_lambda: float = 0.0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def to_json(self) -> dict:
        return {
            "version": STATS_VERSION,
            "subject_id": self.subject_id,
            "n_enrolled": self.n_enrolled,
            "shrinkage_lambda": self.shrinkage_lambda,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "selected_mask": self.selected_mask.astype(bool).tolist(),
            "cov_cholesky_lower": self.chol.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SubjectStats":
        mean = np.asarray(d["mean"], dtype=np.float64)
        n = mean.shape[0]
        return cls(
            subject_id=d["subject_id"],
            mean=mean,
            std=np.asarray(d["std"], dtype=np.float64),
            chol=np.asarray(d["cov_cholesky_lower"], dtype=np.float64).reshape(n, n),
            selected_mask=np.asarray(d["selected_mask"], dtype=bool),
            n_enrolled=int(d["n_enrolled"]),
            shrinkage_lambda=float(d["shrinkage_lambda"]),
        )


def shrink_covariance(x: np.ndarray, lam: float, floor: float = 0.0) -> np.ndarray:
    """(1 - lam) * C + lam * (tr(C) / D) * I with population covariance C.

    ``floor`` lower-bounds the identity scale so that identical samples still
    give a positive definite result.
    """
    centred = x - x.mean(axis=0)
    c = centred.T @ centred / x.shape[0]
    d = c.shape[0]
    scale = max(np.trace(c) / d, floor)
    return (1.0 - lam) * c + lam * scale * np.eye(d)


def _split_sizes(n: int) -> tuple[int, int]:
    n1 = math.ceil(2 * n / 3)
    return n1, n - n1


def gaussian_rule_mask(x: np.ndarray, cfg: MatcherConfig) -> np.ndarray:
    """Features for which every held-out sample sits within k std of the held-in mean."""
    n1, n2 = _split_sizes(x.shape[0])
    order = np.random.default_rng(cfg.split_seed).permutation(x.shape[0])
    fit, check = x[order[:n1]], x[order[n1:]]
    mu = fit.mean(axis=0)
    sigma = np.maximum(fit.std(axis=0), cfg.epsilon_std)
    if n2 == 0:
        return np.ones(x.shape[1], dtype=bool)
    return np.all(np.abs(check - mu) <= cfg.k * sigma, axis=0)


def fit_subject(subject_id: str, samples: Sequence[np.ndarray], cfg: MatcherConfig = MatcherConfig()) -> SubjectStats:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientEnrollmentError(
            f"subject {subject_id}: need at least 2 enrolled samples, got {x.shape[0] if x.ndim else 0}"
        )
    cov = shrink_covariance(x, cfg.shrinkage_lambda, floor=cfg.epsilon_std**2)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"subject {subject_id}: regularized covariance is not positive definite") from exc
    return SubjectStats(
        subject_id=subject_id,
        mean=x.mean(axis=0),
        std=np.maximum(x.std(axis=0), cfg.epsilon_std),
        chol=chol,
        selected_mask=gaussian_rule_mask(x, cfg),
        n_enrolled=x.shape[0],
        shrinkage_lambda=cfg.shrinkage_lambda,
    )


def _check_dim(q: np.ndarray, s: SubjectStats) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != s.mean.shape:
        raise ShapeError(f"probe has shape {q.shape}, stats expect {s.mean.shape}")
    return q


def euclidean_score(q, s: SubjectStats, cfg: MatcherConfig = MatcherConfig()) -> float:
    """(1/n) * sqrt(sum_i w_i (q_i - mean_i)^2 / std_i^2); the 1/n sits outside the root."""
    q = _check_dim(q, s)
    w = cfg.weight_vector(s.dim)
    z = (q - s.mean) / s.std
    return float(math.sqrt(float(np.sum(w * z * z))) / s.dim)


def mahalanobis_score(q, s: SubjectStats) -> float:
    q = _check_dim(q, s)
    z = solve_triangular(s.chol, q - s.mean, lower=True, check_finite=False)
    return float(np.linalg.norm(z))


def gaussian_empirical_score(q, s: SubjectStats, cfg: MatcherConfig = MatcherConfig()) -> int:
    q = _check_dim(q, s)
    inside = np.abs(s.mean - q) <= cfg.k * s.std
    return int(np.count_nonzero(inside & s.selected_mask))


def raw_scores(q, s: SubjectStats, cfg: MatcherConfig = MatcherConfig()) -> np.ndarray:
    """(ed, md, ge) for one probe against one subject."""
    return np.array([euclidean_score(q, s, cfg), mahalanobis_score(q, s), gaussian_empirical_score(q, s, cfg)], dtype=np.float64)


# ---------------------------------------------------------------------------
# score normalization

# True where a larger raw value means a better match
SIMILARITY_ORIENTED = np.array([False, False, True])


@dataclass(frozen=True)
class NormStats:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray) -> "NormStats":
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        return cls(raw.min(axis=0), raw.max(axis=0))

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Min-max map into [0, 1] with distances flipped so 1 is always best."""
        raw = np.asarray(raw, dtype=np.float64)
        span = self.hi - self.lo
        flat = span == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.clip((raw - self.lo) / np.where(flat, 1.0, span), 0.0, 1.0)
        u = np.where(SIMILARITY_ORIENTED, u, 1.0 - u)
        return np.where(flat, 0.5, u)


@dataclass(frozen=True)
class ScoreVector:
    ed: float
    md: float
    ge: float
    normalized: np.ndarray = field(repr=False)


def make_score_vector(ed: float, md: float, ge: float, norm: NormStats) -> ScoreVector:
    return ScoreVector(ed, md, ge, norm.apply(np.array([ed, md, ge], dtype=np.float64)))


def score_batch(queries, s: SubjectStats, cfg: MatcherConfig = MatcherConfig()) -> np.ndarray:
    """Raw (ed, md, ge) rows for many probes against one subject."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] != s.dim:
        raise ShapeError(f"probes have {q.shape[1]} features, stats expect {s.dim}")
    d = q - s.mean
    z = d / s.std
    ed = np.sqrt(z * z @ cfg.weight_vector(s.dim)) / s.dim
    md = np.linalg.norm(solve_triangular(s.chol, d.T, lower=True, check_finite=False), axis=0)
    ge = np.count_nonzero((np.abs(d) <= cfg.k * s.std) & s.selected_mask, axis=1)
    return np.column_stack([ed, md, ge.astype(np.float64)])
