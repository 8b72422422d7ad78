"""Kernel SVM over matcher score vectors.

Training solves the soft-margin dual

    min_a  1/2 a'Qa - 1'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(m_i, m_j)

with SMO using second-order working-set selection (Fan, Chen and Lin,
JMLR 2005). The fused similarity of a score vector is the raw decision
value ``sum_i a_i y_i K(m, m_i) + b``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError

log = logging.getLogger(__name__)

MODEL_VERSION = "sigfuse-svm/1"
_TAU = 1e-12


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    gamma: float = 1.0 / 3.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ConfigError("rbf kernel needs gamma > 0")

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and the rows of ``b``."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        if a.shape[1] != b.shape[1]:
            raise ShapeError(f"kernel inputs differ in dimension: {a.shape[1]} vs {b.shape[1]}")
        dot = a @ b.T
        if self.kind == "linear":
            return dot
        sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * dot
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


def kernel_eval(k: Kernel, a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"kernel inputs differ in shape: {a.shape} vs {b.shape}")
    if k.kind == "linear":
        return float(a @ b)
    d = a - b
    return float(np.exp(-k.gamma * (d @ d)))


@dataclass(frozen=True)
class TrainConfig:
    c_reg: float = 10.0
    kkt_tol: float = 1e-3
    max_passes: int = 1000  # iteration budget is max_passes * n_examples
    prune_tol: float = 1e-8
    seed: int = 0
    solver_eps: float = 1e-9  # stop when the maximal violating pair gap falls below this
    kernel: Kernel = field(default_factory=Kernel)

    def __post_init__(self):
        if not (self.c_reg > 0 and self.kkt_tol > 0 and self.max_passes > 0
                and self.prune_tol > 0 and self.solver_eps > 0):
            raise ConfigError("training parameters must be positive")


@dataclass(frozen=True)
class SVMModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: Kernel
    c_reg: float
    converged: bool = True
    n_iter: int = 0
    kkt_violation: float = 0.0

    @property
    def sv_count(self) -> int:
        return int(self.alphas.shape[0])

    @property
    def coef(self) -> np.ndarray:
        return self.alphas * self.labels

    def decision_function(self, m) -> np.ndarray:
        """Fused scores for a batch of score vectors (rows)."""
        k = self.kernel.gram(m, self.support_vectors)
        return k @ self.coef + self.bias

    def to_json(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kernel": {"kind": self.kernel.kind, "gamma": self.kernel.gamma},
            "c_reg": self.c_reg,
            "bias": self.bias,
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SVMModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(len(d["alphas"]), -1)
        return cls(
            support_vectors=sv,
            alphas=np.asarray(d["alphas"], dtype=np.float64),
            labels=np.asarray(d["labels"], dtype=np.float64),
            bias=float(d["bias"]),
            kernel=Kernel(d["kernel"]["kind"], float(d["kernel"]["gamma"])),
            c_reg=float(d["c_reg"]),
            converged=bool(d.get("converged", True)),
            n_iter=int(d.get("n_iter", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "SVMModel":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# training


def dual_objective(alpha: np.ndarray, y: np.ndarray, k: np.ndarray) -> float:
    """1/2 a'Qa - 1'a (the quantity SMO minimizes)."""
    v = alpha * y
    return float(0.5 * v @ k @ v - alpha.sum())


def _bias(alpha, y, grad, c):
    """Bias from the gradient: averaged over free SVs, else midpoint of the feasible interval."""
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return float(np.mean(-y[free] * grad[free]))
    # b >= lower and b <= upper from the bound constraints
    at_zero, at_c = alpha <= 0, alpha >= c
    pos, neg = y > 0, ~(y > 0)
    lower = np.concatenate([-grad[at_zero & pos], grad[at_c & neg]])
    upper = np.concatenate([-grad[at_c & pos], grad[at_zero & neg]])
    lo = lower.max() if lower.size else None
    hi = upper.min() if upper.size else None
    if lo is None and hi is None:
        return 0.0
    if lo is None:
        return float(hi)
    if hi is None:
        return float(lo)
    return float((lo + hi) / 2.0)


def kkt_violations(alpha, y, f, c) -> np.ndarray:
    """Per-example violation of the soft-margin KKT conditions given decision values f."""
    yf = y * f
    v = np.zeros_like(yf)
    zero = alpha <= 0
    bound = alpha >= c
    free = ~zero & ~bound
    v[zero] = np.maximum(0.0, 1.0 - yf[zero])
    v[bound] = np.maximum(0.0, yf[bound] - 1.0)
    v[free] = np.abs(yf[free] - 1.0)
    return v


def smo(k: np.ndarray, y: np.ndarray, c: float, eps: float, max_iter: int):
    """Solve the dual on a precomputed kernel matrix.

    Returns ``(alpha, bias, n_iter, converged)``. Ties in pair selection go to
    the lowest index.
    """
    n = y.shape[0]
    q = (y[:, None] * y[None, :]) * k
    qd = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False
    it = 0
    while it < max_iter:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        score = -y * grad
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.flatnonzero(up)
        i = int(up_idx[np.argmax(score[up_idx])])
        g_max = score[i]
        low_idx = np.flatnonzero(low)
        g_min = score[low_idx].min()
        if g_max - g_min < eps:
            converged = True
            break
        cand = low_idx[score[low_idx] < g_max]
        b = g_max - score[cand]
        a = qd[i] + qd[cand] - 2.0 * y[i] * y[cand] * q[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = int(cand[np.argmax(b * b / a)])

        # two-variable subproblem, clipped to the box (LIBSVM update)
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = qd[i] + qd[j] + 2.0 * q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = c - diff
            else:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = c + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = total - c
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > c:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = total - c
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        grad += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)
        it += 1
    return alpha, _bias(alpha, y, grad, c), it, converged


def _check_training_data(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} score vectors but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("labels must be +1 (genuine) or -1 (impostor)")
    if not ((y > 0).any() and (y < 0).any()):
        raise TrainingError("training data must contain both genuine and impostor examples")
    return x, y


def train(x, y, cfg: TrainConfig = TrainConfig()) -> SVMModel:
    """Train on score vectors ``x`` (rows) with labels ``y`` in {+1, -1}."""
    x, y = _check_training_data(x, y)
    k = cfg.kernel.gram(x, x)
    max_iter = cfg.max_passes * x.shape[0]
    alpha, bias, n_iter, converged = smo(k, y, cfg.c_reg, cfg.solver_eps, max_iter)
    f = k @ (alpha * y) + bias
    viol = float(kkt_violations(alpha, y, f, cfg.c_reg).max())
    if not converged:
        log.warning("SMO stopped after %d iterations without converging (KKT violation %.3g)", n_iter, viol)
    keep = alpha > 0
    return SVMModel(
        support_vectors=x[keep].copy(),
        alphas=alpha[keep].copy(),
        labels=y[keep].copy(),
        bias=bias,
        kernel=cfg.kernel,
        c_reg=cfg.c_reg,
        converged=converged and viol <= cfg.kkt_tol,
        n_iter=n_iter,
        kkt_violation=viol,
    )


def balance(x, y, ratio: float = 1.0, seed: int = 0):
    """Subsample impostors to at most ``ratio`` per genuine example, keeping order."""
    x = np.asarray(x)
    y = np.asarray(y)
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    n_keep = min(neg.size, int(round(ratio * pos.size)))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(neg, size=n_keep, replace=False)) if n_keep < neg.size else neg
    idx = np.sort(np.concatenate([pos, chosen]))
    return x[idx], y[idx]


# ---------------------------------------------------------------------------
# reduced-set pruning


def _dependence(gram: np.ndarray, k: int, others: np.ndarray):
    """Affine least-squares fit of Gram column k from the columns ``others``.

    Returns (relative residual, coefficients summing to one).
    """
    target = gram[:, k]
    if others.size == 1:
        coef = np.ones(1)
        resid = target - gram[:, others[0]]
    else:
        last = gram[:, others[-1]]
        a = gram[:, others[:-1]] - last[:, None]
        z, *_ = np.linalg.lstsq(a, target - last, rcond=None)
        coef = np.append(z, 1.0 - z.sum())
        resid = target - gram[:, others] @ coef
    scale = np.linalg.norm(target)
    return float(np.linalg.norm(resid) / scale if scale > 0 else np.linalg.norm(resid)), coef


def prune_dependent(model: SVMModel, cfg: TrainConfig = TrainConfig()) -> SVMModel:
    """Drop support vectors that are (affinely) dependent on the rest in feature space.

    A removed vector's weight is folded into the remaining coefficients, so the
    decision function is unchanged. Candidates are visited once, smallest
    residual first. A fold is rejected if it would flip a label or push a
    multiplier above C, or move any decision value at the support vectors by
    more than 1e-6.
    """
    n = model.sv_count
    if n < 2:
        return model
    sv = model.support_vectors
    gram = model.kernel.gram(sv, sv)
    coef = model.coef.copy()
    alive = np.ones(n, dtype=bool)
    f_ref = gram @ coef

    initial = [(_dependence(gram, k, np.flatnonzero(np.arange(n) != k))[0], k) for k in range(n)]
    for resid0, k in sorted(initial):
        if resid0 > cfg.prune_tol:
            break
        others = np.flatnonzero(alive & (np.arange(n) != k))
        if not alive[k] or others.size == 0:
            continue
        resid, c = _dependence(gram, k, others)
        if resid > cfg.prune_tol:
            continue
        trial = coef.copy()
        trial[others] += c * coef[k]
        trial[k] = 0.0
        same_sign = np.all(trial[others] * model.labels[others] >= 0)
        in_box = np.all(np.abs(trial[others]) <= model.c_reg * (1 + 1e-12))
        if not (same_sign and in_box):
            continue
        if np.max(np.abs(gram @ trial - f_ref)) > 1e-6:
            continue
        coef = trial
        alive[k] = False
        alive &= coef != 0.0

    if alive.all():
        return model
    idx = np.flatnonzero(alive)
    return replace(
        model,
        support_vectors=sv[idx].copy(),
        alphas=np.abs(coef[idx]),
        labels=model.labels[idx].copy(),
    )


def fused_score(model: SVMModel, m) -> float:
    return float(model.decision_function(np.asarray(m, dtype=np.float64)[None, :])[0])


def decide(model: SVMModel, m) -> int:
    """+1 genuine, -1 impostor; a score of exactly zero counts as genuine."""
    return 1 if fused_score(model, m) >= 0.0 else -1
