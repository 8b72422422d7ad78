"""Closed-set identification protocol: split, enrol, fuse, rank, CMC."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ProtocolError
from ..featex import extract_features
from ..matchers import MatcherConfig, NormStats, SubjectStats, fit_subject, score_batch
from ..raster import PreprocessConfig, preprocess
from ..svmfuse import SVMModel, TrainConfig, balance, prune_dependent, train
from .corpus import Corpus

log = logging.getLogger(__name__)

REPORT_VERSION = "sigfuse-report/1"
SYSTEMS = ("ed", "md", "ge", "fused")
# rank-1 rates published for the original (private) 600-writer corpus; not reproducible here
PUBLISHED_RANK1 = {"ed": 0.9261, "md": 0.9336, "ge": 0.9152, "fused": 0.9717}


@dataclass(frozen=True)
class SplitPlan:
    enroll: dict[str, tuple[str, ...]]
    probe: dict[str, tuple[str, ...]]
    seed: int


@dataclass(frozen=True)
class CMCCurve:
    probabilities: np.ndarray  # index r-1 holds P(rank <= r)
    probe_count: int

    def rank1(self) -> float:
        return float(self.probabilities[0])


@dataclass(frozen=True)
class ExperimentConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_enroll: int = 6
    n_probe: int = 3
    impostor_ratio: float = 1.0


def split(corpus: Corpus, seed: int, n_enroll: int = 6, n_probe: int = 3) -> SplitPlan:
    """Seeded per-subject enrol/probe split.

    Forger subjects are split the same way; their "enrol" part feeds the
    fusion training set and their "probe" part is scored as forgery probes.
    """
    enroll, probe = {}, {}
    for subject_id in sorted(corpus.sample_counts()):
        ids = sorted(s.sample_id for s in corpus.samples_of(subject_id))
        if len(ids) < n_enroll + n_probe:
            raise ProtocolError(
                f"subject {subject_id} has {len(ids)} samples, needs {n_enroll + n_probe} "
                f"({n_enroll} enrolled + {n_probe} probes)"
            )
        # per-subject stream keyed by id so adding subjects does not reshuffle others
        rng = np.random.default_rng([seed, *subject_id.encode()])
        order = rng.permutation(len(ids))
        enroll[subject_id] = tuple(ids[i] for i in order[:n_enroll])
        probe[subject_id] = tuple(ids[i] for i in order[n_enroll:n_enroll + n_probe])
    return SplitPlan(enroll, probe, seed)


def _rank_order(scores: np.ndarray, subject_ids: Sequence[str], higher_is_better: bool) -> list[int]:
    key = -scores if higher_is_better else scores
    return sorted(range(len(subject_ids)), key=lambda i: (key[i], subject_ids[i]))


def identify(probe: np.ndarray, gallery: Sequence[SubjectStats], fusion: SVMModel, norm: NormStats,
             cfg: MatcherConfig = MatcherConfig()) -> list[tuple[str, float]]:
    """Rank every gallery subject by fused score, best first; ties go to the smaller id."""
    if not gallery:
        raise ProtocolError("cannot identify against an empty gallery")
    raw = np.vstack([score_batch(probe, s, cfg) for s in gallery])
    fused = fusion.decision_function(norm.apply(raw))
    ids = [s.subject_id for s in gallery]
    return [(ids[i], float(fused[i])) for i in _rank_order(fused, ids, True)]


def true_ranks(scores: np.ndarray, truth: np.ndarray, subject_ids: Sequence[str], higher_is_better: bool) -> np.ndarray:
    """1-based rank of the true subject for each probe row of ``scores`` (probes x subjects).

    Equivalent to sorting each row with ties broken by ascending subject id.
    """
    s = scores if higher_is_better else -scores
    ids = np.asarray(subject_ids)
    true_score = s[np.arange(s.shape[0]), truth][:, None]
    better = s > true_score
    tied_before = (s == true_score) & (ids[None, :] < ids[truth][:, None])
    return 1 + better.sum(axis=1) + tied_before.sum(axis=1)


def cmc(ranks: Sequence[int], n_subjects: int) -> CMCCurve:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ProtocolError("CMC needs at least one probe")
    if ranks.min() < 1 or ranks.max() > n_subjects:
        raise ProtocolError(f"ranks must lie in [1, {n_subjects}]")
    hits = np.bincount(ranks, minlength=n_subjects + 1)[1:]
    return CMCCurve(np.cumsum(hits) / ranks.size, int(ranks.size))


def _features(corpus: Corpus, cfg: PreprocessConfig) -> dict[tuple[str, str], np.ndarray]:
    return {
        (s.subject_id, s.sample_id): extract_features(preprocess(s.load(), cfg))
        for s in corpus.samples
    }


def _scores_against(queries: np.ndarray, gallery: Sequence[SubjectStats], cfg: MatcherConfig) -> np.ndarray:
    """Raw scores, shape (n_queries, n_subjects, 3)."""
    return np.stack([score_batch(queries, s, cfg) for s in gallery], axis=1)


def run_experiment(corpus: Corpus, cfg: ExperimentConfig = ExperimentConfig(), seed: int = 0,
                   features: dict[tuple[str, str], np.ndarray] | None = None) -> dict:
    """Full identification experiment; returns a JSON-ready report."""
    corpus.validate()
    plan = split(corpus, seed, cfg.n_enroll, cfg.n_probe)
    if features is None:
        features = _features(corpus, cfg.preprocess)
    subjects = corpus.genuine_subjects()
    index = {sid: i for i, sid in enumerate(subjects)}
    victim_of = {s.subject_id: s.victim_id for s in corpus.samples if not s.genuine}
    mcfg = MatcherConfig(cfg.matcher.weights, cfg.matcher.k, cfg.matcher.epsilon_std,
                         cfg.matcher.shrinkage_lambda, seed)

    def stack(subject_id, sample_ids):
        return np.vstack([features[(subject_id, sid)] for sid in sample_ids])

    gallery = [fit_subject(sid, stack(sid, plan.enroll[sid]), mcfg) for sid in subjects]

    # fusion training set: enrolled genuine vs own stats (+1); vs other subjects and
    # forger training samples vs their victim (-1)
    vecs, labels = [], []
    for sid in subjects:
        enrolled = stack(sid, plan.enroll[sid])
        raw = _scores_against(enrolled, gallery, mcfg)
        own = index[sid]
        vecs.append(raw[:, own])
        labels.append(np.ones(raw.shape[0]))
        others = np.delete(raw, own, axis=1).reshape(-1, 3)
        vecs.append(others)
        labels.append(-np.ones(others.shape[0]))
    for fid in corpus.forger_subjects():
        v = index[victim_of[fid]]
        raw = score_batch(stack(fid, plan.enroll[fid]), gallery[v], mcfg)
        vecs.append(raw)
        labels.append(-np.ones(raw.shape[0]))
    raw_train = np.vstack(vecs)
    y_train = np.concatenate(labels)
    norm = NormStats.fit(raw_train)
    x_bal, y_bal = balance(norm.apply(raw_train), y_train, cfg.impostor_ratio, seed)
    full_model = train(x_bal, y_bal, cfg.train)
    model = prune_dependent(full_model, cfg.train)

    def rank_all(sample_groups):
        queries, truth = [], []
        for subject_id, target in sample_groups:
            for sample_id in plan.probe[subject_id]:
                queries.append(features[(subject_id, sample_id)])
                truth.append(index[target])
        q = np.vstack(queries)
        truth = np.asarray(truth)
        raw = _scores_against(q, gallery, mcfg)
        fused = model.decision_function(norm.apply(raw.reshape(-1, 3))).reshape(raw.shape[:2])
        return {
            "ed": true_ranks(raw[..., 0], truth, subjects, False),
            "md": true_ranks(raw[..., 1], truth, subjects, False),
            "ge": true_ranks(raw[..., 2], truth, subjects, True),
            "fused": true_ranks(fused, truth, subjects, True),
        }

    genuine = rank_all([(sid, sid) for sid in subjects])
    curves = {name: cmc(genuine[name], len(subjects)) for name in SYSTEMS}
    forgers = corpus.forger_subjects()
    forgery_hits = None
    if forgers:
        franks = rank_all([(fid, victim_of[fid]) for fid in forgers])
        forgery_hits = {name: float(np.mean(franks[name] == 1)) for name in SYSTEMS}

    return {
        "version": REPORT_VERSION,
        "seed": seed,
        "config": _config_dict(cfg),
        "corpus": {
            "n_subjects": len(subjects),
            "n_forger_subjects": len(forgers),
            "n_samples": len(corpus.samples),
            "n_genuine_probes": int(curves["fused"].probe_count),
            "n_forgery_probes": int(sum(len(plan.probe[f]) for f in forgers)),
        },
        "rank1": {name: curves[name].rank1() for name in SYSTEMS},
        "forgery_rank1_hits": forgery_hits,
        "published_rank1": PUBLISHED_RANK1,
        "svm": {
            "n_train": int(y_bal.size),
            "n_genuine": int(np.sum(y_bal > 0)),
            "n_impostor": int(np.sum(y_bal < 0)),
            "sv_before_prune": full_model.sv_count,
            "sv_after_prune": model.sv_count,
            "converged": bool(full_model.converged),
            "n_iter": full_model.n_iter,
            "kkt_violation": full_model.kkt_violation,
            "bias": model.bias,
        },
        "norm": norm.to_json(),
        "cmc": {name: curves[name].probabilities.tolist() for name in SYSTEMS},
    }


def _config_dict(cfg: ExperimentConfig) -> dict:
    m = cfg.matcher
    return {
        "preprocess": asdict(cfg.preprocess),
        "matcher": {
            "k": m.k,
            "epsilon_std": m.epsilon_std,
            "shrinkage_lambda": m.shrinkage_lambda,
            "weights": None if m.weights is None else np.asarray(m.weights).tolist(),
        },
        "train": {
            "kernel": {"kind": cfg.train.kernel.kind, "gamma": cfg.train.kernel.gamma},
            "c_reg": cfg.train.c_reg,
            "kkt_tol": cfg.train.kkt_tol,
            "max_passes": cfg.train.max_passes,
            "prune_tol": cfg.train.prune_tol,
            "solver_eps": cfg.train.solver_eps,
        },
        "n_enroll": cfg.n_enroll,
        "n_probe": cfg.n_probe,
        "impostor_ratio": cfg.impostor_ratio,
    }


def write_cmc_csv(path, report: dict) -> None:
    curves = report["cmc"]
    lines = ["rank,ed,md,ge,fused"]
    for r in range(len(curves["fused"])):
        lines.append(",".join([str(r + 1)] + [repr(float(curves[n][r])) for n in SYSTEMS]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
