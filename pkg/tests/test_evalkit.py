import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigfuse.errors import ProtocolError
from sigfuse.evalkit import (
    Corpus,
    Sample,
    cmc,
    identify,
    run_experiment,
    split,
    synth_corpus,
    true_ranks,
    write_cmc_csv,
)
from sigfuse.featex import extract_features
from sigfuse.matchers import NormStats, fit_subject
from sigfuse.raster import PreprocessConfig, preprocess
from sigfuse.svmfuse import Kernel, SVMModel


def id_corpus(counts):
    return Corpus(tuple(Sample(sid, f"g{j:02d}") for sid, n in counts.items() for j in range(n)))


def sum_model():
    """Linear model whose fused score is the sum of the normalized scores."""
    sv = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    return SVMModel(sv, np.array([1.0, 1.0]), np.array([1.0, -1.0]), 0.0, Kernel("linear"), 10.0)


class TestSplit:
    def test_defaults(self):
        plan = split(id_corpus({"a": 9, "b": 9}), seed=1)
        for sid in ("a", "b"):
            assert len(plan.enroll[sid]) == 6 and len(plan.probe[sid]) == 3
            assert not set(plan.enroll[sid]) & set(plan.probe[sid])

    def test_deterministic(self):
        c = id_corpus({"a": 9, "b": 10})
        assert split(c, 4) == split(c, 4)
        assert split(c, 4) != split(c, 5)

    def test_too_few_samples(self):
        with pytest.raises(ProtocolError, match="b"):
            split(id_corpus({"a": 9, "b": 8}), 0)

    def test_unaffected_by_other_subjects(self):
        small = split(id_corpus({"a": 9}), 3)
        large = split(id_corpus({"a": 9, "z": 9}), 3)
        assert small.enroll["a"] == large.enroll["a"]


class TestIdentify:
    def setup_method(self):
        rng = np.random.default_rng(0)
        centres = rng.normal(size=(4, 12)) * 5
        self.gallery = [fit_subject(f"s{i}", c + rng.normal(size=(6, 12)) * 0.1) for i, c in enumerate(centres)]
        raw = np.array([[0.0, 0.0, 0.0], [5.0, 500.0, 12.0]])
        self.norm = NormStats.fit(raw)
        self.centres = centres

    def test_permutation_and_order(self):
        ranking = identify(self.centres[2], self.gallery, sum_model(), self.norm)
        assert sorted(sid for sid, _ in ranking) == ["s0", "s1", "s2", "s3"]
        assert ranking[0][0] == "s2"
        scores = [sc for _, sc in ranking]
        assert scores == sorted(scores, reverse=True)

    def test_single_subject(self):
        assert identify(self.centres[0], self.gallery[:1], sum_model(), self.norm)[0][0] == "s0"

    def test_ties_go_to_smaller_id(self):
        twin = fit_subject("a", [np.zeros(12), np.ones(12)])
        other = fit_subject("b", [np.zeros(12), np.ones(12)])
        ranking = identify(np.zeros(12), [other, twin], sum_model(), self.norm)
        assert [sid for sid, _ in ranking] == ["a", "b"]
        assert ranking[0][1] == ranking[1][1]

    def test_empty_gallery(self):
        with pytest.raises(ProtocolError):
            identify(np.zeros(12), [], sum_model(), self.norm)


class TestTrueRanks:
    def test_simple(self):
        scores = np.array([[0.9, 0.1, 0.5], [0.2, 0.2, 0.1]])
        assert true_ranks(scores, np.array([2, 1]), ["a", "b", "c"], True).tolist() == [2, 2]
        assert true_ranks(scores, np.array([0, 0]), ["a", "b", "c"], True).tolist() == [1, 1]

    def test_lower_is_better(self):
        scores = np.array([[3.0, 1.0, 2.0]])
        assert true_ranks(scores, np.array([1]), ["a", "b", "c"], False).tolist() == [1]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8), st.booleans())
    def test_matches_full_sort(self, seed, n, higher):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 4, size=(5, n)).astype(float)  # plenty of ties
        ids = [f"s{i}" for i in rng.permutation(n)]
        truth = rng.integers(0, n, size=5)
        got = true_ranks(scores, truth, ids, higher)
        for row, t, r in zip(scores, truth, got):
            key = -row if higher else row
            order = sorted(range(n), key=lambda i: (key[i], ids[i]))
            assert order.index(t) + 1 == r


class TestCMC:
    def test_hand_case(self):
        assert cmc([1, 1, 2], 2).probabilities.tolist() == pytest.approx([2 / 3, 1.0])

    def test_all_first(self):
        assert cmc([1] * 5, 4).probabilities.tolist() == [1.0] * 4

    def test_errors(self):
        with pytest.raises(ProtocolError):
            cmc([], 3)
        with pytest.raises(ProtocolError):
            cmc([4], 3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(1, n), min_size=1))))
    def test_properties(self, case):
        n, ranks = case
        p = cmc(ranks, n).probabilities
        assert len(p) == n
        assert np.all(np.diff(p) >= 0)
        assert p[-1] == 1.0
        assert p[0] == pytest.approx(ranks.count(1) / len(ranks))


class TestSynth:
    def test_counts_and_ids(self):
        c = synth_corpus(3, 4, 2, seed=0)
        assert c.genuine_subjects() == ["s000", "s001", "s002"]
        assert c.forger_subjects() == ["f000", "f001"]
        assert all(n == 4 for n in c.sample_counts().values())
        victims = {s.subject_id: s.victim_id for s in c.samples if not s.genuine}
        assert victims == {"f000": "s000", "f001": "s001"}
        assert all(s.image.dtype == np.uint8 for s in c.samples)

    def test_deterministic(self):
        a, b = synth_corpus(2, 2, 1, seed=11), synth_corpus(2, 2, 1, seed=11)
        assert all(np.array_equal(x.image, y.image) for x, y in zip(a.samples, b.samples))
        c = synth_corpus(2, 2, 1, seed=12)
        assert not np.array_equal(a.samples[0].image, c.samples[0].image)

    def test_bad_counts(self):
        with pytest.raises(ProtocolError):
            synth_corpus(0, 3, 0, seed=0)

    def test_intra_subject_closer_than_inter(self):
        c = synth_corpus(6, 4, 0, seed=7)
        cfg = PreprocessConfig()
        feats = {(s.subject_id, s.sample_id): extract_features(preprocess(s.image, cfg)) for s in c.samples}
        keys = sorted(feats)
        intra, inter = [], []
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                d = np.linalg.norm(feats[a] - feats[b])
                (intra if a[0] == b[0] else inter).append(d)
        assert np.mean(intra) < np.mean(inter)

    def test_hpr_nontrivial(self):
        img = synth_corpus(1, 1, 0, seed=3).samples[0].image
        iset = preprocess(img)
        assert 0 < iset.hpr.sum() < iset.binary.sum()


class TestManifest:
    def test_write_and_load(self, tmp_path):
        c = synth_corpus(2, 2, 1, seed=5)
        path = c.write(tmp_path / "corpus")
        data = json.loads(path.read_text())
        assert data["version"] == "sigfuse-corpus/1"
        back = Corpus.load(path)
        back.validate()
        assert back.genuine_subjects() == c.genuine_subjects()
        for orig in c.samples:
            [loaded] = [s for s in back.samples if (s.subject_id, s.sample_id) == (orig.subject_id, orig.sample_id)]
            assert loaded.victim_id == orig.victim_id
            assert np.array_equal(loaded.load(), orig.image)

    def test_validate(self):
        with pytest.raises(ProtocolError):
            id_corpus({"a": 3}).validate()
        bad = Corpus((Sample("a", "1"), Sample("b", "1"), Sample("f", "1", False, "zz")))
        with pytest.raises(ProtocolError):
            bad.validate()
        dup = Corpus((Sample("a", "1"), Sample("a", "1"), Sample("b", "1")))
        with pytest.raises(ProtocolError):
            dup.validate()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ProtocolError):
            Corpus.load(tmp_path / "nope.json")

    def test_wrong_version(self):
        with pytest.raises(ProtocolError):
            Corpus.from_manifest({"version": "x", "subjects": []})


@pytest.fixture(scope="module")
def small():
    corpus = synth_corpus(5, 9, 2, seed=2)
    return corpus, run_experiment(corpus, seed=2)


class TestRunExperiment:
    def test_report_shape(self, small):
        _, r = small
        assert r["version"] == "sigfuse-report/1"
        assert set(r["rank1"]) == {"ed", "md", "ge", "fused"}
        assert r["corpus"]["n_genuine_probes"] == 15
        assert r["corpus"]["n_forgery_probes"] == 6
        for curve in r["cmc"].values():
            assert len(curve) == 5 and curve[-1] == 1.0
            assert np.all(np.diff(curve) >= 0)
        assert r["svm"]["n_genuine"] == 30
        assert r["svm"]["converged"]
        json.dumps(r)

    def test_deterministic(self, small):
        corpus, r = small
        assert json.dumps(run_experiment(corpus, seed=2), sort_keys=True) == json.dumps(r, sort_keys=True)

    def test_cmc_csv(self, small, tmp_path):
        _, r = small
        write_cmc_csv(tmp_path / "c.csv", r)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "rank,ed,md,ge,fused"
        assert len(lines) == 6 and lines[1].startswith("1,")
