import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (brute_interval, brute_report, fixture_corpus, frames, lcs_oracle, nltk_bleu,
                     rouge_oracle)
from synccap.data import Segment
from synccap.metrics import (Interval, bleu, element_of, evaluate_sync, iop, iou, lcs_length,
                             predicted_interval, rouge_l)


# -- BLEU / ROUGE-L ------------------------------------------------------------
class TestBleu:
    def test_identity(self):
        s = "a person walks forward then sits down".split()
        assert bleu([s], [[s]], 4) == pytest.approx(1.0, abs=1e-12)

    def test_clipping(self):
        assert bleu([["a", "a", "b"]], [[["a", "b"]]], 1) == pytest.approx(2 / 3, abs=1e-12)

    def test_brevity_penalty(self):
        assert bleu([["a"]], [[list("abcd")]], 1) == pytest.approx(math.exp(-3), abs=1e-12)

    def test_empty_candidate_scores_zero(self):
        assert bleu([[]], [[["a", "b"]]], 1) == 0.0

    def test_bad_n(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [[["a"]]], 5)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_fixture_corpus_matches_nltk(self, n):
        cases = fixture_corpus()
        for c, r in cases:
            if c:
                assert bleu([c], [[r]], n) == pytest.approx(nltk_bleu([c], [[r]], n), abs=1e-6)
        cands = [c for c, _ in cases]
        refs = [[r] for _, r in cases]
        assert bleu(cands, refs, n) == pytest.approx(nltk_bleu(cands, refs, n), abs=1e-6)

    def test_multiple_references(self):
        c = "a person walks".split()
        refs = [["a", "person", "runs"], ["the", "person", "walks", "fast"]]
        assert bleu([c], [refs], 2) == pytest.approx(nltk_bleu([c], [refs], 2), abs=1e-9)


class TestRouge:
    def test_hand_value(self):
        assert rouge_l(["a", "b", "c"], ["a", "c"]) == pytest.approx(0.8, abs=1e-12)

    def test_identity_and_disjoint(self):
        assert rouge_l(["a", "b"], ["a", "b"]) == 1.0
        assert rouge_l(["a"], ["b"]) == 0.0
        assert rouge_l([], []) == 0.0

    def test_fixture_corpus_matches_oracle(self):
        for c, r in fixture_corpus():
            assert rouge_l(c, r) == pytest.approx(rouge_oracle(c, r), abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("abcd"), max_size=9), st.lists(st.sampled_from("abcd"), max_size=9))
    def test_lcs(self, a, b):
        assert lcs_length(a, b) == lcs_oracle(tuple(a), tuple(b))


# -- interval metrics -----------------------------------------------------------
class TestIntervals:
    def test_hand_overlap(self):
        pred, gt = Interval(17, 45), Interval(10, 40)
        assert iou(pred, gt) == pytest.approx(24 / 36, abs=1e-12)
        assert iop(pred, gt) == pytest.approx(24 / 29, abs=1e-12)

    def test_identity_and_disjoint(self):
        assert iou(Interval(3, 9), Interval(3, 9)) == iop(Interval(3, 9), Interval(3, 9)) == 1.0
        assert iou(Interval(0, 2), Interval(5, 9)) == iop(Interval(0, 2), Interval(5, 9)) == 0.0

    def test_anchor_frames(self):
        gt = Interval(41, 59)
        b = np.zeros(80)
        b[44] = 1.0
        assert element_of(b, gt)
        b = np.zeros(80)
        b[21] = 1.0
        assert not element_of(b, gt)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            Interval(5, 4)

    def test_random_cases_match_frame_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            T = int(rng.integers(1, 60))
            beta = rng.dirichlet(np.full(T, 0.3))
            s = int(rng.integers(0, T))
            gt = Interval(s, int(rng.integers(s, T)))
            a = int(rng.integers(0, T))
            pred = Interval(a, int(rng.integers(a, T)))
            P, G = frames(pred), frames(gt)
            assert iou(pred, gt) == len(P & G) / len(P | G)
            assert iop(pred, gt) == len(P & G) / len(P)
            assert element_of(beta, gt) == (max(range(T), key=lambda i: (beta[i], -i)) in G)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
    def test_iou_le_iop(self, a, b, c, d):
        p, g = Interval(min(a, b), max(a, b)), Interval(min(c, d), max(c, d))
        assert iou(p, g) <= iop(p, g) <= 1
        assert iou(p, g) == iou(g, p)

    def test_argmax_invariant_under_monotone_rescale(self):
        beta = np.random.default_rng(2).dirichlet(np.ones(20))
        gt = Interval(5, 9)
        assert element_of(beta, gt) == element_of(np.exp(3 * beta), gt)


class TestPredictedInterval:
    def test_point_mass(self):
        b = np.zeros(10)
        b[6] = 1.0
        assert predicted_interval(b, 0.9) == Interval(6, 6)

    def test_uniform(self):
        iv = predicted_interval(np.full(10, 0.1), 0.5)
        assert iv.length == 5 and 0 in iv

    def test_triangular_symmetric(self):
        b = np.array([0, 1, 2, 3, 4, 5, 4, 3, 2, 1, 0], dtype=float)
        b /= b.sum()
        assert predicted_interval(b, 0.75) == Interval(3, 7)

    def test_tau_range(self):
        with pytest.raises(ValueError):
            predicted_interval(np.ones(3) / 3, 0.0)

    def test_matches_brute_force_and_is_minimal(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            T = int(rng.integers(1, 30))
            beta = rng.dirichlet(np.full(T, 0.5))
            tau = float(rng.uniform(0.05, 1.0))
            iv = predicted_interval(beta, tau)
            assert iv == brute_interval(beta, tau)
            assert beta[iv.start:iv.end + 1].sum() >= tau - 1e-12
            a = int(np.argmax(beta))
            for s, e in ((iv.start + 1, iv.end), (iv.start, iv.end - 1)):
                if s <= e:
                    assert not (s <= a <= e and beta[s:e + 1].sum() >= tau - 1e-12)


# -- corpus sync report ------------------------------------------------------------
class TestEvaluateSync:
    keywords = {"walk": "walks", "turn": "turns", "sit": "sits"}

    def test_perfect_one_hot(self):
        beta = np.zeros((4, 30))
        beta[1, 5] = beta[3, 20] = 1.0
        beta[0, 0] = beta[2, 0] = 1.0
        segs = [Segment("walk", (1, 1), (0, 12)), Segment("turn", (3, 3), (13, 29))]
        rep = evaluate_sync([beta], [["a", "walks", "then", "turns"]], [segs], self.keywords)
        assert rep.element_of == 1.0 and rep.iop == 1.0

    def test_missing_word_is_a_miss(self):
        beta = np.full((2, 10), 0.1)
        segs = [Segment("sit", (0, 1), (0, 9))]
        rep = evaluate_sync([beta], [["a", "walks"]], [segs], self.keywords)
        assert (rep.iou, rep.iop, rep.element_of) == (0.0, 0.0, 0.0)
        assert rep.words[0].step is None

    def test_empty_annotations(self):
        with pytest.raises(ValueError):
            evaluate_sync([], [], [], self.keywords)

    def test_random_corpus_matches_brute_force(self):
        rng = np.random.default_rng(11)
        words = ["a", "walks", "turns", "sits", "then"]
        maps, toks, anns = [], [], []
        for _ in range(1000):
            T = int(rng.integers(4, 40))
            n = int(rng.integers(2, 7))
            toks.append(list(rng.choice(words, size=n)))
            maps.append(rng.dirichlet(np.full(T, 0.4), size=n))
            cut = sorted(rng.choice(np.arange(1, T), size=2, replace=False))
            labels = rng.choice(list(self.keywords), size=3)
            bounds = [(0, cut[0] - 1), (cut[0], cut[1] - 1), (cut[1], T - 1)]
            anns.append([Segment(str(lab), (0, 0), b) for lab, b in zip(labels, bounds)])
        rep = evaluate_sync(maps, toks, anns, self.keywords, tau=0.75)
        exp = brute_report(maps, toks, anns, self.keywords, 0.75)
        assert [(w.iou, w.iop, w.element_of) for w in rep.words] == exp
        means = np.array(exp, dtype=float).mean(axis=0)
        np.testing.assert_allclose([rep.iou, rep.iop, rep.element_of], means, rtol=0, atol=1e-12)

    def test_words_csv_header(self):
        beta = np.eye(3)
        rep = evaluate_sync([beta], [["a", "walks", "x"]], [[Segment("walk", (1, 1), (0, 2))]],
                            self.keywords)
        head = rep.words_csv().splitlines()[0]
        assert head.split(",")[2:] == ["word", "step", "argmax_frame", "pred_start", "pred_end",
                                       "gt_start", "gt_end", "iou", "iop", "element_of"]
