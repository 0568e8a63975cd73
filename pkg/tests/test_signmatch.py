"""Sign-matching attention: representative signs, Hamming scoring, top-K
selection, the causal two-phase pick, and attention equivalences."""

import numpy as np
import pytest

from slimformer import (OpCounter, PlanError, SignMatchConfig, Tensor,
                        causal_select, full_attention, representative_sign,
                        score_keys, select_topk, sign_match_attention)


class TestRepresentativeSign:
    def test_majority_count_example(self):
        q = np.array([[1.0, -2.0], [3.0, -4.0], [-5.0, 6.0]])
        np.testing.assert_array_equal(representative_sign(q), [1, -1])

    def test_all_zero_counts_as_negative(self):
        np.testing.assert_array_equal(representative_sign(np.zeros((4, 3))), [-1, -1, -1])

    def test_exact_tie_resolves_positive(self):
        q = np.array([[1.0], [-1.0]])
        np.testing.assert_array_equal(representative_sign(q), [1])


class TestScoreKeys:
    def test_matching_pattern_distance_zero(self):
        val = np.array([1, -1, 1])
        key = np.array([[2.0, -0.5, 3.0]])
        np.testing.assert_array_equal(score_keys(key, val), [0])

    def test_opposite_pattern_distance_d(self):
        val = np.array([1, -1, 1])
        key = np.array([[-2.0, 0.5, -3.0]])
        np.testing.assert_array_equal(score_keys(key, val), [3])

    def test_zero_entries_count_as_negative_sign(self):
        val = np.array([1, -1])
        key = np.array([[0.0, 0.0]])
        np.testing.assert_array_equal(score_keys(key, val), [1])

    def test_matches_brute_force_counter(self, rng):
        k = rng.normal(size=(10, 6))
        val = representative_sign(rng.normal(size=(10, 6)))
        got = score_keys(k, val)
        for i in range(10):
            mism = sum(1 for j in range(6)
                       if (1 if k[i, j] > 0 else -1) != val[j])
            assert got[i] == mism


class TestSelectTopK:
    def test_basic(self):
        assert select_topk([2, 0, 1], 2) == [1, 2]

    def test_stable_tie_break(self):
        assert select_topk([0, 0, 1], 1) == [0]

    def test_k_equals_n_sorted_by_distance_then_index(self):
        assert select_topk([3, 1, 2], 3) == [1, 2, 0]

    def test_k_too_large(self):
        with pytest.raises(PlanError):
            select_topk([1, 2], 3)


class TestCausalSelect:
    def test_equal_distances_two_phase(self):
        sel = causal_select(np.zeros(8, dtype=int), 8, 4)
        assert sorted(sel) == [0, 1, 2, 3]
        assert sel[0] in (0, 1)  # first pick comes from the earliest quarter

    def test_late_favoring_distances_still_pick_early(self):
        dist = np.array([9, 9, 0, 0, 0, 0, 0, 0])
        sel = causal_select(dist, 8, 4)
        assert any(i < 2 for i in sel)

    def test_k_too_large(self):
        with pytest.raises(PlanError):
            causal_select(np.zeros(4, dtype=int), 4, 5)

    def test_non_causal_dispatch_uses_plain_topk(self, rng):
        q = Tensor(rng.normal(size=(8, 4)))
        k = Tensor(rng.normal(size=(8, 4)))
        v = Tensor(rng.normal(size=(8, 4)))
        dist = score_keys(k.data, representative_sign(q.data))
        expected_rows = sorted(select_topk(dist, 3))
        out = sign_match_attention(q, k, v, SignMatchConfig(3, causal=False))
        gathered = full_attention(q, Tensor(k.data[expected_rows]),
                                  Tensor(v.data[expected_rows]))
        np.testing.assert_array_equal(out.data, gathered.data)


class TestSignMatchAttention:
    def test_k_equals_n_exact_full_attention(self, rng):
        q = Tensor(rng.normal(size=(6, 4)))
        k = Tensor(rng.normal(size=(6, 4)))
        v = Tensor(rng.normal(size=(6, 4)))
        out = sign_match_attention(q, k, v, SignMatchConfig(6))
        full = full_attention(q, k, v)
        np.testing.assert_array_equal(out.data, full.data)

    def test_single_position(self, rng):
        q = Tensor(rng.normal(size=(1, 4)))
        k = Tensor(rng.normal(size=(1, 4)))
        v = Tensor(rng.normal(size=(1, 4)))
        out = sign_match_attention(q, k, v, SignMatchConfig(1))
        np.testing.assert_allclose(out.data, v.data, atol=1e-12)

    def test_gather_then_full_attention_oracle(self, rng):
        q = Tensor(rng.normal(size=(8, 4)))
        k = Tensor(rng.normal(size=(8, 4)))
        v = Tensor(rng.normal(size=(8, 4)))
        out = sign_match_attention(q, k, v, SignMatchConfig(4))
        rows = sorted(select_topk(score_keys(k.data, representative_sign(q.data)), 4))
        oracle = full_attention(q, Tensor(k.data[rows]), Tensor(v.data[rows]))
        np.testing.assert_array_equal(out.data, oracle.data)

    def test_causal_star_starvation_zeroes_rows(self, rng):
        # keys crafted so selection prefers late positions; early queries starve
        d = 4
        q = Tensor(np.ones((8, d)))
        kdata = -np.ones((8, d))
        kdata[6:] = 1.0  # only the last two keys match the representative sign
        k = Tensor(kdata)
        v = Tensor(rng.normal(size=(8, d)))
        counter = OpCounter()
        cfg = SignMatchConfig(2, causal=True)
        out = sign_match_attention(q, k, v, cfg, counter=counter)
        sel = sorted(causal_select(score_keys(kdata, representative_sign(q.data)), 8, 2))
        starved = [i for i in range(8) if all(j > i for j in sel)]
        assert counter.starved_queries == len(starved)
        for i in starved:
            np.testing.assert_array_equal(out.data[i], 0.0)

    def test_causal_k4_no_starvation_after_first_early_pick(self, rng):
        for trial in range(10):
            gen = np.random.default_rng(trial)
            q = Tensor(gen.normal(size=(16, 4)))
            k = Tensor(gen.normal(size=(16, 4)))
            sel = causal_select(score_keys(k.data, representative_sign(q.data)), 16, 4)
            first_early = min(i for i in sel if i < 4)
            assert all(any(j <= i for j in sel) for i in range(first_early, 16))

    def test_batched_matches_per_sequence(self, rng):
        q = rng.normal(size=(3, 8, 4))
        k = rng.normal(size=(3, 8, 4))
        v = rng.normal(size=(3, 8, 4))
        batched = sign_match_attention(Tensor(q), Tensor(k), Tensor(v),
                                       SignMatchConfig(4))
        for b in range(3):
            single = sign_match_attention(Tensor(q[b]), Tensor(k[b]), Tensor(v[b]),
                                          SignMatchConfig(4))
            np.testing.assert_allclose(batched.data[b], single.data, atol=1e-12)


class TestLinearContract:
    def test_score_stage_count_formula(self):
        counter = OpCounter()
        gen = np.random.default_rng(0)
        q = Tensor(gen.normal(size=(8, 4)))
        k = Tensor(gen.normal(size=(8, 4)))
        v = Tensor(gen.normal(size=(8, 4)))
        sign_match_attention(q, k, v, SignMatchConfig(2), counter=counter)
        assert counter.score_stage == 8 * 4 + 8 * 4  # sign extraction + Hamming

    def test_count_doubles_with_n(self):
        def count(n):
            counter = OpCounter()
            gen = np.random.default_rng(1)
            q = Tensor(gen.normal(size=(n, 4)))
            k = Tensor(gen.normal(size=(n, 4)))
            v = Tensor(gen.normal(size=(n, 4)))
            sign_match_attention(q, k, v, SignMatchConfig(2), counter=counter)
            return counter.total

        assert count(16) == 2 * count(8)
        assert count(32) == 2 * count(16)


class TestPermutationCovariance:
    def test_k_equals_n_permutation_invariant_output(self, rng):
        q = Tensor(rng.normal(size=(6, 4)))
        kdata = rng.normal(size=(6, 4))
        vdata = rng.normal(size=(6, 4))
        perm = np.array([3, 1, 5, 0, 2, 4])
        out = sign_match_attention(q, Tensor(kdata), Tensor(vdata), SignMatchConfig(6))
        out_p = sign_match_attention(q, Tensor(kdata[perm]), Tensor(vdata[perm]),
                                     SignMatchConfig(6))
        np.testing.assert_allclose(out.data, out_p.data, atol=1e-12)

    def test_selection_depends_only_on_contents(self):
        # distinct distances by construction, so index tie-breaks never fire
        val = np.ones(5, dtype=np.int64)
        kdata = np.ones((5, 5))
        for i in range(5):
            kdata[i, :i] = -1.0  # key i has Hamming distance exactly i
        perm = np.array([4, 0, 3, 1, 2])
        sel = select_topk(score_keys(kdata, val), 3)
        sel_p = select_topk(score_keys(kdata[perm], val), 3)
        assert sorted(perm[sel_p]) == sorted(sel) == [0, 1, 2]
