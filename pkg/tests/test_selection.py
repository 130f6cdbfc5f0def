import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL, random_sequence, small_config
from oracle import brute_force_selection, reference_forward
from sparse_to_dense.model import AttentionRecord, build_model, prefill
from sparse_to_dense.selection import (
    SparseSelection,
    build_selection,
    full_selection,
    score_visual_tokens,
    select_top_k,
)


def record_from(probs_per_layer, m_v, m_t, n_kv_heads):
    return AttentionRecord(m_v=m_v, m_t=m_t, n_kv_heads=n_kv_heads, probs=list(probs_per_layer))


def uniform_probs(hq, m_v, m_t):
    m = m_v + m_t
    probs = np.zeros((hq, m_t, m))
    for i in range(m_t):
        probs[:, i, : m_v + i + 1] = 1.0 / (m_v + i + 1)
    return probs


class TestSelectTopK:
    def test_example(self):
        assert select_top_k([0.1, 0.5, 0.3], 2) == [1, 2]

    def test_zero(self):
        assert select_top_k([0.1, 0.5, 0.3], 0) == []

    def test_ties_prefer_lower_index(self):
        assert select_top_k([0.2, 0.2, 0.2], 2) == [0, 1]
        assert select_top_k([0.1, 0.3, 0.3, 0.3], 2) == [1, 2]

    def test_k_larger_than_input(self):
        assert select_top_k([0.4, 0.1], 5) == [0, 1]

    def test_negative_k(self):
        with pytest.raises(ValueError):
            select_top_k([0.1], -1)

    @settings(max_examples=60, deadline=None)
    @given(
        scores=st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40),
        k=st.integers(0, 45),
    )
    def test_matches_full_sort(self, scores, k):
        ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        assert select_top_k(scores, k) == sorted(ranked[:k])

    @settings(max_examples=40, deadline=None)
    @given(
        scores=st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30, unique=True),
        k=st.integers(0, 30),
    )
    def test_nested_in_k(self, scores, k):
        assert set(select_top_k(scores, k)) <= set(select_top_k(scores, k + 1))

    @settings(max_examples=40, deadline=None)
    @given(
        scores=st.lists(st.floats(0.01, 1, allow_nan=False), min_size=1, max_size=30, unique=True),
        k=st.integers(0, 30),
        c=st.sampled_from([0.5, 2.0, 4.0, 1024.0]),
    )
    def test_scale_invariant(self, scores, k, c):
        # powers of two keep the scaled values exactly ordered
        assert select_top_k(np.array(scores) * c, k) == select_top_k(scores, k)

    @settings(max_examples=40, deadline=None)
    @given(
        scores=st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30, unique=True),
        k=st.integers(0, 30),
        seed=st.integers(0, 1000),
    )
    def test_permutation_equivariant(self, scores, k, seed):
        perm = np.random.default_rng(seed).permutation(len(scores))
        permuted = np.asarray(scores)[perm]
        picked = select_top_k(permuted, k)
        assert sorted(int(perm[i]) for i in picked) == select_top_k(scores, k)


class TestScores:
    def test_uniform_rows(self):
        m_v, m_t, hq, hk = 6, 1, 4, 2
        rec = record_from([uniform_probs(hq, m_v, m_t)], m_v, m_t, hk)
        np.testing.assert_allclose(score_visual_tokens(rec, 0, 0), hq // hk / (m_v + m_t))

    def test_concentrated_attention(self):
        m_v, m_t, hq, hk = 8, 3, 2, 1
        probs = np.zeros((hq, m_t, m_v + m_t))
        probs[:, :, 5] = 1.0
        rec = record_from([probs], m_v, m_t, hk)
        sel = build_selection(rec, small_config(n_layers=1, n_q_heads=2, n_kv_heads=1, d_model=8), 1)
        assert sel.indices[0, 0].tolist() == [5]

    def test_heads_scored_independently(self):
        m_v, m_t, hq, hk = 5, 2, 4, 2
        probs = np.zeros((hq, m_t, m_v + m_t))
        probs[:2, :, 1] = 1.0  # group 0 looks at position 1
        probs[2:, :, 3] = 1.0  # group 1 looks at position 3
        rec = record_from([probs], m_v, m_t, hk)
        assert select_top_k(score_visual_tokens(rec, 0, 0), 1) == [1]
        assert select_top_k(score_visual_tokens(rec, 0, 1), 1) == [3]
        # changing group 1 leaves group 0's scores alone
        before = score_visual_tokens(rec, 0, 0).copy()
        probs[2:, :, 3] = 0.0
        probs[2:, :, 0] = 1.0
        assert np.array_equal(score_visual_tokens(rec, 0, 0), before)

    def test_textual_columns_ignored(self):
        m_v, m_t = 4, 2
        probs = np.zeros((2, m_t, m_v + m_t))
        probs[:, :, m_v:] = 0.5
        probs[:, :, 2] = 0.01
        rec = record_from([probs], m_v, m_t, 1)
        assert score_visual_tokens(rec, 0, 0).shape == (m_v,)
        assert select_top_k(score_visual_tokens(rec, 0, 0), 1) == [2]

    def test_index_errors(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        with pytest.raises(IndexError):
            score_visual_tokens(rec, SMALL.n_layers, 0)
        with pytest.raises(IndexError):
            score_visual_tokens(rec, 0, SMALL.n_kv_heads)
        with pytest.raises(IndexError):
            score_visual_tokens(rec, -1, 0)


class TestBuildSelection:
    def test_shape_and_order(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        sel = build_selection(rec, SMALL, 5)
        assert sel.indices.shape == (SMALL.n_layers, SMALL.n_kv_heads, 5)
        assert (np.diff(sel.indices, axis=-1) > 0).all()
        assert sel.indices.min() >= 0 and sel.indices.max() < small_seq.m_v

    def test_k_clamped(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        sel = build_selection(rec, SMALL, small_seq.m_v + 10)
        assert sel.size == small_seq.m_v
        assert sel.k == small_seq.m_v + 10
        assert np.array_equal(sel.indices, full_selection(SMALL, small_seq.m_v, small_seq.m_t).indices)

    def test_read_only(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        sel = build_selection(rec, SMALL, 3)
        with pytest.raises(ValueError):
            sel.indices[0, 0, 0] = 1

    def test_layer_mismatch(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        with pytest.raises(IndexError):
            build_selection(rec, small_config(n_layers=3), 3)

    @pytest.mark.parametrize("case", range(25))
    def test_matches_brute_force(self, case):
        rng = np.random.default_rng(1000 + case)
        cfg = small_config(
            seed=int(rng.integers(0, 2**31)),
            n_layers=int(rng.integers(1, 4)),
            n_q_heads=4,
            n_kv_heads=int(rng.choice([1, 2, 4])),
        )
        weights = build_model(cfg)
        m_v, m_t = int(rng.integers(2, 30)), int(rng.integers(1, 8))
        k = int(rng.integers(0, m_v + 3))
        seq = random_sequence(rng, m_v, m_t, cfg.vocab_size)
        _, rec, _ = prefill(weights, seq)
        _, maps = reference_forward(weights, seq.ids())
        expected = brute_force_selection(maps, m_v, m_t, cfg.n_kv_heads, k)
        assert np.array_equal(build_selection(rec, cfg, k).indices, expected)


class TestSerialization:
    def test_round_trip(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        sel = build_selection(rec, SMALL, 6)
        assert SparseSelection.from_json(sel.to_json()) == sel

    def test_entry_layout(self, small_weights, small_seq):
        _, rec, _ = prefill(small_weights, small_seq)
        sel = build_selection(rec, SMALL, 4)
        doc = json.loads(sel.to_json())
        assert len(doc["entries"]) == SMALL.n_layers * SMALL.n_kv_heads
        for entry in doc["entries"]:
            assert set(entry) == {"layer", "kv_head", "indices"}
            assert entry["indices"] == sel.indices[entry["layer"], entry["kv_head"]].tolist()

    def test_equality(self):
        a = full_selection(SMALL, 4, 2)
        assert a == full_selection(SMALL, 4, 2)
        assert a != full_selection(SMALL, 5, 2)
