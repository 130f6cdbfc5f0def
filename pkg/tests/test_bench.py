import csv
import io
import json

import pytest

from sparse_to_dense import bench
from sparse_to_dense.errors import DecodingError, LosslessnessError
from sparse_to_dense.model import ModelConfig
from sparse_to_dense.workload import WorkloadSpec, make_tokens

CFG = ModelConfig(n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, vocab_size=64, max_seq_len=256, seed=3)
WL = WorkloadSpec(m_v=64, m_t=8, vocab_size=64, workload_seed=5)

# greedy continuation and agreements cross-checked with tests/oracle.py
TOKENS = [53, 36, 29, 20, 13, 49, 62, 40, 18, 36, 44, 61, 9, 53, 62, 55, 61, 37, 48, 18, 36, 44, 49, 3]
AGREEMENT = {0: 13 / 24, 8: 18 / 24, 16: 20 / 24, 32: 22 / 24, 64: 1.0}


def test_default_k():
    assert bench.default_k(10_000, 100) == 924
    assert bench.default_k(512, 32) == 256
    assert bench.default_k(64, 8) == 32


def test_workloads_are_deterministic():
    assert make_tokens(WL) == make_tokens(WL)
    other = WorkloadSpec(m_v=64, m_t=8, vocab_size=64, workload_seed=6)
    assert make_tokens(WL) != make_tokens(other)


def test_block_workload_repeats_frames():
    seq = make_tokens(WorkloadSpec(m_v=256, m_t=4, workload_seed=1))
    v = seq.visual
    same = sum(a == b for a, b in zip(v, v[16:])) / (len(v) - 16)
    assert same > 0.7
    uniform = make_tokens(WorkloadSpec(m_v=256, m_t=4, workload_seed=1, visual_structure="uniform")).visual
    assert sum(a == b for a, b in zip(uniform, uniform[16:])) / 240 < 0.05


class TestAgreementStudy:
    def test_values(self):
        rows = bench.run_agreement_study(CFG, WL, [0, 8, 16, 32], 24)
        assert {r["k"]: r["agreement"] for r in rows} == AGREEMENT

    def test_duplicates_warn(self):
        with pytest.warns(UserWarning):
            rows = bench.run_agreement_study(CFG, WL, [8, 8, 64], 6)
        assert [r["k"] for r in rows] == [8, 64]

    def test_full_selection_checked(self, monkeypatch):
        monkeypatch.setattr(bench, "measure_agreement", lambda *a, **kw: 0.5)
        with pytest.raises(LosslessnessError):
            bench.run_agreement_study(CFG, WL, [8], 6)

    def test_vocab_mismatch(self):
        with pytest.raises(DecodingError):
            bench.run_agreement_study(CFG, WorkloadSpec(m_v=8, m_t=2, vocab_size=65), [1], 3)


class TestSpeedupExperiment:
    def test_frozen(self):
        r = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=24)
        assert r.tokens == TOKENS
        assert (r.accepted, r.drafted, r.rounds) == (16, 28, 7)
        assert r.agreement == AGREEMENT[16]
        assert r.wall_time_s is None

    def test_byte_identical(self):
        a = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=24).to_json()
        b = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=24).to_json()
        assert a == b

    def test_timing_opt_in(self):
        r = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=8, timing=True)
        assert r.wall_time_s is not None and r.wall_time_s >= 0

    def test_default_k_used(self):
        r = bench.run_speedup_experiment(CFG, WL, gamma=2, max_new_tokens=8)
        assert r.k == bench.default_k(WL.m_v, WL.m_t)

    def test_trace_file(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        r = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=24, trace_path=str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == r.rounds
        assert sum(json.loads(l)["n_accepted"] for l in lines) == r.accepted

    def test_mismatch_raises(self, monkeypatch):
        real = bench.generate

        def corrupt(*args, **kwargs):
            out, stats = real(*args, **kwargs)
            return [(out[0] + 1) % 64] + out[1:], stats

        monkeypatch.setattr(bench, "generate", corrupt)
        with pytest.raises(LosslessnessError):
            bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=8)


class TestSweep:
    def test_single_cell_matches_run(self):
        (row,) = bench.run_sweep(CFG, WL, [4], [16], max_new_tokens=24)
        r = bench.run_speedup_experiment(CFG, WL, k=16, gamma=4, max_new_tokens=24)
        assert row["alpha"] == r.acceptance_rate
        assert row["modeled_speedup"] == r.modeled_speedup
        assert row["agreement"] == r.agreement
        assert row["error"] == ""

    def test_order_and_columns(self):
        rows = bench.run_sweep(CFG, WL, [3, 1], [16, 8], max_new_tokens=10)
        assert [(r["gamma"], r["k"]) for r in rows] == [(1, 8), (1, 16), (3, 8), (3, 16)]
        assert all(tuple(r) == bench.SWEEP_COLUMNS for r in rows)

    def test_jobs_do_not_change_results(self):
        serial = bench.run_sweep(CFG, WL, [2, 5], [8, 32], max_new_tokens=12)
        parallel = bench.run_sweep(CFG, WL, [2, 5], [8, 32], max_new_tokens=12, jobs=3)
        assert serial == parallel

    def test_errors_recorded(self):
        rows = bench.run_sweep(CFG, WL, [2], [-1, 8], max_new_tokens=6)
        assert rows[0]["error"].startswith("SelectionError")
        assert rows[1]["error"] == ""

    def test_pooled_workloads(self):
        wls = [WorkloadSpec(m_v=64, m_t=8, vocab_size=64, workload_seed=s) for s in (5, 6)]
        (pooled,) = bench.run_sweep(CFG, wls, [4], [16], max_new_tokens=12)
        singles = [bench.run_sweep(CFG, w, [4], [16], max_new_tokens=12)[0] for w in wls]
        assert pooled["accepted"] == sum(r["accepted"] for r in singles)
        assert pooled["drafted"] == sum(r["drafted"] for r in singles)
        assert pooled["alpha"] == pooled["accepted"] / pooled["drafted"]

    def test_alpha_grows_with_k(self):
        wls = [WorkloadSpec(m_v=64, m_t=8, vocab_size=64, workload_seed=s) for s in range(3)]
        rows = bench.run_sweep(CFG, wls, [4], [0, 16, 64], max_new_tokens=24)
        alphas = [r["alpha"] for r in rows]
        assert alphas == sorted(alphas)
        assert alphas[-1] == 1.0

    def test_empty_lists(self):
        with pytest.raises(ValueError):
            bench.run_sweep(CFG, WL, [], [1])


def test_csv():
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": ""}]
    text = bench.rows_to_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert parsed == [{"a": "1", "b": repr(0.1 + 0.2), "c": ""}]


@pytest.mark.parametrize(
    "values, expected",
    [
        ([1, 2, 3, 2, 1], True),
        ([1, 3, 2], True),
        ([1, 2, 3], False),
        ([3, 2, 1], False),
        ([1, 3, 2, 3, 1], False),
        ([1, 2, 2, 1], False),
    ],
)
def test_is_unimodal(values, expected):
    assert bench.is_unimodal(values) is expected
