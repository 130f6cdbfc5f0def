"""Experiment drivers behind the command line: agreement, single runs, sweeps."""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import cost
from .engine import dense_generate, generate, measure_agreement
from .errors import DecodingError, LosslessnessError
from .model import ModelConfig, build_model, prefill
from .workload import WorkloadSpec, make_tokens

# textual tokens + retained visual rows budget used for full-size models
KV_BUDGET = 1024
DEFAULT_GAMMA = 9
DEFAULT_MAX_NEW_TOKENS = 64

SWEEP_COLUMNS = (
    "gamma", "k", "alpha", "agreement", "modeled_speedup", "io_avg",
    "accepted", "drafted", "tokens", "error",
)


def default_k(m_v: int, m_t: int) -> int:
    """``KV_BUDGET - m_t`` retained visual rows when that is a real subset, else half the video."""
    k = KV_BUDGET - m_t
    if 0 <= k < m_v:
        return k
    return m_v // 2


def _prepare(model_cfg: ModelConfig, workload: WorkloadSpec, weights=None):
    if workload.vocab_size != model_cfg.vocab_size:
        raise DecodingError(
            f"workload vocab {workload.vocab_size} differs from model vocab {model_cfg.vocab_size}"
        )
    weights = weights if weights is not None else build_model(model_cfg)
    tokens = make_tokens(workload)
    return weights, tokens, prefill(weights, tokens)


def run_agreement_study(
    model_cfg: ModelConfig, workload: WorkloadSpec, k_list: Sequence[int], horizon: int
) -> list[dict]:
    """One row per distinct k (plus k = m_v) with the per-token agreement ratio."""
    ks = list(dict.fromkeys(k_list))
    if len(ks) != len(k_list):
        warnings.warn(f"duplicate k values dropped from {list(k_list)}", stacklevel=2)
    if workload.m_v not in ks:
        ks.append(workload.m_v)
    weights, tokens, state = _prepare(model_cfg, workload)
    rows = []
    for k in ks:
        rows.append({"k": k, "agreement": measure_agreement(weights, tokens, k, horizon, state)})
    full = next(r for r in rows if r["k"] == workload.m_v)
    if full["agreement"] != 1.0:
        raise LosslessnessError(f"full selection disagreed with dense decoding: {full['agreement']}")
    return rows


@dataclass
class ExperimentResult:
    model: dict
    workload: dict
    k: int
    gamma: int
    max_new_tokens: int
    acceptance_rate: float
    agreement: float
    tokens_generated: int
    accepted: int
    drafted: int
    rounds: int
    modeled_speedup: float
    io_average_per_token: float | None
    alpha_threshold: float
    io_sparse_units: int
    io_dense_units: int
    tokens: list[int] = field(default_factory=list)
    trace_path: str | None = None
    wall_time_s: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_speedup_experiment(
    model_cfg: ModelConfig,
    workload: WorkloadSpec,
    k: int | None = None,
    gamma: int = DEFAULT_GAMMA,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    trace_path: str | None = None,
    timing: bool = False,
) -> ExperimentResult:
    """Run one generation and report its acceptance and modeled I/O speedup.

    The output is compared against plain dense decoding first; a mismatch
    raises :class:`LosslessnessError` and nothing is reported. Wall time is
    only measured with ``timing=True`` so that default output is
    reproducible byte for byte.
    """
    weights, tokens, state = _prepare(model_cfg, workload)
    if k is None:
        k = default_k(workload.m_v, workload.m_t)
    reference = dense_generate(weights, tokens, max_new_tokens, prefilled=state)

    started = time.perf_counter()
    if trace_path is not None:
        with open(trace_path, "w") as trace:
            output, stats = generate(
                weights, tokens, k, gamma, max_new_tokens, trace=trace, prefilled=state
            )
    else:
        output, stats = generate(weights, tokens, k, gamma, max_new_tokens, prefilled=state)
    elapsed = time.perf_counter() - started
    if output != reference:
        raise LosslessnessError(
            f"speculative output diverged from dense decoding (k={k}, gamma={gamma})"
        )

    agreement = measure_agreement(weights, tokens, k, max_new_tokens, state)
    rep = cost.report(
        cost.CostModelInput(
            gamma=gamma,
            k=min(k, workload.m_v),
            m_v=workload.m_v,
            m_t=workload.m_t,
            alpha=stats.acceptance_rate,
        )
    )
    return ExperimentResult(
        model=asdict(model_cfg),
        workload=workload.to_dict(),
        k=k,
        gamma=gamma,
        max_new_tokens=max_new_tokens,
        acceptance_rate=stats.acceptance_rate,
        agreement=agreement,
        tokens_generated=len(output),
        accepted=stats.total_accepted,
        drafted=stats.total_drafted,
        rounds=len(stats.rounds),
        modeled_speedup=rep.modeled_speedup,
        io_average_per_token=rep.io_average_per_token,
        alpha_threshold=rep.alpha_threshold,
        io_sparse_units=stats.io_sparse_units,
        io_dense_units=stats.io_dense_units,
        tokens=output,
        trace_path=trace_path,
        wall_time_s=elapsed if timing else None,
    )


def _sweep_cell(weights, runs, gamma, k, max_new_tokens):
    accepted = drafted = produced = 0
    for tokens, state, reference in runs:
        output, stats = generate(weights, tokens, k, gamma, max_new_tokens, prefilled=state)
        if output != reference:
            raise LosslessnessError(f"output diverged from dense decoding (k={k}, gamma={gamma})")
        accepted += stats.total_accepted
        drafted += stats.total_drafted
        produced += len(output)
    return accepted, drafted, produced


def run_sweep(
    model_cfg: ModelConfig,
    workloads: WorkloadSpec | Sequence[WorkloadSpec],
    gamma_list: Sequence[int],
    k_list: Sequence[int],
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    jobs: int = 1,
) -> list[dict]:
    """Cross product of (gamma, k) runs, sorted by (gamma, k).

    With several workloads the acceptance counts are pooled before alpha
    and the modeled speedup are computed, and agreement is averaged. A
    failing cell records its error and the sweep moves on.
    """
    if not gamma_list or not k_list:
        raise ValueError("gamma_list and k_list must be non-empty")
    if isinstance(workloads, WorkloadSpec):
        workloads = [workloads]
    m_v, m_t = workloads[0].m_v, workloads[0].m_t
    if any((w.m_v, w.m_t) != (m_v, m_t) for w in workloads):
        raise ValueError("pooled workloads must share m_v and m_t")

    weights = build_model(model_cfg)
    runs = []
    for spec in workloads:
        _, tokens, state = _prepare(model_cfg, spec, weights)
        runs.append((tokens, state, dense_generate(weights, tokens, max_new_tokens, prefilled=state)))

    gammas = sorted(set(gamma_list))
    ks = sorted(set(k_list))
    agreement = {}
    for k in ks:
        try:
            values = [measure_agreement(weights, t, k, max_new_tokens, s) for t, s, _ in runs]
            agreement[k] = sum(values) / len(values)
        except DecodingError as exc:
            agreement[k] = exc

    cells = [(g, k) for g in gammas for k in ks]

    def evaluate(cell):
        g, k = cell
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(gamma=g, k=k)
        try:
            if isinstance(agreement[k], Exception):
                raise agreement[k]
            accepted, drafted, produced = _sweep_cell(weights, runs, g, k, max_new_tokens)
            alpha = accepted / drafted
            rep = cost.report(
                cost.CostModelInput(gamma=g, k=min(k, m_v), m_v=m_v, m_t=m_t, alpha=alpha)
            )
            row.update(
                alpha=alpha,
                agreement=agreement[k],
                modeled_speedup=rep.modeled_speedup,
                io_avg=rep.io_average_per_token if rep.io_average_per_token is not None else "",
                accepted=accepted,
                drafted=drafted,
                tokens=produced,
            )
        except (DecodingError, ValueError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(evaluate, cells))
    else:
        rows = [evaluate(c) for c in cells]
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row.get(c, "")) for c in columns})
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def is_unimodal(values: Sequence[float]) -> bool:
    """True when values rise to an interior peak and then fall, with no other turns."""
    peak = max(range(len(values)), key=values.__getitem__)
    if peak in (0, len(values) - 1):
        return False
    rising = all(a < b for a, b in zip(values[: peak], values[1 : peak + 1]))
    falling = all(a > b for a, b in zip(values[peak:], values[peak + 1 :]))
    return rising and falling
