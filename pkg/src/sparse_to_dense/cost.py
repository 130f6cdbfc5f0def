"""KV-cache I/O cost of sparse-to-dense decoding versus plain dense decoding.

All quantities are in token-rows: one unit is one cached key/value row
read for one token position. Layer and head counts multiply every term
equally and cancel in the ratios.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

from .errors import DecodingError


class CostModelError(DecodingError, ValueError):
    pass


@dataclass(frozen=True)
class CostModelInput:
    gamma: int
    k: int
    m_v: int
    m_t: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.gamma < 1:
            raise CostModelError(f"gamma must be at least 1, got {self.gamma}")
        if self.m_v < 1:
            raise CostModelError(f"m_v must be at least 1, got {self.m_v}")
        if self.m_t < 0:
            raise CostModelError(f"m_t must be non-negative, got {self.m_t}")
        if not 0 <= self.k <= self.m_v:
            raise CostModelError(f"k must lie in [0, m_v={self.m_v}], got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise CostModelError(f"alpha must lie in [0, 1], got {self.alpha}")


def io_sparse(inp: CostModelInput) -> int:
    """Rows read while drafting one round: gamma steps over K visual + m_t textual rows."""
    return inp.gamma * (inp.k + inp.m_t)


def io_dense(inp: CostModelInput) -> int:
    return inp.m_v + inp.m_t


def io_total(inp: CostModelInput) -> int:
    return io_sparse(inp) + io_dense(inp)


def io_vanilla(inp: CostModelInput) -> int:
    """Per-token rows read by plain dense decoding."""
    return inp.m_v + inp.m_t


def io_average(inp: CostModelInput) -> float:
    """Rows read per accepted token, counting ``alpha * gamma`` accepted tokens per round."""
    if inp.alpha == 0:
        raise CostModelError("average I/O is undefined when no drafted token is accepted")
    return io_total(inp) / (inp.alpha * inp.gamma)


def alpha_threshold(inp: CostModelInput) -> float:
    """Acceptance rate at which ``io_average`` equals the vanilla per-token cost."""
    return (inp.k + inp.m_t) / (inp.m_v + inp.m_t) + 1.0 / inp.gamma


def modeled_speedup(inp: CostModelInput) -> float:
    return io_vanilla(inp) / io_average(inp)


def io_average_with_bonus(inp: CostModelInput) -> float:
    """Variant that also credits the bonus token: ``alpha * gamma + 1`` tokens per round."""
    return io_total(inp) / (inp.alpha * inp.gamma + 1)


def modeled_speedup_with_bonus(inp: CostModelInput) -> float:
    return io_vanilla(inp) / io_average_with_bonus(inp)


def expected_alpha(p: float, gamma: int) -> float:
    """Acceptance rate if each drafted token independently matches with probability ``p``.

    A round accepts ``sum_{i=1..gamma} p**i`` tokens in expectation.
    """
    if not 0.0 <= p <= 1.0:
        raise CostModelError(f"p must lie in [0, 1], got {p}")
    return sum(p**i for i in range(1, gamma + 1)) / gamma


def effective_io(cache_lengths: Iterable[int], gamma: int, k: int, m_v: int) -> tuple[int, int]:
    """Sparse and dense rows read over a run, using each round's live cache length.

    ``cache_lengths`` holds the committed cache length at the start of each
    round. The sparse term charges ``gamma * (K + live)`` where ``live`` is
    everything after the visual prefix; the dense term charges the whole
    cache once per round. Round 0 reproduces the closed form exactly.
    """
    sparse = dense = 0
    for length in cache_lengths:
        sparse += gamma * (k + length - m_v)
        dense += length
    return sparse, dense


@dataclass(frozen=True)
class CostReport:
    gamma: int
    k: int
    m_v: int
    m_t: int
    alpha: float
    io_sparse: int
    io_dense: int
    io_total: int
    io_average_per_token: float | None
    io_vanilla_per_token: int
    modeled_speedup: float
    alpha_threshold: float
    profitable: bool
    io_average_with_bonus: float
    modeled_speedup_with_bonus: float
    units: str = "token-rows"

    def to_dict(self) -> dict:
        return asdict(self)


def report(inp: CostModelInput) -> CostReport:
    """Evaluate every formula for one input.

    At ``alpha == 0`` the average is undefined; it is reported as ``None``
    and the speedup as 0, its limit as alpha goes to 0.
    """
    if inp.alpha > 0:
        average = io_average(inp)
        speedup = modeled_speedup(inp)
    else:
        average = None
        speedup = 0.0
    return CostReport(
        gamma=inp.gamma,
        k=inp.k,
        m_v=inp.m_v,
        m_t=inp.m_t,
        alpha=inp.alpha,
        io_sparse=io_sparse(inp),
        io_dense=io_dense(inp),
        io_total=io_total(inp),
        io_average_per_token=average,
        io_vanilla_per_token=io_vanilla(inp),
        modeled_speedup=speedup,
        alpha_threshold=alpha_threshold(inp),
        profitable=average is not None and average < io_vanilla(inp),
        io_average_with_bonus=io_average_with_bonus(inp),
        modeled_speedup_with_bonus=modeled_speedup_with_bonus(inp),
    )
