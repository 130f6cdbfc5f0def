"""Draft with the sparse model, verify with the dense model, commit, repeat.

Both models share one physical :class:`KvCache`. A round starts with the
cache holding dense rows for every committed token except the newest one
(``last_token``), whose row is produced as part of the round:

1. ``draft``: gamma sparse steps append rows for ``last_token`` and the
   first gamma-1 drafts.
2. Those rows are rolled back and ``verify`` runs one dense pass over
   ``[last_token, *drafts]``, which appends gamma+1 dense rows and yields
   gamma+1 greedy predictions.
3. The longest prefix of drafts matching the predictions is accepted, the
   prediction right after it is the bonus token, and the cache is truncated
   so it covers exactly the committed tokens before the bonus.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

from .errors import CapacityError, RollbackError
from .model import (
    KvCache,
    ModelWeights,
    TokenSequence,
    decode_step_dense,
    decode_step_sparse,
    forward_parallel_dense,
    prefill,
)
from .selection import SparseSelection, build_selection

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodeRound:
    round_index: int
    draft_tokens: tuple[int, ...]
    n_accepted: int
    bonus_token: int
    cache_len: int

    @property
    def committed(self) -> tuple[int, ...]:
        return self.draft_tokens[: self.n_accepted] + (self.bonus_token,)

    def to_record(self) -> dict:
        return {
            "round": self.round_index,
            "draft": list(self.draft_tokens),
            "n_accepted": self.n_accepted,
            "bonus": self.bonus_token,
            "cache_len": self.cache_len,
        }


@dataclass
class DecodeStats:
    rounds: list[DecodeRound] = field(default_factory=list)
    total_drafted: int = 0
    total_accepted: int = 0
    # token-rows read: K + live textual/generated count per sparse step,
    # full cache length per dense verification pass
    io_sparse_units: int = 0
    io_dense_units: int = 0

    @property
    def acceptance_rate(self) -> float:
        if self.total_drafted == 0:
            return 0.0
        return self.total_accepted / self.total_drafted

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rounds"] = [r.to_record() for r in self.rounds]
        d["acceptance_rate"] = self.acceptance_rate
        return d


def rollback(cache: KvCache, to_length: int) -> None:
    if to_length < 0 or to_length > cache.length:
        raise RollbackError(f"cannot roll back a cache of length {cache.length} to {to_length}")
    cache.truncate(to_length)


def draft(
    weights: ModelWeights,
    cache: KvCache,
    selection: SparseSelection,
    last_token: int,
    gamma: int,
    stats: DecodeStats | None = None,
) -> list[int]:
    """Propose ``gamma`` tokens with the sparse model, appending ``gamma`` rows to ``cache``."""
    if gamma < 1:
        raise ValueError(f"gamma must be at least 1, got {gamma}")
    if stats is not None:
        live = cache.length - selection.m_v
        stats.io_sparse_units += gamma * (selection.size + live)
    tokens = []
    token = last_token
    for _ in range(gamma):
        token = decode_step_sparse(weights, cache, selection, token)
        tokens.append(token)
    return tokens


def verify(
    weights: ModelWeights,
    cache: KvCache,
    last_token: int,
    draft_tokens: Sequence[int],
    stats: DecodeStats | None = None,
) -> tuple[int, int]:
    """Check drafts against dense greedy predictions in one parallel pass.

    ``cache`` must cover every committed token before ``last_token``. On
    return it additionally covers ``last_token`` and the accepted drafts.
    """
    if len(draft_tokens) == 0:
        raise ValueError("verify needs a non-empty draft")
    start = cache.length
    if stats is not None:
        stats.io_dense_units += start
    predictions = forward_parallel_dense(weights, cache, [last_token, *draft_tokens])
    n = 0
    while n < len(draft_tokens) and draft_tokens[n] == predictions[n]:
        n += 1
    rollback(cache, start + n + 1)
    return n, predictions[n]


def _start(weights, input, prefilled):
    if prefilled is None:
        return prefill(weights, input)
    cache, record, first = prefilled
    if cache.length != input.m or record.m_v != input.m_v:
        raise ValueError("prefilled state does not match the input sequence")
    return cache.copy(), record, first


def _truncate_at_stop(tokens: list[int], stop_token: int | None) -> tuple[list[int], bool]:
    if stop_token is not None and stop_token in tokens:
        return tokens[: tokens.index(stop_token) + 1], True
    return tokens, False


class SpeculativeSession:
    """One sparse-to-dense decoding run over a prefilled cache.

    Sessions are independent; several may share one read-only
    :class:`ModelWeights` across threads.
    """

    def __init__(self, weights, input, k, gamma, prefilled=None, trace=None):
        if gamma < 1:
            raise ValueError(f"gamma must be at least 1, got {gamma}")
        if k < 0:
            raise ValueError(f"k must be non-negative, got {k}")
        self.weights = weights
        self.gamma = gamma
        self.trace = trace
        self.cache, record, first = _start(weights, input, prefilled)
        self.selection = build_selection(record, weights.config, k)
        self.output = [first]
        self.stats = DecodeStats()

    def step(self) -> DecodeRound:
        """Run one draft/verify round and commit its tokens."""
        start = self.cache.length
        last = self.output[-1]
        proposed = draft(self.weights, self.cache, self.selection, last, self.gamma, self.stats)
        rollback(self.cache, start)
        n, bonus = verify(self.weights, self.cache, last, proposed, self.stats)
        rnd = DecodeRound(len(self.stats.rounds), tuple(proposed), n, bonus, start)
        self.stats.rounds.append(rnd)
        self.stats.total_drafted += self.gamma
        self.stats.total_accepted += n
        if self.trace is not None:
            self.trace.write(json.dumps(rnd.to_record()) + "\n")
        log.debug("round %d: accepted %d/%d, bonus %d", rnd.round_index, n, self.gamma, bonus)
        self.output.extend(rnd.committed)
        return rnd


def generate(
    weights: ModelWeights,
    input: TokenSequence,
    k: int,
    gamma: int,
    max_new_tokens: int,
    stop_token: int | None = None,
    trace: IO[str] | None = None,
    prefilled=None,
) -> tuple[list[int], DecodeStats]:
    """Sparse-to-dense speculative greedy generation.

    Returns the same tokens as :func:`dense_generate` plus decoding stats.
    The first token comes from prefill; every round then commits the
    accepted drafts and one bonus token. ``prefilled`` may carry the result
    of ``prefill(weights, input)`` to skip recomputing it; it is not mutated.
    Trace records go to ``trace`` as JSON lines.
    """
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be at least 1")
    # the last round may draft past max_new_tokens before truncation
    needed = input.m + max_new_tokens + gamma
    if needed > weights.config.max_seq_len:
        raise CapacityError(
            f"input of {input.m} tokens with max_new_tokens={max_new_tokens} and gamma={gamma} "
            f"needs {needed} cache rows, max_seq_len is {weights.config.max_seq_len}"
        )
    session = SpeculativeSession(weights, input, k, gamma, prefilled, trace)
    output, stopped = _truncate_at_stop(session.output, stop_token)
    while not stopped and len(output) < max_new_tokens:
        session.step()
        output, stopped = _truncate_at_stop(session.output, stop_token)
    return output[:max_new_tokens], session.stats


def dense_generate(
    weights: ModelWeights,
    input: TokenSequence,
    max_new_tokens: int,
    stop_token: int | None = None,
    prefilled=None,
) -> list[int]:
    """Plain greedy decoding with the full cache, one token per step."""
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be at least 1")
    cache, _, token = _start(weights, input, prefilled)
    output = [token]
    while len(output) < max_new_tokens and token != stop_token:
        token = decode_step_dense(weights, cache, token)
        output.append(token)
    return output


def agreement_flags(
    weights: ModelWeights, input: TokenSequence, k: int, horizon: int, prefilled=None
) -> list[bool]:
    """Per-position sparse/dense agreement of single-step predictions along the dense trajectory."""
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    cache, record, token = _start(weights, input, prefilled)
    selection = build_selection(record, weights.config, k)
    flags = []
    for _ in range(horizon):
        start = cache.length
        sparse_next = decode_step_sparse(weights, cache, selection, token)
        rollback(cache, start)
        dense_next = decode_step_dense(weights, cache, token)
        flags.append(sparse_next == dense_next)
        token = dense_next
    return flags


def measure_agreement(
    weights: ModelWeights, input: TokenSequence, k: int, horizon: int, prefilled=None
) -> float:
    flags = agreement_flags(weights, input, k, horizon, prefilled)
    return sum(flags) / len(flags)
