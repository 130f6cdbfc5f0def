"""A small deterministic decoder-only transformer with a KV cache.

Architecture: pre-norm blocks (RMSNorm), grouped-query attention with a
query bias and rotary position embeddings applied at absolute positions,
a SiLU MLP, a
final RMSNorm and an untied unembedding. Everything is float64.

The same weights serve two attention modes. Dense attention reads every
cached row; sparse attention reads a fixed subset of the visual rows plus
every row at or after the first textual position. Both modes go through
one block routine whose kernels are row-independent, which is what makes
parallel verification bit-identical to step-by-step decoding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, ConfigError, SelectionError

if TYPE_CHECKING:
    from .selection import SparseSelection

RMS_EPS = 1e-6
ROPE_BASE = 10000.0
# Init gains. The shared query bias makes every query favour the same keys,
# which gives the random model the stable heavy-hitter attention that
# text-guided selection relies on; the damped output projection keeps
# attention from swamping the residual stream.
QK_GAIN = 1.5
OUT_GAIN = 0.5
Q_BIAS = 4.0


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    n_q_heads: int = 8
    n_kv_heads: int = 2
    vocab_size: int = 512
    max_seq_len: int = 1024
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_q_heads", "n_kv_heads", "vocab_size", "max_seq_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_q_heads % self.n_kv_heads:
            raise ConfigError(
                f"n_q_heads={self.n_q_heads} is not a multiple of n_kv_heads={self.n_kv_heads}"
            )
        if self.d_model % self.n_q_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_q_heads={self.n_q_heads}")
        if self.d_head % 2:
            raise ConfigError(f"rotary embeddings need an even head size, got d_head={self.d_head}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_q_heads

    @property
    def group_size(self) -> int:
        return self.n_q_heads // self.n_kv_heads

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


@dataclass(frozen=True, eq=False)
class LayerWeights:
    attn_norm: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_norm: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray


@dataclass(frozen=True, eq=False)
class ModelWeights:
    config: ModelConfig
    embed: np.ndarray
    layers: tuple[LayerWeights, ...]
    final_norm: np.ndarray
    unembed: np.ndarray
    rope_cos: np.ndarray
    rope_sin: np.ndarray

    def arrays(self):
        yield self.embed
        for layer in self.layers:
            yield from (
                layer.attn_norm, layer.wq, layer.bq, layer.wk, layer.wv,
                layer.wo, layer.mlp_norm, layer.w_in, layer.w_out,
            )
        yield self.final_norm
        yield self.unembed

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self.arrays():
            h.update(arr.tobytes())
        return h.hexdigest()


def build_model(config: ModelConfig) -> ModelWeights:
    """Draw all parameters from a PCG64 generator seeded with ``config.seed``."""
    if not isinstance(config, ModelConfig):
        raise ConfigError("build_model expects a ModelConfig")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d, dh, f = config.d_model, config.d_head, config.d_ff

    def dense(n_in, n_out, gain=1.0):
        return np.ascontiguousarray(rng.standard_normal((n_in, n_out)) * (gain / np.sqrt(n_in)))

    def norm():
        return 1.0 + 0.1 * rng.standard_normal(d)

    embed = rng.standard_normal((config.vocab_size, d))
    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerWeights(
                attn_norm=norm(),
                wq=dense(d, config.n_q_heads * dh, QK_GAIN),
                bq=Q_BIAS * rng.standard_normal(config.n_q_heads * dh),
                wk=dense(d, config.n_kv_heads * dh, QK_GAIN),
                wv=dense(d, config.n_kv_heads * dh),
                wo=dense(config.n_q_heads * dh, d, OUT_GAIN),
                mlp_norm=norm(),
                w_in=dense(d, f),
                w_out=dense(f, d),
            )
        )
    final_norm = norm()
    unembed = dense(d, config.vocab_size)

    inv_freq = ROPE_BASE ** (-np.arange(0, dh, 2, dtype=np.float64) / dh)
    angles = np.outer(np.arange(config.max_seq_len, dtype=np.float64), inv_freq)
    return ModelWeights(
        config=config,
        embed=embed,
        layers=tuple(layers),
        final_norm=final_norm,
        unembed=unembed,
        rope_cos=np.cos(angles),
        rope_sin=np.sin(angles),
    )


@dataclass(frozen=True)
class TokenSequence:
    visual: tuple[int, ...]
    textual: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "visual", tuple(int(t) for t in self.visual))
        object.__setattr__(self, "textual", tuple(int(t) for t in self.textual))
        if not self.visual or not self.textual:
            raise ConfigError("a token sequence needs at least one visual and one textual token")

    @property
    def m_v(self) -> int:
        return len(self.visual)

    @property
    def m_t(self) -> int:
        return len(self.textual)

    @property
    def m(self) -> int:
        return self.m_v + self.m_t

    def ids(self) -> np.ndarray:
        return np.array(self.visual + self.textual, dtype=np.int64)

    def validate(self, config: ModelConfig) -> None:
        ids = self.ids()
        if ids.min() < 0 or ids.max() >= config.vocab_size:
            raise ConfigError(f"token ids must lie in [0, {config.vocab_size})")
        if self.m > config.max_seq_len:
            raise CapacityError(f"input length {self.m} exceeds max_seq_len={config.max_seq_len}")


class KvCache:
    """Preallocated per-layer, per-KV-head key/value rows indexed by position.

    Rows at or beyond ``length`` are kept zeroed, so a truncated cache is
    byte-identical to one that never held the discarded rows.
    """

    def __init__(self, config: ModelConfig):
        shape = (config.n_layers, config.n_kv_heads, config.max_seq_len, config.d_head)
        self.config = config
        self.keys = np.zeros(shape, dtype=np.float64)
        self.values = np.zeros(shape, dtype=np.float64)
        self.length = 0

    @property
    def capacity(self) -> int:
        return self.config.max_seq_len

    def reserve(self, n: int) -> None:
        if self.length + n > self.capacity:
            raise CapacityError(
                f"cache holds {self.length} of {self.capacity} rows, cannot add {n}"
            )

    def truncate(self, length: int) -> None:
        self.keys[:, :, length:self.length] = 0.0
        self.values[:, :, length:self.length] = 0.0
        self.length = length

    def copy(self) -> "KvCache":
        other = KvCache.__new__(KvCache)
        other.config = self.config
        other.keys = self.keys.copy()
        other.values = self.values.copy()
        other.length = self.length
        return other

    def __eq__(self, other):
        if not isinstance(other, KvCache):
            return NotImplemented
        return (
            self.length == other.length
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.values, other.values)
        )


@dataclass
class AttentionRecord:
    """Post-softmax attention of the textual queries captured during prefill.

    ``probs[l]`` has shape (q_heads, m_t, m): row ``i`` is the query at
    absolute position ``m_v + i`` and column ``j`` the key at position ``j``.
    """

    m_v: int
    m_t: int
    n_kv_heads: int
    probs: list[np.ndarray] = field(default_factory=list)

    @property
    def group_size(self) -> int:
        return self.probs[0].shape[0] // self.n_kv_heads

    @property
    def n_layers(self) -> int:
        return len(self.probs)


def _rope(x: np.ndarray, positions: np.ndarray, weights: ModelWeights) -> np.ndarray:
    cos = weights.rope_cos[positions][:, None, :]
    sin = weights.rope_sin[positions][:, None, :]
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _dense_index(config: ModelConfig, end: int) -> np.ndarray:
    return np.broadcast_to(np.arange(end, dtype=np.int64), (config.n_kv_heads, end))


def _sparse_index(selection: "SparseSelection", layer: int, end: int) -> np.ndarray:
    tail = np.arange(selection.m_v, end, dtype=np.int64)
    picked = selection.indices[layer]
    return np.concatenate([picked, np.broadcast_to(tail, (picked.shape[0], tail.size))], axis=1)


def _forward(
    weights: ModelWeights,
    cache: KvCache,
    tokens: np.ndarray,
    selection: "SparseSelection | None" = None,
    record_from: int = -1,
    logits_from: int = 0,
):
    """Run a block of new tokens at positions ``cache.length ...``.

    Appends one KV row per token, returns logits for rows ``>= logits_from``
    and, if ``record_from >= 0``, the attention weights of rows at or after
    that block offset.
    """
    config = weights.config
    rows = tokens.shape[0]
    cache.reserve(rows)
    start = cache.length
    end = start + rows
    positions = np.arange(start, end, dtype=np.int64)
    scale = 1.0 / np.sqrt(config.d_head)
    x = weights.embed[tokens]
    records = []
    for l, layer in enumerate(weights.layers):
        h = kernels.rmsnorm(x, layer.attn_norm, RMS_EPS)
        q = (kernels.linear(h, layer.wq) + layer.bq).reshape(rows, config.n_q_heads, config.d_head)
        k = kernels.linear(h, layer.wk).reshape(rows, config.n_kv_heads, config.d_head)
        v = kernels.linear(h, layer.wv).reshape(rows, config.n_kv_heads, config.d_head)
        q = _rope(q, positions, weights)
        k = _rope(k, positions, weights)
        cache.keys[l, :, start:end] = k.transpose(1, 0, 2)
        cache.values[l, :, start:end] = v.transpose(1, 0, 2)

        if selection is None:
            index = _dense_index(config, end)
        else:
            index = _sparse_index(selection, l, end)
        index = np.ascontiguousarray(index)
        counts = np.ascontiguousarray(
            np.stack([np.searchsorted(index[hk], positions, side="right") for hk in range(index.shape[0])])
        ).astype(np.int64)
        attn, probs = kernels.attend(
            np.ascontiguousarray(q), cache.keys[l], cache.values[l], index, counts, scale, record_from
        )
        if probs is not None:
            records.append(probs)
        x = x + kernels.linear(attn.reshape(rows, -1), layer.wo)
        h = kernels.rmsnorm(x, layer.mlp_norm, RMS_EPS)
        x = x + kernels.linear(np.ascontiguousarray(_silu(kernels.linear(h, layer.w_in))), layer.w_out)
    cache.length = end
    tail = np.ascontiguousarray(x[logits_from:])
    logits = kernels.linear(kernels.rmsnorm(tail, weights.final_norm, RMS_EPS), weights.unembed)
    return logits, records


def greedy(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ``np.argmax`` already resolves ties to the lowest id."""
    return np.argmax(logits, axis=-1)


def _check_token(weights: ModelWeights, token: int) -> None:
    if not 0 <= token < weights.config.vocab_size:
        raise ConfigError(f"token id {token} outside vocabulary of {weights.config.vocab_size}")


def prefill(weights: ModelWeights, input: TokenSequence):
    """Encode the whole input, returning ``(cache, record, first_token)``."""
    input.validate(weights.config)
    cache = KvCache(weights.config)
    logits, probs = _forward(
        weights, cache, input.ids(), record_from=input.m_v, logits_from=input.m - 1
    )
    record = AttentionRecord(
        m_v=input.m_v,
        m_t=input.m_t,
        n_kv_heads=weights.config.n_kv_heads,
        probs=[p.transpose(1, 0, 2).copy() for p in probs]
    )
    return cache, record, int(greedy(logits[-1]))


def decode_step_dense(weights: ModelWeights, cache: KvCache, token: int) -> int:
    _check_token(weights, token)
    if cache.length == 0:
        raise ConfigError("decode step needs a prefilled cache")
    logits, _ = _forward(weights, cache, np.array([token], dtype=np.int64))
    return int(greedy(logits[0]))


def decode_step_sparse(
    weights: ModelWeights, cache: KvCache, selection: "SparseSelection", token: int
) -> int:
    """One decoding step that reads only the selected visual rows.

    Textual rows and every row appended after prefill stay visible.
    """
    _check_token(weights, token)
    check_selection(weights.config, cache, selection)
    logits, _ = _forward(weights, cache, np.array([token], dtype=np.int64), selection=selection)
    return int(greedy(logits[0]))


def forward_parallel_dense(weights: ModelWeights, cache: KvCache, tokens: Sequence[int]) -> list[int]:
    """Dense greedy predictions after each of ``tokens`` in a single pass."""
    if len(tokens) == 0:
        raise ValueError("forward_parallel_dense needs at least one token")
    for t in tokens:
        _check_token(weights, int(t))
    logits, _ = _forward(weights, cache, np.asarray(tokens, dtype=np.int64))
    return [int(t) for t in greedy(logits)]


def check_selection(config: ModelConfig, cache: KvCache, selection: "SparseSelection") -> None:
    idx = selection.indices
    if idx.shape[:2] != (config.n_layers, config.n_kv_heads):
        raise SelectionError(
            f"selection covers {idx.shape[:2]} (layers, kv_heads), model has "
            f"{(config.n_layers, config.n_kv_heads)}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= selection.m_v):
        raise SelectionError(f"selection index outside visual range [0, {selection.m_v})")
    if cache.length < selection.m_v:
        raise SelectionError("cache is shorter than the visual prefix the selection refers to")
