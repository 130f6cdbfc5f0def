"""Text-guided top-K selection of visual KV rows, fixed at prefill time."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SelectionError
from .model import AttentionRecord, ModelConfig


@dataclass(frozen=True, eq=False)
class SparseSelection:
    """Retained visual positions per (layer, kv_head), each row sorted ascending.

    ``indices`` has shape (n_layers, n_kv_heads, min(k, m_v)).
    """

    indices: np.ndarray
    k: int
    m_v: int
    m_t: int

    def __post_init__(self):
        self.indices.setflags(write=False)

    @property
    def size(self) -> int:
        """Retained visual rows per head, ``min(k, m_v)``."""
        return self.indices.shape[2]

    def __eq__(self, other):
        if not isinstance(other, SparseSelection):
            return NotImplemented
        return (self.k, self.m_v, self.m_t) == (other.k, other.m_v, other.m_t) and np.array_equal(
            self.indices, other.indices
        )

    def to_json(self) -> str:
        entries = [
            {"layer": l, "kv_head": h, "indices": self.indices[l, h].tolist()}
            for l in range(self.indices.shape[0])
            for h in range(self.indices.shape[1])
        ]
        return json.dumps({"k": self.k, "m_v": self.m_v, "m_t": self.m_t, "entries": entries})

    @classmethod
    def from_json(cls, text: str) -> "SparseSelection":
        doc = json.loads(text)
        entries = doc["entries"]
        n_layers = 1 + max(e["layer"] for e in entries)
        n_heads = 1 + max(e["kv_head"] for e in entries)
        size = len(entries[0]["indices"])
        indices = np.zeros((n_layers, n_heads, size), dtype=np.int64)
        for e in entries:
            indices[e["layer"], e["kv_head"]] = e["indices"]
        return cls(indices=indices, k=doc["k"], m_v=doc["m_v"], m_t=doc["m_t"])


def score_visual_tokens(record: AttentionRecord, layer: int, kv_head: int) -> np.ndarray:
    """Group-summed mean attention that the textual queries pay to each visual position."""
    if not 0 <= layer < record.n_layers:
        raise IndexError(f"layer {layer} out of range for {record.n_layers} layers")
    if not 0 <= kv_head < record.n_kv_heads:
        raise IndexError(f"kv_head {kv_head} out of range for {record.n_kv_heads} kv heads")
    group_size = record.group_size
    probs = record.probs[layer]
    group = probs[kv_head * group_size:(kv_head + 1) * group_size, :, :record.m_v]
    return group.mean(axis=1).sum(axis=0)


def select_top_k(scores, k: int) -> list[int]:
    """Indices of the ``min(k, len(scores))`` largest scores, sorted ascending.

    Ties go to the lower index.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    k = min(k, scores.size)
    # stable sort on the negated scores keeps equal scores in index order
    order = np.argsort(-scores, kind="stable")[:k]
    return sorted(int(i) for i in order)


def build_selection(record: AttentionRecord, config: ModelConfig, k: int) -> SparseSelection:
    if record.n_layers != config.n_layers:
        raise IndexError(f"record has {record.n_layers} layers, config has {config.n_layers}")
    if k < 0:
        raise SelectionError(f"k must be non-negative, got {k}")
    size = min(k, record.m_v)
    indices = np.zeros((config.n_layers, config.n_kv_heads, size), dtype=np.int64)
    for l in range(config.n_layers):
        for h in range(config.n_kv_heads):
            scores = score_visual_tokens(record, l, h)
            indices[l, h] = select_top_k(scores, k)
    return SparseSelection(indices=indices, k=k, m_v=record.m_v, m_t=record.m_t)


def full_selection(config: ModelConfig, m_v: int, m_t: int) -> SparseSelection:
    indices = np.broadcast_to(
        np.arange(m_v, dtype=np.int64), (config.n_layers, config.n_kv_heads, m_v)
    ).copy()
    return SparseSelection(indices=indices, k=m_v, m_v=m_v, m_t=m_t)
