"""Sparse-to-dense speculative decoding on a toy decoder-only transformer.

A draft model that is the same network restricted to a text-guided top-K
subset of its visual KV cache proposes tokens; the full-cache model checks
them in one parallel pass. Greedy output is identical to plain decoding.
"""

from .cost import CostModelInput, CostReport, alpha_threshold, io_average, modeled_speedup
from .engine import (
    DecodeRound,
    DecodeStats,
    SpeculativeSession,
    dense_generate,
    draft,
    generate,
    measure_agreement,
    rollback,
    verify,
)
from .errors import (
    CapacityError,
    ConfigError,
    DecodingError,
    LosslessnessError,
    RollbackError,
    SelectionError,
)
from .kernels import BACKEND
from .model import (
    AttentionRecord,
    KvCache,
    ModelConfig,
    ModelWeights,
    TokenSequence,
    build_model,
    decode_step_dense,
    decode_step_sparse,
    forward_parallel_dense,
    prefill,
)
from .selection import SparseSelection, build_selection, score_visual_tokens, select_top_k
from .workload import WorkloadSpec, make_tokens

__all__ = [
    "AttentionRecord", "BACKEND", "CapacityError", "ConfigError", "CostModelInput",
    "CostReport", "DecodeRound", "DecodeStats", "DecodingError", "KvCache",
    "LosslessnessError", "ModelConfig", "ModelWeights", "RollbackError",
    "SelectionError", "SparseSelection", "SpeculativeSession", "TokenSequence",
    "WorkloadSpec", "alpha_threshold", "build_model", "build_selection",
    "decode_step_dense", "decode_step_sparse", "dense_generate", "draft",
    "forward_parallel_dense", "generate", "io_average", "make_tokens",
    "measure_agreement", "modeled_speedup", "prefill", "rollback",
    "score_visual_tokens", "select_top_k", "verify",
]
