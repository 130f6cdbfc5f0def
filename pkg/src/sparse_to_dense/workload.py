"""Synthetic visual + textual token workloads."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import TokenSequence

FRAME_LEN = 16
FRAME_CHANGE = 0.125


class VisualStructure(str, enum.Enum):
    UNIFORM = "uniform"
    BLOCK = "block"


@dataclass(frozen=True)
class WorkloadSpec:
    m_v: int = 512
    m_t: int = 32
    vocab_size: int = 512
    workload_seed: int = 0
    visual_structure: VisualStructure = VisualStructure.BLOCK

    def __post_init__(self):
        object.__setattr__(self, "visual_structure", VisualStructure(self.visual_structure))
        if self.m_v < 1 or self.m_t < 1:
            raise ConfigError("m_v and m_t must be at least 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be at least 1")

    def to_dict(self) -> dict:
        return {
            "m_v": self.m_v,
            "m_t": self.m_t,
            "vocab_size": self.vocab_size,
            "workload_seed": self.workload_seed,
            "visual_structure": self.visual_structure.value,
        }


def make_tokens(spec: WorkloadSpec) -> TokenSequence:
    """Draw a token sequence deterministically from ``spec.workload_seed``.

    ``block`` mode builds the visual part from 16-token frames where each
    frame repeats the previous one with 1/8 of its tokens redrawn, so
    nearby frames share most tokens the way consecutive video frames do.
    ``uniform`` draws every visual token independently.
    """
    rng = np.random.Generator(np.random.PCG64(spec.workload_seed))
    if spec.visual_structure is VisualStructure.UNIFORM:
        visual = rng.integers(0, spec.vocab_size, spec.m_v)
    else:
        frames = []
        frame = rng.integers(0, spec.vocab_size, FRAME_LEN)
        for _ in range(-(-spec.m_v // FRAME_LEN)):
            frames.append(frame)
            frame = frame.copy()
            redraw = rng.random(FRAME_LEN) < FRAME_CHANGE
            frame[redraw] = rng.integers(0, spec.vocab_size, int(redraw.sum()))
        visual = np.concatenate(frames)[: spec.m_v]
    textual = rng.integers(0, spec.vocab_size, spec.m_t)
    return TokenSequence(visual=visual.tolist(), textual=textual.tolist())
