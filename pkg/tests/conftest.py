import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparse_to_dense.model import ModelConfig, TokenSequence, build_model, prefill  # noqa: E402
from sparse_to_dense.workload import WorkloadSpec, make_tokens  # noqa: E402

SMALL = ModelConfig(n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, vocab_size=64, max_seq_len=128, seed=7)


def small_config(seed=7, **overrides):
    fields = dict(n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, vocab_size=64, max_seq_len=128)
    fields.update(overrides)
    return ModelConfig(seed=seed, **fields)


def random_sequence(rng, m_v, m_t, vocab):
    return TokenSequence(rng.integers(0, vocab, m_v).tolist(), rng.integers(0, vocab, m_t).tolist())


@pytest.fixture(scope="session")
def small_weights():
    return build_model(SMALL)


@pytest.fixture(scope="session")
def small_seq():
    return make_tokens(WorkloadSpec(m_v=16, m_t=4, vocab_size=64, workload_seed=7))


@pytest.fixture(scope="session")
def toy_weights():
    return build_model(ModelConfig(seed=0))


@pytest.fixture(scope="session")
def toy_seq():
    return make_tokens(WorkloadSpec(workload_seed=0))


@pytest.fixture(scope="session")
def toy_prefilled(toy_weights, toy_seq):
    return prefill(toy_weights, toy_seq)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
