import numpy as np
import pytest

from ddsfraud.datagen import GenConfig, generate
from ddsfraud.graph import build_static_graph


@pytest.fixture(scope="session")
def small_gen():
    """Small but structurally complete synthetic dataset."""
    return GenConfig(n_snapshots=10, legit_orders_per_snapshot=20, n_rings=5,
                     ring_size=10, ring_span=6, feature_dim=6, seed=11)


@pytest.fixture(scope="session")
def small_records(small_gen):
    return generate(small_gen)


@pytest.fixture(scope="session")
def small_graph(small_records):
    return build_static_graph(small_records)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
