import numpy as np
import pytest

from slexp import AdaptedProcess, build_tree, trinomial_kernels, trinomial_phi


def walk(tree, increments):
    """Process with the given per-branch increments at every step."""
    inc = np.asarray(increments, dtype=float)
    vals = [np.zeros(1)]
    for _ in range(tree.horizon):
        vals.append((vals[-1][:, None] + inc).reshape(-1))
    return AdaptedProcess.from_levels(tree, vals)


@pytest.fixture
def tri():
    tree = build_tree(2, 3)
    return tree, trinomial_kernels(tree, 0.1)


@pytest.fixture
def B(tri):
    return walk(tri[0], [1, 0, -1])


@pytest.fixture
def QV(tri):
    return walk(tri[0], [1, 0, 1])


@pytest.fixture
def phi(tri):
    return trinomial_phi(tri[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
