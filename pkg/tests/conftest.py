"""Shared fixtures and independent enumeration oracles for the test suite.

The oracles here deliberately avoid the package's own vectorized paths:
they loop over configurations one by one and accumulate probabilities
directly, so every comparison is against a second, independently written
route.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

import mcdl


def iter_configs(n):
    """All spin configurations on n sites as tuples, enumeration order
    matching mcdl.enumerate_spin_configs (site j's spin from bit j)."""
    for code in range(1 << n):
        yield tuple(1 if (code >> j) & 1 else -1 for j in range(n))


def energy_of(model: mcdl.PairwiseModel, x) -> float:
    """<theta, t(x)> accumulated term by term."""
    total = 0.0
    for i in range(model.graph.node_count):
        total += model.node_params[i] * x[i]
    for k, (u, v) in enumerate(model.graph.edges):
        total += model.edge_params[k] * x[u] * x[v]
    return total


def joint_table(model: mcdl.PairwiseModel) -> dict:
    """Exact joint probability of every full configuration."""
    weights = {}
    for x in iter_configs(model.graph.node_count):
        weights[x] = math.exp(energy_of(model, x))
    z = sum(weights.values())
    return {x: w / z for x, w in weights.items()}


def conditional_from_joint(model, geometry, x_boundary):
    """p(x_U | x_boundary) via the joint table (marginalize everything else)."""
    joint = joint_table(model)
    n = model.graph.node_count
    subset = [int(v) for v in geometry.subset_nodes]
    boundary = [int(v) for v in geometry.boundary_nodes]
    table = {}
    for x, p in joint.items():
        if any(x[b] != x_boundary[i] for i, b in enumerate(boundary)):
            continue
        key = tuple(x[s] for s in subset)
        table[key] = table.get(key, 0.0) + p
    z = sum(table.values())
    return {k: v / z for k, v in table.items()}


def random_spins(rng, size):
    return (2 * rng.integers(0, 2, size) - 1).astype(np.int8)


@pytest.fixture(scope="session")
def grid3() -> mcdl.Graph:
    return mcdl.build_grid(3, 3)


@pytest.fixture(scope="session")
def grid5() -> mcdl.Graph:
    return mcdl.build_grid(5, 5)


@pytest.fixture(scope="session")
def path3() -> mcdl.Graph:
    return mcdl.make_graph(3, [(0, 1), (1, 2)])


@pytest.fixture(scope="session")
def small_row_samples():
    """Middle-row samples of a 5x5 grid at edge parameter 0.4."""
    graph = mcdl.build_grid(5, 5)
    model = mcdl.homogeneous_model(graph, 0.4)
    geometry = mcdl.resolve_subset(graph, "middle-row")
    samples = mcdl.sample_sequence(model, geometry, n=80, burn_in=300, spacing=5, seed=11)
    return model, geometry, samples
