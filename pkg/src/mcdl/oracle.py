"""Randomized equivalence checks against exhaustive enumeration.

Each trial draws a small model, a tree-shaped subset, and a boundary
configuration, then compares the message-passing quantities (conditional
log-partition, moments, log-probability, sequential conditionals) with the
same quantities derived from the full brute-force conditional table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, Tractability, build_grid, make_graph, subset_geometry
from .model import PairwiseModel, enumerate_spin_configs
from .inference import (
    brute_force_conditional,
    conditional_log_partition,
    conditional_log_prob,
    conditional_moments,
    fold_boundary,
    sequential_conditionals,
)


def random_tree_graph(rng: np.random.Generator, node_count: int) -> Graph:
    """Uniform-ish random labeled tree (random attachment order)."""
    if node_count == 1:
        return make_graph(1, [])
    perm = rng.permutation(node_count)
    edges = []
    for i in range(1, node_count):
        j = int(rng.integers(0, i))
        edges.append((int(perm[i]), int(perm[j])))
    return make_graph(node_count, edges)


def random_instance(rng: np.random.Generator, max_subset: int = 12,
                    theta_scale: float = 1.0):
    """(model, geometry, x_boundary) with a tree-shaped subset of size
    <= max_subset."""
    while True:
        if rng.random() < 0.5:
            h = int(rng.integers(3, 7))
            w = int(rng.integers(3, 7))
            graph = build_grid(h, w)
        else:
            graph = random_tree_graph(rng, int(rng.integers(4, 20)))
        size = int(rng.integers(1, max_subset + 1))
        # Grow a random connected subset and keep it only if it induces a tree.
        start = int(rng.integers(0, graph.node_count))
        chosen = {start}
        frontier = list(graph.adjacency[start])
        while frontier and len(chosen) < size:
            pick = int(rng.integers(0, len(frontier)))
            node = frontier.pop(pick)
            if node in chosen:
                continue
            chosen.add(node)
            frontier.extend(graph.adjacency[node])
        geometry = subset_geometry(graph, sorted(chosen))
        if geometry.tractable is not Tractability.TREE:
            continue
        model = PairwiseModel(
            graph=graph,
            node_params=rng.uniform(-theta_scale, theta_scale, graph.node_count),
            edge_params=rng.uniform(-theta_scale, theta_scale, graph.edge_count),
        )
        xb = (2 * rng.integers(0, 2, geometry.boundary_size) - 1).astype(np.int8)
        return model, geometry, xb


def _all_statistics(geometry, x_boundary) -> np.ndarray:
    configs = enumerate_spin_configs(geometry.subset_size)
    xb = np.tile(np.asarray(x_boundary, dtype=np.int8), (configs.shape[0], 1))
    from .model import restricted_statistics_batch

    return restricted_statistics_batch(geometry, configs, xb)


def table_log_partition(model, geometry, x_boundary) -> float:
    """Conditional log-partition recomputed from raw restricted statistics."""
    from .model import component_params

    theta = component_params(geometry, model.node_params, model.edge_params)
    energies = _all_statistics(geometry, x_boundary) @ theta
    mx = energies.max()
    return float(mx + np.log(np.sum(np.exp(energies - mx))))


def table_moments(geometry, table: np.ndarray, x_boundary) -> np.ndarray:
    """Moments from a conditional table by direct summation."""
    return table @ _all_statistics(geometry, x_boundary)


@dataclass
class OracleOutcome:
    passed: int
    failed: int
    worst_error: float
    failures: list

    @property
    def ok(self) -> bool:
        return self.failed == 0


def run_oracle_suite(trials: int = 200, max_subset: int = 12, seed: int = 0,
                     tolerance: float = 1e-9, theta_scale: float = 1.0) -> OracleOutcome:
    rng = np.random.default_rng(seed)
    passed = failed = 0
    worst = 0.0
    failures = []
    for trial in range(trials):
        model, geometry, xb = random_instance(rng, max_subset, theta_scale)
        table = brute_force_conditional(model, geometry, xb)
        cond = fold_boundary(model, geometry, xb)
        m = geometry.subset_size

        errs = {}
        errs["log_partition"] = abs(
            conditional_log_partition(cond) - table_log_partition(model, geometry, xb)
        )
        errs["moments"] = float(np.max(np.abs(
            conditional_moments(cond) - table_moments(geometry, table, xb)
        )))
        configs = enumerate_spin_configs(m)
        pick = configs[int(rng.integers(0, configs.shape[0]))]
        code = int(np.sum((pick > 0) << np.arange(m)))
        errs["log_prob"] = abs(
            conditional_log_prob(model, geometry, pick, xb) - np.log(table[code])
        )
        dists = sequential_conditionals(cond, pick)
        chained = float(np.sum(np.log(dists[np.arange(m), (pick > 0).astype(int)])))
        errs["sequential"] = abs(chained - np.log(table[code]))

        err = max(errs.values())
        worst = max(worst, err)
        if err <= tolerance:
            passed += 1
        else:
            failed += 1
            failures.append({"trial": trial, "errors": errs,
                             "subset_size": m, "graph_nodes": model.graph.node_count})
    return OracleOutcome(passed=passed, failed=failed, worst_error=worst, failures=failures)
