"""Pairwise exponential-family (Ising-type) model over spin variables.

Variables take values in {-1, +1}.  The sufficient statistics are the spin
at each node and the spin product across each edge, so a model is a graph
plus one real parameter per node and per edge.  All log quantities are in
nats; bit conversions happen only at reporting and codec boundaries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, SubsetGeometry, build_grid

BRUTE_FORCE_LIMIT = 16


def as_spins(values, size: int | None = None) -> np.ndarray:
    """Validate and coerce a {-1,+1} configuration to an int8 array."""
    arr = np.asarray(values)
    if size is not None and arr.size != size:
        raise ValueError(f"configuration has {arr.size} values, expected {size}")
    out = arr.astype(np.int8, copy=False)
    if not np.all(np.abs(out) == 1):
        raise ValueError("configuration values must be -1 or +1")
    return out


@dataclass(frozen=True, eq=False)
class PairwiseModel:
    """Exponential parameters for a pairwise spin model on a graph.

    ``node_params[i]`` scales the spin statistic at node i and
    ``edge_params[k]`` scales the product statistic on ``graph.edges[k]``.
    """

    graph: Graph
    node_params: np.ndarray
    edge_params: np.ndarray

    def __post_init__(self):
        np_arr = np.asarray(self.node_params, dtype=np.float64).reshape(-1)
        ep_arr = np.asarray(self.edge_params, dtype=np.float64).reshape(-1)
        if np_arr.size == 1:
            np_arr = np.full(self.graph.node_count, float(np_arr[0]))
        if ep_arr.size == 1:
            ep_arr = np.full(self.graph.edge_count, float(ep_arr[0]))
        if np_arr.size != self.graph.node_count:
            raise ValueError("node_params length does not match node count")
        if ep_arr.size != self.graph.edge_count:
            raise ValueError("edge_params length does not match edge count")
        if not (np.all(np.isfinite(np_arr)) and np.all(np.isfinite(ep_arr))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "node_params", np_arr)
        object.__setattr__(self, "edge_params", ep_arr)

    def digest(self) -> int:
        """64-bit hash of the canonical serialization (graph + parameters)."""
        h = hashlib.blake2b(digest_size=8)
        h.update(b"MCDL-MODEL")
        h.update(np.int64(self.graph.node_count).tobytes())
        h.update(np.asarray(self.graph.edges, dtype=np.int64).tobytes())
        h.update(self.node_params.tobytes())
        h.update(self.edge_params.tobytes())
        return int.from_bytes(h.digest(), "big")


def homogeneous_model(graph: Graph, edge_param: float, node_param: float = 0.0) -> PairwiseModel:
    return PairwiseModel(
        graph=graph,
        node_params=np.full(graph.node_count, float(node_param)),
        edge_params=np.full(graph.edge_count, float(edge_param)),
    )


def restricted_statistic(geometry: SubsetGeometry, x_subset, x_boundary) -> np.ndarray:
    """Statistic components with at least one argument in the subset.

    Layout matches the geometry: subset-node spins, then interior-edge
    products, then crossing-edge products (subset spin times the fixed
    boundary spin).  Boundary-to-boundary edges never enter.
    """
    xu = as_spins(x_subset, geometry.subset_size)
    xb = as_spins(x_boundary, geometry.boundary_size)
    return restricted_statistics_batch(geometry, xu[None, :], xb[None, :])[0]


def restricted_statistics_batch(geometry: SubsetGeometry, x_subset: np.ndarray,
                                x_boundary: np.ndarray) -> np.ndarray:
    """restricted_statistic for a (B, |U|) / (B, |boundary|) batch of rows."""
    xu = x_subset.astype(np.float64)
    xb = x_boundary.astype(np.float64)
    il = geometry.interior_local
    cu, cb = geometry.crossing_local
    return np.concatenate(
        [xu, xu[:, il[:, 0]] * xu[:, il[:, 1]], xu[:, cu] * xb[:, cb]], axis=1
    )


def component_params(geometry: SubsetGeometry, node_params, edge_params) -> np.ndarray:
    """Gather the model parameters for the geometry's component layout."""
    node_params = np.asarray(node_params, dtype=np.float64)
    edge_params = np.asarray(edge_params, dtype=np.float64)
    return np.concatenate([
        node_params[geometry.subset_nodes],
        edge_params[geometry.interior_edge_ids],
        edge_params[geometry.crossing_edge_ids],
    ])


def enumerate_spin_configs(n: int) -> np.ndarray:
    """All 2^n spin configurations, one per row; bit j of the row index set
    means node j is +1."""
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{n} nodes is too large to enumerate (limit {BRUTE_FORCE_LIMIT})")
    codes = np.arange(1 << n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def config_code(x) -> int:
    """Row index of a configuration in the enumerate_spin_configs order."""
    x = np.asarray(x)
    bits = (x > 0).astype(np.int64)
    return int(np.sum(bits << np.arange(bits.size)))


def _total_statistic(model: PairwiseModel, configs: np.ndarray) -> np.ndarray:
    """<theta, t(x)> for a batch of full configurations (rows)."""
    x = configs.astype(np.float64)
    energy = x @ model.node_params
    for k, (u, v) in enumerate(model.graph.edges):
        energy += model.edge_params[k] * x[:, u] * x[:, v]
    return energy


def joint_log_partition_bruteforce(model: PairwiseModel) -> float:
    """Log normalizer by exhaustive summation over all configurations."""
    n = model.graph.node_count
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"graph with {n} nodes is too large to enumerate")
    energies = _total_statistic(model, enumerate_spin_configs(n))
    mx = float(np.max(energies))
    return mx + float(np.log(np.sum(np.exp(energies - mx))))


def joint_log_prob_bruteforce(model: PairwiseModel, x) -> float:
    """log p(x) with the normalizer computed by exhaustive enumeration.

    Only usable on small graphs; this is the ground-truth oracle that the
    conditional inference routines are validated against.
    """
    x = as_spins(x, model.graph.node_count)
    energy = float(_total_statistic(model, x[None, :])[0])
    return energy - joint_log_partition_bruteforce(model)


def site_conditional(model: PairwiseModel, x, i: int) -> float:
    """P(X_i = +1 | neighbor values in x).

    Depends on x only through the neighbors of i (Markov property).
    """
    x = np.asarray(x)
    field_sum = model.node_params[i]
    edge_idx = model.graph.edge_index()
    for j in model.graph.adjacency[i]:
        xj = int(x[j])
        if abs(xj) != 1:
            raise ValueError(f"neighbor {j} of node {i} is unassigned")
        u, v = (i, j) if i < j else (j, i)
        field_sum += model.edge_params[edge_idx[(u, v)]] * xj
    return 1.0 / (1.0 + np.exp(-2.0 * field_sum))


@dataclass(frozen=True, eq=False)
class ParameterTying:
    """Linear tying of the full (node, edge) parameter vectors to a smaller
    free vector.

    ``node_assign[i]`` / ``edge_assign[k]`` give the free-parameter index
    controlling that component, or -1 for frozen components, whose values
    come from ``base_node`` / ``base_edge``.  Expansion broadcasts each free
    value onto its controlled set; the gradient pullback sums full-gradient
    entries within each controlled set (chain rule for a linear map).
    """

    free_count: int
    node_assign: np.ndarray
    edge_assign: np.ndarray
    base_node: np.ndarray
    base_edge: np.ndarray
    free_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        used = set(self.node_assign[self.node_assign >= 0].tolist())
        used |= set(self.edge_assign[self.edge_assign >= 0].tolist())
        if used and (min(used) < 0 or max(used) >= self.free_count):
            raise ValueError("assignment index out of range")
        if used != set(range(self.free_count)):
            raise ValueError("every free parameter must control at least one component")

    def expand(self, free) -> tuple[np.ndarray, np.ndarray]:
        """Full (node_params, edge_params) for a free-parameter vector."""
        free = np.asarray(free, dtype=np.float64).reshape(-1)
        if free.size != self.free_count:
            raise ValueError(f"free vector has {free.size} entries, expected {self.free_count}")
        node = self.base_node.copy()
        edge = self.base_edge.copy()
        nm = self.node_assign >= 0
        em = self.edge_assign >= 0
        node[nm] = free[self.node_assign[nm]]
        edge[em] = free[self.edge_assign[em]]
        return node, edge

    def pullback(self, node_grad, edge_grad) -> np.ndarray:
        """Free-parameter gradient from a full-parameter gradient."""
        out = np.zeros(self.free_count, dtype=np.float64)
        nm = self.node_assign >= 0
        em = self.edge_assign >= 0
        np.add.at(out, self.node_assign[nm], np.asarray(node_grad, dtype=np.float64)[nm])
        np.add.at(out, self.edge_assign[em], np.asarray(edge_grad, dtype=np.float64)[em])
        return out

    def collapse(self, node_params, edge_params) -> np.ndarray:
        """Free vector whose expansion best matches the given full params
        (mean over each controlled set)."""
        node_params = np.asarray(node_params, dtype=np.float64)
        edge_params = np.asarray(edge_params, dtype=np.float64)
        total = np.zeros(self.free_count)
        count = np.zeros(self.free_count)
        nm = self.node_assign >= 0
        em = self.edge_assign >= 0
        np.add.at(total, self.node_assign[nm], node_params[nm])
        np.add.at(count, self.node_assign[nm], 1.0)
        np.add.at(total, self.edge_assign[em], edge_params[em])
        np.add.at(count, self.edge_assign[em], 1.0)
        return total / count


def homogeneous_tying(graph: Graph, frozen_node_value: float = 0.0) -> ParameterTying:
    """One shared free scalar for every edge; node parameters frozen."""
    return ParameterTying(
        free_count=1,
        node_assign=np.full(graph.node_count, -1, dtype=np.int64),
        edge_assign=np.zeros(graph.edge_count, dtype=np.int64),
        base_node=np.full(graph.node_count, float(frozen_node_value)),
        base_edge=np.zeros(graph.edge_count),
        free_names=("edge",),
    )


def free_tying(graph: Graph, geometry: SubsetGeometry,
               base: tuple[np.ndarray, np.ndarray] | None = None) -> ParameterTying:
    """One free parameter per component of the geometry's index set
    (subset nodes, interior edges, crossing edges); everything else frozen."""
    base_node = np.zeros(graph.node_count) if base is None else np.asarray(base[0], dtype=np.float64).copy()
    base_edge = np.zeros(graph.edge_count) if base is None else np.asarray(base[1], dtype=np.float64).copy()
    node_assign = np.full(graph.node_count, -1, dtype=np.int64)
    edge_assign = np.full(graph.edge_count, -1, dtype=np.int64)
    names = []
    k = 0
    for n in geometry.subset_nodes:
        node_assign[n] = k
        names.append(f"node:{int(n)}")
        k += 1
    for eid in np.concatenate([geometry.interior_edge_ids, geometry.crossing_edge_ids]):
        u, v = graph.edges[int(eid)]
        edge_assign[eid] = k
        names.append(f"edge:{u}-{v}")
        k += 1
    return ParameterTying(
        free_count=k,
        node_assign=node_assign,
        edge_assign=edge_assign,
        base_node=base_node,
        base_edge=base_edge,
        free_names=tuple(names),
    )


def tying_from_map(graph: Graph, spec: dict,
                   base: tuple[np.ndarray, np.ndarray] | None = None) -> ParameterTying:
    """Explicit tying map.

    ``spec`` has optional "nodes" and "edges" objects.  Keys are a node
    index, an "u-v" edge key, or "*" for all; values are a free-parameter
    name (string) or a frozen constant (number).  Unmentioned components
    stay frozen at their base values.
    """
    base_node = np.zeros(graph.node_count) if base is None else np.asarray(base[0], dtype=np.float64).copy()
    base_edge = np.zeros(graph.edge_count) if base is None else np.asarray(base[1], dtype=np.float64).copy()
    node_assign = np.full(graph.node_count, -1, dtype=np.int64)
    edge_assign = np.full(graph.edge_count, -1, dtype=np.int64)
    name_ids: dict[str, int] = {}

    def free_id(name: str) -> int:
        if name not in name_ids:
            name_ids[name] = len(name_ids)
        return name_ids[name]

    def apply(assign, baseval, pos, value):
        if isinstance(value, str):
            assign[pos] = free_id(value)
        else:
            assign[pos] = -1
            baseval[pos] = float(value)

    edge_idx = graph.edge_index()
    for key, value in spec.get("nodes", {}).items():
        if key == "*":
            for i in range(graph.node_count):
                apply(node_assign, base_node, i, value)
        else:
            apply(node_assign, base_node, int(key), value)
    for key, value in spec.get("edges", {}).items():
        if key == "*":
            for k in range(graph.edge_count):
                apply(edge_assign, base_edge, k, value)
        else:
            u, v = sorted(int(t) for t in key.split("-"))
            apply(edge_assign, base_edge, edge_idx[(u, v)], value)
    return ParameterTying(
        free_count=len(name_ids),
        node_assign=node_assign,
        edge_assign=edge_assign,
        base_node=base_node,
        base_edge=base_edge,
        free_names=tuple(name_ids),
    )


def make_tying(graph: Graph, spec, geometry: SubsetGeometry | None = None,
               base: tuple[np.ndarray, np.ndarray] | None = None) -> ParameterTying:
    """Resolve a tying spec: "homogeneous", "free", or an explicit map."""
    if spec == "homogeneous":
        frozen = 0.0 if base is None else float(np.asarray(base[0]).reshape(-1)[0])
        return homogeneous_tying(graph, frozen_node_value=frozen)
    if spec == "free":
        if geometry is None:
            raise ValueError("free tying needs a subset geometry")
        return free_tying(graph, geometry, base=base)
    if isinstance(spec, dict):
        return tying_from_map(graph, spec, base=base)
    raise ValueError(f"unknown tying spec: {spec!r}")


# Model file format (JSON):
#   {"grid": {"height": h, "width": w, "toroidal": false},
#    "node_params": scalar-or-array, "edge_params": scalar-or-array,
#    "tying": "homogeneous" | "free" | {...}}
# Scalars broadcast to all components.

def save_model(path, model: PairwiseModel, tying_spec="homogeneous") -> None:
    if model.graph.grid is None:
        raise ValueError("model files require grid metadata")
    g = model.graph.grid
    node = model.node_params
    edge = model.edge_params
    doc = {
        "grid": {"height": g.height, "width": g.width, "toroidal": g.toroidal},
        "node_params": float(node[0]) if np.all(node == node[0]) else node.tolist(),
        "edge_params": float(edge[0]) if np.all(edge == edge[0]) else edge.tolist(),
        "tying": tying_spec,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> tuple[PairwiseModel, object]:
    """Read a model file; returns the model and its tying spec."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    gspec = doc["grid"]
    graph = build_grid(int(gspec["height"]), int(gspec["width"]), bool(gspec.get("toroidal", False)))
    model = PairwiseModel(
        graph=graph,
        node_params=np.asarray(doc.get("node_params", 0.0), dtype=np.float64),
        edge_params=np.asarray(doc.get("edge_params", 0.0), dtype=np.float64),
    )
    return model, doc.get("tying", "homogeneous")
