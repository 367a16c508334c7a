"""Exact conditional inference on tractable subsets.

Conditioning a pairwise spin model on fixed boundary values folds the
crossing-edge terms into per-site fields, leaving a smaller model on the
subset alone.  On tree-shaped subsets everything (log-partition, moments,
per-site sequential conditionals) is computed by two-pass sum-product
message passing in the log domain; small cyclic subsets fall back to
exhaustive enumeration.  A full brute-force conditional table serves as the
oracle the message-passing path is validated against.

Batched variants operate on a stack of boundary conditions at once (the
field matrix ``H`` has one row per condition); the estimator leans on these
for its inner loops.  The sum-product schedule depends only on the induced
interior shape, so it is cached per shape and shared across isomorphic
subsets.

Conventions: subset sites are addressed by their position in the sorted
subset node list; state axis 0 is spin -1 and axis 1 is spin +1.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .graph import SubsetGeometry, Tractability
from .model import PairwiseModel, as_spins, enumerate_spin_configs


class IntractableSubsetError(ValueError):
    """Raised when exact inference is requested on an intractable subset."""


@dataclass(frozen=True, eq=False)
class TreeStructure:
    """Rooted orientation of a forest, with a parents-before-children order.

    ``parent[v]`` is -1 at component roots; ``parent_edge[v]`` indexes the
    interior-edge list for the edge {v, parent[v]}.  ``in_order_sequential``
    is True when every non-root has a smaller parent, which lets the
    ascending-site sequential decomposition reuse one upward pass.
    """

    size: int
    order: np.ndarray
    parent: np.ndarray
    parent_edge: np.ndarray
    roots: tuple[int, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    in_order_sequential: bool


@functools.lru_cache(maxsize=256)
def _tree_structure(structure_key) -> TreeStructure:
    m, edges = structure_key
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m)]
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))

    parent = np.full(m, -1, dtype=np.int64)
    parent_edge = np.full(m, -1, dtype=np.int64)
    order = []
    seen = [False] * m
    roots = []
    # Root each component at its smallest site so that grid rows (paths
    # numbered left to right) orient parents toward smaller indices.
    for r in range(m):
        if seen[r]:
            continue
        roots.append(r)
        seen[r] = True
        queue = [r]
        while queue:
            v = queue.pop(0)
            order.append(v)
            for u, k in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    parent[u] = v
                    parent_edge[u] = k
                    queue.append(u)
    order_arr = np.array(order, dtype=np.int64)
    in_order = all(parent[v] < v for v in range(m) if parent[v] >= 0)
    return TreeStructure(
        size=m,
        order=order_arr,
        parent=parent,
        parent_edge=parent_edge,
        roots=tuple(roots),
        adjacency=tuple(tuple(a) for a in adj),
        in_order_sequential=in_order,
    )


def tree_structure(geometry: SubsetGeometry) -> TreeStructure:
    if geometry.tractable is not Tractability.TREE:
        raise IntractableSubsetError("subset does not induce a tree")
    return _tree_structure(geometry.structure_key)


@functools.lru_cache(maxsize=64)
def _enum_tables(structure_key) -> tuple[np.ndarray, np.ndarray]:
    """(configs, interior products) for exhaustive summation over a shape."""
    m, edges = structure_key
    configs = enumerate_spin_configs(m)
    if edges:
        arr = np.asarray(edges, dtype=np.int64)
        prods = (configs[:, arr[:, 0]] * configs[:, arr[:, 1]]).astype(np.int8)
    else:
        prods = np.zeros((configs.shape[0], 0), dtype=np.int8)
    return configs, prods


@dataclass(frozen=True, eq=False)
class ConditionalModel:
    """Subset model with the boundary folded in.

    ``fields[i]`` = node parameter of subset site i plus the crossing-edge
    parameters times the fixed boundary spins.  Together with the interior
    edge parameters this determines the conditional distribution; parameters
    on boundary nodes or boundary-to-boundary edges never enter.
    """

    geometry: SubsetGeometry
    fields: np.ndarray
    interior_params: np.ndarray
    boundary: np.ndarray

    @property
    def tree(self) -> TreeStructure | None:
        if self.geometry.tractable is Tractability.TREE:
            return tree_structure(self.geometry)
        return None

    def statistic_inner(self, x_subset) -> float:
        """<t, theta> for the folded model: fields . x + interior terms."""
        x = as_spins(x_subset, self.geometry.subset_size).astype(np.float64)
        il = self.geometry.interior_local
        return float(self.fields @ x + self.interior_params @ (x[il[:, 0]] * x[il[:, 1]]))


def fold_boundary(model: PairwiseModel, geometry: SubsetGeometry, x_boundary) -> ConditionalModel:
    """Absorb fixed boundary spins into per-site fields on the subset."""
    if geometry.tractable is Tractability.INTRACTABLE:
        raise IntractableSubsetError("subset is neither a tree nor small enough to enumerate")
    xb = as_spins(x_boundary, geometry.boundary_size)
    fields = fold_fields_batch(model.node_params, model.edge_params, geometry, xb[None, :])[0]
    return ConditionalModel(
        geometry=geometry,
        fields=fields,
        interior_params=model.edge_params[geometry.interior_edge_ids].copy(),
        boundary=xb,
    )


def fold_fields_batch(node_params, edge_params, geometry: SubsetGeometry,
                      x_boundary: np.ndarray) -> np.ndarray:
    """Effective fields for a (B, |boundary|) batch of boundary rows."""
    cu, cb = geometry.crossing_local
    w = np.asarray(edge_params, dtype=np.float64)[geometry.crossing_edge_ids]
    H = np.tile(np.asarray(node_params, dtype=np.float64)[geometry.subset_nodes],
                (x_boundary.shape[0], 1))
    # A subset site can have several crossing edges; accumulate, don't assign.
    np.add.at(H, (slice(None), cu), x_boundary[:, cb].astype(np.float64) * w[None, :])
    return H


# ---- batched sum-product kernels ----

def _upward(tree: TreeStructure, H: np.ndarray, w: np.ndarray):
    """Leaf-to-root pass.

    Returns (beliefs, messages, shift) where beliefs[:, v, s] accumulates the
    field term of v plus all messages from v's children, messages[:, v, s] is
    the (max-normalized) message v sent to its parent, and shift collects the
    subtracted maxima so that log-partition values stay exact.
    """
    B, m = H.shape
    bel = np.empty((B, m, 2))
    bel[:, :, 0] = -H
    bel[:, :, 1] = H
    msgs = np.zeros((B, m, 2))
    shift = np.zeros(B)
    for v in tree.order[::-1]:
        p = tree.parent[v]
        if p < 0:
            continue
        we = w[tree.parent_edge[v]]
        bm = bel[:, v, 0]
        bp = bel[:, v, 1]
        mm = np.logaddexp(bm + we, bp - we)
        mp = np.logaddexp(bm - we, bp + we)
        mx = np.maximum(mm, mp)
        mm = mm - mx
        mp = mp - mx
        shift += mx
        msgs[:, v, 0] = mm
        msgs[:, v, 1] = mp
        bel[:, p, 0] += mm
        bel[:, p, 1] += mp
    return bel, msgs, shift


def tree_log_partition_batch(tree: TreeStructure, H: np.ndarray, w: np.ndarray) -> np.ndarray:
    bel, _, shift = _upward(tree, H, w)
    out = shift
    for r in tree.roots:
        out = out + np.logaddexp(bel[:, r, 0], bel[:, r, 1])
    return out


def tree_moments_batch(tree: TreeStructure, H: np.ndarray, w: np.ndarray):
    """Log-partition, per-site moments, and interior-edge moments.

    The downward pass combines each node's upward belief with its parent's
    context (parent belief plus downward term minus the child's own upward
    message), which yields node and pairwise marginals in one sweep.
    """
    B, m = H.shape
    bel, msgs, shift = _upward(tree, H, w)
    logZ = shift.copy()
    for r in tree.roots:
        logZ += np.logaddexp(bel[:, r, 0], bel[:, r, 1])

    down = np.zeros((B, m, 2))
    edge_mom = np.zeros((B, w.size))
    for v in tree.order:
        p = tree.parent[v]
        if p < 0:
            continue
        we = w[tree.parent_edge[v]]
        ex_m = bel[:, p, 0] + down[:, p, 0] - msgs[:, v, 0]
        ex_p = bel[:, p, 1] + down[:, p, 1] - msgs[:, v, 1]
        down[:, v, 0] = np.logaddexp(ex_m + we, ex_p - we)
        down[:, v, 1] = np.logaddexp(ex_m - we, ex_p + we)
        # Pairwise table over (x_v, x_parent); moment = P(equal) - P(unequal).
        q_mm = bel[:, v, 0] + we + ex_m
        q_mp = bel[:, v, 0] - we + ex_p
        q_pm = bel[:, v, 1] - we + ex_m
        q_pp = bel[:, v, 1] + we + ex_p
        qmax = np.maximum(np.maximum(q_mm, q_mp), np.maximum(q_pm, q_pp))
        e_mm = np.exp(q_mm - qmax)
        e_mp = np.exp(q_mp - qmax)
        e_pm = np.exp(q_pm - qmax)
        e_pp = np.exp(q_pp - qmax)
        edge_mom[:, tree.parent_edge[v]] = (e_mm + e_pp - e_mp - e_pm) / (
            e_mm + e_mp + e_pm + e_pp
        )
    node_mom = np.tanh(0.5 * ((bel[:, :, 1] + down[:, :, 1]) - (bel[:, :, 0] + down[:, :, 0])))
    return logZ, node_mom, edge_mom


def enum_log_partition_batch(structure_key, H: np.ndarray, w: np.ndarray) -> np.ndarray:
    configs, prods = _enum_tables(structure_key)
    energies = H @ configs.T.astype(np.float64) + w @ prods.T.astype(np.float64)
    mx = energies.max(axis=1)
    return mx + np.log(np.sum(np.exp(energies - mx[:, None]), axis=1))


def enum_moments_batch(structure_key, H: np.ndarray, w: np.ndarray):
    configs, prods = _enum_tables(structure_key)
    cf = configs.astype(np.float64)
    pf = prods.astype(np.float64)
    energies = H @ cf.T + w @ pf.T
    mx = energies.max(axis=1)
    weights = np.exp(energies - mx[:, None])
    Z = weights.sum(axis=1)
    logZ = mx + np.log(Z)
    weights /= Z[:, None]
    return logZ, weights @ cf, weights @ pf


def _batch_log_partition(geometry: SubsetGeometry, H: np.ndarray, w: np.ndarray) -> np.ndarray:
    if geometry.tractable is Tractability.TREE:
        return tree_log_partition_batch(tree_structure(geometry), H, w)
    if geometry.tractable is Tractability.SMALL_BRUTE_FORCE:
        return enum_log_partition_batch(geometry.structure_key, H, w)
    raise IntractableSubsetError("subset is not tractable")


def _batch_moments(geometry: SubsetGeometry, H: np.ndarray, w: np.ndarray):
    if geometry.tractable is Tractability.TREE:
        return tree_moments_batch(tree_structure(geometry), H, w)
    if geometry.tractable is Tractability.SMALL_BRUTE_FORCE:
        return enum_moments_batch(geometry.structure_key, H, w)
    raise IntractableSubsetError("subset is not tractable")


# ---- per-boundary operations ----

def conditional_log_partition(cond: ConditionalModel) -> float:
    """Log normalizer of the subset distribution given the folded boundary."""
    return float(_batch_log_partition(cond.geometry, cond.fields[None, :], cond.interior_params)[0])


def conditional_moments(cond: ConditionalModel) -> np.ndarray:
    """Expected statistics under the conditional distribution.

    Component layout matches the geometry: E[X_i] per subset site, then
    E[X_i X_j] per interior edge, then boundary spin times E[X_i] per
    crossing edge.  Every entry lies in [-1, 1].
    """
    _, node_mom, edge_mom = _batch_moments(cond.geometry, cond.fields[None, :], cond.interior_params)
    cu, cb = cond.geometry.crossing_local
    crossing = cond.boundary[cb].astype(np.float64) * node_mom[0, cu]
    return np.concatenate([node_mom[0], edge_mom[0], crossing])


def conditional_log_prob(model: PairwiseModel, geometry: SubsetGeometry,
                         x_subset, x_boundary) -> float:
    """log p(x_subset | x_boundary) in nats."""
    cond = fold_boundary(model, geometry, x_boundary)
    return cond.statistic_inner(x_subset) - conditional_log_partition(cond)


def brute_force_conditional(model: PairwiseModel, geometry: SubsetGeometry,
                            x_boundary, limit: int = 16) -> np.ndarray:
    """Full conditional table by direct enumeration (the inference oracle).

    Entry c is p(x_subset | x_boundary) for the configuration whose spins
    are read off the bits of c (bit i set means subset site i is +1), i.e.
    the ``enumerate_spin_configs`` row order.
    """
    m = geometry.subset_size
    if m > limit:
        raise ValueError(f"subset of size {m} exceeds enumeration limit {limit}")
    xb = as_spins(x_boundary, geometry.boundary_size)
    fields = fold_fields_batch(model.node_params, model.edge_params, geometry, xb[None, :])[0]
    w = model.edge_params[geometry.interior_edge_ids]
    configs, prods = _enum_tables(geometry.structure_key)
    energies = configs.astype(np.float64) @ fields + prods.astype(np.float64) @ w
    energies -= energies.max()
    table = np.exp(energies)
    table /= table.sum()
    return table


class SequentialConditioner:
    """Per-site conditional distributions along the ascending-site order.

    Site k's distribution is p(x_k | sites before k, boundary), with the
    later sites marginalized out.  ``next_distribution`` returns the
    (p(-1), p(+1)) pair for the current site and ``advance`` commits its
    realized value; encoder and decoder drive the same object so both sides
    derive identical coding distributions.

    When every site's tree parent precedes it in the order (true for grid
    rows), one upward pass serves the whole sweep.  Otherwise each step
    marginalizes the not-yet-visited part of the tree around the current
    site, folding committed spins into neighbor fields as it goes.
    """

    def __init__(self, cond: ConditionalModel):
        tree = cond.tree
        if tree is None:
            raise IntractableSubsetError("sequential conditionals need a tree subset")
        self.cond = cond
        self.tree = tree
        self.size = tree.size
        self.position = 0
        self.realized = np.zeros(self.size, dtype=np.int8)
        self._fast = tree.in_order_sequential
        if self._fast:
            bel, _, _ = _upward(tree, cond.fields[None, :], cond.interior_params)
            self._bel = bel[0]
        else:
            self._live_fields = cond.fields.astype(np.float64).copy()

    def next_distribution(self) -> tuple[float, float]:
        if self.position >= self.size:
            raise IndexError("all sites already visited")
        k = self.position
        if self._fast:
            a_m = self._bel[k, 0]
            a_p = self._bel[k, 1]
            p = self.tree.parent[k]
            if p >= 0:
                we = self.cond.interior_params[self.tree.parent_edge[k]] * float(self.realized[p])
                a_m -= we
                a_p += we
        else:
            a_m, a_p = self._marginal_logits(k)
        p_plus = 1.0 / (1.0 + np.exp(a_m - a_p))
        return 1.0 - p_plus, p_plus

    def advance(self, value: int) -> None:
        if value not in (-1, 1):
            raise ValueError("spin value must be -1 or +1")
        k = self.position
        if k >= self.size:
            raise IndexError("all sites already visited")
        self.realized[k] = value
        if not self._fast:
            # Committing site k turns its edge terms into field shifts on
            # the not-yet-visited neighbors.
            for u, e in self.tree.adjacency[k]:
                if u > k:
                    self._live_fields[u] += self.cond.interior_params[e] * value
        self.position += 1

    def _marginal_logits(self, k: int) -> tuple[float, float]:
        # Sum-product toward k over the unvisited part of its component
        # (sites > k, since sites are visited in ascending order), iterative
        # post-order to dodge recursion limits.
        f = self._live_fields
        w = self.cond.interior_params
        msg: dict[tuple[int, int], tuple[float, float]] = {}
        stack: list[tuple[int, int, bool]] = [(k, -1, False)]
        while stack:
            v, frm, expanded = stack.pop()
            if not expanded:
                stack.append((v, frm, True))
                for u, _ in self.tree.adjacency[v]:
                    if u != frm and u > k:
                        stack.append((u, v, False))
                continue
            if v == k:
                continue
            bm, bp = -f[v], f[v]
            we = 0.0
            for u, e in self.tree.adjacency[v]:
                if u == frm:
                    we = w[e]
                elif u > k:
                    cm, cp = msg[(u, v)]
                    bm += cm
                    bp += cp
            mm = np.logaddexp(bm + we, bp - we)
            mp = np.logaddexp(bm - we, bp + we)
            mx = max(mm, mp)
            msg[(v, frm)] = (mm - mx, mp - mx)
        a_m, a_p = -f[k], f[k]
        for u, _ in self.tree.adjacency[k]:
            if u > k:
                cm, cp = msg[(u, k)]
                a_m += cm
                a_p += cp
        return a_m, a_p


def sequential_conditionals(cond: ConditionalModel, x_subset) -> np.ndarray:
    """(|U|, 2) array of per-site (p(-1), p(+1)) along the ascending order.

    The log-probabilities of the realized spins sum to the conditional
    log-probability of the whole configuration (chain rule).
    """
    x = as_spins(x_subset, cond.geometry.subset_size)
    conditioner = SequentialConditioner(cond)
    out = np.empty((cond.geometry.subset_size, 2))
    for k in range(cond.geometry.subset_size):
        out[k] = conditioner.next_distribution()
        conditioner.advance(int(x[k]))
    return out
