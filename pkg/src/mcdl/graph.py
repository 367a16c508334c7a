"""Undirected pairwise graph topology, grid construction, and subset geometry.

Nodes are integer indices.  Grids are laid out row-major: node (r, c) of an
h x w grid has index r*w + c.  Everything here is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import enum
import functools
import hashlib
from dataclasses import dataclass, field

import numpy as np

MAX_NODES = 1 << 31


class Tractability(enum.Enum):
    """Exact-inference classification of a subset's induced subgraph."""

    TREE = "tree"
    SMALL_BRUTE_FORCE = "small_brute_force"
    INTRACTABLE = "intractable"


@dataclass(frozen=True)
class GridMeta:
    height: int
    width: int
    toroidal: bool = False


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with optional grid metadata.

    ``edges`` is a list of (u, v) pairs with u < v, free of duplicates and
    self-loops.  ``adjacency[i]`` lists the neighbors of node i in ascending
    order.  Edge order is fixed at construction and used as the canonical
    index for per-edge parameters.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(repr=False)
    grid: GridMeta | None = None

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @functools.cached_property
    def _edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map from normalized (u, v) pair to position in ``edges``."""
        return self._edge_index

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])


def make_graph(node_count: int, edges, grid: GridMeta | None = None) -> Graph:
    """Build a Graph from raw edge pairs, validating the invariants."""
    if node_count < 1:
        raise ValueError("graph needs at least one node")
    if node_count > MAX_NODES:
        raise ValueError(f"node count {node_count} exceeds limit {MAX_NODES}")
    norm = []
    seen = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        if not (0 <= u < node_count and 0 <= v < node_count):
            raise ValueError(f"edge ({u},{v}) out of range")
        if u > v:
            u, v = v, u
        if (u, v) in seen:
            raise ValueError(f"duplicate edge ({u},{v})")
        seen.add((u, v))
        norm.append((u, v))
    adj: list[list[int]] = [[] for _ in range(node_count)]
    for u, v in norm:
        adj[u].append(v)
        adj[v].append(u)
    adjacency = tuple(tuple(sorted(a)) for a in adj)
    return Graph(node_count=node_count, edges=tuple(norm), adjacency=adjacency, grid=grid)


def build_grid(height: int, width: int, toroidal: bool = False) -> Graph:
    """4-nearest-neighbor grid graph, row-major node indexing.

    Toroidal wrap requires both dimensions >= 3; a wrapped dimension of 2
    would duplicate an existing edge and a dimension of 1 would self-loop.
    """
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    if height * width > MAX_NODES:
        raise ValueError("grid dimension overflow")
    if toroidal and (height < 3 or width < 3):
        raise ValueError("toroidal grid needs height >= 3 and width >= 3")

    def idx(r: int, c: int) -> int:
        return r * width + c

    edges = []
    for r in range(height):
        for c in range(width):
            if c + 1 < width:
                edges.append((idx(r, c), idx(r, c + 1)))
            elif toroidal:
                edges.append((idx(r, c), idx(r, 0)))
            if r + 1 < height:
                edges.append((idx(r, c), idx(r + 1, c)))
            elif toroidal:
                edges.append((idx(r, c), idx(0, c)))
    return make_graph(height * width, edges, grid=GridMeta(height, width, toroidal))


@dataclass(frozen=True, eq=False)
class SubsetGeometry:
    """A subset U with its boundary, closure, and incident edge partition.

    ``subset_nodes`` (U) and ``boundary_nodes`` (the neighbors of U outside
    U) are ascending int arrays.  ``interior_edges`` are the graph edges with
    both endpoints in U; ``crossing_edges`` have exactly one endpoint in U
    and are stored as (u_in_subset, b_in_boundary).  Both lists follow the
    graph's canonical edge order, and ``interior_edge_ids`` /
    ``crossing_edge_ids`` give the positions of those edges in
    ``graph.edges``.  Edges internal to the boundary are deliberately absent.
    """

    graph: Graph
    subset_nodes: np.ndarray
    boundary_nodes: np.ndarray
    interior_edges: tuple[tuple[int, int], ...]
    crossing_edges: tuple[tuple[int, int], ...]
    interior_edge_ids: np.ndarray
    crossing_edge_ids: np.ndarray
    tractable: Tractability

    @property
    def closure_nodes(self) -> np.ndarray:
        merged = np.concatenate([self.subset_nodes, self.boundary_nodes])
        return np.sort(merged)

    @property
    def subset_size(self) -> int:
        return int(self.subset_nodes.size)

    @property
    def boundary_size(self) -> int:
        return int(self.boundary_nodes.size)

    # Component layout used by statistics, moments, and gradients:
    # [ nodes of U | interior edges | crossing edges ], each block in the
    # order stored above.
    @property
    def component_count(self) -> int:
        return self.subset_size + len(self.interior_edges) + len(self.crossing_edges)

    def local_subset_index(self, nodes) -> np.ndarray:
        """Positions of the given node ids within ``subset_nodes``."""
        pos = np.searchsorted(self.subset_nodes, nodes)
        if np.any(pos >= self.subset_nodes.size) or np.any(self.subset_nodes[pos] != nodes):
            raise ValueError("node not in subset")
        return pos

    def local_boundary_index(self, nodes) -> np.ndarray:
        pos = np.searchsorted(self.boundary_nodes, nodes)
        if np.any(pos >= self.boundary_nodes.size) or np.any(self.boundary_nodes[pos] != nodes):
            raise ValueError("node not in boundary")
        return pos

    # Local (position-within-subset) views of the edge lists, cached since
    # the estimator's inner loops hit them per evaluation.
    @functools.cached_property
    def interior_local(self) -> np.ndarray:
        """(k1, 2) array of interior edge endpoints as subset positions."""
        if not self.interior_edges:
            return np.zeros((0, 2), dtype=np.int64)
        arr = np.asarray(self.interior_edges, dtype=np.int64)
        return np.stack(
            [self.local_subset_index(arr[:, 0]), self.local_subset_index(arr[:, 1])], axis=1
        )

    @functools.cached_property
    def crossing_local(self) -> tuple[np.ndarray, np.ndarray]:
        """(subset positions, boundary positions) of the crossing edges."""
        if not self.crossing_edges:
            z = np.zeros(0, dtype=np.int64)
            return z, z
        arr = np.asarray(self.crossing_edges, dtype=np.int64)
        return self.local_subset_index(arr[:, 0]), self.local_boundary_index(arr[:, 1])

    @functools.cached_property
    def structure_key(self) -> tuple:
        """Hashable signature of the induced interior shape; geometries with
        equal keys can share one message-passing schedule."""
        return (self.subset_size, tuple(map(tuple, self.interior_local.tolist())))

    def digest(self, x_boundary=None) -> int:
        """64-bit hash of the geometry, optionally bound to boundary values."""
        h = hashlib.blake2b(digest_size=8)
        h.update(b"MCDL-GEOM")
        h.update(np.int64(self.graph.node_count).tobytes())
        h.update(self.subset_nodes.astype(np.int64).tobytes())
        h.update(self.boundary_nodes.astype(np.int64).tobytes())
        h.update(np.asarray(self.interior_edges, dtype=np.int64).tobytes())
        h.update(np.asarray(self.crossing_edges, dtype=np.int64).tobytes())
        if x_boundary is not None:
            h.update(np.asarray(x_boundary, dtype=np.int8).tobytes())
        return int.from_bytes(h.digest(), "big")


def _is_forest(n_local: int, local_edges) -> bool:
    # Union-find cycle check on the induced subgraph.
    parent = list(range(n_local))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in local_edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def subset_geometry(graph: Graph, subset, brute_force_limit: int = 16) -> SubsetGeometry:
    """Compute boundary, closure, and edge partition for a node subset.

    Classification: TREE when the induced subgraph is acyclic (a forest
    qualifies), otherwise SMALL_BRUTE_FORCE when |U| <= brute_force_limit,
    otherwise INTRACTABLE.
    """
    subset_arr = np.unique(np.asarray(list(subset), dtype=np.int64))
    if subset_arr.size == 0:
        raise ValueError("subset must be nonempty")
    if subset_arr[0] < 0 or subset_arr[-1] >= graph.node_count:
        raise ValueError("subset node index out of range")

    # Scan only the edges incident to the subset, then restore the graph's
    # canonical edge order (the component layout depends on it).
    members = set(subset_arr.tolist())
    edge_ids = graph.edge_index()
    interior_records = []
    crossing_records = []
    boundary_set = set()
    for u in subset_arr.tolist():
        for v in graph.adjacency[u]:
            if v in members:
                if u < v:
                    interior_records.append((edge_ids[(u, v)], (u, v)))
            else:
                key = (u, v) if u < v else (v, u)
                crossing_records.append((edge_ids[key], (u, v)))
                boundary_set.add(v)
    interior_records.sort()
    crossing_records.sort()
    interior_ids = [k for k, _ in interior_records]
    interior = [e for _, e in interior_records]
    crossing_ids = [k for k, _ in crossing_records]
    crossing = [e for _, e in crossing_records]
    boundary_arr = np.array(sorted(boundary_set), dtype=np.int64)

    local = {int(n): i for i, n in enumerate(subset_arr)}
    local_edges = [(local[u], local[v]) for u, v in interior]
    if _is_forest(subset_arr.size, local_edges):
        tract = Tractability.TREE
    elif subset_arr.size <= brute_force_limit:
        tract = Tractability.SMALL_BRUTE_FORCE
    else:
        tract = Tractability.INTRACTABLE

    return SubsetGeometry(
        graph=graph,
        subset_nodes=subset_arr,
        boundary_nodes=boundary_arr,
        interior_edges=tuple(interior),
        crossing_edges=tuple(crossing),
        interior_edge_ids=np.array(interior_ids, dtype=np.int64),
        crossing_edge_ids=np.array(crossing_ids, dtype=np.int64),
        tractable=tract,
    )


def grid_row_nodes(graph: Graph, row: int) -> np.ndarray:
    """Node indices of one grid row."""
    if graph.grid is None:
        raise ValueError("graph has no grid metadata")
    h, w = graph.grid.height, graph.grid.width
    if not (0 <= row < h):
        raise ValueError(f"row {row} out of range for height {h}")
    return np.arange(row * w, (row + 1) * w, dtype=np.int64)


def grid_interior_nodes(graph: Graph) -> np.ndarray:
    """Nodes of a non-toroidal grid with all four neighbors present."""
    if graph.grid is None:
        raise ValueError("graph has no grid metadata")
    h, w = graph.grid.height, graph.grid.width
    if graph.grid.toroidal:
        return np.arange(graph.node_count, dtype=np.int64)
    if h < 3 or w < 3:
        return np.array([], dtype=np.int64)
    rows = np.arange(1, h - 1)
    cols = np.arange(1, w - 1)
    return (rows[:, None] * w + cols[None, :]).ravel().astype(np.int64)


def resolve_subset(graph: Graph, spec: str, brute_force_limit: int = 16) -> SubsetGeometry:
    """Parse a subset spec string into a geometry.

    Accepted forms: "middle-row", "row:<r>", "rows:<a>-<b>" (a contiguous
    band of rows), "site:<i>", "sites:<i,j,...>", and "all" (the whole node
    set, giving an empty boundary).
    """
    spec = spec.strip()
    if spec == "all":
        nodes = np.arange(graph.node_count, dtype=np.int64)
    elif spec == "middle-row":
        if graph.grid is None:
            raise ValueError("middle-row subset needs grid metadata")
        nodes = grid_row_nodes(graph, graph.grid.height // 2)
    elif spec.startswith("rows:"):
        first, _, last = spec[5:].partition("-")
        nodes = np.concatenate(
            [grid_row_nodes(graph, r) for r in range(int(first), int(last) + 1)]
        )
    elif spec.startswith("row:"):
        nodes = grid_row_nodes(graph, int(spec[4:]))
    elif spec.startswith("site:"):
        nodes = np.array([int(spec[5:])], dtype=np.int64)
    elif spec.startswith("sites:"):
        nodes = np.array([int(t) for t in spec[6:].split(",")], dtype=np.int64)
    else:
        raise ValueError(f"unrecognized subset spec: {spec!r}")
    return subset_geometry(graph, nodes, brute_force_limit)


def row_subsets(graph: Graph, brute_force_limit: int = 16) -> list[SubsetGeometry]:
    """Geometries for every interior row of a non-toroidal grid, top to bottom.

    Each interior row is a path, so its boundary is exactly the row above
    plus the row below and the geometry classifies as TREE.
    """
    if graph.grid is None:
        raise ValueError("graph has no grid metadata")
    if graph.grid.toroidal:
        raise ValueError("row subsets are defined for non-toroidal grids")
    if graph.grid.height < 3:
        raise ValueError("grid height must be >= 3 to have interior rows")
    return [
        subset_geometry(graph, grid_row_nodes(graph, r), brute_force_limit)
        for r in range(1, graph.grid.height - 1)
    ]
