"""Gibbs sampling of temporally stationary configuration sequences.

A single chain performs systematic raster-scan sweeps: every node is
resampled once per sweep, in ascending index order, from its conditional
distribution given the current neighbor values.  All randomness comes from
one seeded numpy PCG64 generator; the per-sweep uniforms are drawn up front
and consumed in scan order by a compiled kernel, so a (seed, model, n,
burn_in, spacing) tuple fully determines the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .graph import Graph, SubsetGeometry, resolve_subset
from .model import PairwiseModel, as_spins

RNG_NAME = "numpy-pcg64"
SCAN_ORDER = "raster"


def neighbor_csr(model: PairwiseModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjacency of the model graph in CSR form, with edge weights aligned
    to the neighbor list."""
    g = model.graph
    indptr = np.zeros(g.node_count + 1, dtype=np.int64)
    for i in range(g.node_count):
        indptr[i + 1] = indptr[i] + len(g.adjacency[i])
    indices = np.empty(indptr[-1], dtype=np.int64)
    weights = np.empty(indptr[-1], dtype=np.float64)
    edge_idx = g.edge_index()
    for i in range(g.node_count):
        base = indptr[i]
        for k, j in enumerate(g.adjacency[i]):
            indices[base + k] = j
            e = (i, j) if i < j else (j, i)
            weights[base + k] = model.edge_params[edge_idx[e]]
    return indptr, indices, weights


@numba.njit(cache=True)
def _sweep_kernel(x, uniforms, node_params, indptr, indices, weights):
    n = x.shape[0]
    for i in range(n):
        h = node_params[i]
        for k in range(indptr[i], indptr[i + 1]):
            h += weights[k] * x[indices[k]]
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * h))
        if uniforms[i] < p_plus:
            x[i] = 1
        else:
            x[i] = -1


def gibbs_sweep(model: PairwiseModel, x, rng: np.random.Generator) -> np.ndarray:
    """One full raster sweep; returns a new configuration."""
    out = as_spins(x, model.graph.node_count).copy()
    indptr, indices, weights = neighbor_csr(model)
    _sweep_kernel(out, rng.random(model.graph.node_count), model.node_params,
                  indptr, indices, weights)
    return out


@dataclass
class SampleSequence:
    """Ordered configurations restricted to a subset closure.

    ``configs[i]`` holds the spins of ``geometry.closure_nodes`` (ascending
    node order) at recording step i.  ``provenance`` carries everything
    needed to regenerate the sequence.
    """

    geometry: SubsetGeometry
    configs: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        closure = self.geometry.closure_nodes
        self.configs = np.asarray(self.configs, dtype=np.int8)
        if self.configs.ndim != 2 or self.configs.shape[1] != closure.size:
            raise ValueError("configs must be (n, closure size)")
        if self.configs.shape[0] < 1:
            raise ValueError("need at least one configuration")

    @property
    def n(self) -> int:
        return int(self.configs.shape[0])

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """(subset columns, boundary columns) of the closure configs."""
        closure = self.geometry.closure_nodes
        upos = np.searchsorted(closure, self.geometry.subset_nodes)
        bpos = np.searchsorted(closure, self.geometry.boundary_nodes)
        return self.configs[:, upos], self.configs[:, bpos]


def sample_sequence(model: PairwiseModel, geometry: SubsetGeometry, n: int,
                    burn_in: int = 2000, spacing: int = 50, seed: int = 0) -> SampleSequence:
    """Run one Gibbs chain and record n closure configurations.

    The chain starts from a uniform random configuration, runs ``burn_in``
    sweeps, records the first sample, then records again after every
    ``spacing`` further sweeps until n samples are collected (so burn_in=0,
    n=1 returns the uniform initializer itself).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if spacing < 1:
        raise ValueError("spacing must be >= 1")
    rng = np.random.default_rng(seed)
    indptr, indices, weights = neighbor_csr(model)
    x = (2 * rng.integers(0, 2, size=model.graph.node_count) - 1).astype(np.int8)
    closure = geometry.closure_nodes

    def sweeps(count: int) -> None:
        for _ in range(count):
            _sweep_kernel(x, rng.random(x.shape[0]), model.node_params,
                          indptr, indices, weights)

    sweeps(burn_in)
    configs = np.empty((n, closure.size), dtype=np.int8)
    configs[0] = x[closure]
    for i in range(1, n):
        sweeps(spacing)
        configs[i] = x[closure]

    provenance = {
        "seed": int(seed),
        "burn_in_sweeps": int(burn_in),
        "spacing_sweeps": int(spacing),
        "sampler_scan_order": SCAN_ORDER,
        "rng": RNG_NAME,
        "model_digest": model.digest(),
    }
    return SampleSequence(geometry=geometry, configs=configs, provenance=provenance)


def sweep_transition_matrix(model: PairwiseModel, per_site: bool = False):
    """Transition matrix of the raster sweep on an enumerable graph.

    With ``per_site`` the list of single-site update kernels is returned
    instead.  Both are built from the exact site conditionals, so they make
    the sweep's stationarity checkable against the brute-force joint.
    """
    from .model import enumerate_spin_configs, site_conditional

    n = model.graph.node_count
    configs = enumerate_spin_configs(n)
    size = configs.shape[0]
    kernels = []
    for i in range(n):
        K = np.zeros((size, size))
        for c in range(size):
            x = configs[c].copy()
            p_plus = site_conditional(model, x, i)
            x[i] = 1
            c_plus = int(np.sum((x > 0) << np.arange(n)))
            x[i] = -1
            c_minus = int(np.sum((x > 0) << np.arange(n)))
            K[c, c_plus] += p_plus
            K[c, c_minus] += 1.0 - p_plus
        kernels.append(K)
    if per_site:
        return kernels
    full = np.eye(size)
    for K in kernels:
        full = full @ K
    return full


# ---- sample file format ----
#
# Line 1: MCDL-SAMPLES v1 <height> <width> <n> <closure-node-count>
# Line 2: provenance as space-separated key=value pairs (includes the subset
#         spec so the geometry can be rebuilt from the model's grid)
# Then n rows of '+'/'-' over the closure nodes in ascending node order.

MAGIC = "MCDL-SAMPLES v1"


def write_samples(path, samples: SampleSequence, subset_spec: str) -> None:
    g = samples.geometry.graph.grid
    if g is None:
        raise ValueError("sample files require grid metadata")
    prov = dict(samples.provenance)
    prov["subset"] = subset_spec
    prov_line = " ".join(f"{k}={prov[k]}" for k in sorted(prov))
    lut = np.array(["-", "+"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{MAGIC} {g.height} {g.width} {samples.n} {samples.configs.shape[1]}\n")
        f.write(prov_line + "\n")
        for row in samples.configs:
            f.write("".join(lut[(row > 0).astype(int)]) + "\n")


def read_samples(path, graph: Graph, geometry: SubsetGeometry | None = None) -> SampleSequence:
    """Load a sample file; the geometry is rebuilt from the provenance's
    subset spec unless one is supplied."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        parts = header.split()
        if " ".join(parts[:2]) != MAGIC:
            raise ValueError(f"not a sample file: bad magic in {path!r}")
        height, width, n, closure_count = (int(p) for p in parts[2:6])
        if graph.grid is None or (graph.grid.height, graph.grid.width) != (height, width):
            raise ValueError("sample file grid does not match the model's grid")
        prov_line = f.readline().strip()
        provenance = {}
        for item in prov_line.split():
            k, _, v = item.partition("=")
            provenance[k] = v
        if geometry is None:
            if "subset" not in provenance:
                raise ValueError("sample file lacks a subset spec; pass a geometry")
            geometry = resolve_subset(graph, provenance["subset"])
        configs = np.empty((n, closure_count), dtype=np.int8)
        for i in range(n):
            line = f.readline().strip()
            if len(line) != closure_count:
                raise ValueError(f"sample row {i} has {len(line)} symbols, expected {closure_count}")
            configs[i] = np.where(np.frombuffer(line.encode(), dtype=np.uint8) == ord("+"), 1, -1)
    return SampleSequence(geometry=geometry, configs=configs, provenance=provenance)
