"""Conditional cross-entropy objective, gradient, and minimization.

The objective for a candidate free-parameter vector is the average negative
conditional log-likelihood of subset configurations given their boundaries,
in nats per subset sample.  Temporal estimation feeds one geometry with n
recorded samples; spatial estimation feeds n geometries cut from a single
configuration.  Both reduce to the same evaluation kernel over a list of
(geometry, x_subset, x_boundary) tasks.

The objective equals the average conditional log-partition minus the inner
product of the empirical moment with the candidate parameters, so its
gradient is the average conditional moment minus the empirical moment,
pulled back through the parameter tying.  Each per-boundary term is a
log-partition of an exponential family and hence convex; the average is
minimized by plain gradient descent with Armijo backtracking.

Evaluation batches every task that shares an interior shape and interior
parameter values (all rows of a homogeneous grid, for instance) through one
message-passing pass.  Reductions run in a fixed order so results do not
depend on the thread count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .graph import SubsetGeometry, Tractability
from .model import (
    PairwiseModel,
    ParameterTying,
    as_spins,
    component_params,
    restricted_statistics_batch,
)
from .inference import (
    IntractableSubsetError,
    _batch_log_partition,
    _batch_moments,
    fold_fields_batch,
)
from .sampler import SampleSequence


class EvalTask(NamedTuple):
    geometry: SubsetGeometry
    x_subset: np.ndarray
    x_boundary: np.ndarray


def tasks_from_samples(samples: SampleSequence) -> list[EvalTask]:
    xu, xb = samples.split()
    g = samples.geometry
    return [EvalTask(g, xu[i], xb[i]) for i in range(samples.n)]


def tasks_from_configuration(x_full, geometries: Sequence[SubsetGeometry]) -> list[EvalTask]:
    """One task per subset, all cut from a single full configuration."""
    tasks = []
    for g in geometries:
        x = as_spins(x_full, g.graph.node_count)
        tasks.append(EvalTask(g, x[g.subset_nodes], x[g.boundary_nodes]))
    return tasks


def _as_tasks(data) -> list[EvalTask]:
    if isinstance(data, SampleSequence):
        return tasks_from_samples(data)
    return list(data)


def empirical_moment(samples: SampleSequence | Sequence[EvalTask]) -> np.ndarray:
    """Arithmetic mean of the restricted statistics, in the geometry's
    component layout.  All tasks must share one geometry."""
    tasks = _as_tasks(samples)
    if not tasks:
        raise ValueError("no samples")
    g = tasks[0].geometry
    if any(t.geometry is not g for t in tasks):
        raise ValueError("empirical moment needs a single common geometry")
    xu = np.stack([t.x_subset for t in tasks])
    xb = np.stack([t.x_boundary for t in tasks])
    return restricted_statistics_batch(g, xu, xb).mean(axis=0)


class _TaskGroup:
    """Tasks sharing an interior shape and crossing pattern, stacked row-wise.

    One row per task; gather matrices carry each row's global node and edge
    ids, so folding, inner products, and gradient scatter run as whole-group
    numpy operations regardless of how many distinct geometries contribute.
    """

    def __init__(self, geometry: SubsetGeometry, rows: list[tuple]):
        self.geometry = geometry  # structure/tractability representative
        self.cu, self.cb = geometry.crossing_local
        self.sub_idx = np.stack([g.subset_nodes for g, _, _ in rows])
        self.int_ids = np.stack([g.interior_edge_ids for g, _, _ in rows])
        self.cross_ids = np.stack([g.crossing_edge_ids for g, _, _ in rows])
        self.xu = np.stack([xu for _, xu, _ in rows]).astype(np.float64)
        self.xb = np.stack([xb for _, _, xb in rows]).astype(np.float64)
        il = geometry.interior_local
        self.products = self.xu[:, il[:, 0]] * self.xu[:, il[:, 1]]
        self.cross_products = self.xu[:, self.cu] * self.xb[:, self.cb]

    def fold_fields(self, node_params, edge_params) -> np.ndarray:
        H = node_params[self.sub_idx].copy()
        if self.cu.size:
            contrib = self.xb[:, self.cb] * edge_params[self.cross_ids]
            np.add.at(H, (np.arange(H.shape[0])[:, None], self.cu[None, :]), contrib)
        return H


def _group_key(g: SubsetGeometry) -> tuple:
    cu, cb = g.crossing_local
    return (g.structure_key, g.tractable, g.boundary_size, cu.tobytes(), cb.tobytes())


class EvaluationPlan:
    """Reusable evaluation state for a fixed task list.

    ``objective`` and ``objective_gradient`` take full model parameter
    vectors; tying expansion and pullback happen in the callers.  All
    reductions run in a fixed order, so neither the grouping nor the thread
    count can change the results.
    """

    def __init__(self, tasks: Sequence[EvalTask], threads: int = 1):
        if not tasks:
            raise ValueError("no evaluation tasks")
        self.threads = max(1, int(threads))
        grouped: dict[tuple, list[tuple]] = {}
        for t in tasks:
            g = t.geometry
            if g.tractable is Tractability.INTRACTABLE:
                raise IntractableSubsetError("evaluation needs tree or enumerable subsets")
            grouped.setdefault(_group_key(g), []).append(
                (g, as_spins(t.x_subset, g.subset_size), as_spins(t.x_boundary, g.boundary_size))
            )
        self.groups = [_TaskGroup(rows[0][0], rows) for rows in grouped.values()]
        self.total = len(tasks)
        self.evaluations = 0

    def _batched(self, fn, geometry, H, w):
        B = H.shape[0]
        if self.threads <= 1 or B < 2 * self.threads:
            return fn(geometry, H, w)
        bounds = np.linspace(0, B, self.threads + 1).astype(int)
        chunks = [(H[a:b], w) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(lambda c: fn(geometry, c[0], c[1]), chunks))
        if isinstance(parts[0], tuple):
            return tuple(np.concatenate([p[j] for p in parts]) for j in range(len(parts[0])))
        return np.concatenate(parts)

    def _infer(self, group: _TaskGroup, W: np.ndarray, H: np.ndarray, want_moments: bool):
        """Run inference over a group, sub-batching rows that share interior
        parameter values (message passing takes one parameter vector)."""
        T = H.shape[0]
        logZ = np.empty(T)
        node_mom = np.empty_like(H) if want_moments else None
        edge_mom = np.empty_like(W) if want_moments else None
        if W.shape[1] == 0:
            uniq, inverse = np.zeros((1, 0)), np.zeros(T, dtype=np.int64)
        else:
            uniq, inverse = np.unique(W, axis=0, return_inverse=True)
        for j in range(uniq.shape[0]):
            rows = np.flatnonzero(inverse == j)
            w = np.ascontiguousarray(uniq[j])
            if want_moments:
                lz, nm, em = self._batched(_batch_moments, group.geometry, H[rows], w)
                node_mom[rows] = nm
                edge_mom[rows] = em
            else:
                lz = self._batched(_batch_log_partition, group.geometry, H[rows], w)
            logZ[rows] = lz
        return logZ, node_mom, edge_mom

    def objective(self, node_params, edge_params) -> float:
        self.evaluations += 1
        node_params = np.asarray(node_params, dtype=np.float64)
        edge_params = np.asarray(edge_params, dtype=np.float64)
        total = 0.0
        for group in self.groups:
            W = edge_params[group.int_ids]
            H = group.fold_fields(node_params, edge_params)
            logZ, _, _ = self._infer(group, W, H, want_moments=False)
            inner = np.einsum("bi,bi->b", H, group.xu) + np.einsum(
                "bi,bi->b", W, group.products)
            total += float(np.sum(logZ - inner))
        return total / self.total

    def objective_gradient(self, node_params, edge_params):
        """(objective, node gradient, edge gradient) w.r.t. full parameters."""
        self.evaluations += 1
        node_params = np.asarray(node_params, dtype=np.float64)
        edge_params = np.asarray(edge_params, dtype=np.float64)
        total = 0.0
        node_grad = np.zeros_like(node_params)
        edge_grad = np.zeros_like(edge_params)
        for group in self.groups:
            W = edge_params[group.int_ids]
            H = group.fold_fields(node_params, edge_params)
            logZ, node_mom, edge_mom = self._infer(group, W, H, want_moments=True)
            inner = np.einsum("bi,bi->b", H, group.xu) + np.einsum(
                "bi,bi->b", W, group.products)
            total += float(np.sum(logZ - inner))
            cross_mom = group.xb[:, group.cb] * node_mom[:, group.cu]
            np.add.at(node_grad, group.sub_idx, node_mom - group.xu)
            np.add.at(edge_grad, group.int_ids, edge_mom - group.products)
            np.add.at(edge_grad, group.cross_ids, cross_mom - group.cross_products)
        return total / self.total, node_grad / self.total, edge_grad / self.total


def cross_entropy(data, free_params, tying: ParameterTying, threads: int = 1) -> float:
    """Average negative conditional log-likelihood, nats per subset sample."""
    node, edge = tying.expand(free_params)
    return EvaluationPlan(_as_tasks(data), threads).objective(node, edge)


def cross_entropy_moment_form(data, free_params, tying: ParameterTying) -> float:
    """Same objective via the moment identity: mean conditional
    log-partition minus <empirical moment, candidate parameters>.

    Kept as a second, independently coded route; the direct path and this
    one must agree to high precision.
    """
    tasks = _as_tasks(data)
    g = tasks[0].geometry
    if any(t.geometry is not g for t in tasks):
        raise ValueError("moment form needs a single common geometry")
    node, edge = tying.expand(free_params)
    xb = np.stack([t.x_boundary for t in tasks]).astype(np.float64)
    H = fold_fields_batch(node, edge, g, xb)
    w = edge[g.interior_edge_ids]
    mean_logZ = float(np.mean(_batch_log_partition(g, H, w)))
    mu_hat = empirical_moment(tasks)
    theta = component_params(g, node, edge)
    return mean_logZ - float(mu_hat @ theta)


def cross_entropy_gradient(data, free_params, tying: ParameterTying,
                           threads: int = 1) -> np.ndarray:
    """Gradient of the objective w.r.t. the free parameters: average
    conditional moment minus empirical moment, pulled back through tying."""
    node, edge = tying.expand(free_params)
    _, ng, eg = EvaluationPlan(_as_tasks(data), threads).objective_gradient(node, edge)
    return tying.pullback(ng, eg)


@dataclass
class EstimateReport:
    """Outcome of a minimization run."""

    theta: np.ndarray
    objective: float
    grad_inf_norm: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    evaluations: int = 0
    elapsed_sec: float = 0.0
    free_names: tuple = ()

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in np.atleast_1d(self.theta)],
            "free_names": list(self.free_names),
            "objective_nats": self.objective,
            "grad_inf_norm": self.grad_inf_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "elapsed_sec": self.elapsed_sec,
            "sec_per_evaluation": self.elapsed_sec / max(1, self.evaluations),
            "trace": self.trace,
        }


ARMIJO_DECREASE = 1e-4
BACKTRACK_FACTOR = 0.5
MIN_STEP = 1e-20


def minimize_mcdl(data, tying: ParameterTying, grad_tol: float = 1e-6,
                  max_iters: int = 500, init=None, threads: int = 1) -> EstimateReport:
    """Gradient descent with Armijo backtracking on the cross entropy.

    Terminates when the gradient infinity norm drops below ``grad_tol`` or
    after ``max_iters`` accepted steps; the objective never increases across
    accepted steps.  The objective is convex (strictly, when the tied
    statistics are affinely independent); a degenerate tying shows up as a
    flat direction and wins a non-converged report, not an exception.
    """
    tasks = _as_tasks(data)
    plan = EvaluationPlan(tasks, threads)
    theta = np.zeros(tying.free_count) if init is None else \
        np.asarray(init, dtype=np.float64).copy()
    t0 = time.perf_counter()

    def value_and_grad(v):
        node, edge = tying.expand(v)
        f, ng, eg = plan.objective_gradient(node, edge)
        return f, tying.pullback(ng, eg)

    def value(v):
        node, edge = tying.expand(v)
        return plan.objective(node, edge)

    f, grad = value_and_grad(theta)
    trace = []
    step = 1.0
    converged = False
    iterations = 0
    prev_theta = prev_grad = None
    for iterations in range(max_iters + 1):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        trace.append({"iteration": iterations, "objective": f, "grad_inf_norm": gnorm,
                      "step": step if iterations else 0.0})
        if gnorm < grad_tol:
            converged = True
            break
        if iterations == max_iters:
            break
        direction = -grad
        slope = float(grad @ direction)
        # Trial step from the secant curvature along the last move
        # (Barzilai-Borwein); the Armijo test below still guards every step.
        step = min(1.0, step * 2.0)
        if prev_theta is not None:
            s = theta - prev_theta
            y = grad - prev_grad
            sy = float(s @ y)
            if sy > 0:
                step = min(float(s @ s) / sy, 1e6)
        while True:
            candidate = theta + step * direction
            f_new = value(candidate)
            if f_new <= f + ARMIJO_DECREASE * step * slope:
                break
            step *= BACKTRACK_FACTOR
            if step < MIN_STEP:
                # No admissible decrease left at float precision.
                break
        if step < MIN_STEP:
            break
        prev_theta, prev_grad = theta, grad
        theta = candidate
        f, grad = value_and_grad(theta)

    return EstimateReport(
        theta=theta,
        objective=f,
        grad_inf_norm=float(np.max(np.abs(grad))) if grad.size else 0.0,
        iterations=iterations,
        converged=converged,
        trace=trace,
        evaluations=plan.evaluations,
        elapsed_sec=time.perf_counter() - t0,
        free_names=tying.free_names,
    )


@dataclass
class SweepResult:
    thetas: np.ndarray
    objectives: np.ndarray
    argmin_theta: float
    mean_subset_size: float

    def bits_per_site(self) -> np.ndarray:
        return self.objectives / (self.mean_subset_size * np.log(2.0))


def sweep_scalar(data, tying: ParameterTying, lo: float, hi: float, count: int,
                 threads: int = 1) -> SweepResult:
    """Objective values on an evenly spaced single-parameter grid."""
    if count < 2:
        raise ValueError("sweep needs at least two grid points")
    if tying.free_count != 1:
        raise ValueError("scalar sweep needs exactly one free parameter")
    tasks = _as_tasks(data)
    plan = EvaluationPlan(tasks, threads)
    thetas = np.linspace(lo, hi, count)
    values = np.empty(count)
    for i, t in enumerate(thetas):
        node, edge = tying.expand([t])
        values[i] = plan.objective(node, edge)
    best = int(np.argmin(values))
    mean_size = float(np.mean([t.geometry.subset_size for t in tasks]))
    return SweepResult(thetas=thetas, objectives=values,
                       argmin_theta=float(thetas[best]), mean_subset_size=mean_size)


def write_sweep_csv(path, result: SweepResult) -> None:
    """Sweep output: theta, objective in nats, and a bits-per-site column
    (objective / (mean subset size * ln 2))."""
    bits = result.bits_per_site()
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# H_bits_per_site = H_nats / (mean_subset_size * ln 2); "
                f"mean_subset_size={result.mean_subset_size:g}\n")
        f.write("theta,H_nats,H_bits_per_site\n")
        for t, h, b in zip(result.thetas, result.objectives, bits):
            f.write(f"{t:.10g},{h:.12g},{b:.12g}\n")
        f.write(f"# argmin={result.argmin_theta:.10g}\n")


def spatial_objective(x_full, geometries: Sequence[SubsetGeometry], free_params,
                      tying: ParameterTying, threads: int = 1) -> float:
    """Average negative conditional log-likelihood over subsets of one
    configuration.  With single-site subsets this is the (negative, averaged)
    pseudo-log-likelihood."""
    tasks = tasks_from_configuration(x_full, geometries)
    return cross_entropy(tasks, free_params, tying, threads=threads)


def pseudo_log_likelihood(model: PairwiseModel, x_full, sites) -> float:
    """Sum over sites of log p(x_i | neighbor values).

    Independent single-site route (no message passing): the conditional at
    each site is a logistic in its local field.
    """
    from scipy import sparse

    x = as_spins(x_full, model.graph.node_count).astype(np.float64)
    g = model.graph
    if g.edge_count:
        e = np.asarray(g.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        vals = np.concatenate([model.edge_params, model.edge_params])
        adj = sparse.csr_matrix((vals, (rows, cols)), shape=(g.node_count, g.node_count))
        fields = model.node_params + adj @ x
    else:
        fields = model.node_params.copy()
    sites = np.asarray(list(sites), dtype=np.int64)
    # log p(x_i | .) = -log(1 + exp(-2 x_i h_i))
    return float(-np.sum(np.logaddexp(0.0, -2.0 * x[sites] * fields[sites])))
