"""Command-line front end for generation, estimation, sweeps, and coding.

Subcommands: generate, estimate, sweep, spatial-sweep, mpl, encode, decode,
oracle-check.  Exit status is 0 on success, 1 on usage errors, 2 on runtime
failures.  All randomness flows from the --seed flag; identical flags and
seeds reproduce output files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .graph import (
    Graph,
    SubsetGeometry,
    grid_interior_nodes,
    resolve_subset,
    row_subsets,
    subset_geometry,
)
from .model import PairwiseModel, load_model, make_tying
from .sampler import SampleSequence, read_samples, sample_sequence, write_samples
from .estimator import (
    minimize_mcdl,
    sweep_scalar,
    tasks_from_configuration,
    tasks_from_samples,
    write_sweep_csv,
)
from .codec import decode_conditional, encode_conditional, read_bitstream, write_bitstream
from .oracle import run_oracle_suite


@dataclass
class ExperimentConfig:
    """Resolved inputs of one command: model, subset, sampler and estimator
    settings, output paths."""

    model: PairwiseModel
    tying_spec: object
    geometry: SubsetGeometry | None = None
    n: int = 1
    burn_in: int = 2000
    spacing: int = 50
    seed: int = 0
    grad_tol: float = 1e-6
    max_iters: int = 500
    threads: int = 1


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; runtime failures exit 2 (argparse default is 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    env = os.environ.get("MCDL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcdl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(sp):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads for per-sample evaluation "
                             "(default: MCDL_THREADS or all cores)")

    g = sub.add_parser("generate", help="sample a configuration sequence")
    add_common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--burn-in", type=int, default=2000)
    g.add_argument("--spacing", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--subset", default="middle-row",
                   help="middle-row | row:<r> | site:<i> | sites:<i,j,...> | all")

    e = sub.add_parser("estimate", help="minimize the conditional cross entropy")
    add_common(e)
    e.add_argument("--samples", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--tying", default=None, help="homogeneous | free (default: model file)")
    e.add_argument("--grad-tol", type=float, default=1e-6)
    e.add_argument("--max-iters", type=int, default=500)
    e.add_argument("--init", choices=["zero", "model"], default="zero")

    for name, temporal in (("sweep", True), ("spatial-sweep", False)):
        s = sub.add_parser(name, help="objective values on an evenly spaced grid")
        add_common(s)
        if temporal:
            s.add_argument("--samples", required=True)
        else:
            s.add_argument("--config", required=True,
                           help="sample file holding full configurations (subset=all)")
            s.add_argument("--index", type=int, default=0)
        s.add_argument("--out", required=True, help="CSV path")
        s.add_argument("--lo", type=float, required=True)
        s.add_argument("--hi", type=float, required=True)
        s.add_argument("--count", type=int, required=True)

    m = sub.add_parser("mpl", help="single-site spatial estimate")
    add_common(m)
    m.add_argument("--config", required=True)
    m.add_argument("--index", type=int, default=0)
    m.add_argument("--out", required=True, help="report JSON path")
    m.add_argument("--grad-tol", type=float, default=1e-6)
    m.add_argument("--max-iters", type=int, default=500)

    enc = sub.add_parser("encode", help="arithmetic-code one sample's subset")
    add_common(enc)
    enc.add_argument("--samples", required=True)
    enc.add_argument("--index", type=int, default=0)
    enc.add_argument("--out", required=True, help="bitstream path")

    dec = sub.add_parser("decode", help="decode a bitstream back to spins")
    add_common(dec)
    dec.add_argument("--bits", required=True)
    dec.add_argument("--samples", required=True,
                     help="sample file supplying the boundary values")
    dec.add_argument("--index", type=int, default=0)
    dec.add_argument("--out", required=True, help="configuration text path")

    o = sub.add_parser("oracle-check", help="randomized brute-force equivalence suite")
    o.add_argument("--trials", type=int, default=200)
    o.add_argument("--max-u", type=int, default=12)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--tol", type=float, default=1e-9)
    return p


def _load(args) -> tuple[PairwiseModel, object]:
    return load_model(args.model)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    return _default_threads()


def _write_config_text(path, spins: np.ndarray, nodes: np.ndarray) -> None:
    lut = np.array(["-", "+"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"MCDL-CONFIG v1 {spins.size}\n")
        f.write(f"# nodes {','.join(str(int(v)) for v in nodes)}\n")
        f.write("".join(lut[(spins > 0).astype(int)]) + "\n")


def _full_configuration(samples: SampleSequence, index: int) -> np.ndarray:
    if samples.geometry.boundary_size != 0:
        raise ValueError("need full-graph samples (generate with --subset all)")
    if not (0 <= index < samples.n):
        raise ValueError(f"sample index {index} out of range (n={samples.n})")
    return samples.configs[index]


def cmd_generate(args) -> int:
    model, _ = _load(args)
    geometry = resolve_subset(model.graph, args.subset)
    samples = sample_sequence(model, geometry, n=args.n, burn_in=args.burn_in,
                              spacing=args.spacing, seed=args.seed)
    write_samples(args.out, samples, subset_spec=args.subset)
    print(f"generate: wrote {samples.n} configurations "
          f"({samples.configs.shape[1]} closure nodes) to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    model, file_tying = _load(args)
    samples = read_samples(args.samples, model.graph)
    tying_spec = args.tying if args.tying is not None else file_tying
    tying = make_tying(model.graph, tying_spec, samples.geometry,
                       base=(model.node_params, model.edge_params))
    init = tying.collapse(model.node_params, model.edge_params) if args.init == "model" else None
    report = minimize_mcdl(samples, tying, grad_tol=args.grad_tol,
                           max_iters=args.max_iters, init=init, threads=_threads(args))
    doc = report.to_dict()
    doc["provenance"] = {"model": args.model, "samples": args.samples,
                         "tying": tying_spec, "init": args.init}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    status = "converged" if report.converged else "NOT converged"
    print(f"estimate: {status} in {report.iterations} iterations, "
          f"objective {report.objective:.9f} nats, "
          f"grad_inf_norm {report.grad_inf_norm:.3e}")
    print(f"estimate: theta = {np.array2string(np.atleast_1d(report.theta), precision=6)}")
    return 0


def _sweep_common(args, tasks, tying_spec, graph: Graph) -> int:
    tying = make_tying(graph, tying_spec, tasks[0].geometry)
    result = sweep_scalar(tasks, tying, args.lo, args.hi, args.count, threads=_threads(args))
    write_sweep_csv(args.out, result)
    print(f"sweep: {args.count} points on [{args.lo}, {args.hi}], "
          f"argmin={result.argmin_theta:.10g} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    model, file_tying = _load(args)
    samples = read_samples(args.samples, model.graph)
    tasks = tasks_from_samples(samples)
    return _sweep_common(args, tasks, file_tying, model.graph)


def cmd_spatial_sweep(args) -> int:
    model, _ = _load(args)
    samples = read_samples(args.config, model.graph)
    x_full = _full_configuration(samples, args.index)
    geometries = row_subsets(model.graph)
    tasks = tasks_from_configuration(x_full, geometries)
    return _sweep_common(args, tasks, "homogeneous", model.graph)


def cmd_mpl(args) -> int:
    model, _ = _load(args)
    samples = read_samples(args.config, model.graph)
    x_full = _full_configuration(samples, args.index)
    sites = grid_interior_nodes(model.graph)
    if sites.size == 0:
        raise ValueError("grid has no interior sites")
    geometries = [subset_geometry(model.graph, [int(i)]) for i in sites]
    tasks = tasks_from_configuration(x_full, geometries)
    tying = make_tying(model.graph, "homogeneous")
    report = minimize_mcdl(tasks, tying, grad_tol=args.grad_tol,
                           max_iters=args.max_iters, threads=_threads(args))
    doc = report.to_dict()
    doc["provenance"] = {"model": args.model, "config": args.config,
                         "index": args.index, "sites": int(sites.size),
                         "mode": "single-site"}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"mpl: estimate {float(report.theta[0]):.6f} over {sites.size} sites "
          f"({'converged' if report.converged else 'NOT converged'})")
    return 0


def cmd_encode(args) -> int:
    model, _ = _load(args)
    samples = read_samples(args.samples, model.graph)
    if not (0 <= args.index < samples.n):
        raise ValueError(f"sample index {args.index} out of range (n={samples.n})")
    xu, xb = samples.split()
    bits = encode_conditional(model, samples.geometry, xu[args.index], xb[args.index])
    write_bitstream(args.out, bits)
    print(f"encode: {bits.bit_length} bits for {samples.geometry.subset_size} sites "
          f"-> {args.out}")
    return 0


def cmd_decode(args) -> int:
    model, _ = _load(args)
    samples = read_samples(args.samples, model.graph)
    if not (0 <= args.index < samples.n):
        raise ValueError(f"sample index {args.index} out of range (n={samples.n})")
    _, xb = samples.split()
    bits = read_bitstream(args.bits)
    spins = decode_conditional(model, samples.geometry, xb[args.index], bits)
    _write_config_text(args.out, spins, samples.geometry.subset_nodes)
    print(f"decode: {spins.size} sites -> {args.out}")
    return 0


def cmd_oracle_check(args) -> int:
    outcome = run_oracle_suite(trials=args.trials, max_subset=args.max_u,
                               seed=args.seed, tolerance=args.tol)
    print(f"oracle-check: {outcome.passed}/{outcome.passed + outcome.failed} passed, "
          f"worst error {outcome.worst_error:.3e} (tolerance {args.tol:g})")
    if not outcome.ok:
        for rec in outcome.failures[:10]:
            print(f"  FAILED trial {rec['trial']}: {rec['errors']}", file=sys.stderr)
        return 2
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "spatial-sweep": cmd_spatial_sweep,
    "mpl": cmd_mpl,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"mcdl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
