"""Command-line entry point: ``diverse-pop {run,sweep,oracle,schema}``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from .experiments import ConfigError, ExperimentConfig, run_experiment, run_sweep
from .protocol import Configuration, ProtocolError, WeightTable, enumerate_kernel
from .reference import (GamblersRuinSpec, OracleError, absorbing_chain_solve,
                        build_equilibrium_chain, compositions, gamblers_ruin,
                        pair_enumeration_kernel, stationary_closed_form, stationary_residual)
from .telemetry import SNAPSHOT_SCHEMA


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    data = cfg.to_json()
    for key, val in (("seed", args.seed), ("engine", args.engine), ("steps", args.steps),
                     ("snapshot_every", args.snapshot_every), ("out", args.out)):
        if val is not None:
            data[key] = val
    return ExperimentConfig.from_dict(data)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, cfg.seed, cfg.out)
    summary = {k: v for k, v in report.to_json().items()
               if k not in ("phi_halving_steps", "psi_halving_steps")}
    print(json.dumps(summary, indent=2))
    if report.error:
        print(f"error: {report.error}", file=sys.stderr)
    return 0 if report.passed else 1


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    seeds = _seeds(args.seeds) if args.seeds else (cfg.seeds or [cfg.seed])
    res = run_sweep(cfg, seeds, args.workers, cfg.out)
    print(json.dumps(res.aggregate, indent=2))
    return 0 if res.complete else 1


def _oracle_stationary(args) -> int:
    weights = WeightTable.of(_floats(args.w))
    if weights.num_colours != args.k:
        print(f"--k {args.k} but {weights.num_colours} weights given", file=sys.stderr)
        return 2
    P = build_equilibrium_chain(weights, args.n).matrix()
    pi = stationary_closed_form(weights)
    res = stationary_residual(pi, P)
    print(f"pi = {np.round(pi, 12).tolist()}")
    print(f"residual = {res:.3e} (tol {args.tol:.0e})")
    return 0 if res <= args.tol else 1


def _oracle_ruin(args) -> int:
    closed = gamblers_ruin(GamblersRuinSpec(args.p, args.b, args.s))
    solved = absorbing_chain_solve(args.p, args.s, args.b)
    worst = max(abs(a - b) for a, b in zip(closed, solved))
    for name, a, b in zip(("P(hit b)", "P(hit 0)", "E[T]"), closed, solved):
        print(f"{name:9s} closed={a:.15g} linear={b:.15g}")
    print(f"max abs difference = {worst:.3e} (tol {args.tol:.0e})")
    return 0 if worst <= args.tol else 1


def _oracle_kernel(args) -> int:
    weights = WeightTable.of(_floats(args.w))
    k = weights.num_colours
    checked = 0
    for comp in compositions(args.n, 2 * k):
        cfg = Configuration.from_lists(comp[:k], comp[k:])
        kern = enumerate_kernel(cfg, weights, exact=True)
        fast = {key: p for key, p in kern.next_states(cfg).items() if p}
        brute = {key: p for key, p in pair_enumeration_kernel(cfg, weights).items() if p}
        if fast != brute or sum(fast.values(), Fraction(0)) != 1:
            print(f"mismatch at {comp}", file=sys.stderr)
            return 1
        checked += 1
    print(f"{checked} configurations: kernel equals pair enumeration exactly")
    return 0


def cmd_oracle(args) -> int:
    return {"stationary": _oracle_stationary, "ruin": _oracle_ruin,
            "kernel": _oracle_kernel}[args.suite](args)


def cmd_schema(args) -> int:
    print(json.dumps(SNAPSHOT_SCHEMA, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diverse-pop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--engine", choices=["counts", "agentwise", "derandomized"])
        sp.add_argument("--steps", type=int)
        sp.add_argument("--snapshot-every", type=int)

    sp = sub.add_parser("run", help="run one experiment")
    run_flags(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="run a seed sweep in parallel")
    run_flags(sp)
    sp.add_argument("--seeds", help="e.g. 1-20 or 1,5,9")
    sp.add_argument("--workers", type=int, help="defaults to $DIVERSE_POP_THREADS or CPU count")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("oracle", help="analytic cross-checks")
    osub = sp.add_subparsers(dest="suite", required=True)
    o = osub.add_parser("stationary")
    o.add_argument("--k", type=int, required=True)
    o.add_argument("--w", required=True, help="comma-separated weights")
    o.add_argument("--n", type=int, required=True)
    o.add_argument("--tol", type=float, default=1e-12)
    o = osub.add_parser("ruin")
    o.add_argument("--p", type=float, required=True)
    o.add_argument("--s", type=int, required=True)
    o.add_argument("--b", type=int, required=True)
    o.add_argument("--tol", type=float, default=1e-10)
    o = osub.add_parser("kernel")
    o.add_argument("--n", type=int, required=True)
    o.add_argument("--w", default="1,2")
    sp.set_defaults(fn=cmd_oracle)

    sp = sub.add_parser("schema", help="print the telemetry JSON schema")
    sp.set_defaults(fn=cmd_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ProtocolError, OracleError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
