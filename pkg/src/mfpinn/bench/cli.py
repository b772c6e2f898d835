"""Command line entry point: ``mfpinn <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, with_overrides
from .registry import shipped_configs
from .runner import recompute_metrics, run_case, run_reference


def _add_run_flags(p, config_required=True):
    p.add_argument("--config", required=config_required, help="case file (JSON) or shipped case name")
    p.add_argument("--loss", choices=["scaled", "unscaled"])
    p.add_argument("--activation", choices=["tanh", "sin"])
    p.add_argument("--sampler", choices=["random", "sobol"])
    p.add_argument("--points", type=int)
    p.add_argument("--iters", type=int, help="training iterations (inner iterations for eigen cases)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale-factor", type=float, help="shrink points and iteration counts by this factor")
    p.add_argument("--cache", help="reference cache directory")
    p.add_argument("--no-heatmaps", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfpinn", description="Mixed-form PINN benchmarks for neutron diffusion")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("source", help="train on a fixed-source case"))
    _add_run_flags(sub.add_parser("eigen", help="solve an eigenvalue case by inverse power iteration"))
    ref = sub.add_parser("reference", help="compute the finite-volume reference solution")
    ref.add_argument("--config", required=True)
    ref.add_argument("--out", required=True)
    ref.add_argument("--cache")
    met = sub.add_parser("metrics", help="recompute metrics of a finished run from its fields.csv")
    met.add_argument("--out", required=True, help="run directory")
    allp = sub.add_parser("bench-all", help="scaled and unscaled runs of every shipped case")
    _add_run_flags(allp, config_required=False)
    allp.add_argument("--cases", nargs="*", help="restrict to these shipped case names")
    return ap


def _resolve(name_or_path: str):
    path = Path(name_or_path)
    if path.exists():
        return load_config(path)
    shipped = shipped_configs()
    if name_or_path in shipped:
        return load_config(shipped[name_or_path])
    raise FileNotFoundError(f"no case file or shipped case named {name_or_path!r}")


def _overrides(args, case, include_loss=True):
    return with_overrides(case, loss=args.loss if include_loss else None, activation=args.activation,
                          sampler=args.sampler, points=args.points, iters=args.iters, seed=args.seed,
                          scale_factor=args.scale_factor)


def _print_metrics(m):
    print(json.dumps(m.to_dict(), indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("source", "eigen"):
            case = _overrides(args, _resolve(args.config))
            if case.kind != args.command:
                print(f"error: case {case.name!r} is a {case.kind} case", file=sys.stderr)
                return 2
            _print_metrics(run_case(case, args.out, cache_dir=args.cache, heatmaps=not args.no_heatmaps))
        elif args.command == "reference":
            ref = run_reference(_resolve(args.config), args.out, cache_dir=args.cache)
            print(json.dumps(dict(keff=ref.keff, shape=list(ref.shape), iterations=ref.iterations)))
        elif args.command == "metrics":
            _print_metrics(recompute_metrics(args.out))
        elif args.command == "bench-all":
            return _bench_all(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _bench_all(args) -> int:
    shipped = shipped_configs()
    names = args.cases or sorted(shipped)
    losses = [args.loss] if args.loss else ["scaled", "unscaled"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        base = _overrides(args, load_config(shipped[name]), include_loss=False)
        for loss in losses:
            m = run_case(base, out / name / loss, loss=loss, cache_dir=args.cache,
                         heatmaps=not args.no_heatmaps)
            rows.append(dict(case=name, loss=loss, **m.to_dict()))
            print(f"{name:>16s} {loss:>8s}  flux {m.rel_flux_error_pct:10.4f}%  "
                  f"current {m.rel_current_error_pct:10.4f}%"
                  + ("" if m.delta_keff_pcm is None else f"  dk {m.delta_keff_pcm:9.1f} pcm"))
    with open(out / "bench_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["case"])
        w.writeheader()
        w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
