"""Command line front end.

Every subcommand builds an ExperimentConfig and hands it to the runner,
so CLI runs and config-file runs share one code path.  Exit codes:
0 all verdicts pass, 1 some verdict failed, 2 configuration error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig, ExperimentKind, load_config
from .errors import ConfigurationError
from .experiments import load_report, run


def _grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigurationError(f"grid must look like 256x512, got {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from exc


def _common(sub, grid_default="256x256"):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--out", default="runs", help="output root directory")
    sub.add_argument("--grid", default=grid_default, metavar="NrxNt")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="p1lab",
                                 description="weighted potentials, Bergman "
                                             "kernels, and random zeros on the sphere")
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("envelope", help="obstacle-problem envelope of a weight")
    p.add_argument("weight")
    _common(p)

    p = sp.add_parser("bergman", help="kernel L1 convergence over degrees")
    p.add_argument("weight")
    p.add_argument("--degrees", default="10,20,40")
    _common(p)

    p = sp.add_parser("moments", help="log-pairing moment scaling in dimension")
    p.add_argument("family")
    p.add_argument("--nu", type=float, default=2.0)
    p.add_argument("--k", default="10,100,1000", help="dimension list")
    p.add_argument("--trials", type=int, default=20000)
    _common(p)

    p = sp.add_parser("zeros", help="expected zero mass of random sections")
    p.add_argument("weight")
    p.add_argument("family")
    p.add_argument("--degrees", default="100")
    p.add_argument("--trials", type=int, default=200)
    _common(p)

    p = sp.add_parser("run", help="run an experiment from a config file")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override output root")

    p = sp.add_parser("report", help="print verdicts from a finished run")
    p.add_argument("run_dir")
    return ap


def _config_from_args(args) -> ExperimentConfig:
    n_r, n_theta = _grid(args.grid)
    if args.command == "envelope":
        return ExperimentConfig(kind=ExperimentKind.ENVELOPE, weight=args.weight,
                                n_r=n_r, n_theta=n_theta, seed=args.seed,
                                threads=args.threads, out_dir=args.out)
    if args.command == "bergman":
        return ExperimentConfig(kind=ExperimentKind.KERNEL_CONVERGENCE,
                                weight=args.weight, degrees=_ints(args.degrees),
                                n_r=n_r, n_theta=n_theta, seed=args.seed,
                                threads=args.threads, out_dir=args.out)
    if args.command == "moments":
        return ExperimentConfig(kind=ExperimentKind.MOMENTS, measure=args.family,
                                nu=args.nu, k_values=_ints(args.k),
                                trials=args.trials, n_r=n_r, n_theta=n_theta,
                                seed=args.seed, threads=args.threads,
                                out_dir=args.out)
    if args.command == "zeros":
        return ExperimentConfig(kind=ExperimentKind.EXPECTATION_CURRENT,
                                weight=args.weight, measure=args.family,
                                degrees=_ints(args.degrees), trials=args.trials,
                                n_r=n_r, n_theta=n_theta, seed=args.seed,
                                threads=args.threads, out_dir=args.out)
    raise ConfigurationError(f"unknown command {args.command!r}")


def _print_report(kind: str, verdicts, metrics, out_dir: str) -> bool:
    ok = True
    for v in verdicts:
        passed = v["passed"] if isinstance(v, dict) else v.passed
        name = v["criterion"] if isinstance(v, dict) else v.criterion
        measured = v["measured"] if isinstance(v, dict) else v.measured
        threshold = v["threshold"] if isinstance(v, dict) else v.threshold
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: "
              f"measured {measured:.6g} (threshold {threshold:.6g})")
    if not verdicts:
        print(f"{kind}: no named criteria for this configuration; "
              "metrics in report.json")
    print(f"artifacts: {out_dir}")
    return ok


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            rep = load_report(args.run_dir)
            if not rep.get("complete", False):
                print(f"run incomplete: failed during {rep.get('failed_stage')}: "
                      f"{rep.get('error')}")
                return 1
            ok = _print_report(rep["kind"], rep["verdicts"], rep["metrics"],
                               rep["out_dir"])
            return 0 if ok else 1
        if args.command == "run":
            cfg = load_config(args.config)
            if args.out is not None:
                cfg = ExperimentConfig(**{**cfg.__dict__, "out_dir": args.out})
            report = run(cfg)
        else:
            report = run(_config_from_args(args))
        ok = _print_report(report.kind, report.verdicts, report.metrics,
                           report.out_dir)
        return 0 if ok else 1
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
