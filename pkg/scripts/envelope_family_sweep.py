#!/usr/bin/env python3
"""Envelope solver vs radial oracle across the standard weight family.

Runs the envelope experiment at one or more grid resolutions and reports
the sup disagreement per weight, so refinement behaviour is visible at a
glance.
"""
import argparse
import sys

from p1lab.config import ExperimentConfig, ExperimentKind
from p1lab.experiments import run

WEIGHTS = ("cap{1}", "circle{0.5}", "bump{0,1,0.3}", "bump{-2,1.5,0.5}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolutions", default="128,256",
                    help="comma-separated square grid sizes")
    ap.add_argument("--out", default="runs/envelope-sweep")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ok = True
    try:
        for res in (int(r) for r in args.resolutions.split(",")):
            for weight in WEIGHTS:
                cfg = ExperimentConfig(kind=ExperimentKind.ENVELOPE,
                                       weight=weight, n_r=res, n_theta=res,
                                       seed=args.seed, out_dir=args.out)
                rep = run(cfg)
                sup = rep.metrics["sup_diff_vs_radial_oracle"]
                passed = rep.all_passed
                ok &= passed
                print(f"[{'PASS' if passed else 'FAIL'}] {weight:18s} "
                      f"{res}x{res}: sup {sup:.3e}  ({rep.out_dir})")
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
