#!/usr/bin/env python3
"""Kernel L1 convergence and its (log p)/p rate constant.

Runs the kernel-convergence experiment for the spherical-cap weight and
the rate-fit experiment for the smooth bump weight over a degree ladder,
printing the fitted constants.
"""
import argparse
import sys

from p1lab.config import ExperimentConfig, ExperimentKind
from p1lab.experiments import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--degrees", default="10,20,40,80,160")
    ap.add_argument("--n-r", type=int, default=128)
    ap.add_argument("--out", default="runs/kernel-rate")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    degrees = tuple(int(p) for p in args.degrees.split(","))
    n_theta = 4 * max(degrees) + 8

    ok = True
    try:
        for kind, weight in ((ExperimentKind.KERNEL_CONVERGENCE, "cap{1}"),
                             (ExperimentKind.RATE_FIT, "bump{0,1,0.3}")):
            cfg = ExperimentConfig(kind=kind, weight=weight, degrees=degrees,
                                   n_r=args.n_r, n_theta=n_theta,
                                   threads=args.threads, out_dir=args.out)
            rep = run(cfg)
            ok &= rep.all_passed
            for v in rep.verdicts:
                print(f"[{'PASS' if v.passed else 'FAIL'}] {weight} "
                      f"{v.criterion}: {v.measured:.4g} "
                      f"(threshold {v.threshold:.4g})")
            if "c_hat" in rep.metrics:
                print(f"    fitted rate constant: {rep.metrics['c_hat']:.4f}")
            print(f"    artifacts: {rep.out_dir}")
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
