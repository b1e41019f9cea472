#!/usr/bin/env python3
"""Monte Carlo statistics of random section zeros.

Estimates expected zero mass in reference regions (unit disk for the
round metric, an annulus around the cap boundary circle) and tracks the
L1 distance of normalized log-norms to the envelope defect over degrees.
"""
import argparse
import sys

from p1lab.config import ExperimentConfig, ExperimentKind
from p1lab.experiments import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", default="runs/zero-stats")
    args = ap.parse_args()

    ok = True
    jobs = (
        ExperimentConfig(kind=ExperimentKind.EXPECTATION_CURRENT, weight="fs",
                         degrees=(100,), trials=args.trials, n_r=64,
                         n_theta=408, seed=args.seed, threads=args.threads,
                         out_dir=args.out),
        ExperimentConfig(kind=ExperimentKind.EXPECTATION_CURRENT,
                         weight="cap{1}", degrees=(150,), trials=args.trials,
                         n_r=64, n_theta=608, seed=args.seed,
                         threads=args.threads, out_dir=args.out),
        ExperimentConfig(kind=ExperimentKind.ZERO_EQUIDISTRIBUTION,
                         weight="cap{1}", measure="gaussian_complex",
                         degrees=(30, 60, 120), trials=50, n_r=64,
                         n_theta=488, seed=args.seed, threads=args.threads,
                         out_dir=args.out),
    )
    try:
        for cfg in jobs:
            rep = run(cfg)
            ok &= rep.all_passed
            for v in rep.verdicts:
                print(f"[{'PASS' if v.passed else 'FAIL'}] {cfg.weight} "
                      f"{v.criterion}: {v.measured:.4g} "
                      f"(threshold {v.threshold:.4g})")
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
