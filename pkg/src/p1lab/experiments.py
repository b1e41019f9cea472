"""Configuration-driven experiment runner.

Each run gets its own directory (timestamp plus config hash) holding the
echoed config, plot-ready CSV artifacts, and a self-contained JSON
report.  All numeric CSV columns are written with 17 significant digits,
so reruns with the same seed are byte-identical.  Orthonormal bases are
cached on disk keyed by weight content, degree, and grid.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._rng import derive_rng
from .bergman import BergmanBasis, bergman_basis, bergman_kernel, kernel_vs_envelope, rate_fit
from .config import ExperimentConfig, ExperimentKind, cache_key, config_digest, save_config
from .envelope import (
    WeightField,
    envelope_from_radial,
    parse_weight,
    psh_envelope,
    radial_oracle,
)
from .errors import ConfigurationError, IllConditionedSampleError
from .geometry import Chart, annulus_region, build_grid, disk_region
from .measures import moment_estimate, parse_measure
from .zeros import expectation_current, find_roots, lognorm_field, lognorm_l1, sample_section

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


@dataclass(frozen=True)
class Verdict:
    criterion: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


@dataclass(frozen=True)
class RunReport:
    config: dict
    kind: str
    weight_hash: str
    version: str
    metrics: dict
    verdicts: tuple[Verdict, ...]
    wall_clock: float
    out_dir: str
    complete: bool = True
    failed_stage: str = ""
    error: str = ""

    @property
    def all_passed(self) -> bool:
        return self.complete and all(v.passed for v in self.verdicts)

    def to_json(self) -> str:
        d = {
            "config": self.config,
            "kind": self.kind,
            "weight_hash": self.weight_hash,
            "version": self.version,
            "metrics": self.metrics,
            "verdicts": [v.__dict__ for v in self.verdicts],
            "wall_clock": self.wall_clock,
            "out_dir": self.out_dir,
            "complete": self.complete,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def load_report(run_dir: str) -> dict:
    path = os.path.join(run_dir, "report.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no report.json under {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def cached_basis(p: int, w: WeightField, grid, cache_dir: str | None) -> BergmanBasis:
    """Build the orthonormal basis, reusing an on-disk copy when present."""
    if cache_dir is None:
        return bergman_basis(p, w, grid)
    key = cache_key(w, p, grid)
    path = os.path.join(cache_dir, f"basis-{key}.npz")
    if os.path.exists(path):
        data = np.load(path)
        log.info("basis cache hit: %s", path)
        return BergmanBasis(
            degree=int(data["degree"]),
            dim=int(data["degree"]) + 1,
            coeffs=np.ascontiguousarray(data["coeffs"]),
            gram_cond=float(data["gram_cond"]),
            weight_hash=str(data["weight_hash"]),
        )
    basis = bergman_basis(p, w, grid)
    os.makedirs(cache_dir, exist_ok=True)
    # savez appends .npz to names missing the suffix; keep it explicit
    tmp = path + f".{os.getpid()}.tmp.npz"
    np.savez(tmp, degree=basis.degree, coeffs=basis.coeffs,
             gram_cond=basis.gram_cond, weight_hash=basis.weight_hash)
    os.replace(tmp, path)
    return basis


def _config_echo(cfg: ExperimentConfig) -> dict:
    d = dict(cfg.__dict__)
    d["kind"] = cfg.kind.value
    d["degrees"] = list(cfg.degrees)
    d["k_values"] = list(cfg.k_values)
    return d


def make_run_dir(cfg: ExperimentConfig) -> str:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = os.path.join(cfg.out_dir, f"{stamp}-{config_digest(cfg)}")
    path = base
    n = 1
    while os.path.exists(path):
        path = f"{base}-{n}"
        n += 1
    os.makedirs(path)
    return path


def _grid_envelope(w: WeightField, grid):
    """Envelope by the cylinder solver; radial closed route as reference."""
    return psh_envelope(w, grid)


def _reference_envelope(w: WeightField, grid):
    if w.is_radial:
        return envelope_from_radial(w, grid)
    return psh_envelope(w, grid)


def _run_envelope(cfg, w, grid, out_dir):
    env = psh_envelope(w, grid)
    metrics = {"grid": [grid.n_r, grid.n_theta]}
    verdicts = []
    if w.is_radial:
        oracle = radial_oracle(w)
        ref = envelope_from_radial(w, grid)
        sup = float(np.max(np.abs(env.psi_eq - ref.psi_eq)))
        metrics["sup_diff_vs_radial_oracle"] = sup
        verdicts.append(Verdict("envelope-sup-vs-oracle", sup <= 5e-3, sup, 5e-3,
                                f"weight {cfg.weight} at {grid.n_r}^2"))
        t = np.linspace(-8.0, 8.0, 2 * grid.n_r + 1)
        u = np.asarray(w.psi_of_cyl(t, np.zeros_like(t)))
        rows = zip(t, u, oracle(t))
        _write_csv(os.path.join(out_dir, "envelope_profile.csv"),
                   ["t", "psi", "envelope"], rows)
    rows = zip(env.psi, env.psi_eq, env.psi_h)
    _write_csv(os.path.join(out_dir, "envelope_nodes.csv"),
               ["psi", "psi_eq", "psi_h"], rows)
    return metrics, verdicts


def _run_kernel_convergence(cfg, w, grid, out_dir, cache_dir):
    env = _reference_envelope(w, grid)
    rows = []
    errors = []
    for p in cfg.degrees:
        basis = cached_basis(p, w, grid, cache_dir)
        kf = bergman_kernel(basis, w, grid)
        l1 = kernel_vs_envelope(kf, env, grid)
        errors.append((p, l1))
        rows.append((p, l1, basis.gram_cond))
    _write_csv(os.path.join(out_dir, "kernel_l1.csv"),
               ["p", "l1_to_psi_h", "gram_cond"], rows)
    metrics = {"l1_errors": {str(p): e for p, e in errors}}
    verdicts = []
    if cfg.weight == "fs":
        worst = max(abs(e - math.log(p + 1) / (2 * p)) for p, e in errors)
        verdicts.append(Verdict("fs-kernel-l1-oracle", worst <= 1e-6, worst, 1e-6,
                                "constant-kernel closed form log(p+1)/(2p)"))
    if len(errors) >= 2:
        decreasing = all(b < a for (_, a), (_, b) in zip(errors, errors[1:]))
        final = errors[-1][1]
        metrics["strictly_decreasing"] = decreasing
        metrics["final_l1"] = final
        if cfg.weight.startswith("cap"):
            ok = decreasing and final <= 0.02
            verdicts.append(Verdict("cap-l1-decreasing-final", ok, final, 0.02,
                                    f"strictly decreasing: {decreasing}"))
    return metrics, verdicts


def _run_rate_fit(cfg, w, grid, out_dir, cache_dir):
    env = _reference_envelope(w, grid)
    errors = []
    for p in cfg.degrees:
        basis = cached_basis(p, w, grid, cache_dir)
        kf = bergman_kernel(basis, w, grid)
        errors.append((p, kernel_vs_envelope(kf, env, grid)))
    c_hat, violation = rate_fit(errors)
    scaled = [(p, e, e * p / math.log(p)) for p, e in errors]
    _write_csv(os.path.join(out_dir, "rate_fit.csv"),
               ["p", "l1_to_psi_h", "l1_times_p_over_logp"], scaled)
    vals = [s for _, _, s in scaled]
    band = max(vals) / min(vals) if min(vals) > 0 else math.inf
    metrics = {"c_hat": c_hat, "max_violation": violation, "band_ratio": band}
    verdicts = [Verdict("rate-constant-band", band <= 4.0, band, 4.0,
                        "spread of l1 * p / log p across degrees")]
    return metrics, verdicts


def _run_moments(cfg, out_dir):
    spec = parse_measure(cfg.measure)
    rows = []
    ests = []
    for k in cfg.k_values:
        u = np.full(k, 1.0 / math.sqrt(k), dtype=complex)
        rep = moment_estimate(spec, k, cfg.nu, u, cfg.trials, cfg.seed)
        rows.append((k, rep.estimate, rep.ci_halfwidth, rep.trials))
        ests.append(rep)
    _write_csv(os.path.join(out_dir, "moments.csv"),
               ["k", "estimate", "ci_halfwidth", "trials"], rows)
    metrics = {"estimates": {str(k): [r.estimate, r.ci_halfwidth]
                             for k, r in zip(cfg.k_values, ests)}}
    verdicts = []
    if spec.family.startswith("gaussian") and len(ests) >= 2:
        gap = 0.0
        band = math.inf
        for i in range(len(ests)):
            for j in range(i + 1, len(ests)):
                g = abs(ests[i].estimate - ests[j].estimate)
                b = 3.0 * max(ests[i].ci_halfwidth, ests[j].ci_halfwidth)
                if g - b > gap - band:
                    gap, band = g, b
        verdicts.append(Verdict("moments-constant-in-k", gap <= band, gap, band,
                                "largest pairwise gap vs 3 CI halfwidths"))
    if spec.family.startswith("sphere") and len(ests) >= 2:
        ratios = [r.estimate / math.log(k) ** cfg.nu
                  for k, r in zip(cfg.k_values, ests)]
        band = max(ratios) / min(ratios)
        verdicts.append(Verdict("moments-logk-band", band <= 3.0, band, 3.0,
                                "estimate / (log k)^nu spread"))
    return metrics, verdicts


def _run_zero_equidistribution(cfg, w, grid, out_dir, cache_dir):
    spec = parse_measure(cfg.measure)
    env = _reference_envelope(w, grid)
    medians = []
    summary_rows = []
    root_rows = []
    for p in cfg.degrees:
        basis = cached_basis(p, w, grid, cache_dir)
        l1s = np.empty(cfg.trials)

        def one(i, p=p, basis=basis):
            # ill-conditioned draws are redrawn under an attempt label so
            # results stay independent of which draws were rejected
            for attempt in range(10):
                rng = derive_rng(cfg.seed, "zero-eq", basis.weight_hash,
                                 spec.descriptor, str(p), str(i), str(attempt))
                sec = sample_section(basis, spec, rng)
                try:
                    f = lognorm_field(sec, w, grid)
                except IllConditionedSampleError as exc:
                    log.warning("trial %d attempt %d rejected: %s", i, attempt, exc)
                    continue
                l1s[i] = lognorm_l1(f, env)
                return sec
            raise IllConditionedSampleError(
                f"trial {i}: 10 consecutive ill-conditioned samples")

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                secs = list(pool.map(one, range(cfg.trials)))
        else:
            secs = [one(i) for i in range(cfg.trials)]
        for i in range(cfg.trials):
            summary_rows.append((p, i, l1s[i]))
        medians.append((p, float(np.median(l1s))))
        if p == max(cfg.degrees):
            for i, sec in enumerate(secs[: min(20, cfg.trials)]):
                zs = find_roots(sec)
                for root in zs.finite_roots:
                    inner = abs(root) <= 1.0
                    zloc = root if inner else 1.0 / root
                    root_rows.append((i, p, zloc.real, zloc.imag,
                                      int(Chart.ZERO if inner else Chart.INFINITY),
                                      1.0 / p))
                if zs.mult_at_infinity:
                    root_rows.append((i, p, 0.0, 0.0, int(Chart.INFINITY),
                                      zs.mult_at_infinity / p))
    _write_csv(os.path.join(out_dir, "lognorm_l1.csv"),
               ["p", "trial", "l1_to_psi_h"], summary_rows)
    if root_rows:
        _write_csv(os.path.join(out_dir, "roots.csv"),
                   ["trial", "p", "re", "im", "chart", "mass"], root_rows)
    metrics = {"median_l1": {str(p): m for p, m in medians}}
    verdicts = []
    if len(medians) >= 2:
        decreasing = all(b < a for (_, a), (_, b) in zip(medians, medians[1:]))
        verdicts.append(Verdict("lognorm-l1-median-decreasing", decreasing,
                                medians[-1][1], medians[0][1],
                                "median must fall from first to last degree"))
    return metrics, verdicts


def _run_expectation_current(cfg, w, grid, out_dir, cache_dir):
    spec = parse_measure(cfg.measure)
    regions = [disk_region(1.0, "unit_disk"), annulus_region(0.8, 1.25, "annulus")]
    rows = []
    metrics = {}
    verdicts = []
    for p in cfg.degrees:
        basis = cached_basis(p, w, grid, cache_dir)
        rep = expectation_current(basis, spec, regions, cfg.trials,
                                  cfg.seed, cfg.threads)
        for name, mean, ci in zip(rep.region_names, rep.means, rep.ci_halfwidths):
            rows.append((p, name, mean, ci))
        metrics[str(p)] = {n: [m, c] for n, m, c in
                           zip(rep.region_names, rep.means, rep.ci_halfwidths)}
        if cfg.weight == "fs" and spec.family == "gaussian_complex":
            err = abs(rep.means[0] - 0.5)
            verdicts.append(Verdict(f"fs-disk-mass-p{p}", err <= 0.02, err, 0.02,
                                    "mean unit-disk zero mass vs 1/2"))
        if cfg.weight.startswith("cap"):
            m = rep.means[1]
            verdicts.append(Verdict(f"cap-annulus-mass-p{p}", m >= 0.9, m, 0.9,
                                    "mean zero mass in 0.8<=|z|<1.25"))
    _write_csv(os.path.join(out_dir, "region_masses.csv"),
               ["p", "region", "mean_mass", "ci_halfwidth"], rows)
    return metrics, verdicts


def run(cfg: ExperimentConfig) -> RunReport:
    """Execute one configured experiment and persist all artifacts."""
    t0 = time.perf_counter()
    stage = "setup"
    out_dir = make_run_dir(cfg)
    w = parse_weight(cfg.weight)
    weight_hash = w.content_hash()
    try:
        save_config(cfg, os.path.join(out_dir, "config.ini"))
        grid = build_grid(cfg.n_r, cfg.n_theta)
        cache_dir = os.path.join(cfg.out_dir, "cache")
        kind = cfg.kind
        if kind in (ExperimentKind.KERNEL_CONVERGENCE, ExperimentKind.RATE_FIT,
                    ExperimentKind.ZERO_EQUIDISTRIBUTION,
                    ExperimentKind.EXPECTATION_CURRENT) and not cfg.degrees:
            raise ConfigurationError(f"{kind.value} needs a nonempty degree list")
        stage = kind.value
        if kind is ExperimentKind.ENVELOPE:
            metrics, verdicts = _run_envelope(cfg, w, grid, out_dir)
        elif kind is ExperimentKind.KERNEL_CONVERGENCE:
            metrics, verdicts = _run_kernel_convergence(cfg, w, grid, out_dir, cache_dir)
        elif kind is ExperimentKind.RATE_FIT:
            metrics, verdicts = _run_rate_fit(cfg, w, grid, out_dir, cache_dir)
        elif kind is ExperimentKind.MOMENTS:
            metrics, verdicts = _run_moments(cfg, out_dir)
        elif kind is ExperimentKind.ZERO_EQUIDISTRIBUTION:
            metrics, verdicts = _run_zero_equidistribution(cfg, w, grid, out_dir, cache_dir)
        else:
            metrics, verdicts = _run_expectation_current(cfg, w, grid, out_dir, cache_dir)
        stage = "report"
        report = RunReport(
            config=_config_echo(cfg),
            kind=cfg.kind.value,
            weight_hash=weight_hash,
            version=__version__,
            metrics=metrics,
            verdicts=tuple(verdicts),
            wall_clock=time.perf_counter() - t0,
            out_dir=out_dir,
        )
    except Exception as exc:
        partial = RunReport(
            config=_config_echo(cfg), kind=cfg.kind.value, weight_hash=weight_hash,
            version=__version__, metrics={}, verdicts=(),
            wall_clock=time.perf_counter() - t0, out_dir=out_dir,
            complete=False, failed_stage=stage, error=f"{type(exc).__name__}: {exc}",
        )
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(partial.to_json())
        log.error("run failed during stage %r: %s", stage, exc)
        raise
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    return report
