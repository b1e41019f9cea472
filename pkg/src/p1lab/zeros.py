"""Zeros of random holomorphic sections and their counting measures.

A section is a degree-p polynomial with random coefficients in an
orthonormal basis.  Everything downstream of the coefficient draw is
deterministic, so expectation estimates are reproducible: each trial
owns a labelled RNG stream and results are reduced in trial order no
matter how many worker threads ran.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from ._rng import derive_rng
from .bergman import BergmanBasis
from .envelope import EnvelopeResult, WeightField, _bump_profile
from .errors import IllConditionedSampleError, UsageError
from .geometry import (
    Chart,
    EmpiricalMeasure,
    QuadratureGrid,
    RadialRegion,
)
from .measures import MeasureSpec, sample

log = logging.getLogger(__name__)

# Leading coefficients below STRIP_REL * max|c| are treated as exact zeros;
# each stripped coefficient moves one zero to the point at infinity.
STRIP_REL = 1e-13
ROOT_CONDITION_LIMIT = 1e-6
# Nodes closer than this to a root are dropped from log-norm fields.
NODE_CLEARANCE = 1e-9
MAX_MASKED_FRACTION = 0.01
MAX_REDRAWS = 10

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class SectionSample:
    """One random section: basis coefficients and their monomial form."""

    degree: int
    basis_coeffs: np.ndarray
    monomial_coeffs: np.ndarray
    family: str
    weight_hash: str

    def __post_init__(self):
        self.basis_coeffs.setflags(write=False)
        self.monomial_coeffs.setflags(write=False)


def sample_section(basis: BergmanBasis, spec: MeasureSpec, rng) -> SectionSample:
    """Draw coefficients from spec and expand in the monomial basis."""
    a = sample(spec, basis.dim, rng)
    redraws = 0
    while not np.any(a):
        # a zero section has no zero set; redraw (probability-zero event
        # for the continuous families, possible only via underflow)
        redraws += 1
        if redraws > MAX_REDRAWS:
            raise UsageError(
                f"measure family {spec.descriptor} produced {MAX_REDRAWS} "
                "identically-zero coefficient vectors in a row"
            )
        log.warning("zero coefficient vector drawn, redrawing")
        a = sample(spec, basis.dim, rng)
    c = basis.coeffs.T @ a
    return SectionSample(
        degree=basis.degree,
        basis_coeffs=a,
        monomial_coeffs=c,
        family=spec.descriptor,
        weight_hash=basis.weight_hash,
    )


@dataclass(frozen=True)
class ZeroSet:
    """Roots of a section, split into finite roots and infinity."""

    degree: int
    finite_roots: np.ndarray
    mult_at_infinity: int
    root_condition: float
    strip_threshold: float

    def __post_init__(self):
        self.finite_roots.setflags(write=False)
        if self.finite_roots.size + self.mult_at_infinity != self.degree:
            raise UsageError(
                f"zero count {self.finite_roots.size}+{self.mult_at_infinity} "
                f"does not match degree {self.degree}"
            )


def _residuals(z: np.ndarray, c_low: np.ndarray, c_rev: np.ndarray) -> np.ndarray:
    """Scaled backward errors |f(z)| / sum_m |c_m||z|^m.

    Points outside the unit circle are evaluated through the reversed
    polynomial at w = 1/z; numerator and denominator pick up the same
    |z|^d factor, so the quotient is chart-independent.
    """
    out = np.empty(z.shape, dtype=float)
    inner = np.abs(z) <= 1.0
    zi = z[inner]
    num = np.abs(npoly.polyval(zi, c_low))
    den = npoly.polyval(np.abs(zi), np.abs(c_low)).real
    with np.errstate(invalid="ignore"):
        out[inner] = np.where(num == 0.0, 0.0, num / den)
    zo = z[~inner]
    w = 1.0 / zo
    num = np.abs(npoly.polyval(w, c_rev))
    den = npoly.polyval(np.abs(w), np.abs(c_rev)).real
    out[~inner] = np.where(num == 0.0, 0.0, num / den)
    return out


def _aberth_step(z: np.ndarray, c_low: np.ndarray, c_rev: np.ndarray) -> np.ndarray:
    """One simultaneous Newton (Aberth) correction, chart-aware.

    Newton ratios f/f' for roots outside the unit circle are computed
    from the reversed polynomial g(w) = w^d f(1/w) via
    f/f' = z g / (d g - w g'), which never forms z^d.
    """
    d = c_low.size - 1
    ratio = np.zeros_like(z)
    inner = np.abs(z) <= 1.0
    zi = z[inner]
    fv = npoly.polyval(zi, c_low)
    fp = npoly.polyval(zi, npoly.polyder(c_low))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio[inner] = np.where(fp == 0.0, 0.0, fv / fp)
    zo = z[~inner]
    w = 1.0 / zo
    gv = npoly.polyval(w, c_rev)
    gp = npoly.polyval(w, npoly.polyder(c_rev))
    den = d * gv - w * gp
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio[~inner] = np.where(den == 0.0, 0.0, zo * gv / den)

    diff = z[:, None] - z[None, :]
    np.fill_diagonal(diff, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / diff
    np.fill_diagonal(inv, 0.0)
    repulsion = inv.sum(axis=1)
    # overflowed Newton ratios propagate NaN here; such roots keep their
    # companion-matrix value through the isfinite fallback
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        denom = 1.0 - ratio * repulsion
        step = np.where(denom == 0.0, ratio, ratio / denom)
        z_new = z - step
    return np.where(np.isfinite(z_new), z_new, z)


def find_roots(s: SectionSample) -> ZeroSet:
    """All p zeros of the section, counted with multiplicity.

    Companion-matrix roots of the stripped polynomial get one Aberth
    polish round; a polished root is kept only where it lowers that
    root's residual, so the final condition number never exceeds the
    unpolished one.
    """
    c = np.asarray(s.monomial_coeffs, dtype=complex)
    cmax = float(np.max(np.abs(c)))
    if cmax == 0.0:
        raise UsageError("zero section has no zero divisor")
    strip = STRIP_REL * cmax
    d = c.size - 1
    while d > 0 and np.abs(c[d]) <= strip:
        d -= 1
    mult_inf = s.degree - d
    c_low = c[: d + 1] / cmax
    c_rev = c_low[::-1].copy()

    if d == 0:
        return ZeroSet(
            degree=s.degree,
            finite_roots=np.empty(0, dtype=complex),
            mult_at_infinity=mult_inf,
            root_condition=0.0,
            strip_threshold=strip,
        )

    # np.roots returns a real array for pure powers; force complex
    roots = np.roots(c_low[::-1]).astype(complex)
    res = _residuals(roots, c_low, c_rev)
    polished = _aberth_step(roots, c_low, c_rev)
    res_p = _residuals(polished, c_low, c_rev)
    better = res_p < res
    roots = np.where(better, polished, roots)
    res = np.where(better, res_p, res)

    cond = float(np.max(res)) if res.size else 0.0
    if not np.isfinite(cond) or cond > ROOT_CONDITION_LIMIT:
        raise IllConditionedSampleError(
            f"root residual {cond:.3e} exceeds {ROOT_CONDITION_LIMIT:.1e}"
        )
    return ZeroSet(
        degree=s.degree,
        finite_roots=roots,
        mult_at_infinity=mult_inf,
        root_condition=cond,
        strip_threshold=strip,
    )


def empirical_zero_measure(z: ZeroSet, p: int) -> EmpiricalMeasure:
    """Normalized counting measure of the zero set: p atoms of mass 1/p."""
    if p != z.degree:
        raise UsageError(f"degree mismatch: zero set {z.degree}, requested {p}")
    if p == 0:
        raise UsageError("degree-0 sections have an empty zero divisor")
    roots = z.finite_roots
    inner = np.abs(roots) <= 1.0
    n = roots.size + (1 if z.mult_at_infinity else 0)
    chart = np.empty(n, dtype=np.int8)
    coords = np.empty(n, dtype=complex)
    k = roots[inner].size
    chart[:k] = Chart.ZERO
    coords[:k] = roots[inner]
    chart[k : roots.size] = Chart.INFINITY
    coords[k : roots.size] = 1.0 / roots[~inner]
    masses = np.full(n, 1.0 / p)
    if z.mult_at_infinity:
        chart[-1] = Chart.INFINITY
        coords[-1] = 0.0
        masses[-1] = z.mult_at_infinity / p
    uniform = p if z.mult_at_infinity <= 1 else None
    return EmpiricalMeasure(chart, coords, masses, uniform_count=uniform)


@dataclass(frozen=True)
class LogNormField:
    """(1/p) log|f| - psi on a grid, with nodes too close to roots masked.

    ``values`` are zeroed on masked nodes; ``weights`` are the FS weights
    of the retained nodes, renormalized to total mass one.
    """

    degree: int
    values: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    masked_fraction: float
    weight_hash: str
    grid_shape: tuple[int, int]

    def __post_init__(self):
        for a in (self.values, self.mask, self.weights):
            a.setflags(write=False)


def lognorm_field(s: SectionSample, w: WeightField, grid: QuadratureGrid) -> LogNormField:
    """Pointwise normalized log-norm of the section against the weight."""
    if s.weight_hash and s.weight_hash != w.content_hash():
        raise UsageError("section was built against a different weight")
    p = s.degree
    c = np.asarray(s.monomial_coeffs, dtype=complex)
    cmax = float(np.max(np.abs(c)))
    scaled = c / cmax
    zero_chart = grid.chart == Chart.ZERO

    values = np.empty(grid.chart.shape, dtype=float)
    with np.errstate(divide="ignore"):
        fz = npoly.polyval(grid.coords[zero_chart], scaled)
        values[zero_chart] = np.log(np.abs(fz))
        # w-trivialization: coefficients reversed, same modulus scale
        fw = npoly.polyval(grid.coords[~zero_chart], scaled[::-1])
        values[~zero_chart] = np.log(np.abs(fw))
    values += math.log(cmax)
    values /= p
    values -= w.psi_local(grid.chart, grid.coords)

    zs = find_roots(s)
    mask = np.zeros(grid.chart.shape, dtype=bool)
    roots = zs.finite_roots
    # chart-local clearance: compare nodes with roots canonical in the
    # same chart (a small margin catches roots just over the circle)
    near_zero = roots[np.abs(roots) <= 1.5]
    if near_zero.size:
        dist = np.abs(grid.coords[zero_chart, None] - near_zero[None, :])
        mask[zero_chart] = np.min(dist, axis=1) < NODE_CLEARANCE
    far = roots[np.abs(roots) > 1.0 / 1.5]
    w_roots = 1.0 / far if far.size else far
    if zs.mult_at_infinity:
        w_roots = np.concatenate([w_roots, [0.0 + 0.0j]])
    if w_roots.size:
        dist = np.abs(grid.coords[~zero_chart, None] - w_roots[None, :])
        mask[~zero_chart] = np.min(dist, axis=1) < NODE_CLEARANCE
    mask |= ~np.isfinite(values)

    frac = float(np.count_nonzero(mask)) / mask.size
    if frac > MAX_MASKED_FRACTION:
        raise IllConditionedSampleError(
            f"{frac:.2%} of grid nodes fall within {NODE_CLEARANCE:.0e} "
            "of a zero; sample rejected"
        )
    values[mask] = 0.0
    weights = grid.fs_weights.copy()
    weights[mask] = 0.0
    weights /= weights.sum()
    return LogNormField(
        degree=p,
        values=values,
        mask=mask,
        weights=weights,
        masked_fraction=frac,
        weight_hash=w.content_hash(),
        grid_shape=(grid.n_r, grid.n_theta),
    )


def lognorm_l1(fieldv: LogNormField, env: EnvelopeResult) -> float:
    """L1 distance from the log-norm field to the envelope deficit psi_h."""
    if fieldv.weight_hash != env.weight_hash:
        raise UsageError("log-norm field and envelope use different weights")
    if fieldv.grid_shape != env.grid_shape:
        raise UsageError(
            f"grid mismatch: field {fieldv.grid_shape}, envelope {env.grid_shape}"
        )
    return float(np.sum(fieldv.weights * np.abs(fieldv.values - env.psi_h)))


@dataclass(frozen=True)
class RegionMassReport:
    """Monte Carlo estimate of expected zero mass in radial regions."""

    degree: int
    family: str
    trials: int
    seed: int
    region_names: tuple[str, ...]
    means: tuple[float, ...]
    ci_halfwidths: tuple[float, ...]
    redraw_count: int = 0
    samples: np.ndarray | None = field(default=None, compare=False)


def _one_trial(basis: BergmanBasis, spec: MeasureSpec, seed: int,
               trial: int, regions) -> tuple[np.ndarray, int]:
    for attempt in range(MAX_REDRAWS):
        rng = derive_rng(seed, "zeros", basis.weight_hash, spec.descriptor,
                         str(trial), str(attempt))
        s = sample_section(basis, spec, rng)
        try:
            zs = find_roots(s)
        except IllConditionedSampleError as exc:
            log.warning("trial %d attempt %d rejected: %s", trial, attempt, exc)
            continue
        em = empirical_zero_measure(zs, basis.degree)
        return np.array([em.mass_in(r) for r in regions]), attempt
    raise IllConditionedSampleError(
        f"trial {trial}: {MAX_REDRAWS} consecutive ill-conditioned samples"
    )


def expectation_current(basis: BergmanBasis, spec: MeasureSpec,
                        regions: list[RadialRegion], trials: int,
                        seed: int, threads: int = 1) -> RegionMassReport:
    """Expected zero mass per region, averaged over random sections.

    Each trial gets its own derived RNG stream (redraw attempts are
    labelled too), and per-region sums run in trial order with exact
    accumulation, so results are byte-identical for any thread count.
    """
    if trials < 100:
        raise UsageError(f"need at least 100 trials for a CI, got {trials}")
    if threads < 1:
        raise UsageError(f"thread count must be >= 1, got {threads}")
    rows = np.empty((trials, len(regions)), dtype=float)
    redraws = np.zeros(trials, dtype=int)

    def run(i: int) -> None:
        rows[i], redraws[i] = _one_trial(basis, spec, seed, i, regions)

    if threads == 1:
        for i in range(trials):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(trials)))

    means = []
    cis = []
    for j in range(len(regions)):
        col = rows[:, j]
        m = math.fsum(col) / trials
        var = math.fsum((x - m) ** 2 for x in col) / max(trials - 1, 1)
        means.append(m)
        cis.append(1.96 * math.sqrt(var / trials))
    return RegionMassReport(
        degree=basis.degree,
        family=spec.descriptor,
        trials=trials,
        seed=seed,
        region_names=tuple(r.name for r in regions),
        means=tuple(means),
        ci_halfwidths=tuple(cis),
        redraw_count=int(redraws.sum()),
        samples=rows,
    )


# Fixed test family for weak convergence: 16 dyadic annuli in log radius
# plus 8 unit-width smooth radial bumps.
_DYADIC_EDGES = np.concatenate([[-np.inf], LOG2 * np.arange(-7, 8), [np.inf]])
_BUMP_CENTERS = np.arange(-3.5, 4.0, 1.0)


def weak_convergence_stat(observed: EmpiricalMeasure,
                          reference: EmpiricalMeasure) -> float:
    """Largest mass discrepancy over the fixed radial test family."""
    worst = 0.0
    for lo, hi in zip(_DYADIC_EDGES[:-1], _DYADIC_EDGES[1:]):
        r = RadialRegion(float(lo), float(hi))
        worst = max(worst, abs(observed.mass_in(r) - reference.mass_in(r)))
    for center in _BUMP_CENTERS:
        f = _bump_profile(float(center), 1.0, 1.0)
        worst = max(
            worst, abs(observed.integrate_radial(f) - reference.integrate_radial(f))
        )
    return worst
