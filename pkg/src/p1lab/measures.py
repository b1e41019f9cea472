"""Coefficient ensembles for random sections and their log-pairing moments.

Seven families: complex and real Gaussians, the Fubini-Study ensembles,
complex and real unit spheres, and iid ensembles with either compactly
supported or heavy log-tailed components.  The quantity of interest is the
moment E |log|<a,u>||^nu against unit probe vectors u, estimated by Monte
Carlo in fixed batches so results do not depend on thread schedule.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .errors import ConfigurationError, UsageError

_BATCH = 512
_SQRT_HALF = 1.0 / math.sqrt(2.0)

FAMILIES = (
    "gaussian_complex",
    "gaussian_real",
    "fubini_study",
    "sphere_complex",
    "sphere_real",
    "iid_complex",
    "iid_real",
)


@dataclass(frozen=True)
class TailSpec:
    """Component law for the iid families.

    ``uniform_disk``: uniform on the disk (interval, for the real family)
    of the given radius.  ``pareto_log``: the modulus is e^T where T has
    exact survival P(T > R) = min(1, c R^{-rho}); phases are uniform.
    """

    kind: str
    radius: float = 1.0
    rho: float = 2.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform_disk", "pareto_log"):
            raise ConfigurationError(f"unknown tail kind {self.kind!r}")
        if self.kind == "uniform_disk":
            if not (0 < self.radius < math.inf):
                raise ConfigurationError(f"disk radius must be positive, got {self.radius}")
        else:
            if not (self.rho > 1 and math.isfinite(self.rho)):
                raise ConfigurationError(f"tail exponent must exceed 1, got {self.rho}")
            if not (self.c > 0 and math.isfinite(self.c)):
                raise ConfigurationError(f"tail constant must be positive, got {self.c}")

    @property
    def descriptor(self) -> str:
        if self.kind == "uniform_disk":
            return f"uniform_disk,{self.radius:g}"
        return f"pareto_log,{self.rho:g},{self.c:g}"


@dataclass(frozen=True)
class MeasureSpec:
    family: str
    alpha: float | None = None
    tail: TailSpec | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.family == "fubini_study":
            if self.alpha is None or not (self.alpha > 0 and math.isfinite(self.alpha)):
                raise ConfigurationError(
                    f"fubini_study needs a positive alpha, got {self.alpha}"
                )
        elif self.alpha is not None:
            raise ConfigurationError(f"alpha is only meaningful for fubini_study")
        if self.family in ("iid_complex", "iid_real"):
            if self.tail is None:
                raise ConfigurationError(f"{self.family} needs a tail spec")
        elif self.tail is not None:
            raise ConfigurationError(f"tail spec is only meaningful for iid families")

    @property
    def is_real(self) -> bool:
        return self.family in ("gaussian_real", "sphere_real", "iid_real")

    @property
    def descriptor(self) -> str:
        if self.family == "fubini_study":
            return f"fubini_study{{{self.alpha:g}}}"
        if self.tail is not None:
            return f"{self.family}{{{self.tail.descriptor}}}"
        return self.family


_MEASURE_RE = re.compile(r"^([a-z_]+)(\{([^}]*)\})?$")


def parse_measure(descriptor: str) -> MeasureSpec:
    """Parse a family descriptor such as ``fubini_study{2}`` or
    ``iid_complex{pareto_log,4,1}``."""
    m = _MEASURE_RE.match(descriptor.strip())
    if not m:
        raise ConfigurationError(f"malformed measure descriptor {descriptor!r}")
    name, _, argstr = m.groups()
    args = [s.strip() for s in argstr.split(",")] if argstr else []
    if name == "fubini_study":
        if len(args) != 1:
            raise ConfigurationError("fubini_study takes one parameter (alpha)")
        return MeasureSpec(name, alpha=float(args[0]))
    if name in ("iid_complex", "iid_real"):
        if not args:
            raise ConfigurationError(f"{name} needs a tail, e.g. {name}{{uniform_disk,1}}")
        kind, params = args[0], args[1:]
        if kind == "uniform_disk":
            if len(params) != 1:
                raise ConfigurationError("uniform_disk takes one parameter (radius)")
            return MeasureSpec(name, tail=TailSpec("uniform_disk", radius=float(params[0])))
        if kind == "pareto_log":
            if len(params) != 2:
                raise ConfigurationError("pareto_log takes two parameters (rho, c)")
            return MeasureSpec(name, tail=TailSpec("pareto_log",
                                                   rho=float(params[0]),
                                                   c=float(params[1])))
        raise ConfigurationError(f"unknown tail kind {kind!r}")
    if args:
        raise ConfigurationError(f"family {name!r} takes no parameters")
    return MeasureSpec(name)


def sphere_area_constant(m: int) -> float:
    """Surface area of the unit sphere in R^m, 2 pi^(m/2) / Gamma(m/2)."""
    if m < 1 or m != int(m):
        raise UsageError(f"dimension must be a positive integer, got {m}")
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


def _sample_tail(tail: TailSpec, real: bool, shape, rng) -> np.ndarray:
    if tail.kind == "uniform_disk":
        if real:
            return rng.uniform(-tail.radius, tail.radius, shape) + 0j
        # radius sqrt(U) makes the area element uniform
        r = tail.radius * np.sqrt(rng.uniform(0.0, 1.0, shape))
        return r * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, shape))
    # pareto_log: T = c^(1/rho) U^(-1/rho) has survival c R^(-rho) exactly
    t = tail.c ** (1.0 / tail.rho) * rng.uniform(0.0, 1.0, shape) ** (-1.0 / tail.rho)
    mag = np.exp(t)
    if real:
        return mag * rng.choice((-1.0, 1.0), shape) + 0j
    return mag * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, shape))


def sample_batch(spec: MeasureSpec, k: int, n: int, rng) -> np.ndarray:
    """n coefficient vectors as an (n, k) complex matrix."""
    if k < 1:
        raise UsageError(f"dimension must be at least 1, got {k}")
    fam = spec.family
    if fam == "gaussian_complex":
        return (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) * _SQRT_HALF
    if fam == "gaussian_real":
        return rng.standard_normal((n, k)) * _SQRT_HALF + 0j
    if fam == "sphere_complex" or fam == "sphere_real":
        if fam == "sphere_complex":
            g = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        else:
            g = rng.standard_normal((n, k)) + 0j
        norm = np.linalg.norm(g, axis=1)
        while np.any(norm == 0.0):
            bad = norm == 0.0
            g[bad] = sample_batch(spec, k, int(bad.sum()), rng)
            norm = np.linalg.norm(g, axis=1)
        return g / norm[:, None]
    if fam == "fubini_study":
        g = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        norm = np.linalg.norm(g, axis=1)
        b = rng.beta(k, spec.alpha, n)
        while np.any(norm == 0.0) or np.any(b >= 1.0):
            bad = (norm == 0.0) | (b >= 1.0)
            nb = int(bad.sum())
            g[bad] = rng.standard_normal((nb, k)) + 1j * rng.standard_normal((nb, k))
            b[bad] = rng.beta(k, spec.alpha, nb)
            norm = np.linalg.norm(g, axis=1)
        # squared norm is Beta-prime(k, alpha); direction is uniform
        return g * (np.sqrt(b / (1.0 - b)) / norm)[:, None]
    return _sample_tail(spec.tail, spec.is_real, (n, k), rng)


def sample(spec: MeasureSpec, k: int, rng) -> np.ndarray:
    """One coefficient vector of length k."""
    return sample_batch(spec, k, 1, rng)[0]


@dataclass(frozen=True)
class MomentReport:
    family: str
    k: int
    nu: float
    estimate: float
    ci_halfwidth: float
    trials: int
    seed: int


def moment_estimate(spec: MeasureSpec, k: int, nu: float, u: np.ndarray,
                    trials: int, seed: int) -> MomentReport:
    """Monte-Carlo estimate of E |log|<a,u>||^nu for a unit probe u.

    The pairing is the bilinear sum a_j u_j.  Zero pairings (a measure-zero
    event) are redrawn so the log stays finite.
    """
    u = np.asarray(u, dtype=complex).ravel()
    if u.size != k:
        raise UsageError(f"probe vector has length {u.size}, expected {k}")
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise UsageError("probe vector must have unit norm")
    if nu < 1:
        raise UsageError(f"moment order must be at least 1, got {nu}")
    if trials < 1000:
        raise UsageError(f"need at least 1000 trials, got {trials}")

    rng = derive_rng(seed, "moments", spec.descriptor, str(k), f"{nu:g}")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        n = min(_BATCH, trials - done)
        pair = sample_batch(spec, k, n, rng) @ u
        while np.any(pair == 0.0):
            bad = pair == 0.0
            pair[bad] = sample_batch(spec, k, int(bad.sum()), rng) @ u
        vals = np.abs(np.log(np.abs(pair))) ** nu
        total += float(vals.sum())
        total_sq += float(np.dot(vals, vals))
        done += n
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0)
    ci = 1.96 * math.sqrt(var / trials)
    return MomentReport(family=spec.descriptor, k=k, nu=nu, estimate=mean,
                        ci_halfwidth=ci, trials=trials, seed=seed)


def iid_scaling_probe(tail: TailSpec, nu: float, ks: list[int],
                      trials: int, seed: int,
                      real: bool = False) -> tuple[list[tuple[int, float]], float]:
    """Worst-case moment over a fixed probe set, per dimension.

    Probes are the first and last coordinate vectors and the flat vector
    (1,...,1)/sqrt(k); the flat probe is the one that feels the heavy tail
    of a sum.  Returns the (k, worst estimate) table and the fitted
    log-log slope of the estimates against k.
    """
    if tail.kind == "pareto_log" and nu >= tail.rho:
        raise UsageError(
            f"moment order {nu} >= tail exponent {tail.rho}; moment may diverge"
        )
    if len(ks) < 2:
        raise UsageError("scaling probe needs at least two dimensions")
    family = "iid_real" if real else "iid_complex"
    spec = MeasureSpec(family, tail=tail)
    rows = []
    for k in sorted(ks):
        probes = [np.eye(k, dtype=complex)[0], np.eye(k, dtype=complex)[-1],
                  np.full(k, 1.0 / math.sqrt(k), dtype=complex)]
        worst = max(
            moment_estimate(spec, k, nu, u, trials, seed).estimate for u in probes
        )
        rows.append((k, worst))
    slope = float(np.polyfit(np.log([k for k, _ in rows]),
                             np.log([e for _, e in rows]), 1)[0])
    return rows, slope


class MomentGrowthClass(enum.Enum):
    """How the per-degree moment constants grow against the order nu."""

    SUMMABLE = "summable"
    CESARO_ONLY = "cesaro_only"
    FAILS = "fails"


def moment_growth_class(nu: float, table: list[tuple[int, float]]) -> MomentGrowthClass:
    """Classify fitted growth C_p ~ p^beta of a moment-constant table.

    beta < nu - 1 keeps sum C_p p^-nu finite (SUMMABLE); beta < nu still
    sends C_p p^-nu to zero, enough for averaged convergence (CESARO_ONLY);
    anything faster FAILS both.
    """
    if len(table) < 4:
        raise UsageError(f"growth fit needs at least 4 rows, got {len(table)}")
    ps = np.array([float(p) for p, _ in table])
    cs = np.array([float(c) for _, c in table])
    if np.any(ps <= 0) or np.any(cs <= 0):
        raise UsageError("growth fit needs positive degrees and constants")
    beta = float(np.polyfit(np.log(ps), np.log(cs), 1)[0])
    if beta < nu - 1.0:
        return MomentGrowthClass.SUMMABLE
    if beta < nu:
        return MomentGrowthClass.CESARO_ONLY
    return MomentGrowthClass.FAILS
