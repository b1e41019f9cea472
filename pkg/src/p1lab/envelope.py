"""Equilibrium potentials: weights, radial envelopes, and the grid obstacle solver.

A weight is a continuous function phi on the sphere; the associated local
weight in chart ZERO is psi = rho + phi with rho the Fubini-Study potential.
The equilibrium (envelope) potential is

    psi_eq = sup { v : v psh on C, v(z) <= log|z| + O(1) , v <= psi },

the largest logarithmic-class potential below psi.  The defect
Psi_h = psi_eq - psi <= 0 is a global continuous function and vanishes on
the contact set.

Radial weights reduce to one variable: with t = log|zeta| and u(t) =
psi(e^t), psi_eq is the largest convex nondecreasing minorant of u with
slope <= 1, computed here by a double Legendre-type transform over a
finite slope grid (sup over the line family s*t + inf_tau(u - s*tau),
s in [0, 1]).

The general solver works on the cylinder coordinates (t, theta),
t = log|zeta|: subharmonicity of the chart potential v = u_glob + rho is
equivalent to flat subharmonicity in (t, theta), so gluing the two chart
disks along |zeta| = 1 turns the sphere minus the two chart centers into
one rectangular mesh with periodic theta.  The centers enter as two extra
unknowns coupled to the first/last mesh ring (discrete mean-value rows).
The obstacle problem (largest subharmonic function below the obstacle) is
solved by projected red-black SOR: relax toward the 5-point average, then
clip from above at the obstacle, so iterates satisfy psi_eq <= psi exactly
by construction.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    InadmissibleWeightError,
    InvalidFieldError,
    SolverQualityError,
    UsageError,
)
from .geometry import (
    Chart,
    EmpiricalMeasure,
    QuadratureGrid,
    TWO_PI,
    fs_local_potential,
)

log = logging.getLogger(__name__)

# Cylinder truncation: |log|zeta|| <= EXTENT covers the sphere except two
# caps of FS mass ~ e^(-2*EXTENT) ~ 1.5e-8 where admissible weights are flat.
EXTENT = 9.0

_SLOPE_TOL = 0.02  # admissibility slack on the asymptotic slopes


def rho_of_t(t: np.ndarray) -> np.ndarray:
    """rho in log-radius: (1/2) log(1 + e^(2t)), stable for all t."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    neg = t <= 0
    out[neg] = 0.5 * np.log1p(np.exp(2.0 * t[neg]))
    out[~neg] = t[~neg] + 0.5 * np.log1p(np.exp(-2.0 * t[~neg]))
    return out


def _phi_excess_of_t(t: np.ndarray) -> np.ndarray:
    """rho(t) - max(t, 0): the bounded part of rho, -> 0 at both ends."""
    t = np.asarray(t, dtype=float)
    return 0.5 * np.log1p(np.exp(-2.0 * np.abs(t)))


# ---------------------------------------------------------------------------
# weight fields


@dataclass(frozen=True)
class WeightField:
    """Continuous weight phi on the sphere, evaluable anywhere.

    ``phi_t`` is the radial profile (phi as a function of t = log|zeta|)
    when the weight is radial, else None.  ``phi_node`` evaluates phi from
    chart labels and chart coordinates.  ``holder`` optionally declares a
    (exponent, constant) regularity hint; it is metadata only.
    """

    descriptor: str
    is_radial: bool
    phi_node: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_t: Callable[[np.ndarray], np.ndarray] | None = None
    phi_cyl: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    holder: tuple[float, float] | None = None

    def phi(self, chart: np.ndarray, coords: np.ndarray) -> np.ndarray:
        v = np.asarray(self.phi_node(np.asarray(chart), np.asarray(coords)), dtype=float)
        if not np.all(np.isfinite(v)):
            raise InvalidFieldError(f"weight {self.descriptor!r} non-finite")
        return v

    def psi_local(self, chart: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Chart-local weight psi = rho(coord) + phi at canonical nodes."""
        return fs_local_potential(coords) + self.phi(chart, coords)

    def psi_of_cyl(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Chart-ZERO potential of the weight on the cylinder: rho(t) + phi."""
        if self.phi_t is not None:
            return rho_of_t(t) + np.broadcast_to(self.phi_t(t), np.broadcast_shapes(np.shape(t), np.shape(theta))).copy()
        return rho_of_t(t) + self.phi_cyl(t, theta)

    def phi_at_infinity(self) -> float:
        return float(self.phi_t(np.array([np.inf]))[0]) if self.phi_t is not None \
            else float(self.phi_cyl(np.array([EXTENT]), np.array([0.0]))[0])

    def phi_at_zero(self) -> float:
        return float(self.phi_t(np.array([-np.inf]))[0]) if self.phi_t is not None \
            else float(self.phi_cyl(np.array([-EXTENT]), np.array([0.0]))[0])

    def content_hash(self) -> str:
        """Hash of the descriptor plus canonical probe samples of phi."""
        t = np.linspace(-EXTENT, EXTENT, 193)
        th = TWO_PI * np.arange(24) / 24.0
        if self.phi_t is not None:
            probe = np.asarray(self.phi_t(t), dtype=float)
        else:
            probe = self.phi_cyl(t[:, None], th[None, :]).astype(float)
        h = hashlib.blake2b(digest_size=16)
        h.update(self.descriptor.encode())
        h.update(np.ascontiguousarray(probe).tobytes())
        return h.hexdigest()


def _radial_field(descriptor: str, phi_t, holder=None) -> WeightField:
    def phi_node(chart, coords):
        with np.errstate(divide="ignore"):
            t = np.log(np.abs(coords))
        t = np.where(np.asarray(chart) == Chart.ZERO, t, -t)
        return phi_t(t)

    return WeightField(
        descriptor=descriptor,
        is_radial=True,
        phi_node=phi_node,
        phi_t=phi_t,
        holder=holder,
    )


def _bump_profile(center: float, width: float, height: float):
    def phi_t(t):
        t = np.asarray(t, dtype=float)
        s = (t - center) / width
        out = np.zeros_like(t)
        inside = np.abs(s) < 1.0
        si = s[inside]
        out[inside] = height * np.exp(1.0 - 1.0 / (1.0 - si * si))
        return out

    return phi_t


_DESCRIPTOR_RE = re.compile(r"^([a-z_]+)(\{([^}]*)\})?$")


def parse_weight(descriptor: str, grid: QuadratureGrid | None = None) -> WeightField:
    """Build a WeightField from a descriptor string.

    Builtin families (radial; parameters in braces):

    * ``fs``                      phi = 0, the Fubini-Study weight
    * ``cap{c}``                  psi(e^t) = min(-t, c) for t < 0, t for t >= 0
    * ``circle{c}``               psi(e^t) = max(t, c)
    * ``bump{center,width,height}``  smooth compact bump in t added to rho

    A path ending in ``.csv`` loads either a two-column (t, u) radial
    profile or per-node phi values for ``grid``.
    """
    descriptor = descriptor.strip()
    if descriptor.endswith(".csv"):
        return _load_csv_weight(descriptor, grid)
    m = _DESCRIPTOR_RE.match(descriptor)
    if not m:
        raise ConfigurationError(f"cannot parse weight descriptor {descriptor!r}")
    name = m.group(1)
    params = []
    if m.group(3):
        try:
            params = [float(x) for x in m.group(3).split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"bad parameters in {descriptor!r}") from exc

    if name == "fs":
        if params:
            raise ConfigurationError("fs takes no parameters")
        return _radial_field("fs", lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                             holder=(1.0, 1.0))
    if name == "cap":
        if len(params) != 1 or params[0] <= 0:
            raise ConfigurationError("cap{c} needs one positive parameter")
        c = params[0]

        def phi_t(t, c=c):
            t = np.asarray(t, dtype=float)
            neg = np.minimum(-t, c) - rho_of_t(np.minimum(t, 0.0))
            pos = -_phi_excess_of_t(t)
            return np.where(t < 0, neg, pos)

        return _radial_field(f"cap{{{c:g}}}", phi_t, holder=(1.0, 2 * c))
    if name == "circle":
        if len(params) != 1:
            raise ConfigurationError("circle{c} needs one parameter")
        c = params[0]

        def phi_t(t, c=c):
            t = np.asarray(t, dtype=float)
            u = np.maximum(t, c)
            # u - rho, organized so both infinities are finite
            return np.where(
                t < 0,
                u - rho_of_t(np.minimum(t, 0.0)),
                np.maximum(c - t, 0.0) - _phi_excess_of_t(t),
            )

        return _radial_field(f"circle{{{c:g}}}", phi_t, holder=(1.0, 2 * abs(c) + 2))
    if name == "bump":
        if len(params) != 3 or params[1] <= 0:
            raise ConfigurationError("bump{center,width,height} needs width > 0")
        c0, w0, h0 = params
        if abs(c0) + w0 > EXTENT - 1:
            raise ConfigurationError("bump support too close to a chart center")
        return _radial_field(
            f"bump{{{c0:g},{w0:g},{h0:g}}}", _bump_profile(c0, w0, h0), holder=(1.0, 1.0)
        )
    raise ConfigurationError(f"unknown weight family {name!r}")


def _load_csv_weight(path: str, grid: QuadratureGrid | None) -> WeightField:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ConfigurationError(f"{path}: empty weight file")
    if rows[0] and not _is_number(rows[0][0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    else:
        header = None
    width = len(rows[0])
    if width == 2:
        data = np.array([[float(a), float(b)] for a, b in rows])
        t, u = data[:, 0], data[:, 1]
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError(f"{path}: t samples must be strictly increasing")
        rw = RadialWeight(t, u)  # validates admissibility

        # phi = u - rho organized as (u - max(t,0)) - (rho - max(t,0)) so
        # both terms stay finite at the chart centers
        def phi_t_stable(tq, rw=rw):
            tq = np.asarray(tq, dtype=float)
            return rw.u_minus_linear(tq) - _phi_excess_of_t(tq)

        return _radial_field(f"csv:{path}", phi_t_stable)
    if width == 4:
        if grid is None:
            raise ConfigurationError(f"{path}: node-value weight needs a declared grid")
        return _load_node_weight(path, rows, grid)
    raise ConfigurationError(f"{path}: expected 2 columns (t,u) or 4 (chart,re,im,phi)")


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _load_node_weight(path: str, rows, grid: QuadratureGrid) -> WeightField:
    data = np.array([[float(a) for a in r] for r in rows])
    if data.shape[0] != grid.n_nodes:
        raise ConfigurationError(
            f"{path}: {data.shape[0]} rows but grid has {grid.n_nodes} nodes"
        )
    ch = data[:, 0].astype(int)
    co = data[:, 1] + 1j * data[:, 2]
    if np.any(ch != grid.chart) or np.max(np.abs(co - grid.coords)) > 1e-12:
        raise ConfigurationError(f"{path}: node coordinates do not match the grid")
    vals = data[:, 3]
    if not np.all(np.isfinite(vals)):
        raise InvalidFieldError(f"{path}: non-finite phi values")

    # bilinear interpolant in (t, theta) over the glued node lattice
    half = grid.n_r * grid.n_theta
    v0 = vals[:half].reshape(grid.n_r, grid.n_theta)
    v1 = vals[half:].reshape(grid.n_r, grid.n_theta)
    t0 = np.log(grid.r)                       # ascending negative
    t_axis = np.concatenate([t0, -t0[::-1]])  # ascending over both charts
    # chart-INFINITY node (r_i, theta_j) sits at global (t, theta) = (-log r_i, -theta_j)
    v1_glob = np.roll(v1[::-1, ::-1], 1, axis=1)
    table = np.concatenate([v0, v1_glob], axis=0)
    from scipy.interpolate import RegularGridInterpolator

    th_axis = np.concatenate([grid.theta, [TWO_PI]])
    table_p = np.concatenate([table, table[:, :1]], axis=1)
    interp = RegularGridInterpolator(
        (t_axis, th_axis), table_p, method="linear", bounds_error=False, fill_value=None
    )

    def phi_cyl(t, theta):
        t = np.asarray(t, dtype=float)
        theta = np.asarray(theta, dtype=float)
        tq = np.clip(t, t_axis[0], t_axis[-1])
        thq = np.mod(theta, TWO_PI)
        tq, thq = np.broadcast_arrays(tq, thq)
        return interp(np.stack([tq.ravel(), thq.ravel()], axis=-1)).reshape(tq.shape)

    def phi_node(chart, coords):
        with np.errstate(divide="ignore"):
            t = np.log(np.abs(coords))
        chart = np.asarray(chart)
        t = np.where(chart == Chart.ZERO, t, -t)
        ang = np.angle(coords)
        theta = np.where(chart == Chart.ZERO, ang, -ang) % TWO_PI
        return phi_cyl(t, theta)

    return WeightField(
        descriptor=f"csv:{path}",
        is_radial=False,
        phi_node=phi_node,
        phi_cyl=phi_cyl,
    )


# ---------------------------------------------------------------------------
# radial reduction


class RadialWeight:
    """Sampled radial profile u(t) = psi(e^t) with admissible asymptotics.

    Admissible means u tends to a constant on the left (slope 0) and to
    t + const on the right (slope 1); evaluation extends the samples by
    exactly those asymptotes.
    """

    def __init__(self, t: np.ndarray, u: np.ndarray):
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        if t.ndim != 1 or t.size < 8 or t.shape != u.shape:
            raise InadmissibleWeightError("need >= 8 samples of (t, u)")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(u))):
            raise InadmissibleWeightError("non-finite radial samples")
        if t[0] >= -1.0 or t[-1] <= 1.0:
            raise InadmissibleWeightError("samples must straddle [-1, 1] in t")
        sl = (u[1] - u[0]) / (t[1] - t[0])
        sr = (u[-1] - u[-2]) / (t[-1] - t[-2])
        if abs(sl) > _SLOPE_TOL:
            raise InadmissibleWeightError(f"left slope {sl:.3g} != 0")
        if abs(sr - 1.0) > _SLOPE_TOL:
            raise InadmissibleWeightError(f"right slope {sr:.3g} != 1")
        self.t = t
        self.u = u
        self.left_limit = float(u[0])
        self.right_intercept = float(u[-1] - t[-1])

    def u_at(self, tq: np.ndarray) -> np.ndarray:
        tq = np.asarray(tq, dtype=float)
        out = np.interp(tq, self.t, self.u)
        out = np.where(tq < self.t[0], self.left_limit, out)
        hi = tq > self.t[-1]
        out = np.where(hi, self.right_intercept + tq, out)
        return out

    def u_minus_linear(self, tq: np.ndarray) -> np.ndarray:
        """u(t) - max(t, 0); finite at both chart centers."""
        tq = np.asarray(tq, dtype=float)
        out = np.interp(tq, self.t, self.u) - np.maximum(tq, 0.0)
        out = np.where(tq < self.t[0], self.left_limit, out)
        return np.where(tq > self.t[-1], self.right_intercept, out)


def radial_weight_of(w: WeightField, t_lo: float = -EXTENT, t_hi: float = EXTENT,
                     n: int = 2049) -> RadialWeight:
    """Sample a radial WeightField into a RadialWeight profile."""
    if not w.is_radial:
        raise UsageError(f"weight {w.descriptor!r} is not radial")
    t = np.linspace(t_lo, t_hi, n)
    return RadialWeight(t, rho_of_t(t) + w.phi_t(t))


def _slope_transform(w: RadialWeight, slope_samples: int):
    if slope_samples < 16:
        raise UsageError("slope_samples too small")
    s = np.arange(slope_samples + 1) / slope_samples
    # b(s) = inf_t (u(t) - s t); the admissible tails only increase u - s t
    # for s in (0,1), and the endpoint slopes are attained on the grid.
    b = np.min(w.u[None, :] - s[:, None] * w.t[None, :], axis=1)
    return s, b


def radial_envelope(w: RadialWeight, slope_samples: int = 1024) -> RadialWeight:
    """Largest convex nondecreasing minorant of u with slope <= 1.

    Double transform over the finite slope family: env(t) =
    max_s (s t + b(s)) with b(s) = min_t (u(t) - s t), s in {0,...,1}.
    """
    s, b = _slope_transform(w, slope_samples)
    env = np.max(s[:, None] * w.t[None, :] + b[:, None], axis=0)
    env = np.minimum(env, w.u)  # exact minorant, also kills rounding spill
    return RadialWeight(w.t, env)


def radial_envelope_at(w: RadialWeight, t_eval: np.ndarray,
                       slope_samples: int = 4096) -> np.ndarray:
    """Envelope values at arbitrary t (direct sup over the line family)."""
    s, b = _slope_transform(w, slope_samples)
    t_eval = np.asarray(t_eval, dtype=float)
    flat = t_eval.ravel()
    out = np.empty(flat.size)
    step = max(1, 2_000_000 // (s.size + 1))
    for k in range(0, flat.size, step):
        blk = flat[k:k + step]
        out[k:k + step] = np.max(s[None, :] * blk[:, None] + b[None, :], axis=1)
    ub = w.u_at(flat)
    return np.minimum(out, ub).reshape(t_eval.shape)


def _lower_hull(t: np.ndarray, u: np.ndarray):
    """Vertices of the lower convex hull of the graph (monotone chain)."""
    idx = []
    for k in range(t.size):
        while len(idx) >= 2:
            i, j = idx[-2], idx[-1]
            # pop j if it lies on or above chord i -> k
            if (u[j] - u[i]) * (t[k] - t[i]) >= (u[k] - u[i]) * (t[j] - t[i]):
                idx.pop()
            else:
                break
        idx.append(k)
    return np.array(idx)


class RadialEnvelopeOracle:
    """Exact constrained convex envelope of a radial weight.

    Lower convex hull of densely sampled (t, u) with the weight's kink
    knots included, then the side constraints: flat (slope 0) left of the
    hull's minimum and slope 1 beyond the last admissible vertex.  For
    piecewise-linear profiles with knots on the sample set this is exact;
    for smooth profiles the error is O(dt^2).
    """

    def __init__(self, w: WeightField, n: int = 262145, extent: float = EXTENT,
                 knots: tuple[float, ...] = ()):
        if not w.is_radial:
            raise UsageError(f"weight {w.descriptor!r} is not radial")
        t = np.linspace(-extent, extent, n)
        t = np.unique(np.concatenate([t, np.asarray(knots, dtype=float)]))
        t = t[(t >= -extent) & (t <= extent)]
        u = rho_of_t(t) + w.phi_t(t)
        hull = _lower_hull(t, u)
        th, uh = t[hull], u[hull]
        slopes = np.diff(uh) / np.diff(th)
        # nondecreasing: drop vertices before the slope turns >= 0
        k0 = int(np.searchsorted(slopes, 0.0, side="left"))
        # slope <= 1: drop vertices after the slope exceeds 1
        k1 = int(np.searchsorted(slopes, 1.0, side="right"))
        self.t_v = th[k0:k1 + 1]
        self.u_v = uh[k0:k1 + 1]
        self.flat_level = float(self.u_v[0])
        self.right_intercept = float(self.u_v[-1] - self.t_v[-1])

    def __call__(self, t_eval: np.ndarray) -> np.ndarray:
        tq = np.asarray(t_eval, dtype=float)
        out = np.interp(tq, self.t_v, self.u_v)
        out = np.where(tq < self.t_v[0], self.flat_level, out)
        return np.where(tq > self.t_v[-1], self.right_intercept + tq, out)


_FAMILY_KNOTS = {
    "cap": lambda p: (-p[0], 0.0),
    "circle": lambda p: (p[0],),
}

_ORACLE_CACHE: dict[str, RadialEnvelopeOracle] = {}


def radial_oracle(w: WeightField) -> RadialEnvelopeOracle:
    key = w.content_hash()
    if key not in _ORACLE_CACHE:
        m = _DESCRIPTOR_RE.match(w.descriptor)
        knots: tuple[float, ...] = ()
        if m and m.group(1) in _FAMILY_KNOTS and m.group(3):
            knots = _FAMILY_KNOTS[m.group(1)]([float(x) for x in m.group(3).split(",")])
        _ORACLE_CACHE[key] = RadialEnvelopeOracle(w, knots=knots)
    return _ORACLE_CACHE[key]


# ---------------------------------------------------------------------------
# grid obstacle solver


@dataclass
class CylinderSolution:
    t: np.ndarray            # (n_t + 1,) mesh lines, t[0] = -extent, t[-1] = extent
    theta: np.ndarray        # (n_theta,)
    v: np.ndarray            # (n_t + 1, n_theta) chart-ZERO potential values
    v_center0: float         # potential value at zeta = 0
    v_centerinf: float       # chart-INFINITY potential value at infinity
    obstacle: np.ndarray


@dataclass
class EnvelopeResult:
    """Envelope of a weight, sampled on a quadrature grid.

    ``psi`` and ``psi_eq`` are chart-local weights per node; their
    difference ``psi_h`` <= 0 is global.  ``cylinder`` holds the solver
    state when the grid solver produced the result (None for the exact
    radial route).
    """

    weight_hash: str
    grid_shape: tuple[int, int]
    psi: np.ndarray
    psi_eq: np.ndarray
    psi_h: np.ndarray
    contact_mask: np.ndarray
    converged: bool
    iterations: int
    residual: float
    cylinder: CylinderSolution | None = None


def _auto_omega(n_t: int, n_theta: int, dt: float, dth: float) -> float:
    # Jacobi spectral radius of the 5-point stencil: the slowest mode is
    # constant in one direction and lowest-frequency in the other.
    ct, cth = 1.0 / dt**2, 1.0 / dth**2
    rho_j = max(
        (ct * np.cos(np.pi / n_t) + cth) / (ct + cth),
        (ct + cth * np.cos(TWO_PI / n_theta)) / (ct + cth),
    )
    return float(2.0 / (1.0 + np.sqrt(max(1.0 - rho_j * rho_j, 1e-15))))


def _psor(obstacle, ob_c0, ob_cinf, t, th, tol, max_iter, omega, init=None):
    """Projected red-black SOR for the upper-obstacle problem on the cylinder.

    Returns (v, vc0, vcinf, iterations, last_update, converged).  Iterates
    never exceed the obstacle: every relaxation is followed by a pointwise
    min.  Stopping needs more than a small sweep update: near-optimal SOR
    contracts slow modes by ~(omega - 1) per sweep, so a small update can
    hide an error ~update / (1 - rate).  The loop tracks the empirical
    contraction rate over a 32-sweep window and stops once the implied
    error bound drops under tol (or the update hits tol/1000 outright).
    """
    dt = t[1] - t[0]
    dth = th[1] - th[0]
    if omega is None:
        omega = _auto_omega(t.size - 1, th.size, dt, dth)
    if not 0.0 < omega < 2.0:
        raise ConfigurationError(f"relaxation factor {omega} outside (0, 2)")
    if init is None:
        v, vc0, vcinf = obstacle.copy(), ob_c0, ob_cinf
    else:
        v, vc0, vcinf = init
        v = np.minimum(v, obstacle)
        vc0 = min(vc0, ob_c0)
        vcinf = min(vcinf, ob_cinf)

    ct, cth = 1.0 / dt**2, 1.0 / dth**2
    denom = 2.0 * (ct + cth)
    ii, jj = np.meshgrid(np.arange(t.size), np.arange(th.size), indexing="ij")
    colors = ((ii + jj) % 2).astype(bool)
    top_shift = t[-1] + dt

    it = 0
    update = np.inf
    converged = False
    window = 32
    history: list[float] = []
    up = np.empty_like(v)
    dn = np.empty_like(v)
    while it < max_iter and not converged:
        update = 0.0
        for color in (False, True):
            dn[1:] = v[:-1]
            dn[0] = vc0
            up[:-1] = v[1:]
            up[-1] = vcinf + top_shift
            target = (ct * (up + dn)
                      + cth * (np.roll(v, 1, axis=1) + np.roll(v, -1, axis=1))) / denom
            mask = colors == color
            vn = np.minimum(obstacle[mask], v[mask] + omega * (target[mask] - v[mask]))
            delta = np.max(np.abs(vn - v[mask])) if vn.size else 0.0
            update = max(update, float(delta))
            v[mask] = vn
        c0n = min(ob_c0, vc0 + omega * (float(np.mean(v[0])) - vc0))
        cinfn = min(ob_cinf, vcinf + omega * (float(np.mean(v[-1])) - t[-1] - vcinf))
        update = max(update, abs(c0n - vc0), abs(cinfn - vcinf))
        vc0, vcinf = c0n, cinfn
        history.append(update)
        it += 1
        if update <= tol * 1e-3:
            converged = True
        elif update <= tol and it > window:
            old = history[-1 - window]
            if old == 0.0:
                converged = True
            else:
                rate = min((update / old) ** (1.0 / window), 1.0 - 1e-9)
                converged = update * rate / (1.0 - rate) <= tol
    return v, vc0, vcinf, it, float(update), converged


def _prolong(v_c, th_c_size):
    """Bilinear prolongation from a (n/2+1, m/2) mesh to (n+1, m), theta periodic."""
    n_tc, n_thc = v_c.shape[0] - 1, v_c.shape[1]
    v_f = np.empty((2 * n_tc + 1, 2 * n_thc))
    right = np.roll(v_c, -1, axis=1)
    v_f[0::2, 0::2] = v_c
    v_f[0::2, 1::2] = 0.5 * (v_c + right)
    v_f[1::2, 0::2] = 0.5 * (v_c[:-1] + v_c[1:])
    v_f[1::2, 1::2] = 0.25 * (v_c[:-1] + v_c[1:] + right[:-1] + right[1:])
    return v_f


def psh_envelope(
    w: WeightField,
    grid: QuadratureGrid,
    tol: float = 1e-8,
    max_iter: int | None = None,
    omega: float | None = None,
    extent: float = EXTENT,
    cascade: bool = True,
) -> EnvelopeResult:
    """Solve the obstacle problem for the envelope on the glued cylinder mesh.

    The mesh has 2*n_r + 1 lines in t over [-extent, extent] and the
    grid's n_theta angles; values are interpolated back to the quadrature
    nodes afterwards.  Projected red-black SOR with the near-optimal
    relaxation factor for the stencil; ``cascade`` warm-starts each mesh
    from a solve at half resolution, which cuts the sweep count several-fold
    without changing the fixed point.
    """
    n_t = 2 * grid.n_r
    n_th = grid.n_theta
    if max_iter is None:
        max_iter = 200 * grid.n_r

    # mesh ladder, coarsest first; levels are nested (factor-2 in both axes)
    shapes = [(n_t, n_th)]
    while cascade and shapes[-1][0] >= 64 and shapes[-1][1] >= 32 \
            and shapes[-1][0] % 2 == 0 and shapes[-1][1] % 2 == 0:
        shapes.append((shapes[-1][0] // 2, shapes[-1][1] // 2))
    shapes.reverse()

    init = None
    total_it = 0
    for lev, (m_t, m_th) in enumerate(shapes):
        t = np.linspace(-extent, extent, m_t + 1)
        th = TWO_PI * np.arange(m_th) / m_th
        obstacle = w.psi_of_cyl(t[:, None], th[None, :])
        if not np.all(np.isfinite(obstacle)):
            raise InvalidFieldError("weight evaluates non-finite on the solver mesh")
        ob_c0 = w.phi_at_zero()
        ob_cinf = w.phi_at_infinity()
        last = lev == len(shapes) - 1
        v, vc0, vcinf, it, update, converged = _psor(
            obstacle, ob_c0, ob_cinf, t, th,
            tol=tol, max_iter=max_iter if last else max_iter // 2,
            omega=omega, init=init,
        )
        total_it += it
        if not last:
            init = (_prolong(v, m_th), vc0, vcinf)

    if not converged:
        log.warning("envelope solver stopped at %d sweeps, update %.3e > tol %.3e",
                    total_it, update, tol)

    cyl = CylinderSolution(t=t, theta=th, v=v, v_center0=vc0, v_centerinf=vcinf,
                           obstacle=obstacle)
    return _sample_envelope(w, grid, cyl, converged, total_it, update, tol)


def _bilinear_cyl(cyl: CylinderSolution, tq: np.ndarray, thq: np.ndarray) -> np.ndarray:
    """Bilinear sample of the cylinder potential, asymptotic past the caps."""
    t, th, v = cyl.t, cyl.theta, cyl.v
    dt = t[1] - t[0]
    dth = th[1] - th[0]
    n_th = th.size
    out = np.empty(tq.shape)

    below = tq < t[0]
    above = tq > t[-1]
    mid = ~(below | above)
    out[below] = cyl.v_center0
    out[above] = cyl.v_centerinf + tq[above]

    ti = np.clip((tq[mid] - t[0]) / dt, 0.0, t.size - 1.000001)
    i0 = ti.astype(int)
    ft = ti - i0
    thn = np.mod(thq[mid], TWO_PI) / dth
    j0 = thn.astype(int) % n_th
    fj = thn - thn.astype(int)
    j1 = (j0 + 1) % n_th
    out[mid] = ((1 - ft) * ((1 - fj) * v[i0, j0] + fj * v[i0, j1])
                + ft * ((1 - fj) * v[i0 + 1, j0] + fj * v[i0 + 1, j1]))
    return out


def _sample_envelope(w, grid, cyl, converged, iterations, residual, tol) -> EnvelopeResult:
    psi = w.psi_local(grid.chart, grid.coords)
    v_glob = _bilinear_cyl(cyl, grid.log_radii, grid.theta_global)
    # chart-local value of the envelope: v itself in chart ZERO, v - t at
    # a chart-INFINITY node (the transition subtracts log|zeta|)
    psi_eq = np.where(grid.chart == Chart.ZERO, v_glob, v_glob - grid.log_radii)
    psi_eq = np.minimum(psi_eq, psi)  # exact minorant despite interpolation
    psi_h = psi_eq - psi
    return EnvelopeResult(
        weight_hash=w.content_hash(),
        grid_shape=(grid.n_r, grid.n_theta),
        psi=psi,
        psi_eq=psi_eq,
        psi_h=psi_h,
        contact_mask=(psi - psi_eq) <= 10.0 * tol,
        converged=converged,
        iterations=iterations,
        residual=residual,
        cylinder=cyl,
    )


def envelope_from_radial(w: WeightField, grid: QuadratureGrid) -> EnvelopeResult:
    """Exact-reference envelope for radial weights via the hull oracle."""
    psi = w.psi_local(grid.chart, grid.coords)
    env_t = radial_oracle(w)(grid.log_radii)
    psi_eq = np.where(grid.chart == Chart.ZERO, env_t, env_t - grid.log_radii)
    psi_eq = np.minimum(psi_eq, psi)
    psi_h = psi_eq - psi
    return EnvelopeResult(
        weight_hash=w.content_hash(),
        grid_shape=(grid.n_r, grid.n_theta),
        psi=psi,
        psi_eq=psi_eq,
        psi_h=psi_h,
        contact_mask=(psi - psi_eq) <= 1e-7,
        converged=True,
        iterations=0,
        residual=0.0,
        cylinder=None,
    )


def psi_h(env: EnvelopeResult) -> np.ndarray:
    """The defect Psi_h = psi_eq - psi (<= 0 everywhere) of a converged solve."""
    if not env.converged:
        raise UsageError("envelope did not converge; refuse to hand out psi_h")
    return env.psi_h


def cylinder_measure(t, th, v, v_center0, v_centerinf,
                     min_mass: float = -1e-8) -> EmpiricalMeasure:
    """Distributional Laplacian masses of a glued-cylinder potential.

    Node masses are the 5-point Laplacian row sums scaled by
    dt*dtheta/(2 pi); the two cap unknowns turn into point masses at the
    chart centers.  Total mass is exactly 1 by telescoping (the degree
    enters through the t-shift at the top cap).  Masses below ``min_mass``
    raise; small negative roundoff is clamped to zero.
    """
    dt = t[1] - t[0]
    dth = th[1] - th[0]
    up = np.empty_like(v)
    dn = np.empty_like(v)
    dn[1:] = v[:-1]
    dn[0] = v_center0
    up[:-1] = v[1:]
    up[-1] = v_centerinf + t[-1] + dt
    lap = ((up + dn - 2 * v) / dt**2
           + (np.roll(v, 1, axis=1) + np.roll(v, -1, axis=1) - 2 * v) / dth**2)
    masses = lap * (dt * dth / TWO_PI)
    m_c0 = (dth / dt) * float(np.sum(v[0] - v_center0)) / TWO_PI
    m_cinf = (dth / dt) * float(np.sum(v[-1] - t[-1] - v_centerinf)) / TWO_PI

    flat = np.concatenate([masses.ravel(), [m_c0, m_cinf]])
    if flat.min() < min_mass:
        raise SolverQualityError(
            f"negative cylinder mass {flat.min():.3e} below the {min_mass:.1e} clamp"
        )
    flat = np.maximum(flat, 0.0)

    tt, thth = np.meshgrid(t, th, indexing="ij")
    on_zero = tt <= 0
    chart = np.where(on_zero, Chart.ZERO.value, Chart.INFINITY.value).astype(np.int8)
    coords = np.where(on_zero, np.exp(tt + 1j * thth), np.exp(-tt - 1j * thth))
    chart = np.concatenate([chart.ravel(), [Chart.ZERO.value, Chart.INFINITY.value]])
    coords = np.concatenate([coords.ravel(), [0j, 0j]])
    return EmpiricalMeasure(chart, coords, flat)


def equilibrium_measure(env: EnvelopeResult, grid: QuadratureGrid) -> EmpiricalMeasure:
    """Laplacian masses of the solved envelope (the equilibrium measure)."""
    if env.cylinder is None:
        raise UsageError("measure needs a grid-solver envelope (radial route has none)")
    if env.grid_shape != (grid.n_r, grid.n_theta):
        raise UsageError("grid does not match the envelope lineage")
    cyl = env.cylinder
    return cylinder_measure(cyl.t, cyl.theta, cyl.v, cyl.v_center0, cyl.v_centerinf)
