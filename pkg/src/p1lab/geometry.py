"""Riemann-sphere geometry: charts, Fubini-Study quadrature, point measures.

Conventions fixed once and used by every other module:

* X = C u {inf} with two affine charts.  Chart ZERO has coordinate zeta
  (the point is zeta itself); chart INFINITY has coordinate w representing
  the point 1/w.  Canonical representatives satisfy |coord| <= 1, so all
  stored coordinates live in the closed unit disk and powers |coord|^(2p)
  never overflow.
* dd^c = (i/pi) d dbar.  With this normalization dd^c log|zeta| is a unit
  point mass at the origin and the Fubini-Study form

      omega = (1/pi) (1 + |zeta|^2)^(-2) dlambda(zeta)

  has total mass exactly 1 (each chart disk carries mass 1/2).
* The local Fubini-Study potential is rho(zeta) = (1/2) log(1 + |zeta|^2).
* Quadrature: tensor product of Gauss-Legendre (radial, mapped to [0,1])
  and the uniform trapezoid rule (angular) on the unit disk of each chart.
  The disks partition the sphere up to the measure-zero overlap circle;
  Gauss-Legendre nodes are interior, so no node lies on the circle and
  nothing is double counted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, InvalidFieldError

TWO_PI = 2.0 * np.pi


class Chart(enum.IntEnum):
    ZERO = 0
    INFINITY = 1


@dataclass(frozen=True)
class SpherePoint:
    """A point of the sphere given by a chart and the coordinate in it."""

    chart: Chart
    coord: complex

    def is_canonical(self) -> bool:
        return abs(self.coord) <= 1.0


def chart_transition(point: SpherePoint) -> SpherePoint:
    """Re-express ``point`` in the opposite chart (coord -> 1/coord).

    The chart center itself (coord == 0) has no image in the other chart.
    """
    if point.coord == 0:
        raise DomainError("chart center has no representative in the opposite chart")
    other = Chart.INFINITY if point.chart == Chart.ZERO else Chart.ZERO
    return SpherePoint(other, 1.0 / point.coord)


def canonical(point: SpherePoint) -> SpherePoint:
    """Canonical representative with |coord| <= 1."""
    if abs(point.coord) > 1.0:
        return chart_transition(point)
    return point


def from_zeta(zeta: complex) -> SpherePoint:
    """Canonical point for a chart-ZERO coordinate (math.inf for infinity)."""
    if zeta == np.inf:
        return SpherePoint(Chart.INFINITY, 0j)
    return canonical(SpherePoint(Chart.ZERO, complex(zeta)))


def fs_local_potential(coord: np.ndarray | complex) -> np.ndarray:
    """rho(z) = (1/2) log(1 + |z|^2), the FS potential in the ambient chart."""
    a = np.abs(np.asarray(coord))
    return 0.5 * np.log1p(a * a)


def log_radius(chart: np.ndarray, coord: np.ndarray) -> np.ndarray:
    """Global log-radius t = log|zeta| of canonically-stored points.

    Chart centers map to -inf (origin) and +inf (infinity).
    """
    with np.errstate(divide="ignore"):
        t = np.log(np.abs(coord))
    return np.where(np.asarray(chart) == Chart.ZERO, t, -t)


@dataclass(frozen=True)
class QuadratureGrid:
    """Two-chart polar quadrature for integrals against omega_FS.

    Nodes are stored flat, chart-ZERO block first, radial index major.
    ``fs_weights`` already contain the Fubini-Study density, the radial
    Gauss-Legendre weight, and the angular step, so

        integral f omega_FS  ~=  sum(fs_weights * f(nodes)).
    """

    n_r: int
    n_theta: int
    r: np.ndarray              # (n_r,) radial nodes in (0, 1)
    theta: np.ndarray          # (n_theta,) angles in [0, 2 pi)
    radial_weights: np.ndarray
    chart: np.ndarray          # (2 n_r n_theta,) int8
    coords: np.ndarray         # (2 n_r n_theta,) complex, |coord| < 1
    fs_weights: np.ndarray     # (2 n_r n_theta,)
    log_radii: np.ndarray      # global t = log|zeta| per node
    theta_global: np.ndarray   # global arg(zeta) per node

    @property
    def n_nodes(self) -> int:
        return self.coords.size

    def chart_slice(self, chart: Chart) -> slice:
        half = self.n_r * self.n_theta
        return slice(0, half) if chart == Chart.ZERO else slice(half, 2 * half)


def build_grid(n_r: int, n_theta: int) -> QuadratureGrid:
    """Build the two-chart product grid.

    Radial rule: Gauss-Legendre on [0,1].  Angular rule: n_theta uniform
    angles, which integrate e^(i m theta) exactly for 0 < |m| < n_theta.
    """
    if n_r < 8 or n_theta < 8:
        raise ConfigurationError(f"grid {n_r}x{n_theta} too coarse; need at least 8x8")
    x, wx = np.polynomial.legendre.leggauss(int(n_r))
    r = 0.5 * (x + 1.0)
    wr = 0.5 * wx
    theta = TWO_PI * np.arange(n_theta) / n_theta

    # FS density in polar coordinates: (1/pi)(1+r^2)^(-2) r dr dtheta
    dens = (1.0 / np.pi) * r / (1.0 + r * r) ** 2
    w2d = (dens * wr)[:, None] * np.full(n_theta, TWO_PI / n_theta)[None, :]

    z = r[:, None] * np.exp(1j * theta)[None, :]
    coords = np.concatenate([z.ravel(), z.ravel()])
    chart = np.concatenate(
        [np.zeros(z.size, dtype=np.int8), np.ones(z.size, dtype=np.int8)]
    )
    fs_weights = np.concatenate([w2d.ravel(), w2d.ravel()])

    t = np.log(np.concatenate([np.abs(z).ravel(), np.abs(z).ravel()]))
    log_radii = np.where(chart == Chart.ZERO, t, -t)
    ang = np.angle(coords)
    theta_global = np.where(chart == Chart.ZERO, ang, -ang) % TWO_PI

    for a in (r, theta, wr, chart, coords, fs_weights, log_radii, theta_global):
        a.setflags(write=False)
    return QuadratureGrid(
        n_r=int(n_r),
        n_theta=int(n_theta),
        r=r,
        theta=theta,
        radial_weights=wr,
        chart=chart,
        coords=coords,
        fs_weights=fs_weights,
        log_radii=log_radii,
        theta_global=theta_global,
    )


def fs_integral(grid: QuadratureGrid, values: np.ndarray) -> float:
    """integral of a node-sampled scalar field against omega_FS."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.fs_weights.shape:
        raise InvalidFieldError(
            f"field has shape {values.shape}, grid has {grid.fs_weights.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidFieldError("field has non-finite entries")
    return float(np.dot(grid.fs_weights, values))


# ---------------------------------------------------------------------------
# point measures and radial test regions


@dataclass(frozen=True)
class RadialRegion:
    """Region {t_lo <= log|zeta| < t_hi}; half-open except +inf is included."""

    t_lo: float
    t_hi: float
    name: str = ""

    def contains(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        upper = t < self.t_hi if np.isfinite(self.t_hi) else np.full(t.shape, True)
        return (t >= self.t_lo) & upper


def disk_region(radius: float, name: str = "") -> RadialRegion:
    return RadialRegion(-np.inf, np.log(radius), name or f"disk(|z|<{radius})")


def annulus_region(r_lo: float, r_hi: float, name: str = "") -> RadialRegion:
    return RadialRegion(
        np.log(r_lo), np.log(r_hi), name or f"annulus({r_lo}<=|z|<{r_hi})"
    )


WHOLE_SPHERE = RadialRegion(-np.inf, np.inf, "sphere")


class EmpiricalMeasure:
    """Finite positive point measure on the sphere (struct-of-arrays).

    ``uniform_count`` marks measures made of n equal atoms of mass
    total/n; region masses are then computed as count/n * total, which is
    exact when total/n is the only rounding involved.
    """

    def __init__(
        self,
        chart: np.ndarray,
        coords: np.ndarray,
        masses: np.ndarray,
        uniform_count: int | None = None,
    ):
        self.chart = np.asarray(chart, dtype=np.int8)
        self.coords = np.asarray(coords, dtype=complex)
        self.masses = np.asarray(masses, dtype=float)
        if self.chart.shape != self.coords.shape or self.coords.shape != self.masses.shape:
            raise InvalidFieldError("measure arrays must have identical shapes")
        if np.any(~np.isfinite(self.masses)) or np.any(self.masses < 0):
            raise InvalidFieldError("measure masses must be finite and >= 0")
        self.uniform_count = uniform_count
        self.log_radii = log_radius(self.chart, self.coords)

    @property
    def n_atoms(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        if self.uniform_count:
            return self.n_atoms / self.uniform_count
        return float(np.sum(self.masses))

    def mass_in(self, region: RadialRegion) -> float:
        inside = region.contains(self.log_radii)
        if self.uniform_count:
            return float(np.count_nonzero(inside)) / self.uniform_count
        return float(np.sum(self.masses[inside]))

    def integrate_radial(self, fn) -> float:
        """integral of a bounded radial test function fn(t) (fn(+-inf) finite)."""
        return float(np.sum(self.masses * fn(self.log_radii)))
