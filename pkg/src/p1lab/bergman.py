"""Weighted Bergman kernels for polynomial sections on the sphere.

Degree-p sections are polynomials of degree <= p in the affine coordinate;
their L2 structure comes from the weight e^{-2p psi} against the spherical
area element.  The Gram matrix is assembled by quadrature in both charts,
orthonormalized through a triangular factor, and the kernel function is
evaluated in log-domain so that large degrees stay inside double precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .envelope import EnvelopeResult, WeightField
from .errors import (
    ConditioningError,
    ConfigurationError,
    InvalidFieldError,
    NumericError,
    UsageError,
)
from .geometry import Chart, QuadratureGrid, fs_integral

log = logging.getLogger(__name__)

# e^x loses meaning past the double range; 600 leaves headroom for squares
_EXP_GUARD = 600.0
DEGREE_CAP = 200
_COND_LIMIT = 1e14
_CHUNK = 8192


def min_theta_nodes(p: int) -> int:
    """Angular node count that makes the monomial Gram exact in theta."""
    return 4 * p + 8


def _monomials(coords: np.ndarray, p: int, reverse: bool) -> np.ndarray:
    """Columns ``coords**m`` for m = 0..p (reversed: ``coords**(p-m)``).

    Cumulative products instead of ``power``: one multiply per column, and
    underflow for tiny |coords| degrades gracefully to exact zeros.
    """
    v = np.empty((coords.size, p + 1), dtype=complex)
    v[:, 0] = 1.0
    for m in range(1, p + 1):
        np.multiply(v[:, m - 1], coords, out=v[:, m])
    return v[:, ::-1] if reverse else v


def gram_matrix(p: int, w: WeightField, grid: QuadratureGrid,
                degree_cap: int = DEGREE_CAP) -> np.ndarray:
    """Monomial Gram matrix G_{jk} = integral of z^j conj(z)^k e^{-2p psi}.

    Both charts contribute; on the infinity chart the frame turns z^j into
    w^(p-j), so the same weight function covers the whole sphere.
    """
    if p < 0 or p != int(p):
        raise ConfigurationError(f"degree must be a nonnegative integer, got {p}")
    p = int(p)
    if p > degree_cap:
        log.warning("degree %d beyond the default cap %d; conditioning may degrade",
                    p, degree_cap)
    if grid.n_theta < min_theta_nodes(p):
        raise ConfigurationError(
            f"n_theta = {grid.n_theta} too low for degree {p}; "
            f"need at least {min_theta_nodes(p)}"
        )

    psi = w.psi_local(grid.chart, grid.coords)
    if np.max(-2.0 * p * psi) > _EXP_GUARD:
        raise NumericError(
            f"weight factor e^(-2p psi) overflows at degree {p}; rescale the weight"
        )
    wgt = grid.fs_weights * np.exp(-2.0 * p * psi)

    G = np.zeros((p + 1, p + 1), dtype=complex)
    for chart in (Chart.ZERO, Chart.INFINITY):
        sel = grid.chart == chart
        coords = grid.coords[sel]
        wc = wgt[sel]
        for k in range(0, coords.size, _CHUNK):
            v = _monomials(coords[k:k + _CHUNK], p, reverse=chart == Chart.INFINITY)
            G += (v.T * wc[k:k + _CHUNK]) @ v.conj()
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite Gram entries; weight or grid out of range")
    # assembly is Hermitian to rounding; fold the roundoff away
    sym_err = float(np.max(np.abs(G - G.conj().T)))
    if sym_err > 1e-10 * float(np.max(np.abs(G))):
        raise NumericError(f"Gram symmetry error {sym_err:.3e} beyond tolerance")
    return 0.5 * (G + G.conj().T)


def scaled_gram_cond(G: np.ndarray) -> float:
    """Condition number after symmetric diagonal scaling.

    The raw monomial Gram carries binomial-size diagonal spread that says
    nothing about the quality of the triangular factor; scaling by
    diag(G)^(-1/2) measures the part that actually limits precision.
    """
    d = np.diag(G).real
    if np.any(d <= 0):
        raise ConditioningError("Gram diagonal not positive", gram_cond=np.inf)
    gs = G / np.sqrt(np.outer(d, d))
    ev = np.linalg.eigvalsh(gs)
    if ev[0] <= 0:
        return np.inf
    return float(ev[-1] / ev[0])


@dataclass(frozen=True)
class BergmanBasis:
    """Orthonormal polynomial basis in monomial coordinates.

    ``coeffs`` is lower triangular with positive diagonal: row j holds the
    monomial coefficients of the j-th basis section.
    """

    degree: int
    dim: int
    coeffs: np.ndarray
    gram_cond: float
    weight_hash: str = ""

    def __post_init__(self):
        self.coeffs.setflags(write=False)


def orthonormal_basis(G: np.ndarray, weight_hash: str = "") -> BergmanBasis:
    """Canonical triangular orthonormalization of a Gram matrix."""
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise UsageError(f"Gram matrix must be square, got shape {G.shape}")
    if float(np.max(np.abs(G - G.conj().T))) > 1e-10 * float(np.max(np.abs(G))):
        raise UsageError("Gram matrix is not Hermitian")
    p = G.shape[0] - 1
    cond = scaled_gram_cond(G)
    if cond > _COND_LIMIT:
        raise ConditioningError(
            f"scaled Gram condition {cond:.3e} beyond {_COND_LIMIT:.0e}; "
            "use a smaller degree or a smoother weight",
            gram_cond=cond,
        )
    d = np.diag(G).real
    gs = G / np.sqrt(np.outer(d, d))
    try:
        ls = cholesky(gs, lower=True)
    except LinAlgError as exc:
        raise ConditioningError(
            f"Gram matrix not positive definite: {exc}", gram_cond=cond
        ) from exc
    cs = solve_triangular(ls, np.eye(p + 1, dtype=complex), lower=True)
    coeffs = cs / np.sqrt(d)[None, :]
    return BergmanBasis(degree=p, dim=p + 1, coeffs=coeffs,
                        gram_cond=cond, weight_hash=weight_hash)


def bergman_basis(p: int, w: WeightField, grid: QuadratureGrid,
                  degree_cap: int = DEGREE_CAP) -> BergmanBasis:
    """Gram assembly plus orthonormalization, carrying the weight lineage."""
    G = gram_matrix(p, w, grid, degree_cap=degree_cap)
    return orthonormal_basis(G, weight_hash=w.content_hash())


@dataclass(frozen=True)
class KernelField:
    """Bergman kernel function sampled on a quadrature grid."""

    degree: int
    values: np.ndarray
    log_half_p: np.ndarray
    fs_potential: np.ndarray
    weight_hash: str
    grid_shape: tuple[int, int]


def _log_kernel_values(basis: BergmanBasis, w: WeightField,
                       chart: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """log P_p at arbitrary points, per-chart and per-node scaled.

    The weight factor e^{-p psi} is woven into the monomial columns before
    the projection onto the basis, so every partial product stays within
    range; the final sum of squares is normalized by its row maximum.
    """
    p = basis.degree
    psi = w.psi_local(chart, coords)
    if np.max(-2.0 * p * psi) > 2 * _EXP_GUARD:
        raise NumericError("weight factor overflows in kernel evaluation")
    out = np.empty(coords.size)
    ct = basis.coeffs.T
    for which in (Chart.ZERO, Chart.INFINITY):
        sel = np.flatnonzero(chart == which)
        for k in range(0, sel.size, _CHUNK):
            idx = sel[k:k + _CHUNK]
            v = _monomials(coords[idx], p, reverse=which == Chart.INFINITY)
            v *= np.exp(-p * psi[idx])[:, None]
            s = np.abs(v @ ct)
            peak = s.max(axis=1)
            if np.any(peak == 0.0) or not np.all(np.isfinite(peak)):
                bad = idx[int(np.argmin(peak))]
                raise NumericError(
                    f"kernel evaluation out of double range at node {bad}"
                )
            np.divide(s, peak[:, None], out=s)
            out[idx] = 2.0 * (np.log(peak) + 0.5 * np.log(np.sum(s * s, axis=1)))
    return out


def kernel_log_at_centers(basis: BergmanBasis, w: WeightField) -> tuple[float, float]:
    """log P_p at the two chart centers (only one monomial survives each)."""
    p = basis.degree
    col0 = np.sum(np.abs(basis.coeffs[:, 0]) ** 2)
    colp = np.abs(basis.coeffs[p, p]) ** 2
    return (
        float(np.log(col0) - 2.0 * p * w.phi_at_zero()),
        float(np.log(colp) - 2.0 * p * w.phi_at_infinity()),
    )


def bergman_kernel(basis: BergmanBasis, w: WeightField,
                   grid: QuadratureGrid) -> KernelField:
    """Kernel function P_p = sum of squared weighted basis sections."""
    if basis.weight_hash and basis.weight_hash != w.content_hash():
        raise UsageError("basis was built for a different weight")
    logp = _log_kernel_values(basis, w, grid.chart, grid.coords)
    if np.min(logp) < -700.0:
        raise NumericError("kernel values below double-precision range")
    values = np.exp(logp)
    p = basis.degree
    log_half_p = logp / (2.0 * p) if p > 0 else np.zeros_like(logp)
    fs_potential = w.phi(grid.chart, grid.coords) + log_half_p
    return KernelField(
        degree=p,
        values=values,
        log_half_p=log_half_p,
        fs_potential=fs_potential,
        weight_hash=w.content_hash(),
        grid_shape=(grid.n_r, grid.n_theta),
    )


def kernel_vs_envelope(kf: KernelField, env: EnvelopeResult,
                       grid: QuadratureGrid) -> float:
    """L1 distance between (1/2p) log P_p and the envelope defect."""
    if kf.weight_hash != env.weight_hash:
        raise UsageError("kernel and envelope come from different weights")
    if kf.grid_shape != env.grid_shape or kf.grid_shape != (grid.n_r, grid.n_theta):
        raise UsageError("kernel, envelope and grid shapes disagree")
    return float(fs_integral(grid, np.abs(kf.log_half_p - env.psi_h)))


def rate_fit(errors: list[tuple[int, float]]) -> tuple[float, float]:
    """Envelope constant of an error sequence against (log p)/p decay.

    Returns (C_hat, max_violation): C_hat is the smallest constant with
    error <= C_hat (log p)/p on the data, so max_violation is zero up to
    rounding; it is reported for trend diagnostics.
    """
    if len(errors) < 4:
        raise UsageError(f"rate fit needs at least 4 points, got {len(errors)}")
    ps = np.array([float(p) for p, _ in errors])
    es = np.array([float(e) for _, e in errors])
    if np.any(ps < 5):
        raise UsageError("rate fit needs degrees p >= 5")
    if np.any(es < 0):
        raise InvalidFieldError("negative error in rate fit input")
    scale = np.log(ps) / ps
    c_hat = float(np.max(es / scale))
    max_violation = float(max(np.max(es - c_hat * scale), 0.0))
    return c_hat, max_violation
