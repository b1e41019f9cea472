import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p1lab.envelope import (
    RadialWeight,
    envelope_from_radial,
    equilibrium_measure,
    parse_weight,
    psh_envelope,
    radial_envelope,
    radial_envelope_at,
    radial_oracle,
    radial_weight_of,
    rho_of_t,
)
from p1lab.errors import (
    ConfigurationError,
    InadmissibleWeightError,
    SolverQualityError,
    UsageError,
)
from p1lab.geometry import annulus_region, build_grid

# the four weights exercised throughout; all radial, all admissible
FAMILY = ["cap{1}", "circle{0.5}", "bump{0,1,0.3}", "bump{-2,1.5,0.5}"]


def test_rho_profile():
    t = np.linspace(-40, 40, 401)
    r = rho_of_t(t)
    assert r[200] == pytest.approx(0.5 * np.log(2.0))
    # asymptotes: 0 on the left, t on the right
    assert abs(r[0]) < 1e-30
    assert r[-1] == pytest.approx(40.0)
    # rho(t) - t/2 is even
    even = r - t / 2
    assert np.max(np.abs(even - even[::-1])) < 1e-12


def test_parse_weight_errors():
    with pytest.raises(ConfigurationError):
        parse_weight("warp{1}")
    with pytest.raises(ConfigurationError):
        parse_weight("bump{1}")  # wrong arity
    with pytest.raises(ConfigurationError):
        parse_weight("cap{-0.5}")


def test_radial_weight_admissibility():
    t = np.linspace(-9, 9, 257)
    with pytest.raises(InadmissibleWeightError):
        RadialWeight(t, 2.0 * np.maximum(t, 0.0))  # right slope 2
    with pytest.raises(InadmissibleWeightError):
        RadialWeight(t, -0.5 * t + rho_of_t(t))  # left slope != 0
    with pytest.raises(InadmissibleWeightError):
        RadialWeight(np.linspace(2, 9, 64), np.linspace(2, 9, 64))


@pytest.mark.parametrize("descriptor", FAMILY)
def test_envelope_routes_agree(descriptor):
    # two independent constructions: slope-transform op vs lower-hull oracle
    w = parse_weight(descriptor)
    rw = radial_weight_of(w)
    env = radial_envelope(rw)
    diff = np.max(np.abs(env.u - radial_oracle(w)(rw.t)))
    assert diff < 5e-4
    finer = radial_envelope(rw, slope_samples=8192)
    assert np.max(np.abs(finer.u - radial_oracle(w)(rw.t))) < diff + 1e-12


@pytest.mark.parametrize("descriptor", FAMILY)
def test_envelope_is_convex_monotone_minorant(descriptor):
    rw = radial_weight_of(parse_weight(descriptor))
    env = radial_envelope(rw)
    assert np.all(env.u <= rw.u + 1e-12)
    d = np.diff(env.u) / np.diff(env.t)
    assert np.all(d >= -1e-10)
    assert np.all(d <= 1.0 + 1e-10)
    assert np.all(np.diff(d) >= -1e-8)  # convexity of the sampled profile


@pytest.mark.parametrize("descriptor", FAMILY)
def test_envelope_idempotent(descriptor):
    rw = radial_weight_of(parse_weight(descriptor))
    env = radial_envelope(rw)
    again = radial_envelope(env)
    assert np.max(np.abs(again.u - env.u)) < 1e-10


bumps = st.tuples(
    st.floats(-2.0, 2.0),
    st.floats(0.1, 2.0),
    st.floats(0.3, 1.5),
)


@settings(max_examples=25, deadline=None)
@given(bumps, st.floats(-1.0, 1.0))
def test_envelope_offset_equivariance(b, c):
    center, height, width = b
    rw = radial_weight_of(parse_weight(f"bump{{{center},{height},{width}}}"))
    env = radial_envelope(rw)
    shifted = radial_envelope(RadialWeight(rw.t, rw.u + c))
    assert np.max(np.abs(shifted.u - (env.u + c))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(bumps, st.floats(0.05, 1.0))
def test_envelope_monotone_in_the_weight(b, extra):
    center, height, width = b
    rw = radial_weight_of(parse_weight(f"bump{{{center},{height},{width}}}"))
    bigger = radial_weight_of(parse_weight(f"bump{{{center},{height + extra},{width}}}"))
    lo = radial_envelope(rw)
    hi = radial_envelope(bigger)
    assert np.all(lo.u <= hi.u + 1e-10)


def test_cap_envelope_closed_form():
    w = parse_weight("cap{1}")
    t = np.linspace(-8.5, 8.5, 4001)
    assert np.max(np.abs(radial_oracle(w)(t) - np.maximum(t, 0.0))) < 5e-9


def test_circle_envelope_is_the_weight_itself():
    # contact everywhere: the weight is already convex in t
    w = parse_weight("circle{0.5}")
    rw = radial_weight_of(w)
    assert np.max(np.abs(radial_oracle(w)(rw.t) - rw.u)) < 1e-12


def test_bump_envelope_tangent_constants():
    # frozen from an independent tangent construction (Newton on the even
    # profile): contact at +-0.87706492, slope exactly 1/2 by symmetry
    w = parse_weight("bump{0,1,0.3}")
    oracle = radial_oracle(w)
    assert oracle(np.array([0.0]))[0] == pytest.approx(0.529039132437, abs=5e-9)
    tau = np.array([-0.87706492, 0.0, 0.87706492])
    u_true = rho_of_t(tau) + w.phi_t(tau)
    gap = oracle(tau) - u_true
    # contact at +-tau (up to oracle sampling), strictly below in between
    assert abs(gap[0]) < 1e-7 and abs(gap[2]) < 1e-7
    assert gap[1] < -1e-3


def test_radial_envelope_at_matches_grid_route():
    w = parse_weight("bump{-2,1.5,0.5}")
    rw = radial_weight_of(w)
    tq = np.linspace(-7, 7, 1234)
    a = radial_envelope_at(rw, tq)
    b = np.interp(tq, rw.t, radial_envelope(rw).u)
    assert np.max(np.abs(a - b)) < 5e-4


def test_grid_solver_tracks_oracle_and_flags(cap_weight):
    g = build_grid(64, 64)
    env = psh_envelope(cap_weight, g)
    assert env.converged
    ref = envelope_from_radial(cap_weight, g)
    assert np.max(np.abs(env.psi_eq - ref.psi_eq)) < 5e-3
    assert np.all(env.psi_h <= 1e-12)


def test_envelope_from_radial_has_no_cylinder(cap_weight, grid64):
    env = envelope_from_radial(cap_weight, grid64)
    with pytest.raises(UsageError):
        equilibrium_measure(env, grid64)


def test_equilibrium_measure_cap_concentrates_on_circle(cap_weight):
    g = build_grid(64, 64)
    # tight tolerance: clamping roundoff negatives adds O(tol) mass
    env = psh_envelope(cap_weight, g, tol=1e-10)
    mu = equilibrium_measure(env, g)
    assert mu.total_mass == pytest.approx(1.0, abs=1e-8)
    # equilibrium measure of cap{1} is uniform on the unit circle
    assert mu.mass_in(annulus_region(0.8, 1.25)) > 0.97


def test_equilibrium_measure_checks_lineage(cap_weight):
    g = build_grid(64, 64)
    env = psh_envelope(cap_weight, g)
    with pytest.raises(UsageError):
        equilibrium_measure(env, build_grid(128, 168))
