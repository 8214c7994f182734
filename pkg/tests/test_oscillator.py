import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apkam.errors import MarginZero, ResonantForcing
from apkam.oscillator import (
    OddFunction,
    OscillatorSpec,
    boundedness_experiment,
    brute_force_twist,
    check_J_asymptotics,
    compute_J,
    expansion_closed_form,
    expansion_coefficients,
    expansion_series,
    first_integral,
    integrate,
    involution,
    leading_rates,
    mean_twist,
    poincare_numeric,
    polar_rhs,
    resonance_mask,
    sine_forcing,
    transformed_rates,
    twist_margin,
)

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def nonres(basis, structure):
    return OscillatorSpec(1.0, OddFunction("arctan"), OddFunction("xgauss"),
                          sine_forcing(basis, structure, {(0, 1): 0.3, (1, 1): 0.2}))


@pytest.fixture(scope="module")
def res_spec(basis, structure):
    return OscillatorSpec(1.0, OddFunction("arctan", -1.0), OddFunction("zero"),
                          sine_forcing(basis, structure, {(1, 0): 0.2, (0, 1): 0.3}))


def fit_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ----------------------------------------------------------- functions


@pytest.mark.parametrize("name", ["arctan", "tanh", "xgauss", "linear"])
def test_odd_function_calculus(name):
    fn = OddFunction(name, 1.7)
    x = np.linspace(-3, 3, 61)
    h = 1e-6
    assert np.allclose(fn.derivative(x), (fn(x + h) - fn(x - h)) / (2 * h), atol=1e-8)
    assert np.allclose((fn.integral(x + h) - fn.integral(x - h)) / (2 * h), fn(x), atol=1e-7)
    assert np.allclose(fn.integral(-x), fn.integral(x), atol=1e-14)
    assert fn.integral(0.0) == 0.0


def test_spec_validation(basis, structure):
    f = sine_forcing(basis, structure, {(1, 0): 1.0})
    with pytest.raises(ValueError):
        OscillatorSpec(0.0, OddFunction("arctan"), OddFunction(), f)
    with pytest.raises(ValueError):
        OscillatorSpec(1.0, OddFunction("arctan"), OddFunction(), f, phi_inf=1.0)
    from apkam.apseries import APSeries
    even = APSeries.trig(basis, structure, (1, 0), cos=1.0)
    with pytest.raises(ValueError):
        OscillatorSpec(1.0, OddFunction("arctan"), OddFunction(), even)
    spec = OscillatorSpec(1.0, OddFunction("arctan"), OddFunction(), f)
    assert spec.phi_inf == pytest.approx(math.pi / 2, abs=1e-9)


# ----------------------------------------------------------- integration


def test_harmonic_orbit(basis, structure):
    spec = OscillatorSpec(1.0, OddFunction(), OddFunction(), sine_forcing(basis, structure, {}))
    t = np.linspace(0, TWO_PI, 9)
    tr = integrate(spec, (0.0, 3.0), (0.0, TWO_PI), tol=1e-12, t_eval=t)
    assert np.allclose(tr.x, 3 * np.sin(t), atol=1e-10)
    assert np.allclose(tr.y, 3 * np.cos(t), atol=1e-10)


def test_flow_is_reversible(nonres):
    T = 30.0
    fw = integrate(nonres, (0.4, 6.0), (0.0, T), tol=1e-12)
    x1, y1, t1 = involution(fw.x[-1], fw.y[-1], T)
    back = integrate(nonres, (x1, y1), (t1, 0.0), tol=1e-12)
    x0, y0, _ = involution(back.x[-1], back.y[-1], 0.0)
    assert abs(x0 - 0.4) < 1e-8 and abs(y0 - 6.0) < 1e-8


def test_self_convergence(nonres):
    T = 50.0
    a = integrate(nonres, (0.0, 10.0), (0.0, T), tol=1e-8)
    b = integrate(nonres, (0.0, 10.0), (0.0, T), tol=1e-12)
    assert abs(a.x[-1] - b.x[-1]) + abs(a.y[-1] - b.y[-1]) < 1e-5


def test_tolerance_floor(nonres):
    with pytest.raises(ValueError):
        integrate(nonres, (0.0, 1.0), (0.0, 1.0), tol=1e-14)


# ----------------------------------------------------------------- polar


@given(st.floats(20, 500), st.floats(-3, 3), st.floats(-50, 50))
def test_polar_parity(r, theta, t):
    from apkam.apseries import FrequencyBasis, SpatialStructure
    b = FrequencyBasis(0, (1.0, (math.sqrt(5) - 1) / 2))
    s = SpatialStructure((frozenset({0}), frozenset({1}), frozenset({0, 1})))
    spec = OscillatorSpec(1.3, OddFunction("arctan"), OddFunction("xgauss"), sine_forcing(b, s, {(0, 1): 0.3}))
    p1, p2 = polar_rhs(spec, r, theta, t)
    q1, q2 = polar_rhs(spec, r, -theta, -t)
    assert q1 == pytest.approx(-p1, abs=1e-12)
    assert q2 == pytest.approx(p2, rel=1e-12)


def test_polar_matches_cartesian(nonres):
    # along an orbit, dr/dtheta from differences of the polar representation
    tr = integrate(nonres, (0.0, 20.0), (0.0, 3.0), tol=1e-12, dense=True)
    t = np.array([0.5, 1.7, 2.6])
    x, y = tr.sol.sol(t)
    r, th = np.hypot(x, y), np.arctan2(x, y)
    p1, p2 = polar_rhs(nonres, r, th, t)
    h = 1e-6
    xa, ya = tr.sol.sol(t + h)
    xb, yb = tr.sol.sol(t - h)
    dr = (np.hypot(xa, ya) - np.hypot(xb, yb)) / (2 * h)
    dth = (np.arctan2(xa, ya) - np.arctan2(xb, yb)) / (2 * h)
    assert np.allclose(dr / dth, p1, rtol=1e-5, atol=1e-7)
    assert np.allclose(1 / dth, p2, rtol=1e-7)


def test_transformed_remainders_decay(nonres):
    rs = np.array([100.0, 200.0, 400.0, 800.0])
    er, et = [], []
    for r in rs:
        ex = transformed_rates(nonres, r, 0.37, 1.1)
        lr = leading_rates(nonres, ex["varrho"], ex["tau"], 1.1, ex["J"])
        er.append(abs(ex["dvarrho"] - lr[0]))
        et.append(abs(ex["dtau"] - lr[1]))
    assert fit_slope(rs, er) == pytest.approx(-1.0, abs=0.1)
    assert fit_slope(rs[1:], et[1:]) == pytest.approx(-2.0, abs=0.2)


# ------------------------------------------------------------------ J


def test_J_asymptotics(nonres):
    j0 = check_J_asymptotics(nonres, 0, rhos=(1e3, 1e4))
    j1 = check_J_asymptotics(nonres, 1, rhos=(1e3, 1e4))
    assert j0["rel_error"][-1] <= 1e-2 and j1["rel_error"][-1] <= 3e-2
    assert j0["rel_error"][-1] < j0["rel_error"][0]


def test_J_linear_phi(basis, structure):
    # phi(x) = x: J = (1/(2 pi rho)) int rho sin^2 = 1/2
    spec = OscillatorSpec(1.0, OddFunction("linear"), OddFunction(), sine_forcing(basis, structure, {}), phi_inf=0.0)
    assert compute_J(spec, 3.0) == pytest.approx(0.5, rel=1e-12)


# ------------------------------------------------------------ expansion


@pytest.mark.parametrize("rho0,tau0", [(0.9, 0.0), (1.2, 0.7), (1.5, 3.1)])
def test_expansion_closed_form_vs_quadrature(nonres, rho0, tau0):
    q = expansion_coefficients(nonres, rho0, tau0)
    m, l = expansion_closed_form(nonres, rho0, tau0)
    assert float(m) == pytest.approx(q.m, abs=1e-10)
    assert float(l) == pytest.approx(q.l, abs=1e-10)
    # integration by parts gives the f' sin form of m
    assert q.m_parts == pytest.approx(q.m, abs=1e-10)
    assert q.l_stated == -q.l


def test_expansion_closed_form_resonant(res_spec):
    # resonant mode a sin(t): int a sin(tau0 + th) sin th = a pi cos tau0
    q = expansion_coefficients(res_spec, 1.0, 0.4)
    _, l = expansion_closed_form(res_spec, 1.0, 0.4)
    assert float(l) == pytest.approx(q.l, abs=1e-10)


def test_expansion_series_matches_closed_form(nonres):
    L, M = expansion_series(nonres, 1.5, 0.75)
    rho = np.array([0.9, 1.3, 2.1])
    tau = np.array([0.2, -4.0, 11.0])
    m, l = expansion_closed_form(nonres, rho, tau)
    assert np.allclose(L(tau, rho), l, atol=1e-13)
    assert np.allclose(M(tau, rho), m, atol=1e-13)


@pytest.fixture(scope="module")
def order_data(nonres):
    rho0, tau0 = np.meshgrid([0.9, 1.2, 1.5], [0.0, 0.7, 1.9, 3.1], indexing="ij")
    out = []
    for eps in (1e-2, 1e-3, 1e-4):
        r1, t1 = poincare_numeric(nonres, eps, rho0, tau0)
        m, l = expansion_closed_form(nonres, rho0, tau0)
        dev = max(np.max(np.abs(r1 - rho0 - eps * m)), np.max(np.abs(t1 - tau0 - TWO_PI - eps * l)))
        out.append(dev)
    return np.array([1e-2, 1e-3, 1e-4]), np.array(out)


def test_poincare_order(order_data):
    eps, dev = order_data
    assert 1.8 <= fit_slope(eps, dev) <= 2.2


def test_poincare_reversible(nonres):
    rho0, tau0 = np.array([1.1, 1.4]), np.array([0.3, 2.2])
    r1, t1 = poincare_numeric(nonres, 1e-2, rho0, tau0)
    r2, t2 = poincare_numeric(nonres, 1e-2, r1, -t1)
    assert np.allclose(r2, rho0, atol=1e-10) and np.allclose(t2, -tau0, atol=1e-10)


# ---------------------------------------------------------------- twist


def test_resonance_mask(res_spec, nonres):
    assert resonance_mask(res_spec.forcing, 1.0).sum() == 2
    assert not resonance_mask(nonres.forcing, 1.0).any()


def test_mean_twist(nonres):
    rep = mean_twist(nonres, 1.2, T_avg=1e4)
    assert rep.rel_error <= 1e-2
    assert rep.measured < 0 and rep.sign_agrees_with_stated
    assert rep.literal_value == pytest.approx(-rep.measured, rel=1e-2)


def test_mean_twist_rejects_resonance(res_spec):
    with pytest.raises(ResonantForcing):
        mean_twist(res_spec, 1.0)


def test_brute_force_twist_sign(nonres):
    # r (return time - 2 pi) averaged over tau0 approaches -4 phi(+inf) = -2 pi
    v = brute_force_twist(nonres, 200.0, np.linspace(0, 50, 24))
    assert np.mean(v) == pytest.approx(-TWO_PI, rel=2e-2)


def test_margin_without_resonance(nonres):
    assert twist_margin(nonres, 1000).margin == pytest.approx(4 * math.pi / 2, rel=1e-12)


def test_margin_single_mode(basis, structure):
    # D = 2 pi + a pi cos(tau0) for phi = -arctan, f = a sin t
    a = 0.2
    spec = OscillatorSpec(1.0, OddFunction("arctan", -1.0), OddFunction(), sine_forcing(basis, structure, {(1, 0): a}))
    m = twist_margin(spec, 10_000)
    assert m.margin == pytest.approx(TWO_PI - a * math.pi, rel=1e-9)
    assert m.sign == 1.0
    assert abs(twist_margin(spec, 100_000).margin - m.margin) <= 1e-6


def test_margin_zero(basis, structure):
    spec = OscillatorSpec(1.0, OddFunction("arctan", -1.0), OddFunction(),
                          sine_forcing(basis, structure, {(1, 0): 2.5}))
    with pytest.raises(MarginZero):
        twist_margin(spec, 1000)


def test_first_integral_transport(res_spec):
    from apkam.smalltwist import resonant_split
    L, M = expansion_series(res_spec, 1.5, 0.75)
    sp = resonant_split(L, M, TWO_PI)
    I = first_integral(res_spec)
    th = np.linspace(-5, 5, 21)
    r = np.linspace(0.9, 2.1, 21)
    res = sp.L_hat(th, r) * I.d_theta(th, r) + sp.M_hat(th, r) * I.d_rho(th, r)
    assert np.max(np.abs(res)) < 1e-13
    h = 1e-6
    assert np.allclose(I.d_theta(th, r), (I.value(th + h, r) - I.value(th - h, r)) / (2 * h), atol=1e-8)


# ------------------------------------------------------------ experiment


def test_boundedness_short(nonres):
    rep = boundedness_experiment(nonres, [5.0, 20.0], T=300.0)
    assert rep.max_ratio <= 3 and rep.max_slope <= 1e-3
    assert rep.samples["amp"].shape[0] == 2
    with pytest.raises(ValueError):
        boundedness_experiment(nonres, [5.0], T=1e6)
