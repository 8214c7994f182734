import math

import numpy as np
import pytest

from apkam.apseries import APSeries2
from apkam.diophantine import ApproximationFunction, check_alpha
from apkam.errors import HypothesisViolated, NoAdmissibleBeta, ResonantModeEncountered
from apkam.oscillator import (
    FirstIntegral,
    OddFunction,
    OscillatorSpec,
    expansion_series,
    first_integral,
    sine_forcing,
)
from apkam.smalltwist import (
    SmallTwistMap,
    averaging_transform,
    build_adiabatic_chart,
    resonant_split,
    select_beta,
    symmetrize_I,
    twist_condition,
)

from conftest import ALPHA

TWO_PI = 2 * math.pi


def series2(basis, structure, rows, s=0.5, y0=0.0, degree=16):
    """rows: {mode tuple: chebyshev coefficient list}."""
    modes = np.array(list(rows), int)
    c = np.zeros((len(rows), degree + 1), complex)
    for i, v in enumerate(rows.values()):
        c[i, :len(v)] = v
    return APSeries2(basis, structure, modes, c, s=s, y0=y0)


def twist_pair(basis, structure, amp=0.1):
    """L symmetric about -alpha/2 with a y-shear, M antisymmetric."""
    raw = series2(basis, structure, {
        (0, 0): [0.0, 1.0],
        (1, 0): [amp, 0.5 * amp], (-1, 0): [amp, 0.5 * amp],
        (0, 1): [0.5j * amp], (0, -1): [-0.5j * amp],
        (1, -1): [0.3 * amp, 0.1j * amp], (-1, 1): [0.3 * amp, -0.1j * amp],
    })
    L, _ = raw.parity_decompose(ALPHA)
    _, M = raw.parity_decompose(ALPHA)
    return L, M


@pytest.fixture(scope="module")
def resonant(basis, structure):
    spec = OscillatorSpec(1.0, OddFunction("arctan", -1.0), OddFunction("zero"),
                          sine_forcing(basis, structure, {(1, 0): 0.2, (0, 1): 0.3}))
    L, M = expansion_series(spec, 1.5, 0.75)
    return spec, L, M


# ---------------------------------------------------------------- map


def test_parity_checked(basis, structure):
    L, M = twist_pair(basis, structure)
    SmallTwistMap(ALPHA, 0.01, L, M)
    with pytest.raises(ValueError):
        SmallTwistMap(ALPHA, 0.01, M + L, M)


def test_map_reversible(basis, structure):
    L, M = twist_pair(basis, structure)
    assert SmallTwistMap(ALPHA, 0.0, L, M).reversibility() < 1e-13


# --------------------------------------------------------------- beta


def test_beta_without_delta(basis, structure):
    d = ApproximationFunction()
    ch = select_beta(0.0, 1.0, 0.0, ALPHA, basis, structure, d, 1e-4, K=8)
    assert ch.alpha_shifted == ALPHA and ch.n_grid == 1


def test_beta_margin_matches_scan(basis, structure):
    d = ApproximationFunction()
    ch = select_beta(0.0, 1.0, 0.05, ALPHA, basis, structure, d, 1e-5, K=6, n_grid=2000)
    rep = check_alpha(ch.alpha_shifted, basis, structure, d, 1e-12, K=6)
    assert ch.margin == pytest.approx(rep.gamma_observed, rel=1e-9)
    assert 1e-5 <= ch.beta <= 1.0 + 1e-5


def test_beta_zero_width(basis, structure):
    ch = select_beta(0.5, 0.5, 0.05, ALPHA, basis, structure, ApproximationFunction(), 1e-6, K=6)
    assert ch.beta == pytest.approx(0.5 + 1e-6) and ch.n_grid == 1


def test_beta_none_admissible(basis, structure):
    with pytest.raises(NoAdmissibleBeta):
        select_beta(0.0, 1.0, 0.05, ALPHA, basis, structure, ApproximationFunction(), 10.0, K=6, n_grid=200)


# --------------------------------------------------------------- twist


def test_twist_condition_values(basis, structure):
    # mean y^2 on [-1, 1]: T2 = 2y^2 - 1, so y^2 = (T0 + T2) / 2
    L = series2(basis, structure, {(0, 0): [0.5, 0.0, 0.5]}, s=1.0)
    assert twist_condition(L, 0.3) == pytest.approx(0.6, rel=1e-13)
    assert twist_condition(L) == pytest.approx(0.0, abs=1e-15)
    z = series2(basis, structure, {(1, 0): [1.0], (-1, 0): [1.0]})
    assert twist_condition(z) == 0.0


# ------------------------------------------------------------ averaging


def test_averaging_residual(basis, structure):
    L, M = twist_pair(basis, structure)
    res = averaging_transform(SmallTwistMap(ALPHA, 1e-3, L, M), 0.1, 0.1, 5.0)
    # projected series reproduces the direct composition
    assert res.x_residual <= 1e-9 and res.y_residual <= 1e-9
    # the map is reversible to O(delta^2) only; averaging must not make it worse
    assert res.reversibility_out <= 10 * res.reversibility_in + 1e-12
    # U odd, V even
    x = np.linspace(-20, 20, 41)
    y = np.full_like(x, 0.1)
    assert np.max(np.abs(res.U(-x, y) + res.U(x, y))) < 1e-12
    assert np.max(np.abs(res.V(-x, y) - res.V(x, y))) < 1e-12
    # averaged L0 keeps only the mean T1((y - y0)/s) = 2y
    assert np.allclose(res.L0(x, y), 0.2, atol=1e-14)


def test_averaging_remainder_is_first_order(basis, structure):
    L, M = twist_pair(basis, structure)
    r1 = averaging_transform(SmallTwistMap(ALPHA, 1e-3, L, M), 0.1, 0.1, 5.0).remainder_norm
    a2 = averaging_transform(SmallTwistMap(ALPHA, 1e-4, L, M), 0.1, 0.1, 5.0)
    # phi = O(delta) once the oscillating part is removed
    assert a2.remainder_norm / r1 == pytest.approx(0.1, rel=0.1)
    assert a2.direct_remainder <= 1e-7


def test_averaging_tail_decreases_with_N(basis, structure):
    L, M = twist_pair(basis, structure)
    tmap = SmallTwistMap(ALPHA, 1e-3, L, M)
    tails = [averaging_transform(tmap, 0.1, 0.1, N).tail_norm for N in (0.05, 0.25, 5.0)]
    assert tails[0] >= tails[1] >= tails[2] == 0.0


def test_averaging_zero_L(basis, structure):
    z = APSeries2.zero(basis, structure, 0.5)
    res = averaging_transform(SmallTwistMap(ALPHA, 1e-3, z, z), 0.1, 0.1, 5.0)
    assert res.U.is_zero() and res.V.is_zero() and res.remainder_norm < 1e-14


def test_averaging_refuses_resonance(resonant):
    _, L, M = resonant
    tmap = SmallTwistMap(TWO_PI, 1e-3, L, M)
    with pytest.raises(ResonantModeEncountered):
        averaging_transform(tmap, 0.1, 0.1, 5.0)


# ---------------------------------------------------------------- split


def test_split_partitions(resonant):
    _, L, M = resonant
    sp = resonant_split(L, M, TWO_PI)
    x = np.linspace(-10, 10, 21)
    y = np.full_like(x, 1.3)
    assert np.allclose(sp.L_hat(x, y) + sp.L_tilde(x, y), L(x, y), atol=1e-14)
    assert np.allclose(sp.M_hat(x, y) + sp.M_tilde(x, y), M(x, y), atol=1e-14)
    assert all(v < 1e-12 for v in sp.checks.values())
    # only the k = (1, 0) mode and the mean are resonant at alpha = 2 pi
    assert {tuple(k) for k in sp.L_hat.modes} == {(0, 0), (1, 0), (-1, 0)}
    assert sp.resonant_sets


def test_split_nonresonant_alpha(basis, structure):
    L, M = twist_pair(basis, structure)
    sp = resonant_split(L, M, ALPHA)
    assert sp.M_hat.is_zero() and sp.resonant_sets == []


# ---------------------------------------------------------------- chart


def test_chart_constant_case(basis, structure):
    # L = c rho, M = 0, I = rho: K = theta / (c rho), Pi(h) = alpha / (c h), tau = theta
    c = 0.5
    Lh = series2(basis, structure, {(0, 0): [1.5 * c, 0.75 * c]}, s=0.75, y0=1.5)
    Mh = APSeries2.zero(basis, structure, 0.75, 1.5)
    I = FirstIntegral(lambda th, r: np.asarray(r, float) + 0 * np.asarray(th),
                      lambda th, r: 0 * np.asarray(th) * np.asarray(r),
                      lambda th, r: 1.0 + 0 * np.asarray(th) * np.asarray(r))
    ch = build_adiabatic_chart(Lh, Mh, I, TWO_PI, (0.8, 2.2), (1.0, 1.6))
    th = np.array([0.3, 2.0, 5.0])
    rho = np.array([1.1, 1.4, 1.9])
    assert np.allclose(ch.K(th, rho), th / (c * rho), rtol=1e-12)
    assert np.allclose(ch.Pi(rho), TWO_PI / (c * rho), rtol=1e-12)
    assert np.allclose(ch.tau(th, rho), th, rtol=1e-12)


@pytest.fixture(scope="module")
def chart(resonant):
    spec, L, M = resonant
    sp = resonant_split(L, M, TWO_PI)
    return build_adiabatic_chart(sp.L_hat, sp.M_hat, first_integral(spec), TWO_PI, (0.8, 2.2), (1.0, 1.6))


def test_chart_identities(chart):
    th = np.linspace(0.1, 6.0, 7)
    rho = np.linspace(1.05, 1.55, 7)
    assert np.max(np.abs(chart.chart_residual(th, rho))) <= 1e-9
    per = chart.periodicity_residuals(th, rho)
    assert per["K"] <= 1e-9 and per["tau"] <= 1e-9


def test_period_function_derivative(chart):
    h = chart.I.value(np.zeros(2), np.array([1.1, 1.4]))
    dh = 1e-5
    fd = (chart.Pi(h + dh) - chart.Pi(h - dh)) / (2 * dh)
    pp = chart.Pi_prime(h)
    assert np.all(pp < 0)
    assert np.allclose(pp, fd, rtol=1e-6)


def test_K_derivatives_by_differences(chart):
    th = np.array([0.7, 3.3])
    rho = np.array([1.2, 1.45])
    Kt, Kr = chart.K_derivatives(th, rho)
    e = 1e-5
    fdt = (chart.K(th + e, rho) - chart.K(th - e, rho)) / (2 * e)
    fdr = (chart.K(th, rho + e) - chart.K(th, rho - e)) / (2 * e)
    assert np.allclose(Kt, fdt, rtol=1e-6)
    assert np.allclose(Kr, fdr, rtol=1e-6)


def test_chart_rejects_wrong_sign(basis, structure):
    spec = OscillatorSpec(1.0, OddFunction("arctan"), OddFunction("zero"),
                          sine_forcing(basis, structure, {(1, 0): 0.2}))
    L, M = expansion_series(spec, 1.5, 0.75)
    sp = resonant_split(L, M, TWO_PI)
    with pytest.raises(HypothesisViolated):
        build_adiabatic_chart(sp.L_hat, sp.M_hat, first_integral(spec), TWO_PI, (0.8, 2.2), (1.0, 1.6))


def test_symmetrize_I(resonant):
    spec, _, _ = resonant
    I = first_integral(spec)
    J = symmetrize_I(I)
    th = np.linspace(-3, 3, 13)
    r = np.full_like(th, 1.3)
    assert np.allclose(J.value(th, r), J.value(-th, r), atol=1e-15)
    assert np.allclose(J.value(th, r) - I.value(th, r),
                       0.5 * (I.value(-th, r) - I.value(th, r)), atol=1e-15)
