import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apkam.apseries import FrequencyBasis
from apkam.diophantine import (
    ApproximationFunction,
    admissible_half_lattice,
    check_alpha,
    check_omega,
    delta_eval,
    lambda_envelope,
)
from apkam.errors import DomainError, ResonanceFound


def brute_envelope(delta, rho):
    t = np.linspace(0, 200, 2_000_001)
    return float(np.max(delta.raw(t) * np.exp(-rho * t)))


def test_lambda_polynomial_closed_form():
    d = ApproximationFunction("polynomial", tau=3.0)
    assert lambda_envelope(d, 1.0) == pytest.approx(27 * math.exp(-2), rel=1e-12)


@given(st.floats(0.2, 5.0), st.floats(0.5, 4.0))
def test_lambda_matches_grid_search(rho, tau):
    d = ApproximationFunction("polynomial", tau=tau)
    assert lambda_envelope(d, rho) == pytest.approx(brute_envelope(d, rho), rel=1e-6)


@pytest.mark.parametrize("rho", [0.3, 1.0, 2.5])
def test_lambda_subexponential(rho):
    d = ApproximationFunction("subexponential", a=1.0, sigma=2.0)
    assert lambda_envelope(d, rho) == pytest.approx(brute_envelope(d, rho), rel=1e-6)


def test_delta_domain():
    d = ApproximationFunction()
    assert delta_eval(d, 1.0) == 8.0
    with pytest.raises(DomainError):
        delta_eval(d, 0.5)


def test_validate_and_log_integral():
    d = ApproximationFunction("polynomial", tau=2.0)
    d.validate()
    assert d.log_integral() == pytest.approx(4 * math.log(2), rel=1e-14)
    s = ApproximationFunction("subexponential", a=1.0, sigma=2.5)
    s.validate()
    # int_0^inf log(e^u + e)^-2.5 du; log(e^u + e) = u + log1p(e^{1-u})
    u = np.linspace(0, 4000, 4_000_001)
    ref = np.trapezoid((u + np.log1p(np.exp(1 - u))) ** -2.5, u) + 4000 ** -1.5 / 1.5
    assert s.log_integral() == pytest.approx(ref, rel=1e-5)


def test_bad_family_parameters():
    with pytest.raises(ValueError):
        ApproximationFunction("polynomial", tau=-1.0)
    with pytest.raises(ValueError):
        ApproximationFunction("subexponential", sigma=1.0)


def test_half_lattice_count(basis, structure):
    # half of the 2K(K+1) nonzero vectors in the l1 ball
    K = 6
    hl = admissible_half_lattice(basis, structure, K)
    assert len(hl) == K * (K + 1)
    assert all(next(v for v in k if v) > 0 for k in hl)


def test_check_omega_golden(basis, structure):
    rep = check_omega(basis, structure, ApproximationFunction(), gamma=1e-3, K=8)
    assert rep.success and rep.gamma_observed >= 1e-3


def test_check_omega_finds_relation(structure):
    b = FrequencyBasis(0, (1.0, 0.5))
    with pytest.raises(ResonanceFound) as exc:
        check_omega(b, structure, ApproximationFunction(), gamma=1e-6, K=4)
    k = exc.value.report.argmin_k
    assert k[0] + 0.5 * k[1] == 0


def test_check_alpha(basis, structure, alpha):
    rep = check_alpha(alpha, basis, structure, ApproximationFunction(), gamma0=1e-4, K=8)
    assert rep.success and rep.argmin_j != 0


def test_check_alpha_rational_rotation(basis, structure):
    # alpha = 2 pi makes k = (1, 0) resonant with j = 1
    with pytest.raises(ResonanceFound) as exc:
        check_alpha(2 * math.pi, basis, structure, ApproximationFunction(), gamma0=1e-6, K=4)
    assert exc.value.report.gamma_observed < 1e-12
    assert exc.value.report.argmin_k == {0: 1}
