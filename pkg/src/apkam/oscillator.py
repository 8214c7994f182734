"""Forced oscillator x'' + g(x) x' + w^2 x + phi(x) = f(t) and its Poincare map.

First-order system: x' = w y - G(x), y' = -w x - phi(x)/w + f(t)/w with
G(x) = int_0^x g.  Polar coordinates x = r sin(theta), y = r cos(theta);
the section theta = 0 (x = 0, y > 0) carries the map in (rho, tau).

Sign convention: the time increment over one turn is
    2 pi / w + eps * l,  l = rho0 w^-3 (-4 phi(+inf) + int_0^2pi f(tau0 + theta/w) sin(theta) dtheta),
which is what direct simulation gives (larger |phi| at infinity stiffens the
restoring force and shortens the period when phi(+inf) > 0).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as spi

from .apseries import APSeries, APSeries2, CHEB_DEGREE, FrequencyBasis, SpatialStructure
from .errors import (
    AnnulusEscape,
    MarginZero,
    QuadratureFailure,
    ResonantForcing,
    StepSizeUnderflow,
    ThetaNotMonotone,
)

TWO_PI = 2.0 * math.pi
QUAD_TOL = 1e-11


# ------------------------------------------------------------ functions


@dataclass(frozen=True)
class OddFunction:
    """Named odd function with derivative; `integral` is the even antiderivative from 0."""

    name: str = "zero"
    scale: float = 1.0

    def __post_init__(self):
        if self.name not in ("zero", "arctan", "tanh", "xgauss", "linear"):
            raise ValueError(f"unknown function {self.name!r}")

    def __call__(self, x):
        x = np.asarray(x, float)
        c = self.scale
        if self.name == "zero":
            return np.zeros_like(x)
        if self.name == "arctan":
            return c * np.arctan(x)
        if self.name == "tanh":
            return c * np.tanh(x)
        if self.name == "xgauss":
            return c * x * np.exp(-x * x)
        return c * x

    def derivative(self, x):
        x = np.asarray(x, float)
        c = self.scale
        if self.name == "zero":
            return np.zeros_like(x)
        if self.name == "arctan":
            return c / (1.0 + x * x)
        if self.name == "tanh":
            return c / np.cosh(x) ** 2
        if self.name == "xgauss":
            return c * (1.0 - 2.0 * x * x) * np.exp(-x * x)
        return c * np.ones_like(x)

    def integral(self, x):
        x = np.asarray(x, float)
        c = self.scale
        if self.name == "zero":
            return np.zeros_like(x)
        if self.name == "arctan":
            return c * (x * np.arctan(x) - 0.5 * np.log1p(x * x))
        if self.name == "tanh":
            return c * np.log(np.cosh(x))
        if self.name == "xgauss":
            return 0.5 * c * (-np.expm1(-x * x))
        return 0.5 * c * x * x

    @property
    def limit(self) -> float:
        """Value at +infinity (nan if unbounded)."""
        return {"zero": 0.0, "arctan": 0.5 * math.pi * self.scale, "tanh": self.scale,
                "xgauss": 0.0, "linear": math.nan}[self.name]


@dataclass(frozen=True, eq=False)
class OscillatorSpec:
    varpi: float
    phi: OddFunction
    g: OddFunction
    forcing: APSeries
    phi_inf: float | None = None

    def __post_init__(self):
        if not self.varpi > 0:
            raise ValueError("varpi must be positive")
        rng = np.random.default_rng(0)
        x = rng.uniform(-20, 20, 64)
        for fn in (self.phi, self.g):
            if np.max(np.abs(fn(-x) + fn(x))) > 1e-12 * (1 + np.max(np.abs(fn(x)))):
                raise ValueError(f"{fn.name} is not odd")
        t = rng.uniform(-100, 100, 64)
        fv = self.forcing(t)
        if np.max(np.abs(self.forcing(-t) + fv)) > 1e-12 * (1 + np.max(np.abs(fv))):
            raise ValueError("forcing is not odd")
        est = self.phi.limit
        if self.phi_inf is None:
            object.__setattr__(self, "phi_inf", estimate_phi_inf(self.phi))
        elif math.isfinite(est) and abs(est - self.phi_inf) > 1e-6:
            raise ValueError(f"supplied phi(+inf)={self.phi_inf} disagrees with {est}")

    def G(self, x):
        return self.g.integral(x)

    def f(self, t):
        return self.forcing(t)

    def decay_report(self) -> dict:
        """|x^k phi^(k)(x)| and |x^k G^(k)(x)| for k = 0, 1, 2 at large x."""
        xs = np.array([1e2, 1e3, 1e4])
        h = 1e-3 * xs
        phi1 = self.phi.derivative(xs)
        phi2 = (self.phi.derivative(xs + h) - self.phi.derivative(xs - h)) / (2 * h)
        G0, G1 = self.G(xs), self.g(xs)
        G2 = self.g.derivative(xs)
        return {
            "x": xs.tolist(),
            "phi": [np.abs(self.phi(xs) - self.phi_inf).tolist(), np.abs(xs * phi1).tolist(),
                    np.abs(xs**2 * phi2).tolist()],
            "G": [np.abs(G0).tolist(), np.abs(xs * G1).tolist(), np.abs(xs**2 * G2).tolist()],
        }


def estimate_phi_inf(phi: OddFunction) -> float:
    """phi(1e6) refined by Richardson in 1/x."""
    a, b = float(phi(1e6)), float(phi(2e6))
    return 2 * b - a


def sine_forcing(basis: FrequencyBasis, structure: SpatialStructure, amps: dict) -> APSeries:
    """Odd forcing sum_k a_k sin(<k, w> t) from {dense k tuple: a_k}."""
    out = APSeries.zero(basis, structure)
    for k, a in amps.items():
        out = out + APSeries.trig(basis, structure, k, sin=a)
    return out


# ---------------------------------------------------------- integration


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sol: object = None


def _raw(fn: OddFunction, kind: str):
    """Array-only callable without conversions (hot path of the integrator)."""
    c, name = fn.scale, fn.name
    if name == "zero":
        return lambda x: 0.0 * x
    if kind == "value":
        return {"arctan": lambda x: c * np.arctan(x), "tanh": lambda x: c * np.tanh(x),
                "xgauss": lambda x: c * x * np.exp(-x * x), "linear": lambda x: c * x}[name]
    return {"arctan": lambda x: c * (x * np.arctan(x) - 0.5 * np.log1p(x * x)),
            "tanh": lambda x: c * np.log(np.cosh(x)), "xgauss": lambda x: -0.5 * c * np.expm1(-x * x),
            "linear": lambda x: 0.5 * c * x * x}[name]


def _rhs(spec: OscillatorSpec, sign: float = 1.0):
    w = spec.varpi
    phi, G = _raw(spec.phi, "value"), _raw(spec.g, "integral")
    fr = spec.forcing.frequencies.tolist()
    fc = spec.forcing.coeffs.tolist()

    def rhs(t, s):
        n = s.size // 2
        x, y = s[:n], s[n:]
        ft = sum(c * cmath.exp(1j * v * sign * t) for c, v in zip(fc, fr)).real if fr else 0.0
        out = np.empty_like(s)
        out[:n] = w * y - G(x)
        out[n:] = -w * x - phi(x) / w + ft / w
        return out

    return rhs


def integrate_states(spec: OscillatorSpec, x0, y0, t_span, tol: float = 1e-10,
                     t_eval=None, dense: bool = False, events=None):
    if tol < 1e-13:
        raise ValueError("tol must be at least 1e-13")
    x0 = np.atleast_1d(np.asarray(x0, float))
    y0 = np.atleast_1d(np.asarray(y0, float))
    sol = spi.solve_ivp(_rhs(spec), t_span, np.concatenate([x0, y0]), method="DOP853",
                              rtol=tol, atol=tol, t_eval=t_eval, dense_output=dense, events=events)
    if sol.status < 0:
        raise StepSizeUnderflow(sol.message)
    if not np.all(np.isfinite(sol.y)):
        raise StepSizeUnderflow("non-finite state")
    return sol


def integrate(spec: OscillatorSpec, state0, t_span, tol: float = 1e-10, t_eval=None,
              dense: bool = False) -> Trajectory:
    """Adaptive explicit Runge-Kutta (order 8) trajectory of the first-order system."""
    sol = integrate_states(spec, state0[0], state0[1], t_span, tol, t_eval, dense)
    return Trajectory(sol.t, sol.y[0], sol.y[1], sol)


def involution(x, y, t):
    """(x, y, t) -> (-x, y, -t), the reversing symmetry of the first-order system."""
    return -np.asarray(x), np.asarray(y), -np.asarray(t)


# --------------------------------------------------------------- polar


def polar_rhs(spec: OscillatorSpec, r, theta, t):
    """(dr/dtheta, dt/dtheta) = (p1, p2)."""
    r, theta, t = (np.asarray(v, float) for v in (r, theta, t))
    w = spec.varpi
    x = r * np.sin(theta)
    fphi = spec.f(t) - spec.phi(x)
    num = fphi * np.cos(theta) / w - spec.G(x) * np.sin(theta)
    den = w - fphi * np.sin(theta) / (w * r) - spec.G(x) * np.cos(theta) / r
    if np.any(den <= 0):
        raise ThetaNotMonotone("theta' <= 0; radius too small")
    return num / den, 1.0 / den


def _quad(fun, a: float, b: float, tol: float = QUAD_TOL, points=None) -> float:
    if a == b:
        return 0.0
    val, err = spi.quad(fun, a, b, epsabs=tol, epsrel=tol, limit=500, points=points)
    if err > 10 * max(tol, tol * abs(val)):
        raise QuadratureFailure(f"quadrature error estimate {err:.2e}")
    return float(val)


def _kinks(r: float, lo: float, hi: float) -> list[float] | None:
    """Points where r sin(xi) crosses the unit scale; helps quad on sharp integrands."""
    if r <= 10:
        return None
    d = 1.0 / r
    pts = [p for c in range(-2, 3) for p in (c * math.pi - d, c * math.pi + d) if lo < p < hi]
    return pts or None


def S_integrand(spec: OscillatorSpec, r: float):
    w = spec.varpi
    return lambda xi: spec.phi(r * math.sin(xi)) * math.cos(xi) / w**2 + spec.G(r * math.sin(xi)) * math.sin(xi) / w


def S_value(spec: OscillatorSpec, r: float, theta: float) -> float:
    lo, hi = min(0.0, theta), max(0.0, theta)
    v = _quad(S_integrand(spec, r), lo, hi, points=_kinks(r, lo, hi))
    return v if theta >= 0 else -v


def transform_S(spec: OscillatorSpec, r: float, theta: float) -> float:
    """varrho = r + S(r, theta)."""
    return r + S_value(spec, r, theta)


def _S_r(spec: OscillatorSpec, r: float, theta: float) -> float:
    w = spec.varpi

    def fun(xi):
        s, c = math.sin(xi), math.cos(xi)
        return spec.phi.derivative(r * s) * s * c / w**2 + spec.g(r * s) * s * s / w

    lo, hi = min(0.0, theta), max(0.0, theta)
    v = _quad(fun, lo, hi, points=_kinks(r, lo, hi))
    return v if theta >= 0 else -v


def compute_J(spec: OscillatorSpec, rho: float) -> float:
    """J(rho) = (1 / (2 pi rho)) int_0^2pi phi(rho sin xi) sin xi dxi."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    fun = lambda xi: float(spec.phi(rho * math.sin(xi))) * math.sin(xi)
    pts = [1.0 / rho, 10.0 / rho] if rho > 10 else None
    pts = [p for p in pts if p < 0.5 * math.pi] if pts else None
    return 2.0 / (math.pi * rho) * _quad(fun, 0.0, 0.5 * math.pi, tol=1e-13, points=pts)


def compute_J_prime(spec: OscillatorSpec, rho: float, h: float | None = None) -> float:
    """Central differences with one Richardson step."""
    h = 1e-2 * rho if h is None else h
    d1 = (compute_J(spec, rho + h) - compute_J(spec, rho - h)) / (2 * h)
    d2 = (compute_J(spec, rho + h / 2) - compute_J(spec, rho - h / 2)) / h
    return (4 * d2 - d1) / 3


def check_J_asymptotics(spec: OscillatorSpec, k: int, rhos=(1e2, 1e3, 1e4)) -> dict:
    """rho^{k+1} J^{(k)}(rho) against (-1)^k k! (2/pi) phi(+inf)."""
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    target = (-1) ** k * math.factorial(k) * 2 / math.pi * spec.phi_inf
    vals = []
    for rho in rhos:
        j = compute_J(spec, rho) if k == 0 else compute_J_prime(spec, rho)
        vals.append(rho ** (k + 1) * j)
    rel = [abs(v - target) / abs(target) if target else abs(v) for v in vals]
    return {"k": k, "rho": list(rhos), "scaled": vals, "target": target, "rel_error": rel}


def transform_T(spec: OscillatorSpec, varrho: float, theta: float) -> float:
    """T(varrho, theta) with tau = t + T; removes the theta-dependent 1/varrho terms."""
    w = spec.varpi
    J = compute_J(spec, varrho)

    def fun(xi):
        s, c = math.sin(xi), math.cos(xi)
        x = varrho * s
        return (float(spec.phi(x)) * s - varrho * J) / (w**3 * varrho) - float(spec.G(x)) * c / (w**2 * varrho)

    lo, hi = min(0.0, theta), max(0.0, theta)
    v = _quad(fun, lo, hi, points=_kinks(varrho, lo, hi))
    return v if theta >= 0 else -v


def transformed_rates(spec: OscillatorSpec, r: float, t: float, theta: float) -> dict:
    """Exact d varrho/d theta and d tau/d theta along the flow at (r, t, theta)."""
    w = spec.varpi
    p1, p2 = (float(v) for v in polar_rhs(spec, r, theta, t))
    S = S_value(spec, r, theta)
    Sr = _S_r(spec, r, theta)
    Stheta = float(S_integrand(spec, r)(theta))
    varrho = r + S
    drho = (1 + Sr) * p1 + Stheta
    J = compute_J(spec, varrho)
    x = varrho * math.sin(theta)
    T_theta = (float(spec.phi(x)) * math.sin(theta) - varrho * J) / (w**3 * varrho) \
        - float(spec.G(x)) * math.cos(theta) / (w**2 * varrho)
    h = 1e-3 * varrho
    T_rho = (8 * (transform_T(spec, varrho + h / 2, theta) - transform_T(spec, varrho - h / 2, theta))
             - (transform_T(spec, varrho + h, theta) - transform_T(spec, varrho - h, theta))) / (6 * h)
    dtau = p2 + T_rho * drho + T_theta
    tau = t + transform_T(spec, varrho, theta)
    return {"varrho": varrho, "tau": tau, "J": J, "dvarrho": drho, "dtau": dtau}


def leading_rates(spec: OscillatorSpec, varrho: float, tau: float, theta: float, J: float) -> tuple[float, float]:
    w = spec.varpi
    ft = float(spec.f(tau))
    return ft * math.cos(theta) / w**2, 1 / w - J / w**3 + ft * math.sin(theta) / (w**3 * varrho)


# ---------------------------------------------------------- section map


def model_rhs(spec: OscillatorSpec, eps: float):
    """Leading-order (rho, tau) system in the theta clock, stacked states."""
    w = spec.varpi
    c = 2.0 / math.pi * spec.phi_inf

    def rhs(theta, s):
        n = s.size // 2
        rho, tau = s[:n], s[n:]
        ft = spec.f(tau)
        drho = -eps * rho**2 * ft * math.cos(theta) / w**2
        dtau = 1.0 / w - eps * rho * c / w**3 + eps * rho * ft * math.sin(theta) / w**3
        return np.concatenate([drho, dtau])

    return rhs


def poincare_numeric(spec: OscillatorSpec, eps: float, rho0, tau0, tol: float = 1e-12):
    """Integrate the model system over theta in [0, 2 pi]; returns (rho1, tau1)."""
    rho0 = np.atleast_1d(np.asarray(rho0, float))
    tau0 = np.atleast_1d(np.asarray(tau0, float))
    rho0, tau0 = np.broadcast_arrays(rho0, tau0)
    shape = rho0.shape
    sol = spi.solve_ivp(model_rhs(spec, eps), (0.0, TWO_PI),
                              np.concatenate([rho0.ravel(), tau0.ravel()]),
                              method="DOP853", rtol=tol, atol=tol, dense_output=True)
    if sol.status < 0:
        raise StepSizeUnderflow(sol.message)
    n = rho0.size
    rho_path = sol.y[:n]
    if np.any(rho_path < 0.5) or np.any(rho_path > 3.0):
        raise AnnulusEscape("rho left [1/2, 3] during the turn")
    return sol.y[:n, -1].reshape(shape), sol.y[n:, -1].reshape(shape)


def _mode_integrals(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """int_0^2pi e^{i q theta} sin(theta) and cos(theta) dtheta."""
    q = np.asarray(q, float)
    em = np.expm1(2j * math.pi * q)
    den = q * q - 1.0
    res = np.abs(np.abs(q) - 1.0) < 1e-12
    safe = np.where(res, 1.0, den)
    Is = np.where(res, 1j * math.pi * np.sign(q), em / safe)
    Ic = np.where(res, math.pi + 0j, -1j * q * em / safe)
    return Is, Ic


def forcing_integrals(spec: OscillatorSpec, tau0, forcing: APSeries | None = None):
    """(int f(tau0 + theta/w) sin, int f(tau0 + theta/w) cos) in closed form per mode."""
    f = spec.forcing if forcing is None else forcing
    tau0 = np.asarray(tau0, float)
    if f.n_modes == 0:
        z = np.zeros(tau0.shape)
        return z, z.copy()
    Is, Ic = _mode_integrals(f.frequencies / spec.varpi)
    ph = np.exp(1j * np.multiply.outer(tau0, f.frequencies))
    return (ph @ (f.coeffs * Is)).real, (ph @ (f.coeffs * Ic)).real


@dataclass(frozen=True)
class ExpansionCoefficients:
    m: float
    l: float
    m_parts: float
    l_stated: float


def expansion_coefficients(spec: OscillatorSpec, rho0: float, tau0: float) -> ExpansionCoefficients:
    """First-order coefficients (m, l) by adaptive quadrature.

    m_parts is the f'-sin form of m; l_stated has the opposite sign on both
    terms (the form without the corrected time derivative).
    """
    w = spec.varpi
    f = spec.forcing
    fp = f.derivative_x()
    arg = lambda th: tau0 + th / w
    Ic = _quad(lambda th: float(f(arg(th))) * math.cos(th), 0.0, TWO_PI)
    Is = _quad(lambda th: float(f(arg(th))) * math.sin(th), 0.0, TWO_PI)
    Ip = _quad(lambda th: float(fp(arg(th))) * math.sin(th), 0.0, TWO_PI)
    m = -rho0**2 * Ic / w**2
    m_parts = rho0**2 * Ip / w**3
    l = rho0 * (-4 * spec.phi_inf + Is) / w**3
    return ExpansionCoefficients(m=m, l=l, m_parts=m_parts, l_stated=-l)


def expansion_closed_form(spec: OscillatorSpec, rho0, tau0) -> tuple[np.ndarray, np.ndarray]:
    w = spec.varpi
    Is, Ic = forcing_integrals(spec, tau0)
    rho0 = np.asarray(rho0, float)
    return -rho0**2 * Ic / w**2, rho0 * (-4 * spec.phi_inf + Is) / w**3


def expansion_series(spec: OscillatorSpec, rho_center: float = 1.5, rho_half: float = 0.5,
                     degree: int = CHEB_DEGREE) -> tuple[APSeries2, APSeries2]:
    """(L, M) = (l, m) as series in tau0 with Chebyshev dependence on rho0."""
    f = spec.forcing
    w = spec.varpi
    Is, Ic = _mode_integrals(f.frequencies / w)
    c, h = rho_center, rho_half
    # rho = c + h u, rho^2 = c^2 + h^2/2 + 2 c h u + (h^2/2) T2(u)
    lin = np.zeros(degree + 1)
    lin[:2] = [c, h]
    quad = np.zeros(degree + 1)
    quad[:3] = [c * c + 0.5 * h * h, 2 * c * h, 0.5 * h * h]
    zero = np.zeros((1, f.basis.d), int)
    modes = np.vstack([zero, f.modes]) if f.n_modes else zero
    Lc = np.zeros((modes.shape[0], degree + 1), complex)
    Mc = np.zeros_like(Lc)
    Lc[0] = -4 * spec.phi_inf * lin / w**3
    if f.n_modes:
        Lc[1:] = np.outer(f.coeffs * Is, lin) / w**3
        Mc[1:] = -np.outer(f.coeffs * Ic, quad) / w**2
    L = APSeries2(f.basis, f.structure, modes, Lc, s=h, y0=c)
    M = APSeries2(f.basis, f.structure, modes, Mc, s=h, y0=c)
    return L.enforce_reality(), M.enforce_reality()


# ------------------------------------------------------------ twist


def resonance_mask(f: APSeries, varpi: float, tol: float = 1e-9) -> np.ndarray:
    """Nonzero modes with <k, w> / varpi within tol of an integer."""
    q = f.frequencies / varpi
    dist = np.abs(q - np.round(q))
    nonzero = np.any(f.modes != 0, axis=1)
    mask = nonzero & (dist <= tol)
    # same classification through the rotation 2 pi / varpi
    alpha = TWO_PI / varpi
    ph = f.frequencies * alpha
    dist2 = np.abs(ph - TWO_PI * np.round(ph / TWO_PI))
    if not np.array_equal(mask, nonzero & (dist2 <= TWO_PI * tol)):
        raise AssertionError("resonance classifications disagree")
    return mask


@dataclass
class MeanTwistReport:
    measured: float
    expected_magnitude: float
    rel_error: float
    stated_value: float
    literal_value: float
    sign_agrees_with_stated: bool
    brute_force: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def l_values(spec: OscillatorSpec, rho0: float, tau0) -> np.ndarray:
    return expansion_closed_form(spec, rho0, tau0)[1]


def mean_twist(spec: OscillatorSpec, rho0: float, T_avg: float = 1e4, per_period: int = 16,
               brute_force_radius: float | None = None) -> MeanTwistReport:
    """tau0-average of l over [0, T_avg] against 4 rho0 w^-3 |phi(+inf)|."""
    f = spec.forcing
    if np.any(resonance_mask(f, spec.varpi)):
        raise ResonantForcing("forcing has modes resonant with varpi")
    fmax = float(np.max(np.abs(f.frequencies))) if f.n_modes else 1.0
    n = int(per_period * T_avg * fmax / TWO_PI) + 2
    tau = np.linspace(0.0, T_avg, n)
    lv = l_values(spec, rho0, tau)
    measured = float(spi.simpson(lv, x=tau) / T_avg)
    w = spec.varpi
    expected = 4 * rho0 * abs(spec.phi_inf) / w**3
    stated = -4 * spec.phi_inf / w**3
    literal = 4 * rho0 * spec.phi_inf / w**3
    rel = abs(abs(measured) - expected) / expected if expected else abs(measured)
    bf = None
    if brute_force_radius is not None:
        bf = float(np.mean(brute_force_twist(spec, brute_force_radius, np.linspace(0, 50, 24))))
    return MeanTwistReport(measured, expected, rel, stated, literal,
                           bool(np.sign(measured) == np.sign(stated)), bf)


def brute_force_twist(spec: OscillatorSpec, r0: float, tau0s, tol: float = 1e-11) -> np.ndarray:
    """r0 * (return time - 2 pi / w) from direct simulation of one turn from (0, r0) at t = tau0."""
    out = []
    w = spec.varpi

    def crossing(t, s):
        return s[0]

    crossing.direction = 1.0
    for t0 in np.atleast_1d(tau0s):
        T = TWO_PI / w
        sol = integrate_states(spec, 0.0, r0, (t0, t0 + 1.5 * T), tol=tol, events=crossing)
        ts = [t for t in sol.t_events[0] if t > t0 + 0.5 * T]
        if not ts:
            raise StepSizeUnderflow("no return to the section")
        out.append(r0 * (ts[0] - t0 - T))
    return np.array(out)


def resonant_component(spec: OscillatorSpec, tol: float = 1e-9) -> APSeries:
    f = spec.forcing
    return f.select(resonance_mask(f, spec.varpi, tol))


@dataclass
class TwistMargin:
    margin: float
    sign: float
    tau0: np.ndarray
    D: np.ndarray


def twist_function(spec: OscillatorSpec, tau0, f_res: APSeries | None = None) -> np.ndarray:
    """D(tau0) = -4 phi(+inf) + int f_res(tau0 + theta/w) sin(theta) dtheta."""
    f_res = resonant_component(spec) if f_res is None else f_res
    Is, _ = forcing_integrals(spec, tau0, f_res)
    return -4 * spec.phi_inf + Is


def twist_margin(spec: OscillatorSpec, n_grid: int = 10_000) -> TwistMargin:
    """min over one period of |D(tau0)|; MarginZero if D vanishes or changes sign."""
    tau = np.linspace(0.0, TWO_PI / spec.varpi, n_grid, endpoint=False)
    D = twist_function(spec, tau)
    if np.all(D > 0) or np.all(D < 0):
        m = float(np.min(np.abs(D)))
        if m > 0:
            return TwistMargin(m, float(np.sign(D[0])), tau, D)
    raise MarginZero("twist functional vanishes for some tau0")


@dataclass(frozen=True)
class FirstIntegral:
    """I(theta, rho) with partial derivatives; all vectorized."""

    value: Callable
    d_theta: Callable
    d_rho: Callable
    period: float | None = None


def first_integral(spec: OscillatorSpec) -> FirstIntegral:
    """I = rho0 / D(tau0), invariant for the resonant first-order map."""
    f_res = resonant_component(spec)
    w = spec.varpi
    Is, _ = _mode_integrals(f_res.frequencies / w)
    coef = f_res.coeffs * Is
    freq = f_res.frequencies

    def D(t):
        t = np.asarray(t, float)
        if f_res.n_modes == 0:
            return np.full(t.shape, -4 * spec.phi_inf)
        return -4 * spec.phi_inf + (np.exp(1j * np.multiply.outer(t, freq)) @ coef).real

    def Dp(t):
        t = np.asarray(t, float)
        if f_res.n_modes == 0:
            return np.zeros(t.shape)
        return (np.exp(1j * np.multiply.outer(t, freq)) @ (1j * freq * coef)).real

    return FirstIntegral(
        value=lambda th, r: np.asarray(r, float) / D(th),
        d_theta=lambda th, r: -np.asarray(r, float) * Dp(th) / D(th) ** 2,
        d_rho=lambda th, r: 1.0 / D(th) + 0.0 * np.asarray(r, float),
        period=TWO_PI / w,
    )


# ----------------------------------------------------------- experiment


@dataclass
class BoundednessReport:
    radii: list
    envelope: list
    slope: list
    ratio: list
    T: float
    max_envelope: float
    max_slope: float
    max_ratio: float
    samples: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("samples")
        return d


def boundedness_experiment(spec: OscillatorSpec, radii, T: float = 1e4, tol: float = 1e-10,
                           dt_out: float = 0.5) -> BoundednessReport:
    """Per orbit from (0, r0): envelope sup(|x| + |x'|), amplitude drift slope and max/min ratio."""
    if T > 1e5:
        raise ValueError("T above desk scale")
    radii = np.asarray(radii, float)
    t_eval = np.arange(0.0, T + 0.5 * dt_out, dt_out)
    sol = integrate_states(spec, np.zeros_like(radii), radii, (0.0, T), tol=tol, t_eval=t_eval)
    n = radii.size
    x, y = sol.y[:n], sol.y[n:]
    xdot = spec.varpi * y - spec.G(x)
    env = np.max(np.abs(x) + np.abs(xdot), axis=1)
    amp = np.hypot(x, y)
    slopes = np.array([np.polyfit(sol.t, a, 1)[0] for a in amp])
    ratio = np.max(amp, axis=1) / np.min(amp, axis=1)
    return BoundednessReport(
        radii=radii.tolist(), envelope=env.tolist(), slope=slopes.tolist(), ratio=ratio.tolist(), T=T,
        max_envelope=float(env.max()), max_slope=float(np.max(np.abs(slopes))),
        max_ratio=float(ratio.max()), samples={"t": sol.t, "amp": amp})
