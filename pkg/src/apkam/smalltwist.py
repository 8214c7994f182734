"""Reversible maps with small twist: beta selection, averaging and the adiabatic chart.

Map form: x1 = x + alpha + delta L(x, y) + f,  y1 = y + delta M(x, y) + g, with
f = sum_j delta^{j+1} f_j (likewise g), reversible under (x, y) -> (-x, y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C

from .apseries import (
    APSeries2,
    FrequencyBasis,
    K_MAX,
    SpatialStructure,
    StripParams,
    project_function2,
    retained_modes,
)
from .diophantine import ApproximationFunction, admissible_half_lattice, _dot, _weight_factor, check_alpha
from .errors import (
    DomainEscape,
    HypothesisViolated,
    NoAdmissibleBeta,
    QuadratureFailure,
    ResonantModeEncountered,
)
from .homological import solve_difference
from .oscillator import FirstIntegral

TWO_PI = 2.0 * math.pi
TOL_RES = 1e-9
GRID_TOL = 1e-10


def _grid(s_lo: float, s_hi: float, nx: int = 33, ny: int = 9, x_span=(-50.0, 50.0)):
    x = np.linspace(*x_span, nx)
    y = np.linspace(s_lo, s_hi, ny)
    return np.meshgrid(x, y, indexing="ij")


def reversibility_defect(step: Callable, x, y) -> float:
    """max |M(Psi(M(p))) - Psi(p)| for Psi(x, y) = (-x, y)."""
    x1, y1 = step(x, y)
    x2, y2 = step(-x1, y1)
    return float(max(np.max(np.abs(x2 + x)), np.max(np.abs(y2 - y))))


@dataclass(frozen=True, eq=False)
class SmallTwistMap:
    alpha: float
    delta: float
    L: APSeries2
    M: APSeries2
    f_family: tuple = ()
    g_family: tuple = ()

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if len(self.f_family) > 2 or len(self.g_family) > 2:
            raise ValueError("delta families have degree at most 2")
        res = self.parity_residual()
        if res > GRID_TOL * (1 + self._scale()):
            raise ValueError(f"L, M violate the reversibility identities (residual {res:.2e})")

    def _scale(self) -> float:
        return float(self.L.norm(m=0, r=0) + self.M.norm(m=0, r=0))

    @property
    def y_interval(self) -> tuple[float, float]:
        return self.L.y0 - self.L.s, self.L.y0 + self.L.s

    def parity_residual(self) -> float:
        """max of |L(x,y) - L(-x-alpha,y)| and |M(x,y) + M(-x-alpha,y)| on a grid."""
        X, Y = _grid(*self.y_interval)
        r1 = np.abs(self.L(X, Y) - self.L(-X - self.alpha, Y))
        r2 = np.abs(self.M(X, Y) + self.M(-X - self.alpha, Y))
        return float(max(r1.max(), r2.max()))

    def f(self, x, y):
        return sum((self.delta ** (j + 1) * fj(x, y) for j, fj in enumerate(self.f_family)), np.zeros(np.shape(x)))

    def g(self, x, y):
        return sum((self.delta ** (j + 1) * gj(x, y) for j, gj in enumerate(self.g_family)), np.zeros(np.shape(x)))

    def increments(self, x, y):
        d = self.delta
        return d * self.L(x, y) + self.f(x, y), d * self.M(x, y) + self.g(x, y)

    def __call__(self, x, y):
        dx, dy = self.increments(x, y)
        return x + self.alpha + dx, y + dy

    def reversibility(self) -> float:
        X, Y = _grid(*self.y_interval)
        return reversibility_defect(self, X, Y)


# ------------------------------------------------------------ beta


@dataclass(frozen=True)
class BetaChoice:
    beta: float
    margin: float
    alpha_shifted: float
    n_grid: int


def _divisor_table(basis, structure, delta_fn, K):
    ks = admissible_half_lattice(basis, structure, K)
    nu = np.array([_dot(k, basis.omega) for k in ks])
    W = np.array([_weight_factor(delta_fn, structure, basis, k) for k in ks])
    return nu, W


def select_beta(a: float, b: float, delta: float, alpha: float, basis: FrequencyBasis,
                structure: SpatialStructure, delta_fn: ApproximationFunction, gamma1: float,
                K: int = 12, n_grid: int = 10_000) -> BetaChoice:
    """beta in [a + gamma1, b + gamma1] maximising the weighted divisor margin of alpha + delta beta."""
    if b < a:
        raise ValueError("empty interval")
    if delta == 0:
        rep = check_alpha(alpha, basis, structure, delta_fn, gamma1, K)
        return BetaChoice(a + gamma1, rep.gamma_observed, alpha, 1)
    betas = np.linspace(a + gamma1, b + gamma1, n_grid if b > a else 1)
    nu, W = _divisor_table(basis, structure, delta_fn, K)
    margins = np.empty(betas.size)
    for i0 in range(0, betas.size, 1000):
        al = alpha + delta * betas[i0:i0 + 1000]
        q = np.multiply.outer(al, nu) / TWO_PI
        j = np.round(q)
        j = np.where(j == 0, np.where(q >= 0, 1.0, -1.0), j)
        margins[i0:i0 + 1000] = np.min(np.abs(q - j) * W, axis=1)
    i = int(np.argmax(margins))
    if margins[i] < gamma1:
        raise NoAdmissibleBeta(float(betas[i]), float(margins[i]))
    return BetaChoice(float(betas[i]), float(margins[i]), float(alpha + delta * betas[i]), betas.size)


# ------------------------------------------------------------ twist


def twist_condition(L: APSeries2, y: float | None = None) -> float:
    """d/dy of the x-average of L at y (default: interval midpoint)."""
    c0 = np.asarray(L.mean(), complex)
    if not np.any(c0):
        return 0.0
    y = L.y0 if y is None else y
    d = C.chebder(c0.real) / L.s
    return float(C.chebval((y - L.y0) / L.s, d)) if d.size else 0.0


def _phase_distance(L: APSeries2, alpha: float) -> np.ndarray:
    ph = L.frequencies * alpha
    return np.abs(ph - TWO_PI * np.round(ph / TWO_PI))


@dataclass
class AveragingResult:
    U: APSeries2
    V: APSeries2
    L0: APSeries2
    phi1: APSeries2
    phi2: APSeries2
    alpha: float
    delta: float
    N: float
    tail_norm: float
    tail_bound: float
    remainder_norm: float
    reversibility_in: float
    reversibility_out: float
    x_residual: float
    y_residual: float = 0.0
    direct_remainder: float = 0.0

    def step(self, theta, rho):
        """Transformed map from the projected series."""
        d = self.delta
        return (theta + self.alpha + d * self.L0(theta, rho) + d * self.phi1(theta, rho),
                rho + d * self.phi2(theta, rho))

    def transformed(self) -> SmallTwistMap:
        zero = APSeries2.zero(self.L0.basis, self.L0.structure, self.L0.s, self.L0.y0)
        return SmallTwistMap(self.alpha, self.delta, self.L0, zero, (self.phi1,), (self.phi2,))


def averaging_transform(tmap: SmallTwistMap, mu: float, nu: float, N: float, tol_res: float = TOL_RES,
                        kmax: int = K_MAX, seed: int = 0, degree: int | None = None,
                        max_iter: int = 100) -> AveragingResult:
    """Remove the nonresonant oscillating part of (L, M) with mu [[k]] + nu |k| < N."""
    L, M, alpha, d = tmap.L, tmap.M, tmap.alpha, tmap.delta
    basis, structure = L.basis, L.structure
    degree = L.degree if degree is None else degree

    def low(S: APSeries2) -> np.ndarray:
        nz = np.any(S.modes != 0, axis=1)
        return nz & (mu * S.weights + nu * np.abs(S.modes).sum(axis=1) < N)

    mL, mM = low(L), low(M)
    for S, mask in ((L, mL), (M, mM)):
        hit = mask & (_phase_distance(S, alpha) <= tol_res)
        if np.any(hit):
            raise ResonantModeEncountered(f"mode {S.modes[hit][0].tolist()} is resonant; use resonant_split")
    H1, H2 = L.select(mL), M.select(mM)
    U = -solve_difference(H1, alpha, tol_div=0.0, check=False).l
    V = -solve_difference(H2, alpha, tol_div=0.0, check=False).l
    zero = np.all(L.modes == 0, axis=1)
    L0 = L.select(zero)
    tail = L - L0 - H1, M - H2
    tail_norm = float(tail[0].norm(m=0, r=0) + tail[1].norm(m=0, r=0))
    tail_bound = math.exp(-N) * float(L.norm(m=mu, r=nu) + M.norm(m=mu, r=nu))

    w = basis.omega
    s, y0 = L.s, L.y0

    def inverse(theta, rho):
        # x + d U(x, y) = theta, y + d V(x, y) = rho, on the shell
        dx = np.zeros(rho.shape)
        y = rho.copy()
        for _ in range(max_iter):
            tx = theta + np.multiply.outer(dx, w)
            ndx = -d * U.eval_shell(tx, y).real
            ny = rho - d * V.eval_shell(tx, y).real
            ch = max(np.max(np.abs(ndx - dx), initial=0), np.max(np.abs(ny - y), initial=0))
            dx, y = ndx, ny
            if ch <= 1e-15 * (1 + np.max(np.abs(rho))):
                break
        if np.any(np.abs(y - y0) > s * (1 + 1e-9)):
            raise DomainEscape("inverse averaging change left the y-interval")
        return theta + np.multiply.outer(dx, w), y, dx

    def fam(series, tx, y):
        return sum((d ** j * S.eval_shell(tx, y).real for j, S in enumerate(series)), np.zeros(y.shape))

    def remainders(theta, rho):
        tx, y, _ = inverse(theta, rho)
        Lv, Mv = L.eval_shell(tx, y).real, M.eval_shell(tx, y).real
        fv, gv = fam(tmap.f_family, tx, y), fam(tmap.g_family, tx, y)
        dx1 = alpha + d * Lv + d * fv
        t1 = tx + np.multiply.outer(dx1, w)
        y1 = y + d * Mv + d * gv
        p1 = Lv + fv + U.eval_shell(t1, y1).real - U.eval_shell(tx, y).real - L0.eval_shell(theta, rho).real
        p2 = Mv + gv + V.eval_shell(t1, y1).real - V.eval_shell(tx, y).real
        return p1, p2

    cache: dict = {}

    def comp(i):
        def fn(theta, rho):
            key = (theta.shape, float(theta.sum()), float(rho.sum()))
            if key not in cache:
                cache.clear()
                cache[key] = remainders(theta, rho)
            return cache[key][i]
        return fn

    phi1 = project_function2(comp(0), basis, structure, s, y0, degree, kmax, seed)
    phi2 = project_function2(comp(1), basis, structure, s, y0, degree, kmax, seed)

    X, Y = _grid(y0 - 0.9 * s, y0 + 0.9 * s)
    rev_in = reversibility_defect(tmap, X, Y)
    res = AveragingResult(U, V, L0, phi1, phi2, alpha, d, N, tail_norm, tail_bound,
                          float(phi1.norm(m=0, r=0) + phi2.norm(m=0, r=0)), rev_in, 0.0, 0.0)
    res.reversibility_out = reversibility_defect(res.step, X, Y)
    # direct composition U o map o U^{-1} against the projected series step
    th = X.ravel()
    rho = Y.ravel()
    _, y, dx = inverse(np.multiply.outer(th, w), rho)
    x = th + dx
    x1, y1 = tmap(x, y)
    theta1 = x1 + d * U(x1, y1)
    rho1 = y1 + d * V(x1, y1)
    st, sr = res.step(th, rho)
    res.x_residual = float(np.max(np.abs(theta1 - st)))
    res.y_residual = float(np.max(np.abs(rho1 - sr)))
    res.direct_remainder = float(np.max(np.abs(theta1 - th - alpha - d * L0(th, rho))))
    return res


# ------------------------------------------------------------ resonance


@dataclass
class ResonantSplit:
    L_tilde: APSeries2
    M_tilde: APSeries2
    L_hat: APSeries2
    M_hat: APSeries2
    resonant_sets: list
    checks: dict = field(default_factory=dict)


def resonant_split(L: APSeries2, M: APSeries2, alpha: float, tol_res: float = TOL_RES) -> ResonantSplit:
    """Modes with <k,w> alpha within tol_res of 2 pi Z (and k = 0) go to the hatted parts."""
    rL = _phase_distance(L, alpha) <= tol_res
    rM = _phase_distance(M, alpha) <= tol_res
    Lh, Mh = L.select(rL), M.select(rM)
    Lt, Mt = L.select(~rL), M.select(~rM)
    res_modes = [k for S, r in ((L, rL), (M, rM)) for k in S.modes[r] if np.any(k)]
    sets = []
    for A in L.structure.sets:
        for k in res_modes:
            supp = {L.basis.lo + i for i in np.nonzero(k)[0]}
            if supp <= A:
                sets.append(tuple(sorted(A)))
                break
    X, Y = _grid(L.y0 - L.s, L.y0 + L.s)
    checks = {
        "L_hat_periodic": float(np.max(np.abs(Lh(X + alpha, Y) - Lh(X, Y)))),
        "M_hat_periodic": float(np.max(np.abs(Mh(X + alpha, Y) - Mh(X, Y)))),
        "L_hat_even": float(np.max(np.abs(Lh(-X, Y) - Lh(X, Y)))),
        "M_hat_odd": float(np.max(np.abs(Mh(-X, Y) + Mh(X, Y)))),
        "L_tilde_parity": float(np.max(np.abs(Lt(-X - alpha, Y) - Lt(X, Y)))),
        "M_tilde_parity": float(np.max(np.abs(Mt(-X - alpha, Y) + Mt(X, Y)))),
    }
    return ResonantSplit(Lt, Mt, Lh, Mh, sorted(set(sets)), checks)


# ------------------------------------------------------------ chart


def symmetrize_I(I: FirstIntegral) -> FirstIntegral:
    """Even part of I in theta."""
    return FirstIntegral(
        value=lambda th, r: 0.5 * (I.value(th, r) + I.value(-np.asarray(th), r)),
        d_theta=lambda th, r: 0.5 * (I.d_theta(th, r) - I.d_theta(-np.asarray(th), r)),
        d_rho=lambda th, r: 0.5 * (I.d_rho(th, r) + I.d_rho(-np.asarray(th), r)),
        period=I.period,
    )


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


class AdiabaticChart:
    """Chart (theta, rho) -> (tau, I) built from a first integral of the resonant system."""

    def __init__(self, L_hat: APSeries2, M_hat: APSeries2, I: FirstIntegral, alpha: float,
                 annulus: tuple[float, float], inner: tuple[float, float],
                 panels: int = 8, quad_tol: float = 1e-11, n_check: tuple[int, int] = (257, 33)):
        self.Lh, self.Mh, self.I, self.alpha = L_hat, M_hat, I, alpha
        self.Lh_y = L_hat.derivative_y()
        self.a, self.b = annulus
        self.at, self.bt = inner
        self.panels = panels
        self.quad_tol = quad_tol
        self._check(*n_check)

    def _check(self, nth: int, nrho: int) -> None:
        lo, hi = self.Lh.y0 - self.Lh.s, self.Lh.y0 + self.Lh.s
        if self.a < lo - 1e-12 or self.b > hi + 1e-12:
            raise HypothesisViolated(f"annulus [{self.a}, {self.b}] exceeds the series interval [{lo}, {hi}]")
        if not self.a < self.at < self.bt < self.b:
            raise HypothesisViolated("need a < inner_a < inner_b < b")
        th = np.linspace(0.0, self.alpha, nth)
        T, R = np.meshgrid(th, np.linspace(self.a, self.b, nrho), indexing="ij")
        for name, vals in (("L_hat > 0", self.Lh(T, R)), ("dL_hat/drho > 0", self.Lh_y(T, R)),
                           ("dI/drho > 0", self.I.d_rho(T, R))):
            if np.min(vals) <= 0:
                i = np.unravel_index(np.argmin(vals), vals.shape)
                raise HypothesisViolated(f"{name} fails at theta={T[i]:.6g}, rho={R[i]:.6g}")
        tr = np.abs(self.transport_residual(T, R))
        if tr.max() > 1e-8:
            i = np.unravel_index(np.argmax(tr), tr.shape)
            raise HypothesisViolated(f"transport identity residual {tr.max():.2e} at theta={T[i]:.6g}, rho={R[i]:.6g}")
        levels = [self.I.value(th, np.full_like(th, r)) for r in (self.a, self.at, self.bt, self.b)]
        chain = [("max I(a) < min I(a~)", levels[0].max(), levels[1].min()),
                 ("max I(a~) < min I(b~)", levels[1].max(), levels[2].min()),
                 ("max I(b~) < min I(b)", levels[2].max(), levels[3].min())]
        for name, u, v in chain:
            if not u < v:
                raise HypothesisViolated(f"ordering {name} fails ({u:.6g} vs {v:.6g})")
        hs = np.linspace(levels[1].min(), levels[2].max(), 5)
        if np.any(self.Pi_prime(hs) >= 0):
            raise HypothesisViolated("period function is not decreasing")

    def transport_residual(self, theta, rho):
        return self.Lh(theta, rho) * self.I.d_theta(theta, rho) + self.Mh(theta, rho) * self.I.d_rho(theta, rho)

    def R(self, theta, h, tol: float = 1e-13):
        """rho with I(theta, rho) = h, by bisection on the annulus."""
        theta, h = np.broadcast_arrays(np.asarray(theta, float), np.asarray(h, float))
        lo = np.full(theta.shape, self.a)
        hi = np.full(theta.shape, self.b)
        if np.any(self.I.value(theta, lo) > h) or np.any(self.I.value(theta, hi) < h):
            raise HypothesisViolated("level set of I leaves the annulus")
        width = tol * max(1.0, abs(self.b))
        while np.max(hi - lo) > width:
            mid = 0.5 * (lo + hi)
            up = self.I.value(theta, mid) < h
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        return 0.5 * (lo + hi)

    def _quad(self, integrand, theta, h, panels: int) -> np.ndarray:
        """int_0^theta integrand(s, R(s, h)) ds by composite Gauss-Legendre, vectorized over theta."""
        theta = np.atleast_1d(np.asarray(theta, float))
        h = np.broadcast_to(np.asarray(h, float), theta.shape)
        edges = np.linspace(0.0, 1.0, panels + 1)
        t = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * _GL_NODES).ravel()
        wts = np.tile(0.5 * np.diff(edges)[0] * _GL_WEIGHTS, panels)
        s = np.multiply.outer(theta, t)
        hh = np.broadcast_to(h[:, None], s.shape)
        rr = self.R(s, hh)
        return (integrand(s, rr) @ wts) * theta

    def _integral(self, integrand, theta, h) -> np.ndarray:
        span = float(np.max(np.abs(theta), initial=0.0)) / self.alpha
        p = self.panels * max(1, int(math.ceil(span)))
        fine = self._quad(integrand, theta, h, 2 * p)
        coarse = self._quad(integrand, theta, h, p)
        err = np.max(np.abs(fine - coarse))
        if err > self.quad_tol * max(1.0, float(np.max(np.abs(fine)))):
            raise QuadratureFailure(f"chart quadrature error estimate {err:.2e}")
        return fine

    def _inv_L(self, s, r):
        return 1.0 / self.Lh(s, r)

    def _dk_integrand(self, s, r):
        return -self.Lh_y(s, r) / (self.Lh(s, r) ** 2 * self.I.d_rho(s, r))

    def Pi(self, h):
        h = np.atleast_1d(np.asarray(h, float))
        return self._integral(self._inv_L, np.full(h.shape, self.alpha), h)

    def Pi_prime(self, h):
        h = np.atleast_1d(np.asarray(h, float))
        return self._integral(self._dk_integrand, np.full(h.shape, self.alpha), h)

    def Gamma(self, h):
        return self.alpha / self.Pi(h)

    def K(self, theta, rho):
        theta, rho = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, float)), np.asarray(rho, float))
        return self._integral(self._inv_L, theta, self.I.value(theta, rho))

    def K_derivatives(self, theta, rho):
        theta, rho = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, float)), np.asarray(rho, float))
        dk = self._integral(self._dk_integrand, theta, self.I.value(theta, rho))
        return 1.0 / self.Lh(theta, rho) + self.I.d_theta(theta, rho) * dk, self.I.d_rho(theta, rho) * dk

    def chart_residual(self, theta, rho):
        theta, rho = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, float)), np.asarray(rho, float))
        Kt, Kr = self.K_derivatives(theta, rho)
        return self.Lh(theta, rho) * Kt + self.Mh(theta, rho) * Kr - 1.0

    def tau(self, theta, rho):
        theta, rho = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, float)), np.asarray(rho, float))
        return self.Gamma(self.I.value(theta, rho)) * self.K(theta, rho)

    def U2(self, theta, rho):
        return self.tau(theta, rho), self.I.value(theta, rho)

    def periodicity_residuals(self, theta, rho) -> dict:
        theta, rho = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, float)), np.asarray(rho, float))
        h = self.I.value(theta, rho)
        dK = self.K(theta + self.alpha, rho) - self.K(theta, rho) - self.Pi(h)
        dtau = self.tau(theta + self.alpha, rho) - self.tau(theta, rho) - self.alpha
        return {"K": float(np.max(np.abs(dK))), "tau": float(np.max(np.abs(dtau)))}


def build_adiabatic_chart(L_hat: APSeries2, M_hat: APSeries2, I: FirstIntegral, alpha: float,
                          annulus: tuple[float, float], inner: tuple[float, float], **kw) -> AdiabaticChart:
    return AdiabaticChart(L_hat, M_hat, I, alpha, annulus, inner, **kw)
