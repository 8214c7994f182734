"""The difference equation l(x + alpha) - l(x) = h(x) in coefficient space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .apseries import APSeries, APSeries2, k_to_dict
from .errors import DivisorUnderflow, NonzeroMean, ParityViolation

TOL_DIV = 1e-10
TOL_MEAN = 1e-12


@dataclass(frozen=True)
class DifferenceSolution:
    l: APSeries | APSeries2
    divisor_floor: float
    dropped_mean: complex | np.ndarray
    residual: float


def small_divisors(h: APSeries | APSeries2, alpha: float) -> np.ndarray:
    """e^{i<k,w>alpha} - 1 per stored mode."""
    return np.expm1(1j * h.frequencies * alpha)


def _residual(h, l, alpha: float, n: int = 256, seed: int = 11) -> float:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1e3, 1e3, n)
    if isinstance(h, APSeries2):
        y = h.y0 + h.s * rng.uniform(-1, 1, n)
        return float(np.max(np.abs(l(x + alpha, y) - l(x, y) - h(x, y))))
    return float(np.max(np.abs(l(x + alpha) - l(x) - h(x))))


def solve_difference(h: APSeries | APSeries2, alpha: float, tol_div: float = TOL_DIV,
                     tol_mean: float | None = None, check: bool = True) -> DifferenceSolution:
    """l_k = h_k / (e^{i<k,w>alpha} - 1) for k != 0 and l_0 = 0."""
    nh = h.norm(m=0.0, r=0.0)
    tol_mean = TOL_MEAN * nh if tol_mean is None else tol_mean
    mean = h.mean()
    if np.max(np.abs(np.atleast_1d(mean))) > tol_mean:
        raise NonzeroMean(f"mean {np.max(np.abs(np.atleast_1d(mean))):.3e} exceeds {tol_mean:.3e}")
    nonzero = np.any(h.modes != 0, axis=1)
    hz = h.select(nonzero)
    div = small_divisors(hz, alpha)
    floor = float(np.min(np.abs(div))) if div.size else float("inf")
    if div.size and floor < tol_div:
        i = int(np.argmin(np.abs(div)))
        raise DivisorUnderflow(k_to_dict(h.basis, hz.modes[i]), floor)
    coeffs = hz.coeffs / div.reshape((-1,) + (1,) * (hz.coeffs.ndim - 1))
    l = hz._like(hz.modes, coeffs, hz.defect)
    res = _residual(h, l, alpha) if check else float("nan")
    return DifferenceSolution(l=l, divisor_floor=floor, dropped_mean=mean, residual=res)


def _sample(f, n: int = 256, seed: int = 5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-50, 50, n)
    if isinstance(f, APSeries2):
        y = f.y0 + f.s * rng.uniform(-1, 1, n)
        return (lambda g, xx: g(xx, y)), x
    return (lambda g, xx: g(xx)), x


def parity_of_solution(h, alpha: float, l, tol_h: float = 1e-12, tol_l: float = 1e-10) -> str:
    """'odd' if h is symmetric about -alpha/2, 'even' if antisymmetric, else 'none'."""
    ev, x = _sample(h)
    hv, hr = ev(h, x), ev(h, -x - alpha)
    scale = 1.0 + float(np.max(np.abs(hv)))
    if float(np.max(np.abs(hv))) == 0.0:
        return "none"
    lv, lr = ev(l, x), ev(l, -x)
    lscale = 1.0 + float(np.max(np.abs(lv)))
    if np.max(np.abs(hv - hr)) <= tol_h * scale:
        if np.max(np.abs(lv + lr)) > tol_l * lscale:
            raise ParityViolation("symmetric right-hand side gave a non-odd solution")
        return "odd"
    if np.max(np.abs(hv + hr)) <= tol_h * scale:
        if np.max(np.abs(lv - lr)) > tol_l * lscale:
            raise ParityViolation("antisymmetric right-hand side gave a non-even solution")
        return "even"
    return "none"


@dataclass(frozen=True)
class RightHandSides:
    F: APSeries2
    G: APSeries2
    psi0: APSeries2
    psi: APSeries2
    divisor_floor: float


def assemble_FG(f: APSeries2, g: APSeries2, alpha: float, tol_div: float = TOL_DIV) -> RightHandSides:
    """G from the odd part of g, psi = psi0 + solve(G) with psi0 = -f_0, F from psi + f."""
    _, G = g.parity_decompose(alpha)
    solG = solve_difference(G, alpha, tol_div, check=False)
    zero = np.zeros((1, f.basis.d), dtype=int)
    f0 = np.atleast_2d(f.mean())
    psi0 = f._like(zero, -f0)
    psi = solG.l + psi0
    F, _ = (psi + f).parity_decompose(alpha)
    return RightHandSides(F=F, G=G, psi0=psi0, psi=psi, divisor_floor=solG.divisor_floor)
