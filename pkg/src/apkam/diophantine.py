"""Approximation functions, the Lambda envelope and nonresonance scans."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .apseries import FrequencyBasis, SpatialStructure, _l1_ball, k_to_dict
from .errors import DomainError, ResonanceFound


@dataclass(frozen=True)
class ApproximationFunction:
    """Delta(t) = (1 + t)^tau, or exp(a t / log(t + e)^sigma)."""

    family: str = "polynomial"
    tau: float = 3.0
    a: float = 1.0
    sigma: float = 2.0

    def __post_init__(self):
        if self.family not in ("polynomial", "subexponential"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "polynomial" and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.family == "subexponential" and not (self.a > 0 and self.sigma > 1):
            raise ValueError("need a > 0 and sigma > 1")

    def raw(self, t):
        """Family formula on t >= 0 (no domain check)."""
        t = np.asarray(t, dtype=float)
        if self.family == "polynomial":
            return (1.0 + t) ** self.tau
        return np.exp(self.a * t / np.log(t + math.e) ** self.sigma)

    def log_raw(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "polynomial":
            return self.tau * np.log1p(t)
        return self.a * t / np.log(t + math.e) ** self.sigma

    def __call__(self, t):
        return delta_eval(self, t)

    def validate(self) -> None:
        """Spot-check the defining conditions; raises ValueError on failure."""
        if delta_eval(self, 1.0) < 1.0:
            raise ValueError("Delta(1) < 1")
        ts = np.logspace(0, 6, 100)
        vals = self.log_raw(ts)
        if np.any(np.diff(vals) < -1e-12 * np.abs(vals[1:])):
            raise ValueError("Delta is not nondecreasing")
        ratio = vals / ts
        if np.any(np.diff(ratio) > 1e-12 * np.abs(ratio[1:])):
            raise ValueError("log Delta(t) / t is not nonincreasing")
        if not math.isfinite(self.log_integral()):
            raise ValueError("integral of log Delta(t) / t^2 diverges")

    def log_integral(self) -> float:
        """int_1^inf log Delta(t) / t^2 dt."""
        if self.family == "polynomial":
            # int log(1+t)/t^2 = 2 log 2 on [1, inf)
            return self.tau * 2.0 * math.log(2.0)
        # t = e^u; beyond U the integrand is a u^-sigma to within e^{1-U}
        U = 60.0
        val, err = integrate.quad(lambda u: float(self.log_raw(math.exp(u))) * math.exp(-u), 0.0, U, limit=400)
        if not math.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
            return math.inf
        return float(val) + self.a * U ** (1.0 - self.sigma) / (self.sigma - 1.0)


def delta_eval(delta: ApproximationFunction, t):
    """Delta(t) for t >= 1."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 1.0):
        raise DomainError("approximation function is defined for t >= 1")
    out = delta.raw(arr)
    return float(out) if np.ndim(out) == 0 else out


def lambda_envelope(delta: ApproximationFunction, rho: float) -> float:
    """sup_{t >= 0} Delta(t) exp(-rho t), with the family formula used on [0, 1) too."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if delta.family == "polynomial":
        tau = delta.tau
        tstar = tau / rho - 1.0
        if tstar <= 0:
            return 1.0
        return math.exp(tau * math.log(tau / rho) - rho * tstar)
    # maximise log Delta(t) - rho t over u = log(1 + t)
    h = lambda u: -(float(delta.log_raw(math.expm1(u))) - rho * math.expm1(u))
    us = np.linspace(0.0, 60.0, 6001)
    vals = np.array([-h(u) for u in us])
    vals[~np.isfinite(vals)] = -np.inf
    i = int(np.argmax(vals))
    if i == 0:
        return 1.0
    lo, hi = us[max(i - 1, 0)], us[min(i + 1, us.size - 1)]
    res = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    best = max(-res.fun, vals[i], 0.0)
    return math.exp(best)


@dataclass
class NonresonanceReport:
    """Outcome of a divisor scan; gamma_observed is the minimum weighted divisor."""

    gamma_observed: float
    argmin_k: dict[int, int]
    argmin_j: int | None
    K: int
    J: int
    threshold: float
    success: bool
    n_checked: int
    elapsed: float
    kind: str = "omega"

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "success": self.success,
            "gamma_observed": self.gamma_observed,
            "threshold": self.threshold,
            "witness_k": {str(i): v for i, v in self.argmin_k.items()},
            "witness_j": self.argmin_j,
            "K": self.K,
            "J": self.J,
            "n_checked": self.n_checked,
            "elapsed_s": self.elapsed,
        }


def admissible_half_lattice(basis: FrequencyBasis, structure: SpatialStructure, K: int) -> list[tuple[int, ...]]:
    """Covered nonzero k with |k| <= K and first nonzero entry positive, ordered by (|k|, lex)."""
    found: set[tuple[int, ...]] = set()
    for A in structure.sets:
        pos = [i - basis.lo for i in sorted(A) if basis.lo <= i <= basis.hi]
        for vals in _l1_ball(len(pos), K):
            if not any(vals):
                continue
            k = [0] * basis.d
            for p, v in zip(pos, vals):
                k[p] = v
            for v in k:
                if v:
                    if v > 0:
                        found.add(tuple(k))
                    break
    return sorted(found, key=lambda k: (sum(abs(v) for v in k), k))


def _dot(k, omega) -> float:
    return math.fsum(ki * float(w) for ki, w in zip(k, omega) if ki)


def _weight_factor(delta, structure, basis, k) -> float:
    kk = k_to_dict(basis, k)
    return float(delta.raw(structure.support_weight(kk))) * float(delta.raw(sum(abs(v) for v in k)))


def check_omega(basis: FrequencyBasis, structure: SpatialStructure, delta: ApproximationFunction,
                gamma: float, K: int = 12) -> NonresonanceReport:
    """Scan |<k,w>| Delta([[k]]) Delta(|k|) over admissible k; raise on failure."""
    if K < 1:
        raise ValueError("K must be at least 1")
    t0 = time.perf_counter()
    best, best_k, n = math.inf, None, 0
    for k in admissible_half_lattice(basis, structure, K):
        val = abs(_dot(k, basis.omega)) * _weight_factor(delta, structure, basis, k)
        n += 1
        if val < best:
            best, best_k = val, k
    rep = NonresonanceReport(
        gamma_observed=float(best), argmin_k=k_to_dict(basis, best_k) if best_k else {}, argmin_j=None,
        K=K, J=0, threshold=gamma, success=bool(best >= gamma and best > 0), n_checked=n,
        elapsed=time.perf_counter() - t0, kind="omega")
    if not rep.success:
        raise ResonanceFound(rep)
    return rep


def default_J(basis: FrequencyBasis, alpha: float, K: int) -> int:
    return int(math.ceil(float(np.max(np.abs(basis.omega))) * K * abs(alpha) / (2 * math.pi))) + 1


def alpha_divisors(basis: FrequencyBasis, structure: SpatialStructure, delta: ApproximationFunction,
                   alpha: float, K: int, J: int | None = None):
    """Yield (k, j, weighted divisor) for the nearest nonzero j to each <k,w> alpha / 2 pi."""
    J = default_J(basis, alpha, K) if J is None else J
    for k in admissible_half_lattice(basis, structure, K):
        q = _dot(k, basis.omega) * alpha / (2 * math.pi)
        j = int(round(q))
        if j == 0:
            j = 1 if q >= 0 else -1
        j = max(-J, min(J, j))
        yield k, j, abs(q - j) * _weight_factor(delta, structure, basis, k)


def check_alpha(alpha: float, basis: FrequencyBasis, structure: SpatialStructure,
                delta: ApproximationFunction, gamma0: float, K: int = 12,
                J: int | None = None) -> NonresonanceReport:
    """Scan |<k,w> alpha / 2 pi - j| Delta([[k]]) Delta(|k|) over k != 0, j != 0."""
    if K < 1 or (J is not None and J < 1):
        raise ValueError("K and J must be at least 1")
    t0 = time.perf_counter()
    Jv = default_J(basis, alpha, K) if J is None else J
    best, best_k, best_j, n = math.inf, None, None, 0
    for k, j, val in alpha_divisors(basis, structure, delta, alpha, K, Jv):
        n += 1
        if val < best:
            best, best_k, best_j = val, k, j
    rep = NonresonanceReport(
        gamma_observed=float(best), argmin_k=k_to_dict(basis, best_k) if best_k else {}, argmin_j=best_j,
        K=K, J=Jv, threshold=gamma0, success=bool(best >= gamma0 and best > 0), n_checked=n,
        elapsed=time.perf_counter() - t0, kind="alpha")
    if not rep.success:
        raise ResonanceFound(rep)
    return rep
