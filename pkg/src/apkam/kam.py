"""Reversible KAM step and iteration for x1 = x + alpha + y + f, y1 = y + g."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .apseries import (
    APSeries,
    APSeries2,
    CHEB_DEGREE,
    K_MAX,
    Collocation,
    FrequencyBasis,
    SpatialStructure,
    StripParams,
    cheb_nodes,
    cheb_values_to_coeffs,
    compose_inner,
    eval_stack,
    invert_time,
    project_function2,
    retained_modes,
    _merge_modes,
)
from .diophantine import ApproximationFunction, lambda_envelope
from .errors import DomainEscape, FixedPointDiverged, ScheduleExhausted, SmallnessViolated
from .homological import TOL_DIV, assemble_FG, solve_difference

FP_TOL = 1e-13
FP_MAX_ITER = 100


def eval_many(series: list[APSeries2], theta: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Real values of several series on a common y-interval at paired points."""
    if not series:
        return []
    ref = series[0]
    modes = ref.modes
    for s in series[1:]:
        if s.s != ref.s or s.y0 != ref.y0:
            return [s.eval_shell(theta, y).real for s in series]
        modes, _, _ = _merge_modes(modes, s.modes)
    deg = max(s.degree for s in series)
    stack = np.zeros((modes.shape[0], deg + 1, len(series)), complex)
    index = {tuple(r): i for i, r in enumerate(modes.tolist())}
    for j, s in enumerate(series):
        rows = [index[tuple(r)] for r in s.modes.tolist()]
        stack[rows, : s.degree + 1, j] = s.coeffs
    out = eval_stack(modes, stack, theta, (np.asarray(y, float) - ref.y0) / ref.s)
    return [out[:, j].real for j in range(len(series))]


@dataclass(frozen=True, eq=False)
class ReversibleTwistMap:
    """x1 = x + alpha + y + f(x, y), y1 = y + g(x, y)."""

    alpha: float
    f: APSeries2
    g: APSeries2
    strip: StripParams | None = None

    def __post_init__(self):
        self.f._compatible(self.g)

    @property
    def basis(self):
        return self.f.basis

    @property
    def structure(self):
        return self.f.structure

    @property
    def s(self) -> float:
        return self.f.s

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        fv, gv = self.increments(x, y)
        return x + self.alpha + y + fv, y + gv

    def increments(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        theta = np.multiply.outer(x.ravel(), self.basis.omega)
        fv, gv = eval_many([self.f, self.g], theta, y.ravel())
        return fv.reshape(x.shape), gv.reshape(x.shape)

    def epsilon(self, strip: StripParams | None = None) -> float:
        p = strip or self.strip
        return self.f.norm(p) + self.g.norm(p)

    def restrict(self, s: float, strip: StripParams | None = None) -> "ReversibleTwistMap":
        """Same map re-expanded on |y| <= s."""
        return ReversibleTwistMap(self.alpha, self.f.reinterpolate(s), self.g.reinterpolate(s), strip)

    def is_zero(self) -> bool:
        return self.f.is_zero() and self.g.is_zero()


def verify_reversibility(tmap: ReversibleTwistMap, nx: int = 33, ny: int = 9,
                         x_span: tuple[float, float] = (-50.0, 50.0), y_frac: float = 0.5) -> float:
    """Max over a grid of |f(-x1, y1) + g - f| and |g(-x1, y1) + g|."""
    x = np.linspace(*x_span, nx)
    y = np.linspace(-y_frac * tmap.s, y_frac * tmap.s, ny) + tmap.f.y0
    X, Y = np.meshgrid(x, y, indexing="ij")
    fv, gv = tmap.increments(X, Y)
    X1 = X + tmap.alpha + Y + fv
    Y1 = Y + gv
    fr, gr = tmap.increments(-X1, Y1)
    return float(max(np.max(np.abs(fr + gv - fv)), np.max(np.abs(gr + gv))))


@dataclass(frozen=True, eq=False)
class TransformPair:
    """x = xi + phi(xi, eta), y = eta + psi(xi, eta)."""

    phi: APSeries2
    psi: APSeries2
    derivative_sum: float | None = None
    derivative_bound: float | None = None

    def __call__(self, xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        theta = np.multiply.outer(xi.ravel(), self.phi.basis.omega)
        pv, qv = eval_many([self.phi, self.psi], theta, eta.ravel())
        return xi + pv.reshape(xi.shape), eta + qv.reshape(xi.shape)

    def parity_defect(self, n: int = 64, seed: int = 3) -> float:
        """Max of |phi(xi) + phi(-xi)| and |psi(xi) - psi(-xi)| on samples."""
        rng = np.random.default_rng(seed)
        xi = rng.uniform(-100, 100, n)
        eta = self.phi.y0 + 0.9 * self.phi.s * rng.uniform(-1, 1, n)
        a = self.phi(xi, eta) + self.phi(-xi, eta)
        b = self.psi(xi, eta) - self.psi(-xi, eta)
        return float(max(np.max(np.abs(a)), np.max(np.abs(b))))

    def is_zero(self) -> bool:
        return self.phi.is_zero() and self.psi.is_zero()


@dataclass(frozen=True)
class KamSchedule:
    """m_n = m0 (1 + 2^-n) / 2, r_n likewise, eps_n = eps0 / 2^n, s_n = eps_n^(2/3)."""

    m0: float
    r0: float
    s0: float
    eps0: float
    max_steps: int = 10
    stop_eps: float = 1e-13

    @classmethod
    def from_eps(cls, eps0: float, m0: float = 0.5, **kw) -> "KamSchedule":
        r0 = eps0 ** (2.0 / 3.0)
        return cls(m0=m0, r0=r0, s0=r0, eps0=eps0, **kw)

    def m(self, n: int) -> float:
        return 0.5 * self.m0 * (1 + 2.0**-n)

    def r(self, n: int) -> float:
        return 0.5 * self.r0 * (1 + 2.0**-n)

    def eps(self, n: int) -> float:
        return self.eps0 * 2.0**-n

    def s(self, n: int) -> float:
        return self.s0 if n == 0 else self.eps(n) ** (2.0 / 3.0)

    def strip(self, n: int) -> StripParams:
        return StripParams(r=self.r(n), s=self.s(n), m=self.m(n))


def theta_factor(strip_in: StripParams, strip_out: StripParams,
                 delta: ApproximationFunction | None = None) -> float:
    """Lambda^2(dr/10) Lambda^2(dm/10) (1/dr + 1/ds)."""
    delta = delta or ApproximationFunction()
    dr = strip_in.r - strip_out.r
    dm = strip_in.m - strip_out.m
    ds = strip_in.s - strip_out.s
    if not (dr > 0 and dm > 0 and ds > 0):
        raise ValueError("strips must be strictly nested")
    lr = lambda_envelope(delta, dr / 10)
    lm = lambda_envelope(delta, dm / 10)
    return lr**2 * lm**2 * (1 / dr + 1 / ds)


def theta_value(c6: float, eps: float, strip_in: StripParams, strip_out: StripParams,
                delta: ApproximationFunction | None = None) -> float:
    return c6 * eps * theta_factor(strip_in, strip_out, delta)


@dataclass
class KamStepResult:
    transform: TransformPair
    new_map: ReversibleTwistMap
    theta: float | None
    eps_in: float
    eps_out: float
    divisor_floor: float
    reversibility_in: float
    reversibility_out: float
    fp_iterations: int
    implicit_residual: float
    transform_norm: float
    derivative_norm: float
    estimates: dict = field(default_factory=dict)
    elapsed: float = 0.0


def _grid(basis, modes, s_out: float, degree: int, seed: int):
    col = Collocation.get(basis, modes, seed=seed)
    n = degree + 1
    P = col.theta.shape[0]
    eta = s_out * cheb_nodes(n)
    return col, np.repeat(col.theta, n, axis=0), np.tile(eta, P), P, n


def _project(col: Collocation, vals: np.ndarray, P: int, n: int) -> np.ndarray:
    cheb = vals.reshape(P, n) @ cheb_values_to_coeffs(n).T
    return col.project(cheb)


def _implicit_rhs(tmap, phi, psi, th, eta, w, fp, gp):
    """Right-hand sides of the implicit relations for given f+, g+ values."""
    pv, qv = eval_many([phi, psi], th, eta)
    X = th + np.multiply.outer(pv, w)
    Y = eta + qv
    fv, gv = eval_many([tmap.f, tmap.g], X, Y)
    sh = th + np.multiply.outer(tmap.alpha + eta + fp, w)
    ps, qs = eval_many([phi, psi], sh, eta + gp)
    return fv + pv + qv - ps, gv + qv - qs


def kam_step(tmap: ReversibleTwistMap, strip_out: StripParams, c6: float | None = None,
             delta: ApproximationFunction | None = None, kmax: int = K_MAX,
             tol_div: float = TOL_DIV, degree: int | None = None, seed: int = 0,
             gate: bool = True) -> KamStepResult:
    """One change of variables; returns the transform and the conjugated map."""
    t0 = time.perf_counter()
    strip_in = tmap.strip
    if strip_in is None:
        raise ValueError("map needs strip parameters")
    eps = tmap.epsilon()
    theta = None
    if c6 is not None:
        theta = theta_value(c6, eps, strip_in, strip_out, delta)
        if gate and theta >= 0.25:
            raise SmallnessViolated(f"theta = {theta:.3e} >= 1/4")
    rev_in = verify_reversibility(tmap)
    if tmap.is_zero():
        zero = APSeries2.zero(tmap.basis, tmap.structure, tmap.s, degree=tmap.f.degree)
        return KamStepResult(TransformPair(zero, zero), tmap, theta, eps, eps, math.inf, rev_in, rev_in,
                             0, 0.0, 0.0, 0.0, {}, time.perf_counter() - t0)

    rhs = assemble_FG(tmap.f, tmap.g, tmap.alpha, tol_div)
    solF = solve_difference(rhs.F, tmap.alpha, tol_div, check=False)
    phi, psi = solF.l, rhs.psi
    floor = min(rhs.divisor_floor, solF.divisor_floor)

    degree = tmap.f.degree if degree is None else degree
    w = tmap.basis.omega
    modes = retained_modes(tmap.basis, tmap.structure, kmax)
    col, th, eta, P, n = _grid(tmap.basis, modes, strip_out.s, degree, seed)

    pv, qv = eval_many([phi, psi], th, eta)
    if np.max(np.abs(eta + qv)) > tmap.s:
        raise DomainEscape("eta + psi leaves the current y-domain")
    fv, gv = eval_many([tmap.f, tmap.g], th + np.multiply.outer(pv, w), eta + qv)
    base_f = fv + pv + qv
    base_g = gv + qv
    fp = np.zeros_like(base_f)
    gp = np.zeros_like(base_g)
    scale_in = max(eps, 1e-300)
    it = 0
    for it in range(1, FP_MAX_ITER + 1):
        sh = th + np.multiply.outer(tmap.alpha + eta + fp, w)
        if np.max(np.abs(eta + gp)) > tmap.s:
            raise DomainEscape("eta + g+ leaves the current y-domain")
        ps, qs = eval_many([phi, psi], sh, eta + gp)
        nf = base_f - ps
        ng = base_g - qs
        change = max(np.max(np.abs(nf - fp)), np.max(np.abs(ng - gp)))
        fp, gp = nf, ng
        size = max(np.max(np.abs(fp)), np.max(np.abs(gp)))
        if change <= max(FP_TOL * size, 64 * np.finfo(float).eps * scale_in):
            break
    else:
        raise FixedPointDiverged(f"implicit relations not converged after {FP_MAX_ITER} iterations")

    fplus = APSeries2(tmap.basis, tmap.structure, modes, _project(col, fp, P, n), s=strip_out.s)
    gplus = APSeries2(tmap.basis, tmap.structure, modes, _project(col, gp, P, n), s=strip_out.s)
    new_map = ReversibleTwistMap(tmap.alpha, fplus, gplus, strip_out)

    # cross-check the projected pair against the implicit relations at fresh points
    col2, th2, eta2, _, _ = _grid(tmap.basis, modes, strip_out.s, degree, seed + 104729)
    fp2, gp2 = eval_many([fplus, gplus], th2, eta2)
    rf, rg = _implicit_rhs(tmap, phi, psi, th2, eta2, w, fp2, gp2)
    implicit_residual = float(max(np.max(np.abs(rf - fp2)), np.max(np.abs(rg - gp2))))

    eps_out = new_map.epsilon()
    rev_out = verify_reversibility(new_map)
    phi_r, psi_r = phi.reinterpolate(strip_out.s), psi.reinterpolate(strip_out.s)
    tnorm = phi_r.norm(strip_out) + psi_r.norm(strip_out)
    dnorm = max(phi_r.derivative_x().norm(strip_out) + phi_r.derivative_y().norm(strip_out),
                psi_r.derivative_x().norm(strip_out) + psi_r.derivative_y().norm(strip_out))
    est = {}
    if theta is not None:
        inv = 1.0 / (1.0 / (strip_in.r - strip_out.r) + 1.0 / (strip_in.s - strip_out.s))
        est = {
            "transform_bound": theta * inv,
            "transform_ok": tnorm <= theta * inv,
            "derivative_bound": theta,
            "derivative_ok": dnorm <= theta,
            "perturbation_bound": theta * (strip_out.s + eps),
            "perturbation_ok": eps_out <= theta * (strip_out.s + eps),
        }
    return KamStepResult(
        transform=TransformPair(phi, psi), new_map=new_map, theta=theta, eps_in=eps, eps_out=eps_out,
        divisor_floor=floor, reversibility_in=rev_in, reversibility_out=rev_out, fp_iterations=it,
        implicit_residual=implicit_residual, transform_norm=tnorm, derivative_norm=dnorm,
        estimates=est, elapsed=time.perf_counter() - t0)


def compose_transforms(pairs: list[TransformPair], strips: list[StripParams] | None = None,
                       kmax: int = K_MAX, seed: int = 0) -> TransformPair:
    """p_n = phi_n + p_{n-1}(xi + phi_n, eta + psi_n), q_n likewise."""
    if not pairs:
        raise ValueError("need at least one transform")
    acc = pairs[0]
    dsum = _derivative_sum(acc, strips[1] if strips else None)
    for n, pr in enumerate(pairs[1:], start=1):
        if pr.is_zero():
            continue
        if acc.is_zero():
            acc = pr
            continue
        basis, structure = pr.phi.basis, pr.phi.structure
        s_n = pr.phi.s
        modes = retained_modes(basis, structure, kmax)
        col, th, eta, P, n_c = _grid(basis, modes, s_n, pr.phi.degree, seed)
        pv, qv = eval_many([pr.phi, pr.psi], th, eta)
        Y = eta + qv
        if np.max(np.abs(Y - acc.phi.y0)) > acc.phi.s:
            raise DomainEscape("composition leaves the previous y-domain")
        a, b = eval_many([acc.phi, acc.psi], th + np.multiply.outer(pv, basis.omega), Y)
        p = APSeries2(basis, structure, modes, _project(col, pv + a, P, n_c), s=s_n)
        q = APSeries2(basis, structure, modes, _project(col, qv + b, P, n_c), s=s_n)
        acc = TransformPair(p, q)
        dsum = _derivative_sum(acc, strips[n + 1] if strips and len(strips) > n + 1 else None)
    nsteps = len(pairs) - 1
    bound = 1.5 ** (nsteps + 1) - 1.0
    return TransformPair(acc.phi, acc.psi, dsum, bound)


def _derivative_sum(pair: TransformPair, strip: StripParams | None) -> float | None:
    if strip is None or pair.is_zero():
        return None if strip is None else 0.0
    px, qx = pair.phi.derivative_x(), pair.psi.derivative_x()
    py, qy = pair.phi.derivative_y(), pair.psi.derivative_y()
    p1 = max(px.norm(strip), qx.norm(strip))
    p2 = max(py.norm(strip), qy.norm(strip))
    return p1 + p2


@dataclass
class InvariantCurve:
    """Curve xi -> (xi + p(xi), q(xi)) on which the map acts as xi -> xi + alpha."""

    p: APSeries
    q: APSeries
    phi_curve: APSeries
    alpha: float
    conjugacy_defect: float
    rotation_defect: float
    graph_defect: float
    strip_out: tuple[float, float]
    certified: bool

    def point(self, xi):
        xi = np.asarray(xi, float)
        return xi + self.p(xi), self.q(xi)


def curve_defects(tmap: ReversibleTwistMap, p: APSeries, q: APSeries, phi_curve: APSeries,
                  n: int = 512, seed: int = 17, span: float = 1e3) -> tuple[float, float, float]:
    """(conjugacy, rotation, graph) defects of the curve on n samples."""
    rng = np.random.default_rng(seed)
    xi = np.sort(rng.uniform(-span, span, n))
    x, y = xi + p(xi), q(xi)
    x1, y1 = tmap(x, y)
    xa, ya = xi + tmap.alpha + p(xi + tmap.alpha), q(xi + tmap.alpha)
    conj = float(max(np.max(np.abs(x1 - xa)), np.max(np.abs(y1 - ya))))
    # parameter of the image point: solve x1 = xi' + p(xi')
    xp = xi + tmap.alpha
    for _ in range(100):
        new = x1 - p(xp)
        if np.max(np.abs(new - xp)) < 1e-15 * (1 + np.max(np.abs(xp))):
            xp = new
            break
        xp = new
    rot = float(np.max(np.abs(xp - xi - tmap.alpha)))
    graph = float(np.max(np.abs(y1 - phi_curve(x1))))
    return conj, rot, graph


def extract_curve(tmap: ReversibleTwistMap, total: TransformPair | None, strip_out: tuple[float, float],
                  certified: bool, kmax: int = K_MAX) -> InvariantCurve:
    basis, structure = tmap.basis, tmap.structure
    if total is None or total.is_zero():
        z = APSeries.zero(basis, structure)
        p = q = phi_curve = z
    else:
        p = total.phi.at_y(0.0)
        q = total.psi.at_y(0.0)
        if p.is_zero():
            phi_curve = q
        else:
            tinv = invert_time(p, 1.0, tol=1e-9, kmax=kmax)
            tinv = APSeries(basis, structure, tinv.modes, tinv.coeffs, tinv.defect)
            phi_curve = compose_inner(q, tinv, tol=1e-9, kmax=kmax)
    conj, rot, graph = curve_defects(tmap, p, q, phi_curve)
    return InvariantCurve(p, q, phi_curve, tmap.alpha, conj, rot, graph, strip_out, certified)


@dataclass
class StepRecord:
    n: int
    eps_in: float
    eps_out: float
    eps_schedule: float
    theta: float | None
    divisor_floor: float
    reversibility: float
    fp_iterations: int
    implicit_residual: float
    transform_norm: float
    derivative_sum: float | None
    derivative_bound: float
    perturbation_ok: bool | None
    accepted: bool
    s_in: float
    s_out: float
    elapsed: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def initial_map(tmap: ReversibleTwistMap, schedule: KamSchedule) -> ReversibleTwistMap:
    return tmap.restrict(schedule.s0, schedule.strip(0))


def kam_iterate(tmap: ReversibleTwistMap, schedule: KamSchedule, c6: float | None = None,
                delta: ApproximationFunction | None = None, kmax: int = K_MAX, tol_div: float = TOL_DIV,
                raise_on_exhaust: bool = False, seed: int = 0,
                progress: Callable[[StepRecord], None] | None = None) -> tuple[InvariantCurve, list[StepRecord]]:
    """Iterate kam_step along the schedule and extract the invariant curve at eta = 0."""
    cur = initial_map(tmap, schedule)
    eps = cur.epsilon()
    trace: list[StepRecord] = []
    transforms: list[TransformPair] = []
    strips = [schedule.strip(0)]
    certified = eps < schedule.stop_eps
    for n in range(schedule.max_steps):
        if eps < schedule.stop_eps:
            certified = True
            break
        strip_out = schedule.strip(n + 1)
        step = kam_step(cur, strip_out, c6=c6, delta=delta, kmax=kmax, tol_div=tol_div, seed=seed)
        accepted = step.eps_out <= 0.5 * eps
        transforms.append(step.transform)
        strips.append(strip_out)
        comp = compose_transforms(transforms, strips, kmax=kmax, seed=seed) if len(transforms) > 1 else \
            TransformPair(step.transform.phi, step.transform.psi,
                          _derivative_sum(step.transform, strip_out), 0.5)
        rec = StepRecord(
            n=n, eps_in=eps, eps_out=step.eps_out, eps_schedule=schedule.eps(n), theta=step.theta,
            divisor_floor=step.divisor_floor, reversibility=step.reversibility_out,
            fp_iterations=step.fp_iterations, implicit_residual=step.implicit_residual,
            transform_norm=step.transform_norm, derivative_sum=comp.derivative_sum,
            derivative_bound=comp.derivative_bound if comp.derivative_bound is not None else 0.5,
            perturbation_ok=step.estimates.get("perturbation_ok"), accepted=accepted,
            s_in=cur.s, s_out=strip_out.s, elapsed=step.elapsed)
        trace.append(rec)
        if progress:
            progress(rec)
        if not accepted:
            transforms.pop()
            strips.pop()
            break
        cur = step.new_map
        eps = step.eps_out
    else:
        certified = eps < schedule.stop_eps
    if eps < schedule.stop_eps:
        certified = True
    total = compose_transforms(transforms, strips, kmax=kmax, seed=seed) if transforms else None
    curve = extract_curve(tmap, total, (schedule.m(len(transforms)), schedule.r(len(transforms))),
                          certified, kmax=kmax)
    if not certified and raise_on_exhaust:
        raise ScheduleExhausted(curve, trace)
    return curve, trace


def calibrate_c6(make_map: Callable[[float], ReversibleTwistMap], eps_values, m0: float = 0.5,
                 delta: ApproximationFunction | None = None, kmax: int = K_MAX, margin: float = 2.0) -> float:
    """margin x max over the family of eps_out / (eps * factor * (s+ + eps))."""
    ratios = []
    for e in eps_values:
        base = make_map(e)
        sched = schedule_for(base, m0)
        cur = initial_map(base, sched)
        eps = cur.epsilon()
        out = sched.strip(1)
        step = kam_step(cur, out, c6=None, kmax=kmax)
        fac = theta_factor(sched.strip(0), out, delta)
        ratios.append(step.eps_out / (eps * fac * (out.s + eps)))
    return margin * max(ratios)


def schedule_for(tmap: ReversibleTwistMap, m0: float = 0.5, max_steps: int = 10,
                 stop_eps: float = 1e-13, iterations: int = 6) -> KamSchedule:
    """Schedule with r0 = s0 = eps0^(2/3), eps0 the measured size on that strip."""
    eps0 = tmap.epsilon(StripParams(r=1e-3, s=tmap.s, m=m0))
    for _ in range(iterations):
        sch = KamSchedule.from_eps(max(eps0, 1e-300), m0, max_steps=max_steps, stop_eps=stop_eps)
        if sch.s0 > tmap.s:
            raise DomainEscape(f"schedule radius {sch.s0:.3e} exceeds the map's y-domain {tmap.s:.3e}")
        eps0 = tmap.restrict(sch.s0).epsilon(sch.strip(0))
    return KamSchedule.from_eps(max(eps0, 1e-300), m0, max_steps=max_steps, stop_eps=stop_eps)


def shear_map(a: APSeries, alpha: float, s: float, degree: int = CHEB_DEGREE, kmax: int = K_MAX,
              seed: int = 0) -> ReversibleTwistMap:
    """Half kick, drift, half kick with an odd kick a(x); reversible by construction."""
    w = a.basis.omega

    def f_shell(theta, y):
        return 0.5 * a.eval_shell(theta).real

    def g_shell(theta, y):
        ah = 0.5 * a.eval_shell(theta).real
        return ah + 0.5 * a.eval_shell(theta + np.multiply.outer(alpha + y + ah, w)).real

    f = project_function2(f_shell, a.basis, a.structure, s, degree=degree, kmax=kmax, seed=seed)
    g = project_function2(g_shell, a.basis, a.structure, s, degree=degree, kmax=kmax, seed=seed)
    return ReversibleTwistMap(alpha, f, g)


GOLDEN_OMEGA = (1.0, (math.sqrt(5.0) - 1.0) / 2.0)
GOLDEN_ALPHA = 2.0 * math.pi * (math.sqrt(2.0) - 1.0)


def tuned_shear_map(a: APSeries, alpha: float, s: float, eps0: float, m0: float = 0.5, rounds: int = 3,
                    seed: int = 0, **sched_kw) -> tuple[ReversibleTwistMap, KamSchedule, float]:
    """shear_map(c a) with c chosen so the self-consistent schedule measures eps0."""
    if a.is_zero():
        tmap = shear_map(a, alpha, s, seed=seed)
        return tmap, schedule_for(tmap, m0, **sched_kw), 1.0
    c = eps0 / a.norm(m=0.0, r=0.0)
    for _ in range(rounds):
        tmap = shear_map(a.scale(c), alpha, s, seed=seed)
        sched = schedule_for(tmap, m0, **sched_kw)
        if abs(sched.eps0 / eps0 - 1) < 1e-3:
            break
        c *= eps0 / sched.eps0
    return tmap, sched, c


def golden_kick() -> APSeries:
    """sin x + sin w2 x on the two-frequency basis."""
    basis = FrequencyBasis(0, GOLDEN_OMEGA)
    structure = SpatialStructure((frozenset({0}), frozenset({1}), frozenset({0, 1})))
    return APSeries.trig(basis, structure, (1, 0), sin=1.0) + APSeries.trig(basis, structure, (0, 1), sin=1.0)


def golden_instance(eps0: float = 1e-4, m0: float = 0.5, s: float = 0.05, seed: int = 0,
                    **sched_kw) -> tuple[ReversibleTwistMap, KamSchedule, float]:
    """Golden two-frequency instance with measured eps0."""
    return tuned_shear_map(golden_kick(), GOLDEN_ALPHA, s, eps0, m0, seed=seed, **sched_kw)
