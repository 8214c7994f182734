"""Scenario orchestration: run a validated config, write tables and figures, return a trace."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .apseries import APSeries, FrequencyBasis, SpatialStructure, dumps
from .config import (
    DiophCfg,
    HomologicalCfg,
    KamCfg,
    ModeCfg,
    OscillatorCfg,
    OscillatorRunCfg,
    SmallTwistCfg,
    config_hash,
)
from .errors import ApKamError, SchemaMismatch

VERDICTS = ("certified", "best-effort", "failed")
TABLE_FORMAT = 1


# ------------------------------------------------------------------ trace


@dataclass
class RunTrace:
    scenario: str
    config_sha256: str
    seed: int
    steps: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    verdict: str = "failed"
    notes: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    version: str = __version__

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"bad verdict {self.verdict!r}")

    def check(self) -> None:
        idx = [s["n"] for s in self.steps if "n" in s]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("step indices are not increasing")

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario, "version": self.version, "config_sha256": self.config_sha256,
            "seed": self.seed, "verdict": self.verdict, "steps": self.steps, "metrics": self.metrics,
            "notes": self.notes, "artifacts": self.artifacts, "runtime": self.runtime,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


# ----------------------------------------------------------------- tables


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class Artifacts:
    """Writes tables (tab separated, commented header) and figures into one directory."""

    def __init__(self, out: Path, scenario: str, sha: str, figures: bool = True):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.scenario, self.sha, self.figures = scenario, sha, figures
        self.written: list[str] = []

    def header(self) -> list[str]:
        return [f"# apkam {__version__} table-format {TABLE_FORMAT}", f"# scenario {self.scenario}",
                f"# config_sha256 {self.sha}"]

    def table(self, name: str, columns: list[str], rows) -> Path:
        path = self.out / name
        lines = self.header() + ["\t".join(columns)]
        lines += ["\t".join(fmt(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")
        self.written.append(name)
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.out / name
        path.write_text(body)
        self.written.append(name)
        return path

    def figure(self, name: str, fn, *args) -> None:
        if not self.figures:
            return
        fn(*args, self.out / name)
        self.written.append(name)


def series_table(art: Artifacts, name: str, f) -> None:
    d = f.basis.d
    rows = []
    for k, c in zip(f.modes.tolist(), f.coeffs):
        c = np.atleast_1d(c)
        for j, cj in enumerate(c):
            rows.append(list(k) + [j, cj.real, cj.imag])
    art.table(name, [f"k{i}" for i in f.basis.indices[:d]] + ["cheb", "re", "im"], rows)


# ---------------------------------------------------------------- builders


def _basis(cfg) -> tuple[FrequencyBasis, SpatialStructure]:
    basis = FrequencyBasis(cfg.basis.lo, cfg.basis.omega)
    structure = SpatialStructure(tuple(frozenset(g) for g in cfg.structure.generators), cfg.structure.varrho)
    return basis, structure


def _series(basis, structure, modes: list[ModeCfg]) -> APSeries:
    out = APSeries.zero(basis, structure)
    for m in modes:
        if len(m.k) != basis.d:
            raise SchemaMismatch(f"mode {m.k} has length {len(m.k)}, basis has {basis.d} frequencies")
        out = out + APSeries.trig(basis, structure, m.k, cos=m.cos, sin=m.sin)
    return out


def oscillator_spec(cfg: OscillatorCfg, basis, structure):
    from .oscillator import OddFunction, OscillatorSpec

    return OscillatorSpec(cfg.varpi, OddFunction(cfg.phi.name, cfg.phi.scale), OddFunction(cfg.g.name, cfg.g.scale),
                          _series(basis, structure, cfg.forcing), cfg.phi_inf)


def kam_instance(cfg: KamCfg):
    from .kam import golden_kick, schedule_for, shear_map, tuned_shear_map

    basis, structure = _basis(cfg)
    a = _series(basis, structure, cfg.kick) if cfg.kick else None
    if a is None:
        a = golden_kick()
        if a.basis != basis:
            raise SchemaMismatch("default kick needs the default two-frequency basis")
    kw = dict(max_steps=cfg.max_steps, stop_eps=cfg.stop_eps)
    if cfg.target_eps0 is not None:
        tmap, sched, c = tuned_shear_map(a, cfg.alpha, cfg.s, cfg.target_eps0, cfg.m0, seed=cfg.seed, **kw)
    else:
        tmap = shear_map(a, cfg.alpha, cfg.s, seed=cfg.seed)
        sched, c = schedule_for(tmap, cfg.m0, **kw), 1.0
    return tmap, sched, c


# --------------------------------------------------------------- scenarios


def _homological(cfg: HomologicalCfg, art: Artifacts, tr: RunTrace) -> None:
    from . import plotting
    from .homological import parity_of_solution, solve_difference

    basis, structure = _basis(cfg)
    modes = cfg.h or [ModeCfg(k=[1] + [0] * (basis.d - 1), cos=1.0), ModeCfg(k=[0] * (basis.d - 1) + [1], sin=0.5)]
    h = _series(basis, structure, modes)
    sol = solve_difference(h, cfg.alpha, cfg.tol_div)
    nh = h.norm(m=0.0, r=0.0)
    tr.metrics.update(residual=sol.residual, divisor_floor=sol.divisor_floor, norm_h=nh,
                      parity=parity_of_solution(h, cfg.alpha, sol.l))
    series_table(art, "solution.tsv", sol.l)
    art.text("solution.json", dumps(sol.l))
    art.figure("spectrum.png", plotting.spectrum, sol.l.frequencies, np.abs(sol.l.coeffs))
    tr.verdict = "certified" if sol.residual <= 1e-10 * (1 + nh) else "failed"


def _kam(cfg: KamCfg, art: Artifacts, tr: RunTrace) -> None:
    from . import plotting
    from .kam import initial_map, kam_iterate, kam_step

    tmap, sched, c = kam_instance(cfg)
    tr.metrics.update(eps0=sched.eps0, s0=sched.s0, r0=sched.r0, m0=sched.m0, amplitude=c)
    if cfg.scenario == "kam-step":
        cur = initial_map(tmap, sched)
        step = kam_step(cur, sched.strip(1), c6=cfg.c6, kmax=cfg.kmax, seed=cfg.seed)
        row = dict(n=0, eps_in=step.eps_in, eps_out=step.eps_out, theta=step.theta, divisor_floor=step.divisor_floor,
                   reversibility_in=step.reversibility_in, reversibility_out=step.reversibility_out,
                   fp_iterations=step.fp_iterations, implicit_residual=step.implicit_residual,
                   transform_norm=step.transform_norm)
        tr.steps.append(row)
        tr.runtime["step"] = step.elapsed
        art.table("step.tsv", list(row), [list(row.values())])
        art.text("new_f.json", dumps(step.new_map.f))
        art.text("new_g.json", dumps(step.new_map.g))
        ok = step.eps_out <= 0.5 * step.eps_in and step.reversibility_out <= 1e-10
        tr.verdict = "certified" if ok else "failed"
        return
    t0 = time.perf_counter()
    crv, steps = kam_iterate(tmap, sched, c6=cfg.c6, kmax=cfg.kmax, seed=cfg.seed)
    tr.runtime["iterate"] = time.perf_counter() - t0
    for rec in steps:
        d = rec.as_dict()
        tr.runtime[f"step{rec.n}"] = d.pop("elapsed")
        tr.steps.append(d)
    tr.metrics.update(conjugacy_defect=crv.conjugacy_defect, rotation_defect=crv.rotation_defect,
                      graph_defect=crv.graph_defect, certified=crv.certified, n_steps=len(steps))
    if steps:
        cols = [k for k in tr.steps[0]]
        art.table("trace.tsv", cols, [[s[k] for k in cols] for s in tr.steps])
        art.figure("eps_decay.png", plotting.eps_decay, tr.steps)
    xi = np.linspace(0.0, 200.0, 2001)
    x, y = crv.point(xi)
    art.table("curve.tsv", ["xi", "x", "y", "graph_y"], zip(xi, x, y, crv.phi_curve(x)))
    art.text("curve_p.json", dumps(crv.p))
    art.text("curve_q.json", dumps(crv.q))
    art.figure("curve.png", plotting.curve, xi, x, y)
    good = crv.certified and crv.conjugacy_defect <= 1e-8 and crv.rotation_defect <= 1e-8
    tr.verdict = "certified" if good else ("best-effort" if steps and all(s["accepted"] for s in tr.steps) else "failed")


def _dioph(cfg: DiophCfg, art: Artifacts, tr: RunTrace) -> None:
    from .diophantine import ApproximationFunction, check_alpha, check_omega
    from .errors import ResonanceFound

    basis, structure = _basis(cfg)
    delta = ApproximationFunction(cfg.delta.family, cfg.delta.tau, cfg.delta.a, cfg.delta.sigma)
    reports = []
    try:
        reports.append(check_omega(basis, structure, delta, cfg.gamma, cfg.K))
        if cfg.alpha is not None:
            reports.append(check_alpha(cfg.alpha, basis, structure, delta, cfg.gamma0, cfg.K, cfg.J))
        tr.verdict = "certified"
    except ResonanceFound as exc:
        reports.append(exc.report)
        tr.notes.append(f"resonance witness {exc.report.argmin_k} j={exc.report.argmin_j}")
        tr.verdict = "failed"
    rows = []
    for r in reports:
        d = r.as_dict()
        tr.runtime[f"scan_{d['kind']}"] = d.pop("elapsed_s")
        tr.metrics[d["kind"]] = d
        rows.append([d["kind"], d["success"], d["gamma_observed"], d["threshold"],
                     json.dumps(d["witness_k"], sort_keys=True), d["witness_j"], d["K"], d["J"], d["n_checked"]])
    art.table("scan.tsv", ["kind", "success", "gamma_observed", "threshold", "witness_k", "witness_j", "K", "J",
                           "n_checked"], rows)


def _small_twist(cfg: SmallTwistCfg, art: Artifacts, tr: RunTrace) -> None:
    from . import plotting
    from .oscillator import expansion_series, first_integral
    from .smalltwist import SmallTwistMap, averaging_transform, build_adiabatic_chart, resonant_split, twist_condition

    basis, structure = _basis(cfg)
    spec = oscillator_spec(cfg.oscillator, basis, structure)
    L, M = expansion_series(spec, cfg.rho_center, cfg.rho_half)
    alpha = 2 * math.pi / spec.varpi
    tr.metrics["twist_condition"] = twist_condition(L)
    if cfg.scenario == "small-twist-avg":
        tm = SmallTwistMap(alpha, cfg.delta, L, M)
        res = averaging_transform(tm, cfg.mu, cfg.nu, cfg.N, cfg.tol_res, seed=cfg.seed)
        tr.metrics.update(tail_norm=res.tail_norm, tail_bound=res.tail_bound, remainder_norm=res.remainder_norm,
                          reversibility_in=res.reversibility_in, reversibility_out=res.reversibility_out,
                          x_residual=res.x_residual, y_residual=res.y_residual,
                          direct_remainder=res.direct_remainder)
        for name, s in (("U", res.U), ("V", res.V), ("L0", res.L0), ("phi1", res.phi1), ("phi2", res.phi2)):
            art.text(f"{name}.json", dumps(s))
        art.table("averaging.tsv", list(tr.metrics), [list(tr.metrics.values())])
        ok = res.tail_norm <= res.tail_bound * (1 + 1e-12) + 1e-300 and \
            res.reversibility_out <= 10 * res.reversibility_in + 1e-10
        tr.verdict = "certified" if ok else "failed"
        return
    sp = resonant_split(L, M, alpha, cfg.tol_res)
    tr.metrics.update({f"check_{k}": v for k, v in sp.checks.items()})
    tr.metrics["resonant_sets"] = [list(a) for a in sp.resonant_sets]
    if cfg.scenario == "small-twist-split":
        for name, s in (("L_tilde", sp.L_tilde), ("M_tilde", sp.M_tilde), ("L_hat", sp.L_hat), ("M_hat", sp.M_hat)):
            art.text(f"{name}.json", dumps(s))
        art.table("split_checks.tsv", ["check", "value"], sorted(sp.checks.items()))
        tr.verdict = "certified" if max(sp.checks.values()) <= 1e-10 else "failed"
        return
    I = first_integral(spec)
    ch = build_adiabatic_chart(sp.L_hat, sp.M_hat, I, alpha, tuple(cfg.annulus), tuple(cfg.inner))
    th = np.linspace(0.0, alpha, cfg.n_theta)
    rh = np.linspace(cfg.inner[0], cfg.inner[1], cfg.n_rho)
    T, R = np.meshgrid(th, rh, indexing="ij")
    t, r = T.ravel(), R.ravel()
    K = ch.K(t, r)
    tau = ch.tau(t, r)
    Iv = I.value(t, r)
    res = ch.chart_residual(t, r)
    per = ch.periodicity_residuals(t, r)
    tr.metrics.update(chart_residual=float(np.max(np.abs(res))), periodicity_K=per["K"], periodicity_tau=per["tau"])
    art.table("chart.tsv", ["theta", "rho", "I", "K", "tau", "residual"], zip(t, r, Iv, K, tau, res))
    art.figure("chart.png", plotting.chart, T, R, tau.reshape(T.shape), Iv.reshape(T.shape))
    ok = tr.metrics["chart_residual"] <= 1e-9 and per["tau"] <= 1e-9
    tr.verdict = "certified" if ok else "failed"


def _oscillator(cfg: OscillatorRunCfg, art: Artifacts, tr: RunTrace) -> None:
    from . import oscillator as osc
    from . import plotting
    from .errors import MarginZero, ResonantForcing

    basis, structure = _basis(cfg)
    spec = oscillator_spec(cfg.oscillator, basis, structure)
    tr.metrics["phi_inf"] = spec.phi_inf
    kind = cfg.scenario.split("-", 1)[1]
    if kind == "simulate":
        t_eval = np.arange(0.0, cfg.T + 0.5 * cfg.dt_out, cfg.dt_out)
        traj = osc.integrate(spec, (cfg.x0, cfg.y0), (0.0, cfg.T), cfg.tol, t_eval=t_eval)
        xdot = spec.varpi * traj.y - spec.G(traj.x)
        art.table("trajectory.tsv", ["t", "x", "y", "xdot"], zip(traj.t, traj.x, traj.y, xdot))
        art.figure("phase.png", plotting.phase, traj.t, traj.x, xdot)
        tr.metrics.update(envelope=float(np.max(np.abs(traj.x) + np.abs(xdot))), n_samples=int(traj.t.size))
        tr.verdict = "certified"
    elif kind == "poincare":
        rho, tau = np.meshgrid(cfg.rho0, cfg.tau0, indexing="ij")
        m, l = osc.expansion_closed_form(spec, rho, tau)
        rows, devs = [], []
        for e in cfg.eps:
            r1, t1 = osc.poincare_numeric(spec, e, rho, tau)
            dr = r1 - rho - e * m
            dt = t1 - tau - 2 * math.pi / spec.varpi - e * l
            devs.append(float(max(np.max(np.abs(dr)), np.max(np.abs(dt)))))
            rows += list(zip([e] * rho.size, rho.ravel(), tau.ravel(), r1.ravel(), t1.ravel(), dr.ravel(), dt.ravel()))
        art.table("poincare.tsv", ["eps", "rho0", "tau0", "rho1", "tau1", "dev_rho", "dev_tau"], rows)
        eps = np.asarray(cfg.eps)
        slope = float(np.polyfit(np.log(eps), np.log(devs), 1)[0]) if len(eps) > 1 else float("nan")
        tr.metrics.update(order=slope, deviations=devs)
        if len(eps) > 1:
            art.figure("order.png", plotting.order_fit, eps, np.asarray(devs), slope)
        tr.verdict = "certified" if 1.8 <= slope <= 2.2 else "failed"
    elif kind == "expansion":
        rows, worst_cf, worst_m = [], 0.0, 0.0
        for r0 in cfg.rho0:
            for t0 in cfg.tau0:
                ec = osc.expansion_coefficients(spec, r0, t0)
                mc, lc = osc.expansion_closed_form(spec, r0, t0)
                worst_cf = max(worst_cf, abs(ec.m - mc), abs(ec.l - lc))
                worst_m = max(worst_m, abs(ec.m - ec.m_parts))
                rows.append([r0, t0, ec.m, ec.l, ec.m_parts, ec.l_stated])
        art.table("expansion.tsv", ["rho0", "tau0", "m", "l", "m_parts", "l_stated"], rows)
        tr.metrics.update(closed_form_gap=worst_cf, m_forms_gap=worst_m)
        L, _ = osc.expansion_series(spec)
        Lc = L.at_y(L.y0)
        art.figure("spectrum.png", plotting.spectrum, Lc.frequencies, np.abs(Lc.coeffs))
        try:
            mt = osc.mean_twist(spec, cfg.rho0[0], cfg.T_avg)
            tr.metrics["mean_twist"] = mt.as_dict()
            tr.notes.append(
                f"mean twist measured {mt.measured:.6g}; stated average {mt.stated_value:.6g}; "
                f"first-order formula with the opposite sign gives {mt.literal_value:.6g}")
        except ResonantForcing as exc:
            tr.notes.append(f"mean twist skipped: {exc}")
        tr.verdict = "certified" if worst_cf <= 1e-10 and worst_m <= 1e-9 else "failed"
    elif kind == "bounded":
        rep = osc.boundedness_experiment(spec, cfg.radii, cfg.T, cfg.tol, cfg.dt_out)
        tr.metrics.update(rep.as_dict())
        art.table("bounded.tsv", ["radius", "envelope", "slope", "ratio"],
                  zip(rep.radii, rep.envelope, rep.slope, rep.ratio))
        art.figure("amplitude.png", plotting.amplitudes, rep.samples["t"], rep.samples["amp"], rep.radii)
        ok = rep.max_slope <= 1e-5 and rep.max_ratio <= 3
        tr.verdict = "certified" if ok else "best-effort"
    elif kind == "resonant":
        fs = osc.resonant_component(spec)
        series_table(art, "resonant_forcing.tsv", fs)
        try:
            tm = osc.twist_margin(spec, cfg.n_grid)
        except MarginZero as exc:
            tr.notes.append(str(exc))
            tr.verdict = "failed"
            return
        tr.metrics.update(margin=tm.margin, sign=tm.sign, n_resonant_modes=fs.n_modes)
        step = max(1, tm.tau0.size // 1000)
        art.table("twist.tsv", ["tau0", "D"], zip(tm.tau0[::step], tm.D[::step]))
        art.figure("twist.png", plotting.twist, tm.tau0, tm.D)
        tr.verdict = "certified"


_DISPATCH = {
    "solve-homological": _homological, "kam-step": _kam, "kam-run": _kam, "dioph-scan": _dioph,
    "small-twist-avg": _small_twist, "small-twist-split": _small_twist, "small-twist-chart": _small_twist,
}


def run(cfg, out: str | Path, figures: bool | None = None) -> RunTrace:
    """Execute one scenario; artifacts go to `out`, trace.json included."""
    sha = config_hash(cfg)
    figures = cfg.figures if figures is None else figures
    art = Artifacts(Path(out), cfg.scenario, sha, figures)
    tr = RunTrace(cfg.scenario, sha, cfg.seed)
    fn = _DISPATCH.get(cfg.scenario, _oscillator)
    t0 = time.perf_counter()
    try:
        fn(cfg, art, tr)
    except ApKamError as exc:
        tr.verdict = "failed"
        tr.notes.append(f"{type(exc).__name__}: {exc}")
    tr.runtime["total"] = time.perf_counter() - t0
    tr.check()
    art.text("config.json", json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True))
    tr.artifacts = sorted(art.written + ["trace.json"])
    (art.out / "trace.json").write_text(tr.to_json())
    return tr


# ---------------------------------------------------------------- golden


GOLDEN_STEP_FIELDS = ("n", "eps_in", "eps_out")
GOLDEN_DEFECTS = ("conjugacy_defect", "rotation_defect", "graph_defect")


@dataclass
class GoldenVerdict:
    passed: bool
    failures: list[str]


def golden_record(trace: RunTrace | dict) -> dict:
    d = trace.as_dict() if isinstance(trace, RunTrace) else trace
    return {
        "scenario": d["scenario"], "config_sha256": d["config_sha256"], "verdict": d["verdict"],
        "steps": [{k: s[k] for k in GOLDEN_STEP_FIELDS} for s in d["steps"]],
        "metrics": {k: d["metrics"][k] for k in GOLDEN_DEFECTS if k in d["metrics"]},
    }


def compare_golden(trace: RunTrace | dict, golden: dict, eps_rtol: float = 0.05, defect_factor: float = 10.0,
                   floor: float = 1e-15) -> GoldenVerdict:
    """eps values within eps_rtol relative, defects within defect_factor (values below floor count as floor)."""
    cur = golden_record(trace)
    for key in ("scenario", "steps", "metrics"):
        if key not in golden:
            raise SchemaMismatch(f"golden lacks {key!r}")
    if cur["scenario"] != golden["scenario"]:
        raise SchemaMismatch(f"scenario {cur['scenario']!r} vs golden {golden['scenario']!r}")
    fails = []
    if cur["verdict"] != golden.get("verdict", cur["verdict"]):
        fails.append(f"verdict: {cur['verdict']} vs {golden['verdict']}")
    if len(cur["steps"]) != len(golden["steps"]):
        fails.append(f"steps: {len(cur['steps'])} vs {len(golden['steps'])}")
    for i, (a, b) in enumerate(zip(cur["steps"], golden["steps"])):
        for k in ("eps_in", "eps_out"):
            if k not in b:
                raise SchemaMismatch(f"golden step {i} lacks {k!r}")
            x, y = max(a[k], floor), max(b[k], floor)
            if abs(x - y) > eps_rtol * y:
                fails.append(f"steps[{i}].{k}: {a[k]:.6g} vs {b[k]:.6g}")
    for k, y in golden["metrics"].items():
        if k not in cur["metrics"]:
            raise SchemaMismatch(f"trace lacks metric {k!r}")
        x = max(cur["metrics"][k], floor)
        y = max(y, floor)
        if x > defect_factor * y or y > defect_factor * x:
            fails.append(f"metrics.{k}: {cur['metrics'][k]:.6g} vs {golden['metrics'][k]:.6g}")
    return GoldenVerdict(not fails, fails)
