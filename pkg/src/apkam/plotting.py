"""Figures written next to the run tables (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _figure(width: float = 6.0, height: float | None = None):
    fig, ax = plt.subplots(figsize=(width, height or width * GOLDEN))
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def eps_decay(steps: list[dict], path: Path) -> Path:
    fig, ax = _figure()
    n = [s["n"] for s in steps]
    ax.semilogy(n, [max(s["eps_in"], 1e-300) for s in steps], "o-", label="measured in")
    ax.semilogy(n, [max(s["eps_out"], 1e-300) for s in steps], "s--", label="measured out")
    ax.semilogy(n, [s["eps_schedule"] for s in steps], ":", color="0.4", label="schedule")
    ax.set_xlabel("step")
    ax.set_ylabel("perturbation size")
    ax.legend(frameon=False)
    return _save(fig, path)


def curve(xi, x, y, path: Path) -> Path:
    fig, ax = _figure()
    ax.plot(np.mod(x, 2 * np.pi), y, ".", ms=2)
    ax.set_xlabel("x mod 2 pi")
    ax.set_ylabel("y")
    ax.set_title("invariant curve samples")
    return _save(fig, path)


def phase(t, x, xdot, path: Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
    a1.plot(x, xdot, lw=0.5)
    a1.set_xlabel("x")
    a1.set_ylabel("x'")
    a2.plot(t, x, lw=0.5)
    a2.set_xlabel("t")
    a2.set_ylabel("x")
    return _save(fig, path)


def order_fit(eps, dev, slope: float, path: Path) -> Path:
    fig, ax = _figure()
    ax.loglog(eps, dev, "o-", label=f"fitted order {slope:.3f}")
    ax.loglog(eps, dev[0] * (np.asarray(eps) / eps[0]) ** 2, ":", color="0.4", label="order 2")
    ax.set_xlabel("eps")
    ax.set_ylabel("max deviation")
    ax.legend(frameon=False)
    return _save(fig, path)


def amplitudes(t, amp, radii, path: Path) -> Path:
    fig, ax = _figure()
    for a, r in zip(amp, radii):
        ax.plot(t, a, lw=0.5, label=f"{r:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("amplitude")
    ax.legend(frameon=False, fontsize=6, ncol=2)
    return _save(fig, path)


def twist(tau, D, path: Path) -> Path:
    fig, ax = _figure()
    ax.plot(tau, D)
    ax.axhline(0.0, color="0.6", lw=0.5)
    ax.set_xlabel("tau0")
    ax.set_ylabel("twist functional")
    return _save(fig, path)


def chart(theta, rho, tau, I, path: Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
    c1 = a1.contour(theta, rho, I, levels=12)
    a1.clabel(c1, fontsize=6)
    a1.set_title("I")
    c2 = a2.contour(theta, rho, tau, levels=12)
    a2.clabel(c2, fontsize=6)
    a2.set_title("tau")
    for a in (a1, a2):
        a.set_xlabel("theta")
        a.set_ylabel("rho")
    return _save(fig, path)


def spectrum(freq, mags, path: Path, title: str = "") -> Path:
    fig, ax = _figure()
    ax.semilogy(freq, np.maximum(mags, 1e-300), "o", ms=3)
    ax.set_xlabel("<k, w>")
    ax.set_ylabel("|coefficient|")
    ax.set_title(title)
    return _save(fig, path)
