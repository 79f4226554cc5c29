"""Static report figures written next to the delimited artifacts.

Every CLI report path drops a PNG alongside its CSV/JSON output.  The Agg
backend and fixed figure geometry keep the files byte-identical across
repeated runs with the same inputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": "msbridge"})
    plt.close(fig)
    return path


def marginal_figure(path, nu, forward, title="implied terminal marginal"):
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.vlines(nu.points, 0.0, nu.weights, color="C0", lw=2)
    ax.plot(nu.points, nu.weights, "o", color="C0", ms=4)
    ax.axvline(forward, color="C3", ls="--", lw=1, label=f"forward {forward:.6g}")
    ax.set_xlabel("price level")
    ax.set_ylabel("mass")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def solution_figure(path, p, sol):
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.4))
    im = axes[0].imshow(
        sol.q_star.w,
        origin="lower",
        aspect="auto",
        extent=[
            p.ygrid.points[0],
            p.ygrid.points[-1],
            p.xgrid.points[0],
            p.xgrid.points[-1],
        ],
        cmap="viridis",
    )
    axes[0].set_title(f"optimal coupling (H={sol.entropy:.6g})")
    axes[0].set_xlabel("terminal level y")
    axes[0].set_ylabel("intermediate level x")
    fig.colorbar(im, ax=axes[0], fraction=0.046)
    axes[1].plot(p.xgrid.points, sol.potentials.h, "o-", color="C1")
    axes[1].set_title("stock position h(x)")
    axes[1].set_xlabel("x")
    g = sol.potentials.g
    finite = np.isfinite(g)
    axes[2].plot(p.ygrid.points[finite], g[finite], "s-", color="C2")
    axes[2].set_title("option payoff g(y)")
    axes[2].set_xlabel("y")
    return _save(fig, path)


def portfolio_figure(path, xpoints, ypoints, portfolio, certificates):
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.4))
    axes[0].plot(xpoints, portfolio.h, "o-", color="C1")
    axes[0].set_title("portfolio stock position")
    axes[0].set_xlabel("x")
    g = portfolio.g
    finite = np.isfinite(g)
    axes[1].plot(ypoints[finite], g[finite], "s-", color="C2")
    axes[1].set_title("portfolio option payoff")
    axes[1].set_xlabel("y")
    gammas = [c.gamma for c in certificates]
    gaps = [abs(c.gap) for c in certificates]
    axes[2].semilogy(gammas, np.maximum(gaps, 1e-18), "d-", color="C3")
    axes[2].set_title("duality gap by risk aversion")
    axes[2].set_xlabel("gamma")
    axes[2].set_ylabel("|gap|")
    return _save(fig, path)


def convergence_figure(path, rows):
    deltas = [r.delta for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
    axes[0].loglog(deltas, np.maximum([r.tv_to_q for r in rows], 1e-18), "o-", label="variation to input law")
    axes[0].loglog(deltas, [2 * d for d in deltas], "--", color="gray", label="2*delta")
    axes[0].set_xlabel("delta")
    axes[0].set_ylabel("total variation")
    axes[0].legend(fontsize=8)
    axes[1].loglog(
        deltas, np.maximum([r.entropy_gap for r in rows], 1e-18), "s-", color="C3"
    )
    axes[1].set_xlabel("delta")
    axes[1].set_ylabel("entropy gap")
    fig.suptitle("bounded-stock approximation convergence", fontsize=10)
    return _save(fig, path)
