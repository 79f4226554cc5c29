"""Reference instances and randomized generators for tests and self-checks.

All generators take an explicit ``numpy.random.Generator`` so runs are
reproducible from a seed.
"""

from __future__ import annotations

import numpy as np

from .measures import DiscreteMeasure, Grid, JointMeasure


def example_instance() -> tuple[JointMeasure, DiscreteMeasure]:
    """Small two-level reference market used across docs and self-tests.

    Intermediate levels (-0.5, 0.5) with equal weight; terminal levels
    (-1, 0, 1) with target marginal (0.3, 0.4, 0.3); the reference law is
    symmetric under the reflection (x, y) -> (-x, -y).
    """
    xg = Grid(np.array([-0.5, 0.5]))
    yg = Grid(np.array([-1.0, 0.0, 1.0]))
    p = JointMeasure(xg, yg, np.array([[0.25, 0.15, 0.10], [0.10, 0.15, 0.25]]))
    nu = DiscreteMeasure(yg, np.array([0.3, 0.4, 0.3]))
    return p, nu


def random_measure(
    rng: np.random.Generator,
    n_atoms: int,
    span: float = 3.0,
    mass: float = 1.0,
) -> DiscreteMeasure:
    """Random measure on distinct sorted points with positive weights."""
    pts = np.sort(rng.choice(np.arange(-10 * span, 10 * span), size=n_atoms, replace=False)) / 10.0
    w = rng.uniform(0.1, 1.0, size=n_atoms)
    w *= mass / w.sum()
    return DiscreteMeasure(Grid(pts), w)


def centered_measure(rng: np.random.Generator, n_atoms: int, span: float = 3.0) -> DiscreteMeasure:
    """Random probability measure translated to have zero barycenter."""
    m = random_measure(rng, n_atoms, span)
    mean = float(m.weights @ m.points)
    return DiscreteMeasure(Grid(m.points - mean), m.weights)


def mean_preserving_spread(
    rng: np.random.Generator, m: DiscreteMeasure, extra: int = 2
) -> DiscreteMeasure:
    """Dilation of ``m``: push each atom through a two-point martingale
    kernel, so the result dominates ``m`` in convex order."""
    pieces_pts: list[float] = []
    pieces_w: list[float] = []
    for x, w in zip(m.points, m.weights):
        if w == 0:
            continue
        spread_left = rng.uniform(0.05, 1.0)
        spread_right = rng.uniform(0.05, 1.0)
        lo, hi = x - spread_left, x + spread_right
        t = (x - lo) / (hi - lo)
        pieces_pts += [lo, hi]
        pieces_w += [w * (1 - t), w * t]
    pts = np.array(pieces_pts)
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    w = np.array(pieces_w)[order]
    uniq, inv = np.unique(pts, return_inverse=True)
    acc = np.zeros(uniq.size)
    np.add.at(acc, inv, w)
    return DiscreteMeasure(Grid(uniq), acc)


def random_dominated_pair(
    rng: np.random.Generator, n_atoms: int = 6
) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Random (lam, mu) with 0 != lam <= mu entrywise."""
    mu = random_measure(rng, n_atoms)
    frac = rng.uniform(0.0, 1.0, size=n_atoms)
    frac[int(rng.integers(n_atoms))] = 1.0  # keep lam nonzero
    lam = DiscreteMeasure(mu.grid, mu.weights * frac)
    return lam, mu


def _tilted_row(base: np.ndarray, y: np.ndarray, mean: float) -> np.ndarray:
    """Exponential tilt of a positive base row to a prescribed mean."""
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        w = base * np.exp(mid * y)
        w /= w.sum()
        if float(w @ y) < mean:
            lo = mid
        else:
            hi = mid
    w = base * np.exp(0.5 * (lo + hi) * y)
    return w / w.sum()


def random_martingale_kernel(
    rng: np.random.Generator, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Row-stochastic matrix with strictly positive rows of mean x_i."""
    rows = []
    for xi in x:
        base = rng.uniform(0.2, 1.0, size=y.size)
        rows.append(_tilted_row(base, y, float(xi)))
    return np.stack(rows)


def random_feasible_instance(
    rng: np.random.Generator, nx: int = 4, ny: int = 5
) -> tuple[JointMeasure, DiscreteMeasure]:
    """Strictly positive reference law with a perturbed push-forward marginal.

    The marginal is the image of the reference x-weights under a mixture of
    two random martingale kernels, so a calibrated martingale coupling
    always exists and the entropy problem is well posed.
    """
    y = np.sort(rng.choice(np.arange(-40, 41), size=ny, replace=False)) / 10.0
    x = np.sort(
        rng.uniform(y[0] + 0.05 * (y[-1] - y[0]), y[-1] - 0.05 * (y[-1] - y[0]), size=nx)
    )
    while np.any(np.diff(x) < 1e-3):
        x = np.sort(
            rng.uniform(y[0] + 0.05 * (y[-1] - y[0]), y[-1] - 0.05 * (y[-1] - y[0]), size=nx)
        )
    w = rng.uniform(0.2, 1.0, size=(nx, ny))
    w /= w.sum()
    p = JointMeasure(Grid(x), Grid(y), w)
    weights_x = p.first_marginal().weights
    k1 = random_martingale_kernel(rng, x, y)
    k2 = random_martingale_kernel(rng, x, y)
    theta = rng.uniform(0.2, 0.8)
    nu_w = weights_x @ (theta * k1 + (1 - theta) * k2)
    nu_w /= nu_w.sum()
    return p, DiscreteMeasure(Grid(y), nu_w)


def random_approximation_instance(
    rng: np.random.Generator, nx: int = 5, ny: int = 6
) -> tuple[JointMeasure, JointMeasure]:
    """Pair (Q, P) with Q a calibrated martingale law, P strictly positive
    with conditional rows equivalent to Q's terminal marginal, and the
    first marginal centered (zero barycenter)."""
    y_raw = np.sort(rng.choice(np.arange(-40, 41), size=ny, replace=False)) / 10.0
    lo, hi = y_raw[0], y_raw[-1]
    x_raw = np.sort(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), size=nx))
    while np.any(np.diff(x_raw) < 1e-2):
        x_raw = np.sort(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), size=nx))
    mu_w = rng.uniform(0.2, 1.0, size=nx)
    mu_w /= mu_w.sum()
    shift = float(mu_w @ x_raw)
    x = x_raw - shift
    y = y_raw - shift
    kq = random_martingale_kernel(rng, x, y)
    q = JointMeasure(Grid(x), Grid(y), mu_w[:, None] * kq)
    kp = random_martingale_kernel(rng, 0.5 * x, y)
    p = JointMeasure(Grid(x), Grid(y), mu_w[:, None] * kp)
    return q, p
