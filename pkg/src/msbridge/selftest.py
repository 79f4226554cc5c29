"""Deterministic invariant battery behind the ``selftest`` CLI command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approximation import split_interval, strassen_coupling
from .bridge import solve_bridge
from .duality import duality_gap
from .errors import StabilizationError
from .instances import (
    centered_measure,
    example_instance,
    mean_preserving_spread,
    random_dominated_pair,
    random_feasible_instance,
    random_measure,
)
from .measures import (
    barycenter,
    convex_order_calls,
    convex_order_leq,
    entropy_chain,
    joint_tv_distance,
    normalized_tv_bound,
    quantile_integral,
    relative_entropy,
)
from .oracle import brute_force_bridge


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _convex_order_agreement(rng, trials=1000):
    mismatches = 0
    for _ in range(trials):
        a = random_measure(rng, int(rng.integers(2, 9)))
        if rng.random() < 0.5:
            b = mean_preserving_spread(rng, a)
        else:
            b = random_measure(rng, int(rng.integers(2, 9)), mass=a.mass)
        if convex_order_leq(a, b) != convex_order_calls(a, b):
            mismatches += 1
    return CheckResult(
        "convex-order criteria agree",
        mismatches == 0,
        f"{trials} random pairs, {mismatches} mismatches",
    )


def _quantile_barycenter(rng, trials=300):
    worst = 0.0
    for _ in range(trials):
        m = random_measure(rng, int(rng.integers(1, 9)), mass=float(rng.uniform(0.3, 2.0)))
        worst = max(worst, abs(quantile_integral(m, 0.0) - barycenter(m)))
    return CheckResult(
        "tail quantile integral at zero equals barycenter",
        worst <= 1e-12,
        f"max defect {worst:.2e}",
    )


def _entropy_chain(rng, trials=300):
    worst = 0.0
    for _ in range(trials):
        p, nu = random_feasible_instance(rng, 3, 4)
        q = solve_bridge(p, nu).q_star
        h1, cond = entropy_chain(q, p)
        worst = max(worst, abs(h1 + cond - relative_entropy(q, p)))
    return CheckResult(
        "entropy chain rule reconciles", worst <= 1e-10, f"max defect {worst:.2e}"
    )


def _tv_bound(rng, trials=1000):
    worst = -np.inf
    for _ in range(trials):
        lam, mu = random_dominated_pair(rng, int(rng.integers(2, 9)))
        tv, bound = normalized_tv_bound(lam, mu)
        worst = max(worst, tv - bound)
    return CheckResult(
        "normalized variation bound holds", worst <= 1e-12, f"max tv-bound {worst:.2e}"
    )


def _strassen(rng, trials=100):
    worst = 0.0
    for _ in range(trials):
        a = centered_measure(rng, int(rng.integers(2, 7)))
        b = mean_preserving_spread(rng, a)
        kern = strassen_coupling(a, b)
        push = np.zeros(len(kern.ygrid))
        idx = np.searchsorted(kern.xgrid.points, a.points)
        for i, w in zip(idx, a.weights):
            push += w * kern.rows[i]
        wb = np.zeros(len(kern.ygrid))
        wb[np.searchsorted(kern.ygrid.points, b.points)] = b.weights
        worst = max(worst, float(np.abs(push - wb).max()))
        means = kern.rows[idx] @ kern.ygrid.points
        worst = max(worst, float(np.abs(means - a.points).max()))
    return CheckResult(
        "mean-preserving couplings exact", worst <= 1e-10, f"max defect {worst:.2e}"
    )


def _split(rng, trials=120):
    failures = 0
    for _ in range(trials):
        mu = centered_measure(rng, int(rng.integers(3, 10)))
        supp = mu.support()
        cutoff = float(np.abs(supp[supp != 0]).min())
        cap = min(
            float(mu.weights[mu.points <= -cutoff].sum()),
            float(mu.weights[mu.points >= cutoff].sum()),
        )
        delta = float(rng.uniform(0.05, 0.9)) * cap
        if delta <= 0:
            continue
        try:
            split = split_interval(mu, delta)
        except StabilizationError:
            failures += 1
            continue
        if not convex_order_calls(split.source, split.target, 1e-9):
            failures += 1
    return CheckResult(
        "marginal splits stay in convex order",
        failures == 0,
        f"{trials} random splits, {failures} failures",
    )


def _solver_oracle(rng, trials=5):
    worst_tv, worst_dh = 0.0, 0.0
    for _ in range(trials):
        p, nu = random_feasible_instance(rng, 4, 5)
        sol = solve_bridge(p, nu)
        q_ref, h_ref = brute_force_bridge(p, nu)
        worst_tv = max(worst_tv, joint_tv_distance(sol.q_star, q_ref))
        worst_dh = max(worst_dh, abs(sol.entropy - h_ref))
    return CheckResult(
        "dual solver matches primal reference",
        worst_tv <= 1e-6 and worst_dh <= 1e-8,
        f"max tv {worst_tv:.2e}, max entropy gap {worst_dh:.2e}",
    )


def _duality(rng):
    p, nu = example_instance()
    worst = max(abs(duality_gap(p, nu, gamma).gap) for gamma in (0.5, 1.0, 5.0))
    return CheckResult(
        "strong duality certified", worst <= 1e-6, f"worst |gap| {worst:.2e}"
    )


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        _convex_order_agreement(rng),
        _quantile_barycenter(rng),
        _entropy_chain(rng),
        _tv_bound(rng),
        _strassen(rng),
        _split(rng),
        _solver_oracle(rng),
        _duality(rng),
    ]
