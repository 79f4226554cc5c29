"""Entropy projection onto calibrated martingale measures.

Solves inf H(Q|P) over couplings with prescribed second marginal and the
conditional-mean (martingale) property by block-coordinate ascent on the
dual: an exact column-marginal projection alternates with a one-dimensional
Newton root find per x-row.  Everything runs in the log domain; densities
are only exponentiated at the end.

The optimizer has the exponential-family form

    dQ*/dP = exp(c + h(X) (Y - X) + g(Y)),

with the gauge E^nu[g] = 0 absorbed into the normalizer c.  Under that
gauge c equals the minimal entropy, which the solver reports as an
optimality certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, InfeasibleError, ValidationError
from .measures import (
    DiscreteMeasure,
    JointMeasure,
    relative_entropy,
    tv_distance,
)
from .oracle import (
    LinearSystem,
    analytic_center,
    coupling_from_vector,
    lp_feasible_point,
    martingale_marginal_system,
    maximal_support,
)


@dataclass(frozen=True)
class Potentials:
    """Dual triple of the exponential-family density exp(c + h(X)(Y-X) + g(Y)).

    ``c`` is the log-normalizer, ``h`` the stock position per x-level
    (dimensionless per unit price), ``g`` the static option payoff per
    y-level (currency, gauge-fixed to E^nu[g] = 0).  Entries of ``g`` on
    nu-null columns are -inf, marking cells the optimizer excludes.
    """

    c: float
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if np.any(np.isnan(h)) or np.any(np.isnan(g)) or not np.isfinite(self.c):
            raise ValidationError("potentials must not contain NaN")
        h.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)

    def payoff_matrix(self, xpoints: np.ndarray, ypoints: np.ndarray) -> np.ndarray:
        """h(x)(y - x) + g(y) on the product grid (log-density minus c)."""
        return self.h[:, None] * (ypoints[None, :] - xpoints[:, None]) + self.g[None, :]


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 20000
    marginal_tol: float = 1e-12
    martingale_tol: float = 1e-12
    newton_tol: float = 1e-14
    newton_max_steps: int = 80
    damping: float = 1.0

    def __post_init__(self):
        if min(self.max_iters, self.newton_max_steps) <= 0:
            raise ValidationError("iteration budgets must be positive")
        for name in ("marginal_tol", "martingale_tol", "newton_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValidationError(f"{name} must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValidationError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class BridgeSolution:
    q_star: JointMeasure
    potentials: Potentials
    entropy: float
    marginal_residual: float
    martingale_residual: float
    iterations: int
    converged: bool
    dual_objective_trace: tuple[float, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    witness: JointMeasure
    interior: bool


def feasibility_check(
    p: JointMeasure, nu: DiscreteMeasure, interior: bool = True
) -> FeasibilityResult:
    """Decide whether a calibrated martingale coupling supported on supp P
    exists, and exhibit one.

    Phase-one simplex answers feasibility; with ``interior=True`` the witness
    is the analytic center of the polytope (maximal log-product), which is
    strictly positive on every cell that any feasible coupling can load.
    Raises :class:`InfeasibleError` with a multiplier certificate otherwise.
    """
    _validate_instance(p, nu)
    system, support = martingale_marginal_system(p, nu)
    if not interior:
        x = lp_feasible_point(system)
        return FeasibilityResult(True, coupling_from_vector(p, support, x), False)
    mask = maximal_support(system)
    x = analytic_center(system, mask)
    full = bool(mask.all())
    return FeasibilityResult(True, coupling_from_vector(p, support, x), full)


def _validate_instance(p: JointMeasure, nu: DiscreteMeasure):
    if nu.grid != p.ygrid:
        raise ValidationError("marginal grid does not match joint y-grid")
    if not p.is_probability(1e-9) or not nu.is_probability(1e-9):
        raise ValidationError("reference law and marginal must be probabilities")
    x = p.xgrid.points
    y = p.ygrid.points
    if np.any(x < y[0]) or np.any(x > y[-1]):
        raise ValidationError("x-levels must lie within the terminal grid hull")
    col = p.w.sum(axis=0)
    bad = (nu.weights > 0) & (col <= 0)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise ValidationError(
            f"marginal atom at y={y[j]!r} is not dominated by the reference columns"
        )


def _row_newton(logw, d, t0, tol, max_steps):
    """Solve sum_j w_j d_j exp(t d_j) = 0 for t.

    Newton on the logarithmic derivative phi(t) = log N+(t) - log N-(t),
    a strictly increasing function, with bracket expansion and bisection
    fallback; ``logw`` are log-weights and ``d`` the price increments.
    """
    pos = d > 0
    neg = d < 0
    if not pos.any() and not neg.any():
        return 0.0
    if not pos.any() or not neg.any():
        raise ConvergenceError("martingale root does not exist for this row")
    lp = logw[pos] + np.log(d[pos])
    ln = logw[neg] + np.log(-d[neg])
    dp, dn = d[pos], d[neg]

    def phi(t):
        return logsumexp(lp + t * dp) - logsumexp(ln + t * dn)

    lo = hi = t0
    flo = fhi = phi(t0)
    span = 1.0
    while flo > 0:
        lo -= span
        span *= 2
        flo = phi(lo)
    span = 1.0
    while fhi < 0:
        hi += span
        span *= 2
        fhi = phi(hi)
    t = min(max(t0, lo), hi)
    for _ in range(max_steps):
        ft = phi(t)
        if abs(ft) <= tol:
            return t
        if ft > 0:
            hi = t
        else:
            lo = t
        ap = np.exp(lp + t * dp - logsumexp(lp + t * dp))
        an = np.exp(ln + t * dn - logsumexp(ln + t * dn))
        slope = float(ap @ dp - an @ dn)
        step = -ft / slope if slope > 0 else 0.0
        t_new = t + step
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        t = t_new
    raise ConvergenceError("row Newton exceeded its step budget")


def solve_bridge(
    p: JointMeasure, nu: DiscreteMeasure, opts: SolverOptions | None = None
) -> BridgeSolution:
    """Compute the minimal-entropy calibrated martingale coupling.

    Sweeps alternate (a) the exact column update matching the second
    marginal to ``nu``, and (b) per-row Newton solves driving the
    conditional mean of each x-row to its own level; rows are independent,
    so (b) could run in parallel.  Convergence is declared on the residuals
    the duality certifier consumes: total variation of the second marginal
    and the maximal conditional-mean defect.  The dual objective
    log E^P[exp(h(X)(Y-X) + g(Y))] (under the E^nu[g] = 0 gauge) is tracked
    each sweep; it is nonincreasing for exact block updates and any increase
    beyond round-off halves the damping factor.
    """
    opts = opts or SolverOptions()
    _validate_instance(p, nu)
    feasibility_check(p, nu, interior=False)

    x = p.xgrid.points
    y = p.ygrid.points
    m, n = p.w.shape
    d = y[None, :] - x[:, None]
    with np.errstate(divide="ignore"):
        logp = np.log(p.w)
        lognu = np.log(nu.weights)
    col_ok = nu.weights > 0
    row_mass = p.w.sum(axis=1)
    rows = np.flatnonzero(row_mass > 0)

    h = np.zeros(m)
    g = np.where(col_ok, 0.0, -np.inf)
    damping = opts.damping
    trace: list[float] = []
    marg_res = mart_res = np.inf
    iterations = 0

    for iterations in range(1, opts.max_iters + 1):
        # (a) exact column-marginal projection
        logits = logp + h[:, None] * d
        col_lse = logsumexp(logits, axis=0)
        g_target = np.where(col_ok, lognu - col_lse, -np.inf)
        g = g_target if damping >= 1.0 else _damped(g, g_target, damping, col_ok)

        # (b) per-row martingale tilt
        for i in rows:
            logw = logp[i] + g
            active = np.isfinite(logw)
            if not active.any():
                continue
            t = _row_newton(
                logw[active], d[i, active], h[i], opts.newton_tol, opts.newton_max_steps
            )
            h[i] = h[i] + damping * (t - h[i])

        # residuals of the normalized primal iterate
        logq = logp + h[:, None] * d + g[None, :]
        total = logsumexp(logq)
        q = np.exp(logq - total)
        marg_res = tv_distance(
            DiscreteMeasure(p.ygrid, q.sum(axis=0)), nu
        )
        cond_mean = np.abs((q * d).sum(axis=1))
        rm = q.sum(axis=1)
        mart_res = float(np.max(cond_mean[rows] / rm[rows], initial=0.0))

        dual = float(total - np.sum(nu.weights[col_ok] * g[col_ok]))
        if trace and dual > trace[-1] + 1e-12:
            damping = max(damping * 0.5, 1.0 / 1024.0)
        trace.append(dual)

        if marg_res <= opts.marginal_tol and mart_res <= opts.martingale_tol:
            break
    else:
        raise ConvergenceError(
            "bridge solver did not converge",
            residuals={"marginal": marg_res, "martingale": mart_res},
        )

    # gauge fixing: E^nu[g] = 0, c carries the normalization
    shift = float(np.sum(nu.weights[col_ok] * g[col_ok]))
    g = np.where(col_ok, g - shift, -np.inf)
    c = float(-logsumexp(logp + h[:, None] * d + g[None, :]))
    pot = Potentials(c, h, g)
    q_star = primal_from_potentials(p, pot)
    entropy = relative_entropy(q_star, p)
    return BridgeSolution(
        q_star=q_star,
        potentials=pot,
        entropy=float(entropy),
        marginal_residual=float(marg_res),
        martingale_residual=float(mart_res),
        iterations=iterations,
        converged=True,
        dual_objective_trace=tuple(trace),
    )


def _damped(old, new, w, mask):
    out = old.copy()
    both = mask & np.isfinite(old) & np.isfinite(new)
    out[both] = (1 - w) * old[both] + w * new[both]
    fresh = mask & ~np.isfinite(old)
    out[fresh] = new[fresh]
    return out


def primal_from_potentials(p: JointMeasure, pot: Potentials) -> JointMeasure:
    """Entrywise P * exp(c + h(x)(y - x) + g(y)); no extra normalization.

    Evaluated in the log domain so overflow cannot produce non-finite
    entries; cells with -inf log-density map to zero mass.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(p.w)
    logq = logp + pot.c + pot.payoff_matrix(p.xgrid.points, p.ygrid.points)
    w = np.exp(logq)
    if not np.all(np.isfinite(w)):
        raise ValidationError("potentials overflow the reference support")
    return JointMeasure(p.xgrid, p.ygrid, w)


# ---------------------------------------------------------------------------
# finitely many moment constraints


@dataclass(frozen=True)
class MomentConstraint:
    """One enforced moment: kind ``"h"`` pins E^Q[v(X)(Y-X)] = 0 for a
    vector v over the x-grid, kind ``"g"`` pins E^Q[v(Y)] = 0 for a vector
    over the y-grid (callers center v under the target marginal)."""

    kind: str
    vector: np.ndarray

    def __post_init__(self):
        if self.kind not in ("h", "g"):
            raise ValidationError("constraint kind must be 'h' or 'g'")
        v = np.asarray(self.vector, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class FiniteConstraintSolution:
    q_n: JointMeasure
    stock_coefficients: np.ndarray
    option_coefficients: np.ndarray
    c_n: float
    entropy: float
    payoff: np.ndarray  # combined h~(x)(y-x) + g~(y) matrix


def finite_constraint_solution(
    p: JointMeasure,
    constraints: list[MomentConstraint],
    opts: SolverOptions | None = None,
) -> FiniteConstraintSolution:
    """Entropy projection of P onto finitely many linear moment constraints.

    Dense Newton on the dual coefficients: the minimizer is the exponential
    family Q_n = P exp(c_n + sum a_i v_i(X)(Y-X) + sum b_i v_i(Y)) and
    c_n = H(Q_n|P) at the optimum.  Entropies are nondecreasing along nested
    constraint lists.  Raises :class:`InfeasibleError` when the constraint
    system admits no interior point (detected by dual divergence).
    """
    opts = opts or SolverOptions()
    x = p.xgrid.points
    y = p.ygrid.points
    d = y[None, :] - x[:, None]
    with np.errstate(divide="ignore"):
        logp = np.log(p.w)
    feats = []
    for cons in constraints:
        if cons.kind == "h":
            if cons.vector.size != x.size:
                raise ValidationError("stock constraint vector length mismatch")
            feats.append(cons.vector[:, None] * d)
        else:
            if cons.vector.size != y.size:
                raise ValidationError("option constraint vector length mismatch")
            feats.append(np.broadcast_to(cons.vector[None, :], p.w.shape))
    k = len(feats)
    lam = np.zeros(k)
    if k:
        feat = np.stack(feats)  # (k, m, n)
        support = np.isfinite(logp)
        fs = feat[:, support]  # (k, |supp|)
        lps = logp[support]

        def value_grad_hess(coef):
            z = lps + coef @ fs
            total = logsumexp(z)
            w = np.exp(z - total)
            grad = fs @ w
            centered = fs - grad[:, None]
            hess = (centered * w) @ centered.T
            return float(total), grad, hess

        f0, grad, hess = value_grad_hess(lam)
        flat = 1e-15
        for _ in range(200):
            gn = float(np.abs(grad).max(initial=0.0))
            if gn <= opts.newton_tol:
                break
            try:
                step = np.linalg.solve(hess + 1e-14 * np.eye(k), -grad)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(hess, -grad, rcond=None)
            slope = float(grad @ step)
            if slope > 0:
                step = -grad
                slope = -float(grad @ grad)
            t = 1.0
            accepted = False
            while t > 1e-16:
                cand = lam + t * step
                fc, gc, hc = value_grad_hess(cand)
                # Armijo decrease, or pure gradient progress once the
                # objective is flat at float resolution (terminal Newton).
                if fc <= f0 + 1e-4 * t * slope or (
                    abs(fc - f0) <= flat * (1.0 + abs(f0))
                    and float(np.abs(gc).max(initial=0.0)) < 0.5 * gn
                ):
                    lam, f0, grad, hess = cand, fc, gc, hc
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            if float(np.linalg.norm(lam)) > 1e8:
                raise InfeasibleError(
                    "moment constraints admit no interior point (dual diverges)"
                )
        else:
            raise ConvergenceError("dual Newton exceeded its iteration budget")
        if float(np.abs(grad).max(initial=0.0)) > 1e-9:
            raise ConvergenceError(
                "dual Newton stalled above tolerance", residuals=float(np.abs(grad).max())
            )
        payoff = np.tensordot(lam, feat, axes=1)
        c_n = -f0
    else:
        payoff = np.zeros_like(p.w)
        c_n = 0.0

    logq = logp + c_n + payoff
    q = JointMeasure(p.xgrid, p.ygrid, np.exp(logq))
    entropy = relative_entropy(q, p)
    kinds = np.array([cons.kind for cons in constraints])
    return FiniteConstraintSolution(
        q_n=q,
        stock_coefficients=lam[kinds == "h"] if k else np.zeros(0),
        option_coefficients=lam[kinds == "g"] if k else np.zeros(0),
        c_n=float(c_n),
        entropy=float(entropy),
        payoff=payoff,
    )
