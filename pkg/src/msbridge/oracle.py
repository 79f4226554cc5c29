"""Independent reference solvers used to validate the main code paths.

The linear-programming routine is a dense two-phase simplex with Bland's
pivot rule, written here so that feasibility certificates and reference
couplings do not depend on any external optimizer.  The entropy reference
solver works in the primal: Kullback-Leibler proximal steps, each solved
exactly by a reduced-space Newton iteration on the KKT system.  It shares
no numeric kernels with the dual block-coordinate solver in ``bridge``;
determinism is preferred over speed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InfeasibleError, ValidationError
from .measures import DiscreteMeasure, JointMeasure

PIVOT_TOL = 1e-10
DRIVE_TOL = 1e-7  # minimum magnitude for a drive-out pivot element
RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# simplex


@dataclass(frozen=True)
class LinearSystem:
    """Equality constraints A x = b over x >= 0."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape[0] != b.size:
            raise ValidationError("constraint matrix and rhs sizes differ")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def _bland_pivot(tableau, basis, ncols):
    """One simplex sweep with Bland's anti-cycling rule; returns False at optimum."""
    reduced = tableau[-1, :ncols]
    entering = -1
    for j in range(ncols):
        if reduced[j] < -PIVOT_TOL:
            entering = j
            break
    if entering < 0:
        return False
    col = tableau[:-1, entering]
    rhs = tableau[:-1, -1]
    best_ratio = np.inf
    leaving = -1
    for i in range(col.size):
        if col[i] > PIVOT_TOL:
            ratio = rhs[i] / col[i]
            if ratio < best_ratio - PIVOT_TOL or (
                abs(ratio - best_ratio) <= PIVOT_TOL
                and (leaving < 0 or basis[i] < basis[leaving])
            ):
                best_ratio = ratio
                leaving = i
    if leaving < 0:
        raise ConvergenceError("linear program is unbounded")
    pivot = tableau[leaving, entering]
    tableau[leaving] /= pivot
    for i in range(tableau.shape[0]):
        if i != leaving and abs(tableau[i, entering]) > 0:
            tableau[i] -= tableau[i, entering] * tableau[leaving]
    basis[leaving] = entering
    return True


def _run_simplex(tableau, basis, ncols, max_pivots):
    pivots = 0
    while _bland_pivot(tableau, basis, ncols):
        pivots += 1
        if pivots > max_pivots:
            raise ConvergenceError("simplex exceeded pivot budget")


def simplex_solve(system: LinearSystem, cost: np.ndarray | None = None) -> np.ndarray:
    """Solve min cost.x over {A x = b, x >= 0} by two-phase dense simplex.

    ``cost=None`` stops after phase one and returns any feasible vertex.
    Raises :class:`InfeasibleError` with a Farkas-style multiplier vector
    when the system has no solution.
    """
    a = system.a.copy()
    b = system.b.copy()
    m, n = a.shape
    flip = b < 0
    a[flip] *= -1
    b[flip] *= -1

    # Phase one: minimize the sum of artificial variables.
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = a
    tab[:m, n : n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n] = -a.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    _run_simplex(tab, basis, n + m, max_pivots=20000)

    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -tab[-1, -1] > RESIDUAL_TOL * scale:
        # Multipliers of the phase-one optimum certify infeasibility.
        duals = tab[-1, n : n + m] + 1.0
        duals[flip] *= -1
        raise InfeasibleError(
            "linear system is infeasible", certificate=duals
        )

    # Drive artificial variables out of the basis.  Pivoting on a tiny
    # element would blow the whole tableau up, so rows without a solid
    # pivot are treated as redundant constraints and dropped.
    for i in range(m):
        if basis[i] >= n:
            row = tab[i, :n]
            j = next((k for k in range(n) if abs(row[k]) > DRIVE_TOL), None)
            if j is None:
                continue
            pivot = tab[i, j]
            tab[i] /= pivot
            for r in range(m + 1):
                if r != i and abs(tab[r, j]) > 0:
                    tab[r] -= tab[r, j] * tab[i]
            basis[i] = j
    keep = [i for i in range(m) if basis[i] < n]
    tab = np.vstack([tab[keep], tab[-1:]])
    basis = [basis[i] for i in keep]
    nrows = len(keep)

    if cost is not None:
        cost = np.asarray(cost, dtype=float)
        tab2 = np.zeros((nrows + 1, n + 1))
        tab2[:nrows, :n] = tab[:nrows, :n]
        tab2[:nrows, -1] = tab[:nrows, -1]
        tab2[-1, :n] = cost
        for i in range(nrows):
            if abs(tab2[-1, basis[i]]) > 0:
                tab2[-1] -= tab2[-1, basis[i]] * tab2[i]
        _run_simplex(tab2, basis, n, max_pivots=20000)
        tab = tab2

    x = np.zeros(n)
    for i in range(nrows):
        x[basis[i]] = tab[i, -1]
    x = np.maximum(x, 0.0)
    # Refactorize on the final basis: solving the original equations again
    # removes the round-off accumulated across pivots.
    cols = sorted(set(basis))
    sol, *_ = np.linalg.lstsq(system.a[:, cols], system.b, rcond=None)
    if np.all(sol >= -RESIDUAL_TOL):
        cand = np.zeros(n)
        cand[cols] = np.maximum(sol, 0.0)
        if float(np.abs(system.a @ cand - system.b).max(initial=0.0)) <= float(
            np.abs(system.a @ x - system.b).max(initial=0.0)
        ):
            x = cand
    residual = float(np.abs(system.a @ x - system.b).max(initial=0.0))
    if residual > RESIDUAL_TOL * scale:
        raise ConvergenceError(f"simplex residual {residual:.3e} too large")
    return x


def lp_feasible_point(system: LinearSystem) -> np.ndarray:
    """Deterministic phase-one solution of A x = b, x >= 0 (Bland pivoting)."""
    return simplex_solve(system, cost=None)


# ---------------------------------------------------------------------------
# maximal support and analytic centering


def maximal_support(system: LinearSystem, start: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of coordinates that are positive in some feasible point.

    Repeatedly maximizes the mass of the currently-zero coordinates; a zero
    optimum proves those coordinates vanish on the whole polytope.
    """
    x = lp_feasible_point(system) if start is None else start.copy()
    avg = x.copy()
    n = avg.size
    alive = np.ones(n, dtype=bool)
    for _ in range(n + 1):
        zero = alive & (avg <= PIVOT_TOL)
        if not zero.any():
            break
        cost = np.zeros(n)
        cost[zero] = -1.0
        y = simplex_solve(system, cost)
        if float(y[zero].sum()) <= PIVOT_TOL:
            alive[zero] = False
            break
        avg = 0.5 * (avg + y)
    return alive & (avg > PIVOT_TOL)


def analytic_center(system: LinearSystem, support: np.ndarray | None = None) -> np.ndarray:
    """Maximize sum(log x_k) over {A x = b, x >= 0, x = 0 off the support}.

    The support defaults to the maximal one; off-support coordinates are
    eliminated and the barrier objective is minimized by damped Newton steps
    inside the null space of the active constraints.
    """
    if support is None:
        support = maximal_support(system)
    support = np.asarray(support, dtype=bool)
    n = system.a.shape[1]
    if support.sum() == 0:
        raise InfeasibleError("no coordinate can be positive")

    a_sub = system.a[:, support]
    sub = LinearSystem(a_sub, system.b)
    # Average of a vertex and per-round mass maximizers: strictly positive start.
    x = lp_feasible_point(sub)
    rounds = 0
    while np.any(x <= PIVOT_TOL) and rounds < n:
        cost = np.zeros(a_sub.shape[1])
        cost[x <= PIVOT_TOL] = -1.0
        y = simplex_solve(sub, cost)
        if float(y[x <= PIVOT_TOL].sum()) <= PIVOT_TOL:
            raise InfeasibleError("support is not attainable by an interior point")
        x = 0.5 * (x + y)
        rounds += 1

    # Null-space basis of the equality constraints.
    _, s, vt = np.linalg.svd(a_sub, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max(initial=0.0))))
    null = vt[rank:].T
    if null.shape[1] > 0:
        for _ in range(200):
            grad = null.T @ (-1.0 / x)
            if float(np.abs(grad).max(initial=0.0)) <= 1e-12:
                break
            hess = null.T @ (null / (x**2)[:, None])
            step = np.linalg.solve(hess, -grad)
            direction = null @ step
            # Fraction-to-boundary rule keeps the iterate strictly positive.
            neg = direction < 0
            t = 1.0
            if neg.any():
                t = min(1.0, 0.99 * float(np.min(-x[neg] / direction[neg])))
            f0 = -float(np.sum(np.log(x)))
            while t > 1e-14:
                cand = x + t * direction
                if np.all(cand > 0) and -float(np.sum(np.log(cand))) < f0 + 1e-15:
                    break
                t *= 0.5
            if t <= 1e-14:
                break
            x = x + t * direction

    out = np.zeros(n)
    out[support] = x
    return out


# ---------------------------------------------------------------------------
# calibrated-martingale constraint assembly


def martingale_marginal_system(
    p: JointMeasure, nu: DiscreteMeasure, support: np.ndarray | None = None
) -> tuple[LinearSystem, np.ndarray]:
    """Constraints for {q >= 0 on supp p, columns = nu, conditional mean x}.

    Variables are the entries of the coupling flattened row-major over the
    allowed support (supp p intersected with the columns where nu is
    positive).  Returns the system together with the boolean cell mask.
    """
    if nu.grid != p.ygrid:
        raise ValidationError("marginal grid does not match joint y-grid")
    if support is None:
        support = (p.w > 0) & (nu.weights[None, :] > 0)
    m, n = p.w.shape
    cells = np.argwhere(support)
    nvar = cells.shape[0]
    if nvar == 0:
        raise InfeasibleError("empty support")
    rows = []
    rhs = []
    for j in range(n):
        row = np.zeros(nvar)
        row[cells[:, 1] == j] = 1.0
        rows.append(row)
        rhs.append(nu.weights[j])
    diff = p.ygrid.points[None, :] - p.xgrid.points[:, None]
    for i in range(m):
        sel = cells[:, 0] == i
        if not sel.any():
            continue
        row = np.zeros(nvar)
        row[sel] = diff[i, cells[sel, 1]]
        rows.append(row)
        rhs.append(0.0)
    return LinearSystem(np.array(rows), np.array(rhs)), support


def coupling_from_vector(p: JointMeasure, support: np.ndarray, x: np.ndarray) -> JointMeasure:
    w = np.zeros_like(p.w)
    w[support] = x
    return JointMeasure(p.xgrid, p.ygrid, w)


# ---------------------------------------------------------------------------
# brute-force entropy minimizer


def _kkt_residual(null, q, p_flat):
    grad = np.log(q) - np.log(p_flat) + 1.0
    return float(np.abs(null.T @ grad).max(initial=0.0))


def brute_force_bridge(
    p: JointMeasure,
    nu: DiscreteMeasure,
    tol: float = 1e-11,
    max_outer: int = 60,
) -> tuple[JointMeasure, float]:
    """Reference minimizer of sum q log(q/p) over calibrated martingale laws.

    Proximal-point iteration in the Kullback-Leibler geometry: each step
    minimizes f(q) + (1/eta) KL(q | q_prev) over the constraint polytope,
    solved exactly by damped Newton in the null space of the constraints
    with a fraction-to-boundary line search.  Runs until the projected KKT
    residual drops below ``tol``.  Deliberately independent of the dual
    block-coordinate path in :mod:`msbridge.bridge`.
    """
    if len(p.xgrid) * len(p.ygrid) > 400:
        raise ValidationError("instance too large for the reference solver")
    system, support = martingale_marginal_system(p, nu)
    sup_mask = maximal_support(system)
    if not sup_mask.any():
        raise InfeasibleError("no calibrated martingale coupling exists")
    q = analytic_center(system, sup_mask)[sup_mask]
    a_sub = system.a[:, sup_mask]
    p_flat = p.w[support][sup_mask]

    _, s, vt = np.linalg.svd(a_sub, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max(initial=0.0))))
    null = vt[rank:].T

    if null.shape[1] == 0:  # constraints pin the coupling uniquely
        out = np.zeros(system.a.shape[1])
        out[sup_mask] = q
        joint = coupling_from_vector(p, support, out)
        return joint, _kl_flat(q, p_flat)

    eta = 10.0
    for _ in range(max_outer):
        q_prev = q.copy()
        q = _prox_newton(q, q_prev, p_flat, null, eta)
        if _kkt_residual(null, q, p_flat) <= tol:
            break
        eta *= 4.0
    else:
        raise ConvergenceError(
            "reference solver did not reach the KKT tolerance",
            residuals=_kkt_residual(null, q, p_flat),
        )

    out = np.zeros(system.a.shape[1])
    out[sup_mask] = q
    joint = coupling_from_vector(p, support, out)
    return joint, _kl_flat(q, p_flat)


def _kl_flat(q, p):
    pos = q > 0
    return float(np.sum(q[pos] * (np.log(q[pos]) - np.log(p[pos]))))


def _prox_newton(q0, anchor, p_flat, null, eta):
    """Minimize KL(q|p) + (1/eta) KL(q|anchor) over the affine slice."""
    w = 1.0 + 1.0 / eta
    log_target = (np.log(p_flat) + np.log(anchor) / eta) / w
    q = q0.copy()
    for _ in range(100):
        grad = w * (np.log(q) - log_target + 1.0)
        red_grad = null.T @ grad
        if float(np.abs(red_grad).max(initial=0.0)) <= 1e-13:
            break
        hess = null.T @ (null * (w / q)[:, None])
        step = np.linalg.solve(hess, -red_grad)
        direction = null @ step
        neg = direction < 0
        t = 1.0
        if neg.any():
            t = min(1.0, 0.99 * float(np.min(-q[neg] / direction[neg])))

        def objective(v):
            return float(np.sum(v * (w * np.log(v) - w * log_target)))

        f0 = objective(q)
        slope = float(red_grad @ step)
        while t > 1e-16:
            cand = q + t * direction
            if np.all(cand > 0) and objective(cand) <= f0 + 0.25 * t * slope:
                break
            t *= 0.5
        if t <= 1e-16:
            break
        q = q + t * direction
    return q
