"""Discrete measures on real grids: entropy, distances, convex order.

All types are immutable after construction and every operation is a pure
function, so everything here is safe to evaluate concurrently.  Binary
operations on measures living on different grids first merge the grids by
sorted union with exact point matching (no fuzzy snapping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MASS_TOL = 1e-12
ROW_TOL = 1e-10


def _as_float_array(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing finite list of real price levels."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_float_array(self.points, "grid points")
        if pts.size < 1:
            raise ValidationError("grid must contain at least one point")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValidationError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def index_of(self, x: float) -> int:
        """Index of an exactly matching grid point."""
        i = int(np.searchsorted(self.points, x))
        if i < len(self) and self.points[i] == x:
            return i
        raise ValidationError(f"point {x!r} is not on the grid")


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Nonnegative weights on a grid; sub-probability measures are allowed."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = _as_float_array(self.weights, "weights")
        if w.size != len(self.grid):
            raise ValidationError("weights and grid have different lengths")
        # Tolerate tiny negative round-off from LP solves, reject real negatives.
        if np.any(w < -MASS_TOL):
            raise ValidationError("weights must be nonnegative")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def support(self) -> np.ndarray:
        return self.points[self.weights > 0]

    def normalized(self) -> "DiscreteMeasure":
        m = self.mass
        if m <= 0:
            raise ValidationError("cannot normalize an empty measure")
        return DiscreteMeasure(self.grid, self.weights / m)

    def scaled(self, factor: float) -> "DiscreteMeasure":
        if factor < 0:
            raise ValidationError("scale factor must be nonnegative")
        return DiscreteMeasure(self.grid, self.weights * factor)


def point_mass(x: float) -> DiscreteMeasure:
    return DiscreteMeasure(Grid(np.array([x])), np.array([1.0]))


def from_atoms(points, weights) -> DiscreteMeasure:
    """Measure from unsorted atoms; weights on duplicate points accumulate."""
    pts = _as_float_array(points, "points")
    w = _as_float_array(weights, "weights")
    if pts.size != w.size:
        raise ValidationError("points and weights have different lengths")
    uniq, inv = np.unique(pts, return_inverse=True)
    acc = np.zeros(uniq.size)
    np.add.at(acc, inv, w)
    return DiscreteMeasure(Grid(uniq), acc)


@dataclass(frozen=True, eq=False)
class JointMeasure:
    """Nonnegative matrix of masses on the product of two grids."""

    xgrid: Grid
    ygrid: Grid
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.shape != (len(self.xgrid), len(self.ygrid)):
            raise ValidationError("weight matrix shape does not match grids")
        if not np.all(np.isfinite(w)):
            raise ValidationError("joint weights contain non-finite values")
        if np.any(w < -MASS_TOL):
            raise ValidationError("joint weights must be nonnegative")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def mass(self) -> float:
        return float(self.w.sum())

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def first_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.xgrid, self.w.sum(axis=1))

    def second_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.ygrid, self.w.sum(axis=0))


@dataclass(frozen=True, eq=False)
class Kernel:
    """Row-stochastic family of conditional measures on ``ygrid``.

    Rows attached to zero-mass source points follow whatever convention the
    producer documents (uniform for disintegrations, a point mass for
    martingale couplings); they are never read on the measure's support.
    """

    xgrid: Grid
    ygrid: Grid
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (len(self.xgrid), len(self.ygrid)):
            raise ValidationError("kernel shape does not match grids")
        if np.any(rows < -MASS_TOL) or not np.all(np.isfinite(rows)):
            raise ValidationError("kernel rows must be finite and nonnegative")
        rows = np.maximum(rows, 0.0)
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ValidationError("kernel rows must each have mass 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def row(self, i: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.ygrid, self.rows[i])


# ---------------------------------------------------------------------------
# grid merging


def merge_grids(a: Grid, b: Grid) -> Grid:
    return Grid(np.union1d(a.points, b.points))


def on_grid(m: DiscreteMeasure, grid: Grid) -> np.ndarray:
    """Weights of ``m`` re-indexed onto a super-grid (exact point matching)."""
    idx = np.searchsorted(grid.points, m.points)
    if np.any(idx >= len(grid)) or not np.array_equal(grid.points[idx], m.points):
        raise ValidationError("target grid does not contain all source points")
    out = np.zeros(len(grid))
    out[idx] = m.weights
    return out


def _common_weights(a: DiscreteMeasure, b: DiscreteMeasure):
    grid = merge_grids(a.grid, b.grid)
    return grid, on_grid(a, grid), on_grid(b, grid)


# ---------------------------------------------------------------------------
# moments and quantiles


def barycenter(m: DiscreteMeasure) -> float:
    """Mass-weighted mean of the atoms."""
    if m.mass <= 0:
        raise ValidationError("empty measure")
    return float(np.dot(m.weights, m.points) / m.mass)


def _quantile_data(m: DiscreteMeasure):
    """Support points, cumulative probabilities and suffix means of m/mass."""
    if m.mass <= 0:
        raise ValidationError("empty measure")
    keep = m.weights > 0
    x = m.points[keep]
    p = m.weights[keep] / m.mass
    cum = np.cumsum(p)
    # suffix[k] = sum_{j >= k} p_j x_j, suffix[n] = 0
    suffix = np.concatenate([np.cumsum((p * x)[::-1])[::-1], [0.0]])
    return x, p, cum, suffix


def _tail_integral(x, cum, suffix, u):
    """Exact value of the piecewise-linear map u -> int_u^1 F^{-1}(p) dp."""
    k = int(np.searchsorted(cum, u, side="left"))
    if k >= x.size:
        k = x.size - 1
    return float((cum[k] - u) * x[k] + suffix[k + 1])


def quantile_integral(m: DiscreteMeasure, u: float) -> float:
    """Integral of the quantile function of m/m.mass over (u, 1).

    Uses the right-continuous CDF convention F^{-1}(p) = inf{y : F(y) >= p};
    at u = 0 the value equals the barycenter of the normalized measure.
    """
    if not 0.0 <= u <= 1.0:
        raise ValidationError(f"u={u} outside [0, 1]")
    x, _, cum, suffix = _quantile_data(m)
    return _tail_integral(x, cum, suffix, u)


# ---------------------------------------------------------------------------
# convex order


def _check_equal_mass(a, b, tol):
    if a.mass <= 0 or b.mass <= 0:
        raise ValidationError("empty measure")
    if abs(a.mass - b.mass) > tol:
        raise ValidationError(
            f"mass mismatch: {a.mass!r} vs {b.mass!r} beyond tolerance {tol!r}"
        )


def convex_order_leq(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-9) -> bool:
    """Quantile-integral test for a <=_c b (equal-mass measures).

    Both tail integrals are piecewise linear and concave in u, so comparing
    them at every breakpoint of either quantile function is exact.  Equality
    of barycenters is required at u = 0.
    """
    _check_equal_mass(a, b, tol)
    xa, _, ca, sa = _quantile_data(a)
    xb, _, cb, sb = _quantile_data(b)
    if abs(_tail_integral(xa, ca, sa, 0.0) - _tail_integral(xb, cb, sb, 0.0)) > tol:
        return False
    for u in np.union1d(ca, cb):
        if u >= 1.0:
            continue
        if _tail_integral(xa, ca, sa, u) > _tail_integral(xb, cb, sb, u) + tol:
            return False
    return True


def convex_order_calls(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-9) -> bool:
    """Call-function test for a <=_c b: means agree and every call price
    E[(Y-k)^+] under ``a`` is dominated by the one under ``b``.

    Checking strikes at the union of the supports is exact for finitely
    supported measures, which makes this an independent cross-check for
    :func:`convex_order_leq`.
    """
    _check_equal_mass(a, b, tol)
    mean_a = float(np.dot(a.weights, a.points))
    mean_b = float(np.dot(b.weights, b.points))
    if abs(mean_a - mean_b) > tol * max(1.0, a.mass):
        return False
    strikes = np.union1d(a.support(), b.support())
    calls_a = np.maximum(a.points[None, :] - strikes[:, None], 0.0) @ a.weights
    calls_b = np.maximum(b.points[None, :] - strikes[:, None], 0.0) @ b.weights
    return bool(np.all(calls_a <= calls_b + tol))


@dataclass(frozen=True)
class EqualitySet:
    """Endpoints of the set where two tail quantile integrals agree.

    The agreement set is (0, alpha] union [beta, 1); ``full_equality`` marks
    the degenerate case where the measures coincide and the set is all of
    (0, 1), reported as (1, 1).
    """

    alpha: float
    beta: float
    full_equality: bool


def equality_set(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-9) -> EqualitySet:
    """Locate where the tail quantile integrals of ``a`` and ``b`` coincide.

    Requires the interval/complement geometry: ``a`` lives on the closed hull
    [lo, hi] of its support and ``b`` on the complement of (lo, hi), both with
    equal mass and zero barycenter.  Under those hypotheses the agreement set
    is (0, alpha] union [beta, 1).
    """
    _check_equal_mass(a, b, tol)
    lo, hi = float(a.support().min()), float(a.support().max())
    b_supp = b.support()
    if np.any((b_supp > lo) & (b_supp < hi)):
        raise ValidationError("second measure has mass strictly inside the interval")
    for m, name in ((a, "first"), (b, "second")):
        if abs(barycenter(m)) > tol:
            raise ValidationError(f"{name} measure must have zero barycenter")
    if not convex_order_leq(a, b, tol):
        raise ValidationError("convex order a <=_c b does not hold")

    xa, _, ca, sa = _quantile_data(a)
    xb, _, cb, sb = _quantile_data(b)
    breaks = np.union1d(ca, cb)
    breaks = breaks[(breaks > 0.0) & (breaks < 1.0)]
    gaps = np.array(
        [
            _tail_integral(xb, cb, sb, u) - _tail_integral(xa, ca, sa, u)
            for u in breaks
        ]
    )
    equal = gaps <= tol
    if equal.all():
        return EqualitySet(1.0, 1.0, True)
    first_gap = int(np.argmin(equal))  # first breakpoint with a strict gap
    alpha = float(breaks[first_gap - 1]) if first_gap > 0 else 0.0
    last_gap = len(breaks) - 1 - int(np.argmin(equal[::-1]))
    beta = float(breaks[last_gap + 1]) if last_gap + 1 < len(breaks) else 1.0
    return EqualitySet(alpha, beta, False)


# ---------------------------------------------------------------------------
# entropy


def _kl_arrays(q: np.ndarray, p: np.ndarray) -> float:
    q = q.ravel()
    p = p.ravel()
    pos = q > 0
    if np.any(p[pos] <= 0):
        return float("inf")
    return float(np.sum(q[pos] * (np.log(q[pos]) - np.log(p[pos]))))


def relative_entropy(q, p) -> float:
    """Kullback-Leibler divergence sum q log(q/p); +inf off absolute continuity.

    Accepts a pair of :class:`JointMeasure` on identical grids or a pair of
    :class:`DiscreteMeasure` (merged onto the common grid).
    """
    if isinstance(q, JointMeasure) and isinstance(p, JointMeasure):
        if q.xgrid != p.xgrid or q.ygrid != p.ygrid:
            raise ValidationError("joint measures live on different grids")
        return _kl_arrays(q.w, p.w)
    if isinstance(q, DiscreteMeasure) and isinstance(p, DiscreteMeasure):
        _, wq, wp = _common_weights(q, p)
        return _kl_arrays(wq, wp)
    raise ValidationError("relative_entropy expects two measures of the same kind")


def disintegrate(j: JointMeasure) -> tuple[DiscreteMeasure, Kernel]:
    """Split a joint law into its first marginal and conditional kernel.

    Rows of zero-mass source points are set to the uniform row so the kernel
    is total; compose() never reads them on the marginal's support.
    """
    marg = j.first_marginal()
    n = len(j.ygrid)
    rows = np.full((len(j.xgrid), n), 1.0 / n)
    pos = marg.weights > 0
    rows[pos] = j.w[pos] / marg.weights[pos, None]
    return marg, Kernel(j.xgrid, j.ygrid, rows)


def compose(m: DiscreteMeasure, k: Kernel) -> JointMeasure:
    """Joint law with first marginal ``m`` and conditionals ``k``."""
    if m.grid != k.xgrid:
        raise ValidationError("marginal grid does not match kernel source grid")
    return JointMeasure(k.xgrid, k.ygrid, m.weights[:, None] * k.rows)


def entropy_chain(q: JointMeasure, p: JointMeasure) -> tuple[float, float]:
    """Entropy decomposition along the disintegration.

    Returns (marginal term, conditional term); the two add up to
    relative_entropy(q, p) whenever that value is finite.
    """
    total = relative_entropy(q, p)
    if not np.isfinite(total):
        raise ValidationError("not absolutely continuous")
    q1, qk = disintegrate(q)
    p1, pk = disintegrate(p)
    h1 = _kl_arrays(q1.weights, p1.weights)
    cond = 0.0
    for i in np.flatnonzero(q1.weights > 0):
        cond += q1.weights[i] * _kl_arrays(qk.rows[i], pk.rows[i])
    return h1, cond


# ---------------------------------------------------------------------------
# distances


def tv_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Total variation in the set-supremum convention sup_A |a(A) - b(A)|.

    For equal-mass measures this equals half the L1 distance of the weight
    vectors; for sub-probabilities with a <= b it equals (b - a)(R).
    """
    _, wa, wb = _common_weights(a, b)
    diff = wa - wb
    return float(max(diff[diff > 0].sum(initial=0.0), -diff[diff < 0].sum(initial=0.0)))


def joint_tv_distance(a: JointMeasure, b: JointMeasure) -> float:
    """Set-supremum total variation for joint laws on identical grids."""
    if a.xgrid != b.xgrid or a.ygrid != b.ygrid:
        raise ValidationError("joint measures live on different grids")
    diff = (a.w - b.w).ravel()
    return float(max(diff[diff > 0].sum(initial=0.0), -diff[diff < 0].sum(initial=0.0)))


def w1_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """1-Wasserstein distance of the normalized measures.

    Exact piecewise evaluation of the quantile-function integral
    int_0^1 |F_a^{-1} - F_b^{-1}| dp; requires equal masses.
    """
    _check_equal_mass(a, b, MASS_TOL * max(1.0, a.mass, b.mass))
    xa, _, ca, _ = _quantile_data(a)
    xb, _, cb, _ = _quantile_data(b)
    edges = np.union1d(np.concatenate([[0.0], ca]), np.concatenate([[0.0], cb]))
    edges = np.clip(edges, 0.0, 1.0)
    total = 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        if right <= left:
            continue
        mid = 0.5 * (left + right)
        qa = xa[min(int(np.searchsorted(ca, mid, side="left")), xa.size - 1)]
        qb = xb[min(int(np.searchsorted(cb, mid, side="left")), xb.size - 1)]
        total += (right - left) * abs(qa - qb)
    return float(total)


def normalized_tv_bound(lam: DiscreteMeasure, mu: DiscreteMeasure) -> tuple[float, float]:
    """TV between the normalizations of 0 != lam <= mu, with its mass bound.

    Returns (d_TV(lam/lam(R), mu/mu(R)), (mu - lam)(R) / mu(R)); the first
    value never exceeds the second beyond round-off.
    """
    grid, wl, wm = _common_weights(lam, mu)
    if np.any(wl > wm + MASS_TOL):
        raise ValidationError("first measure is not dominated by the second")
    if wl.sum() <= 0:
        raise ValidationError("first measure is zero")
    lam_m = DiscreteMeasure(grid, wl)
    mu_m = DiscreteMeasure(grid, wm)
    tv = tv_distance(lam_m.normalized(), mu_m.normalized())
    bound = (mu_m.mass - lam_m.mass) / mu_m.mass
    if tv > bound + MASS_TOL:
        raise ValidationError("tv bound violated beyond round-off")
    return tv, float(bound)


# ---------------------------------------------------------------------------
# kernel composition


def kernel_compose(m: Kernel, q: Kernel, mean_tol: float = 1e-10) -> Kernel:
    """Compose two stochastic kernels: row x of the result is the q-mixture
    sum_{x'} m(x, x') q(x', .).

    Row-stochasticity is preserved.  When every q-row has barycenter equal to
    its source point and every m-row has barycenter equal to its own source
    point, the output rows inherit those barycenters; this mean preservation
    is asserted within ``mean_tol``.
    """
    if m.ygrid != q.xgrid:
        raise ValidationError("intermediate grids do not match")
    rows = m.rows @ q.rows
    out = Kernel(m.xgrid, q.ygrid, rows)
    q_means = q.rows @ q.ygrid.points
    if np.all(np.abs(q_means - q.xgrid.points) <= mean_tol):
        m_means = m.rows @ m.ygrid.points
        out_means = rows @ q.ygrid.points
        defect = float(np.max(np.abs(out_means - m_means)))
        if defect > 10 * mean_tol:
            raise ValidationError(
                f"mean preservation violated by {defect:.3e} in kernel composition"
            )
    return out
