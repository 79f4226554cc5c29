"""Bounded-stock approximation of calibrated martingale measures.

Given a calibrated martingale law Q with finite entropy relative to P and a
stock-position function h on the x-grid, the pipeline constructs a nearby
law whose first marginal only charges levels where |h| is controlled, while
keeping the terminal marginal, the martingale property, and finite entropy:

1. split the first marginal mu into a zero-barycenter part kept on an
   interval [lo, hi] and a remainder concentrated outside its interior;
2. further restrict the kept part to levels where |h| stays below a
   threshold chosen against a mass budget, re-centering the barycenter;
3. walk a shrinking restriction schedule until the rescaled kept part is
   dominated in convex order by the remainder;
4. transport the remainder via a mean-preserving (Strassen) kernel;
5. reassemble the coupling and certify marginal, martingale and entropy
   defects.

Per-delta runs are independent and could execute in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StabilizationError, ValidationError
from .measures import (
    DiscreteMeasure,
    Grid,
    JointMeasure,
    Kernel,
    barycenter,
    compose,
    convex_order_leq,
    disintegrate,
    joint_tv_distance,
    kernel_compose,
    relative_entropy,
    tv_distance,
)
from .oracle import LinearSystem, analytic_center, maximal_support

DEFECT_TOL = 1e-10


# ---------------------------------------------------------------------------
# density bounds and the conditional-entropy envelope


def density_bounds(p: JointMeasure, nu: DiscreteMeasure) -> tuple[float, float]:
    """Uniform bounds l <= dP(. | x)/dnu <= L over the product support.

    Requires every kernel row of P (on rows with mass) to be equivalent to
    ``nu`` on nu's support; the offending (x, y) pair is named otherwise.
    """
    if nu.grid != p.ygrid:
        raise ValidationError("marginal grid does not match joint y-grid")
    marg, kern = disintegrate(p)
    nu_pos = nu.weights > 0
    lo, hi = np.inf, 0.0
    for i in np.flatnonzero(marg.weights > 0):
        row = kern.rows[i]
        mismatch = (row > 0) != nu_pos
        if mismatch.any():
            j = int(np.flatnonzero(mismatch)[0])
            raise ValidationError(
                f"conditional law at x={p.xgrid.points[i]!r} is not equivalent "
                f"to the marginal at y={p.ygrid.points[j]!r}"
            )
        ratios = row[nu_pos] / nu.weights[nu_pos]
        lo = min(lo, float(ratios.min()))
        hi = max(hi, float(ratios.max()))
    if not np.isfinite(lo) or lo <= 0:
        raise ValidationError("density ratio lower bound is not positive")
    return lo, hi


def row_entropy_bound(q: JointMeasure, p: JointMeasure) -> DiscreteMeasure:
    """Per-level envelope dominating the conditional entropies across rows.

    The weight at x' is H(Q(.|x') | P(.|x')) + log(L/l) with (l, L) the
    density bounds; the pairwise domination
    H(Q(.|x') | P(.|x)) <= envelope(x') is re-verified over all row pairs
    as an integrity assertion.
    """
    if q.xgrid != p.xgrid or q.ygrid != p.ygrid:
        raise ValidationError("joint measures live on different grids")
    if not np.isfinite(relative_entropy(q, p)):
        raise ValidationError("not absolutely continuous")
    lo, hi = density_bounds(p, q.second_marginal())
    qm, qk = disintegrate(q)
    _, pk = disintegrate(p)
    n = len(p.xgrid)
    envelope = np.zeros(n)
    rows = np.flatnonzero(qm.weights > 0)
    cond = {}
    for i in rows:
        cond[i] = {
            j: _row_kl(qk.rows[i], pk.rows[j]) for j in rows
        }
        envelope[i] = cond[i][i] + np.log(hi / lo)
    for xp in rows:
        for x in rows:
            if cond[xp][x] > envelope[xp] + DEFECT_TOL:
                raise ValidationError(
                    f"conditional entropy at pair ({x}, {xp}) exceeds its envelope"
                )
    return DiscreteMeasure(p.xgrid, envelope)


def _row_kl(qrow, prow):
    pos = qrow > 0
    if np.any(prow[pos] <= 0):
        return float("inf")
    return float(np.sum(qrow[pos] * (np.log(qrow[pos]) - np.log(prow[pos]))))


# ---------------------------------------------------------------------------
# the marginal split


@dataclass(frozen=True)
class SplitResult:
    """Zero-barycenter decomposition of a marginal around an interval.

    ``inner`` is the part kept on [lo, hi]; ``target`` = mu - inner lives
    outside (lo, hi); ``source`` is inner rescaled to carry the same mass as
    ``target`` (the two are in convex order, source dominated by target).
    ``cutoff`` is the central threshold used for re-centering budgets.
    """

    lo: float
    hi: float
    cutoff: float
    delta: float
    mu: DiscreteMeasure
    inner: DiscreteMeasure
    source: DiscreteMeasure
    target: DiscreteMeasure


def _max_retention_trim(points, weights, lo, hi, order_tol=1e-14):
    """Keep all open-interval mass plus as much boundary-atom mass as a
    zero barycenter allows; returns the kept weights or None."""
    inside = (points > lo) & (points < hi)
    kept = np.where(inside, weights, 0.0)
    s = float(kept @ points)
    cap_a = float(weights[points == lo].sum())
    cap_b = float(weights[points == hi].sum())
    # solve lo*t_a + hi*t_b = -s maximizing t_a + t_b, 0 <= t <= caps
    t_b_hi = min(cap_b, (abs(lo) * cap_a - s) / hi)
    t_b_lo = max(0.0, -s / hi)
    if t_b_hi < t_b_lo - order_tol:
        return None
    t_b = max(t_b_lo, min(t_b_hi, cap_b))
    t_a = (s + hi * t_b) / abs(lo)
    t_a = min(max(t_a, 0.0), cap_a)
    if abs(lo * t_a + hi * t_b + s) > 1e-11:
        return None
    out = kept.copy()
    out[points == lo] = t_a
    out[points == hi] = t_b
    return out


def _carve_boundary_pair(points, kept, lo, hi, delta):
    """Move a zero-barycenter mass pair from the boundary atoms into the
    remainder so it is nonzero; returns the adjusted kept weights or None."""
    t_a = float(kept[points == lo].sum())
    t_b = float(kept[points == hi].sum())
    k = min(delta / (hi - lo), t_a / hi, t_b / abs(lo))
    if k <= 0:
        return None
    out = kept.copy()
    out[points == lo] = t_a - hi * k
    out[points == hi] = t_b - abs(lo) * k
    return out


def split_interval(mu: DiscreteMeasure, delta: float) -> SplitResult:
    """Split a zero-barycenter marginal into a kept interval part and a
    convex-order-dominating remainder.

    Scans support-point intervals [lo, hi] from the smallest outward for
    one whose closed tails carry at most ``delta`` mass while both trim
    zones (lo, -c] and [c, hi) hold at least ``delta``; boundary atoms are
    partially trimmed in closed form to zero the barycenter.  Marginals too
    coarse for that scan (heavy extreme atoms) fall back to carving a
    zero-barycenter pair out of the hull's boundary atoms, which covers
    two-point-style marginals exactly.
    """
    if not mu.is_probability(1e-9):
        raise ValidationError("marginal must be a probability measure")
    if abs(barycenter(mu)) > 1e-9:
        raise ValidationError("marginal must have zero barycenter")
    supp = mu.support()
    if supp.size < 2:
        raise ValidationError("marginal is a point mass")
    pts = mu.points
    w = mu.weights
    nonzero = np.abs(supp[supp != 0])
    if nonzero.size == 0:
        raise ValidationError("marginal is a point mass at zero")
    cutoff = float(nonzero.min())
    left_tail = float(w[pts <= -cutoff].sum())
    right_tail = float(w[pts >= cutoff].sum())
    delta_max = min(left_tail, right_tail)
    if not 0 < delta < delta_max:
        raise ValidationError(
            f"delta={delta!r} outside (0, {delta_max!r}) for this marginal"
        )

    lows = [float(v) for v in supp if v <= -cutoff]
    highs = [float(v) for v in supp if v >= cutoff]
    candidates = sorted(
        ((lo, hi) for lo in lows for hi in highs),
        key=lambda ab: (
            float(w[(pts > ab[0]) & (pts < ab[1])].sum()),
            abs(
                float(w[pts <= ab[0]].sum()) - float(w[pts >= ab[1]].sum())
            ),
            -ab[0],
            ab[1],
        ),
    )
    for lo, hi in candidates:
        tails = float(w[pts <= lo].sum() + w[pts >= hi].sum())
        zone_left = float(w[(pts > lo) & (pts <= -cutoff)].sum())
        zone_right = float(w[(pts >= cutoff) & (pts < hi)].sum())
        if tails > delta or zone_left < delta or zone_right < delta:
            continue
        kept = _max_retention_trim(pts, w, lo, hi)
        if kept is None:
            continue
        if float((w - kept).sum()) <= 1e-14:
            kept = _carve_boundary_pair(pts, kept, lo, hi, delta)
            if kept is None:
                continue
        result = _assemble_split(mu, kept, lo, hi, cutoff, delta)
        if result is not None:
            return result

    # Fallback: hull interval with a carved boundary pair.
    lo, hi = float(supp[0]), float(supp[-1])
    kept = _max_retention_trim(pts, w, lo, hi)
    if kept is not None:
        if float((w - kept).sum()) <= 1e-14:
            kept = _carve_boundary_pair(pts, kept, lo, hi, delta)
        if kept is not None:
            result = _assemble_split(mu, kept, lo, hi, cutoff, delta)
            if result is not None:
                return result
    raise StabilizationError("no admissible split interval for this marginal")


def _assemble_split(mu, kept, lo, hi, cutoff, delta):
    kept = np.maximum(kept, 0.0)
    inner = DiscreteMeasure(mu.grid, kept)
    mass = inner.mass
    if mass <= 0 or mass < 1.0 - delta - 1e-12:
        return None
    if abs(float(kept @ mu.points)) > 1e-10:
        return None
    rest = np.maximum(mu.weights - kept, 0.0)
    target = DiscreteMeasure(mu.grid, rest)
    if target.mass <= 0:
        return None
    source = inner.scaled(1.0 / mass - 1.0)
    if not convex_order_leq(source, target, 1e-9):
        return None
    return SplitResult(
        lo=lo,
        hi=hi,
        cutoff=cutoff,
        delta=delta,
        mu=mu,
        inner=inner,
        source=source,
        target=target,
    )


# ---------------------------------------------------------------------------
# restriction to bounded stock positions


def bounded_threshold(split: SplitResult, h, eps: float) -> float:
    """Smallest |h| threshold whose excluded interval mass fits the budget
    (delta ^ eps)/2 * min(1, c / max(|lo|, hi))."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    h = np.asarray(h, dtype=float)
    if h.size != len(split.mu.grid):
        raise ValidationError("stock vector length does not match the grid")
    pts = split.mu.points
    in_a = (pts >= split.lo) & (pts <= split.hi) & (split.mu.weights > 0)
    budget = (
        0.5
        * min(split.delta, eps)
        * min(1.0, split.cutoff / max(abs(split.lo), abs(split.hi)))
    )
    levels = np.unique(np.abs(h[in_a]))
    for tau in levels:
        excluded = float(split.mu.weights[in_a & (np.abs(h) > tau)].sum())
        if excluded <= budget + 1e-15:
            return float(tau)
    return float(levels[-1])


def restrict_bounded(split: SplitResult, h, eps: float) -> DiscreteMeasure:
    """Restrict the kept part to levels with |h| below the budgeted
    threshold, then re-center the barycenter by trimming mass greedily from
    the largest |x| levels (the fastest direction per unit mass).

    The result stays dominated by the kept part, has zero barycenter, and
    satisfies the variation and mass guarantees
    d_TV(result, kept) <= delta ^ eps and mass >= 1 - delta - delta ^ eps;
    inputs that cannot meet them raise :class:`StabilizationError`.
    """
    tau = bounded_threshold(split, h, eps)
    h = np.asarray(h, dtype=float)
    pts = split.mu.points
    kept = split.inner.weights.copy()
    kept[np.abs(h) > tau] = 0.0

    excess = float(kept @ pts)
    if excess > 0:
        order = np.argsort(-pts)  # trim from the largest level down
    else:
        order = np.argsort(pts)
    for idx in order:
        if abs(excess) <= 1e-16 or pts[idx] * excess <= 0 or kept[idx] <= 0:
            continue
        removable = min(kept[idx], excess / pts[idx])
        kept[idx] -= removable
        excess -= removable * pts[idx]
    if abs(excess) > 1e-11:
        raise StabilizationError("could not re-center the restricted marginal")

    out = DiscreteMeasure(split.mu.grid, kept)
    slack = min(split.delta, eps)
    if split.inner.mass - out.mass > slack + 1e-11:
        raise StabilizationError("restriction exceeded its variation budget")
    if out.mass < 1.0 - split.delta - slack - 1e-11:
        raise StabilizationError("restricted marginal lost too much mass")
    return out


# ---------------------------------------------------------------------------
# Strassen coupling


def strassen_coupling(a: DiscreteMeasure, b: DiscreteMeasure) -> Kernel:
    """Mean-preserving kernel transporting ``a`` onto ``b``.

    Exists exactly when a <=_c b (verified first).  The kernel solves the
    linear system {pi >= 0, row sums a, column sums b, row means a_i x_i};
    among feasible couplings the analytic center over the maximal support is
    selected, so the output is deterministic.  Rows off supp(a) are point
    masses at their own level, keeping the kernel mean-preserving grid-wide.
    """
    if not convex_order_leq(a, b, 1e-9):
        raise ValidationError("convex order a <=_c b does not hold")
    grid = Grid(np.union1d(a.grid.points, b.grid.points))
    wa = np.zeros(len(grid))
    wb = np.zeros(len(grid))
    wa[np.searchsorted(grid.points, a.points)] = a.weights
    wb[np.searchsorted(grid.points, b.points)] = b.weights
    src = np.flatnonzero(wa > 0)
    tgt = np.flatnonzero(wb > 0)
    cells = [(i, j) for i in src for j in tgt]
    nvar = len(cells)
    rows, rhs = [], []
    for i in src:
        sel = np.array([ci == i for ci, _ in cells], dtype=float)
        rows.append(sel)
        rhs.append(wa[i])
        rows.append(sel * np.array([grid.points[cj] for _, cj in cells]))
        rhs.append(wa[i] * grid.points[i])
    for j in tgt:
        rows.append(np.array([cj == j for _, cj in cells], dtype=float))
        rhs.append(wb[j])
    system = LinearSystem(np.array(rows), np.array(rhs))
    pi = analytic_center(system, maximal_support(system))

    kernel_rows = np.zeros((len(grid), len(grid)))
    kernel_rows[np.arange(len(grid)), np.arange(len(grid))] = 1.0
    for i in src:
        kernel_rows[i] = 0.0
    for (i, j), mass in zip(cells, pi):
        kernel_rows[i, j] += mass
    kernel_rows[src] /= wa[src, None]
    kern = Kernel(grid, grid, kernel_rows)

    push = wa @ kern.rows
    marginal_defect = float(np.abs(push - wb).max(initial=0.0))
    means = kern.rows[src] @ grid.points
    mean_defect = float(np.abs(means - grid.points[src]).max(initial=0.0))
    if marginal_defect > DEFECT_TOL or mean_defect > DEFECT_TOL:
        raise ValidationError(
            f"coupling defects too large (marginal {marginal_defect:.3e}, "
            f"mean {mean_defect:.3e})"
        )
    return kern


def convex_order_stability_probe(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    schedule: list[tuple[DiscreteMeasure, DiscreteMeasure]],
    tol: float = 1e-9,
) -> int | None:
    """First schedule index (1-based) from which convex order holds through
    the horizon; ``None`` when the order never stabilizes (out of
    hypothesis, for instance when the second sequence drifts in W1)."""
    if not convex_order_leq(a, b, tol):
        raise ValidationError("base pair is not in convex order")
    for m, name in ((a, "first"), (b, "second")):
        if abs(barycenter(m)) > 1e-8:
            raise ValidationError(f"base {name} measure must have zero barycenter")
    verdicts = []
    for an, bn in schedule:
        if abs(barycenter(an)) > 1e-8 or abs(barycenter(bn)) > 1e-8:
            raise ValidationError("schedule measures must have zero barycenter")
        verdicts.append(convex_order_leq(an, bn, tol))
    for n in range(len(verdicts)):
        if all(verdicts[n:]):
            return n + 1
    return None


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class ApproxOutput:
    """One bounded-stock approximation run.

    ``q_approx`` keeps the terminal marginal and martingale property of the
    input law within 1e-10 while its first marginal only charges levels with
    |h| <= ``h_bound``; ``q_keep``/``q_move`` are the two mixture components
    whose entropies verify the convexity bound, mixed with weight
    ``keep_mass``.
    """

    q_approx: JointMeasure
    delta: float
    h_bound: float
    tv_to_q: float
    entropy: float
    entropy_gap: float
    keep_mass: float
    schedule_index: int
    split: SplitResult
    coupling: Kernel
    q_keep: JointMeasure
    q_move: JointMeasure


def bounded_approximation(
    q: JointMeasure,
    p: JointMeasure,
    h,
    delta: float,
    eps_schedule: list[float] | None = None,
    horizon: int = 40,
) -> ApproxOutput:
    """Build the bounded-stock approximation of ``q`` at scale ``delta``.

    Runs the split, walks the restriction schedule (default eps_n =
    delta * 2^-n) until the rescaled kept part is convex-order dominated by
    the remainder, transports the remainder through the Strassen kernel
    composed with the conditional law of ``q``, and reassembles.  The output
    satisfies, within 1e-10 each: second marginal equal to q's, martingale
    rows, support contained in supp P, and |h| <= h_bound on the support of
    its first marginal; total variation to ``q`` is at most 2*delta.
    """
    h = np.asarray(h, dtype=float)
    if q.xgrid != p.xgrid or q.ygrid != p.ygrid:
        raise ValidationError("joint measures live on different grids")
    row_entropy_bound(q, p)  # validates density bounds and finite entropy

    mu = q.first_marginal()
    shift = barycenter(mu)
    shifted = DiscreteMeasure(Grid(mu.points - shift), mu.weights)
    split = split_interval(shifted, delta)

    if eps_schedule is None:
        eps_schedule = [delta * 2.0 ** (-n) for n in range(1, horizon + 1)]
    chosen = None
    for n, eps in enumerate(eps_schedule, start=1):
        lam = restrict_bounded(split, h, eps)
        if lam.mass <= 0:
            continue
        source = lam.scaled(1.0 / lam.mass - 1.0)
        target = DiscreteMeasure(shifted.grid, shifted.weights - lam.weights)
        if target.mass <= 0:
            continue
        if convex_order_leq(source, target, 1e-9):
            chosen = (n, eps, lam, source, target)
            break
    if chosen is None:
        raise StabilizationError(
            "convex order did not stabilize within the restriction schedule"
        )
    n0, eps0, lam_s, source_s, target_s = chosen
    tau = bounded_threshold(split, h, eps0)

    transport = strassen_coupling(source_s, target_s)
    # Rebuild the kernel on the original (unshifted) grid; the coupling was
    # built on the full shifted grid, so the row weights carry over by index.
    move = Kernel(mu.grid, mu.grid, transport.rows)

    _, q_kernel = disintegrate(q)
    moved_kernel = kernel_compose(move, q_kernel)
    lam0 = DiscreteMeasure(mu.grid, lam_s.weights)
    source0 = DiscreteMeasure(mu.grid, source_s.weights)
    w_approx = (
        lam0.weights[:, None] * q_kernel.rows
        + source0.weights[:, None] * moved_kernel.rows
    )
    q_approx = JointMeasure(q.xgrid, q.ygrid, w_approx)

    nu = q.second_marginal()
    marg_defect = tv_distance(q_approx.second_marginal(), nu)
    d = q.ygrid.points[None, :] - q.xgrid.points[:, None]
    rows_mass = q_approx.w.sum(axis=1)
    pos = rows_mass > 0
    mart_defect = float(
        np.max(np.abs((q_approx.w * d).sum(axis=1))[pos] / rows_mass[pos], initial=0.0)
    )
    if marg_defect > DEFECT_TOL or mart_defect > DEFECT_TOL:
        raise StabilizationError(
            f"approximation defects too large (marginal {marg_defect:.3e}, "
            f"martingale {mart_defect:.3e})"
        )
    if np.any(p.w[q_approx.w > 0] <= 0):
        raise StabilizationError("approximation left the reference support")
    supp1 = q_approx.first_marginal().weights > 0
    if np.any(np.abs(h[supp1]) > tau * (1 + 1e-12) + 1e-15):
        raise StabilizationError("stock bound violated on the approximate support")

    keep_mass = lam0.mass
    mu_bar = lam0.normalized()
    q_keep = compose(mu_bar, q_kernel)
    q_move = compose(mu_bar, moved_kernel)
    entropy = relative_entropy(q_approx, p)
    return ApproxOutput(
        q_approx=q_approx,
        delta=delta,
        h_bound=float(tau),
        tv_to_q=joint_tv_distance(q_approx, q),
        entropy=float(entropy),
        entropy_gap=float(abs(entropy - relative_entropy(q, p))),
        keep_mass=float(keep_mass),
        schedule_index=n0,
        split=split,
        coupling=move,
        q_keep=q_keep,
        q_move=q_move,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    delta: float
    tv_to_q: float
    entropy: float
    entropy_gap: float
    h_bound: float
    keep_mass: float
    convexity_margin: float  # bound rhs minus entropy, nonnegative


def entropy_convergence_report(
    q: JointMeasure,
    p: JointMeasure,
    h,
    deltas: list[float],
    eps_schedule: list[float] | None = None,
    tol: float | None = None,
) -> list[ConvergenceRow]:
    """Run the pipeline along decreasing deltas and tabulate convergence.

    Each row re-checks the entropy convexity bound
    H(approx | P) <= keep_mass * H(q_keep | P) + (1 - keep_mass) * H(q_move | P)
    within 1e-10.  With ``tol`` set, the final row must meet it in both
    variation and entropy gap.
    """
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValidationError("deltas must be strictly decreasing")
    out = []
    for delta in deltas:
        run = bounded_approximation(q, p, h, delta, eps_schedule=eps_schedule)
        bound = run.keep_mass * relative_entropy(run.q_keep, p) + (
            1.0 - run.keep_mass
        ) * relative_entropy(run.q_move, p)
        margin = float(bound - run.entropy)
        if margin < -DEFECT_TOL:
            raise StabilizationError(
                f"entropy convexity bound violated by {-margin:.3e} at delta={delta}"
            )
        out.append(
            ConvergenceRow(
                delta=delta,
                tv_to_q=run.tv_to_q,
                entropy=run.entropy,
                entropy_gap=run.entropy_gap,
                h_bound=run.h_bound,
                keep_mass=run.keep_mass,
                convexity_margin=margin,
            )
        )
    if tol is not None:
        last = out[-1]
        if last.tv_to_q > tol or last.entropy_gap > tol:
            raise StabilizationError(
                f"convergence target {tol} not met at delta={last.delta} "
                f"(tv {last.tv_to_q:.3e}, entropy gap {last.entropy_gap:.3e})"
            )
    return out
