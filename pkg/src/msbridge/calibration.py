"""Implied terminal marginal from European call quotes.

Discrete Breeden-Litzenberger on a non-uniform strike grid: interior mass is
the jump of the piecewise-linear price slope (divided differences), boundary
mass is chosen so the recovered measure has total mass one and mean equal to
the forward implied by put-call parity at the lowest strike.  Quotes are
undiscounted (zero rates, the two-period market convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .measures import DiscreteMeasure, Grid

BUTTERFLY_TOL = 1e-12


@dataclass(frozen=True)
class CallQuote:
    strike: float
    price: float

    def __post_init__(self):
        if not np.isfinite(self.strike) or not np.isfinite(self.price):
            raise ValidationError("quote fields must be finite")
        if self.price < 0:
            raise ValidationError("call price must be nonnegative")


@dataclass(frozen=True)
class Violation:
    """One static-arbitrage defect: ``kind`` is monotonicity, slope,
    convexity or boundary; ``strikes`` names the offending strike pair."""

    kind: str
    strikes: tuple[float, ...]
    magnitude: float


@dataclass(frozen=True)
class CalibrationReport:
    nu: DiscreteMeasure
    forward: float
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def arbitrage_free(self) -> bool:
        return len(self.violations) == 0


def _validate_quotes(quotes):
    if len(quotes) < 3:
        raise ValidationError("need at least 3 call quotes")
    strikes = np.array([q.strike for q in quotes], dtype=float)
    prices = np.array([q.price for q in quotes], dtype=float)
    if np.any(np.diff(strikes) <= 0):
        raise ValidationError("strikes must be sorted strictly ascending")
    return strikes, prices


def _implied_weights(strikes, prices):
    """Interior slope jumps plus the boundary pair matching mass and mean."""
    slopes = np.diff(prices) / np.diff(strikes)
    interior = slopes[1:] - slopes[:-1]
    forward = prices[0] + strikes[0]
    boundary_mass = 1.0 - interior.sum()
    boundary_mean = forward - float(interior @ strikes[1:-1])
    k_lo, k_hi = strikes[0], strikes[-1]
    w_hi = (boundary_mean - boundary_mass * k_lo) / (k_hi - k_lo)
    w_lo = boundary_mass - w_hi
    weights = np.concatenate([[w_lo], interior, [w_hi]])
    return weights, slopes, forward


def check_static_arbitrage(quotes: list[CallQuote], tol: float = BUTTERFLY_TOL) -> list[Violation]:
    """Flag quote sheets whose implied measure would carry negative mass.

    Checks monotonicity (prices nonincreasing in strike), slopes within
    [-1, 0], convexity (butterflies), and the boundary-mass pair implied by
    the forward; the list is empty exactly when :func:`implied_marginal`
    yields a nonnegative measure.
    """
    strikes, prices = _validate_quotes(quotes)
    slopes = np.diff(prices) / np.diff(strikes)
    violations = []
    for i, s in enumerate(slopes):
        pair = (float(strikes[i]), float(strikes[i + 1]))
        if s > tol:
            violations.append(Violation("monotonicity", pair, float(s)))
        if s < -1.0 - tol:
            violations.append(Violation("slope", pair, float(-1.0 - s)))
    for i in range(1, len(slopes)):
        jump = slopes[i] - slopes[i - 1]
        if jump < -tol:
            violations.append(
                Violation("convexity", (float(strikes[i]),), float(-jump))
            )
    weights, _, _ = _implied_weights(strikes, prices)
    for idx in (0, len(weights) - 1):
        if weights[idx] < -tol:
            violations.append(
                Violation("boundary", (float(strikes[idx]),), float(-weights[idx]))
            )
    return violations


def implied_marginal(quotes: list[CallQuote]) -> CalibrationReport:
    """Recover the risk-neutral terminal marginal from sorted call quotes.

    Mass below the lowest (above the highest) strike collapses onto that end
    strike; butterfly and boundary defects are reported rather than silently
    clipped, and the returned measure clamps negative weights to zero in
    that case.
    """
    strikes, prices = _validate_quotes(quotes)
    weights, _, forward = _implied_weights(strikes, prices)
    violations = tuple(check_static_arbitrage(quotes))
    clipped = np.maximum(weights, 0.0)
    nu = DiscreteMeasure(Grid(strikes), clipped)
    return CalibrationReport(nu=nu, forward=float(forward), violations=violations)


def price_calls(nu: DiscreteMeasure, strikes) -> np.ndarray:
    """Undiscounted call prices E[(Y-K)^+] under ``nu`` at the given strikes."""
    strikes = np.asarray(strikes, dtype=float)
    payoff = np.maximum(nu.points[None, :] - strikes[:, None], 0.0)
    return payoff @ nu.weights
