"""Coverage lower bounds for naive early stopping and the level correction they imply.

Selecting the best of ``T`` models on a hold-out set and then reusing that set
for calibration breaks exchangeability. The bounds below lower-bound the
coverage of such a procedure run at level ``alpha``; ``corrected_level``
searches for the working level that restores a target coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .special import betaincinv

DKW = "dkw"
MARKOV = "markov"
MARKOV_ASYMPTOTIC = "markov_asymptotic"
HYBRID = "hybrid"
KINDS = (DKW, MARKOV, MARKOV_ASYMPTOTIC, HYBRID)

# floor(alpha * (n + 1)) must not drop a whole unit to rounding, e.g. 0.1 * 10
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class BoundInputs:
    T: int
    n: int
    alpha: float
    b: float = 100.0
    c_T: float = 1.0 / 3.0

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.b > 1.0:
            raise ValueError(f"b must exceed 1, got {self.b}")

    def with_alpha(self, alpha):
        return BoundInputs(self.T, self.n, alpha, self.b, self.c_T)


@dataclass(frozen=True)
class BoundResult:
    """``value`` lower-bounds coverage. ``vacuous`` marks bounds carrying no information."""

    kind: str
    value: float
    vacuous: bool = False


def dkw_bound(inputs):
    n = inputs.n
    value = ((1.0 + 1.0 / n) * (1.0 - inputs.alpha)
             - (math.sqrt(math.log(2.0 * inputs.T) / 2.0) + inputs.c_T) / math.sqrt(n))
    return BoundResult(DKW, value, value <= 0.0)


def markov_rank(inputs):
    return math.floor(inputs.alpha * (inputs.n + 1) + _FLOOR_SLACK)


def markov_bound(inputs):
    """Inverse-beta bound; vacuous (value ``-inf``) when ``alpha * (n + 1) < 1``."""
    l = markov_rank(inputs)
    if l < 1:
        return BoundResult(MARKOV, -math.inf, True)
    q = betaincinv(1.0 / (inputs.b * inputs.T), inputs.n + 1 - l, l)
    value = q * (1.0 - 1.0 / inputs.b)
    return BoundResult(MARKOV, value, value <= 0.0)


def markov_asymptotic(inputs):
    """Large-``n`` closed form of :func:`markov_bound`."""
    a, n = inputs.alpha, inputs.n
    value = ((1.0 - a) - math.sqrt(a * (1.0 - a) / (n + 1)) * math.sqrt(2.0 * math.log(inputs.b * inputs.T))) \
        * (1.0 - 1.0 / inputs.b)
    return BoundResult(MARKOV_ASYMPTOTIC, value, value <= 0.0)


def hybrid_bound(inputs):
    d = dkw_bound(inputs)
    m = markov_bound(inputs)
    value = max(d.value, m.value)
    return BoundResult(HYBRID, value, value <= 0.0)


def all_bounds(inputs):
    return {r.kind: r for r in (dkw_bound(inputs), markov_bound(inputs),
                                 markov_asymptotic(inputs), hybrid_bound(inputs))}


def corrected_level(target_alpha, inputs, tol=1e-6):
    """Largest working level whose hybrid bound still guarantees ``1 - target_alpha``.

    ``inputs.alpha`` is ignored. Returns ``0.0`` when no positive level works;
    a level of zero means every test point is accepted (trivially conservative).
    """
    if not 0.0 < target_alpha < 1.0:
        raise ValueError(f"target_alpha must lie in (0, 1), got {target_alpha}")
    goal = 1.0 - target_alpha

    def ok(a):
        return hybrid_bound(inputs.with_alpha(a)).value >= goal

    if ok(target_alpha):
        return target_alpha
    lo, hi = min(tol, target_alpha / 2.0), target_alpha
    if not ok(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
