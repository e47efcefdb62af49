"""Lower envelopes of vertically shifted parabolas and pinball curves.

Every curve in a family has the same shape (unit-leading-coefficient
parabola, or pinball loss with a shared level ``beta``) and differs only by a
vertical offset ``c`` and a horizontal location. The pointwise minimum of such
a family is a step function of ``y`` that names the winning curve on each
interval ``(k_{l-1}, k_l]``. Two members cross at most once, which is what
makes the divide-and-conquer merge below exact.

Model indices are 0-based. Ties go to the lowest index.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .losses import pinball

PARABOLA = "parabola"
PINBALL = "pinball"


@dataclass(frozen=True)
class ShiftedParabola:
    index: int
    c: float
    mu: float

    def __call__(self, y):
        return self.c + (np.asarray(y, dtype=np.float64) - self.mu) ** 2


@dataclass(frozen=True)
class ShiftedPinball:
    index: int
    c: float
    yhat: float
    beta: float

    def __call__(self, y):
        return self.c + pinball(y, self.yhat, self.beta)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant model index over the real line.

    ``indices[l]`` is the winner on ``(knots[l-1], knots[l]]`` with
    ``knots[-1] = -inf`` and ``knots[L] = +inf`` implied.
    """

    knots: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(indices) != len(knots) + 1:
            raise ValueError("need exactly one more index than knots")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "indices", indices)

    def __eq__(self, other):
        return (isinstance(other, StepFunction) and np.array_equal(self.knots, other.knots)
                and np.array_equal(self.indices, other.indices))

    def __len__(self):
        return len(self.indices)

    def segment_at(self, y):
        """Model index selected at ``y`` (scalar or array)."""
        pos = np.searchsorted(self.knots, y, side="left")
        return self.indices[pos]

    def intervals(self):
        """Yield ``(lo, hi, index)`` for every segment, ``lo`` exclusive."""
        bounds = np.concatenate([[-np.inf], self.knots, [np.inf]])
        for l, idx in enumerate(self.indices):
            yield bounds[l], bounds[l + 1], int(idx)


def _family_arrays(family, kind):
    if len(family) == 0:
        raise ValueError("empty family")
    idx = np.array([f.index for f in family], dtype=np.int64)
    c = np.array([f.c for f in family], dtype=np.float64)
    if kind == PARABOLA:
        loc = np.array([f.mu for f in family], dtype=np.float64)
        beta = None
    else:
        loc = np.array([f.yhat for f in family], dtype=np.float64)
        betas = {f.beta for f in family}
        if len(betas) != 1:
            raise ValueError(f"pinball family mixes levels {sorted(betas)}")
        beta = betas.pop()
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("duplicate model indices in family")
    return idx, c, loc, beta


class _Envelope:
    """Divide-and-conquer lower envelope over arrays of offsets and locations."""

    def __init__(self, kind, idx, c, loc, beta=None):
        self.kind = kind
        self.idx = idx
        self.c = c
        self.loc = loc
        self.beta = beta

    def pair(self, i, j):
        """Winner pieces of curves at positions i, j over the whole line.

        Returns ``(knots, winners)`` with positions (not model labels).
        """
        tie = i if self.idx[i] < self.idx[j] else j
        dc = self.c[i] - self.c[j]
        a, b = self.loc[i], self.loc[j]
        if a == b:
            return [], [i if dc < 0 else j if dc > 0 else tie]
        if self.kind == PARABOLA:
            # c_i + (y-a)^2 - c_j - (y-b)^2 crosses zero once
            r = dc / (2.0 * (a - b)) + 0.5 * (a + b)
            return ([r], [i, j]) if a < b else ([r], [j, i])
        if a > b:
            i, j, a, b, dc = j, i, b, a, -dc
        beta = self.beta
        # f_i - f_j is nondecreasing: flat at d_left below a, flat at d_right above b
        d_left = dc + (1.0 - beta) * (a - b)
        d_right = dc + beta * (b - a)
        if d_left > 0:
            return [], [j]
        if d_right < 0:
            return [], [i]
        if d_left == 0:
            return [a], [tie, j]
        if d_right == 0:
            return [b], [i, tie]
        r = -dc + beta * a + (1.0 - beta) * b
        return [r], [i, j]

    def build(self, lo, hi):
        if hi - lo == 1:
            return [], [lo]
        mid = (lo + hi) // 2
        return self.merge(self.build(lo, mid), self.build(mid, hi))

    def merge(self, env1, env2):
        k1, w1 = env1
        k2, w2 = env2
        out_k, out_w = [], []
        p1 = p2 = 0
        lo = -np.inf
        while True:
            hi = min(k1[p1] if p1 < len(k1) else np.inf, k2[p2] if p2 < len(k2) else np.inf)
            if hi > lo:
                pk, pw = self.pair(w1[p1], w2[p2])
                for k, w in zip(pk, pw):
                    if lo < k < hi:
                        _push(out_k, out_w, k, w)
                # winner just below hi
                _push(out_k, out_w, hi, pw[bisect_left(pk, hi)])
            if hi == np.inf:
                break
            while p1 < len(k1) and k1[p1] == hi:
                p1 += 1
            while p2 < len(k2) and k2[p2] == hi:
                p2 += 1
            lo = hi
        out_k.pop()  # the +inf sentinel
        return out_k, out_w


def _push(knots, winners, k, w):
    """Close the current segment at ``k`` with winner ``w``, merging equal neighbours."""
    if winners and winners[-1] == w:
        knots[-1] = k
    else:
        knots.append(k)
        winners.append(w)


def _envelope(kind, idx, c, loc, beta=None):
    env = _Envelope(kind, idx, c, loc, beta)
    knots, winners = env.build(0, len(idx))
    return StepFunction(np.array(knots, dtype=np.float64), idx[np.array(winners, dtype=np.int64)])


def parabola_lower_envelope(family: Sequence[ShiftedParabola]) -> StepFunction:
    """Lower envelope of ``c_t + (y - mu_t)^2`` over the family."""
    idx, c, loc, _ = _family_arrays(family, PARABOLA)
    return _envelope(PARABOLA, idx, c, loc)


def pinball_lower_envelope(family: Sequence[ShiftedPinball]) -> StepFunction:
    """Lower envelope of ``c_t + rho_beta(y, yhat_t)``; ``beta`` must be shared."""
    idx, c, loc, beta = _family_arrays(family, PINBALL)
    return _envelope(PINBALL, idx, c, loc, beta)


def envelope_from_arrays(kind, c, loc, beta=None):
    """Array front-end: model ``t`` has offset ``c[t]`` and location ``loc[t]``."""
    c = np.asarray(c, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    if c.shape != loc.shape or c.ndim != 1 or len(c) == 0:
        raise ValueError("c and loc must be nonempty 1-d arrays of equal length")
    if kind == PINBALL and not (beta is not None and 0 < beta < 1):
        raise ValueError("pinball envelope needs beta in (0, 1)")
    return _envelope(kind, np.arange(len(c)), c, loc, beta)


@dataclass(frozen=True)
class Partition:
    """Merged knots of a low and a high envelope.

    Interval ``l`` is ``(bounds[l], bounds[l+1]]`` and carries the winning
    model of each envelope. Zero-width intervals are kept.
    """

    knots: np.ndarray
    low: np.ndarray
    high: np.ndarray

    def intervals(self):
        bounds = np.concatenate([[-np.inf], self.knots, [np.inf]])
        for l in range(len(self.low)):
            yield bounds[l], bounds[l + 1], int(self.low[l]), int(self.high[l])


def concat_and_sort_knots(env_low: StepFunction, env_high: StepFunction) -> Partition:
    knots = np.sort(np.concatenate([env_low.knots, env_high.knots]))
    right = np.concatenate([knots, [np.inf]])
    low = env_low.indices[np.searchsorted(env_low.knots, right, side="left")]
    high = env_high.indices[np.searchsorted(env_high.knots, right, side="left")]
    return Partition(knots, low, high)


def family_values(family, y):
    """Matrix of curve values, shape ``(len(family), len(y))``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return np.stack([f(y) for f in family])


def brute_force_argmin(family, y):
    """Index of the lowest curve at ``y`` by linear scan; ties to the lowest index."""
    best_val, best_idx = np.inf, None
    for f in family:
        v = float(f(y))
        if v < best_val or (v == best_val and (best_idx is None or f.index < best_idx)):
            best_val, best_idx = v, f.index
    return best_idx


def line_lower_envelope(slopes, intercepts):
    """Lower envelope of lines ``slope * y + intercept`` by the monotone hull sweep.

    Independent cross-check for parabola families, which reduce to lines
    after subtracting ``y^2``. Returns a StepFunction over 0-based positions.
    """
    m = np.asarray(slopes, dtype=np.float64)
    q = np.asarray(intercepts, dtype=np.float64)
    # steepest slope wins at -inf; among equal slopes keep the lowest intercept then index
    order = sorted(range(len(m)), key=lambda t: (-m[t], q[t], t))
    hull, starts = [], []
    for t in order:
        if hull and m[hull[-1]] == m[t]:
            continue
        while hull:
            s = hull[-1]
            x = (q[t] - q[s]) / (m[s] - m[t])
            if x <= starts[-1]:
                hull.pop()
                starts.pop()
            else:
                break
        starts.append(-np.inf if not hull else (q[t] - q[hull[-1]]) / (m[hull[-1]] - m[t]))
        hull.append(t)
    return StepFunction(np.array(starts[1:]), np.array(hull))
