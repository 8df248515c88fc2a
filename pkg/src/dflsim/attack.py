"""Crafting of shared models by colluding selfish clients.

The selfish clients send their true models to each other but craft what they
send to every non-selfish receiver.  Per receiver the crafted shares steer
the receiver's aggregate, coordinate by coordinate, to the constrained
optimum of

    L(x) = (x - w)^2 - lam * (x - w_benign)^2

where ``w`` is the receiver's own pre-aggregation coordinate, ``w_benign``
the benign-only aggregate, and the feasible interval is exactly the set of
aggregates the selfish coalition can reach.  Closed-form crafting routines
make the receiver's aggregation rule hit that optimum exactly for FedAvg,
coordinate-wise median and trimmed mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .aggregation import AggregationRule, agg_fedavg, agg_median, agg_trimmed_mean, cosine_similarity
from .core import (
    DegenerateDenominator,
    IndexOutOfRange,
    InvalidBounds,
    NonMonotonicRound,
    NotSorted,
    OutOfBounds,
    SearchFailure,
)

# treat lam this close to 1 as exactly 1 (the objective degenerates to linear)
LAMBDA_ONE_TOLERANCE = 1e-9

# constants of the flame-tailored crafting
FLAME_ALPHA = 5.0
FLAME_BETA = 0.01
FLAME_DENOM_EPS = 1e-12


@dataclass(frozen=True)
class CoordinateBounds:
    """Closed interval of aggregates reachable on one coordinate."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise InvalidBounds(f"bounds must be finite, got [{self.lower}, {self.upper}]")
        if self.lower > self.upper:
            raise InvalidBounds(f"lower {self.lower} exceeds upper {self.upper}")

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def clamp(self, x: float) -> float:
        return min(max(x, self.lower), self.upper)


# ---------------------------------------------------------------------------
# per-coordinate optimum
# ---------------------------------------------------------------------------

def solve_optimal_coordinate(w: float, w_benign: float, bounds: CoordinateBounds, lam: float) -> float:
    """Minimize ``(x-w)^2 - lam*(x-w_benign)^2`` over ``bounds``.

    For ``lam < 1`` the objective is strictly convex with stationary point
    ``p = (w - lam*w_benign) / (1 - lam)``, so the answer is ``p`` clamped.
    For ``lam == 1`` it is linear and an endpoint wins (lower on ties).
    For ``lam > 1`` it is concave, so the endpoint farther from ``p`` wins
    (lower on ties).
    """
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if abs(lam - 1.0) <= LAMBDA_ONE_TOLERANCE:
        return bounds.upper if w > w_benign else bounds.lower
    p = (w - lam * w_benign) / (1.0 - lam)
    if lam < 1.0:
        return bounds.clamp(p)
    return bounds.upper if abs(p - bounds.upper) > abs(p - bounds.lower) else bounds.lower


# ---------------------------------------------------------------------------
# reachable intervals
# ---------------------------------------------------------------------------

def _check_descending(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("benign coordinates must be a non-empty 1-D sequence")
    if np.any(np.diff(q) > 0.0):
        raise NotSorted("benign coordinates must be sorted in descending order")
    return q


def fedavg_bounds(q: Sequence[float]) -> CoordinateBounds:
    """Mean of benign plus m crafted values can land anywhere in [min, max]
    of the benign values (and, with unbounded shares, beyond; the attack
    restricts itself to the benign range)."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("need at least one benign value")
    return CoordinateBounds(float(q.min()), float(q.max()))


def median_bounds(q: Sequence[float], m: int) -> CoordinateBounds:
    """Interval the median of ``q`` plus ``m`` crafted values can reach.

    ``q`` must be sorted descending.  Pushing all crafted values above the
    benign maximum (or below the minimum) shifts the median rank by m in
    either direction, which gives the endpoints.
    """
    q = _check_descending(q)
    n = q.size
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n < m + 1:
        raise IndexOutOfRange(f"median bounds need n >= m + 1, got n={n}, m={m}")
    upper = 0.5 * (q[(n - m - 1) // 2] + q[(n - m) // 2])
    lower = 0.5 * (q[(n + m - 1) // 2] + q[(n + m) // 2])
    return CoordinateBounds(float(lower), float(upper))


def trimmed_mean_bounds(q: Sequence[float], m: int) -> CoordinateBounds:
    """Interval the trimmed mean (m per side) of ``q`` plus ``m`` crafted
    values can reach: means of the top and bottom n-m benign values."""
    q = _check_descending(q)
    n = q.size
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n <= m:
        raise IndexOutOfRange(f"trimmed-mean bounds need n > m, got n={n}, m={m}")
    upper = float(q[: n - m].mean())
    lower = float(q[m:].mean())
    return CoordinateBounds(lower, upper)


# ---------------------------------------------------------------------------
# crafting for one coordinate
# ---------------------------------------------------------------------------

def craft_fedavg(q: Sequence[float], target: float, m: int) -> np.ndarray:
    """Crafted values whose mean together with ``q`` equals ``target``.

    One value absorbs the correction, the other m - 1 sit at the target.
    """
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    bounds = fedavg_bounds(q)
    if not bounds.contains(target):
        raise OutOfBounds(f"target {target} outside [{bounds.lower}, {bounds.upper}]")
    crafted = np.full(m, target, dtype=np.float64)
    crafted[0] = (n + 1) * target - q.sum()
    return crafted


def craft_median(q: Sequence[float], target: float, m: int, b: float = 1.0) -> np.ndarray:
    """Crafted values that drive the median of ``q`` plus them to ``target``.

    ``q`` must be sorted descending.  When the target sits strictly above
    q[(n-m)//2] (possible only for even totals) one value is reflected so
    the two middle entries average to the target while the rest park above
    the benign maximum; symmetrically below; otherwise all crafted values
    equal the target.
    """
    q = _check_descending(q)
    n = q.size
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if b <= 0.0:
        raise ValueError(f"b must be > 0, got {b}")
    bounds = median_bounds(q, m)
    if not bounds.contains(target):
        raise OutOfBounds(f"target {target} outside [{bounds.lower}, {bounds.upper}]")
    upper_pivot = q[(n - m) // 2]
    lower_pivot = q[(n + m - 1) // 2]
    crafted = np.empty(m, dtype=np.float64)
    if target > upper_pivot:
        crafted[0] = 2.0 * target - upper_pivot
        crafted[1:] = q[0] + b
    elif target < lower_pivot:
        crafted[0] = 2.0 * target - lower_pivot
        crafted[1:] = q[-1] - b
    else:
        crafted[:] = target
    return crafted


def craft_trimmed_mean(q: Sequence[float], target: float, m: int, b: float = 1.0) -> np.ndarray:
    """Crafted values that drive the trimmed mean (m per side) of ``q`` plus
    them to ``target``.

    ``q`` must be sorted descending.  Depending on which side of the benign
    trimmed mean the target lies, some crafted values park strictly outside
    the benign range to shift which benign values get trimmed, and the rest
    take a common value that lands the surviving mean exactly on the target.
    """
    q = _check_descending(q)
    n = q.size
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if b <= 0.0:
        raise ValueError(f"b must be > 0, got {b}")
    if n < 2 * m + 1:
        raise IndexOutOfRange(f"crafting needs n >= 2m + 1, got n={n}, m={m}")
    bounds = trimmed_mean_bounds(q, m)
    if not bounds.contains(target):
        raise OutOfBounds(f"target {target} outside [{bounds.lower}, {bounds.upper}]")
    benign_trimmed = float(q[m:n - m].mean())
    crafted = np.empty(m, dtype=np.float64)

    if target <= benign_trimmed:
        # park values below the benign minimum so low benign entries survive
        # the trim; the largest feasible r keeps the filler value ordered
        for r in range(n, n - m - 1, -1):
            threshold = ((n - r) * q[m - 1] + q[m:r].sum()) / (n - m)
            if target <= threshold:
                break
        else:
            raise SearchFailure("no feasible split found below the benign trimmed mean")
        crafted[: m - n + r] = q[-1] - b
        if r < n:
            crafted[m - n + r:] = ((n - m) * target - q[m:r].sum()) / (n - r)
    else:
        # symmetric case above the benign trimmed mean
        for r in range(-1, m):
            threshold = ((r + 1) * q[n - m] + q[r + 1:n - m].sum()) / (n - m)
            if target >= threshold:
                break
        else:
            raise SearchFailure("no feasible split found above the benign trimmed mean")
        crafted[: m - r - 1] = q[0] + b
        if r >= 0:
            crafted[m - r - 1:] = ((n - m) * target - q[r + 1:n - m].sum()) / (r + 1)
    return crafted


# ---------------------------------------------------------------------------
# flame-tailored crafting
# ---------------------------------------------------------------------------

def craft_flame_attack(
    receiver_pre_agg: np.ndarray,
    benign_shares: Sequence[np.ndarray],
    m: int,
    alpha: float = FLAME_ALPHA,
    beta: float = FLAME_BETA,
) -> np.ndarray:
    """Crafted shares against the clustering defense, all m identical.

    The benign shares closest in cosine distance to the receiver's own model
    (ties by sender index) anchor the construction so the crafted shares
    stay inside the majority cluster while biasing the clipped average.
    """
    receiver_pre_agg = np.asarray(receiver_pre_agg, dtype=np.float64)
    benign = [np.asarray(s, dtype=np.float64) for s in benign_shares]
    n = len(benign)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n <= m:
        raise ValueError(f"need more benign shares than selfish clients, got n={n}, m={m}")
    take = (n - m) // 2
    dists = np.array([1.0 - cosine_similarity(s, receiver_pre_agg) for s in benign])
    order = np.argsort(dists, kind="stable")
    selected = order[:take]
    denom = take + alpha - beta * n
    if abs(denom) < FLAME_DENOM_EPS:
        raise DegenerateDenominator(f"crafting denominator {denom} too close to zero")
    total_selected = np.sum([benign[i] for i in selected], axis=0) if take > 0 else np.zeros_like(receiver_pre_agg)
    total_benign = np.sum(benign, axis=0)
    crafted = (total_selected + alpha * receiver_pre_agg - beta * total_benign) / denom
    return np.tile(crafted, (m, 1))


# ---------------------------------------------------------------------------
# attack-start detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackStartDetector:
    """Detects the training plateau at which crafting should begin.

    Tracks the running minimum of the coalition's mean training loss; once
    the drop over the last ``interval`` rounds is positive but below
    ``epsilon`` times the largest drop seen so far, ``started`` latches True.
    Rounds must be fed consecutively; the detector is an immutable value and
    ``update`` returns the successor state.
    """

    epsilon: float = 0.1
    interval: int = 50
    best_loss_history: tuple[float, ...] = ()
    max_gap: float = 0.0
    started: bool = False
    last_round: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")

    def update(self, mean_selfish_loss: float, round_t: int) -> "AttackStartDetector":
        if self.last_round is not None and round_t != self.last_round + 1:
            raise NonMonotonicRound(
                f"rounds must advance by one, got {round_t} after {self.last_round}"
            )
        previous_best = self.best_loss_history[-1] if self.best_loss_history else np.inf
        best = min(previous_best, float(mean_selfish_loss))
        history = self.best_loss_history + (best,)
        max_gap = self.max_gap
        started = self.started
        if not started and len(history) > self.interval:
            gap = history[-1 - self.interval] - history[-1]
            max_gap = max(max_gap, gap)
            if 0.0 < gap < self.epsilon * max_gap:
                started = True
        return replace(
            self,
            best_loss_history=history,
            max_gap=max_gap,
            started=started,
            last_round=round_t,
        )


# ---------------------------------------------------------------------------
# full-vector crafting
# ---------------------------------------------------------------------------

def default_lambda(rule_kind: str) -> float:
    """Per-rule default of the trade-off weight."""
    return {"fedavg": 0.0, "median": 0.5, "trimmed_mean": 1.0}.get(rule_kind, 0.0)


def craft_shared_model(
    rule: AggregationRule,
    receiver_pre_agg: np.ndarray,
    benign_shares: Sequence[np.ndarray],
    m: int,
    lam: float,
    b: float = 1.0,
) -> np.ndarray:
    """Craft the m shares the coalition sends to one non-selfish receiver.

    ``benign_shares`` are the n models the non-selfish clients send (the
    receiver's own entry included).  Rules without a tailored construction
    (krum, fltrust) receive the FedAvg-based crafting.  Returns an (m, d)
    array; row k is the share of selfish sender n + k.
    """
    if rule.kind == "flame":
        return craft_flame_attack(receiver_pre_agg, benign_shares, m)

    receiver_pre_agg = np.asarray(receiver_pre_agg, dtype=np.float64)
    benign = np.stack([np.asarray(s, dtype=np.float64) for s in benign_shares])
    dim = benign.shape[1]
    crafted = np.empty((m, dim), dtype=np.float64)

    if rule.kind == "median":
        benign_agg = agg_median(benign)
        sorted_desc = -np.sort(-benign, axis=0)
        for k in range(dim):
            q = sorted_desc[:, k]
            bounds = median_bounds(q, m)
            target = solve_optimal_coordinate(receiver_pre_agg[k], benign_agg[k], bounds, lam)
            crafted[:, k] = craft_median(q, target, m, b)
    elif rule.kind == "trimmed_mean":
        benign_agg = agg_trimmed_mean(benign, m)
        sorted_desc = -np.sort(-benign, axis=0)
        for k in range(dim):
            q = sorted_desc[:, k]
            bounds = trimmed_mean_bounds(q, m)
            target = solve_optimal_coordinate(receiver_pre_agg[k], benign_agg[k], bounds, lam)
            crafted[:, k] = craft_trimmed_mean(q, target, m, b)
    else:
        # fedavg and the rules attacked through the fedavg construction
        benign_agg = agg_fedavg(benign)
        for k in range(dim):
            q = benign[:, k]
            bounds = fedavg_bounds(q)
            target = solve_optimal_coordinate(receiver_pre_agg[k], benign_agg[k], bounds, lam)
            crafted[:, k] = craft_fedavg(q, target, m)
    return crafted
