"""Independent oracles used by the tests.

Everything here checks results by brute force or numerics only — none of it
shares code with the library's closed-form implementations.
"""

import numpy as np


def median_of(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def trimmed_mean_of(values, trim: int) -> float:
    values = np.sort(np.asarray(values, dtype=np.float64))
    return float(values[trim:values.size - trim].mean())


def brute_median_interval(q, m: int, probe: float = 1e6) -> tuple[float, float]:
    """Median interval reachable by appending m values, found by pushing all
    appended values far below / far above the benign range."""
    q = np.asarray(q, dtype=np.float64)
    lo = median_of(np.concatenate([q, np.full(m, q.min() - probe)]))
    hi = median_of(np.concatenate([q, np.full(m, q.max() + probe)]))
    return lo, hi


def brute_trimmed_interval(q, m: int, probe: float = 1e6) -> tuple[float, float]:
    """Trimmed-mean interval reachable by appending m values (trim m per side)."""
    q = np.asarray(q, dtype=np.float64)
    lo = trimmed_mean_of(np.concatenate([q, np.full(m, q.min() - probe)]), m)
    hi = trimmed_mean_of(np.concatenate([q, np.full(m, q.max() + probe)]), m)
    return lo, hi


def grid_argmin(w: float, w_benign: float, lower: float, upper: float, lam: float, points: int = 100_001) -> float:
    """Dense-grid minimizer of (x - w)^2 - lam * (x - w_benign)^2 on [lower, upper]."""
    grid = np.linspace(lower, upper, points)
    objective = (grid - w) ** 2 - lam * (grid - w_benign) ** 2
    return float(grid[int(np.argmin(objective))])


def finite_difference_gradient(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function."""
    grad = np.empty_like(x, dtype=np.float64)
    for k in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[k] += h
        lo[k] -= h
        grad[k] = (fn(hi) - fn(lo)) / (2.0 * h)
    return grad
