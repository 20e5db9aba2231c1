"""Shared numeric routines: quadrature over [0, inf) and monotone inversion.

Conventions used throughout the package:

* semi-infinite integrals are evaluated window by window, doubling the window
  edge each time, and declared divergent when the window contributions stop
  decaying;
* quantile-type inversions use bracketing bisection on a monotone function to
  an absolute tolerance of 1e-12 (robust near flat density regions, and every
  CDF we invert is monotone by construction).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DivergentIntegralError

QUAD_TOL = 1e-10
QUANTILE_TOL = 1e-12
SURVIVAL_FLOOR = 1e-14


def quad(func: Callable[[float], float], lo: float, hi: float,
         points: Sequence[float] | None = None, tol: float = QUAD_TOL) -> float:
    """Adaptive quadrature on a finite interval.

    `points` marks known kinks (density crossovers) so the subdivision does
    not have to discover them.
    """
    if hi <= lo:
        return 0.0
    pts = None
    if points is not None:
        pts = [p for p in points if lo < p < hi]
        if not pts:
            pts = None
    value, _ = integrate.quad(func, lo, hi, points=pts,
                              epsabs=tol, epsrel=tol, limit=200)
    return value


@lru_cache(maxsize=8)
def _gauss_nodes(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def gauss_window(func: Callable[[np.ndarray], np.ndarray], lo: float,
                 hi: float, order: int = 64) -> float:
    """Fixed-order Gauss-Legendre on [lo, hi]; func must accept arrays."""
    nodes, weights = _gauss_nodes(order)
    half = 0.5 * (hi - lo)
    x = lo + half * (nodes + 1.0)
    return float(half * np.dot(weights, np.asarray(func(x), dtype=float)))


def windowed_tail_integral(func: Callable[[float], float], start: float = 0.0,
                           first_width: float = 1.0, tol: float = 1e-11,
                           max_windows: int = 200,
                           gauss_order: int | None = None) -> float:
    """Integrate func over [start, inf) with geometric windows.

    Windows run [x, 2x] once past the first unit-ish window.  Convergence is
    declared when two consecutive windows contribute less than `tol` of the
    running total; divergence when contributions grow for three consecutive
    windows while staying non-negligible.

    With `gauss_order` set, each window uses fixed Gauss-Legendre points and
    `func` must be vectorized; this trades adaptive error control for speed
    on integrands known to be smooth within a window.
    """
    edge = start
    nxt = max(2.0 * start, start + first_width)
    total = 0.0
    small_streak = 0
    grow_streak = 0
    prev = np.inf
    for _ in range(max_windows):
        if gauss_order is None:
            part = quad(func, edge, nxt)
        else:
            part = gauss_window(func, edge, nxt, gauss_order)
        total += part
        scale = max(abs(total), 1e-300)
        if abs(part) <= tol * scale:
            small_streak += 1
            if small_streak >= 2:
                return total
        else:
            small_streak = 0
        if abs(part) >= abs(prev) and abs(part) > tol * scale:
            grow_streak += 1
            if grow_streak >= 3:
                raise DivergentIntegralError(
                    f"tail contributions not decaying past {edge!r}")
        else:
            grow_streak = 0
        prev = part
        edge, nxt = nxt, 2.0 * nxt
    raise DivergentIntegralError(
        f"no convergence after {max_windows} windows (last edge {edge!r})")


def invert_monotone(func: Callable[[np.ndarray], np.ndarray],
                    targets: np.ndarray | float,
                    lo: np.ndarray | float, hi: np.ndarray | float,
                    tol: float = QUANTILE_TOL, increasing: bool = True,
                    max_iter: int = 200) -> np.ndarray | float:
    """Vectorized bracketing bisection: solve func(x) = target per element.

    `func` must accept and return arrays.  Brackets may be scalars or arrays
    broadcastable against `targets`.  Stops when every bracket is narrower
    than `tol` (absolute, in x).
    """
    t = np.asarray(targets, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    a = np.broadcast_to(np.asarray(lo, dtype=float), t.shape).copy()
    b = np.broadcast_to(np.asarray(hi, dtype=float), t.shape).copy()
    for _ in range(max_iter):
        # freeze converged elements so each trajectory is independent of
        # what else sits in the batch (scalar and vector calls then agree
        # to the last bit)
        active = (b - a) > tol
        if not np.any(active):
            break
        mid = 0.5 * (a + b)
        fm = func(mid)
        go_right = (fm < t) if increasing else (fm > t)
        a = np.where(active & go_right, mid, a)
        b = np.where(active & ~go_right, mid, b)
    out = 0.5 * (a + b)
    return float(out[0]) if scalar else out


def grow_bracket(func: Callable[[float], float], target: float,
                 start: float = 1.0, factor: float = 2.0,
                 max_steps: int = 300, increasing: bool = True) -> float:
    """Scalar doubling search for an upper bracket with func(x) past target."""
    x = start
    for _ in range(max_steps):
        v = func(x)
        if (v >= target) if increasing else (v <= target):
            return x
        x *= factor
    raise DivergentIntegralError(
        f"could not bracket target {target!r} within {max_steps} doublings")


def sign_change_brackets(values: np.ndarray, grid: np.ndarray) -> list[tuple[float, float]]:
    """Brackets [grid[i], grid[i+1]] where `values` changes sign.

    Exact zeros are treated as belonging to the left bracket; ties over
    whole segments (identical densities) yield no brackets.
    """
    s = np.sign(values)
    # carry the previous nonzero sign through exact zeros
    carried = s.copy()
    for i in range(1, len(carried)):
        if carried[i] == 0:
            carried[i] = carried[i - 1]
    flips = np.nonzero(carried[1:] * carried[:-1] < 0)[0]
    return [(float(grid[i]), float(grid[i + 1])) for i in flips]


def jackknife_mean(values: np.ndarray) -> tuple[float, float]:
    """Mean of `values` with delete-one jackknife standard error."""
    x = np.asarray(values, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    mean = float(x.mean())
    if n == 1:
        return mean, 0.0
    loo = (x.sum() - x) / (n - 1)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return mean, se


def ks_statistic(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a given CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    c = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - c
    lower = c - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.abs(fa - fb).max())
