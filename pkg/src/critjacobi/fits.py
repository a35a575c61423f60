"""Slope extraction and grid helpers for certifying O(n^-s) decay claims.

Fits run on float log-magnitudes (taken with mpmath first, so values like
e^-600 never overflow a double); the heavy arithmetic stays arbitrary
precision upstream.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from mpmath import mp


def geometric_grid(lo: int, hi: int, count: int = 24) -> list[int]:
    """At least `count` distinct integers geometrically spaced in [lo, hi]
    (fewer only when the range itself is shorter than `count`)."""
    if lo < 1 or hi < lo:
        raise ValueError(f"bad grid range [{lo}, {hi}]")
    if hi == lo:
        return [lo]
    span = hi - lo + 1
    target = min(max(count, 2), span)
    n_pts = target
    while True:
        ratio = (hi / lo) ** (1.0 / (n_pts - 1))
        pts = sorted({min(hi, max(lo, round(lo * ratio ** k))) for k in range(n_pts)})
        if len(pts) >= target or len(pts) >= span:
            return pts
        n_pts += max(1, target - len(pts))


def loglog_fit(points: Sequence[tuple[int, object]]) -> tuple[float, float]:
    """Least-squares fit log|v| = slope*log n + intercept.

    Zero values are skipped; at least three usable points are required.
    """
    xs, ys = [], []
    for n, v in points:
        v = abs(v)
        if v == 0:
            continue
        xs.append(math.log(n))
        ys.append(float(mp.log(v)))
    if len(xs) < 3:
        raise ValueError(f"need at least 3 nonzero points for a slope fit, got {len(xs)}")
    slope, intercept = np.polyfit(np.array(xs), np.array(ys), 1)
    return float(slope), float(intercept)


def loglog_slope(points: Sequence[tuple[int, object]]) -> float:
    return loglog_fit(points)[0]


def fit_on_grid(f: Callable[[int], object], lo: int, hi: int, count: int = 24) -> tuple[float, list]:
    grid = geometric_grid(lo, hi, count)
    pts = [(n, f(n)) for n in grid]
    return loglog_slope(pts), pts


def richardson2(v_half, v_full, step_ratio: int, order) -> object:
    """Two-point Richardson extrapolation removing a c*n^-order correction,
    given samples at n/step_ratio and n."""
    beta = mp.mpf(step_ratio) ** (-mp.mpf(order))
    return (v_full - beta * v_half) / (1 - beta)
