"""Derivative-free box-constrained minimization: golden-section line search
inside cyclic coordinate descent, with deterministic multi-restart."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float,
                   max_evals: int = 200) -> tuple[float, float, int]:
    """Minimize a unimodal ``f`` on [a, b]; returns (x, f(x), evaluations)."""
    if b < a:
        a, b = b, a
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while (b - a) > tol and evals < max_evals:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        evals += 1
    if fc <= fd:
        return c, fc, evals
    return d, fd, evals


@dataclass
class CoordinateDescentResult:
    x: np.ndarray
    fun: float
    evals: int
    sweeps: int
    history: list


def coordinate_descent(f: Callable[[np.ndarray], float], x0: Sequence[float], lo: Sequence[float],
                       hi: Sequence[float], max_evals: int = 400, tol: float = 1e-4,
                       sweeps: int = 6, shrink: float = 0.5, f0: float | None = None
                       ) -> CoordinateDescentResult:
    """Cyclic coordinate descent with a golden-section line search per coordinate.

    The search bracket for coordinate i starts at the full range and shrinks by
    ``shrink`` each sweep, centred on the current iterate. ``tol`` is relative
    to each coordinate's range. The best value never increases.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = f(x) if f0 is None else f0
    evals = 1 if f0 is None else 0
    history = [fx]
    span = hi - lo
    radius = span.copy()
    done = 0
    for sweep in range(sweeps):
        if evals >= max_evals:
            break
        start = fx
        for i in range(len(x)):
            if span[i] <= 0 or evals >= max_evals:
                continue
            a = max(lo[i], x[i] - radius[i])
            b = min(hi[i], x[i] + radius[i])

            def line(v, i=i):
                y = x.copy()
                y[i] = v
                return f(y)

            xi, fi, n = golden_section(line, a, b, tol * span[i], max_evals=max_evals - evals)
            evals += n
            if fi < fx:
                x[i], fx = xi, fi
        history.append(fx)
        radius *= shrink
        done = sweep + 1
        if start - fx <= 1e-12 * max(1.0, abs(start)) and sweep > 0:
            break
    return CoordinateDescentResult(x, fx, evals, done, history)


def multistart(f, lo, hi, starts: Sequence[Sequence[float]], **kw) -> CoordinateDescentResult:
    """Run coordinate descent from each start; lowest value wins, ties to the first."""
    best = None
    for s in starts:
        res = coordinate_descent(f, s, lo, hi, **kw)
        if best is None or res.fun < best.fun:
            best = res
    return best
