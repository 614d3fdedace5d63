"""Full-batch optimizers over a flat parameter vector.

``fun(x)`` must return ``(f, g)``. Evaluations that raise
:class:`~rpinn.autodiff.EvaluationError` or return non-finite values are
treated as ``f = inf`` and are never accepted.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import EvaluationError

log = logging.getLogger(__name__)


@dataclass
class LbfgsSettings:
    history_size: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    # trial step of the first iteration after a (re)start; later iterations try 1
    learning_rate: float = 0.1
    max_ls: int = 25
    tolerance_grad: float = 1e-12
    tolerance_change: float = 1e-16

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line-search constants must satisfy 0 < c1 < c2 < 1")
        if self.history_size < 1 or self.max_ls < 1 or self.learning_rate <= 0:
            raise ValueError("history_size, max_ls and learning_rate must be positive")


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    trace: list = field(default_factory=list)  # best loss after each iteration
    n_iter: int = 0
    n_eval: int = 0
    flag: str = "max_iter"


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        try:
            f, g = self.fun(x)
            f = float(f)
        except (EvaluationError, FloatingPointError) as exc:
            log.debug("evaluation failed: %s", exc)
            return math.inf, None
        if not math.isfinite(f) or g is None or not np.all(np.isfinite(g)):
            return math.inf, None
        return f, np.asarray(g, dtype=float)


def _cubic_min(a1, f1, d1, a2, f2, d2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clipped to [lo, hi]."""
    vals = (a1, f1, d1, a2, f2, d2)
    if not all(math.isfinite(v) for v in vals):
        return 0.5 * (lo + hi)
    e1 = d1 + d2 - 3.0 * (f1 - f2) / (a1 - a2)
    disc = e1 * e1 - d1 * d2
    if disc < 0:
        return 0.5 * (lo + hi)
    e2 = math.copysign(math.sqrt(disc), a2 - a1)
    denom = d2 - d1 + 2.0 * e2
    if denom == 0:
        return 0.5 * (lo + hi)
    a = a2 - (a2 - a1) * (d2 + e2 - e1) / denom
    return min(max(a, lo), hi)


def strong_wolfe(phi, f0, d0, a_init, c1=1e-4, c2=0.9, max_eval=25):
    """Step length satisfying the strong Wolfe conditions along a descent direction.

    ``phi(a)`` returns ``(f, slope, payload)``. Returns ``(a, f, payload, ok)``;
    on failure ``ok`` is False and the returned step is the best trial with
    sufficient decrease, or 0.
    """
    evals = 0
    best = (0.0, f0, None)

    def record(a, f, pay):
        nonlocal best
        if f < best[1] and f <= f0 + c1 * a * d0:
            best = (a, f, pay)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_eval:
            width = abs(hi - lo)
            if width * 1.0 < 1e-16 * max(1.0, abs(lo)):
                break
            left, right = min(lo, hi), max(lo, hi)
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi, left, right)
            # keep the trial away from the bracket ends
            margin = 0.1 * width
            if a - left < margin or right - a < margin:
                a = 0.5 * (lo + hi)
            f, d, pay = phi(a)
            evals += 1
            record(a, f, pay)
            if not math.isfinite(f) or f > f0 + c1 * a * d0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return a, f, pay, True
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, d
        return None

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = a_init
    while evals < max_eval:
        f, d, pay = phi(a)
        evals += 1
        if not math.isfinite(f):
            # overflowed: pull the trial back toward the last good step
            a = a_prev + 0.5 * (a - a_prev)
            continue
        record(a, f, pay)
        if f > f0 + c1 * a * d0 or (a_prev > 0 and f >= f_prev):
            res = zoom(a_prev, f_prev, d_prev, a, f, d)
            break
        if abs(d) <= -c2 * d0:
            return a, f, pay, True
        if d >= 0:
            res = zoom(a, f, d, a_prev, f_prev, d_prev)
            break
        a_next = _cubic_min(a_prev, f_prev, d_prev, a, f, d, a + 0.01 * (a - a_prev), 10.0 * a)
        a_prev, f_prev, d_prev = a, f, d
        a = a_next
    else:
        res = None
    if res is not None:
        return res
    return best[0], best[1], best[2], False


def lbfgs_minimize(fun: Callable, x0, epochs: int, settings: LbfgsSettings | None = None,
                   callback: Callable | None = None) -> OptimResult:
    """Limited-memory BFGS with a strong Wolfe line search.

    Runs at most ``epochs`` iterations and returns the best point seen. When
    the line search fails the curvature history is dropped and one
    steepest-descent step is attempted; a second consecutive failure stops
    the run with ``flag='line_search_failed'``.
    """
    s = settings or LbfgsSettings()
    x = np.array(x0, dtype=float, copy=True)
    counted = _Counter(fun)
    if epochs <= 0:
        return OptimResult(x, math.nan, [], 0, 0, "max_iter")
    f, g = counted(x)
    if g is None:
        raise EvaluationError("initial loss is not finite", primitive="loss")
    hist: deque = deque(maxlen=s.history_size)
    restarted = True
    failures = 0
    result = OptimResult(x.copy(), f, [], 0, 1, "max_iter")

    for it in range(epochs):
        if np.max(np.abs(g)) <= s.tolerance_grad:
            result.flag = "converged"
            break
        # two-loop recursion
        q = -g.copy()
        alphas = []
        for s_k, y_k, rho in reversed(hist):
            a_k = rho * np.dot(s_k, q)
            alphas.append(a_k)
            q -= a_k * y_k
        if hist:
            s_k, y_k, _ = hist[-1]
            q *= np.dot(s_k, y_k) / np.dot(y_k, y_k)
        for (s_k, y_k, rho), a_k in zip(hist, reversed(alphas)):
            b = rho * np.dot(y_k, q)
            q += (a_k - b) * s_k
        d = q
        d0 = float(np.dot(g, d))
        if not d0 < 0:
            hist.clear()
            d = -g
            d0 = float(np.dot(g, d))
            restarted = True

        a_init = s.learning_rate if restarted else 1.0

        def phi(a, x=x, d=d):
            xt = x + a * d
            ft, gt = counted(xt)
            if gt is None:
                return math.inf, math.nan, None
            return ft, float(np.dot(gt, d)), (xt, gt)

        a, f_new, pay, ok = strong_wolfe(phi, f, d0, a_init, s.c1, s.c2, s.max_ls)
        if not ok:
            failures += 1
            if failures >= 2:
                result.flag = "line_search_failed"
                log.info("line search failed twice at iteration %d, stopping", it)
                break
            hist.clear()
            restarted = True
            result.trace.append(result.f)
            result.n_iter = it + 1
            continue
        failures = 0
        restarted = False
        x_new, g_new = pay
        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(np.dot(s_vec, y_vec))
        if sy > 1e-10 * float(np.dot(y_vec, y_vec)):
            hist.append((s_vec, y_vec, 1.0 / sy))
        change = f - f_new
        x, f, g = x_new, f_new, g_new
        if f < result.f:
            result.x, result.f = x.copy(), f
        result.trace.append(result.f)
        result.n_iter = it + 1
        if callback is not None:
            callback(it, f)
        if abs(change) < s.tolerance_change * max(1.0, abs(f)):
            result.flag = "converged"
            break
    result.n_eval = counted.n
    return result


@dataclass
class AdamSettings:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_minimize(fun: Callable, x0, epochs: int, settings: AdamSettings | None = None) -> OptimResult:
    """Plain Adam, kept for debugging and warm starts."""
    s = settings or AdamSettings()
    x = np.array(x0, dtype=float, copy=True)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    counted = _Counter(fun)
    result = OptimResult(x.copy(), math.inf, [], 0, 0, "max_iter")
    for t in range(1, epochs + 1):
        f, g = counted(x)
        if g is None:
            result.flag = "non_finite"
            break
        if f < result.f:
            result.x, result.f = x.copy(), f
        result.trace.append(result.f)
        m = s.beta1 * m + (1 - s.beta1) * g
        v = s.beta2 * v + (1 - s.beta2) * g * g
        mhat = m / (1 - s.beta1**t)
        vhat = v / (1 - s.beta2**t)
        x = x - s.learning_rate * mhat / (np.sqrt(vhat) + s.eps)
        result.n_iter = t
    result.n_eval = counted.n
    return result
