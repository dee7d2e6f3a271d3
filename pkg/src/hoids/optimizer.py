"""Quasi-Newton minimization with BFGS inverse-Hessian updates.

The objective is any callable ``w -> (value, gradient)``.  Iterates follow
``w_{k+1} = w_k + delta_k`` with ``delta_k = -alpha_k S_k g_k``; ``S`` starts
at the identity and is refreshed by the rank-two BFGS inverse update after
every accepted step.  ``alpha_k`` comes from back-tracking on the Armijo
sufficient-decrease condition.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class LineSearchError(RuntimeError):
    """No step in the back-tracking schedule gave sufficient decrease."""


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Objective:
    dim: int
    eval: ValueAndGrad

    def __call__(self, w):
        return self.eval(w)


@dataclass(frozen=True)
class QNConfig:
    epsilon: float = 1e-5
    max_iters: int = 500
    ls_shrink: float = 0.5
    ls_c: float = 1e-4
    ls_max_steps: int = 50
    curvature_floor: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1 or self.ls_max_steps < 1:
            raise ValueError("iteration limits must be positive")
        if not (0 < self.ls_shrink < 1 and 0 < self.ls_c < 1):
            raise ValueError("line-search constants must lie in (0, 1)")


@dataclass
class QNTrace:
    iterations: int = 0
    values: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    converged: bool = False
    final_step_norm: float = float("nan")
    resets: int = 0
    message: str = ""

    def write_csv(self, path) -> None:
        """One row per iterate: iteration, objective, norm of the step that led there."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "step_norm"])
            for k, v in enumerate(self.values):
                step = self.step_norms[k - 1] if k else ""
                w.writerow([k, repr(v), repr(step) if step != "" else ""])


def _as_callable(obj) -> ValueAndGrad:
    return obj.eval if isinstance(obj, Objective) else obj


def bfgs_update(S: np.ndarray, delta: np.ndarray, gamma: np.ndarray,
                curvature_floor: float = 1e-12) -> np.ndarray:
    """BFGS update of the inverse-Hessian approximation.

    Falls back to the identity when ``gamma.delta`` is not safely positive.
    """
    gd = float(gamma @ delta)
    if not gd > curvature_floor * np.linalg.norm(delta) * np.linalg.norm(gamma):
        return np.eye(S.shape[0])
    Sg = S @ gamma
    dd = np.outer(delta, delta)
    cross = np.outer(delta, Sg)
    S_next = S + (1.0 + float(gamma @ Sg) / gd) * dd / gd - (cross + cross.T) / gd
    return 0.5 * (S_next + S_next.T)


def backtrack(fun, w: np.ndarray, direction: np.ndarray, g: np.ndarray,
              f0: float | None = None, cfg: QNConfig = QNConfig()) -> tuple[float, float, np.ndarray]:
    """Largest ``alpha`` in ``1, shrink, shrink**2, ...`` with Armijo decrease.

    Returns ``(alpha, f_new, g_new)`` so the caller does not re-evaluate.
    """
    fun = _as_callable(fun)
    slope = float(g @ direction)
    if not slope < 0:
        raise ValueError(f"not a descent direction (g.d = {slope:g})")
    if f0 is None:
        f0, _ = fun(w)
    alpha = 1.0
    for _ in range(cfg.ls_max_steps):
        f_new, g_new = fun(w + alpha * direction)
        if np.isfinite(f_new) and f_new <= f0 + cfg.ls_c * alpha * slope:
            return alpha, float(f_new), np.asarray(g_new, dtype=np.float64)
        alpha *= cfg.ls_shrink
    raise LineSearchError(f"no sufficient decrease after {cfg.ls_max_steps} trials")


def minimize(obj, w0, cfg: QNConfig = QNConfig(), callback=None) -> tuple[np.ndarray, QNTrace]:
    """Run BFGS from ``w0``; stops when the step norm drops below ``epsilon``.

    A line-search failure ends the run early with ``trace.converged = False``
    and the best iterate so far.  ``callback(k, w, f)`` is invoked after every
    accepted step.
    """
    fun = _as_callable(obj)
    w = np.array(w0, dtype=np.float64).reshape(-1)
    if isinstance(obj, Objective) and w.size != obj.dim:
        raise OptimizerError(f"w0 has length {w.size}, objective expects {obj.dim}")
    f, g = fun(w)
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise OptimizerError("objective or gradient is not finite at the starting point")

    trace = QNTrace(values=[float(f)])
    S = np.eye(w.size)
    for k in range(cfg.max_iters):
        if not np.any(g):
            trace.converged = True
            trace.final_step_norm = 0.0
            trace.message = "zero gradient"
            break
        d = -(S @ g)
        if not float(g @ d) < 0:
            S = np.eye(w.size)
            trace.resets += 1
            d = -g
        try:
            alpha, f_new, g_new = backtrack(fun, w, d, g, f, cfg)
        except LineSearchError as exc:
            trace.message = str(exc)
            break
        delta = alpha * d
        gamma = g_new - g
        S_prev = S
        S = bfgs_update(S, delta, gamma, cfg.curvature_floor)
        if S is not S_prev and np.array_equal(S, np.eye(w.size)):
            trace.resets += 1
        w = w + delta
        f, g = f_new, g_new
        step = float(np.linalg.norm(delta))
        trace.iterations = k + 1
        trace.values.append(f)
        trace.step_norms.append(step)
        trace.final_step_norm = step
        if callback is not None:
            callback(k + 1, w, f)
        if step < cfg.epsilon:
            trace.converged = True
            trace.message = "step norm below tolerance"
            break
    else:
        trace.message = f"stopped after max_iters={cfg.max_iters}"
    if not trace.converged:
        logger.debug("BFGS did not converge: %s", trace.message)
    return w, trace


__all__ = ["LineSearchError", "Objective", "OptimizerError", "QNConfig", "QNTrace",
           "backtrack", "bfgs_update", "minimize"]
