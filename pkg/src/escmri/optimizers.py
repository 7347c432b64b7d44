"""Optimizer backends for the coil-weight fit.

All three methods view the complex weight vector as 2k real parameters
and guarantee a non-increasing sequence of accepted objective values:

* ``run_gd``     fixed-step gradient descent with rejection halving;
                 the slow baseline, kept for comparison runs.
* ``run_lm``     Levenberg-Marquardt on the residual vector, forming the
                 (2k) x (2k) normal system explicitly (accumulated in row
                 chunks by the objective).
* ``run_lbfgs``  limited-memory BFGS, matrix-free, backtracking Armijo
                 line search. The production method.

Stopping rules, shared: gradient norm <= gradient_tolerance * (1 + |f|),
or an accepted step improving f by less than objective_tolerance * (1 + |f|),
or max_iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DivergenceError, StallError
from .fit import as_complex, as_real

_ARMIJO_C1 = 1e-4
_MAX_BACKTRACKS = 40
_CURVATURE_FLOOR = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs shared by the three backends.

    ``gd_step`` of None picks 1e-3 * |x0| / |g0| at run time.
    ``lm_damping_init`` scales the initial damping as
    lambda = lm_damping_init * trace(J^T J) / (2k); zero starts at the pure
    Gauss-Newton step. ``seed`` is recorded for reproducibility but unused:
    none of the backends draw randomness.
    """

    method: str = "lbfgs"
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    objective_tolerance: float = 1e-10
    lbfgs_memory: int = 10
    gd_step: float | None = None
    lm_damping_init: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("gd", "lm", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.gradient_tolerance <= 0 or self.objective_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class Trace:
    """Per-iteration history: objectives[0] is the value at x0."""

    method: str
    objectives: list = field(default_factory=list)
    gradient_norms: list = field(default_factory=list)
    converged: bool = False
    reason: str = "max_iterations"

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1


def _grad_converged(gnorm, f, cfg) -> bool:
    return gnorm <= cfg.gradient_tolerance * (1.0 + abs(f))


def run_gd(obj, x0, cfg: OptimizerConfig):
    """Gradient descent with a fixed nominal step.

    Rejected steps (those that would increase the objective) halve the
    working step; a trial value beyond 10x the initial objective raises
    :class:`DivergenceError`.
    """
    theta = as_real(x0).copy()
    f, g = obj.value_and_gradient(as_complex(theta))
    trace = Trace("gd", [f], [float(np.linalg.norm(g))])
    f_init = f
    step = cfg.gd_step
    if step is None:
        gnorm = float(np.linalg.norm(g))
        xnorm = float(np.linalg.norm(theta))
        step = 1e-3 * (xnorm if xnorm > 0 else 1.0) / gnorm if gnorm > 0 else 0.0

    for _ in range(cfg.max_iterations):
        gnorm = float(np.linalg.norm(g))
        if _grad_converged(gnorm, f, cfg):
            trace.converged, trace.reason = True, "gradient_tolerance"
            break
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            trial = theta - step * g
            f_trial = obj.value(as_complex(trial))
            if f_trial > 10.0 * f_init:
                raise DivergenceError(
                    f"gradient descent diverged (objective {f_trial:.6e} vs initial "
                    f"{f_init:.6e}); use a smaller gd_step"
                )
            if f_trial <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise StallError("gradient descent stalled: no decrease after 40 step halvings",
                             x=as_complex(theta).copy(), trace=trace)
        theta = trial
        improvement = f - f_trial
        f = f_trial
        _, g = obj.value_and_gradient(as_complex(theta))
        trace.objectives.append(f)
        trace.gradient_norms.append(float(np.linalg.norm(g)))
        if improvement <= cfg.objective_tolerance * (1.0 + abs(f)):
            trace.converged, trace.reason = True, "objective_tolerance"
            break
    return as_complex(theta).copy(), trace


def _lm_default_damping(jtj) -> float:
    p = jtj.shape[0]
    tr = float(np.trace(jtj))
    return 1e-3 * tr / p if tr > 0 else 1.0


def run_lm(obj, x0, cfg: OptimizerConfig):
    """Levenberg-Marquardt on the residual vector.

    Damping schedule: lambda starts at lm_damping_init * trace(J^T J)/(2k),
    grows 10x on each rejected trial and shrinks 10x on acceptance.
    Objective values recorded in the trace come from the normal-system
    accumulation so one summation order is used throughout.
    """
    theta = as_real(x0).copy()
    jtj, jtr, f = obj.normal_system(as_complex(theta))
    g = 2.0 * jtr
    trace = Trace("lm", [f], [float(np.linalg.norm(g))])
    p = theta.size
    lam = cfg.lm_damping_init * float(np.trace(jtj)) / p
    eye = np.eye(p)

    for _ in range(cfg.max_iterations):
        if _grad_converged(float(np.linalg.norm(g)), f, cfg):
            trace.converged, trace.reason = True, "gradient_tolerance"
            break
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            try:
                factor = scipy.linalg.cho_factor(jtj + lam * eye, lower=False)
                delta = scipy.linalg.cho_solve(factor, -jtr)
            except scipy.linalg.LinAlgError:
                lam = lam * 10.0 if lam > 0 else _lm_default_damping(jtj)
                continue
            trial = theta + delta
            f_trial = obj.value(as_complex(trial))
            if f_trial < f:
                accepted = True
                break
            lam = lam * 10.0 if lam > 0 else _lm_default_damping(jtj)
        if not accepted:
            raise StallError("LM stalled: 40 consecutive rejected damping trials",
                             x=as_complex(theta).copy(), trace=trace)
        theta = trial
        lam /= 10.0
        f_prev = f
        jtj, jtr, f = obj.normal_system(as_complex(theta))
        g = 2.0 * jtr
        trace.objectives.append(f)
        trace.gradient_norms.append(float(np.linalg.norm(g)))
        if f_prev - f <= cfg.objective_tolerance * (1.0 + abs(f_prev)):
            trace.converged, trace.reason = True, "objective_tolerance"
            break
    return as_complex(theta).copy(), trace


def _two_loop(g, pairs):
    """H @ g through the standard LBFGS two-loop recursion."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def run_lbfgs(obj, x0, cfg: OptimizerConfig):
    """Limited-memory BFGS with backtracking Armijo line search.

    Matrix-free: only objective/gradient evaluations, no system matrix.
    Curvature pairs with s.y <= 1e-10 |s||y| are skipped so the implicit
    Hessian stays positive definite and Armijo alone suffices.
    """
    theta = as_real(x0).copy()
    f, g = obj.value_and_gradient(as_complex(theta))
    trace = Trace("lbfgs", [f], [float(np.linalg.norm(g))])
    pairs = []

    for _ in range(cfg.max_iterations):
        gnorm = float(np.linalg.norm(g))
        if _grad_converged(gnorm, f, cfg):
            trace.converged, trace.reason = True, "gradient_tolerance"
            break
        d = -_two_loop(g, pairs)
        slope = float(g @ d)
        if slope >= 0:
            d = -g
            slope = -(gnorm**2)
        alpha = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            trial = theta + alpha * d
            f_trial = obj.value(as_complex(trial))
            if f_trial <= f + _ARMIJO_C1 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise StallError("LBFGS stalled: Armijo line search failed after 40 halvings",
                             x=as_complex(theta).copy(), trace=trace)
        _, g_new = obj.value_and_gradient(as_complex(trial))
        s = trial - theta
        y = g_new - g
        sy = float(s @ y)
        if sy > _CURVATURE_FLOOR * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > cfg.lbfgs_memory:
                pairs.pop(0)
        theta = trial
        improvement = f - f_trial
        f, g = f_trial, g_new
        trace.objectives.append(f)
        trace.gradient_norms.append(float(np.linalg.norm(g)))
        if improvement <= cfg.objective_tolerance * (1.0 + abs(f)):
            trace.converged, trace.reason = True, "objective_tolerance"
            break
    return as_complex(theta).copy(), trace
