"""First-order solvers for smooth losses over an l_{1,q} ball.

Both solvers work on flat float64 vectors whose coordinates are grouped by
a :class:`GroupPartition`; every projection goes through
:func:`project_mixed_ball`.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ballproj import RootConfig, project_mixed_ball
from .core import GroupedVector, GroupPartition
from .norms import canonical_exponent, group_norms
from .prox import DEFAULT_TOL, ProxTolerance

__all__ = [
    "ConstrainedProblem", "SpgOptions", "SgdOptions", "SolverReport",
    "bb_stepsize", "spg_solve", "sgd_solve", "probe_sgd_step", "check_gradient",
]


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """Minimise ``loss(x)`` subject to ``||x||_{1,q} <= gamma``.

    Parameters
    ----------
    partition : GroupPartition
        Grouping of the coordinates of ``x``.
    loss, grad : callable
        ``loss(x) -> float`` and ``grad(x) -> ndarray`` on flat vectors.
    q, gamma : float
        Inner exponent and radius of the constraint ball.
    stoch_grad : callable, optional
        ``stoch_grad(x, idx)`` for a sorted array of component indices in
        ``range(n_components)``; must return the unbiased estimate
        ``(r / len(idx)) * sum_{i in idx} grad_i(x)``.
    n_components : int
        Number ``r`` of loss components seen by ``stoch_grad``.
    step_scale : float, optional
        Reference stepsize for a single-component step (for least squares,
        ``1 / ||X||_F^2``), used by :func:`probe_sgd_step`.
    """

    partition: GroupPartition
    loss: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    q: float
    gamma: float
    stoch_grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    n_components: int = 0
    step_scale: Optional[float] = None
    root: RootConfig = RootConfig()
    prox_tol: ProxTolerance = DEFAULT_TOL

    def __post_init__(self):
        object.__setattr__(self, "q", canonical_exponent(self.q))
        if not self.gamma > 0:
            raise ValueError(f"radius must be positive, got {self.gamma}")
        if self.stoch_grad is not None and self.n_components < 1:
            raise ValueError("a stochastic oracle needs n_components >= 1")

    @property
    def d(self):
        return self.partition.d

    def constraint(self, x):
        """``||x||_{1,q}``."""
        return float(np.sum(group_norms(GroupedVector(x, self.partition), self.q)))

    def project(self, x, hint=None):
        """Return ``(P(x), theta)``."""
        res = project_mixed_ball(GroupedVector(x, self.partition), self.gamma, self.q,
                                 self.root, self.prox_tol, hint=hint)
        return np.array(res.x.data), res.theta

    @property
    def feasibility_slack(self):
        """Tolerance ``eps_g`` on ``||x||_{1,q} - gamma`` for projected points."""
        return self.root.ftol * max(1.0, self.gamma)


def check_gradient(prob: ConstrainedProblem, points=20, rtol=1e-5, rng=None, scale=1.0):
    """Compare ``prob.grad`` with central differences along random directions.

    Returns the worst relative error; raises ``ValueError`` if it exceeds
    ``rtol``.  The comparison allows for rounding in the two loss values.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    eps = np.finfo(float).eps
    worst = 0.0
    for _ in range(points):
        x = scale * rng.standard_normal(prob.d)
        u = rng.standard_normal(prob.d)
        u /= np.linalg.norm(u)
        h = 1e-4 * max(1.0, np.linalg.norm(x))
        fp, fm = prob.loss(x + h * u), prob.loss(x - h * u)
        fd = (fp - fm) / (2 * h)
        gd = float(np.dot(prob.grad(x), u))
        noise = 8 * eps * (abs(fp) + abs(fm)) / (2 * h)
        diff = abs(fd - gd)
        err = 0.0 if diff <= noise else (diff - noise) / max(abs(fd), abs(gd))
        worst = max(worst, err)
    if worst > rtol:
        raise ValueError(f"gradient oracle disagrees with finite differences (rel. err {worst:.2e})")
    return worst


def bb_stepsize(dx, dg, variant=1, bounds=(1e-10, 1e10), previous=None):
    """Barzilai-Borwein stepsize, clamped to ``bounds``.

    ``variant=1`` gives ``<dx,dx>/<dg,dx>``, ``variant=2`` gives
    ``<dx,dg>/<dg,dg>``.  A nonpositive or non-finite raw value is replaced
    by ``previous`` (or the upper bound when there is none).

    Examples
    --------
    >>> bb_stepsize([1.0, 1.0], [2.0, 0.0], 1), bb_stepsize([1.0, 1.0], [2.0, 0.0], 2)
    (1.0, 0.5)
    """
    dx = np.asarray(dx, dtype=float)
    dg = np.asarray(dg, dtype=float)
    if dx.shape != dg.shape:
        raise ValueError(f"shape mismatch {dx.shape} vs {dg.shape}")
    lo, hi = bounds
    sy = float(np.dot(dx, dg))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if variant == 1:
            raw = np.float64(np.dot(dx, dx)) / sy
        elif variant == 2:
            raw = np.float64(sy) / np.dot(dg, dg)
        else:
            raise ValueError(f"unknown BB variant {variant}")
    if not (np.isfinite(raw) and raw > 0):
        return hi if previous is None else float(previous)
    return float(min(max(raw, lo), hi))


@dataclass(frozen=True)
class SpgOptions:
    """Options for :func:`spg_solve` (defaults follow common SPG practice)."""

    max_iter: int = 1000
    tol: float = 1e-5
    memory: int = 10
    decrease: float = 1e-4
    step_bounds: tuple = (1e-10, 1e10)
    variant: int = 1
    alternate: bool = True
    max_backtracks: int = 50
    keep_iterates: int = 0  # store every k-th iterate, 0 = none

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        lo, hi = self.step_bounds
        if not 0 < lo < hi:
            raise ValueError("need 0 < eta_min < eta_max")
        if not 0 < self.decrease < 1:
            raise ValueError("decrease constant must lie in (0, 1)")
        if self.variant not in (1, 2):
            raise ValueError("variant must be 1 or 2")
        if self.max_iter < 0 or self.tol <= 0:
            raise ValueError("need max_iter >= 0 and tol > 0")


@dataclass(frozen=True)
class SgdOptions:
    """Options for :func:`sgd_solve`.

    ``step0=None`` runs :func:`probe_sgd_step`; ``horizon=None`` uses one
    epoch and ``math.inf`` gives a constant step.
    """

    batch: int = 1
    step0: Optional[float] = None
    horizon: Optional[float] = None
    project_every: int = 1
    epochs: float = 1.0
    seed: int = 0
    keep_iterates: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.project_every < 1:
            raise ValueError("projection period must be >= 1")
        if self.step0 is not None and not self.step0 > 0:
            raise ValueError("initial step must be positive")
        if not self.epochs > 0:
            raise ValueError("epochs must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class SolverReport:
    """Per-iteration record of a solver run.

    Entry ``k`` of ``iterations``/``objective``/``seconds``/``feasibility``
    describes the ``k``-th recorded (projected, hence feasible) iterate;
    entry 0 is the starting point.  ``seconds`` is cumulative wall-clock
    time excluding the bookkeeping of the report itself.
    """

    iterations: np.ndarray
    objective: np.ndarray
    seconds: np.ndarray
    feasibility: np.ndarray
    projections: int
    projection_seconds: float
    gradient_evaluations: float
    reason: str
    iterates: tuple = field(default=(), repr=False)
    step0: Optional[float] = None

    @property
    def final_objective(self):
        return float(self.objective[-1])

    @property
    def best_objective(self):
        return float(np.min(self.objective))


class _Recorder:
    def __init__(self, prob, keep):
        self.prob = prob
        self.keep = keep
        self.rows = []
        self.iterates = []
        self.projections = 0
        self.proj_seconds = 0.0
        self.grad_evals = 0.0
        self.excluded = 0.0
        self.start = time.perf_counter()

    def project(self, x, hint=None):
        t0 = time.perf_counter()
        px, theta = self.prob.project(x, hint)
        self.proj_seconds += time.perf_counter() - t0
        self.projections += 1
        return px, theta

    def record(self, it, x, obj=None):
        t0 = time.perf_counter()
        elapsed = t0 - self.start - self.excluded
        if obj is None:
            obj = float(self.prob.loss(x))
        if not math.isfinite(obj):
            raise FloatingPointError(f"objective became non-finite at iteration {it}")
        feas = max(self.prob.constraint(x) - self.prob.gamma, 0.0)
        if self.keep and it % self.keep == 0:
            self.iterates.append((it, x.copy()))
        self.rows.append((it, obj, elapsed, feas))
        self.excluded += time.perf_counter() - t0

    def report(self, reason, step0=None):
        it, obj, sec, feas = (np.array(c) for c in zip(*self.rows))
        return SolverReport(it.astype(np.int64), obj, sec, feas, self.projections,
                            self.proj_seconds, self.grad_evals, reason, tuple(self.iterates), step0)


def spg_solve(prob: ConstrainedProblem, opts: SpgOptions = SpgOptions(), x0=None):
    """Spectral projected gradient with a nonmonotone line search.

    Steps are ``x+ = P(x - eta * grad)`` with Barzilai-Borwein ``eta``.  A
    trial is accepted when ``L(x+) <= max(last M values) + c <grad, x+ - x>``;
    otherwise ``eta`` is shrunk by a safeguarded quadratic-interpolation
    factor in ``[0.1, 0.9]`` and ``x+`` is recomputed (one projection per
    trial).  The run stops when ``||x - P(x - grad)||_inf <= tol``.

    Returns
    -------
    x : ndarray
        Final iterate, or the best one seen if the line search fails.
    report : SolverReport
        ``reason`` is ``"converged"``, ``"max_iter"`` or ``"line_search"``.
    """
    rec = _Recorder(prob, opts.keep_iterates)
    x = np.zeros(prob.d) if x0 is None else np.asarray(x0, dtype=float).copy()
    x, theta = rec.project(x)
    f = float(prob.loss(x))
    g = prob.grad(x)
    rec.grad_evals += 1
    rec.record(0, x, f)
    history = deque([f], maxlen=opts.memory)
    lo, hi = opts.step_bounds
    step = None
    backtracked = deque([False, False], maxlen=2)
    best = (f, x)
    reason = "max_iter"
    for it in range(1, opts.max_iter + 1):
        pg, _ = rec.project(x - g, theta)
        pg -= x
        residual = float(np.max(np.abs(pg))) if pg.size else 0.0
        if residual <= opts.tol:
            reason = "converged"
            break
        if step is None:
            step = min(max(1.0 / residual, lo), hi)
        eta = step
        fmax = max(history)
        for bt in range(opts.max_backtracks + 1):
            xn, theta = rec.project(x - eta * g, theta)
            dx = xn - x
            gd = float(np.dot(g, dx))
            fn = float(prob.loss(xn))
            if fn <= fmax + opts.decrease * gd:
                break
            curv = fn - f - gd
            shrink = 0.5 if not curv > 0 else -gd / (2 * curv)
            eta *= min(max(shrink, 0.1), 0.9)
        else:
            reason = "line_search"
            break
        gn = prob.grad(xn)
        rec.grad_evals += 1
        backtracked.append(bt > 0)
        variant = 2 if (opts.alternate and all(backtracked)) else opts.variant
        step = bb_stepsize(dx, gn - g, variant, opts.step_bounds, previous=step)
        x, f, g = xn, fn, gn
        history.append(f)
        if f < best[0]:
            best = (f, x)
        rec.record(it, x, f)
    if reason == "line_search":
        x = best[1]
    return x, rec.report(reason)


def _batches(r, b, steps, rng):
    """Yield sorted index batches: shuffled once per epoch, remainder dropped."""
    per_epoch = r // b
    perm = None
    for t in range(steps):
        pos = t % per_epoch
        if pos == 0:
            perm = rng.permutation(r)
        yield np.sort(perm[pos * b:(pos + 1) * b])


def _sgd_run(prob, step0, horizon, batch, steps, period, seed, x0, rec):
    rng = np.random.default_rng(seed)
    x, theta = rec.project(x0)
    rec.record(0, x)
    for t, idx in enumerate(_batches(prob.n_components, batch, steps, rng)):
        g = prob.stoch_grad(x, idx)
        rec.grad_evals += idx.size / prob.n_components
        x = x - (step0 / (1.0 + t / horizon)) * g
        if (t + 1) % period == 0 or t + 1 == steps:
            x, theta = rec.project(x, theta)
            rec.record(t + 1, x)
    return x


def _sgd_steps(prob, opts):
    if prob.stoch_grad is None:
        raise ValueError("problem has no stochastic gradient oracle")
    if opts.batch > prob.n_components:
        raise ValueError(f"batch size {opts.batch} exceeds component count {prob.n_components}")
    per_epoch = prob.n_components // opts.batch
    return per_epoch, max(1, int(math.ceil(opts.epochs * per_epoch)))


def probe_sgd_step(prob: ConstrainedProblem, batch, steps=10, seed=0, x0=None,
                   factors=tuple(10.0 ** -k for k in range(7))):
    """Pick an initial SGD step from a short trial run per candidate.

    Candidates are ``factor * batch * step_scale``; each runs ``steps``
    constant-step iterations and the one with the lowest final objective
    wins (ties go to the larger step).
    """
    if prob.step_scale is None:
        raise ValueError("problem has no step_scale; pass step0 explicitly")
    x0 = np.zeros(prob.d) if x0 is None else np.asarray(x0, dtype=float)
    steps = min(steps, max(1, prob.n_components // batch))
    best = (math.inf, None)
    for fac in factors:
        eta = fac * batch * prob.step_scale
        rec = _Recorder(prob, 0)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x = _sgd_run(prob, eta, math.inf, batch, steps, steps, seed, x0, rec)
            obj = float(prob.loss(x))
        except (FloatingPointError, ValueError):
            continue
        if math.isfinite(obj) and obj < best[0]:
            best = (obj, eta)
    if best[1] is None:
        raise FloatingPointError("every candidate step diverged")
    return best[1]


def sgd_solve(prob: ConstrainedProblem, opts: SgdOptions = SgdOptions(), x0=None):
    """Mini-batch stochastic projected gradient.

    Each step draws ``opts.batch`` component indices (without replacement
    within an epoch), steps along the unbiased estimate from
    ``prob.stoch_grad`` with ``eta_t = eta_0 / (1 + t / T_0)`` and projects
    every ``opts.project_every`` steps and after the last one.  Only the
    projected iterates are recorded in the report.
    """
    per_epoch, steps = _sgd_steps(prob, opts)
    x0 = np.zeros(prob.d) if x0 is None else np.asarray(x0, dtype=float)
    step0 = opts.step0
    if step0 is None:
        step0 = probe_sgd_step(prob, opts.batch, seed=opts.seed, x0=x0)
    horizon = float(per_epoch) if opts.horizon is None else opts.horizon
    rec = _Recorder(prob, opts.keep_iterates)
    x = _sgd_run(prob, step0, horizon, opts.batch, steps, opts.project_every, opts.seed, x0, rec)
    return x, rec.report("max_iter", step0)
