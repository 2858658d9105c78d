"""Projection onto l_{1,q} balls by root-finding on the prox threshold.

For ``f = ||.||_{1,q}`` and an infeasible ``y`` the projection is
``prox_f(y, theta*)`` where ``theta*`` is the unique root of

    g(theta) = f(prox_f(y, theta)) - gamma

on ``[0, f°(y)]``; ``f°`` is the dual norm ``||.||_{inf,q*}``.  ``g`` is
nonincreasing there, positive at 0 and equal to ``-gamma`` at the right end,
where the prox vanishes.  The matrix version runs the same search on the
singular values of each block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConvergenceError, GroupedVector, GroupPartition, svd
from .norms import (
    INF, NormSpec, canonical_exponent, dual_exponent, group_norms, lq_norm, mixed_norm, row_norms,
)
from .prox import DEFAULT_TOL, ProxTolerance, prox_grouped, prox_lq, prox_lq_rows

__all__ = [
    "RootConfig", "RootResult", "ProjectionResult", "find_root", "project_mixed_ball",
    "svd", "prox_schatten", "project_matrix_mixed_ball",
]


@dataclass(frozen=True)
class RootConfig:
    """Stopping rules for :func:`find_root`.

    ``ftol`` is the residual tolerance, multiplied by the caller's scale
    (``max(1, gamma)`` for projections); ``xtol`` is the bracket-width
    tolerance relative to the initial bracket.
    """

    ftol: float = 1e-10
    xtol: float = 1e-13
    maxiter: int = 200

    def __post_init__(self):
        if not (self.ftol > 0 and self.xtol > 0):
            raise ValueError("root tolerances must be positive")
        if self.maxiter < 1:
            raise ValueError("maxiter must be >= 1")


@dataclass(frozen=True)
class RootResult:
    root: float
    residual: float
    evaluations: int
    iterations: int
    reason: str  # "residual" or "bracket"
    bisection_only: bool = False


def _inverse_quadratic(x0, f0, x1, f1, x2, f2):
    return (x0 * f1 * f2 / ((f0 - f1) * (f0 - f2))
            + x1 * f0 * f2 / ((f1 - f0) * (f1 - f2))
            + x2 * f0 * f1 / ((f2 - f0) * (f2 - f1)))


def find_root(g, lo, hi, cfg=RootConfig(), *, scale=1.0, g_lo=None, g_hi=None, hint=None):
    """Root of a scalar function with a sign change on ``[lo, hi]``.

    Each step tries inverse quadratic interpolation through the bracket ends
    and the last discarded point, or the secant through the bracket ends,
    and keeps the trial only if it falls strictly inside the bracket and the
    bracket has at least halved over the previous two steps; otherwise it
    bisects.  If a new value contradicts monotonicity (lies outside the
    values at the bracket ends) the search continues by bisection only,
    which tolerates noisy evaluations.

    Parameters
    ----------
    g : callable
        Scalar function.
    lo, hi : float
        Bracket; ``g(lo)`` and ``g(hi)`` must differ in sign.
    cfg : RootConfig
        Tolerances.
    scale : float
        Multiplies ``cfg.ftol`` to give the absolute residual tolerance.
    g_lo, g_hi : float, optional
        Known values at the ends (saves evaluations).
    hint : float, optional
        First trial point, used only if strictly inside the bracket.

    Returns
    -------
    RootResult
        On bracket exhaustion the end with the negative oriented value
        (for decreasing ``g``, the ``g < 0`` end) is returned.

    Raises
    ------
    ValueError
        If ``g`` does not change sign on the bracket.
    ConvergenceError
        If ``cfg.maxiter`` steps do not meet either tolerance.
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"empty bracket [{lo}, {hi}]")
    ftol = cfg.ftol * scale
    xtol = cfg.xtol * (hi - lo)
    evals = 0
    if g_lo is None:
        g_lo, evals = float(g(lo)), evals + 1
    if g_hi is None:
        g_hi, evals = float(g(hi)), evals + 1
    if abs(g_lo) <= ftol:
        return RootResult(lo, abs(g_lo), evals, 0, "residual")
    if abs(g_hi) <= ftol:
        return RootResult(hi, abs(g_hi), evals, 0, "residual")
    if (g_lo > 0) == (g_hi > 0):
        raise ValueError(f"no sign change: g({lo})={g_lo}, g({hi})={g_hi}")

    # orient so that G(a) > 0 > G(b)
    sign = 1.0 if g_lo > 0 else -1.0
    a, fa, b, fb = lo, sign * g_lo, hi, sign * g_hi
    prev = None
    widths = [math.inf, math.inf]
    bisect_only = False
    for it in range(cfg.maxiter):
        if b - a <= xtol:
            return RootResult(b, abs(fb), evals, it, "bracket", bisect_only)
        x = None
        if it == 0 and hint is not None and a < hint < b:
            x = float(hint)
        elif not bisect_only:
            if prev is not None and len({fa, fb, prev[1]}) == 3:
                x = _inverse_quadratic(a, fa, b, fb, *prev)
            else:
                x = b - fb * (b - a) / (fb - fa)
            if not (a < x < b) or (b - a) > 0.5 * widths[0]:
                x = None
        if x is None:
            x = 0.5 * (a + b)
        fx = sign * float(g(x))
        evals += 1
        if abs(fx) <= ftol:
            return RootResult(x, abs(fx), evals, it + 1, "residual", bisect_only)
        if fx > fa or fx < fb:
            bisect_only = True
        if fx > 0:
            prev, a, fa = (a, fa), x, fx
        else:
            prev, b, fb = (b, fb), x, fx
        widths = [widths[1], b - a]
    if b - a <= xtol:
        return RootResult(b, abs(fb), evals, cfg.maxiter, "bracket", bisect_only)
    raise ConvergenceError(
        f"root not found in {cfg.maxiter} iterations (bracket [{a}, {b}])", min(fa, -fb)
    )


@dataclass(frozen=True)
class ProjectionResult:
    """Output of a ball projection.

    ``x`` is a :class:`GroupedVector` (vector balls) or a list of arrays
    (matrix balls).  ``interior`` means the input was already feasible and
    is returned as is, with ``theta = 0``.
    """

    x: object
    theta: float
    residual: float
    evaluations: int
    interior: bool
    iterations: int = 0


class _NormPath:
    """``theta -> ||prox(y, theta)||_{1,q}`` with per-``y`` precomputation.

    The closed-form cases never build the prox: only its group norms are
    needed, and those follow from statistics of ``y`` computed once.
    """

    def __init__(self, y: GroupedVector, q, tol, dual_norms):
        self.q = q
        self.tol = tol
        self.dual_norms = dual_norms
        if q == 1.0:
            self.absy = np.abs(y.data)
        elif q == 2.0:
            self.norms = group_norms(y, 2.0)
        elif q == INF:
            A = np.abs(y.padded())
            s = -np.sort(-A, axis=1)
            self.csum = np.cumsum(s, axis=1)
            self.breaks = self.csum - np.arange(1, A.shape[1] + 1) * s
        else:
            self.rows = y.padded()

    def __call__(self, theta):
        q = self.q
        if q == 1.0:
            return float(np.sum(np.maximum(self.absy - theta, 0.0)))
        if q == 2.0:
            return float(np.sum(np.maximum(self.norms - theta, 0.0)))
        if q == INF:
            # l_inf norm of each prox row is its l1-ball threshold tau
            live = self.dual_norms > theta
            if not live.any():
                return 0.0
            # the first breakpoint is 0, so rho >= 1 except at theta = 0
            rho = np.maximum(np.count_nonzero(self.breaks[live] < theta, axis=1), 1)
            top = self.csum[live][np.arange(rho.size), rho - 1]
            return float(np.sum(np.maximum((top - theta) / rho, 0.0)))
        X = prox_lq_rows(self.rows, theta, q, self.tol, dual_norms=self.dual_norms)
        return float(np.sum(row_norms(X, q)))

    def slope(self, theta):
        """Derivative in ``theta`` for the piecewise-linear cases, else ``None``."""
        if self.q == 1.0:
            return -float(np.count_nonzero(self.absy > theta))
        if self.q == 2.0:
            return -float(np.count_nonzero(self.norms > theta))
        if self.q == INF:
            live = self.dual_norms > theta
            return -float(np.sum(1.0 / np.maximum(np.count_nonzero(self.breaks[live] < theta, axis=1), 1)))
        return None


def _polish(path, theta, residual, gamma, theta_max):
    """One Newton step on a piecewise-linear path; exact if no breakpoint is crossed."""
    slope = path.slope(theta)
    if not slope:
        return theta
    value = path(theta) - gamma
    trial = theta - value / slope
    if 0.0 < trial < theta_max and abs(path(trial) - gamma) < abs(value):
        return trial
    return theta


def project_mixed_ball(y: GroupedVector, gamma, q, cfg=RootConfig(), tol: ProxTolerance = DEFAULT_TOL,
                       hint=None):
    """Euclidean projection of ``y`` onto ``{x : ||x||_{1,q} <= gamma}``.

    Returns a :class:`ProjectionResult`; for infeasible ``y`` the result
    satisfies ``| ||x||_{1,q} - gamma | <= cfg.ftol * max(1, gamma)`` up to
    rounding.  ``hint`` (e.g. the previous ``theta``) only seeds the first
    trial of the root search.
    """
    gamma = float(gamma)
    if not gamma > 0:
        raise ValueError(f"radius must be positive, got {gamma}")
    q = canonical_exponent(q)
    fy = float(np.sum(group_norms(y, q)))
    if fy <= gamma:
        return ProjectionResult(y, 0.0, 0.0, 0, True)
    dual_norms = group_norms(y, dual_exponent(q))
    theta_max = float(np.max(dual_norms))
    path = _NormPath(y, q, tol, dual_norms)
    root = find_root(
        lambda th: path(th) - gamma, 0.0, theta_max, cfg,
        scale=max(1.0, gamma), g_lo=fy - gamma, g_hi=-gamma, hint=hint,
    )
    theta = _polish(path, root.root, root.residual, gamma, theta_max)
    x = prox_grouped(y, theta, q, tol)
    residual = abs(mixed_norm(x, NormSpec(1.0, q)) - gamma)
    return ProjectionResult(x, theta, residual, root.evaluations, False, root.iterations)


def prox_schatten(Y, theta, q, tol: ProxTolerance = DEFAULT_TOL):
    """Prox of ``theta * ||.||_q`` (Schatten) via the prox of the singular values.

    For ``q = 1`` this is singular value thresholding.
    """
    U, s, V = svd(Y)
    return (U * prox_lq(s, theta, q, tol)) @ V.T


def project_matrix_mixed_ball(blocks, gamma, q, cfg=RootConfig(), tol: ProxTolerance = DEFAULT_TOL):
    """Project blocks ``X^1..X^m`` onto ``{sum_i ||X^i||_q <= gamma}`` (Schatten ``q``).

    Each block is decomposed once; the vector projection then runs on the
    singular values grouped by block, and the blocks are rebuilt.
    """
    blocks = [np.asarray(B, dtype=float) for B in blocks]
    if not blocks:
        raise ValueError("need at least one block")
    factors = [svd(B) for B in blocks]
    sizes = [f[1].size for f in factors]
    if min(sizes) == 0:
        raise ValueError("blocks must be nonempty matrices")
    sv = GroupedVector(np.concatenate([f[1] for f in factors]), GroupPartition.from_sizes(sizes))
    res = project_mixed_ball(sv, gamma, q, cfg, tol)
    if res.interior:
        return ProjectionResult([B.copy() for B in blocks], 0.0, 0.0, 0, True)
    X = [(U * xi) @ V.T for (U, _, V), xi in zip(factors, res.x.groups())]
    residual = abs(lq_norm([lq_norm(xi, q) for xi in res.x.groups()], 1.0) - gamma)
    return ProjectionResult(X, res.theta, residual, res.evaluations, False, res.iterations)
