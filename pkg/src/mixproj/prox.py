"""Proximity operators of l_q norms and projections onto l_q balls.

Every operator has a row kernel (``*_rows``) acting on an ``(m, k)`` array
with one threshold or radius per row; the public single-vector functions
and :func:`prox_grouped` are thin wrappers around those kernels, so a
grouped prox costs a handful of array passes regardless of ``m``.

For ``q`` outside ``{1, 2, inf}`` the prox has no closed form.  It is
computed through the Moreau decomposition

    prox_q(v, theta) = v - P_{q*}(v, theta),

where ``P_{q*}(v, r)`` projects onto the ``l_{q*}`` ball of radius ``r``.
That projection solves, per coordinate, ``t + lam*q*t**(q-1) = |v_j|``
(inner root) for the multiplier ``lam`` that puts the result on the sphere
(outer root).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConvergenceError, GroupedVector
from .norms import INF, canonical_exponent, dual_exponent, row_norms

@dataclass(frozen=True)
class ProxTolerance:
    """Accuracy controls for the general-``q`` prox.

    ``inner_tol`` bounds the relative residual of each scalar equation,
    ``outer_tol`` the relative error of the ball constraint.
    """

    inner_tol: float = 1e-12
    outer_tol: float = 1e-10
    max_inner: int = 200
    max_outer: int = 200

    def __post_init__(self):
        for name in ("inner_tol", "outer_tol"):
            val = getattr(self, name)
            if not 0.0 < val <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2], got {val}")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration limits must be >= 1")


DEFAULT_TOL = ProxTolerance()


def _check_theta(theta):
    theta = float(theta)
    if not (theta >= 0.0 and np.isfinite(theta)):
        raise ValueError(f"threshold must be a finite nonnegative number, got {theta}")
    return theta


def _as_row(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return v[None, :]


# --------------------------------------------------------------------------
# row kernels

def soft_threshold(A, theta):
    return np.sign(A) * np.maximum(np.abs(A) - theta, 0.0)


def prox_l2_rows(A, theta, norms=None):
    """Block soft thresholding ``max(1 - theta/||a||, 0) * a`` per row."""
    if norms is None:
        norms = row_norms(A, 2)
    theta = np.broadcast_to(theta, norms.shape)
    factor = np.zeros_like(norms)
    live = norms > theta
    factor[live] = 1.0 - theta[live] / norms[live]
    return factor[:, None] * A


def l1_thresholds(A, r, norms=None):
    """Soft-threshold level ``tau`` projecting each row onto its ``l1`` ball.

    ``tau`` solves ``sum_j max(|a_j| - tau, 0) = r``; it is 0 for rows already
    inside the ball.  Rows are sorted by magnitude and the breakpoints
    scanned, the classic exact ``O(k log k)`` method.
    """
    A = np.abs(A)
    m, k = A.shape
    r = np.broadcast_to(np.asarray(r, dtype=float), (m,))
    if norms is None:
        norms = row_norms(A, 1)
    tau = np.zeros(m)
    out = norms > r
    if not out.any():
        return tau
    s = -np.sort(-A[out], axis=1)
    c = np.cumsum(s, axis=1)
    ro = r[out]
    # breakpoints c_k - k*s_k are nondecreasing; comparing them with r (rather
    # than k*s_k with c_k - r) stays exact when r is tiny relative to c_k
    breaks = c - np.arange(1, k + 1) * s
    rho = np.count_nonzero(breaks < ro[:, None], axis=1)
    tau[out] = np.maximum((c[np.arange(s.shape[0]), rho - 1] - ro) / rho, 0.0)
    return tau


def project_l1_rows(A, r, norms=None):
    tau = l1_thresholds(A, r, norms)
    return soft_threshold(A, tau[:, None])


def prox_linf_rows(A, theta, norms=None):
    """``l_inf`` prox per row: ``a - P_{l1}(a, theta) = sign(a)*min(|a|, tau)``.

    ``norms`` are the row ``l1`` norms; rows with ``||a||_1 <= theta`` map
    to zero exactly.
    """
    if norms is None:
        norms = row_norms(A, 1)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), norms.shape)
    tau = l1_thresholds(A, theta, norms)
    out = np.sign(A) * np.minimum(np.abs(A), tau[:, None])
    out[norms <= theta] = 0.0
    return out


def _inner_roots(b, c, q, t, tol):
    """Solve ``t + c*t**(q-1) = b`` elementwise for ``t`` in ``[0, b]``.

    For ``q >= 2`` the left side is convex in ``t``.  For ``q < 2`` it is
    concave with an infinite slope at 0, so the unknown becomes
    ``u = t**(q-1)`` instead, giving ``u**(1/(q-1)) + c*u = b``: convex, with
    finite slope, and the same residual.  Either way Newton runs on a convex
    increasing function inside a bracket ``[0, ub]``; a bisection step is
    taken whenever Newton would leave the bracket or its step is not at most
    half the step two iterations earlier.  Converged coordinates drop out of
    the working set.  ``t`` is the warm start.
    """
    shape = b.shape
    bb = b.ravel()
    cc = np.broadcast_to(c, shape).ravel()
    t = np.clip(t, 0.0, b).ravel()
    if q >= 2.0:
        a = q - 1.0
        ub = np.minimum(bb, (bb / cc) ** (1.0 / a))
        z = t
    else:
        a = 1.0 / (q - 1.0)
        ub = np.minimum(bb ** (q - 1.0), bb / cc)
        z = t ** (q - 1.0)
    z = np.minimum(z, ub)
    out = z.copy()
    idx = np.arange(z.size)
    lo = np.zeros_like(z)
    hi = ub
    dx1 = dx2 = np.full_like(z, np.inf)
    # the absolute floor keeps subnormal entries from stalling the test
    tiny = np.finfo(float).tiny
    thresh = tol.inner_tol * bb + tiny
    wtol = tol.inner_tol * ub + tiny
    live = np.ones(z.size, dtype=bool)
    for _ in range(tol.max_inner):
        if q >= 2.0:
            pw = z ** (a - 1.0)
            F = z + cc * pw * z - bb
            dF = 1.0 + cc * a * pw
        else:
            pw = z ** (a - 1.0)
            F = pw * z + cc * z - bb
            dF = a * pw + cc
        conv = (np.abs(F) <= thresh) | (hi - lo <= wtol)
        newly = live & conv
        out[idx[newly]] = z[newly]
        live &= ~conv
        n_live = np.count_nonzero(live)
        if n_live == 0:
            break
        if n_live <= live.size // 2:
            idx, cc, z, lo, hi, F, dF, dx1, dx2, thresh, wtol, bb = (
                v[live] for v in (idx, cc, z, lo, hi, F, dF, dx1, dx2, thresh, wtol, bb)
            )
            live = np.ones(n_live, dtype=bool)
        hi = np.where(F > 0, z, hi)
        lo = np.where(F < 0, z, lo)
        dx = F / dF
        zn = z - dx
        ok = (zn > lo) & (zn < hi) & (np.abs(dx) <= 0.5 * np.abs(dx2))
        mid = 0.5 * (lo + hi)
        dx1, dx2 = np.where(ok, dx, z - mid), dx1
        z = np.where(live, np.where(ok, zn, mid), z)
    else:
        res = float(np.max(np.abs(F[live]) / bb[live]))
        raise ConvergenceError("inner prox root did not converge", res)
    if q < 2.0:
        out = out ** a
    return out.reshape(shape)


def _unit_ball_multipliers(b, q, tol):
    """Multiplier per row putting ``t(lam)`` on the unit ``l_q`` sphere.

    ``b`` holds nonnegative rows with ``||b||_q > 1``.  The residual
    ``h(lam) = ||t(lam)||_q - 1`` is strictly decreasing; it is solved by
    Newton with the implicit derivative ``dt/dlam = -q t^(q-1) / phi'(t)``,
    safeguarded by a bracket that starts at ``[0, inf)`` and grows
    geometrically until it holds a sign change.
    """
    m = b.shape[0]
    lo = np.zeros(m)
    hi = np.full(m, np.inf)
    lam = np.maximum((row_norms(b, q) - 1.0) / q, 1e-300)
    t = b.copy()
    h = np.full(m, np.inf)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(tol.max_outer):
            c = (lam * q)[:, None]
            t = _inner_roots(b, c, q, t, tol)
            nrm = row_norms(t, q)
            h = nrm - 1.0
            done = (np.abs(h) <= tol.outer_tol) | (np.isfinite(hi) & (hi - lo <= 4e-16 * hi))
            if done.all():
                return lam, t, h
            lo = np.where(h > 0, lam, lo)
            hi = np.where(h < 0, lam, hi)
            tp = t ** (q - 1.0)
            dt = -q * tp / (1.0 + c * (q - 1.0) * t ** (q - 2.0))
            dt = np.where(t > 0, dt, 0.0)
            dh = nrm ** (1.0 - q) * np.sum(tp * dt, axis=1)
            cand = lam - h / dh
            ok = np.isfinite(cand) & (cand > lo) & (cand < hi)
            fallback = np.where(
                np.isinf(hi), 4.0 * np.maximum(lam, lo),
                np.where(lo > 0, np.sqrt(lo * hi), hi / 8.0),
            )
            lam = np.where(done, lam, np.where(ok, cand, fallback))
    raise ConvergenceError("l_q ball multiplier did not converge", float(np.max(np.abs(h))))


def project_lq_rows(A, r, q, tol=DEFAULT_TOL, norms=None):
    """Project each row of ``A`` onto the ``l_q`` ball of radius ``r[i] > 0``.

    Returns ``(X, lam)`` where ``lam`` is the multiplier of the constraint
    ``sum |x_j|**q <= r**q`` (zero for rows already inside).
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    r = np.broadcast_to(np.asarray(r, dtype=float), (m,))
    if norms is None:
        norms = row_norms(A, q)
    X = A.copy()
    lam = np.zeros(m)
    out = norms > r
    # a radius below 1e-290 * max|a| would overflow the scaled row; the
    # projection then lies within r of zero, which is returned instead
    peak = np.max(np.abs(A), axis=1) if A.shape[1] else np.zeros(m)
    degenerate = out & (r * 1e290 < peak)
    X[degenerate] = 0.0
    out &= ~degenerate
    if not out.any():
        return X, lam
    ro = r[out][:, None]
    # scale by the radius: the answer lies in the unit ball, so t <= 1 and
    # t**(q-1) cannot overflow however large q is
    b = np.abs(A[out]) / ro
    mult, t, _ = _unit_ball_multipliers(b, q, tol)
    X[out] = np.sign(A[out]) * t * ro
    with np.errstate(over="ignore"):
        lam[out] = mult * ro[:, 0] ** (2.0 - q)
    return X, lam


def prox_lq_rows(A, theta, q, tol=DEFAULT_TOL, dual_norms=None):
    """Moreau route: ``a - P_{q*}(a, theta)`` per row.  ``theta`` must be > 0.

    ``dual_norms`` are the row ``l_{q*}`` norms; rows with
    ``||a||_{q*} <= theta`` map to zero exactly.
    """
    qs = dual_exponent(q)
    if dual_norms is None:
        dual_norms = row_norms(A, qs)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), dual_norms.shape)
    P, _ = project_lq_rows(A, theta, qs, tol, norms=dual_norms)
    out = A - P
    out[dual_norms <= theta] = 0.0
    return out


def prox_rows(A, theta, q, tol=DEFAULT_TOL):
    """Dispatch the ``l_q`` prox over rows, closed forms where they exist."""
    q = canonical_exponent(q)
    if theta == 0.0:
        return np.array(A, dtype=float, copy=True)
    if q == 1.0:
        return soft_threshold(A, theta)
    if q == 2.0:
        return prox_l2_rows(A, theta)
    if q == INF:
        return prox_linf_rows(A, theta)
    return prox_lq_rows(A, theta, q, tol)


# --------------------------------------------------------------------------
# single-vector API

def prox_l1(v, theta):
    """Soft thresholding: ``sign(v) * max(|v| - theta, 0)``."""
    theta = _check_theta(theta)
    return soft_threshold(np.asarray(v, dtype=float), theta)


def prox_l2(v, theta):
    """``max(1 - theta/||v||_2, 0) * v``; the zero vector maps to zero."""
    theta = _check_theta(theta)
    return prox_l2_rows(_as_row(v), theta)[0]


def project_l1_ball(v, r):
    """Euclidean projection onto ``{x : ||x||_1 <= r}``."""
    r = float(r)
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    return project_l1_rows(_as_row(v), r)[0]


def prox_linf(v, theta):
    """Prox of ``theta * ||.||_inf``, via projection onto the ``l1`` ball."""
    theta = _check_theta(theta)
    if theta == 0.0:
        return np.array(v, dtype=float, copy=True)
    return prox_linf_rows(_as_row(v), theta)[0]


def project_lq_ball(v, r, q, tol=DEFAULT_TOL, full_output=False):
    """Euclidean projection onto ``{x : ||x||_q <= r}`` for ``1 < q < inf``.

    Parameters
    ----------
    v : array_like
        Point to project.
    r : float
        Ball radius, ``r > 0``.
    q : float
        Norm exponent, strictly between 1 and infinity.
    tol : ProxTolerance
        Accuracy of the nested root solves.
    full_output : bool
        Also return the multiplier ``lam >= 0`` of the constraint
        ``sum |x_j|**q <= r**q``; at the solution
        ``|x_j| + lam*q*|x_j|**(q-1) = |v_j|``.

    Raises
    ------
    ConvergenceError
        If a root solve exhausts its iteration budget.
    """
    q = canonical_exponent(q)
    if not 1.0 < q < INF:
        raise ValueError(f"project_lq_ball needs 1 < q < inf, got {q}")
    r = float(r)
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    X, lam = project_lq_rows(_as_row(v), r, q, tol)
    if full_output:
        return X[0], float(lam[0])
    return X[0]


def prox_lq_general(v, theta, q, tol=DEFAULT_TOL):
    """Root-finding prox for any ``1 < q < inf`` (no closed-form shortcut)."""
    theta = _check_theta(theta)
    q = canonical_exponent(q)
    if not 1.0 < q < INF:
        raise ValueError(f"prox_lq_general needs 1 < q < inf, got {q}")
    if theta == 0.0:
        return np.array(v, dtype=float, copy=True)
    return prox_lq_rows(_as_row(v), theta, q, tol)[0]


def prox_lq(v, theta, q, tol=DEFAULT_TOL):
    """Prox of ``theta * ||.||_q`` for any ``q`` in ``[1, inf]``."""
    theta = _check_theta(theta)
    return prox_rows(_as_row(v), theta, q, tol)[0]


def prox_grouped(y: GroupedVector, theta, q, tol=DEFAULT_TOL):
    """Prox of ``theta * ||.||_{1,q}``: the ``l_q`` prox applied group by group."""
    theta = _check_theta(theta)
    part = y.partition
    return y.with_data(part.unpad(prox_rows(y.padded(), theta, q, tol)))
