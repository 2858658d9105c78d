"""Mixed norms over groups, their duals, and Schatten (matrix) variants.

Exponents are floats in ``[1, inf]``; ``math.inf`` is the infinity exponent
and is dispatched on exactly.  Finite exponents above ``1e6`` are treated
as infinite, since ``|v|**q`` is indistinguishable from the max at double
precision long before that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GroupedVector, svd

INF = math.inf
LARGE_EXPONENT = 1e6


def canonical_exponent(e):
    """Validate an exponent, snapping it to ``inf`` above ``LARGE_EXPONENT``.

    Exponents whose conjugate would exceed ``LARGE_EXPONENT`` snap to 1, so
    the snapping commutes with conjugation.
    """
    e = float(e)
    if not e >= 1.0:  # also rejects nan
        raise ValueError(f"exponent must be >= 1, got {e}")
    if e > LARGE_EXPONENT:
        return INF
    if e < LARGE_EXPONENT / (LARGE_EXPONENT - 1.0):
        return 1.0
    return e


def dual_exponent(e):
    """Conjugate exponent ``e*`` with ``1/e + 1/e* = 1`` (``1 <-> inf``)."""
    e = canonical_exponent(e)
    if e == 1.0:
        return INF
    if e == INF:
        return 1.0
    return canonical_exponent(e / (e - 1.0))


@dataclass(frozen=True)
class NormSpec:
    """Outer exponent ``p`` over groups, inner exponent ``q`` within groups."""

    p: float = 1.0
    q: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "p", canonical_exponent(self.p))
        object.__setattr__(self, "q", canonical_exponent(self.q))

    @property
    def dual(self):
        return NormSpec(dual_exponent(self.p), dual_exponent(self.q))


def row_norms(A, q):
    """``l_q`` norm of every row of a 2-D array.

    Power sums run on each row divided by its largest magnitude, so nothing
    overflows for large ``q`` or large entries; the result is rescaled after.
    """
    q = canonical_exponent(q)
    A = np.abs(np.asarray(A, dtype=float))
    if A.ndim != 2:
        raise ValueError("row_norms expects a 2-D array")
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    if q == 1.0:
        return A.sum(axis=1)
    scale = A.max(axis=1)
    if q == INF:
        return scale
    safe = np.where(scale > 0, scale, 1.0)[:, None]
    B = A / safe
    if q == 2.0:
        s = np.sqrt(np.einsum("ij,ij->i", B, B))
    else:
        s = np.power(B, q).sum(axis=1) ** (1.0 / q)
    return np.where(scale > 0, s * scale, 0.0)


def lq_norm(v, q):
    """``(sum |v_j|**q)**(1/q)``; max for ``q = inf``; 0 for an empty vector."""
    v = np.asarray(v, dtype=float).ravel()
    return float(row_norms(v[None, :], q)[0])


def group_norms(x: GroupedVector, q):
    """Vector of per-group ``l_q`` norms."""
    return row_norms(x.padded(), q)


def mixed_norm(x: GroupedVector, spec: NormSpec):
    """``l_{p,q}`` norm: the ``l_p`` norm of the per-group ``l_q`` norms."""
    return lq_norm(group_norms(x, spec.q), spec.p)


def dual_mixed_norm(u: GroupedVector, spec: NormSpec):
    """Norm dual to ``l_{p,q}``, namely ``l_{p*,q*}``."""
    return mixed_norm(u, spec.dual)


def dual_witness(u: GroupedVector, spec: NormSpec):
    """Unit ``l_{p,q}`` vector ``x`` with ``<x, u> = ||u||_{p*,q*}``.

    Only the finite branch ``1 < p, q < inf`` is supported.  Entry ``j`` of
    group ``i`` is

        ||u^i||^(p*-q*) * sign(u^i_j) * |u^i_j|^(q*-1) / beta^(1/p)

    with ``beta = sum_i ||u^i||^p*`` and every ``||.||`` the ``l_{q*}`` norm.
    The expression is invariant to positive scaling of ``u``, so it is
    evaluated on ``u / max|u|``.
    """
    p, q = spec.p, spec.q
    if not (1.0 < p < INF and 1.0 < q < INF):
        raise ValueError("dual_witness supports only finite exponents 1 < p, q < inf")
    amax = float(np.max(np.abs(u.data))) if u.data.size else 0.0
    if amax == 0.0:
        raise ValueError("dual_witness needs a nonzero vector")
    ps, qs = dual_exponent(p), dual_exponent(q)
    U = u.padded() / amax
    gn = row_norms(U, qs)
    beta = np.sum(gn ** ps)
    live = gn > 0
    coef = np.zeros_like(gn)
    coef[live] = gn[live] ** (ps - qs)
    X = coef[:, None] * np.sign(U) * np.abs(U) ** (qs - 1.0) / beta ** (1.0 / p)
    return u.with_data(u.partition.unpad(X))


def schatten_norm(X, q):
    """``l_q`` norm of the singular values of ``X``."""
    _, s, _ = svd(X)
    return lq_norm(s, q)


def matrix_mixed_norm(blocks, spec: NormSpec):
    """``(sum_i ||X^i||_q^p)^(1/p)`` over Schatten-``q`` block norms."""
    if len(blocks) == 0:
        raise ValueError("need at least one block")
    return lq_norm([schatten_norm(B, spec.q) for B in blocks], spec.p)
