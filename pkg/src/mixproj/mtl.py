"""Multitask lasso: per-task least squares sharing a row-sparse weight matrix.

The weight matrix ``W`` is ``d x n`` (features by tasks); column ``j``
belongs to task ``j`` and the constraint groups are the rows of ``W``.
Flattening ``W`` in C order therefore lays the groups out contiguously,
which is how :func:`to_constrained` exposes the problem to the solvers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import (
    FormatError, GroupedVector, GroupPartition, csr_from_arrays, read_matrix_market,
    read_vector_csv, write_matrix_market, write_vector_csv,
)
from .norms import INF, canonical_exponent, row_norms
from .solvers import ConstrainedProblem, check_gradient

__all__ = [
    "MtlProblem", "SynthSpec", "mtl_objective", "mtl_gradient", "mtl_stoch_gradient",
    "rows_to_grouped", "grouped_to_rows", "generate_synthetic", "save_mtl", "load_mtl",
    "load_tasks", "normalize_columns", "to_constrained", "planted_norm", "support_f1",
]


@dataclass(frozen=True, eq=False)
class MtlProblem:
    """Tasks ``(X_j, y_j)`` with ``X_j`` sparse ``m_j x d``, plus the ball ``(gamma, q)``."""

    X: tuple
    y: tuple
    gamma: float
    q: float = INF

    def __post_init__(self):
        X = tuple(sp.csr_matrix(A, dtype=float) for A in self.X)
        y = tuple(np.asarray(v, dtype=float).ravel() for v in self.y)
        if not X:
            raise ValueError("need at least one task")
        if len(X) != len(y):
            raise ValueError(f"{len(X)} design matrices but {len(y)} label vectors")
        d = X[0].shape[1]
        for j, (A, v) in enumerate(zip(X, y)):
            if A.shape[1] != d:
                raise ValueError(f"task {j} has {A.shape[1]} columns, expected {d}")
            if v.size != A.shape[0]:
                raise ValueError(f"task {j}: {v.size} labels for {A.shape[0]} rows")
        if not self.gamma > 0:
            raise ValueError(f"radius must be positive, got {self.gamma}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "q", canonical_exponent(self.q))
        offsets = np.concatenate([[0], np.cumsum([A.shape[0] for A in X])]).astype(np.int64)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def d(self):
        return self.X[0].shape[1]

    @property
    def n(self):
        return len(self.X)

    @property
    def sizes(self):
        return np.diff(self._offsets)

    @property
    def r(self):
        """Total number of rows (loss components) over all tasks."""
        return int(self._offsets[-1])

    def task_of(self, idx):
        """Split global row indices into ``(task, row)`` arrays."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.r):
            raise IndexError(f"row index out of range [0, {self.r})")
        task = np.searchsorted(self._offsets, idx, side="right") - 1
        return task, idx - self._offsets[task]

    def frobenius_sq(self):
        return float(sum(A.multiply(A).sum() for A in self.X))


def _check_W(W, prob):
    W = np.asarray(W, dtype=float)
    if W.shape != (prob.d, prob.n):
        raise ValueError(f"W has shape {W.shape}, expected {(prob.d, prob.n)}")
    return W


def mtl_objective(W, prob: MtlProblem):
    """``sum_j 0.5 * ||y_j - X_j w_j||^2``."""
    W = _check_W(W, prob)
    total = 0.0
    for j, (A, y) in enumerate(zip(prob.X, prob.y)):
        res = A @ W[:, j] - y
        total += 0.5 * float(np.dot(res, res))
    return total


def mtl_gradient(W, prob: MtlProblem):
    """Column ``j`` is ``X_j^T (X_j w_j - y_j)``."""
    W = _check_W(W, prob)
    G = np.empty_like(W)
    for j, (A, y) in enumerate(zip(prob.X, prob.y)):
        G[:, j] = A.T @ (A @ W[:, j] - y)
    return G


def mtl_stoch_gradient(W, prob: MtlProblem, batch):
    """Unbiased gradient estimate from a batch of rows.

    Parameters
    ----------
    W : ndarray, shape (d, n)
    prob : MtlProblem
    batch : array_like
        Either global row indices (1-D, into the concatenation of all tasks)
        or ``(task, row)`` pairs (shape ``(b, 2)``).

    Returns
    -------
    ndarray, shape (d, n)
        ``(r / b) * sum_{(j,i) in batch} x_ji (x_ji^T w_j - y_ji)`` placed in
        column ``j``.  A batch listing every row once reproduces
        :func:`mtl_gradient` exactly.
    """
    W = _check_W(W, prob)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim == 2:
        if batch.shape[1] != 2:
            raise ValueError("pair batches must have shape (b, 2)")
        task, row = batch[:, 0], batch[:, 1]
        if task.size and (task.min() < 0 or task.max() >= prob.n):
            raise IndexError(f"task index out of range [0, {prob.n})")
        if np.any(row < 0) or np.any(row >= prob.sizes[task]):
            raise IndexError("row index out of range for its task")
        glob = prob._offsets[task] + row
    else:
        glob = batch.ravel()
        task, row = prob.task_of(glob)
    b = glob.size
    if b == 0:
        raise ValueError("empty batch")
    if b == prob.r and np.array_equal(np.sort(glob), np.arange(prob.r)):
        return mtl_gradient(W, prob)
    G = np.zeros_like(W)
    order = np.argsort(task, kind="stable")
    task, row = task[order], row[order]
    bounds = np.flatnonzero(np.diff(task)) + 1
    for tr, rr in zip(np.split(task, bounds), np.split(row, bounds)):
        j = int(tr[0])
        A = prob.X[j][rr]
        G[:, j] = A.T @ (A @ W[:, j] - prob.y[j][rr])
    G *= prob.r / b
    return G


def rows_to_grouped(W):
    """View ``W`` (d x n) as a :class:`GroupedVector` with one group per row."""
    return GroupedVector.from_rows(np.asarray(W, dtype=float))


def grouped_to_rows(x: GroupedVector):
    """Inverse of :func:`rows_to_grouped` (requires equal group sizes)."""
    size = x.partition.uniform_size
    if size is None:
        raise ValueError("groups have unequal sizes")
    return x.ungroup().reshape(x.m, size)


def planted_norm(W):
    """``sum_i ||w^i||_inf`` over the rows of ``W``."""
    return float(np.sum(row_norms(np.asarray(W, dtype=float), INF)))


def to_constrained(prob: MtlProblem, check=True, rng=None):
    """Wrap ``prob`` as a :class:`ConstrainedProblem` on ``W.ravel()``.

    With ``check`` the gradient oracle is verified against finite
    differences at 20 random points before returning.
    """
    d, n = prob.d, prob.n

    def shape(x):
        return np.asarray(x, dtype=float).reshape(d, n)

    cp = ConstrainedProblem(
        partition=GroupPartition.uniform(d, n),
        loss=lambda x: mtl_objective(shape(x), prob),
        grad=lambda x: mtl_gradient(shape(x), prob).ravel(),
        q=prob.q,
        gamma=prob.gamma,
        stoch_grad=lambda x, idx: mtl_stoch_gradient(shape(x), prob, idx).ravel(),
        n_components=prob.r,
        step_scale=1.0 / max(prob.frobenius_sq(), np.finfo(float).tiny),
    )
    if check:
        check_gradient(cp, points=20, rtol=1e-5, rng=rng)
    return cp


def normalize_columns(prob: MtlProblem):
    """Scale every feature to unit Euclidean norm across all tasks.

    Returns the rescaled problem and the scale vector ``s``; a solution
    ``W'`` of the new problem maps back as ``W = W' * s[:, None]``.
    Note that the ball constraint applies to ``W'``.
    """
    sq = sum(np.asarray(A.multiply(A).sum(axis=0)).ravel() for A in prob.X)
    norms = np.sqrt(sq)
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    D = sp.diags(scale)
    return MtlProblem(tuple(A @ D for A in prob.X), prob.y, prob.gamma, prob.q), scale


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic multitask problem.

    ``noise=None`` uses ``0.01 *`` the RMS of the noiseless labels (or 1 if
    they are all zero).
    """

    m: int
    d: int
    n: int
    density: float = 1.0
    active: int = 5
    noise: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.d, self.n) < 1:
            raise ValueError("m, d and n must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if not 0 <= self.active <= self.d:
            raise ValueError("active rows must lie in [0, d]")
        if self.noise is not None and self.noise < 0:
            raise ValueError("noise level must be nonnegative")


def _random_design(m, d, density, rng):
    nnz = int(round(density * m * d))
    flat = np.sort(rng.choice(m * d, size=nnz, replace=False)) if nnz < m * d else np.arange(m * d)
    rows, cols = np.divmod(flat, d)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=m))])
    return csr_from_arrays(indptr, cols, rng.standard_normal(nnz), (m, d))


def generate_synthetic(spec: SynthSpec):
    """Random sparse designs with a planted row-sparse ``W``.

    Returns ``(problem, W)`` where the problem radius is the planted norm
    ``sum_i ||w^i||_inf`` (1 when no row is active) and ``q = inf``.
    """
    rng = np.random.default_rng(spec.seed)
    X = [_random_design(spec.m, spec.d, spec.density, rng) for _ in range(spec.n)]
    W = np.zeros((spec.d, spec.n))
    rows = np.sort(rng.choice(spec.d, size=spec.active, replace=False))
    W[rows] = rng.standard_normal((spec.active, spec.n))
    signal = [A @ W[:, j] for j, A in enumerate(X)]
    if spec.noise is None:
        rms = math.sqrt(sum(float(np.dot(s, s)) for s in signal) / (spec.m * spec.n))
        sigma = 0.01 * rms if rms > 0 else 1.0
    else:
        sigma = spec.noise
    y = [s + sigma * rng.standard_normal(spec.m) if sigma > 0 else s for s in signal]
    gamma = planted_norm(W)
    return MtlProblem(tuple(X), tuple(y), gamma if gamma > 0 else 1.0, INF), W


def _q_to_json(q):
    return "inf" if q == INF else q


def save_mtl(prob: MtlProblem, directory, extra=None):
    """Write ``task_NNN.mtx``/``task_NNN.csv`` per task and ``manifest.json``.

    Paths in the manifest are relative to its directory.  ``extra`` entries
    are merged into the manifest.  Returns the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tasks = []
    width = max(3, len(str(prob.n - 1)))
    for j, (A, y) in enumerate(zip(prob.X, prob.y)):
        stem = f"task_{j:0{width}d}"
        write_matrix_market(directory / f"{stem}.mtx", A)
        write_vector_csv(directory / f"{stem}.csv", y)
        tasks.append({"X": f"{stem}.mtx", "y": f"{stem}.csv"})
    manifest = {"d": prob.d, "n": prob.n, "gamma": prob.gamma, "q": _q_to_json(prob.q), "tasks": tasks}
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_tasks(pairs, gamma, q=INF, d=None):
    """Build a problem from ``(matrix_path, label_path)`` pairs.

    Raises :class:`FormatError` naming the offending file when a column
    count differs from ``d`` (or from the first task) or a label count
    differs from the matrix rows.
    """
    X, y = [], []
    for mpath, ypath in pairs:
        A = read_matrix_market(mpath)
        v = read_vector_csv(ypath)
        if d is None:
            d = A.shape[1]
        if A.shape[1] != d:
            raise FormatError(f"{mpath}: {A.shape[1]} columns, expected {d}")
        if v.size != A.shape[0]:
            raise FormatError(f"{ypath}: {v.size} labels for {A.shape[0]} matrix rows in {mpath}")
        X.append(A)
        y.append(v)
    return MtlProblem(tuple(X), tuple(y), gamma, q)


def load_mtl(manifest_path):
    """Load a problem described by a JSON manifest written by :func:`save_mtl`."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    for key in ("d", "gamma", "tasks"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    base = manifest_path.parent
    pairs = [(base / t["X"], base / t["y"]) for t in manifest["tasks"]]
    if "n" in manifest and manifest["n"] != len(pairs):
        raise FormatError(f"{manifest_path}: n={manifest['n']} but {len(pairs)} tasks listed")
    q = manifest.get("q", "inf")
    q = INF if q in ("inf", "Infinity") else float(q)
    return load_tasks(pairs, float(manifest["gamma"]), q, int(manifest["d"]))


def support_f1(W, planted, rtol=1e-3):
    """F1 score between the nonzero rows of ``W`` and of ``planted``.

    A row of ``W`` counts as active when its largest entry exceeds ``rtol``
    times the largest entry of ``W``.
    """
    norms = row_norms(np.asarray(W, dtype=float), INF)
    top = norms.max() if norms.size else 0.0
    found = norms > rtol * top if top > 0 else np.zeros(norms.size, bool)
    truth = row_norms(np.asarray(planted, dtype=float), INF) > 0
    tp = np.count_nonzero(found & truth)
    if tp == 0:
        return 1.0 if not found.any() and not truth.any() else 0.0
    precision = tp / np.count_nonzero(found)
    recall = tp / np.count_nonzero(truth)
    return 2 * precision * recall / (precision + recall)
