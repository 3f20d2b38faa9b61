"""Local-linear fits: along a candidate index and in full dimension.

Each fit minimises a kernel-weighted loss of local-linear residuals around
an anchor point and delegates the actual minimisation to the solvers in
``qmave.solver``.  Batched variants (`index_fit_batch`, `full_fit_batch`)
solve many anchors at once with identical semantics; they exist because
the alternating estimator refits every anchor on every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import KernelSpec, LossSpec, kernel_eval
from .errors import (
    DegenerateProblemError,
    InsufficientLocalDataError,
    InvalidInputError,
)
from .solver import (
    SolverOptions,
    WeightedRegressionProblem,
    _solve_ls_batch,
    _solve_qr_batch,
    solve_weighted_ls,
    solve_weighted_qr,
)

__all__ = [
    "Dataset",
    "LocalFit",
    "local_linear_index_fit",
    "local_linear_full_fit",
]

# Relative eigenvalue floor below which a weighted local design is treated
# as not being in general position.
_RANK_RTOL = 1e-10


@dataclass
class Dataset:
    """Observations ``(X, Y)`` with ``X`` of shape (n, d) and ``Y`` (n,).

    Construction checks shape and finiteness only; estimators that need a
    minimum sample size (n >= 2(d+1)) enforce it at their own entry so
    that small datasets remain usable with the utility operations.
    """

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        n, d = self.X.shape
        if d < 1:
            raise InvalidInputError("X needs at least one covariate column")
        if n < 2:
            raise InvalidInputError(f"need at least two observations, got {n}")
        if self.Y.shape != (n,):
            raise InvalidInputError("Y must have one entry per row of X")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise InvalidInputError("observations must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class LocalFit:
    """Level and slope of one local-linear fit.

    ``b`` is a scalar for fits along an index and a length-d vector for
    full-dimensional fits; ``effective_weight`` is the sum of the kernel
    weights actually used.
    """

    a: float
    b: float | np.ndarray
    effective_weight: float


def _unit_or_raise(theta, d):
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape != (d,):
        raise InvalidInputError(f"index vector must have length {d}")
    if not np.all(np.isfinite(theta)) or abs(np.linalg.norm(theta) - 1.0) > 1e-8:
        raise InvalidInputError("index vector must be unit-norm")
    return theta


def local_linear_index_fit(
    data: Dataset,
    theta,
    x0,
    h: float,
    loss: LossSpec,
    kernel: KernelSpec,
    opts: SolverOptions | None = None,
) -> LocalFit:
    """Local-linear fit of Y on the projected offset ``theta'(X - x0)``.

    Minimises ``sum_i K(theta'(X_i-x0)/h) loss(Y_i - a - b theta'(X_i-x0))``
    over (a, b); rows with zero kernel weight are dropped before solving.
    """
    theta = _unit_or_raise(theta, data.d)
    if not h > 0:
        raise InvalidInputError(f"bandwidth must be positive, got {h}")
    x0 = np.asarray(x0, dtype=float).ravel()
    t = (data.X - x0) @ theta
    w = kernel_eval(kernel, t / h)
    keep = w > 0
    tk = t[keep]
    if tk.size < 2 or np.max(tk) <= np.min(tk):
        raise InsufficientLocalDataError(
            "fewer than 2 distinct index values carry positive weight"
        )
    Z = np.column_stack([np.ones(tk.size), tk])
    problem = WeightedRegressionProblem(Z, data.Y[keep], w[keep], loss)
    try:
        if loss.is_quantile:
            beta = solve_weighted_qr(problem, opts)
        else:
            beta = solve_weighted_ls(problem, opts)
    except DegenerateProblemError as exc:
        raise InsufficientLocalDataError(str(exc)) from exc
    return LocalFit(float(beta[0]), float(beta[1]), float(np.sum(w[keep])))


def _product_kernel_weights(kernel, U):
    return np.prod(kernel_eval(kernel, U), axis=-1)


def local_linear_full_fit(
    data: Dataset,
    x0,
    h0: float,
    loss: LossSpec,
    kernel: KernelSpec,
    opts: SolverOptions | None = None,
) -> LocalFit:
    """Local-linear fit of Y on the full offset ``X - x0``.

    Weights come from the product kernel ``prod_l K((X_il - x0_l)/h0)``.
    Raises ``InsufficientLocalDataError`` when fewer than d+1 rows in
    general position carry positive weight.
    """
    if not h0 > 0:
        raise InvalidInputError(f"bandwidth must be positive, got {h0}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (data.d,):
        raise InvalidInputError(f"anchor must have length {data.d}")
    D = data.X - x0
    w = _product_kernel_weights(kernel, D / h0)
    keep = w > 0
    k = int(np.count_nonzero(keep))
    if k < data.d + 1:
        raise InsufficientLocalDataError(
            f"only {k} positively-weighted rows inside the window, "
            f"need at least {data.d + 1}"
        )
    Z = np.column_stack([np.ones(k), D[keep]])
    wk = w[keep]
    A = (Z * wk[:, None]).T @ Z
    eigs = np.linalg.eigvalsh(A)
    if eigs[0] <= _RANK_RTOL * eigs[-1]:
        raise InsufficientLocalDataError(
            "weighted local design is not in general position"
        )
    problem = WeightedRegressionProblem(Z, data.Y[keep], wk, loss)
    try:
        if loss.is_quantile:
            beta = solve_weighted_qr(problem, opts)
        else:
            beta = solve_weighted_ls(problem, opts)
    except DegenerateProblemError as exc:
        raise InsufficientLocalDataError(str(exc)) from exc
    return LocalFit(float(beta[0]), beta[1:].copy(), float(np.sum(wk)))


def _padded_gather(weights):
    """Pack positive-weight rows first along axis 0, preserving row order.

    ``weights`` is (n, m); returns gather indices of shape (m, L) with
    L = max positive count, plus the per-anchor positive counts.
    """
    counts = np.count_nonzero(weights > 0, axis=0)
    max_len = max(int(counts.max()), 1)
    order = np.argsort(weights <= 0, axis=0, kind="stable")
    return order[:max_len].T, counts


def index_fit_batch(data, theta, anchors, h, loss, kernel, opts=None):
    """Local-linear index fits at ``X[anchors]``, all anchors at once.

    Returns ``(kept_anchor_indices, a, b, effective_weight)`` with anchors
    lacking two distinct weighted index values (or producing non-finite
    solutions) silently omitted, in the same order as ``anchors``.
    """
    opts = opts or SolverOptions()
    theta = np.asarray(theta, dtype=float).ravel()
    anchors = np.asarray(anchors, dtype=int)
    t = data.X @ theta
    T = t[:, None] - t[anchors][None, :]
    W = kernel_eval(kernel, T / h)
    pos = W > 0
    tmax = np.max(np.where(pos, T, -np.inf), axis=0)
    tmin = np.min(np.where(pos, T, np.inf), axis=0)
    usable = (np.count_nonzero(pos, axis=0) >= 2) & (tmax > tmin)
    if not np.any(usable):
        return anchors[:0], np.empty(0), np.empty(0), np.empty(0)
    cols = np.flatnonzero(usable)
    gather, _ = _padded_gather(W[:, cols])
    Tg = np.take_along_axis(T[:, cols].T, gather, axis=1)
    Wg = np.take_along_axis(W[:, cols].T, gather, axis=1)
    Yg = data.Y[gather]
    Zb = np.stack([np.ones_like(Tg), Tg], axis=2)
    if loss.is_quantile:
        beta, _, _ = _solve_qr_batch(Zb, Yg, Wg, loss.tau, opts)
    else:
        beta = _solve_ls_batch(Zb, Yg, Wg, opts)
    ok = np.all(np.isfinite(beta), axis=1)
    return (
        anchors[cols[ok]],
        beta[ok, 0],
        beta[ok, 1],
        np.sum(Wg, axis=1)[ok],
    )


def full_fit_batch(data, anchors, h0, loss, kernel, opts=None, chunk=256):
    """Full-dimensional local fits at ``X[anchors]``, anchors in chunks.

    Returns ``(kept_anchor_indices, a, B, effective_weight)`` where ``B``
    has one slope row per kept anchor.  Anchors with too few weighted
    rows, a rank-deficient window or a non-finite solution are omitted.
    """
    opts = opts or SolverOptions()
    anchors = np.asarray(anchors, dtype=int)
    d = data.d
    kept_idx, kept_a, kept_b, kept_w = [], [], [], []
    for start in range(0, anchors.size, chunk):
        block = anchors[start : start + chunk]
        D = data.X[:, None, :] - data.X[None, block, :]
        W = _product_kernel_weights(kernel, D / h0)
        counts = np.count_nonzero(W > 0, axis=0)
        usable = counts >= d + 1
        if not np.any(usable):
            continue
        cols = np.flatnonzero(usable)
        gather, _ = _padded_gather(W[:, cols])
        L = gather.shape[1]
        Dg = np.take_along_axis(
            D[:, cols, :].transpose(1, 0, 2), gather[:, :, None], axis=1
        )
        Wg = np.take_along_axis(W[:, cols].T, gather, axis=1)
        Yg = data.Y[gather]
        Zb = np.concatenate([np.ones((cols.size, L, 1)), Dg], axis=2)
        wz = Zb * Wg[:, :, None]
        A = np.matmul(Zb.transpose(0, 2, 1), wz)
        eigs = np.linalg.eigvalsh(A)
        sane = eigs[:, 0] > _RANK_RTOL * eigs[:, -1]
        if not np.any(sane):
            continue
        sub = np.flatnonzero(sane)
        Zb, Yg, Wg = Zb[sub], Yg[sub], Wg[sub]
        if loss.is_quantile:
            beta, _, _ = _solve_qr_batch(Zb, Yg, Wg, loss.tau, opts)
        else:
            beta = _solve_ls_batch(Zb, Yg, Wg, opts)
        ok = np.all(np.isfinite(beta), axis=1)
        kept_idx.append(block[cols[sub[ok]]])
        kept_a.append(beta[ok, 0])
        kept_b.append(beta[ok, 1:])
        kept_w.append(np.sum(Wg, axis=1)[ok])
    if not kept_idx:
        return anchors[:0], np.empty(0), np.empty((0, d)), np.empty(0)
    return (
        np.concatenate(kept_idx),
        np.concatenate(kept_a),
        np.vstack(kept_b),
        np.concatenate(kept_w),
    )
