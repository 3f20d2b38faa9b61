"""Alternating estimation of the index direction.

Each iteration performs two steps: the inner step refits a local-linear
model at every untrimmed anchor along the current index, and the outer
step pools all (observation, anchor) pairs into one weighted linear
regression whose solution, normalised to unit length, becomes the next
index.  Iteration stops when successive indices agree up to sign within
``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BandwidthRule,
    KernelSpec,
    LossSpec,
    check_loss,
    coordinate_dispersion,
    default_bandwidth,
    index_dispersion,
    kernel_eval,
)
from .errors import (
    DegenerateDirectionError,
    DegenerateProblemError,
    DegenerateUpdateError,
    InsufficientDataError,
    InvalidInputError,
    QmaveError,
)
from .initial import TrimSpec, ade_initial_estimate, trim_mask
from .localfit import Dataset, LocalFit, index_fit_batch
from .solver import (
    SolverOptions,
    WeightedRegressionProblem,
    solve_weighted_ls,
    solve_weighted_qr,
)

__all__ = [
    "QmaveConfig",
    "IndexFit",
    "inner_step",
    "outer_problem",
    "outer_step",
    "eq_objective",
    "qmave_fit",
    "estimation_error",
]

# Bandwidth escalation ladder for the automatic initial estimate: the
# rate-rule h0 can leave full-dimensional windows empty at moderate n, so
# the bandwidth is widened geometrically until enough anchors fit.
_INIT_LADDER = (1.0, 1.5, 2.25, 3.375, 5.0625, 7.59375)


@dataclass
class QmaveConfig:
    """Configuration of the alternating fit.

    ``h=None`` selects the rate-default bandwidth (computed once from the
    initial index values and held fixed across iterations); ``init=None``
    selects the automatic average-derivative initial estimate.
    """

    loss: LossSpec = field(default_factory=lambda: LossSpec.quantile(0.5))
    kernel: KernelSpec = field(default_factory=KernelSpec.epanechnikov)
    h: float | None = None
    trim: TrimSpec = field(default_factory=TrimSpec)
    tol: float = 1e-4
    max_iter: int = 50
    init: np.ndarray | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidInputError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.h is not None and not self.h > 0:
            raise InvalidInputError(f"bandwidth must be positive, got {self.h}")


@dataclass
class IndexFit:
    """Fitted unit index with the iteration history."""

    theta: np.ndarray
    iterations: int
    converged: bool
    theta_trace: list
    objective_trace: list


def estimation_error(theta_hat, theta_0) -> float:
    """Sign-invariant Euclidean distance between unit index vectors."""
    a = _as_unit(theta_hat, "theta_hat")
    b = _as_unit(theta_0, "theta_0")
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def _as_unit(v, name):
    v = np.asarray(v, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    if not np.all(np.isfinite(v)) or abs(nrm - 1.0) > 1e-6:
        raise InvalidInputError(f"{name} must be a finite unit vector")
    return v / nrm


def resolve_bandwidth(data: Dataset, theta, cfg: QmaveConfig) -> float:
    """cfg.h if given, otherwise the index-stage default bandwidth scaled
    by the dispersion of the current index values."""
    if cfg.h is not None:
        return float(cfg.h)
    scale = index_dispersion(data.X @ np.asarray(theta, dtype=float))
    return default_bandwidth(BandwidthRule.index(), data.n, scale)


def inner_step(data: Dataset, theta, cfg: QmaveConfig):
    """Local-linear fits along ``theta`` at every untrimmed anchor.

    Returns ``[(j, LocalFit), ...]``; anchors with too little local data
    are dropped for this iteration.
    """
    theta = _as_unit(theta, "theta")
    h = resolve_bandwidth(data, theta, cfg)
    anchors = np.flatnonzero(trim_mask(data, cfg.trim))
    idx, a, b, effw = index_fit_batch(data, theta, anchors, h, cfg.loss, cfg.kernel)
    if idx.size < 2:
        raise InsufficientDataError(
            f"only {idx.size} anchors admit a local fit at h={h:.4g}"
        )
    return [
        (int(j), LocalFit(float(ai), float(bi), float(wi)))
        for j, ai, bi, wi in zip(idx, a, b, effw)
    ]


def _fits_arrays(fits):
    j = np.array([jj for jj, _ in fits], dtype=int)
    a = np.array([f.a for _, f in fits], dtype=float)
    b = np.array([f.b for _, f in fits], dtype=float)
    return j, a, b


def outer_problem(
    data: Dataset, theta, fits, cfg: QmaveConfig
) -> WeightedRegressionProblem:
    """Pooled regression of the index update.

    One row per (i, j) pair with positive kernel weight: response
    ``Y_i - a_j``, design ``b_j (X_i - X_j)``, weight ``K(theta'(X_i-X_j)/h)``.
    """
    theta = _as_unit(theta, "theta")
    h = resolve_bandwidth(data, theta, cfg)
    j, a, b = _fits_arrays(fits)
    t = data.X @ theta
    T = t[:, None] - t[j][None, :]
    W = kernel_eval(cfg.kernel, T / h)
    ii, cc = np.nonzero(W > 0)
    design = b[cc, None] * (data.X[ii] - data.X[j[cc]])
    response = data.Y[ii] - a[cc]
    return WeightedRegressionProblem(design, response, W[ii, cc], cfg.loss)


def outer_step(data: Dataset, theta, fits, cfg: QmaveConfig) -> np.ndarray:
    """One global index update: solve the pooled regression, normalise,
    and align the sign with the incoming ``theta``."""
    if not fits:
        raise InsufficientDataError("no local fits supplied to the outer step")
    _, _, b = _fits_arrays(fits)
    if np.all(b == 0):
        raise DegenerateUpdateError("all local slopes are zero")
    problem = outer_problem(data, theta, fits, cfg)
    try:
        if cfg.loss.is_quantile:
            beta = solve_weighted_qr(problem)
        else:
            beta = solve_weighted_ls(problem)
    except DegenerateProblemError as exc:
        raise DegenerateUpdateError(str(exc)) from exc
    nrm = float(np.linalg.norm(beta))
    if not np.isfinite(nrm) or nrm == 0.0:
        raise DegenerateUpdateError("index update has no usable direction")
    new = beta / nrm
    if float(new @ np.asarray(theta, dtype=float)) < 0:
        new = -new
    return new


def eq_objective(data: Dataset, theta, fits, cfg: QmaveConfig) -> float:
    """Pooled local-fit objective at ``theta`` given the fitted (a_j, b_j):
    ``sum_{i,j} K(theta'(X_i-X_j)/h) loss(Y_i - a_j - b_j theta'(X_i-X_j))``."""
    theta = _as_unit(theta, "theta")
    h = resolve_bandwidth(data, theta, cfg)
    j, a, b = _fits_arrays(fits)
    t = data.X @ theta
    T = t[:, None] - t[j][None, :]
    W = kernel_eval(cfg.kernel, T / h)
    R = data.Y[:, None] - a[None, :] - b[None, :] * T
    return float(np.sum(W * check_loss(R, cfg.loss)))


def _median_window_count(data: Dataset, anchors, h0: float, kernel) -> float:
    D = data.X[:, None, :] - data.X[None, anchors, :]
    W = np.prod(kernel_eval(kernel, D / h0), axis=-1)
    return float(np.median(np.count_nonzero(W > 0, axis=0)))


def _auto_init(data: Dataset, cfg: QmaveConfig) -> np.ndarray:
    """Average-derivative initial estimate with bandwidth escalation.

    The rate-rule bandwidth leaves full-dimensional windows with barely
    d+1 points at moderate n, which makes the local slopes interpolation
    noise; the ladder widens h0 until the median window holds enough
    points to damp the slope variance."""
    tau = cfg.loss.tau if cfg.loss.is_quantile else 0.5
    base = default_bandwidth(
        BandwidthRule.full_dim(data.d), data.n, coordinate_dispersion(data.X)
    )
    anchors = np.flatnonzero(trim_mask(data, cfg.trim))
    if anchors.size == 0:
        raise InsufficientDataError("trimming removed every anchor point")
    target = max(4 * (data.d + 1), 24)
    counts = [
        _median_window_count(data, anchors, base * mult, cfg.kernel)
        for mult in _INIT_LADDER
    ]
    enough = [k for k, c in enumerate(counts) if c >= target]
    start = enough[0] if enough else int(np.argmax(counts))
    for k in range(start, len(_INIT_LADDER)):
        try:
            est = ade_initial_estimate(
                data, tau, base * _INIT_LADDER[k], cfg.trim, cfg.kernel, loss=cfg.loss
            )
            return est.theta
        except (InsufficientDataError, DegenerateDirectionError):
            continue
    raise InsufficientDataError(
        "automatic initialisation failed: no bandwidth in the escalation "
        "ladder produced enough usable local fits"
    )


def qmave_fit(data: Dataset, cfg: QmaveConfig | None = None) -> IndexFit:
    """Alternate inner and outer steps until the index stabilises.

    The bandwidth is resolved once from the initial index and held fixed
    across iterations.  On hitting ``max_iter`` without convergence the
    lowest-objective iterate is returned with ``converged=False``.
    Deterministic: no internal randomness.
    """
    cfg = cfg or QmaveConfig()
    if data.n < 2 * (data.d + 1):
        raise InsufficientDataError(
            f"need n >= 2(d+1) = {2 * (data.d + 1)} observations, got {data.n}"
        )
    if cfg.init is not None:
        theta = _as_unit(cfg.init, "init")
    else:
        theta = _auto_init(data, cfg)
    run = replace(cfg, h=resolve_bandwidth(data, theta, cfg), init=None)

    theta_trace = [theta]
    objective_trace: list[float] = []
    converged = False
    iterations = 0
    for k in range(1, run.max_iter + 1):
        try:
            fits = inner_step(data, theta, run)
            objective_trace.append(eq_objective(data, theta, fits, run))
            new = outer_step(data, theta, fits, run)
        except (InsufficientDataError, DegenerateUpdateError) as exc:
            raise type(exc)(f"iteration {k}: {exc}") from exc
        iterations = k
        dist = min(np.linalg.norm(new - theta), np.linalg.norm(new + theta))
        theta_trace.append(new)
        theta = new
        if dist <= run.tol:
            converged = True
            break

    if not converged:
        try:
            fits = inner_step(data, theta, run)
            objective_trace.append(eq_objective(data, theta, fits, run))
        except QmaveError:
            pass
        best = int(np.argmin(objective_trace))
        theta = theta_trace[best]

    theta = theta / np.linalg.norm(theta)
    return IndexFit(theta, iterations, converged, theta_trace, objective_trace)
