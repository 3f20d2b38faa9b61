"""Loss functions, kernels and bandwidth rules shared by every fitting routine.

Everything here is a pure function of its inputs; all of them accept either
scalars or numpy arrays and evaluate elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "LossSpec",
    "KernelSpec",
    "BandwidthRule",
    "check_loss",
    "check_subgradient",
    "kernel_eval",
    "default_bandwidth",
    "index_dispersion",
    "coordinate_dispersion",
]


@dataclass(frozen=True)
class LossSpec:
    """Either the check loss at level ``tau`` or the squared loss.

    Use the :meth:`quantile` / :meth:`squared` constructors rather than
    building instances by hand.
    """

    kind: str  # "quantile" | "squared"
    tau: float | None = None

    def __post_init__(self):
        if self.kind == "quantile":
            if self.tau is None or not (0.0 < self.tau < 1.0):
                raise InvalidInputError(
                    f"quantile level must lie strictly in (0, 1), got {self.tau!r}"
                )
        elif self.kind == "squared":
            if self.tau is not None:
                raise InvalidInputError("squared loss takes no level parameter")
        else:
            raise InvalidInputError(f"unknown loss kind {self.kind!r}")

    @classmethod
    def quantile(cls, tau: float) -> "LossSpec":
        return cls("quantile", float(tau))

    @classmethod
    def squared(cls) -> "LossSpec":
        return cls("squared")

    @property
    def is_quantile(self) -> bool:
        return self.kind == "quantile"


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric density on [-1, 1] used for all smoothing weights.

    ``epanechnikov``: 0.75 (1 - u^2)_+ ;  ``quartic``: (15/16) (1 - u^2)_+^2.
    """

    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind not in ("epanechnikov", "quartic"):
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def epanechnikov(cls) -> "KernelSpec":
        return cls("epanechnikov")

    @classmethod
    def quartic(cls) -> "KernelSpec":
        return cls("quartic")


@dataclass(frozen=True)
class BandwidthRule:
    """Rate-correct default bandwidth, ``h = c_h * scale * (log n / n)^e``.

    ``stage`` selects the exponent: ``"index"`` uses e = 1/5 (one-dimensional
    smoothing along a candidate index), ``"full_dim"`` uses e = 1/(d+4)
    (initial full-dimensional local fits).
    """

    stage: str = "index"
    d: int | None = None
    c_h: float = 1.0

    def __post_init__(self):
        if self.c_h <= 0:
            raise InvalidInputError(f"c_h must be positive, got {self.c_h}")
        if self.stage == "index":
            if self.d is not None:
                raise InvalidInputError("index stage takes no dimension")
        elif self.stage == "full_dim":
            if self.d is None or self.d < 1:
                raise InvalidInputError("full_dim stage needs a dimension d >= 1")
        else:
            raise InvalidInputError(f"unknown bandwidth stage {self.stage!r}")

    @classmethod
    def index(cls, c_h: float = 1.0) -> "BandwidthRule":
        return cls("index", None, c_h)

    @classmethod
    def full_dim(cls, d: int, c_h: float = 1.0) -> "BandwidthRule":
        return cls("full_dim", int(d), c_h)

    @property
    def exponent(self) -> float:
        if self.stage == "index":
            return 1.0 / 5.0
        return 1.0 / (self.d + 4.0)


def check_loss(v, loss: LossSpec):
    """Evaluate the loss at residual ``v``.

    Quantile: tau*v for v > 0, (tau-1)*v otherwise; squared: v**2.
    Nonnegative, zero exactly at v = 0.
    """
    v = np.asarray(v, dtype=float)
    if loss.is_quantile:
        out = np.where(v > 0, loss.tau * v, (loss.tau - 1.0) * v) + 0.0
    else:
        out = v * v
    return float(out) if out.ndim == 0 else out


def check_subgradient(v, tau: float):
    """A subgradient of the level-``tau`` check loss at ``v``.

    Returns tau for v > 0 and tau - 1 for v <= 0; the v = 0 convention
    follows the indicator split of the loss definition.
    """
    if not (0.0 < tau < 1.0):
        raise InvalidInputError(f"tau must lie in (0, 1), got {tau}")
    v = np.asarray(v, dtype=float)
    out = np.where(v > 0, tau, tau - 1.0)
    return float(out) if out.ndim == 0 else out


def kernel_eval(kernel: KernelSpec, u):
    """Kernel density value at ``u``; exactly zero outside [-1, 1]."""
    u = np.asarray(u, dtype=float)
    base = np.maximum(0.0, 1.0 - u * u)
    if kernel.kind == "epanechnikov":
        out = 0.75 * base
    else:
        out = (15.0 / 16.0) * base * base
    return float(out) if out.ndim == 0 else out


def default_bandwidth(rule: BandwidthRule, n: int, scale: float) -> float:
    """Bandwidth ``c_h * scale * (log n / n)**e`` for ``n`` observations.

    ``scale`` anchors the unit-free rate to the data: pass a dispersion
    estimate of the variable being smoothed (see ``index_dispersion`` and
    ``coordinate_dispersion``).
    """
    if n < 2:
        raise InvalidInputError(f"need n >= 2 to form a bandwidth, got n={n}")
    if not scale > 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    return rule.c_h * scale * (math.log(n) / n) ** rule.exponent


def index_dispersion(values) -> float:
    """Sample standard deviation of projected index values, floored away
    from zero so a degenerate projection still yields a usable bandwidth."""
    values = np.asarray(values, dtype=float)
    s = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return s if s > 0 else 1.0


def coordinate_dispersion(x) -> float:
    """Geometric mean of the per-coordinate sample standard deviations."""
    x = np.asarray(x, dtype=float)
    sds = np.std(x, axis=0, ddof=1)
    sds = np.where(sds > 0, sds, 1.0)
    return float(np.exp(np.mean(np.log(sds))))
