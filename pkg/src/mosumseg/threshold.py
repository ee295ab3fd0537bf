"""Gumbel-asymptotic critical values for the maximum of MOSUM statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError


def norming(x: float, p: int) -> tuple[float, float]:
    """Norming constants ``(a(x), b(x))`` of the Gumbel limit.

    ``a(x) = sqrt(2 log x)`` and
    ``b(x) = 2 log x + (p/2) log log x - log((2/3) Gamma(p/2))``.

    Parameters
    ----------
    x : float
        Ratio ``n / G``; must exceed ``e``.
    p : int
        Parameter dimension.
    """
    if not x > math.e:
        raise DomainError(f"norming needs n/G > e, got {x!r}")
    if p < 1:
        raise DomainError("parameter dimension must be at least 1")
    log_x = math.log(x)
    a = math.sqrt(2.0 * log_x)
    b = 2.0 * log_x + 0.5 * p * math.log(log_x) - (math.log(2.0 / 3.0) + gammaln(0.5 * p))
    return a, b


def gumbel_quantile(alpha: float) -> float:
    """The ``(1 - alpha)``-quantile of ``P(E <= x) = exp(-2 exp(-x))``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return -math.log(math.log(1.0 / math.sqrt(1.0 - alpha)))


def gumbel_cdf(x):
    """Limit law of the normed maximum."""
    return np.exp(-2.0 * np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class ThresholdSpec:
    """Inputs of the segmentation threshold.

    ``inflation`` switches to the heuristic threshold ``c * sqrt(log(n/G))``
    for scalings that are only bounded, not consistent, away from changes.
    """

    alpha: float
    n: int
    G: int
    p: int
    inflation: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if not 2 * self.G < self.n:
            raise ValueError("bandwidth must satisfy 2G < n")
        if self.inflation is not None and self.inflation < 1.0:
            raise ValueError("inflation factor must be at least 1")


def threshold(spec: ThresholdSpec) -> float:
    """Critical value ``D = (b(n/G) + c_alpha) / a(n/G)`` or its inflated variant."""
    a, b = norming(spec.n / spec.G, spec.p)
    asymptotic = (b + gumbel_quantile(spec.alpha)) / a
    if spec.inflation is None:
        return asymptotic
    inflated = spec.inflation * math.sqrt(math.log(spec.n / spec.G))
    if inflated < asymptotic:
        warnings.warn(
            f"inflated threshold {inflated:.4f} is below the asymptotic one {asymptotic:.4f}",
            RuntimeWarning,
            stacklevel=2,
        )
    return inflated


def critical_value(n: int, G: int, p: int = 1, alpha: float = 0.05) -> float:
    """Shorthand for the asymptotic threshold."""
    return threshold(ThresholdSpec(alpha=alpha, n=n, G=G, p=p))
