"""MOSUM-score and MOSUM-Wald statistic series.

Split points follow the usual convention: ``k`` is the number of observations
before the split, and statistics exist for ``k = G, ..., n - G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scaling as sc
from .errors import ScanFailure, SingularScaling
from .estimators import EstimatingModel, Samples
from .threshold import ThresholdSpec, threshold

MAX_MISSING = 0.01


@dataclass(frozen=True)
class Inspection:
    """How the score statistic's inspection parameter is obtained.

    ``kind`` is ``"global"`` (fit on all data), ``"range"`` (fit on
    observations ``start..stop``, 1-based inclusive) or ``"fixed"``.
    ``estimator`` is ``"fit"`` for the model's own M-estimator or ``"median"``
    for the componentwise sample median of the response.
    """

    kind: str = "global"
    theta: tuple | None = None
    start: int | None = None
    stop: int | None = None
    estimator: str = "fit"

    def __post_init__(self):
        if self.kind not in ("global", "range", "fixed"):
            raise ValueError(f"unknown inspection kind {self.kind!r}")
        if self.estimator not in ("fit", "median"):
            raise ValueError(f"unknown inspection estimator {self.estimator!r}")
        if self.kind == "fixed" and self.theta is None:
            raise ValueError("fixed inspection needs a parameter")
        if self.kind == "range":
            if self.start is None or self.stop is None or not 1 <= self.start <= self.stop:
                raise ValueError("range inspection needs 1 <= start <= stop")
        if self.theta is not None:
            object.__setattr__(self, "theta", tuple(np.atleast_1d(np.asarray(self.theta, dtype=float)).tolist()))

    @classmethod
    def fixed(cls, theta) -> "Inspection":
        return cls("fixed", theta=theta)

    @classmethod
    def range_fit(cls, start: int, stop: int, estimator: str = "fit") -> "Inspection":
        return cls("range", start=start, stop=stop, estimator=estimator)

    def resolve(self, samples: Samples, model: EstimatingModel) -> np.ndarray:
        if self.kind == "fixed":
            return model._theta(self.theta)
        if self.kind == "range":
            if self.stop > len(samples):
                raise ValueError(f"inspection range ends at {self.stop} beyond n={len(samples)}")
            part = samples[self.start - 1:self.stop]
        else:
            part = samples
        if self.estimator == "median":
            if part.covariates.shape[1] != 0:
                raise ValueError("the median inspection estimator applies to location models only")
            return np.median(part.response, axis=0)
        return model.fit(part)


@dataclass(frozen=True)
class ScanConfig:
    """Bandwidth, statistic, inspection parameter and scaling of a scan."""

    G: int
    statistic: str = "score"
    inspection: Inspection = field(default_factory=Inspection)
    scaling: sc.ScalingPolicy = field(default_factory=sc.ScalingPolicy)

    def __post_init__(self):
        if self.statistic not in ("score", "wald"):
            raise ValueError(f"statistic must be 'score' or 'wald', got {self.statistic!r}")
        if int(self.G) != self.G or self.G < 1:
            raise ValueError("bandwidth G must be a positive integer")

    def validate(self, n: int, p: int) -> None:
        if self.G < p + 1:
            raise ValueError(f"bandwidth G={self.G} must be at least p + 1 = {p + 1}")
        if not 2 * self.G < n:
            raise ValueError(f"bandwidth G={self.G} needs 2G < n = {n}")


@dataclass
class ScanResult:
    """A statistic series over ``k = G, ..., n - G`` with its threshold."""

    ks: np.ndarray
    stats: np.ndarray
    threshold: float
    n: int
    G: int
    p: int
    statistic: str
    inspection_theta: np.ndarray | None = None
    scaling_warnings: list = field(default_factory=list)
    mosum: np.ndarray | None = None
    fits: tuple | None = None

    def at(self, k: int) -> float:
        return float(self.stats[k - self.G])

    def contrast(self) -> np.ndarray:
        """Unscaled contrast per split: ``M(k)`` (score) or ``theta_right - theta_left`` (Wald)."""
        if self.mosum is not None:
            return self.mosum
        return self.fits[1] - self.fits[0]


def moving_score_sums(h, G: int) -> np.ndarray:
    """``M(k) = sum_{k+1..k+G} h - sum_{k-G+1..k} h`` for ``k = G..n-G``.

    One cumulative-sum pass; the series is centered first, which leaves ``M``
    unchanged but keeps the running sums small.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    n = len(h)
    if n < 2 * G:
        raise ValueError("series shorter than 2G")
    c = np.concatenate([np.zeros((1, h.shape[1])), np.cumsum(h - h.mean(axis=0), axis=0)])
    k = np.arange(G, n - G + 1)
    return (c[k + G] - c[k]) - (c[k] - c[k - G])


def _apply(inv_sqrt: np.ndarray, v: np.ndarray) -> np.ndarray:
    if inv_sqrt.ndim == 2:
        return np.linalg.norm(v @ inv_sqrt.T, axis=1)
    return np.linalg.norm(np.einsum("kpq,kq->kp", inv_sqrt, v), axis=1)


def _batched(matrices: np.ndarray, ridge, ks: np.ndarray, warnings: list, sqrt: bool = False):
    try:
        out, rescued = (sc.batch_sqrt if sqrt else sc.batch_inv_sqrt)(matrices, ridge)
    except SingularScaling as err:
        k = int(ks[err.index]) if err.index is not None and err.index < len(ks) else None
        raise SingularScaling(f"scaling matrix singular at k={k}", index=k) from None
    for k in ks[np.atleast_1d(rescued)]:
        warnings.append((int(k), "ridge"))
    return out


def _threshold(n, G, p, alpha, inflation):
    return threshold(ThresholdSpec(alpha=alpha, n=n, G=G, p=p, inflation=inflation))


def score_scan(samples: Samples, model: EstimatingModel, config: ScanConfig,
               alpha: float = 0.05, inflation: float | None = None) -> ScanResult:
    """MOSUM-score statistic ``|Sigma_k^{-1/2} M(k)| / sqrt(2G)`` for every split."""
    model.check(samples)
    n, p, G = len(samples), model.dim, config.G
    config.validate(n, p)
    policy = config.scaling
    theta = config.inspection.resolve(samples, model)
    h = model.score(samples, theta)
    M = moving_score_sums(h, G)
    ks = np.arange(G, n - G + 1)
    warnings: list = []
    if policy.kind == "known":
        if policy.matrix.shape != (p, p):
            raise ValueError(f"known scaling must be {p}x{p}")
        scale = _batched(policy.matrix, policy.ridge, ks[:1], warnings)
    elif policy.kind == "score-global":
        scale = _batched(sc.score_cov_global(samples, model, theta), policy.ridge, ks[:1], warnings)
    elif policy.kind == "score-local":
        scale = _batched(sc.score_cov_local_all(samples, model, theta, G, h=h), policy.ridge, ks, warnings)
    elif policy.kind == "mosum-window":
        if p != 1:
            raise ValueError("mosum-window scaling needs a univariate estimating function")
        scale = _batched(sc.mosum_window_variance_all(h[:, 0], G)[:, None, None], policy.ridge, ks, warnings)
    else:
        raise ValueError(f"scaling {policy.kind!r} does not apply to the score statistic")
    stats = _apply(scale, M) / np.sqrt(2 * G)
    return ScanResult(ks, stats, _threshold(n, G, p, alpha, inflation), n, G, p, "score",
                      inspection_theta=theta, scaling_warnings=warnings, mosum=M)


def _fill(thetas: np.ndarray, failed: np.ndarray) -> np.ndarray:
    """Forward/backward fill failed window fits so batched scalings stay finite."""
    if not failed.any():
        return thetas
    out = thetas.copy()
    good = np.flatnonzero(~failed)
    if good.size == 0:
        raise ScanFailure("every window fit failed")
    idx = good[np.clip(np.searchsorted(good, np.arange(len(out))), 0, good.size - 1)]
    out[failed] = thetas[idx[failed]]
    return out


def wald_scan(samples: Samples, model: EstimatingModel, config: ScanConfig,
              alpha: float = 0.05, inflation: float | None = None) -> ScanResult:
    """MOSUM-Wald statistic ``sqrt(G/2) |Gamma_k^{-1/2} (theta_right - theta_left)|``.

    Window fits that fail leave the statistic missing (NaN) at every split
    using that window; more than 1% missing splits raise ``ScanFailure``.
    """
    model.check(samples)
    n, p, G = len(samples), model.dim, config.G
    config.validate(n, p)
    policy = config.scaling
    thetas, failed = model.fit_windows(samples, G)
    K = n - 2 * G + 1
    ks = np.arange(G, n - G + 1)
    missing = failed[:K] | failed[G:G + K]
    warnings: list = [(int(k), "fit-failed") for k in ks[missing]]
    if missing.mean() > MAX_MISSING:
        raise ScanFailure(f"{missing.sum()} of {K} splits lack a window fit")
    filled = _fill(thetas, failed)
    left, right = filled[:K], filled[G:G + K]
    if policy.kind == "known":
        if policy.matrix.shape != (p, p):
            raise ValueError(f"known scaling must be {p}x{p}")
        scale = _batched(policy.matrix, policy.ridge, ks[:1], warnings)
    elif policy.kind == "wald-local":
        scale = _batched(sc.wald_local_all(samples, model, filled, G), policy.ridge, ks, warnings)
    elif policy.kind == "inarch-gamma":
        if not sc.is_inarch(model):
            raise ValueError("inarch-gamma scaling needs the INARCH model")
        scale = _batched(sc.inarch_info_all(samples, filled, G), policy.ridge, ks, warnings, sqrt=True)
    elif policy.kind == "mosum-window":
        if p != 1 or samples.response.shape[1] != 1:
            raise ValueError("mosum-window scaling needs a univariate series")
        scale = _batched(sc.mosum_window_variance_all(samples.response[:, 0], G)[:, None, None],
                         policy.ridge, ks, warnings)
    else:
        raise ValueError(f"scaling {policy.kind!r} does not apply to the Wald statistic")
    stats = np.sqrt(G / 2) * _apply(scale, right - left)
    stats[missing] = np.nan
    left = np.where(missing[:, None], np.nan, left)
    right = np.where(missing[:, None], np.nan, right)
    return ScanResult(ks, stats, _threshold(n, G, p, alpha, inflation), n, G, p, "wald",
                      scaling_warnings=warnings, fits=(left, right))


def scan(samples: Samples, model: EstimatingModel, config: ScanConfig,
         alpha: float = 0.05, inflation: float | None = None) -> ScanResult:
    """Dispatch to :func:`score_scan` or :func:`wald_scan`."""
    if config.statistic == "wald":
        return wald_scan(samples, model, config, alpha, inflation)
    return score_scan(samples, model, config, alpha, inflation)
