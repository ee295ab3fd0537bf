"""Covariance scalings for the MOSUM statistics.

The score statistic is scaled by ``Sigma_k^{-1/2}`` (covariance of the score
sums), the Wald statistic by ``Gamma_k^{-1/2}`` with
``Gamma = V^{-1} Sigma V^{-T}``. Each estimator comes in two shapes: a per-k
function returning :class:`ScalingAtK`, and a batched ``*_all`` variant that
returns the matrices for every ``k = G, ..., n - G`` at once.

Window conventions follow the statistics: at split ``k`` the left window holds
rows ``k - G, ..., k - 1`` and the right window rows ``k, ..., k + G - 1``
(0-based), i.e. observations ``k - G + 1 .. k`` and ``k + 1 .. k + G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SingularScaling
from .estimators import EstimatingModel, InarchModel, LinearRegression, Samples

KINDS = ("known", "score-global", "score-local", "wald-local", "inarch-gamma", "mosum-window")
RELATIVE_RIDGE = 1e-10
SINGULAR_RTOL = 1e-13
_CHUNK = 4096


@dataclass(frozen=True)
class ScalingPolicy:
    """Which estimator supplies the scaling matrix at each split.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    matrix : array_like, optional
        The known covariance for ``kind="known"``.
    ridge : float, optional
        Added to every eigenvalue before inversion. ``None`` adds
        ``1e-10 * trace / p``, but only to (nearly) singular matrices; ``0``
        disables regularisation so that singular matrices raise.
    """

    kind: str = "score-local"
    matrix: np.ndarray | None = field(default=None, compare=False)
    ridge: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scaling {self.kind!r}; choose from {KINDS}")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.kind == "known":
            if self.matrix is None:
                raise ValueError("known scaling needs a matrix")
            m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
                raise ValueError("known scaling matrix must be square and symmetric")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError("known scaling matrix must be positive definite")
            object.__setattr__(self, "matrix", m)

    @classmethod
    def known(cls, matrix, ridge: float | None = None) -> "ScalingPolicy":
        return cls("known", matrix, ridge)


@dataclass(frozen=True)
class ScalingAtK:
    """A regularised scaling matrix and its inverse square root at split ``k``."""

    k: int
    matrix: np.ndarray
    inv_sqrt: np.ndarray
    rescued: bool = False


def _ridges(eig: np.ndarray, ridge: float | None) -> np.ndarray:
    if ridge is None:
        return RELATIVE_RIDGE * np.clip(eig, 0, None).mean(axis=-1)
    return np.full(eig.shape[:-1], float(ridge))


def _eig_power(M: np.ndarray, power: float, ridge: float | None):
    """``(M + r I)^power`` for a stack of symmetric matrices.

    Returns the powered matrices, the regularised matrices and a flag per
    matrix telling whether the ridge was needed to make it positive definite.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    eig, Q = np.linalg.eigh(M)
    r = _ridges(eig, ridge)
    scale = np.abs(eig).max(axis=-1)
    singular_raw = eig.min(axis=-1) <= SINGULAR_RTOL * scale
    if ridge is None:
        # the default ridge only touches matrices that need rescuing
        r = np.where(singular_raw, r, 0.0)
    eff = eig + r[..., None]
    bad = (eff.min(axis=-1) <= 0) | (eff.min(axis=-1) <= SINGULAR_RTOL * np.abs(eff).max(axis=-1)) | ~np.isfinite(eff).all(axis=-1)
    if np.any(bad):
        idx = np.flatnonzero(np.atleast_1d(bad))
        raise SingularScaling(f"scaling matrix not positive definite (first failing index {idx[0]})", index=int(idx[0]))
    powered = (Q * eff[..., None, :] ** power) @ np.swapaxes(Q, -1, -2)
    regular = (Q * eff[..., None, :]) @ np.swapaxes(Q, -1, -2)
    return powered, regular, singular_raw & (r > 0)


def inv_sqrt(M, ridge: float = 0.0) -> np.ndarray:
    """Symmetric inverse square root ``Q (L + ridge I)^{-1/2} Q'``.

    Raises
    ------
    SingularScaling
        If an eigenvalue is not positive after adding ``ridge``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-14 * max(np.abs(M).max(), 1e-300)):
        raise ValueError("matrix is not symmetric")
    return _eig_power(M, -0.5, ridge)[0]


def _at_k(k: int, M: np.ndarray, ridge: float | None) -> ScalingAtK:
    powered, regular, rescued = _eig_power(M, -0.5, ridge)
    return ScalingAtK(k, regular, powered, bool(rescued))


def _check_k(k: int, G: int, n: int) -> None:
    if not G <= k <= n - G:
        raise ValueError(f"split k={k} outside [G, n - G] = [{G}, {n - G}]")


# -- window moments ------------------------------------------------------------

def window_covariances(h: np.ndarray, G: int) -> np.ndarray:
    """Centered covariance (denominator ``G``) of every length-``G`` window of ``h``.

    Returns shape ``(n - G + 1, p, p)``; entry ``s`` covers rows ``s .. s + G - 1``.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    windows = sliding_window_view(h, G, axis=0)  # (nw, p, G)
    out = np.empty((len(windows), h.shape[1], h.shape[1]))
    for lo in range(0, len(windows), _CHUNK):
        w = windows[lo:lo + _CHUNK]
        c = w - w.mean(axis=-1, keepdims=True)
        out[lo:lo + _CHUNK] = np.einsum("kpg,kqg->kpq", c, c) / G
    return out


def _gram(samples: Samples) -> np.ndarray:
    Z = samples.covariates
    return Z.T @ Z / len(samples)


def _split_pairs(W: np.ndarray, G: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    K = n - 2 * G + 1
    return W[:K], W[G:G + K]


# -- score scalings ------------------------------------------------------------

def score_cov_local_all(samples: Samples, model: EstimatingModel, theta, G: int, h: np.ndarray | None = None) -> np.ndarray:
    """Two-window score covariance at the inspection parameter for every split.

    For linear regression the pooled residual variance is combined with the
    global regressor second moment, ``v_k * 4 * (1/n) sum Z Z'``.
    """
    n = len(samples)
    if isinstance(model, LinearRegression):
        resid = model.residuals(samples, theta)
        left, right = _split_pairs(window_covariances(resid, G)[:, 0, 0], G, n)
        v = 0.5 * (left + right)
        return v[:, None, None] * (4.0 * _gram(samples))
    if h is None:
        h = model.score(samples, theta)
    left, right = _split_pairs(window_covariances(h, G), G, n)
    return 0.5 * (left + right)


def score_cov_local(samples: Samples, model: EstimatingModel, theta, k: int, G: int, ridge: float | None = None) -> ScalingAtK:
    """Score covariance from the two windows around split ``k``."""
    _check_k(k, G, len(samples))
    if isinstance(model, LinearRegression):
        resid = model.residuals(samples, theta)
        v = 0.5 * (np.var(resid[k - G:k]) + np.var(resid[k:k + G]))
        M = v * 4.0 * _gram(samples)
    else:
        h = model.score(samples[k - G:k + G], theta)
        left, right = h[:G] - h[:G].mean(axis=0), h[G:] - h[G:].mean(axis=0)
        M = (left.T @ left + right.T @ right) / (2 * G)
    return _at_k(k, M, ridge)


def score_cov_global(samples: Samples, model: EstimatingModel, theta) -> np.ndarray:
    """Full-sample score covariance at the inspection parameter (denominator ``n - 1``).

    For linear regression this is ``v * 4 * (1/n) sum Z Z'`` with ``v`` the
    uncentered residual variance.
    """
    n = len(samples)
    if isinstance(model, LinearRegression):
        resid = model.residuals(samples, theta)
        return (resid @ resid / (n - 1)) * 4.0 * _gram(samples)
    h = model.score(samples, theta)
    c = h - h.mean(axis=0)
    return c.T @ c / (n - 1)


def mosum_window_variance_all(x, G: int) -> np.ndarray:
    """Average of the left and right window variances (denominator ``G``) per split."""
    x = np.asarray(x, dtype=float).reshape(-1)
    left, right = _split_pairs(window_covariances(x, G)[:, 0, 0], G, len(x))
    return 0.5 * (left + right)


def mosum_window_variance(x, k: int, G: int) -> float:
    """Pooled two-window variance of a univariate series at split ``k``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_k(k, G, len(x))
    v = 0.5 * (np.var(x[k - G:k]) + np.var(x[k:k + G]))
    if v <= 0:
        raise SingularScaling(f"both windows around k={k} are constant")
    return float(v)


# -- Wald scalings -------------------------------------------------------------

def _window_sse(samples: Samples, thetas: np.ndarray, G: int) -> np.ndarray:
    y = sliding_window_view(samples.response[:, 0], G)
    Z = sliding_window_view(samples.covariates, G, axis=0)  # (nw, p, G)
    resid = y - np.einsum("kpg,kp->kg", Z, thetas)
    return (resid**2).sum(axis=1)


def wald_local_all(samples: Samples, model: EstimatingModel, thetas: np.ndarray, G: int) -> np.ndarray:
    """``Gamma_k`` from the local window fits for every split.

    ``thetas`` holds the fits of all length-``G`` windows as returned by
    ``model.fit_windows``. Linear regression uses the pooled residual mean
    square times the inverse global regressor second moment; other models the
    plug-in ``V^{-1} Sigma V^{-T}`` with both ``V`` and ``Sigma`` averaged over
    the two windows, each evaluated at its own fit.
    """
    n = len(samples)
    K = n - 2 * G + 1
    if isinstance(model, LinearRegression):
        sse = _window_sse(samples, thetas, G)
        left, right = _split_pairs(sse, G, n)
        v = (left + right) / (2 * G)
        return v[:, None, None] * np.linalg.inv(_gram(samples))
    out = np.empty((K, model.dim, model.dim))
    for i in range(K):
        k = G + i
        out[i] = _generic_gamma(samples, model, k, G, thetas[i], thetas[i + G])
    return out


def _generic_gamma(samples, model, k, G, theta_left, theta_right) -> np.ndarray:
    left, right = samples[k - G:k], samples[k:k + G]
    hl = model.score(left, theta_left)
    hr = model.score(right, theta_right)
    hl = hl - hl.mean(axis=0)
    hr = hr - hr.mean(axis=0)
    sigma = (hl.T @ hl + hr.T @ hr) / (2 * G)
    V = 0.5 * (model.eval_v(left, theta_left) + model.eval_v(right, theta_right))
    try:
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError:
        raise SingularScaling(f"V is singular at k={k}") from None
    if not np.all(np.isfinite(Vinv)) or np.linalg.cond(V) > 1e14:
        raise SingularScaling(f"V is singular at k={k}")
    return Vinv @ sigma @ Vinv.T


def wald_local_gamma(samples: Samples, model: EstimatingModel, k: int, G: int, theta_left, theta_right,
                     ridge: float | None = None) -> ScalingAtK:
    """Local ``Gamma_k`` at split ``k`` from the two window fits."""
    n = len(samples)
    _check_k(k, G, n)
    if isinstance(model, LinearRegression):
        y, Z = samples.response[:, 0], samples.covariates
        rl = y[k - G:k] - Z[k - G:k] @ np.asarray(theta_left, float)
        rr = y[k:k + G] - Z[k:k + G] @ np.asarray(theta_right, float)
        v = (rl @ rl + rr @ rr) / (2 * G)
        M = v * np.linalg.inv(_gram(samples))
    else:
        M = _generic_gamma(samples, model, k, G, np.asarray(theta_left, float), np.asarray(theta_right, float))
    return _at_k(k, M, ridge)


def inarch_information(samples: Samples, thetas: np.ndarray, G: int) -> np.ndarray:
    """Per-window ``(1/G) sum Y_i / (x_i' theta)^2 x_i x_i'`` at each window's own fit."""
    y = sliding_window_view(samples.response[:, 0], G)
    X = sliding_window_view(samples.covariates, G, axis=0)  # (nw, 2, G)
    lam = np.einsum("kpg,kp->kg", X, thetas)
    w = y / lam**2
    return np.einsum("kg,kpg,kqg->kpq", w, X, X) / G


def inarch_info_all(samples: Samples, thetas: np.ndarray, G: int) -> np.ndarray:
    """Averaged two-window information ``Gamma_k^{-1}`` for every split."""
    left, right = _split_pairs(inarch_information(samples, thetas, G), G, len(samples))
    return 0.5 * (left + right)


def inarch_gamma(samples: Samples, k: int, G: int, theta_left, theta_right, ridge: float | None = None) -> ScalingAtK:
    """``Gamma_k`` for Poisson autoregression: inverse of the averaged window information."""
    n = len(samples)
    _check_k(k, G, n)
    thetas = np.vstack([theta_left, theta_right])
    left = inarch_information(samples[k - G:k], thetas[:1], G)[0]
    right = inarch_information(samples[k:k + G], thetas[1:], G)[0]
    info = 0.5 * (left + right)
    sqrt_info, info_reg, rescued = _eig_power(info, 0.5, ridge)
    return ScalingAtK(k, np.linalg.inv(info_reg), sqrt_info, bool(rescued))


def batch_inv_sqrt(M: np.ndarray, ridge: float | None = None):
    """Inverse square roots of a stack of matrices plus the per-matrix rescue flags."""
    powered, _, rescued = _eig_power(M, -0.5, ridge)
    return powered, rescued


def batch_sqrt(M: np.ndarray, ridge: float | None = None):
    """Square roots of a stack of information matrices plus rescue flags."""
    powered, _, rescued = _eig_power(M, 0.5, ridge)
    return powered, rescued


def is_inarch(model: EstimatingModel) -> bool:
    return isinstance(model, InarchModel)
