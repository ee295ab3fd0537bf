"""Estimating functions and their window fitters.

Every model works on a :class:`Samples` container holding one row per
observation tuple: a response vector and a (possibly empty) covariate vector.
A model supplies the estimating function ``H``, its Jacobian in the parameter,
and a solver for ``sum_i H(X_i, theta) = 0`` over a window.

Jacobian convention: ``score_gradient`` returns ``J[i, a, b] = dH_a / dtheta_b``
so that ``-(1/G) sum H(theta) ~= V (theta_hat - theta)`` with ``V`` the window
average of ``J``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import optimize

from .errors import DomainError, NonConvergence, SingularFit

TOL_FIT = 1e-8
"""Per-sample tolerance on the score sum of a fitted window."""


@dataclass(frozen=True)
class Samples:
    """Observation tuples ``X_i = (response_i, covariates_i)``.

    Attributes
    ----------
    response : ndarray, shape (n, d)
    covariates : ndarray, shape (n, m)
        ``m`` may be zero (location models).
    """

    response: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        response = np.asarray(self.response, dtype=float)
        covariates = np.asarray(self.covariates, dtype=float)
        if response.ndim == 1:
            response = response[:, None]
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if response.ndim != 2 or covariates.ndim != 2:
            raise ValueError("response and covariates must be at most 2-dimensional")
        if len(response) != len(covariates):
            raise ValueError("response and covariates differ in length")
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "covariates", covariates)

    @classmethod
    def from_series(cls, x) -> "Samples":
        """Univariate (1-d input) or multivariate (2-d input) location data."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(x, np.empty((len(x), 0)))

    @classmethod
    def regression(cls, y, Z, intercept: bool = True) -> "Samples":
        """Response ``y`` with regressors ``Z``; prepends a column of ones if asked."""
        y = np.asarray(y, dtype=float).reshape(-1)
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if intercept:
            Z = np.column_stack([np.ones(len(y)), Z])
        return cls(y[:, None], Z)

    @classmethod
    def counts(cls, x, initial=None) -> "Samples":
        """Lag-augmented tuples ``(X_i; 1, X_{i-1})`` for Poisson autoregression.

        Without ``initial`` the first observation only serves as a lag, so the
        result has ``len(x) - 1`` rows and row ``j`` describes observation ``j + 1``.
        """
        x = np.asarray(x)
        if x.ndim != 1:
            raise ValueError("count series must be one-dimensional")
        if np.any(x < 0) or not np.all(np.equal(np.mod(x, 1), 0)):
            raise ValueError("count series must hold non-negative integers")
        x = x.astype(float)
        if initial is None:
            resp, lag = x[1:], x[:-1]
        else:
            if initial < 0:
                raise ValueError("initial lag value must be non-negative")
            resp, lag = x, np.concatenate([[float(initial)], x[:-1]])
        return cls(resp[:, None], np.column_stack([np.ones(len(resp)), lag]))

    def __len__(self) -> int:
        return len(self.response)

    def __getitem__(self, item) -> "Samples":
        if not isinstance(item, slice):
            item = slice(item, item + 1)
        return Samples(self.response[item], self.covariates[item])


class EstimatingModel:
    """Base class: an estimating function with a window solver.

    Subclasses set ``name`` and ``dim`` and implement ``score``,
    ``score_gradient`` and ``fit``. ``fit_windows`` may be overridden where a
    rolling or batched solution is available.
    """

    name = "abstract"
    dim = 1

    def check(self, samples: Samples) -> None:
        """Raise ``ValueError`` if ``samples`` do not fit the model layout."""

    def _theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.dim,):
            raise ValueError(f"{self.name}: expected parameter of length {self.dim}, got shape {theta.shape}")
        return theta

    def min_window(self) -> int:
        return self.dim

    def score(self, samples: Samples, theta) -> np.ndarray:
        """Values ``H(X_i, theta)`` for every row, shape (n, p)."""
        raise NotImplementedError

    def score_gradient(self, samples: Samples, theta) -> np.ndarray:
        """Jacobians ``dH(X_i, theta)/dtheta``, shape (n, p, p)."""
        raise NotImplementedError

    def fit(self, samples: Samples, start=None) -> np.ndarray:
        """Solve ``sum H(X_i, theta) = 0`` over all rows of ``samples``."""
        raise NotImplementedError

    def eval_v(self, samples: Samples, theta) -> np.ndarray:
        """Window average of the score Jacobian."""
        if len(samples) == 0:
            raise ValueError("empty window")
        return self.score_gradient(samples, theta).mean(axis=0)

    def fit_windows(self, samples: Samples, G: int):
        """Fit every window of length ``G``.

        Returns
        -------
        thetas : ndarray, shape (n - G + 1, p)
            Row ``s`` is the fit on rows ``s, ..., s + G - 1``; NaN where the fit failed.
        failed : ndarray of bool
        """
        n = len(samples)
        thetas = np.full((n - G + 1, self.dim), np.nan)
        failed = np.zeros(n - G + 1, dtype=bool)
        start = None
        for s in range(n - G + 1):
            try:
                thetas[s] = self.fit(samples[s:s + G], start=start)
                start = thetas[s]
            except (SingularFit, NonConvergence, DomainError):
                failed[s] = True
        return thetas, failed

    def _require_length(self, samples: Samples) -> None:
        if len(samples) < self.min_window():
            raise ValueError(f"{self.name}: window of length {len(samples)} is shorter than {self.min_window()}")


def _centered_window_sums(a: np.ndarray, G: int) -> tuple[np.ndarray, np.ndarray]:
    """Moving sums over windows of length ``G`` of ``a - mean(a)`` plus that mean.

    Centering first keeps the cumulative sums small, so differences of them lose
    little precision.
    """
    center = a.mean(axis=0)
    c = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a - center, axis=0)])
    return c[G:] - c[:-G], center


class MeanModel(EstimatingModel):
    """``H(x, mu) = x - mu`` componentwise; the fit is the sample mean."""

    name = "mean"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def check(self, samples):
        if samples.response.shape[1] != self.dim:
            raise ValueError(f"mean model of dimension {self.dim} got {samples.response.shape[1]} columns")

    def score(self, samples, theta):
        theta = self._theta(theta)
        return samples.response - theta

    def score_gradient(self, samples, theta):
        self._theta(theta)
        return np.broadcast_to(-np.eye(self.dim), (len(samples), self.dim, self.dim)).copy()

    def fit(self, samples, start=None):
        self._require_length(samples)
        return samples.response.mean(axis=0)

    def fit_windows(self, samples, G):
        sums, center = _centered_window_sums(samples.response, G)
        return center + sums / G, np.zeros(len(sums), dtype=bool)


class MedianLikeModel(EstimatingModel):
    """Smooth sign: ``H(x, mu) = (2/pi) arctan(mu - x)`` componentwise."""

    name = "median-like"
    root_tol = 1e-10

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def check(self, samples):
        if samples.response.shape[1] != self.dim:
            raise ValueError(f"median-like model of dimension {self.dim} got {samples.response.shape[1]} columns")

    def score(self, samples, theta):
        theta = self._theta(theta)
        return (2 / np.pi) * np.arctan(theta - samples.response)

    def score_gradient(self, samples, theta):
        theta = self._theta(theta)
        d = (2 / np.pi) / (1 + (theta - samples.response) ** 2)
        out = np.zeros((len(samples), self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = d
        return out

    def _bisect(self, windows: np.ndarray) -> np.ndarray:
        # windows: (..., L); the score sum is strictly increasing in mu
        lo = windows.min(axis=-1) - 1.0
        hi = windows.max(axis=-1) + 1.0
        while np.any(hi - lo > self.root_tol):
            mid = 0.5 * (lo + hi)
            positive = np.arctan(mid[..., None] - windows).sum(axis=-1) > 0
            hi = np.where(positive, mid, hi)
            lo = np.where(positive, lo, mid)
        return 0.5 * (lo + hi)

    def fit(self, samples, start=None):
        self._require_length(samples)
        return self._bisect(samples.response.T)

    def fit_windows(self, samples, G):
        # (n - G + 1, d, G)
        windows = sliding_window_view(samples.response, G, axis=0)
        return self._bisect(windows), np.zeros(len(windows), dtype=bool)


class SignMedianModel(EstimatingModel):
    """``H(x, mu) = sgn(x - mu)``; the fit is the sample median.

    Not differentiable, so only usable with the score statistic.
    """

    name = "sign-median"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def score(self, samples, theta):
        theta = self._theta(theta)
        return np.sign(samples.response - theta)

    def score_gradient(self, samples, theta):
        raise DomainError("the sign estimating function has no derivative")

    def fit(self, samples, start=None):
        self._require_length(samples)
        return np.median(samples.response, axis=0)


class LinearRegression(EstimatingModel):
    """Least squares: ``H((X, Z), beta) = -2 Z (X - Z'beta)``."""

    name = "linreg"
    cond_max = 1e12

    def __init__(self, dim: int):
        self.dim = int(dim)

    def check(self, samples):
        if samples.response.shape[1] != 1:
            raise ValueError("linear regression needs a univariate response")
        if samples.covariates.shape[1] != self.dim:
            raise ValueError(f"linear regression of dimension {self.dim} got {samples.covariates.shape[1]} regressors")

    def min_window(self):
        return self.dim + 1

    def residuals(self, samples, theta):
        theta = self._theta(theta)
        return samples.response[:, 0] - samples.covariates @ theta

    def score(self, samples, theta):
        return -2.0 * samples.covariates * self.residuals(samples, theta)[:, None]

    def score_gradient(self, samples, theta):
        self._theta(theta)
        Z = samples.covariates
        return 2.0 * Z[:, :, None] * Z[:, None, :]

    def fit(self, samples, start=None):
        self._require_length(samples)
        Z = samples.covariates
        gram = Z.T @ Z
        if np.linalg.cond(gram) > self.cond_max:
            raise SingularFit("design matrix is rank deficient on this window")
        return np.linalg.solve(gram, Z.T @ samples.response[:, 0])

    def fit_windows(self, samples, G):
        Z = samples.covariates
        y = samples.response[:, 0]
        gram, _ = _centered_window_sums(Z[:, :, None] * Z[:, None, :], G)
        cross, _ = _centered_window_sums(Z * y[:, None], G)
        # add back the centering offsets: window sum = centered sum + G * mean
        gram = gram + G * (Z[:, :, None] * Z[:, None, :]).mean(axis=0)
        cross = cross + G * (Z * y[:, None]).mean(axis=0)
        failed = np.linalg.cond(gram) > self.cond_max
        thetas = np.full((len(gram), self.dim), np.nan)
        ok = ~failed
        if ok.any():
            thetas[ok] = np.linalg.solve(gram[ok], cross[ok][..., None])[..., 0]
        return thetas, failed


class InarchModel(EstimatingModel):
    """Poisson autoregression of order one, fitted by partial likelihood.

    ``H((X_i, X_{i-1}), theta) = -2 x (X_i / (x' theta) - 1)`` with ``x = (1, X_{i-1})``.
    Fits are restricted to the box ``[1e-6, 1e6] x [1e-6, 1 - 1e-6]``; on the
    boundary the Karush-Kuhn-Tucker conditions replace the vanishing score.
    """

    name = "inarch"
    dim = 2
    lower = np.array([1e-6, 1e-6])
    upper = np.array([1e6, 1 - 1e-6])
    max_iter = 200

    def check(self, samples):
        if samples.response.shape[1] != 1 or samples.covariates.shape[1] != 2:
            raise ValueError("INARCH samples need one response and covariates (1, lag)")
        if np.any(samples.response < 0) or np.any(samples.covariates[:, 1] < 0):
            raise ValueError("INARCH samples must be non-negative counts")

    def min_window(self):
        return 3

    def intensity(self, samples, theta):
        theta = self._theta(theta)
        lam = samples.covariates @ theta
        if np.any(lam <= 0):
            raise DomainError("non-positive Poisson intensity")
        return lam

    def score(self, samples, theta):
        lam = self.intensity(samples, theta)
        return -2.0 * samples.covariates * (samples.response[:, 0] / lam - 1.0)[:, None]

    def score_gradient(self, samples, theta):
        lam = self.intensity(samples, theta)
        X = samples.covariates
        w = 2.0 * samples.response[:, 0] / lam**2
        return w[:, None, None] * X[:, :, None] * X[:, None, :]

    # -- batched projected Newton on the partial log-likelihood ---------------

    def _newton(self, y: np.ndarray, lag: np.ndarray, theta: np.ndarray):
        """Maximise ``sum y log(lam) - lam`` for each row of ``y`` and ``lag``.

        Returns the iterates and a boolean array marking rows that met the
        tolerance on the projected score sum.
        """
        lo, hi = self.lower, self.upper
        L = y.shape[1]
        theta = np.clip(theta, lo, hi)
        done = np.zeros(len(y), dtype=bool)

        def loglik(th, rows):
            lam = th[:, :1] + th[:, 1:] * lag[rows]
            return (y[rows] * np.log(lam) - lam).sum(axis=1)

        for _ in range(self.max_iter):
            rows = np.flatnonzero(~done)
            if rows.size == 0:
                break
            th = theta[rows]
            yy, ll = y[rows], lag[rows]
            lam = th[:, :1] + th[:, 1:] * ll
            r = yy / lam - 1.0
            g = np.column_stack([r.sum(axis=1), (ll * r).sum(axis=1)])
            w = yy / lam**2
            h00 = w.sum(axis=1)
            h01 = (w * ll).sum(axis=1)
            h11 = (w * ll * ll).sum(axis=1)
            active = ((th <= lo * (1 + 1e-12)) & (g < 0)) | ((th >= hi * (1 - 1e-12)) & (g > 0))
            pg = np.where(active, 0.0, g)
            conv = 2.0 * np.linalg.norm(pg, axis=1) <= TOL_FIT * L
            done[rows[conv]] = True
            keep = ~conv
            if not keep.any():
                break
            rows, th, g, pg, active = rows[keep], th[keep], g[keep], pg[keep], active[keep]
            h00, h01, h11 = h00[keep], h01[keep], h11[keep]

            det = h00 * h11 - h01 * h01
            both = ~active[:, 0] & ~active[:, 1]
            step = np.zeros_like(th)
            with np.errstate(divide="ignore", invalid="ignore"):
                step[both, 0] = (h11 * g[:, 0] - h01 * g[:, 1])[both] / det[both]
                step[both, 1] = (h00 * g[:, 1] - h01 * g[:, 0])[both] / det[both]
                only0 = ~active[:, 0] & active[:, 1]
                only1 = active[:, 0] & ~active[:, 1]
                step[only0, 0] = g[only0, 0] / h00[only0]
                step[only1, 1] = g[only1, 1] / h11[only1]
            # fall back to gradient ascent where the curvature is unusable
            bad = ~np.all(np.isfinite(step), axis=1) | ((step * pg).sum(axis=1) <= 0)
            step[bad] = pg[bad] / np.maximum(np.abs(pg[bad]).max(axis=1, keepdims=True), 1.0) * 1e-2

            base = loglik(th, rows)
            pg_norm = np.linalg.norm(pg, axis=1)
            t = np.ones(len(rows))
            accepted = np.zeros(len(rows), dtype=bool)
            new = th.copy()
            for _ in range(40):
                cand = np.clip(th + t[:, None] * step, lo, hi)
                gain = loglik(cand, rows) - base
                # near the optimum likelihood gains vanish in round-off; then
                # accept any step that shrinks the projected score instead
                flat = gain >= -1e-12 * np.abs(base)
                smaller = self._projected_grad_norm(cand, y[rows], lag[rows]) < pg_norm
                ok = ~accepted & ((gain >= 1e-4 * (g * (cand - th)).sum(axis=1)) | (flat & smaller))
                new[ok] = cand[ok]
                accepted |= ok
                if accepted.all():
                    break
                t = np.where(accepted, t, 0.5 * t)
            # a rejected line search means we are at numerical precision
            stalled = ~accepted
            new[stalled] = th[stalled]
            theta[rows] = new
            if stalled.any():
                # judge stalled rows once more at the final point
                res = 2.0 * self._projected_grad_norm(new[stalled], y[rows[stalled]], lag[rows[stalled]])
                done[rows[stalled][res <= TOL_FIT * L]] = True
                # leave the others for the fallback
                theta[rows[stalled][res > TOL_FIT * L]] = np.nan
                done[rows[stalled][res > TOL_FIT * L]] = True
        converged = done & np.all(np.isfinite(theta), axis=1)
        return theta, converged

    def _projected_grad_norm(self, th, y, lag):
        lam = th[:, :1] + th[:, 1:] * lag
        r = y / lam - 1.0
        g = np.column_stack([r.sum(axis=1), (lag * r).sum(axis=1)])
        active = ((th <= self.lower * (1 + 1e-12)) & (g < 0)) | ((th >= self.upper * (1 - 1e-12)) & (g > 0))
        return np.linalg.norm(np.where(active, 0.0, g), axis=1)

    def _start(self, y: np.ndarray, lag: np.ndarray) -> np.ndarray:
        m = y.mean(axis=1)
        yc = y - m[:, None]
        lc = lag - lag.mean(axis=1, keepdims=True)
        denom = np.sqrt((yc**2).sum(axis=1) * (lc**2).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(denom > 0, (yc * lc).sum(axis=1) / denom, 0.0)
        rho = np.clip(rho, 0.05, 0.9)
        return np.column_stack([np.maximum(m * (1 - rho), 0.1), rho])

    @staticmethod
    def _degenerate(y: np.ndarray, lag: np.ndarray) -> np.ndarray:
        return (y.max(axis=1) <= 0) | (lag.max(axis=1) == lag.min(axis=1))

    def projected_residual(self, samples: Samples, theta) -> float:
        """Norm of the score sum with boundary-blocked components removed."""
        theta = self._theta(theta)
        g = -0.5 * self.score(samples, theta).sum(axis=0)
        active = ((theta <= self.lower * (1 + 1e-12)) & (g < 0)) | ((theta >= self.upper * (1 - 1e-12)) & (g > 0))
        return float(2.0 * np.linalg.norm(np.where(active, 0.0, g)))

    def _nelder_mead(self, samples: Samples, start: np.ndarray):
        bounds = list(zip(self.lower, self.upper))

        def objective(th):
            return self.projected_residual(samples, np.clip(th, self.lower, self.upper)) ** 2

        res = optimize.minimize(objective, np.clip(start, self.lower, self.upper), method="Nelder-Mead",
                                bounds=bounds, options={"maxiter": self.max_iter * 10, "xatol": 1e-12, "fatol": 1e-30})
        theta = np.clip(res.x, self.lower, self.upper)
        return theta, self.projected_residual(samples, theta)

    def fit(self, samples, start=None):
        self._require_length(samples)
        y = samples.response[:, 0][None, :]
        lag = samples.covariates[:, 1][None, :]
        if self._degenerate(y, lag)[0]:
            raise SingularFit("INARCH window without variation in the counts or their lags")
        theta0 = self._start(y, lag) if start is None or not np.all(np.isfinite(start)) else np.asarray(start, float)[None, :]
        theta, ok = self._newton(y, lag, theta0.copy())
        if ok[0]:
            return theta[0]
        theta, residual = self._nelder_mead(samples, theta0[0])
        if residual <= TOL_FIT * len(samples):
            return theta
        raise NonConvergence("INARCH partial likelihood fit did not converge", theta=theta, residual=residual)

    def fit_windows(self, samples, G):
        y = sliding_window_view(samples.response[:, 0], G)
        lag = sliding_window_view(samples.covariates[:, 1], G)
        degenerate = self._degenerate(y, lag)
        thetas = np.full((len(y), 2), np.nan)
        rows = np.flatnonzero(~degenerate)
        theta, ok = self._newton(y[rows], lag[rows], self._start(y[rows], lag[rows]))
        thetas[rows[ok]] = theta[ok]
        failed = degenerate.copy()
        for s in rows[~ok]:
            try:
                thetas[s] = self.fit(samples[s:s + G])
            except (SingularFit, NonConvergence):
                failed[s] = True
        return thetas, failed


MODELS = {
    "mean": MeanModel,
    "median-like": MedianLikeModel,
    "sign-median": SignMedianModel,
    "linreg": LinearRegression,
    "inarch": InarchModel,
}


def make_model(name: str, samples: Samples | None = None) -> EstimatingModel:
    """Build a model by name, taking its dimension from ``samples`` where needed."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    if cls is InarchModel:
        return cls()
    if samples is None:
        return cls(1) if cls is not LinearRegression else cls(2)
    if cls is LinearRegression:
        return cls(samples.covariates.shape[1])
    return cls(samples.response.shape[1])
