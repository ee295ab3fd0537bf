"""Seeded scenario generators and Monte Carlo study runners.

Replication ``r`` of a study with master seed ``s`` draws its data from
``np.random.SeedSequence([s, r])``, so reports do not depend on the order or
the process in which replications run.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MosumError, ScanFailure
from .estimators import InarchModel, LinearRegression, MeanModel, MedianLikeModel, Samples
from .mosum import Inspection, ScanConfig
from .scaling import ScalingPolicy
from .segmenter import segment

DETECTION_RADIUS = 20
MAX_FAILURE_RATE = 0.01
INARCH_BURN_IN = 500


@dataclass(frozen=True)
class Scenario:
    """A piecewise stationary data-generating process.

    ``change_points`` count the observations before each change, so segment
    ``j`` covers rows ``change_points[j-1] .. change_points[j] - 1``.
    ``segment_params`` hold means (``"mean"``), coefficient vectors
    (``"linreg"``, intercept first) or ``(intercept, slope)`` pairs
    (``"inarch"``).
    """

    kind: str
    n: int
    change_points: tuple
    segment_params: tuple
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mean", "linreg", "inarch"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        cps = tuple(int(k) for k in self.change_points)
        params = tuple(tuple(np.atleast_1d(np.asarray(p, dtype=float)).tolist()) for p in self.segment_params)
        if any(b <= a for a, b in zip(cps[:-1], cps[1:])) or any(not 0 < k < self.n for k in cps):
            raise ValueError("change points must increase strictly inside (0, n)")
        if len(params) != len(cps) + 1:
            raise ValueError("need one parameter per segment")
        if any(a == b for a, b in zip(params[:-1], params[1:])):
            raise ValueError("adjacent segments must differ")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be non-negative")
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "segment_params", params)

    @property
    def q(self) -> int:
        return len(self.change_points)

    def labels(self) -> np.ndarray:
        """Segment index of every row."""
        return np.searchsorted(np.asarray(self.change_points), np.arange(self.n), side="right")

    def params_by_row(self) -> np.ndarray:
        return np.asarray(self.segment_params)[self.labels()]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def gen_mean_change(scenario: Scenario, seed) -> np.ndarray:
    """Step means plus i.i.d. ``N(0, noise_scale^2)`` noise; shape ``(n,)`` or ``(n, d)``."""
    if scenario.kind != "mean":
        raise ValueError("gen_mean_change needs a mean scenario")
    means = scenario.params_by_row()
    x = means + scenario.noise_scale * _rng(seed).standard_normal(means.shape)
    return x[:, 0] if x.shape[1] == 1 else x


def gen_linreg(scenario: Scenario, seed) -> tuple[np.ndarray, np.ndarray]:
    """Responses and regressors ``(1, X1, X2)`` with ``X1 ~ N(1, 1)``, ``X2 ~ N(2, 1)``.

    Returns ``(y, Z)`` where ``Z`` includes the intercept column.
    """
    if scenario.kind != "linreg":
        raise ValueError("gen_linreg needs a linreg scenario")
    beta = scenario.params_by_row()
    d = beta.shape[1]
    rng = _rng(seed)
    means = np.arange(1, d, dtype=float)
    Z = np.column_stack([np.ones(scenario.n), means + rng.standard_normal((scenario.n, d - 1))])
    y = np.einsum("ij,ij->i", Z, beta) + scenario.noise_scale * rng.standard_normal(scenario.n)
    return y, Z


def gen_inarch(scenario: Scenario, seed, burn_in: int = INARCH_BURN_IN) -> tuple[np.ndarray, int]:
    """Poisson autoregression ``X_i ~ Poi(a_j + b_j X_{i-1})`` across segments.

    The chain runs ``burn_in`` steps under the first segment's parameters and
    then continues through every change without restarting. Returns the
    ``n`` observations and the value just before the first, which serves as
    the lag of observation 1.
    """
    if scenario.kind != "inarch":
        raise ValueError("gen_inarch needs an inarch scenario")
    params = np.asarray(scenario.segment_params)
    if params.shape[1] != 2:
        raise ValueError("inarch segments need (intercept, slope) pairs")
    if np.any(params[:, 0] <= 0) or np.any(params[:, 1] < 0) or np.any(params[:, 1] >= 1):
        raise ValueError("inarch segments need a positive intercept and a slope in [0, 1)")
    rng = _rng(seed)
    a0, b0 = params[0]
    prev = rng.poisson(a0 / (1 - b0))
    for _ in range(burn_in):
        prev = rng.poisson(a0 + b0 * prev)
    initial = int(prev)
    rows = params[scenario.labels()]
    x = np.empty(scenario.n, dtype=np.int64)
    for i, (a, b) in enumerate(rows):
        prev = rng.poisson(a + b * prev)
        x[i] = prev
    return x, initial


# -- scenario families -----------------------------------------------------------

TABLE1 = Scenario("mean", 1000, (100, 200, 600, 900), (1, 2, 5, 3, 4))
TABLE2 = Scenario("linreg", 1000, (200, 500, 800), ((1, 2, 2), (1, 1, 2), (2, 1, 2), (2, 1, 1)))
TABLE3 = Scenario("inarch", 1000, (250, 500, 750), ((1, 0.5), (2.5, 0.5), (2.5, 0.2), (1, 0.5)))
MEAN3 = Scenario("mean", 1000, (250, 500, 750), (0, 2, 0, 2))


@dataclass(frozen=True)
class Method:
    """Model, statistic, inspection parameter and scaling used by a study."""

    model: str
    statistic: str
    scaling: str
    inspection: Inspection = field(default_factory=Inspection)


METHODS = {
    "table1": {
        "median-global": Method("median-like", "score", "mosum-window", Inspection(estimator="median")),
        "median-first200": Method("median-like", "score", "mosum-window", Inspection.range_fit(1, 200, "median")),
        "fit-global": Method("median-like", "score", "mosum-window", Inspection()),
        "fit-first200": Method("median-like", "score", "mosum-window", Inspection.range_fit(1, 200)),
    },
    "table2": {
        "score-sglobal": Method("linreg", "score", "score-global"),
        "score-slocal": Method("linreg", "score", "score-local"),
        "wald-wlocal": Method("linreg", "wald", "wald-local"),
    },
    "table3": {
        "score-global": Method("inarch", "score", "score-local"),
        "score-range": Method("inarch", "score", "score-local", Inspection.range_fit(300, 700)),
        "wald": Method("inarch", "wald", "inarch-gamma"),
    },
    "mean3": {
        "score": Method("mean", "score", "mosum-window"),
        "wald": Method("mean", "wald", "mosum-window"),
    },
}

SCENARIOS = {"table1": TABLE1, "table2": TABLE2, "table3": TABLE3, "mean3": MEAN3}
DEFAULT_G = {"table1": 50, "table2": 100, "table3": 150, "mean3": 100}


def make_samples(scenario: Scenario, seed) -> Samples:
    """Draw one series from ``scenario`` as model-ready samples.

    For Poisson autoregression the pre-sample value supplies the first lag, so
    row ``i`` is observation ``i + 1`` in every scenario.
    """
    if scenario.kind == "mean":
        return Samples.from_series(gen_mean_change(scenario, seed))
    if scenario.kind == "linreg":
        y, Z = gen_linreg(scenario, seed)
        return Samples.regression(y, Z, intercept=False)
    x, initial = gen_inarch(scenario, seed)
    return Samples.counts(x, initial=initial)


def _model(name: str, samples: Samples):
    if name == "mean":
        return MeanModel(samples.response.shape[1])
    if name == "median-like":
        return MedianLikeModel(samples.response.shape[1])
    if name == "linreg":
        return LinearRegression(samples.covariates.shape[1])
    if name == "inarch":
        return InarchModel()
    raise ValueError(f"unknown model {name!r}")


def replication_seed(master: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, r])


def _one_replication(args):
    scenario, method, G, alpha, epsilon, master, r = args
    samples = make_samples(scenario, replication_seed(master, r))
    model = _model(method.model, samples)
    config = ScanConfig(G, method.statistic, method.inspection, ScalingPolicy(method.scaling))
    try:
        return tuple(segment(samples, model, config, alpha=alpha, epsilon=epsilon).locations), None
    except MosumError as err:
        return None, f"{type(err).__name__}: {err}"


def _workers(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MOSUMSEG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"MOSUMSEG_THREADS must be an integer, got {env!r}") from None
    return 1


def qhat_bins(q: int) -> list:
    """Column labels ``<=q-2, q-1, q, q+1, >=q+2`` of the estimated-count histogram."""
    return [f"<={q - 2}", str(q - 1), str(q), str(q + 1), f">={q + 2}"]


@dataclass
class StudyReport:
    family: str
    method: str
    G: int
    change_points: tuple
    replications: int
    qhat_counts: np.ndarray
    detections: np.ndarray
    estimates: list
    failures: list
    master_seed: int
    runtime: float = 0.0

    @property
    def successes(self) -> int:
        return self.replications - len(self.failures)

    @property
    def qhat_distribution(self) -> np.ndarray:
        return self.qhat_counts / max(self.successes, 1)

    @property
    def detection_rates(self) -> np.ndarray:
        return self.detections / max(self.successes, 1)

    def prob_qhat(self, value: int) -> float:
        """Fraction of successful replications with exactly ``value`` estimates."""
        hits = sum(len(e) == value for e in self.estimates if e is not None)
        return hits / max(self.successes, 1)

    def row(self) -> dict:
        q = len(self.change_points)
        out = {"family": self.family, "method": self.method, "G": self.G,
               "replications": self.replications, "failures": len(self.failures)}
        for label, v in zip(qhat_bins(q), self.qhat_distribution):
            out[f"q{label}"] = f"{v:.3f}"
        for k, v in zip(self.change_points, self.detection_rates):
            out[f"det{k}"] = f"{v:.3f}"
        return out


def run_study(family: str, method: str, replications: int, G: int | None = None, master_seed: int = 0,
              alpha: float = 0.05, epsilon: float = 0.2, workers: int | None = None,
              scenario: Scenario | None = None) -> StudyReport:
    """Segment ``replications`` fresh series and tabulate counts and detection rates.

    A change at ``k`` counts as detected when some estimate lies in
    ``[k - 20, k + 20]``. Replications that raise a numerical error are
    counted as failures and left out of the rates; more than 1% failures
    raise :class:`ScanFailure`.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    if family not in METHODS:
        raise ValueError(f"unknown scenario family {family!r}; choose from {sorted(METHODS)}")
    if method not in METHODS[family]:
        raise ValueError(f"unknown method {method!r} for {family}; choose from {sorted(METHODS[family])}")
    scenario = scenario or SCENARIOS[family]
    G = G or DEFAULT_G[family]
    spec = METHODS[family][method]
    jobs = [(scenario, spec, G, alpha, epsilon, master_seed, r) for r in range(replications)]
    start = time.perf_counter()
    n_workers = _workers(workers)
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_one_replication, jobs, chunksize=max(1, replications // (4 * n_workers))))
    else:
        results = [_one_replication(job) for job in jobs]
    runtime = time.perf_counter() - start

    q = scenario.q
    truth = np.asarray(scenario.change_points)
    counts = np.zeros(5, dtype=int)
    detections = np.zeros(q, dtype=int)
    estimates, failures = [], []
    for r, (locs, err) in enumerate(results):
        estimates.append(locs)
        if locs is None:
            failures.append((r, err))
            continue
        counts[int(np.clip(len(locs) - q + 2, 0, 4))] += 1
        if locs:
            near = np.abs(truth[:, None] - np.asarray(locs)[None, :]) <= DETECTION_RADIUS
            detections += near.any(axis=1)
    report = StudyReport(family, method, G, scenario.change_points, replications, counts, detections,
                         estimates, failures, master_seed, runtime)
    if len(failures) > MAX_FAILURE_RATE * replications:
        raise ScanFailure(f"{len(failures)} of {replications} replications failed; first: {failures[0][1]}")
    return report


def reports_to_csv(reports) -> str:
    """One CSV row per report; runtimes are left out so files are reproducible."""
    rows = [r.row() for r in reports]
    keys = list(dict.fromkeys(k for row in rows for k in row))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def format_table(reports) -> str:
    """Aligned text table laid out like the published ones."""
    rows = [r.row() for r in reports]
    keys = list(dict.fromkeys(k for row in rows for k in row))
    cells = [keys] + [[str(row.get(k, "")) for k in keys] for row in rows]
    widths = [max(len(line[i]) for line in cells) for i in range(len(keys))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# -- null calibration -------------------------------------------------------------

@dataclass
class CalibrationReport:
    n: int
    G: int
    replications: int
    normed_max: np.ndarray
    ks_distance: float
    exceedance: dict
    master_seed: int

    def to_dict(self) -> dict:
        return {
            "n": self.n, "G": self.G, "replications": self.replications,
            "ks_distance": self.ks_distance,
            "exceedance": {str(a): v for a, v in self.exceedance.items()},
            "master_seed": self.master_seed,
        }


def null_max(n: int, G: int, seed, scaling: str = "known") -> float:
    """Maximum of the mean-model score statistic on one i.i.d. ``N(0, 1)`` series."""
    from .mosum import score_scan

    x = _rng(seed).standard_normal(n)
    policy = ScalingPolicy.known(np.eye(1)) if scaling == "known" else ScalingPolicy(scaling)
    res = score_scan(Samples.from_series(x), MeanModel(1), ScanConfig(G, "score", Inspection(), policy))
    return float(np.max(res.stats))


def calibrate(n: int, G: int, replications: int, master_seed: int = 0, scaling: str = "known",
              alphas=(0.01, 0.05, 0.1)) -> CalibrationReport:
    """Compare the normed null maximum with its Gumbel limit.

    Reports the Kolmogorov-Smirnov distance of ``a(n/G) max T - b(n/G)`` to
    ``exp(-2 exp(-x))`` and the share of replications whose maximum exceeds
    the threshold for each ``alpha``.
    """
    from scipy import stats as st

    from .threshold import critical_value, gumbel_cdf, norming

    maxima = np.array([null_max(n, G, replication_seed(master_seed, r), scaling) for r in range(replications)])
    a, b = norming(n / G, 1)
    normed = a * maxima - b
    ks = float(st.kstest(normed, gumbel_cdf).statistic)
    exceed = {float(al): float(np.mean(maxima >= critical_value(n, G, 1, al))) for al in alphas}
    return CalibrationReport(n, G, replications, normed, ks, exceed, master_seed)
