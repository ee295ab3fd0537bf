"""Change-point estimation from exceeding intervals of a MOSUM statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import EstimatingModel, Samples
from .mosum import Inspection, ScanConfig, ScanResult, moving_score_sums, scan

# interval lengths are integers; absorb round-off in epsilon * G
_LENGTH_SLACK = 1e-9


@dataclass(frozen=True)
class ExceedingInterval:
    """A maximal run ``v..w`` of splits where the statistic is at or above the threshold."""

    v: int
    w: int
    peak_k: int
    peak_value: float


@dataclass(frozen=True)
class ChangePoint:
    k: int
    interval: ExceedingInterval
    pass_id: int = 1
    inspection_theta: tuple | None = None

    @property
    def peak(self) -> float:
        return self.interval.peak_value


@dataclass
class SegmentationResult:
    changepoints: list
    threshold: float
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    scans: list = field(default_factory=list)

    @property
    def q_hat(self) -> int:
        return len(self.changepoints)

    @property
    def locations(self) -> list:
        return [cp.k for cp in self.changepoints]


def find_exceedings(stats, D: float, epsilon: float, G: int, k0: int | None = None) -> list:
    """Maximal runs of ``stats >= D`` with ``w - v >= epsilon * G``.

    ``stats[i]`` belongs to split ``k0 + i`` (``k0`` defaults to ``G``).
    Missing values (NaN) never count as exceeding and so break runs.
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    k0 = G if k0 is None else k0
    stats = np.asarray(stats, dtype=float)
    above = np.zeros(len(stats) + 2, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        above[1:-1] = stats >= D
    edges = np.diff(above)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    out = []
    for i0, i1 in zip(starts, stops):
        if i1 - i0 < epsilon * G - _LENGTH_SLACK:
            continue
        j = i0 + int(np.argmax(stats[i0:i1 + 1]))
        out.append(ExceedingInterval(int(k0 + i0), int(k0 + i1), int(k0 + j), float(stats[j])))
    return out


def locate(stats, intervals, k0: int) -> list:
    """Argmax of the statistic inside each interval; ties go to the smallest ``k``."""
    stats = np.asarray(stats, dtype=float)
    return [iv.v + int(np.argmax(stats[iv.v - k0:iv.w - k0 + 1])) for iv in intervals]


def _check_psi(Psi) -> np.ndarray:
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    if Psi.shape[0] != Psi.shape[1] or not np.allclose(Psi, Psi.T):
        raise ValueError("Psi must be a symmetric matrix")
    eig = np.linalg.eigvalsh(Psi)
    if eig.min() <= 0 or eig.max() / eig.min() > 1e12:
        raise ValueError("Psi must be positive definite with condition number at most 1e12")
    return Psi


def relocate_contrast(contrast, interval: ExceedingInterval, Psi, k0: int) -> int:
    """Argmax over the interval of ``c(k)' Psi^{-1} c(k)`` for a contrast series ``c``."""
    Psi = _check_psi(Psi)
    c = np.asarray(contrast, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    c = c[interval.v - k0:interval.w - k0 + 1]
    q = np.einsum("kp,kp->k", c, np.linalg.solve(Psi, c.T).T)
    return interval.v + int(np.argmax(q))


def relocate_with_psi(samples: Samples, model: EstimatingModel, theta, G: int,
                      interval: ExceedingInterval, Psi) -> int:
    """Re-estimate a change inside ``interval`` with weighting ``Psi``.

    Maximises ``M(k)' Psi^{-1} M(k)`` where ``M`` are the moving score sums at
    the inspection parameter ``theta``.
    """
    M = moving_score_sums(model.score(samples, theta), G)
    return relocate_contrast(M, interval, Psi, G)


def _config_echo(config: ScanConfig, alpha, epsilon, inflation, relocate) -> dict:
    insp = config.inspection
    return {
        "G": config.G,
        "statistic": config.statistic,
        "inspection": {"kind": insp.kind, "estimator": insp.estimator, "start": insp.start,
                       "stop": insp.stop, "theta": list(insp.theta) if insp.theta else None},
        "scaling": config.scaling.kind,
        "alpha": alpha,
        "epsilon": epsilon,
        "inflation": inflation,
        "relocate": relocate is not None,
    }


def _from_scan(result: ScanResult, epsilon: float, relocate, pass_id: int, offset: int = 0) -> list:
    intervals = find_exceedings(result.stats, result.threshold, epsilon, result.G, k0=result.G)
    theta = tuple(np.asarray(result.inspection_theta).tolist()) if result.inspection_theta is not None else None
    cps = []
    for iv in intervals:
        k = iv.peak_k
        if relocate is not None:
            Psi = np.eye(result.p) if isinstance(relocate, str) and relocate == "identity" else relocate
            k = relocate_contrast(result.contrast(), iv, Psi, result.G)
        if offset:
            iv = ExceedingInterval(iv.v + offset, iv.w + offset, iv.peak_k + offset, iv.peak_value)
        cps.append(ChangePoint(k + offset, iv, pass_id, theta))
    return cps


def segment(samples: Samples, model: EstimatingModel, config: ScanConfig, alpha: float = 0.05,
            epsilon: float = 0.2, relocate=None, inflation: float | None = None) -> SegmentationResult:
    """Scan, threshold, find exceeding intervals and locate one change in each.

    ``relocate`` may be ``None`` (plain argmax), ``"identity"`` or an SPD
    matrix ``Psi`` for the weighted argmax.
    """
    result = scan(samples, model, config, alpha=alpha, inflation=inflation)
    cps = _from_scan(result, epsilon, relocate, pass_id=1)
    return SegmentationResult(cps, result.threshold, _config_echo(config, alpha, epsilon, inflation, relocate),
                              list(result.scaling_warnings), [result])


def min_segment_length(G: int, epsilon: float) -> int:
    """Shortest stretch worth rescanning: room for an interval and ``n/G > e``."""
    return max(math.ceil(2 * G + epsilon * G), math.floor(math.e * G) + 1)


def merge_duplicates(changepoints: list, tolerance: float) -> list:
    """Merge estimates closer than ``tolerance``, keeping the larger peak.

    Estimates are visited in discovery order, so earlier passes win ties.
    """
    kept: list = []
    for cp in changepoints:
        clash = [i for i, other in enumerate(kept) if abs(other.k - cp.k) <= tolerance]
        if not clash:
            kept.append(cp)
            continue
        i = clash[0]
        if cp.peak > kept[i].peak:
            kept[i] = cp
    return sorted(kept, key=lambda cp: cp.k)


def segment_recursive(samples: Samples, model: EstimatingModel, config: ScanConfig, alpha: float = 0.05,
                      epsilon: float = 0.2, max_depth: int = 3, inflation: float | None = None) -> SegmentationResult:
    """Score segmentation repeated on the stretches between detected changes.

    Pass 1 scans the whole series with ``config.inspection``. Every stretch
    between neighbouring estimates (including both flanks) long enough for a
    new scan is rescanned with the inspection parameter refitted on that
    stretch. Recursion stops at ``max_depth`` or when a scan finds nothing.
    """
    if config.statistic != "score":
        raise ValueError("recursive segmentation uses the score statistic")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    min_len = min_segment_length(config.G, epsilon)
    found: list = []
    scans: list = []
    warnings: list = []
    threshold_first = None
    queue = [(0, len(samples), 1, config.inspection)]
    while queue:
        a, b, depth, inspection = queue.pop(0)
        result = scan(samples[a:b], model, replace(config, inspection=inspection), alpha=alpha, inflation=inflation)
        if threshold_first is None:
            threshold_first = result.threshold
        scans.append(result)
        warnings.extend((k + a, flag) for k, flag in result.scaling_warnings)
        cps = _from_scan(result, epsilon, None, pass_id=depth, offset=a)
        found.extend(cps)
        if not cps or depth >= max_depth:
            continue
        cuts = [a] + [cp.k for cp in cps] + [b]
        refit = Inspection(estimator=inspection.estimator)
        for s, e in zip(cuts[:-1], cuts[1:]):
            if e - s >= min_len:
                queue.append((s, e, depth + 1, refit))
    merged = merge_duplicates(found, config.G / 2)
    echo = _config_echo(config, alpha, epsilon, inflation, None)
    echo["recursive"] = {"max_depth": max_depth, "min_segment": min_len}
    return SegmentationResult(merged, threshold_first, echo, warnings, scans)
