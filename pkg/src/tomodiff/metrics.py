"""Estimation-error metrics and report assembly.

Per-timepoint metrics: root mean squared error and temporal relative error
(mean absolute error over mean true volume). Per-flow metric: spatial
relative error (time-mean absolute error over time-mean true volume).
Zero-denominator cases are reported as explicit exclusions with counts,
never coerced to 0 or dropped silently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError, ValidationError

SUMMARY_FIELDS = ("mean", "median", "std", "max")


def _pair(x_true: np.ndarray, x_est: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x_true = np.asarray(x_true, dtype=np.float64)
    x_est = np.asarray(x_est, dtype=np.float64)
    if x_true.shape != x_est.shape:
        raise ShapeError(f"shape mismatch: {x_true.shape} vs {x_est.shape}")
    if x_true.size == 0:
        raise ValidationError("metric inputs must be nonempty")
    return x_true, x_est


def rmse(x_true: np.ndarray, x_est: np.ndarray) -> float:
    """Root mean squared error over one timepoint's flow vector."""
    x_true, x_est = _pair(x_true, x_est)
    return float(np.sqrt(np.mean((x_true - x_est) ** 2)))


def tre(x_true: np.ndarray, x_est: np.ndarray) -> float:
    """Temporal relative error: mean |error| over mean true volume."""
    x_true, x_est = _pair(x_true, x_est)
    denom = x_true.mean()
    if denom <= 0:
        raise UndefinedMetricError("temporal relative error undefined: all-zero true TM")
    return float(np.abs(x_true - x_est).mean() / denom)


def sre(flow: int, series_true: np.ndarray, series_est: np.ndarray) -> float:
    """Spatial relative error of one flow across the test window."""
    series_true, series_est = _pair(series_true, series_est)
    if series_true.ndim != 2:
        raise ShapeError("series must be 2-D (T x n)")
    true_flow = series_true[:, flow]
    denom = true_flow.mean()
    if denom <= 0:
        raise UndefinedMetricError(f"spatial relative error undefined: flow {flow} has zero volume")
    return float(np.abs(true_flow - series_est[:, flow]).mean() / denom)


def summarize(values: np.ndarray) -> dict[str, float]:
    """Mean/median/std/max over the defined (non-NaN) entries."""
    defined = np.asarray(values, dtype=np.float64)
    defined = defined[~np.isnan(defined)]
    if defined.size == 0:
        return {name: float("nan") for name in SUMMARY_FIELDS}
    return {
        "mean": float(defined.mean()),
        "median": float(np.median(defined)),
        "std": float(defined.std()),
        "max": float(defined.max()),
    }


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Per-timepoint RMSE/TRE, per-flow SRE, summaries, and exclusion counts.

    Excluded (zero-denominator) entries appear as NaN in the vectors and do
    not enter the summaries.
    """

    rmse_per_timepoint: np.ndarray
    tre_per_timepoint: np.ndarray
    sre_per_flow: np.ndarray
    excluded_timepoints: int
    excluded_flows: int
    summary: dict

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.rmse_per_timepoint, self.tre_per_timepoint, self.sre_per_flow):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(f"{self.excluded_timepoints},{self.excluded_flows}".encode())
        for metric in sorted(self.summary):
            for name in SUMMARY_FIELDS:
                h.update(format(self.summary[metric][name], ".17g").encode())
        return h.hexdigest()


def metric_report(series_true: np.ndarray, series_est: np.ndarray) -> MetricReport:
    """Assemble the full error report for a test window."""
    series_true, series_est = _pair(series_true, series_est)
    if series_true.ndim != 2:
        raise ShapeError("series must be 2-D (T x n)")
    timepoints, flows = series_true.shape
    rmse_vec = np.sqrt(np.mean((series_true - series_est) ** 2, axis=1))
    tre_vec = np.full(timepoints, np.nan)
    for t in range(timepoints):
        denom = series_true[t].mean()
        if denom > 0:
            tre_vec[t] = np.abs(series_true[t] - series_est[t]).mean() / denom
    sre_vec = np.full(flows, np.nan)
    for i in range(flows):
        denom = series_true[:, i].mean()
        if denom > 0:
            sre_vec[i] = np.abs(series_true[:, i] - series_est[:, i]).mean() / denom
    return MetricReport(
        rmse_per_timepoint=rmse_vec,
        tre_per_timepoint=tre_vec,
        sre_per_flow=sre_vec,
        excluded_timepoints=int(np.isnan(tre_vec).sum()),
        excluded_flows=int(np.isnan(sre_vec).sum()),
        summary={
            "rmse": summarize(rmse_vec),
            "tre": summarize(tre_vec),
            "sre": summarize(sre_vec),
        },
    )


def error_cdf(errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of an error sample: (jump locations, cumulative fractions).

    Right-continuous; the last cumulative fraction is exactly 1.
    """
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValidationError("error CDF needs a nonempty sample")
    values, counts = np.unique(errors, return_counts=True)
    cum = np.cumsum(counts) / errors.size
    cum[-1] = 1.0
    return values, cum


def normalized_abs_errors(series_true: np.ndarray, series_est: np.ndarray) -> np.ndarray:
    """|error| for every (timepoint, flow), divided by the maximum true volume."""
    series_true, series_est = _pair(series_true, series_est)
    peak = series_true.max()
    if peak <= 0:
        raise UndefinedMetricError("cannot normalize errors: all-zero true series")
    return (np.abs(series_true - series_est) / peak).ravel()


def aggregate_hourly(values: np.ndarray, interval: float, how: str = "mean") -> np.ndarray:
    """Aggregate a per-timepoint vector into hourly records (mean or sum)."""
    if how not in ("mean", "sum"):
        raise ValidationError(f"aggregation must be 'mean' or 'sum', got {how!r}")
    values = np.asarray(values, dtype=np.float64)
    per_hour = max(int(round(3600.0 / interval)), 1)
    chunks = [
        values[start : start + per_hour] for start in range(0, values.size, per_hour)
    ]
    agg = np.nanmean if how == "mean" else np.nansum
    return np.array([agg(chunk) for chunk in chunks])
