"""Bucket-replicate inference for scorecard metrics.

Every strategy yields one total per bucket; buckets are treated as
independent replicates.  Ratio metrics (sum / units) get their variance
from the delta method over those replicates, differences are tested with a
normal approximation, and CUPED regresses out a pre-period covariate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class StatsError(ValueError):
    pass


class UndefinedMetricError(StatsError):
    pass


class DegenerateTestError(StatsError):
    pass


@dataclass(frozen=True)
class MetricEstimate:
    point: float
    variance: float
    buckets_used: int


@dataclass(frozen=True)
class DeltaResult:
    delta: float
    variance: float
    t_stat: float
    p_value: float
    relative_delta: float
    cuped: bool = False
    theta: float = field(default=float("nan"))

    def ci(self, z: float = 1.959963984540054) -> tuple[float, float]:
        half = z * math.sqrt(self.variance)
        return self.delta - half, self.delta + half

    def as_record(self) -> dict[str, float | int]:
        return {
            "delta": self.delta,
            "variance": self.variance,
            "t": self.t_stat,
            "p": self.p_value,
            "relative_delta": self.relative_delta,
            "cuped": int(self.cuped),
        }


def _totals(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v), dtype=np.float64)


def normal_two_sided_p(t: float) -> float:
    return math.erfc(abs(t) / math.sqrt(2.0))


def ratio_estimate(num, den, scale: int = 1) -> MetricEstimate:
    """Ratio of bucket totals with delta-method variance.

    ``Var(X/N) ~= (B / N^2) * (S_xx - 2 m S_xn + m^2 S_nn)`` where ``S`` are
    sample (co)variances of the per-bucket totals and ``m = X / N``.
    """
    x = _totals(num)
    n = _totals(den)
    if x.shape != n.shape:
        raise StatsError("numerator and denominator bucket counts differ")
    big_n = float(n.sum())
    if big_n <= 0:
        raise UndefinedMetricError("denominator total is zero")
    b = x.size
    m = float(x.sum()) / big_n
    cov = np.cov(np.vstack([x, n]), ddof=1)
    var = b / big_n**2 * (cov[0, 0] - 2 * m * cov[0, 1] + m * m * cov[1, 1])
    return MetricEstimate(m / scale, max(float(var), 0.0) / scale**2, int(np.count_nonzero(n)))


def diff_test(treatment: MetricEstimate, control: MetricEstimate) -> DeltaResult:
    if not all(math.isfinite(v) for v in (treatment.point, control.point, treatment.variance, control.variance)):
        raise StatsError("estimates must be finite")
    delta = treatment.point - control.point
    variance = treatment.variance + control.variance
    return _result(delta, variance, control.point)


def _result(delta: float, variance: float, base: float, **extra) -> DeltaResult:
    if variance == 0:
        if delta != 0:
            raise DegenerateTestError("non-zero delta with zero variance")
        t, p = 0.0, 1.0
    else:
        t = delta / math.sqrt(variance)
        p = normal_two_sided_p(t)
    rel = delta / base if base else float("nan")
    return DeltaResult(delta, variance, t, p, rel, **extra)


def _linearized(num, den) -> tuple[float, np.ndarray]:
    """Ratio point estimate and per-bucket influence values ``(x_b - m n_b) B / N``."""
    x = _totals(num)
    n = _totals(den)
    big_n = float(n.sum())
    if big_n <= 0:
        raise UndefinedMetricError("denominator total is zero")
    m = float(x.sum()) / big_n
    return m, (x - m * n) * (x.size / big_n)


def cuped_adjust(y_t, y_c, x_t, x_c, scale: int = 1) -> DeltaResult:
    """CUPED-adjusted treatment-control difference.

    Each argument is a ``(numerator, denominator)`` pair of bucket vectors:
    ``y_*`` for the experiment metric, ``x_*`` for its pre-period covariate.
    ``theta`` is the pooled within-group regression slope of the linearized
    metric on the linearized covariate.  When the covariate has no variance
    the unadjusted result is returned with ``cuped=False``.
    """
    my_t, u_t = _linearized(*y_t)
    my_c, u_c = _linearized(*y_c)
    mx_t, w_t = _linearized(*x_t)
    mx_c, w_c = _linearized(*x_c)
    if u_t.size != w_t.size or u_c.size != w_c.size:
        raise StatsError("metric and covariate bucket counts differ")

    def centered(a):
        return a - a.mean()

    sxx = float(centered(w_t) @ centered(w_t) + centered(w_c) @ centered(w_c))
    sxy = float(centered(w_t) @ centered(u_t) + centered(w_c) @ centered(u_c))
    delta = (my_t - my_c) / scale
    if sxx <= 0:
        var = (u_t.var(ddof=1) / u_t.size + u_c.var(ddof=1) / u_c.size) / scale**2
        return _result(delta, float(var), my_c / scale, cuped=False)
    theta = sxy / sxx
    adj_delta = delta - theta * (mx_t - mx_c) / scale
    r_t = u_t - theta * w_t
    r_c = u_c - theta * w_c
    var = (r_t.var(ddof=1) / r_t.size + r_c.var(ddof=1) / r_c.size) / scale**2
    return _result(adj_delta, float(var), my_c / scale, cuped=True, theta=theta)


def covariance_matrix(metrics) -> np.ndarray:
    """Totals-level covariance: ``B`` times the sample covariance of bucket totals."""
    vectors = [_totals(m) for m in metrics]
    if len({v.size for v in vectors}) > 1:
        raise StatsError("bucket counts differ")
    rows = np.vstack(vectors)
    with_data = np.count_nonzero(np.any(rows != 0, axis=0))
    if with_data < 2:
        raise StatsError("need at least two buckets with data")
    return rows.shape[1] * np.atleast_2d(np.cov(rows, ddof=1))


def bootstrap_ratio_variance(num, den, resamples: int = 10_000, seed: int = 0) -> float:
    """Bucket-resampling bootstrap of ``sum(num)/sum(den)``; a check on the delta method."""
    x = _totals(num)
    n = _totals(den)
    rng = np.random.default_rng(seed)
    ratios = []
    for start in range(0, resamples, 1000):
        idx = rng.integers(0, x.size, size=(min(1000, resamples - start), x.size))
        ratios.append(x[idx].sum(axis=1) / n[idx].sum(axis=1))
    return float(np.concatenate(ratios).var(ddof=1))
