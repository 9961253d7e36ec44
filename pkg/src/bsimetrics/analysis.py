"""Scorecard assembly: engine bucket vectors in, test results out."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .engine import Agg, Engine
from .model import format_date
from .stats import DeltaResult, cuped_adjust, diff_test, ratio_estimate

SCORECARD_COLUMNS = (
    "strategy", "metric", "agg", "first_date", "last_date", "units", "point",
    "variance", "control_point", "delta", "delta_variance", "relative_delta", "t", "p", "cuped", "theta",
)


@dataclass(frozen=True)
class ScorecardRow:
    strategy: str
    metric: str
    agg: str
    first_day: int
    last_day: int
    units: int
    point: float
    variance: float
    control_point: float
    result: DeltaResult | None

    def record(self) -> tuple:
        r = self.result
        tail = ("", "", "", "", "", "0", "") if r is None else (
            r.delta, r.variance, r.relative_delta, r.t_stat, r.p_value, int(r.cuped),
            "" if r.theta != r.theta else r.theta,
        )
        return (
            self.strategy, self.metric, self.agg, format_date(self.first_day),
            format_date(self.last_day), self.units, self.point, self.variance,
            self.control_point, *tail,
        )


def scorecard(
    engine: Engine,
    strategies: Sequence[str],
    control: str,
    metrics: Sequence[str],
    days: Sequence[int],
    agg: Agg | str = Agg.SUM,
    where=None,
    cuped_days: int = 0,
) -> list[ScorecardRow]:
    """Per-unit metric for each strategy with a test against ``control``.

    The denominator is the number of units exposed by the last day (and
    matching ``where`` on that day).  With ``cuped_days`` the same metric
    summed over that many days before the first day is the covariate, and
    each non-control strategy gets a second, CUPED-adjusted row.
    """
    agg = Agg(agg)
    days = list(days)
    last = days[-1]
    scale = {m: engine.catalog.scale_of(m) if agg is Agg.SUM else 1 for m in metrics}
    order = [control] + [s for s in strategies if s != control]
    den = {s: engine.exposure(s, last, where).counts for s in order}
    rows = []
    for metric in metrics:
        num = {s: engine.multi_day_scorecard(s, metric, days, agg, where).values for s in order}
        est = {s: ratio_estimate(num[s], den[s], scale[metric]) for s in order}
        cov = {}
        if cuped_days:
            for s in order:
                cov[s] = engine.pre_experiment(
                    s, metric, days[0], cuped_days, analysis_day=last, where=where, dim_day=last
                ).sums
        for s in order:
            common = (s, metric, agg.value, days[0], last, int(den[s].sum()),
                      est[s].point, est[s].variance, est[control].point)
            if s == control:
                rows.append(ScorecardRow(*common, None))
                continue
            rows.append(ScorecardRow(*common, diff_test(est[s], est[control])))
            if cuped_days:
                adjusted = cuped_adjust(
                    (num[s], den[s]), (num[control], den[control]),
                    (cov[s], den[s]), (cov[control], den[control]),
                    scale[metric],
                )
                rows.append(ScorecardRow(*common, adjusted))
    return rows
