"""Design-based and conjugate-Bayes estimators of per-area proportions.

Five estimators are provided, from the plain survey mean upward:

* ``srs_estimate``: sample proportion with finite-population variance
  and a t interval
* ``bayes_srs_estimate``: Beta(O+1, n-O+1) posterior under a uniform
  prior; equal-tailed quantile intervals
* ``stratified_estimate``: register-weighted combination of per-stratum
  sample means under the sampling design's stratum variable
* ``ratio_estimate``: the same combination over a non-design auxiliary
  variable (post-stratification)
* ``combined_estimate``: two auxiliary variables at once, weighting
  cross cells by joint register counts or, lacking those, by the
  independence product of the marginal counts

Any cell the register populates but the sample misses makes the area's
point estimate non-computable; such areas are flagged missing with a
reason instead of being silently dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError
from .frame import PopulationMargins, SurveySample, cell_counts

_MAX_LISTED_CELLS = 4


@dataclass
class EstimateSet:
    """Per-area estimates of one estimator with interval and missingness.

    Missing entries are NaN; ``missing_reason[i]`` explains any absent
    point or interval.  ``df`` holds the t degrees of freedom where the
    interval is t-based, and the Beta posterior fields are set by the
    conjugate estimator only.
    """

    estimator: str
    alpha: float | None
    point: np.ndarray
    variance: np.ndarray
    low: np.ndarray
    high: np.ndarray
    missing_reason: list[str | None]
    missing_cells: np.ndarray | None = None
    df: np.ndarray | None = None
    beta_a: np.ndarray | None = None
    beta_b: np.ndarray | None = None
    post_mean: np.ndarray | None = None

    def __post_init__(self):
        for name in ("point", "variance", "low", "high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.point.size
        if not (self.variance.size == self.low.size == self.high.size == n
                and len(self.missing_reason) == n):
            raise ValidationError("estimate set: field lengths differ")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValidationError("estimate set: alpha must be in (0, 1)")
        ok = ~np.isnan(self.point)
        if np.any((self.point[ok] < 0.0) | (self.point[ok] > 1.0)):
            raise ValidationError("estimate set: point outside [0, 1]")
        has_iv = ~np.isnan(self.low) & ~np.isnan(self.high) & ok
        if np.any(self.low[has_iv] > self.point[has_iv]) or np.any(
            self.point[has_iv] > self.high[has_iv]
        ):
            raise ValidationError("estimate set: interval does not bracket point")
        ok_var = ~np.isnan(self.variance)
        if np.any(self.variance[ok_var] < 0.0):
            raise ValidationError("estimate set: negative variance")

    @property
    def n_areas(self) -> int:
        return int(self.point.size)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.point)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())


def _t_interval(point, variance, df, alpha):
    """Symmetric t interval, clipped to the unit interval."""
    low = np.full_like(point, np.nan)
    high = np.full_like(point, np.nan)
    ok = ~np.isnan(point) & ~np.isnan(variance) & ~np.isnan(df) & (df >= 1)
    if np.any(ok):
        q = stats.t.ppf(1.0 - alpha / 2.0, df[ok])
        half = q * np.sqrt(variance[ok])
        low[ok] = np.clip(point[ok] - half, 0.0, 1.0)
        high[ok] = np.clip(point[ok] + half, 0.0, 1.0)
    return low, high


def srs_estimate(sample: SurveySample, margins: PopulationMargins,
                 alpha: float = 0.05) -> EstimateSet:
    """Sample proportion with finite-population variance and t interval.

    ``point = O_i / n_i``; ``variance = point(1-point)/n_i * (1 - n_i/N_i)``;
    interval ``point +- t_{1-alpha/2, n_i-1} sqrt(variance)``.  Areas with
    no sampled units are missing; with one unit the point is kept but
    the variance (df = 0) is not.
    """
    if margins.n_areas != sample.n_areas:
        raise ValidationError("srs_estimate: sample and margins area counts differ")
    counts = cell_counts(sample)
    n = counts.n.astype(float)
    big_n = margins.totals.astype(float)
    point = np.full(sample.n_areas, np.nan)
    variance = np.full(sample.n_areas, np.nan)
    df = np.full(sample.n_areas, np.nan)
    reasons: list[str | None] = [None] * sample.n_areas
    got = counts.n > 0
    point[got] = counts.o[got] / n[got]
    two = counts.n > 1
    variance[two] = point[two] * (1.0 - point[two]) / n[two] * (1.0 - n[two] / big_n[two])
    df[two] = n[two] - 1.0
    for i in np.flatnonzero(~got):
        reasons[i] = "no sampled units"
    for i in np.flatnonzero(got & ~two):
        reasons[i] = "single sampled unit: variance undefined"
    low, high = _t_interval(point, variance, df, alpha)
    return EstimateSet("srs", alpha, point, variance, low, high, reasons,
                       missing_cells=(~got).astype(np.int64), df=df)


def bayes_srs_estimate(sample: SurveySample, alpha: float = 0.05) -> EstimateSet:
    """Beta(O+1, n-O+1) posterior per area under a uniform prior.

    The point is the posterior mode ``O_i/n_i`` (equal to the sample
    proportion); for empty areas the posterior is the uniform prior and
    the posterior mean 1/2 is reported.  Intervals are equal-tailed
    Beta quantiles, so no area is ever missing.  When every sampled
    unit agrees (O = 0 or O = n) the mode sits at 0 or 1, outside the
    equal-tailed quantiles; the interval is extended to that endpoint
    so it always brackets the point (coverage stays >= 1 - alpha).
    """
    counts = cell_counts(sample)
    a = counts.o + 1.0
    b = counts.n - counts.o + 1.0
    point = np.where(counts.n > 0, counts.o / np.maximum(counts.n, 1), 0.5)
    post_mean = a / (a + b)
    variance = a * b / ((a + b) ** 2 * (a + b + 1.0))
    low = np.minimum(stats.beta.ppf(alpha / 2.0, a, b), point)
    high = np.maximum(stats.beta.ppf(1.0 - alpha / 2.0, a, b), point)
    reasons: list[str | None] = [None] * sample.n_areas
    return EstimateSet("bayes_srs", alpha, point, variance, low, high, reasons,
                       missing_cells=np.zeros(sample.n_areas, dtype=np.int64),
                       beta_a=a, beta_b=b, post_mean=post_mean)


def _weighted_cells(name: str, sample: SurveySample, weights: np.ndarray,
                    totals: np.ndarray, n_cell: np.ndarray, o_cell: np.ndarray,
                    labels: list[str], alpha: float) -> EstimateSet:
    """Shared core: weight per-cell sample means by register cell sizes.

    ``weights`` may be non-integral (independence products).  The
    variance is the stratified plug-in with per-cell fpc clamped at
    zero, on ``sum(n) - K`` degrees of freedom with ``K`` the number of
    populated cells of the area.
    """
    n_areas, n_cells = weights.shape
    populated = weights > 0.0
    sampled = n_cell > 0
    nf = n_cell.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_cell = np.where(sampled, o_cell / np.maximum(n_cell, 1), np.nan)

    point = np.full(n_areas, np.nan)
    variance = np.full(n_areas, np.nan)
    df = np.full(n_areas, np.nan)
    reasons: list[str | None] = [None] * n_areas

    gap = populated & ~sampled
    n_gap = gap.sum(axis=1)
    ok = (n_gap == 0) & (totals > 0)
    contrib = np.where(populated & sampled, weights * np.nan_to_num(p_cell), 0.0)
    point[ok] = contrib.sum(axis=1)[ok] / totals[ok]

    singleton = populated & (n_cell == 1)
    var_ok = ok & ~singleton.any(axis=1)
    fpc = np.where(populated & (n_cell >= 2),
                   np.clip(1.0 - nf / np.where(populated, weights, np.inf), 0.0, None),
                   0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        vc = np.where(populated & (n_cell >= 2),
                      weights ** 2 * p_cell * (1.0 - p_cell) / nf * fpc, 0.0)
    variance[var_ok] = np.nan_to_num(vc).sum(axis=1)[var_ok] / totals[var_ok] ** 2
    df[var_ok] = (np.where(populated, n_cell, 0).sum(axis=1)
                  - populated.sum(axis=1))[var_ok]

    for i in range(n_areas):
        if totals[i] == 0:
            reasons[i] = "empty area population"
        elif n_gap[i] > 0:
            reasons[i] = "unsampled cells: " + _list_cells(gap[i], labels)
        elif singleton[i].any():
            reasons[i] = "single-unit cells: " + _list_cells(singleton[i], labels)

    low, high = _t_interval(point, variance, df, alpha)
    return EstimateSet(name, alpha, point, variance, low, high, reasons,
                       missing_cells=n_gap.astype(np.int64), df=df)


def _list_cells(mask: np.ndarray, labels: list[str]) -> str:
    hits = [labels[j] for j in np.flatnonzero(mask)]
    if len(hits) > _MAX_LISTED_CELLS:
        extra = len(hits) - _MAX_LISTED_CELLS
        hits = hits[:_MAX_LISTED_CELLS] + [f"(+{extra} more)"]
    return "; ".join(hits)


def stratified_estimate(sample: SurveySample, margins: PopulationMargins,
                        stratum: str, alpha: float = 0.05) -> EstimateSet:
    """Register-weighted combination of per-stratum sample means.

    An area whose register populates a stratum the sample missed cannot
    be estimated and is flagged missing with the offending cells.
    """
    if margins.n_areas != sample.n_areas:
        raise ValidationError("stratified_estimate: area counts differ")
    var = sample.variable(stratum)
    weights = margins.table_for(stratum).astype(float)
    counts = cell_counts(sample, (stratum,))
    labels = [f"{stratum}={lvl}" for lvl in var.levels]
    return _weighted_cells("stratified", sample, weights, margins.totals.astype(float),
                           counts.n, counts.o, labels, alpha)


def ratio_estimate(sample: SurveySample, margins: PopulationMargins,
                   variable: str, alpha: float = 0.05) -> EstimateSet:
    """Post-stratification on one auxiliary variable.

    Identical combination rule to :func:`stratified_estimate`; the
    variable need not have entered the sampling design.
    """
    if margins.n_areas != sample.n_areas:
        raise ValidationError("ratio_estimate: area counts differ")
    var = sample.variable(variable)
    weights = margins.table_for(variable).astype(float)
    counts = cell_counts(sample, (variable,))
    labels = [f"{variable}={lvl}" for lvl in var.levels]
    return _weighted_cells("ratio", sample, weights, margins.totals.astype(float),
                           counts.n, counts.o, labels, alpha)


def combined_estimate(sample: SurveySample, margins: PopulationMargins,
                      var1: str, var2: str, alpha: float = 0.05,
                      mode: str = "crosstab") -> EstimateSet:
    """Two-variable post-stratification over cross cells.

    ``mode='crosstab'`` weights cell means by the register's joint
    counts; ``mode='independence'`` replaces them with the product
    ``N_i^{Z1} * N_i^{Z2} / N_i``, which is exact when the two variables
    are independent in the population.  Any cross cell with positive
    weight but no sampled units makes the area missing.
    """
    if margins.n_areas != sample.n_areas:
        raise ValidationError("combined_estimate: area counts differ")
    if mode not in ("crosstab", "independence"):
        raise ValidationError(f"combined_estimate: unknown mode {mode!r}")
    v1, v2 = sample.variable(var1), sample.variable(var2)
    if mode == "crosstab":
        ct = margins.crosstab
        if ct is None:
            raise ValidationError("combined_estimate: margins carry no crosstab")
        if (ct.var1, ct.var2) == (var1, var2):
            weights = ct.table.astype(float)
        elif (ct.var1, ct.var2) == (var2, var1):
            weights = np.swapaxes(ct.table, 1, 2).astype(float)
        else:
            raise ValidationError(
                f"combined_estimate: crosstab covers ({ct.var1!r}, {ct.var2!r})"
            )
    else:
        t1 = margins.table_for(var1).astype(float)
        t2 = margins.table_for(var2).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            weights = t1[:, :, None] * t2[:, None, :] / np.where(
                margins.totals > 0, margins.totals, 1
            )[:, None, None].astype(float)
    counts = cell_counts(sample, (var1, var2))
    labels = [
        f"{var1}={l1}/{var2}={l2}" for l1 in v1.levels for l2 in v2.levels
    ]
    n_areas = sample.n_areas
    out = _weighted_cells(
        "combined", sample, weights.reshape(n_areas, -1),
        margins.totals.astype(float),
        counts.n.reshape(n_areas, -1), counts.o.reshape(n_areas, -1),
        labels, alpha,
    )
    return out


# ---------------------------------------------------------------------------
# CSV export / import


def write_estimates(path, estimates: "EstimateSet | list[EstimateSet]",
                    areas, config_hash: str | None = None) -> None:
    """Write ``area,estimator,point,variance,low,high,missing_reason`` rows."""
    sets = estimates if isinstance(estimates, list) else [estimates]
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["area", "estimator", "point", "variance", "low", "high",
                         "missing_reason"])
        for est in sets:
            if est.n_areas != len(areas):
                raise ValidationError("write_estimates: area list length mismatch")
            for i, name in enumerate(areas):
                writer.writerow([
                    name, est.estimator,
                    _fmt(est.point[i]), _fmt(est.variance[i]),
                    _fmt(est.low[i]), _fmt(est.high[i]),
                    est.missing_reason[i] or "",
                ])


def load_estimates(path, areas) -> dict[str, EstimateSet]:
    """Read estimate CSVs back into sets keyed by estimator name."""
    from .frame import area_index

    idx = area_index(areas)
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.lstrip().startswith("#"))
        header = next(rows, None)
        if header is None or header[:7] != ["area", "estimator", "point", "variance",
                                            "low", "high", "missing_reason"]:
            raise ValidationError(f"{path}: unexpected estimates header")
        acc: dict[str, dict] = {}
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            name, est_name = row[0], row[1]
            if name not in idx:
                raise ValidationError(f"{path}:{lineno}: unknown area {name!r}")
            slot = acc.setdefault(est_name, {
                "point": np.full(len(areas), np.nan),
                "variance": np.full(len(areas), np.nan),
                "low": np.full(len(areas), np.nan),
                "high": np.full(len(areas), np.nan),
                "reason": [None] * len(areas),
            })
            i = idx[name]
            slot["point"][i] = _parse(row[2])
            slot["variance"][i] = _parse(row[3])
            slot["low"][i] = _parse(row[4])
            slot["high"][i] = _parse(row[5])
            slot["reason"][i] = row[6] or None
    return {
        est_name: EstimateSet(est_name, None, s["point"], s["variance"], s["low"],
                              s["high"], s["reason"])
        for est_name, s in acc.items()
    }


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else format(float(x), ".17g")


def _parse(token: str) -> float:
    return float(token) if token.strip() else np.nan
