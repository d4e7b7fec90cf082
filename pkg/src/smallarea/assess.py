"""Verification of estimators against a gold-standard population.

Given per-area estimates and the realized finite-population
proportions, this module computes accuracy and calibration summaries
(correlation, RMSE, interval length, coverage) plus a spatial
structure comparison: the fraction of estimate-side Moran's I values
falling strictly below the gold standard's I, taken either over
posterior draws or over a simulated sampling distribution of a
design-based estimator.

Areas an estimator leaves missing are excluded pairwise, with the
spatial statistics recomputed on the induced subgraph so both sides
see the same areas.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .design import EstimateSet
from .errors import DegenerateValuesError, ValidationError
from .graph import AreaGraph, morans_i, morans_i_distribution


@dataclass(frozen=True)
class AssessmentReport:
    """Accuracy summaries of one estimator against the gold standard."""

    estimator: str
    n_areas: int
    n_missing: int
    correlation: float
    rmse: float
    mean_ci_length: float
    coverage: float
    morans_i: float
    morans_i_gold: float
    p_below_gold: float | None = None
    n_missing_interval: int = 0


def _gold_vector(gold: np.ndarray, n_areas: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=float)
    if gold.shape != (n_areas,):
        raise ValidationError(f"gold vector needs shape ({n_areas},), got {gold.shape}")
    if not np.all(np.isfinite(gold)):
        raise ValidationError("gold vector has non-finite entries")
    if np.any((gold < 0.0) | (gold > 1.0)):
        raise ValidationError("gold proportions outside [0, 1]")
    return gold


def assess(estimates: EstimateSet, gold: np.ndarray, graph: AreaGraph) -> AssessmentReport:
    """Score one estimator; missing areas drop out of every summary."""
    n = graph.n_areas
    gold = _gold_vector(gold, n)
    if estimates.n_areas != n:
        raise ValidationError("estimates and graph cover different area counts")
    have_point = np.isfinite(estimates.point)
    if not have_point.any():
        raise ValidationError(f"{estimates.estimator}: no areas with estimates to assess")
    pt = estimates.point[have_point]
    gd = gold[have_point]
    with np.errstate(invalid="ignore"):
        corr = float(np.corrcoef(pt, gd)[0, 1]) if pt.size > 1 else float("nan")
    rmse = float(np.sqrt(np.mean((pt - gd) ** 2)))

    have_iv = have_point & np.isfinite(estimates.low) & np.isfinite(estimates.high)
    if have_iv.any():
        length = float(np.mean(estimates.high[have_iv] - estimates.low[have_iv]))
        inside = (gold[have_iv] >= estimates.low[have_iv]) & (gold[have_iv] <= estimates.high[have_iv])
        cover = float(np.mean(inside))
    else:
        length = float("nan")
        cover = float("nan")
    sub = graph.subgraph(have_point)
    if sub.n_edges == 0:
        mi = mi_gold = float("nan")  # no adjacency left to measure
    else:
        try:
            mi = morans_i(pt, sub)
        except DegenerateValuesError:
            mi = float("nan")
        try:
            mi_gold = morans_i(gd, sub)
        except DegenerateValuesError:
            mi_gold = float("nan")
    return AssessmentReport(
        estimator=estimates.estimator,
        n_areas=n,
        n_missing=int(np.count_nonzero(~have_point)),
        correlation=corr,
        rmse=rmse,
        mean_ci_length=length,
        coverage=cover,
        morans_i=mi,
        morans_i_gold=mi_gold,
        n_missing_interval=int(np.count_nonzero(have_point & ~have_iv)),
    )


def _p_below(i_draws: np.ndarray, i_gold: float, what: str) -> float:
    finite = np.isfinite(i_draws)
    dropped = i_draws.size - int(np.count_nonzero(finite))
    if dropped:
        warnings.warn(f"{what}: {dropped} of {i_draws.size} draws degenerate, excluded")
    kept = i_draws[finite]
    if kept.size == 0:
        raise DegenerateValuesError(f"{what}: every draw was degenerate")
    # strictly below: ties count as not-below
    return float(np.mean(kept < i_gold))


def morans_comparison_bayes(draws: np.ndarray, gold: np.ndarray, graph: AreaGraph) -> float:
    """Fraction of per-draw Moran's I values strictly below the gold I.

    ``draws`` is ``(chains, kept, areas)`` or ``(draws, areas)``.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        draws = draws.reshape(-1, draws.shape[2])
    if draws.ndim != 2:
        raise ValidationError("morans_comparison_bayes: draws must be 2- or 3-dimensional")
    if draws.shape[0] < 100:
        raise ValidationError(
            f"morans_comparison_bayes: {draws.shape[0]} draws; need at least 100"
        )
    gold = _gold_vector(gold, graph.n_areas)
    if draws.shape[1] != graph.n_areas:
        raise ValidationError("draws cover a different number of areas than the graph")
    i_gold = morans_i(gold, graph)
    i_draws = morans_i_distribution(draws, graph)
    return _p_below(i_draws, i_gold, "morans_comparison_bayes")


def morans_comparison_freq(estimates: EstimateSet, gold: np.ndarray, graph: AreaGraph,
                           reps: int = 2000, seed: int = 0,
                           clip: bool = False) -> float:
    """Fraction of simulated-estimate Moran's I values strictly below the gold I.

    Simulates the sampling distribution by drawing each area's estimate
    from its location-scale t reference: point + sqrt(variance) * t_df.
    Areas without a variance (or with df < 1) are excluded, with the
    gold statistic recomputed on the induced subgraph.  ``clip`` keeps
    simulated proportions inside [0, 1].  Bitwise deterministic for a
    given seed.
    """
    if reps < 1:
        raise ValidationError("morans_comparison_freq: reps must be >= 1")
    n = graph.n_areas
    gold = _gold_vector(gold, n)
    if estimates.n_areas != n:
        raise ValidationError("estimates and graph cover different area counts")
    if estimates.df is None:
        raise ValidationError(
            f"{estimates.estimator}: no degrees of freedom; use the posterior comparison"
        )
    df = np.asarray(estimates.df, dtype=float)
    ok = (np.isfinite(estimates.point) & np.isfinite(estimates.variance)
          & np.isfinite(df) & (df >= 1.0))
    excluded = int(np.count_nonzero(~ok))
    if excluded:
        warnings.warn(
            f"morans_comparison_freq: {excluded} areas without a usable "
            "variance excluded from the spatial comparison"
        )
    if np.count_nonzero(ok) < 2:
        raise ValidationError("morans_comparison_freq: fewer than 2 usable areas")
    sub = graph.subgraph(ok)
    if sub.n_edges == 0:
        raise ValidationError("morans_comparison_freq: usable areas share no edges")
    i_gold = morans_i(gold[ok], sub)

    rng = rng_mod.stream(seed, "assess/freq_moran")
    scale = np.sqrt(estimates.variance[ok])
    sims = estimates.point[ok] + scale * rng.standard_t(df[ok], size=(reps, int(ok.sum())))
    if clip:
        np.clip(sims, 0.0, 1.0, out=sims)
    i_draws = morans_i_distribution(sims, sub)
    return _p_below(i_draws, i_gold, "morans_comparison_freq")


# ---------------------------------------------------------------------------
# report output

_COLUMNS = [
    "estimator", "n_areas", "n_missing", "correlation", "rmse",
    "mean_ci_length", "coverage", "morans_i", "p_below_gold",
]


def _row(report: AssessmentReport) -> list:
    return [
        report.estimator, report.n_areas, report.n_missing,
        _fmt(report.correlation), _fmt(report.rmse),
        _fmt(report.mean_ci_length), _fmt(report.coverage),
        _fmt(report.morans_i),
        _fmt(report.p_below_gold) if report.p_below_gold is not None else "",
    ]


def write_report_csv(path, reports: list[AssessmentReport], gold_i: float,
                     config_hash: str | None = None) -> None:
    """Tabular report, one row per estimator plus a gold reference row."""
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        n = reports[0].n_areas if reports else 0
        writer.writerow(["gold", n, 0, "", "", "", "", _fmt(gold_i), ""])
        for rep in reports:
            writer.writerow(_row(rep))


def write_report_json(path, reports: list[AssessmentReport], gold_i: float,
                      config_hash: str | None = None) -> None:
    payload = {
        "config_hash": config_hash,
        "gold": {"morans_i": _jnum(gold_i)},
        "estimators": {
            rep.estimator: {
                "n_areas": rep.n_areas,
                "n_missing": rep.n_missing,
                "n_missing_interval": rep.n_missing_interval,
                "correlation": _jnum(rep.correlation),
                "rmse": _jnum(rep.rmse),
                "mean_ci_length": _jnum(rep.mean_ci_length),
                "coverage": _jnum(rep.coverage),
                "morans_i": _jnum(rep.morans_i),
                "morans_i_gold_subset": _jnum(rep.morans_i_gold),
                "p_below_gold": _jnum(rep.p_below_gold),
            }
            for rep in reports
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return format(float(x), ".17g")


def _jnum(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None
