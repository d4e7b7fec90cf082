import csv
import json

import numpy as np
import pytest

from smallarea import rng as rng_mod
from smallarea.assess import (
    AssessmentReport,
    assess,
    morans_comparison_bayes,
    morans_comparison_freq,
    write_report_csv,
    write_report_json,
)
from smallarea.design import EstimateSet
from smallarea.errors import DegenerateValuesError, ValidationError
from smallarea.graph import AreaGraph, morans_i

GRAPH6 = AreaGraph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)])


def estimate_set(point, low=None, high=None, variance=None, df=None, name="srs"):
    point = np.asarray(point, dtype=float)
    n = point.size
    if variance is None:
        variance = np.full(n, 0.001)
    if low is None:
        low = np.where(np.isnan(point), np.nan, np.maximum(point - 0.1, 0.0))
    if high is None:
        high = np.where(np.isnan(point), np.nan, np.minimum(point + 0.1, 1.0))
    reasons = [None if np.isfinite(p) else "no sampled units" for p in point]
    return EstimateSet(name, 0.05, point, np.asarray(variance, dtype=float),
                       np.asarray(low, dtype=float), np.asarray(high, dtype=float),
                       reasons, df=None if df is None else np.asarray(df, dtype=float))


# ---------------------------------------------------------------------------
# scalar accuracy summaries


def test_perfect_estimator_scores_perfectly():
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.35])
    rep = assess(estimate_set(gold), gold, GRAPH6)
    assert rep.correlation == pytest.approx(1.0)
    assert rep.rmse == 0.0
    assert rep.coverage == 1.0
    assert rep.n_missing == 0
    assert rep.morans_i == pytest.approx(morans_i(gold, GRAPH6), abs=1e-15)
    assert rep.morans_i == pytest.approx(rep.morans_i_gold, abs=1e-15)


def test_vacuous_intervals_always_cover():
    gold = np.array([0.1, 0.9, 0.4, 0.6, 0.2, 0.8])
    point = np.full(6, 0.5)
    rep = assess(estimate_set(point, low=np.zeros(6), high=np.ones(6)), gold, GRAPH6)
    assert rep.coverage == 1.0
    assert rep.mean_ci_length == 1.0


def test_partial_coverage_counted_by_area():
    gold = np.array([0.10, 0.50, 0.90])
    graph = AreaGraph(3, [(0, 1), (1, 2)])
    est = estimate_set([0.12, 0.52, 0.50],
                       low=[0.05, 0.45, 0.45], high=[0.20, 0.60, 0.55])
    rep = assess(est, gold, graph)
    assert rep.coverage == pytest.approx(2.0 / 3.0)
    assert rep.mean_ci_length == pytest.approx((0.15 + 0.15 + 0.10) / 3.0)
    assert rep.rmse == pytest.approx(np.sqrt((0.02**2 + 0.02**2 + 0.40**2) / 3.0))


def test_missing_areas_drop_out_pairwise():
    gold = np.array([0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    point = np.array([0.25, np.nan, 0.45, 0.50, np.nan, 0.65])
    rep = assess(estimate_set(point), gold, GRAPH6)
    keep = np.isfinite(point)
    assert rep.n_missing == 2
    assert rep.rmse == pytest.approx(np.sqrt(np.mean((point[keep] - gold[keep]) ** 2)))
    sub = GRAPH6.subgraph(keep)
    assert rep.morans_i == pytest.approx(morans_i(point[keep], sub), abs=1e-15)
    # the gold side is recomputed on the same induced subgraph
    assert rep.morans_i_gold == pytest.approx(morans_i(gold[keep], sub), abs=1e-15)


def test_point_without_interval_counted_separately():
    gold = np.array([0.2, 0.4, 0.6])
    graph = AreaGraph(3, [(0, 1), (1, 2)])
    est = estimate_set([0.2, 0.4, 0.6],
                       low=[0.1, np.nan, 0.5], high=[0.3, np.nan, 0.7])
    rep = assess(est, gold, graph)
    assert rep.n_missing == 0
    assert rep.n_missing_interval == 1
    assert rep.coverage == 1.0  # over the two areas with intervals


def test_single_area_left_has_no_correlation():
    gold = np.array([0.2, 0.4, 0.6])
    graph = AreaGraph(3, [(0, 1), (1, 2)])
    rep = assess(estimate_set([np.nan, 0.5, np.nan]), gold, graph)
    assert np.isnan(rep.correlation)
    assert rep.rmse == pytest.approx(0.1)
    assert np.isnan(rep.morans_i)  # one node has no spatial structure


def test_assess_input_validation():
    gold = np.array([0.2, 0.4, 0.6])
    graph = AreaGraph(3, [(0, 1), (1, 2)])
    with pytest.raises(ValidationError):
        assess(estimate_set([np.nan, np.nan, np.nan]), gold, graph)
    with pytest.raises(ValidationError):
        assess(estimate_set([0.5, 0.5]), gold, graph)
    with pytest.raises(ValidationError):
        assess(estimate_set([0.5] * 3), np.array([0.2, 0.4, 1.4]), graph)
    with pytest.raises(ValidationError):
        assess(estimate_set([0.5] * 3), np.array([0.2, np.nan, 0.4]), graph)


# ---------------------------------------------------------------------------
# posterior-draw spatial comparison


def test_bayes_comparison_identical_draws_tie_to_zero():
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    draws = np.tile(gold, (120, 1))
    # ties are not strictly below
    assert morans_comparison_bayes(draws, gold, GRAPH6) == 0.0


def test_bayes_comparison_gold_above_all_draws():
    # smooth gradient gold: strongly positive I; alternating draws: negative I
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    draw = np.array([0.9, 0.1, 0.9, 0.1, 0.9, 0.1])
    jitter = 0.01 * np.sin(np.arange(150))[:, None] * np.ones(6)
    draws = np.clip(draw + jitter, 0.0, 1.0)
    assert morans_comparison_bayes(draws, gold, GRAPH6) == 1.0


def test_bayes_comparison_counting_oracle():
    rng = np.random.default_rng(5)
    gold = rng.uniform(0.2, 0.8, 6)
    draws = rng.uniform(0.0, 1.0, (150, 6))
    want = np.mean([morans_i(d, GRAPH6) < morans_i(gold, GRAPH6) for d in draws])
    assert morans_comparison_bayes(draws, gold, GRAPH6) == pytest.approx(want, abs=1e-15)


def test_bayes_comparison_accepts_chain_axis():
    rng = np.random.default_rng(6)
    gold = rng.uniform(0.2, 0.8, 6)
    draws = rng.uniform(0.0, 1.0, (2, 75, 6))
    flat = draws.reshape(-1, 6)
    assert morans_comparison_bayes(draws, gold, GRAPH6) == \
        morans_comparison_bayes(flat, gold, GRAPH6)


def test_bayes_comparison_needs_enough_draws():
    gold = np.full(6, 0.5)
    with pytest.raises(ValidationError):
        morans_comparison_bayes(np.random.default_rng(0).uniform(0, 1, (99, 6)), gold, GRAPH6)


def test_bayes_comparison_excludes_degenerate_draws():
    rng = np.random.default_rng(7)
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    draws = rng.uniform(0.0, 1.0, (120, 6))
    draws[:10] = 0.5  # constant vectors have no Moran's I
    with pytest.warns(UserWarning, match="degenerate"):
        p = morans_comparison_bayes(draws, gold, GRAPH6)
    want = np.mean([morans_i(d, GRAPH6) < morans_i(gold, GRAPH6) for d in draws[10:]])
    assert p == pytest.approx(want, abs=1e-15)
    with pytest.raises(DegenerateValuesError), pytest.warns(UserWarning):
        morans_comparison_bayes(np.full((120, 6), 0.3), gold, GRAPH6)


# ---------------------------------------------------------------------------
# simulated design-estimator spatial comparison


def test_freq_comparison_zero_variance_collapses():
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    zeros = np.zeros(6)
    df = np.full(6, 9.0)
    # every simulation reproduces the point vector exactly
    same = estimate_set(gold, variance=zeros, df=df)
    assert morans_comparison_freq(same, gold, GRAPH6, reps=50, seed=1) == 0.0
    rough = estimate_set([0.9, 0.1, 0.9, 0.1, 0.9, 0.1], variance=zeros, df=df)
    assert morans_comparison_freq(rough, gold, GRAPH6, reps=50, seed=1) == 1.0


def test_freq_comparison_matches_manual_simulation():
    rng0 = np.random.default_rng(8)
    gold = rng0.uniform(0.2, 0.8, 6)
    point = np.clip(gold + rng0.normal(0, 0.05, 6), 0, 1)
    variance = rng0.uniform(0.001, 0.01, 6)
    df = rng0.integers(5, 30, 6).astype(float)
    est = estimate_set(point, variance=variance, df=df)
    got = morans_comparison_freq(est, gold, GRAPH6, reps=400, seed=42)

    sim_rng = rng_mod.stream(42, "assess/freq_moran")
    sims = point + np.sqrt(variance) * sim_rng.standard_t(df, size=(400, 6))
    i_gold = morans_i(gold, GRAPH6)
    want = np.mean([morans_i(s, GRAPH6) < i_gold for s in sims])
    assert got == pytest.approx(want, abs=1e-15)


def test_freq_comparison_is_bitwise_deterministic():
    rng = np.random.default_rng(9)
    gold = rng.uniform(0.2, 0.8, 6)
    est = estimate_set(np.clip(gold + 0.02, 0, 1),
                       variance=np.full(6, 0.005), df=np.full(6, 12.0))
    a = morans_comparison_freq(est, gold, GRAPH6, reps=300, seed=7)
    b = morans_comparison_freq(est, gold, GRAPH6, reps=300, seed=7)
    c = morans_comparison_freq(est, gold, GRAPH6, reps=300, seed=8)
    assert a == b
    assert 0.0 <= c <= 1.0


def test_freq_comparison_single_rep_allowed():
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    est = estimate_set(gold, variance=np.full(6, 0.01), df=np.full(6, 9.0))
    p = morans_comparison_freq(est, gold, GRAPH6, reps=1, seed=3)
    assert p in (0.0, 1.0)
    with pytest.raises(ValidationError):
        morans_comparison_freq(est, gold, GRAPH6, reps=0)


def test_freq_comparison_excludes_unusable_areas():
    gold = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    point = gold.copy()
    variance = np.full(6, 0.004)
    df = np.array([0.0, 9.0, 9.0, 9.0, 9.0, 9.0])  # single-unit area: df 0
    est = estimate_set(point, variance=variance, df=df)
    with pytest.warns(UserWarning, match="excluded"):
        got = morans_comparison_freq(est, gold, GRAPH6, reps=200, seed=11)

    ok = df >= 1.0
    sub = GRAPH6.subgraph(ok)
    sim_rng = rng_mod.stream(11, "assess/freq_moran")
    sims = point[ok] + np.sqrt(variance[ok]) * sim_rng.standard_t(df[ok], size=(200, 5))
    i_gold = morans_i(gold[ok], sub)
    want = np.mean([morans_i(s, sub) < i_gold for s in sims])
    assert got == pytest.approx(want, abs=1e-15)


def test_freq_comparison_clip_replicates_manually():
    rng = np.random.default_rng(13)
    gold = rng.uniform(0.3, 0.7, 6)
    est = estimate_set(np.full(6, 0.5), variance=np.full(6, 0.2), df=np.full(6, 3.0))
    got = morans_comparison_freq(est, gold, GRAPH6, reps=150, seed=21, clip=True)

    sim_rng = rng_mod.stream(21, "assess/freq_moran")
    sims = 0.5 + np.sqrt(0.2) * sim_rng.standard_t(3.0, size=(150, 6))
    np.clip(sims, 0.0, 1.0, out=sims)
    i_gold = morans_i(gold, GRAPH6)
    vals = []
    for s in sims:
        if np.ptp(s) == 0.0:
            continue  # fully clipped rows are degenerate and excluded
        vals.append(morans_i(s, GRAPH6) < i_gold)
    assert got == pytest.approx(np.mean(vals), abs=1e-15)


def test_freq_comparison_requires_degrees_of_freedom():
    gold = np.full(6, 0.5)
    est = estimate_set(gold, variance=np.full(6, 0.01))
    with pytest.raises(ValidationError, match="degrees of freedom"):
        morans_comparison_freq(est, gold, GRAPH6)


def test_freq_comparison_needs_connected_usable_areas():
    graph = AreaGraph(4, [(0, 1), (2, 3)])
    gold = np.array([0.2, 0.4, 0.5, 0.6])
    df = np.array([9.0, 0.0, 9.0, 0.0])
    est = estimate_set(gold, variance=np.full(4, 0.01), df=df)
    with pytest.raises(ValidationError), pytest.warns(UserWarning):
        morans_comparison_freq(est, gold, graph)  # areas 0 and 2 share no edge


# ---------------------------------------------------------------------------
# report files


def make_reports():
    return [
        AssessmentReport("srs", 6, 1, 0.82, 0.05, 0.2, 0.93, 0.11, 0.18,
                         p_below_gold=0.97, n_missing_interval=1),
        AssessmentReport("spatial", 6, 0, 0.91, 0.03, 0.15, 0.95, 0.17, 0.18,
                         p_below_gold=0.61),
        AssessmentReport("stratified", 6, 2, float("nan"), 0.04, float("nan"),
                         float("nan"), 0.12, 0.18),
    ]


def test_report_csv_layout(tmp_path):
    path = tmp_path / "report.csv"
    write_report_csv(path, make_reports(), gold_i=0.18, config_hash="feedc0ffee12")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=feedc0ffee12"
    rows = list(csv.reader(lines[1:]))
    assert rows[0][:3] == ["estimator", "n_areas", "n_missing"]
    assert rows[1][0] == "gold" and float(rows[1][7]) == 0.18
    assert [r[0] for r in rows[2:]] == ["srs", "spatial", "stratified"]
    srs = dict(zip(rows[0], rows[2]))
    assert float(srs["p_below_gold"]) == 0.97
    assert float(srs["rmse"]) == 0.05
    strat = dict(zip(rows[0], rows[4]))
    assert strat["correlation"] == "" and strat["p_below_gold"] == ""


def test_report_json_layout(tmp_path):
    path = tmp_path / "report.json"
    write_report_json(path, make_reports(), gold_i=0.18, config_hash="feedc0ffee12")
    doc = json.loads(path.read_text())
    assert doc["config_hash"] == "feedc0ffee12"
    assert doc["gold"]["morans_i"] == 0.18
    assert doc["estimators"]["spatial"]["p_below_gold"] == 0.61
    assert doc["estimators"]["stratified"]["correlation"] is None  # NaN maps to null
    assert doc["estimators"]["srs"]["n_missing_interval"] == 1
    assert doc["estimators"]["srs"]["morans_i_gold_subset"] == 0.18
