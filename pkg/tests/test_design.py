import numpy as np
import pytest
from scipy import integrate, optimize, stats

from smallarea.design import (
    bayes_srs_estimate,
    combined_estimate,
    load_estimates,
    ratio_estimate,
    srs_estimate,
    stratified_estimate,
    write_estimates,
)
from smallarea.errors import ValidationError
from smallarea.frame import (
    DesignDescriptor,
    PopulationMargins,
    SurveySample,
    Variable,
    variable_with_k,
)

SRS = DesignDescriptor("srs")


def one_area_sample(n, o, variables=(), cats=None):
    return SurveySample(
        1, tuple(variables),
        np.zeros(n, dtype=int),
        np.array([1] * o + [0] * (n - o)),
        cats or {}, SRS,
    )


def sample_from_cells(n_areas, variables, cells):
    """cells: list of (area, cat_codes tuple, n, o)."""
    area, y = [], []
    cats = {v.name: [] for v in variables}
    for a, codes, n, o in cells:
        for r in range(n):
            area.append(a)
            y.append(1 if r < o else 0)
            for v, c in zip(variables, codes):
                cats[v.name].append(c)
    return SurveySample(
        n_areas, tuple(variables), np.array(area), np.array(y),
        {k: np.array(v) for k, v in cats.items()}, SRS,
    )


def quantile_by_quadrature(pdf, q, lo=0.0, hi=1.0):
    """Invert a CDF obtained by adaptive quadrature; oracle for ppf calls."""

    def cdf(x):
        val, _ = integrate.quad(pdf, lo, x, limit=200)
        return val - q

    return optimize.brentq(cdf, lo + 1e-12, hi - 1e-12, xtol=1e-12)


# ---------------------------------------------------------------------------
# SRS


def test_srs_worked_example():
    # n=10, O=3, N=100: variance 0.3*0.7/10 * (1 - 10/100) = 0.0189
    sample = one_area_sample(10, 3)
    margins = PopulationMargins(1, [100])
    est = srs_estimate(sample, margins, alpha=0.05)
    assert est.point[0] == pytest.approx(0.3)
    assert est.variance[0] == pytest.approx(0.0189)
    assert est.df[0] == 9
    half = stats.t.ppf(0.975, 9) * np.sqrt(0.0189)
    assert est.low[0] == pytest.approx(max(0.0, 0.3 - half))
    assert est.high[0] == pytest.approx(0.3 + half)


def test_t_quantile_against_quadrature():
    # the interval half-width rests on the t quantile; check the library
    # quantile against direct density integration
    df = 9
    got = stats.t.ppf(0.975, df)
    want = quantile_by_quadrature(lambda x: stats.t.pdf(x, df), 0.975, -50.0, 50.0)
    assert got == pytest.approx(want, abs=1e-6)


def test_srs_census_has_zero_variance():
    sample = one_area_sample(20, 7)
    est = srs_estimate(sample, PopulationMargins(1, [20]))
    assert est.variance[0] == 0.0
    assert est.low[0] == est.high[0] == est.point[0]


def test_srs_missing_and_single_unit():
    sample = SurveySample(3, (), np.array([0, 0, 2]), np.array([1, 0, 1]), {}, SRS)
    est = srs_estimate(sample, PopulationMargins(3, [10, 10, 10]))
    assert est.point[0] == pytest.approx(0.5)
    assert np.isnan(est.point[1])
    assert "no sampled units" in est.missing_reason[1]
    # one record: point survives, variance does not
    assert est.point[2] == pytest.approx(1.0)
    assert np.isnan(est.variance[2])
    assert "single" in est.missing_reason[2]


# ---------------------------------------------------------------------------
# conjugate Bayes SRS


def test_bayes_srs_posterior_parameters():
    est = bayes_srs_estimate(one_area_sample(10, 3))
    assert est.beta_a[0] == 4 and est.beta_b[0] == 8
    assert est.point[0] == pytest.approx(0.3)  # posterior mode = O/n
    assert est.post_mean[0] == pytest.approx(4 / 12)
    a, b = 4.0, 8.0
    assert est.variance[0] == pytest.approx(a * b / ((a + b) ** 2 * (a + b + 1)))


def test_bayes_srs_beta22_quantiles_match_quadrature():
    # n=2, O=1 gives Beta(2,2); quadrature inversion to 1e-6
    est = bayes_srs_estimate(one_area_sample(2, 1), alpha=0.05)
    for q, got in ((0.025, est.low[0]), (0.975, est.high[0])):
        want = quantile_by_quadrature(lambda x: 6.0 * x * (1.0 - x), q)
        assert got == pytest.approx(want, abs=1e-6)


def test_bayes_srs_empty_area_stays_estimable():
    sample = SurveySample(2, (), np.array([0]), np.array([1]), {}, SRS)
    est = bayes_srs_estimate(sample)
    assert est.missing_reason[1] is None
    assert est.point[1] == pytest.approx(0.5)  # Beta(1,1) mean
    assert est.low[1] == pytest.approx(0.025)
    assert est.high[1] == pytest.approx(0.975)


# ---------------------------------------------------------------------------
# stratified / ratio


AGE2 = Variable("age", ("young", "old"))


def strat_inputs():
    # one area, strata pops (60, 40); sample 4+4 with successes 2 and 1
    sample = sample_from_cells(1, (AGE2,), [(0, (0,), 4, 2), (0, (1,), 4, 1)])
    margins = PopulationMargins(1, [100], {"age": np.array([[60, 40]])})
    return sample, margins


def test_stratified_worked_example():
    sample, margins = strat_inputs()
    est = stratified_estimate(sample, margins, "age", alpha=0.05)
    assert est.point[0] == pytest.approx(0.6 * 0.5 + 0.4 * 0.25)  # 0.4
    w = np.array([60.0, 40.0])
    p = np.array([0.5, 0.25])
    n = np.array([4.0, 4.0])
    var = np.sum(w**2 * p * (1 - p) / n * (1 - n / w)) / 100.0**2
    assert est.variance[0] == pytest.approx(var)
    assert est.df[0] == 8 - 2  # sum n_k minus number of populated strata


def test_ratio_worked_example():
    # pops (30, 70), sample proportions (0.2, 0.6) -> 0.48
    sample = sample_from_cells(1, (AGE2,), [(0, (0,), 5, 1), (0, (1,), 5, 3)])
    margins = PopulationMargins(1, [100], {"age": np.array([[30, 70]])})
    est = ratio_estimate(sample, margins, "age", alpha=0.05)
    assert est.point[0] == pytest.approx(0.48)


def test_stratified_missing_cell_surfaced():
    # stratum old is populated but unsampled in area 0
    sample = sample_from_cells(2, (AGE2,), [(0, (0,), 4, 2),
                                            (1, (0,), 3, 1), (1, (1,), 3, 2)])
    margins = PopulationMargins(2, [100, 100],
                                {"age": np.array([[60, 40], [50, 50]])})
    est = stratified_estimate(sample, margins, "age")
    assert np.isnan(est.point[0])
    assert "unsampled" in est.missing_reason[0]
    assert "age=old" in est.missing_reason[0]
    assert est.missing_cells[0] == 1
    assert est.point[1] == pytest.approx(0.5 * (1 / 3) + 0.5 * (2 / 3))


def test_stratified_singleton_cell_drops_variance_only():
    sample = sample_from_cells(1, (AGE2,), [(0, (0,), 4, 2), (0, (1,), 1, 1)])
    margins = PopulationMargins(1, [100], {"age": np.array([[60, 40]])})
    est = stratified_estimate(sample, margins, "age")
    assert est.point[0] == pytest.approx(0.6 * 0.5 + 0.4 * 1.0)
    assert np.isnan(est.variance[0])
    assert "single-unit" in est.missing_reason[0]


def test_unpopulated_stratum_is_ignored():
    # register has zero old people: sampling none of them is fine
    sample = sample_from_cells(1, (AGE2,), [(0, (0,), 4, 2)])
    margins = PopulationMargins(1, [100], {"age": np.array([[100, 0]])})
    est = stratified_estimate(sample, margins, "age")
    assert est.point[0] == pytest.approx(0.5)
    assert est.df[0] == 4 - 1


# ---------------------------------------------------------------------------
# combined


SEX2 = Variable("sex", ("f", "m"))


def combined_inputs():
    cells = [
        (0, (0, 0), 10, 1),  # p = 0.1
        (0, (0, 1), 10, 2),  # p = 0.2
        (0, (1, 0), 10, 5),  # p = 0.5
        (0, (1, 1), 10, 9),  # p = 0.9
    ]
    sample = sample_from_cells(1, (AGE2, SEX2), cells)
    margins = PopulationMargins(
        1, [100],
        {"age": np.array([[30, 70]]), "sex": np.array([[40, 60]])},
    )
    crosstab = np.array([[[10, 20], [30, 40]]])
    return sample, margins.with_crosstab("age", "sex", crosstab)


def test_combined_crosstab_hand_value():
    sample, margins = combined_inputs()
    est = combined_estimate(sample, margins, "age", "sex", mode="crosstab")
    want = (10 * 0.1 + 20 * 0.2 + 30 * 0.5 + 40 * 0.9) / 100
    assert est.point[0] == pytest.approx(want)


def test_combined_independence_hand_value():
    sample, margins = combined_inputs()
    est = combined_estimate(sample, margins, "age", "sex", mode="independence")
    # weights n^age * n^sex / N: [[12, 18], [28, 42]]
    want = (12 * 0.1 + 18 * 0.2 + 28 * 0.5 + 42 * 0.9) / 100
    assert est.point[0] == pytest.approx(want)
    other = combined_estimate(sample, margins, "age", "sex", mode="crosstab")
    assert est.point[0] != other.point[0]


def test_combined_accepts_transposed_crosstab():
    sample, margins = combined_inputs()
    flipped = PopulationMargins(1, [100], dict(margins.tables)).with_crosstab(
        "sex", "age", np.swapaxes(margins.crosstab.table, 1, 2)
    )
    a = combined_estimate(sample, margins, "age", "sex", mode="crosstab")
    b = combined_estimate(sample, flipped, "age", "sex", mode="crosstab")
    assert a.point[0] == b.point[0]


def test_combined_without_crosstab_requires_independence():
    sample, margins = combined_inputs()
    bare = PopulationMargins(1, [100], dict(margins.tables))
    with pytest.raises(ValidationError):
        combined_estimate(sample, bare, "age", "sex", mode="crosstab")
    est = combined_estimate(sample, bare, "age", "sex", mode="independence")
    assert np.isfinite(est.point[0])


def test_reduction_identities_collapse_to_srs():
    # a second variable with a single level adds no information: the
    # combined estimator must collapse through ratio/stratified to SRS
    unit = variable_with_k("unit", 1)
    cells = [(0, (0, 0), 6, 2), (0, (1, 0), 4, 3)]
    sample = sample_from_cells(1, (AGE2, unit), cells)
    margins = PopulationMargins(
        1, [80], {"age": np.array([[50, 30]]), "unit": np.array([[80]])}
    )
    margins = margins.with_crosstab("age", "unit", np.array([[[50], [30]]]))
    combined = combined_estimate(sample, margins, "age", "unit")
    ratio = ratio_estimate(sample, margins, "age")
    strat = stratified_estimate(sample, margins, "age")
    assert combined.point[0] == pytest.approx(ratio.point[0], abs=1e-15)
    assert ratio.point[0] == pytest.approx(strat.point[0], abs=1e-15)
    # and a single-level stratum reduces all the way to the plain mean
    only = variable_with_k("all", 1)
    sample1 = sample_from_cells(1, (only,), [(0, (0,), 10, 3)])
    margins1 = PopulationMargins(1, [100], {"all": np.array([[100]])})
    srs = srs_estimate(sample1, margins1)
    strat1 = stratified_estimate(sample1, margins1, "all")
    assert strat1.point[0] == pytest.approx(srs.point[0], abs=1e-15)
    assert strat1.variance[0] == pytest.approx(srs.variance[0], abs=1e-15)


def test_estimates_roundtrip(tmp_path):
    sample, margins = strat_inputs()
    est = stratified_estimate(sample, margins, "age")
    path = tmp_path / "estimates.csv"
    write_estimates(path, est, ["area0"], config_hash="cafe")
    sets = load_estimates(path, ["area0"])
    again = sets["stratified"]
    assert again.point[0] == est.point[0]
    assert again.low[0] == est.low[0]
    assert open(path).readline().startswith("# config_hash=cafe")


def test_estimate_set_rejects_bad_interval():
    from smallarea.design import EstimateSet

    with pytest.raises(ValidationError):
        EstimateSet("x", 0.05, np.array([0.5]), np.array([0.1]),
                    np.array([0.6]), np.array([0.7]), [None])
