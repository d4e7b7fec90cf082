import numpy as np
import pytest
from scipy import stats

from smallarea.car import (
    LcarParams,
    lcar_logdet_precision,
    lcar_logpdf,
    lcar_precision,
    lcar_quad_form,
    lcar_sample,
)
from smallarea.errors import ValidationError
from smallarea.graph import build_graph


def random_graph(rng, n):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = rng.random(len(pairs)) < 0.45
    edges = [p for p, k in zip(pairs, keep) if k]
    if not edges:  # retry until connected enough to be interesting
        return random_graph(rng, n)
    return build_graph(n, edges)


def dense_precision(graph, params):
    lap = graph.laplacian()
    n = graph.n_areas
    return (params.lam * lap + (1.0 - params.lam) * np.eye(n)) / params.sigma**2


def test_params_bounds():
    LcarParams(1.0, 0.0)
    LcarParams(0.5, 0.999999)
    with pytest.raises(ValidationError):
        LcarParams(0.0, 0.5)
    with pytest.raises(ValidationError):
        LcarParams(-1.0, 0.5)
    with pytest.raises(ValidationError):
        LcarParams(1.0, 1.0)  # improper at lambda = 1
    with pytest.raises(ValidationError):
        LcarParams(1.0, -0.1)


def test_precision_path_example():
    # path 0-1-2 at lambda=0.5, sigma=1: D = diag(1,2,1), so the
    # precision is [0.5(D - W) + 0.5 I], diagonal (1.0, 1.5, 1.0) and
    # -lambda = -0.5 on the two edges
    g = build_graph(3, [(0, 1), (1, 2)])
    q = lcar_precision(g, LcarParams(1.0, 0.5)).toarray()
    assert np.allclose(np.diag(q), [1.0, 1.5, 1.0])
    assert q[0, 1] == pytest.approx(-0.5)
    assert q[1, 2] == pytest.approx(-0.5)
    assert q[0, 2] == 0.0


def test_precision_matches_dense_formula():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = random_graph(rng, int(rng.integers(4, 11)))
        params = LcarParams(float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.0, 0.99)))
        q = lcar_precision(g, params).toarray()
        assert np.allclose(q, dense_precision(g, params), atol=1e-12)
        assert np.array_equal(q, q.T)  # bitwise symmetric by construction


def test_quad_form_matches_dense():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 8)
    params = LcarParams(1.3, 0.7)
    q = dense_precision(g, params)
    for _ in range(5):
        x = rng.standard_normal(8)
        assert lcar_quad_form(x, g, params) == pytest.approx(x @ q @ x, rel=1e-12)


def test_logdet_matches_slogdet():
    rng = np.random.default_rng(5)
    for _ in range(8):
        g = random_graph(rng, 7)
        params = LcarParams(float(rng.uniform(0.2, 2.5)), float(rng.uniform(0.0, 0.995)))
        sign, logdet = np.linalg.slogdet(dense_precision(g, params))
        assert sign == 1.0
        assert lcar_logdet_precision(g, params) == pytest.approx(logdet, abs=1e-9)


def test_logpdf_matches_dense_multivariate_normal():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(4, 11))
        g = random_graph(rng, n)
        params = LcarParams(float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.0, 0.99)))
        x = rng.standard_normal(n) * 2.0
        cov = np.linalg.inv(dense_precision(g, params))
        want = stats.multivariate_normal(mean=np.zeros(n), cov=cov).logpdf(x)
        assert lcar_logpdf(x, g, params) == pytest.approx(want, abs=1e-8)


def test_sample_deterministic_and_shapes():
    g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    params = LcarParams(0.8, 0.6)
    a = lcar_sample(g, params, seed=9)
    b = lcar_sample(g, params, seed=9)
    assert a.shape == (5,)
    assert np.array_equal(a, b)
    batch = lcar_sample(g, params, seed=9, size=7)
    assert batch.shape == (7, 5)
    assert not np.array_equal(batch[0], batch[1])


def test_sample_covariance_converges_to_inverse_precision():
    g = build_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    params = LcarParams(1.0, 0.5)
    draws = lcar_sample(g, params, seed=2, size=200_000)
    cov_hat = np.cov(draws.T)
    cov = np.linalg.inv(dense_precision(g, params))
    assert np.allclose(cov_hat, cov, atol=0.02)


def test_logpdf_rejects_wrong_length():
    g = build_graph(3, [(0, 1)])
    with pytest.raises(ValidationError):
        lcar_logpdf(np.zeros(4), g, LcarParams(1.0, 0.5))
