import json

import numpy as np
import pytest

from smallarea.errors import DegenerateValuesError, ValidationError
from smallarea.graph import (
    AreaGraph,
    adjacency_from_polygons,
    build_graph,
    graph_from_edge_csv,
    graph_from_geojson,
    load_geojson_polygons,
    morans_i,
    morans_i_distribution,
    write_edge_csv,
)


def path_graph(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def morans_i_double_sum(values, graph):
    """Brute-force Moran's I: the textbook double sum over the weight matrix."""
    values = np.asarray(values, dtype=float)
    n = graph.n_areas
    w = np.zeros((n, n))
    for i, j in zip(graph.edge_i, graph.edge_j):
        w[i, j] = 1.0
        w[j, i] = 1.0
    z = values - values.mean()
    num = sum(w[i, j] * z[i] * z[j] for i in range(n) for j in range(n))
    return n / w.sum() * num / float(z @ z)


# ---------------------------------------------------------------------------
# graph construction


def test_degrees_and_neighbors():
    g = build_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert list(g.degrees) == [2, 2, 2, 2]
    assert g.neighbors[1] == (0, 2)
    assert g.n_edges == 4


def test_edge_validation():
    with pytest.raises(ValidationError):
        build_graph(3, [(0, 0)])  # self loop
    with pytest.raises(ValidationError):
        build_graph(3, [(0, 1), (1, 0)])  # duplicate
    with pytest.raises(ValidationError):
        build_graph(3, [(0, 3)])  # out of range
    with pytest.raises(ValidationError):
        build_graph(0, [])


def test_laplacian_matches_definition():
    g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
    lap = g.laplacian()
    expected = np.diag([1, 2, 2, 1]).astype(float)
    for i, j in [(0, 1), (1, 2), (2, 3)]:
        expected[i, j] = expected[j, i] = -1.0
    assert np.array_equal(lap, expected)


def test_laplacian_eigh_reconstructs_and_caches():
    g = path_graph(6)
    vals, vecs = g.laplacian_eigh()
    assert np.all(vals >= 0.0)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, g.laplacian(), atol=1e-12)
    vals2, vecs2 = g.laplacian_eigh()
    assert vals is vals2  # cached, not recomputed


def test_subgraph_reindexes_edges():
    g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    sub = g.subgraph(np.array([True, False, True, True, True]))
    # area 1 dropped: only 2-3 and 3-4 survive, renumbered
    assert sub.n_areas == 4
    assert set(zip(sub.edge_i, sub.edge_j)) == {(1, 2), (2, 3)}


def test_edge_csv_roundtrip(tmp_path):
    g = build_graph(5, [(0, 4), (1, 2), (2, 3)])
    path = tmp_path / "edges.csv"
    write_edge_csv(path, g, header_comment="config_hash=abc")
    again = graph_from_edge_csv(path, 5)
    assert again == g
    assert open(path).readline().startswith("#")


# ---------------------------------------------------------------------------
# geojson adjacency


def lattice_doc(rows, cols):
    feats = []
    for r in range(rows):
        for c in range(cols):
            ring = [[c, r], [c + 1, r], [c + 1, r + 1], [c, r + 1], [c, r]]
            feats.append({
                "type": "Feature",
                "properties": {"area": f"r{r}c{c}"},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
    return {"type": "FeatureCollection", "features": feats}


def test_segment_rule_gives_rook_lattice(tmp_path):
    path = tmp_path / "map.geojson"
    path.write_text(json.dumps(lattice_doc(2, 3)))
    g, names = graph_from_geojson(path, rule="segment")
    assert names == ["r0c0", "r0c1", "r0c2", "r1c0", "r1c1", "r1c2"]
    want = {(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)}
    assert set(zip(g.edge_i, g.edge_j)) == want


def test_point_rule_adds_queen_diagonals(tmp_path):
    path = tmp_path / "map.geojson"
    path.write_text(json.dumps(lattice_doc(2, 2)))
    g_seg, _ = graph_from_geojson(path, rule="segment")
    g_pt, _ = graph_from_geojson(path, rule="point")
    assert g_seg.n_edges == 4
    assert set(zip(g_pt.edge_i, g_pt.edge_j)) == {(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)}


def test_multipolygon_and_missing_name(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {},
                "geometry": {
                    "type": "MultiPolygon",
                    "coordinates": [[[[0, 0], [1, 0], [1, 1], [0, 0]]],
                                    [[[5, 5], [6, 5], [6, 6], [5, 5]]]],
                },
            },
        ],
    }
    path = tmp_path / "map.geojson"
    path.write_text(json.dumps(doc))
    names, polys = load_geojson_polygons(path)
    assert names == ["0"]  # falls back to the feature index
    assert len(polys[0]) == 2  # both parts kept as rings of one area


def test_degenerate_ring_rejected(tmp_path):
    doc = {
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "properties": {"area": "x"},
            "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 1], [0, 0]]]},
        }],
    }
    path = tmp_path / "map.geojson"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_geojson_polygons(path)


def test_polygon_adjacency_ignores_disjoint():
    polys = [
        [[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]],
        [(lambda: [(5.0, 5.0), (6.0, 5.0), (6.0, 6.0), (5.0, 6.0)])()],
    ]
    assert adjacency_from_polygons(polys, "segment") == []
    assert adjacency_from_polygons(polys, "point") == []


# ---------------------------------------------------------------------------
# Moran's I


def test_morans_i_hand_values():
    g = path_graph(3)
    # alternating extremes on a path: perfect negative autocorrelation
    assert morans_i(np.array([1.0, 0.0, 1.0]), g) == pytest.approx(-1.0)
    # a linear ramp on a 3-path: cross terms cancel exactly
    assert morans_i(np.array([1.0, 2.0, 3.0]), g) == pytest.approx(0.0, abs=1e-15)


def test_morans_i_matches_double_sum_on_random_graphs():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n = int(rng.integers(3, 13))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        keep = rng.random(len(pairs)) < 0.4
        edges = [p for p, k in zip(pairs, keep) if k]
        if not edges:
            continue
        g = build_graph(n, edges)
        x = rng.standard_normal(n)
        assert morans_i(x, g) == pytest.approx(morans_i_double_sum(x, g), abs=1e-12)


def test_morans_i_constant_is_degenerate():
    g = path_graph(4)
    with pytest.raises(DegenerateValuesError):
        morans_i(np.full(4, 0.3), g)


def test_morans_i_rejects_bad_input():
    g = path_graph(4)
    with pytest.raises(ValidationError):
        morans_i(np.array([1.0, 2.0]), g)
    with pytest.raises(ValidationError):
        morans_i(np.array([1.0, np.nan, 0.0, 2.0]), g)
    lonely = build_graph(3, [])
    with pytest.raises(ValidationError):
        morans_i(np.array([1.0, 2.0, 3.0]), lonely)


def test_morans_i_distribution_matches_rowwise():
    g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
    rng = np.random.default_rng(11)
    draws = rng.standard_normal((40, 5))
    batch = morans_i_distribution(draws, g)
    single = np.array([morans_i(row, g) for row in draws])
    assert np.allclose(batch, single, atol=1e-14)


def test_morans_i_distribution_constant_row_is_nan():
    g = path_graph(3)
    draws = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]])
    out = morans_i_distribution(draws, g)
    assert np.isfinite(out[0])
    assert np.isnan(out[1])
