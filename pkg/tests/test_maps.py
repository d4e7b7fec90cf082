import json

import numpy as np
import pytest

from smallarea.errors import ValidationError
from smallarea.maps import (
    MISSING_COLOR,
    N_BINS,
    PALETTE,
    bin_colors,
    choropleth,
    read_choropleth_fills,
    read_config_hash,
    shared_bins,
)
from smallarea.synth import lattice_geojson


def unit_squares(n, cols=3):
    polys = []
    for i in range(n):
        r, c = divmod(i, cols)
        polys.append([[(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)]])
    return polys


def test_shared_bins_span_all_inputs():
    edges = shared_bins(np.array([0.2, 0.5]), np.array([0.1, 0.4, np.nan]))
    assert edges.shape == (N_BINS + 1,)
    assert edges[0] == 0.1 and edges[-1] == 0.5
    widths = np.diff(edges)
    assert np.allclose(widths, widths[0])


def test_shared_bins_degenerate_range_widens():
    edges = shared_bins(np.array([0.3, 0.3, 0.3]))
    assert edges[0] == pytest.approx(-0.2)
    assert edges[-1] == pytest.approx(0.8)


def test_shared_bins_need_finite_values():
    with pytest.raises(ValidationError):
        shared_bins(np.array([np.nan, np.inf]))


def test_bin_colors_assignment():
    edges = np.linspace(0.0, 0.7, N_BINS + 1)  # width 0.1 each
    values = np.array([0.0, 0.05, 0.15, 0.65, 0.7, np.nan])
    colors = bin_colors(values, edges)
    assert colors[0] == PALETTE[0]
    assert colors[1] == PALETTE[0]
    assert colors[2] == PALETTE[1]
    assert colors[3] == PALETTE[6]
    assert colors[4] == PALETTE[6]  # top edge closes the last bin
    assert colors[5] == MISSING_COLOR


def test_bin_colors_clip_out_of_range():
    edges = np.linspace(0.2, 0.9, N_BINS + 1)
    colors = bin_colors(np.array([0.0, 1.0]), edges)
    assert colors == [PALETTE[0], PALETTE[6]]


def test_palette_is_dark_to_light_viridis():
    assert len(PALETTE) == N_BINS
    assert len(set(PALETTE)) == N_BINS
    assert PALETTE[0] == "#440154"  # viridis endpoints
    assert PALETTE[-1] == "#fde725"


def test_choropleth_roundtrips_fills(tmp_path):
    values = np.array([0.05, 0.15, 0.35, np.nan, 0.55, 0.65])
    edges = np.linspace(0.0, 0.7, N_BINS + 1)
    out = tmp_path / "map.svg"
    choropleth(out, unit_squares(6), values, "share of interest", edges,
               config_hash="0123456789ab")
    fills = read_choropleth_fills(out)
    assert set(fills) == set(range(6))
    want = bin_colors(values, edges)
    assert [fills[i] for i in range(6)] == want
    assert fills[3] == MISSING_COLOR
    assert read_config_hash(out) == "0123456789ab"
    text = out.read_text()
    assert text.index("config_hash") < text.index("<svg")


def test_choropleth_without_hash_has_no_stamp(tmp_path):
    out = tmp_path / "map.svg"
    choropleth(out, unit_squares(4, cols=2), np.full(4, 0.4),
               "t", np.linspace(0, 1, N_BINS + 1))
    assert read_config_hash(out) is None


def test_choropleth_validates_lengths(tmp_path):
    with pytest.raises(ValidationError):
        choropleth(tmp_path / "m.svg", unit_squares(3), np.zeros(4),
                   "t", np.linspace(0, 1, N_BINS + 1))
    with pytest.raises(ValidationError):
        choropleth(tmp_path / "m.svg", unit_squares(3), np.zeros(3),
                   "t", np.linspace(0, 1, 5))


def test_choropleth_renders_geojson_lattice(tmp_path):
    # the simulate pipeline feeds polygons loaded back from GeoJSON
    from smallarea.graph import load_geojson_polygons

    geo = tmp_path / "map.geojson"
    geo.write_text(json.dumps(lattice_geojson([f"A{i}" for i in range(6)], cols=3)))
    names, polys = load_geojson_polygons(geo)
    assert len(polys) == 6
    out = tmp_path / "map.svg"
    values = np.linspace(0.1, 0.6, 6)
    choropleth(out, polys, values, "gold", shared_bins(values))
    fills = read_choropleth_fills(out)
    assert [fills[i] for i in range(6)] == bin_colors(values, shared_bins(values))


def test_multiring_area_is_single_gid(tmp_path):
    # an area made of two disjoint rings still reads back as one element
    polys = [
        [[(0, 0), (1, 0), (1, 1), (0, 1)], [(2, 0), (3, 0), (3, 1), (2, 1)]],
        [[(0, 2), (1, 2), (1, 3), (0, 3)]],
    ]
    out = tmp_path / "map.svg"
    choropleth(out, polys, np.array([0.2, 0.8]), "t", np.linspace(0, 1, N_BINS + 1))
    fills = read_choropleth_fills(out)
    assert set(fills) == {0, 1}
    assert fills[0] != fills[1]
