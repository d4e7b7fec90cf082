"""Choropleth rendering of per-area values to SVG files.

Every map in one run shares the same seven equal-width bins, computed
over the union of the gold proportions and all estimator points, so
colours are comparable across panels.  Each area is drawn as a single
compound path carrying ``gid="area-<index>"``; the structural test
helper reads those back out of the SVG.
"""

from __future__ import annotations

import re

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib import colormaps
from matplotlib.colors import to_hex
from matplotlib.patches import PathPatch
from matplotlib.path import Path

from .errors import ValidationError

N_BINS = 7
# viridis sampled at 7 evenly spaced points
PALETTE = tuple(to_hex(colormaps["viridis"](x)) for x in np.linspace(0.0, 1.0, N_BINS))
MISSING_COLOR = "#cccccc"


def shared_bins(*value_sets: np.ndarray) -> np.ndarray:
    """Seven equal-width bins spanning all finite values given (8 edges)."""
    pool = np.concatenate([np.asarray(v, dtype=float).ravel() for v in value_sets])
    pool = pool[np.isfinite(pool)]
    if pool.size == 0:
        raise ValidationError("shared_bins: no finite values")
    lo, hi = float(pool.min()), float(pool.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, N_BINS + 1)


def bin_colors(values: np.ndarray, edges: np.ndarray) -> list[str]:
    """Hex colour per value; non-finite values map to the missing grey."""
    values = np.asarray(values, dtype=float)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, N_BINS - 1)
    return [
        PALETTE[i] if np.isfinite(v) else MISSING_COLOR
        for v, i in zip(values, idx)
    ]


def _area_path(rings: list[list[tuple[float, float]]]) -> Path:
    verts: list[tuple[float, float]] = []
    codes: list[int] = []
    for ring in rings:
        verts.extend(ring)
        verts.append(ring[0])
        codes.append(Path.MOVETO)
        codes.extend([Path.LINETO] * (len(ring) - 1))
        codes.append(Path.CLOSEPOLY)
    return Path(verts, codes)


def choropleth(path, polygons: list[list[list[tuple[float, float]]]],
               values: np.ndarray, title: str, edges: np.ndarray,
               config_hash: str | None = None) -> None:
    """Render one per-area value vector over the area polygons as SVG.

    ``polygons[i]`` holds the rings (without closing vertex) of area i,
    in the order of the value vector.
    """
    values = np.asarray(values, dtype=float)
    if len(polygons) != values.size:
        raise ValidationError(
            f"choropleth: {len(polygons)} polygons vs {values.size} values"
        )
    edges = np.asarray(edges, dtype=float)
    if edges.shape != (N_BINS + 1,):
        raise ValidationError(f"choropleth: need {N_BINS + 1} bin edges")
    colors = bin_colors(values, edges)

    fig, ax = plt.subplots(figsize=(7.0, 6.0))
    for i, rings in enumerate(polygons):
        patch = PathPatch(
            _area_path(rings), facecolor=colors[i],
            edgecolor="#333333", linewidth=0.5,
        )
        patch.set_gid(f"area-{i}")
        ax.add_patch(patch)
    handles = [
        plt.Rectangle((0, 0), 1, 1, facecolor=PALETTE[b], edgecolor="#333333")
        for b in range(N_BINS)
    ]
    labels = [f"[{edges[b]:.3f}, {edges[b + 1]:.3f})" for b in range(N_BINS)]
    labels[-1] = labels[-1][:-1] + "]"
    if not np.all(np.isfinite(values)):
        handles.append(plt.Rectangle((0, 0), 1, 1, facecolor=MISSING_COLOR,
                                     edgecolor="#333333"))
        labels.append("missing")
    ax.legend(handles, labels, loc="center left", bbox_to_anchor=(1.0, 0.5),
              fontsize=8, frameon=False)
    ax.set_title(title)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.axis("off")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    if config_hash:
        _stamp_svg(path, config_hash)


def _stamp_svg(path, config_hash: str) -> None:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    mark = f"<!-- config_hash={config_hash} -->"
    pos = text.find("?>")
    if pos >= 0:
        text = text[:pos + 2] + "\n" + mark + text[pos + 2:]
    else:
        text = mark + "\n" + text
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


_GID_RE = re.compile(r'<g id="(area-\d+)"')
_FILL_RE = re.compile(r'(?:fill:\s*|fill=")(#[0-9a-fA-F]{6})')


def read_choropleth_fills(path) -> dict[int, str]:
    """Area index -> fill colour, parsed back out of a rendered SVG."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    fills: dict[int, str] = {}
    matches = list(_GID_RE.finditer(text))
    for pos, m in enumerate(matches):
        end = matches[pos + 1].start() if pos + 1 < len(matches) else len(text)
        fill = _FILL_RE.search(text, m.end(), end)
        if fill:
            fills[int(m.group(1).split("-")[1])] = fill.group(1).lower()
    return fills


def read_config_hash(path) -> str | None:
    """The config hash comment stamped into an SVG, if present."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read(4096)
    m = re.search(r"<!-- config_hash=([0-9a-f]+) -->", text)
    return m.group(1) if m else None
