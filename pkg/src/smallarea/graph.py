"""Area adjacency graphs and Moran's I spatial autocorrelation.

Areas are indexed ``0..n_areas-1`` in a fixed order shared by every
other structure in the package (samples, margins, estimate vectors).
The graph is undirected, with binary weights, no self-loops and no
duplicate edges.  Adjacency can be supplied directly, read from an
edge-list CSV, or derived from polygon geometry in a GeoJSON file.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateValuesError, ValidationError


class AreaGraph:
    """Immutable undirected adjacency between small areas.

    Parameters
    ----------
    n_areas : int
        Number of areas (nodes).  Must be positive.
    edges : iterable of (int, int)
        Unordered node pairs.  Self-loops and duplicates are rejected.

    Notes
    -----
    Derived quantities (edge arrays, degrees, Laplacian eigenpairs) are
    computed once and cached; instances are safe to share across
    threads for reading.
    """

    def __init__(self, n_areas: int, edges: Iterable[tuple[int, int]]):
        if n_areas <= 0:
            raise ValidationError("graph: n_areas must be positive")
        canon = []
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValidationError(f"graph: self-loop at node {a}")
            if not (0 <= a < n_areas and 0 <= b < n_areas):
                raise ValidationError(f"graph: edge ({a},{b}) outside 0..{n_areas - 1}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"graph: duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        canon.sort()
        self.n_areas = int(n_areas)
        self.edges = tuple(canon)
        if canon:
            arr = np.asarray(canon, dtype=np.int64)
            self.edge_i = arr[:, 0].copy()
            self.edge_j = arr[:, 1].copy()
        else:
            self.edge_i = np.empty(0, dtype=np.int64)
            self.edge_j = np.empty(0, dtype=np.int64)
        self.degrees = np.bincount(
            np.concatenate([self.edge_i, self.edge_j]), minlength=n_areas
        ).astype(np.int64)
        nbrs: list[list[int]] = [[] for _ in range(n_areas)]
        for a, b in canon:
            nbrs[a].append(b)
            nbrs[b].append(a)
        self.neighbors = tuple(tuple(v) for v in nbrs)
        self._lap_eig: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def laplacian(self) -> np.ndarray:
        """Dense combinatorial Laplacian ``D - W``."""
        lap = np.diag(self.degrees.astype(float))
        lap[self.edge_i, self.edge_j] -= 1.0
        lap[self.edge_j, self.edge_i] -= 1.0
        return lap

    def laplacian_eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and orthonormal eigenvectors of ``D - W``, cached.

        One dense symmetric eigendecomposition per graph supports exact
        log-determinants and direct sampling for every smoothing/scale
        parameter value afterwards.
        """
        if self._lap_eig is None:
            vals, vecs = np.linalg.eigh(self.laplacian())
            # eigenvalues of a Laplacian are >= 0 up to round-off
            vals = np.maximum(vals, 0.0)
            self._lap_eig = (vals, vecs)
        return self._lap_eig

    def subgraph(self, keep: Sequence[int] | np.ndarray) -> "AreaGraph":
        """Induced subgraph on ``keep`` (bool mask or index list), reindexed."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            if keep.size != self.n_areas:
                raise ValidationError("graph: boolean mask length mismatch")
            idx = np.flatnonzero(keep)
        else:
            idx = np.unique(keep.astype(np.int64))
            if idx.size and (idx[0] < 0 or idx[-1] >= self.n_areas):
                raise ValidationError("graph: subgraph index out of range")
        new_of_old = {int(o): n for n, o in enumerate(idx)}
        edges = [
            (new_of_old[a], new_of_old[b])
            for a, b in self.edges
            if a in new_of_old and b in new_of_old
        ]
        return AreaGraph(len(idx), edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AreaGraph)
            and self.n_areas == other.n_areas
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return f"AreaGraph(n_areas={self.n_areas}, n_edges={self.n_edges})"


def build_graph(n_areas: int, edges: Iterable[tuple[int, int]]) -> AreaGraph:
    """Construct an :class:`AreaGraph`, validating nodes and edges."""
    return AreaGraph(n_areas, edges)


def graph_from_edge_csv(path, n_areas: int, one_based: bool = False) -> AreaGraph:
    """Read an edge-list CSV with header ``area_a,area_b``.

    Ids are integers, zero-based unless ``one_based`` is set.
    """
    offset = 1 if one_based else 0
    edges = []
    with open(path, newline="") as fh:
        rows = csv.reader(_strip_comments(fh))
        header = next(rows, None)
        if header is None or [h.strip() for h in header[:2]] != ["area_a", "area_b"]:
            raise ValidationError(f"{path}: expected header 'area_a,area_b'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                a, b = int(row[0]) - offset, int(row[1]) - offset
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad edge row {row!r}") from exc
            edges.append((a, b))
    return AreaGraph(n_areas, edges)


def write_edge_csv(path, graph: AreaGraph, header_comment: str | None = None) -> None:
    """Write the edge list as zero-based ``area_a,area_b`` rows."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("area_a,area_b\n")
        for a, b in graph.edges:
            fh.write(f"{a},{b}\n")


def load_geojson_polygons(path) -> tuple[list[str], list[list[list[tuple[float, float]]]]]:
    """Read area names and polygon rings from a GeoJSON FeatureCollection.

    Feature order defines area indices.  Each feature must carry a
    Polygon or MultiPolygon geometry; the name is taken from the
    ``area`` (or ``name``) property, falling back to the feature index.

    Returns
    -------
    names : list of str
    polygons : list of list of ring
        Per area, every ring (exterior and interior, across multipolygon
        parts) as a list of (x, y) tuples without the closing vertex.
    """
    if isinstance(path, dict):
        doc = path
    else:
        with open(path) as fh:
            doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValidationError("geojson: expected a FeatureCollection")
    names: list[str] = []
    polygons: list[list[list[tuple[float, float]]]] = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        name = props.get("area", props.get("name", str(k)))
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            parts = [coords]
        elif gtype == "MultiPolygon":
            parts = coords
        else:
            raise ValidationError(f"geojson: feature {k}: unsupported geometry {gtype!r}")
        rings = []
        for part in parts:
            for ring in part:
                pts = [tuple(float(c) for c in xy[:2]) for xy in ring]
                if len(pts) >= 2 and pts[0] == pts[-1]:
                    pts = pts[:-1]
                if len(pts) < 3:
                    raise ValidationError(f"geojson: feature {k}: degenerate ring")
                rings.append(pts)
        names.append(str(name))
        polygons.append(rings)
    if not names:
        raise ValidationError("geojson: no features")
    return names, polygons


def adjacency_from_polygons(polygons, rule: str = "segment") -> list[tuple[int, int]]:
    """Derive binary adjacency from shared boundary geometry.

    ``rule='segment'`` links areas sharing at least one full boundary
    segment (common edge between consecutive vertices); ``rule='point'``
    links areas sharing at least one vertex.  Coordinates are matched
    exactly, which suits generated and register-style geometries.
    """
    if rule not in ("segment", "point"):
        raise ValidationError(f"adjacency rule must be 'segment' or 'point', got {rule!r}")
    keys_of_area: list[set] = []
    for rings in polygons:
        keys: set = set()
        for ring in rings:
            if rule == "point":
                keys.update(ring)
            else:
                m = len(ring)
                for t in range(m):
                    a, b = ring[t], ring[(t + 1) % m]
                    keys.add((a, b) if a <= b else (b, a))
        keys_of_area.append(keys)
    owners: dict = {}
    edges: set[tuple[int, int]] = set()
    for i, keys in enumerate(keys_of_area):
        for key in keys:
            for j in owners.get(key, ()):
                edges.add((j, i))
            owners.setdefault(key, []).append(i)
    return sorted(edges)


def graph_from_geojson(path, rule: str = "segment") -> tuple[AreaGraph, list[str]]:
    """Build the adjacency graph of a GeoJSON file; returns (graph, names)."""
    names, polygons = load_geojson_polygons(path)
    return AreaGraph(len(names), adjacency_from_polygons(polygons, rule)), names


def morans_i(values, graph: AreaGraph) -> float:
    """Moran's I of ``values`` under the graph's binary weights.

    ``I = (n / S0) * sum_ij w_ij z_i z_j / sum_i z_i**2`` with
    ``z = values - mean(values)`` and ``S0 = 2 * n_edges``.  Under an
    exchangeable null the expectation is ``-1/(n-1)``.

    Raises
    ------
    DegenerateValuesError
        If ``values`` is constant (the statistic is 0/0).
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size != graph.n_areas:
        raise ValidationError(
            f"morans_i: expected {graph.n_areas} values, got shape {x.shape}"
        )
    if np.any(~np.isfinite(x)):
        raise ValidationError("morans_i: values must be finite")
    if graph.n_edges == 0:
        raise ValidationError("morans_i: graph has no edges")
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise DegenerateValuesError("morans_i: constant values")
    cross = 2.0 * float(z[graph.edge_i] @ z[graph.edge_j])
    s0 = 2.0 * graph.n_edges
    return graph.n_areas / s0 * cross / denom


def morans_i_distribution(draws, graph: AreaGraph) -> np.ndarray:
    """Moran's I per row of ``draws`` (rows are draws, columns areas).

    Rows with constant values yield NaN entries; callers treat those as
    missing rather than aborting a whole posterior sweep.
    """
    mat = np.asarray(draws, dtype=float)
    if mat.ndim != 2 or mat.shape[1] != graph.n_areas:
        raise ValidationError(
            f"morans_i_distribution: expected (draws, {graph.n_areas}) matrix"
        )
    if graph.n_edges == 0:
        raise ValidationError("morans_i_distribution: graph has no edges")
    z = mat - mat.mean(axis=1, keepdims=True)
    denom = np.einsum("ij,ij->i", z, z)
    cross = 2.0 * np.einsum("ij,ij->i", z[:, graph.edge_i], z[:, graph.edge_j])
    s0 = 2.0 * graph.n_edges
    with np.errstate(divide="ignore", invalid="ignore"):
        out = graph.n_areas / s0 * cross / denom
    out[denom == 0.0] = np.nan
    return out


def _strip_comments(lines):
    for line in lines:
        if not line.lstrip().startswith("#"):
            yield line
