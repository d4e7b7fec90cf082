"""Survey sample and population-frame containers with file loaders.

File formats (all CSV files may carry leading ``#`` comment lines, which
loaders skip):

* area list: ``area`` column, order defines area indices
* sample: ``area,y,<var>,...`` one row per respondent
* margins: ``area,variable,category,count``; the reserved variable name
  ``total`` carries the per-area population size ``N_i``
* crosstab: ``area,cat1,cat2,count`` joint counts for one variable pair
* gold: ``area,pi`` true per-area proportions
* schema: JSON declaring variables (name + levels) and the sampling design

Category cells absent from the margins file count as zero, but every
area must have a ``total`` row and every declared variable must sum to
it exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Variable:
    """A categorical auxiliary variable with ordered levels."""

    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        if not self.name or self.name == "total":
            raise ValidationError(f"variable name {self.name!r} is reserved or empty")
        if len(self.levels) < 1:
            raise ValidationError(f"variable {self.name!r} needs >= 1 level")
        if len(set(self.levels)) != len(self.levels):
            raise ValidationError(f"variable {self.name!r} has duplicate levels")

    @property
    def k(self) -> int:
        return len(self.levels)

    def code_of(self, token: str) -> int:
        """Map a file token (level label, or integer code) to its code."""
        if token in self.levels:
            return self.levels.index(token)
        try:
            code = int(token)
        except ValueError:
            raise ValidationError(
                f"variable {self.name!r}: unknown level {token!r}"
            ) from None
        if not 0 <= code < self.k:
            raise ValidationError(f"variable {self.name!r}: code {code} out of range")
        return code


def variable_with_k(name: str, k: int) -> Variable:
    """Variable with anonymous levels ``'0'..'k-1'``."""
    return Variable(name, tuple(str(j) for j in range(k)))


@dataclass(frozen=True)
class DesignDescriptor:
    """How the sample was drawn.

    ``kind`` is ``'srs'`` or ``'stratified'``.  Stratified designs name
    the stratum variable and the frame the allocation was applied to:
    ``divisions`` is None for a single global frame, else a per-area
    tuple of division ids grouping areas into coarser sampling units.
    """

    kind: str
    stratum: str | None = None
    divisions: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("srs", "stratified"):
            raise ValidationError(f"design kind must be 'srs' or 'stratified', got {self.kind!r}")
        if self.kind == "stratified" and not self.stratum:
            raise ValidationError("stratified design requires a stratum variable")
        if self.kind == "srs" and self.stratum is not None:
            raise ValidationError("srs design takes no stratum variable")


@dataclass(frozen=True)
class SurveyRecord:
    """One respondent: area index, binary outcome, category codes."""

    area: int
    y: int
    cats: dict[str, int]


@dataclass
class SurveySample:
    """Individual-level sample with outcome and auxiliary categories.

    Arrays are aligned: ``area[r]``, ``y[r]`` and ``cats[name][r]``
    describe respondent ``r``.
    """

    n_areas: int
    variables: tuple[Variable, ...]
    area: np.ndarray
    y: np.ndarray
    cats: dict[str, np.ndarray]
    design: DesignDescriptor

    def __post_init__(self):
        self.area = np.asarray(self.area, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValidationError("sample: duplicate variable names")
        if self.area.ndim != 1 or self.y.shape != self.area.shape:
            raise ValidationError("sample: area and y must be 1-d and aligned")
        if self.area.size and (self.area.min() < 0 or self.area.max() >= self.n_areas):
            raise ValidationError("sample: area index out of range")
        if not np.isin(self.y, (0, 1)).all():
            raise ValidationError("sample: y must be 0/1")
        if set(self.cats) != set(names):
            raise ValidationError("sample: category arrays do not match declared variables")
        for v in self.variables:
            col = np.asarray(self.cats[v.name], dtype=np.int64)
            if col.shape != self.area.shape:
                raise ValidationError(f"sample: column {v.name!r} misaligned")
            if col.size and (col.min() < 0 or col.max() >= v.k):
                raise ValidationError(f"sample: column {v.name!r} has out-of-range codes")
            self.cats[v.name] = col
        if self.design.kind == "stratified":
            if self.design.stratum not in names:
                raise ValidationError(
                    f"sample: stratum {self.design.stratum!r} is not a sample variable"
                )
            if self.design.divisions is not None and len(self.design.divisions) != self.n_areas:
                raise ValidationError("sample: design divisions length must equal n_areas")

    @property
    def n_records(self) -> int:
        return int(self.area.size)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ValidationError(f"sample: no variable named {name!r}")

    def records(self) -> Iterator[SurveyRecord]:
        for r in range(self.n_records):
            yield SurveyRecord(
                int(self.area[r]),
                int(self.y[r]),
                {v.name: int(self.cats[v.name][r]) for v in self.variables},
            )

    @classmethod
    def from_records(
        cls,
        records: Sequence[SurveyRecord],
        n_areas: int,
        variables: Sequence[Variable],
        design: DesignDescriptor,
    ) -> "SurveySample":
        variables = tuple(variables)
        area = np.array([r.area for r in records], dtype=np.int64)
        y = np.array([r.y for r in records], dtype=np.int64)
        cats = {
            v.name: np.array([r.cats[v.name] for r in records], dtype=np.int64)
            for v in variables
        }
        return cls(n_areas, variables, area, y, cats, design)


@dataclass(frozen=True)
class CellCounts:
    """Sample tallies ``n`` and successes ``o`` per area x category cell.

    ``n`` and ``o`` have shape ``(n_areas, k_1, ..., k_m)`` for the
    ``m`` tabulated variables (plain per-area totals when ``m = 0``).
    """

    variables: tuple[str, ...]
    n: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        if self.n.shape != self.o.shape:
            raise ValidationError("cell counts: n and o shapes differ")
        if np.any(self.o > self.n) or np.any(self.o < 0):
            raise ValidationError("cell counts: need 0 <= o <= n")


def cell_counts(sample: SurveySample, variables: Sequence[str] = ()) -> CellCounts:
    """Tabulate sample size and successes over area x variable cells."""
    variables = tuple(variables)
    dims = [sample.n_areas] + [sample.variable(v).k for v in variables]
    if variables:
        flat = np.ravel_multi_index(
            [sample.area] + [sample.cats[v] for v in variables], dims
        )
    else:
        flat = sample.area
    size = int(np.prod(dims))
    n = np.bincount(flat, minlength=size).reshape(dims)
    o = np.bincount(flat, weights=sample.y.astype(float), minlength=size)
    o = np.rint(o).astype(np.int64).reshape(dims)
    return CellCounts(variables, n.astype(np.int64), o)


@dataclass(frozen=True)
class CrossTab:
    """Joint population counts for one ordered variable pair."""

    var1: str
    var2: str
    table: np.ndarray  # (n_areas, k1, k2) non-negative ints


@dataclass
class PopulationMargins:
    """Register knowledge of each area: totals and category counts.

    ``totals[i]`` is the population size ``N_i``; ``tables[name][i, k]``
    the count with category ``k`` of that variable.  ``crosstab``
    optionally stores one joint table; when absent, two-variable
    weights fall back to an independence product.
    """

    n_areas: int
    totals: np.ndarray
    tables: dict[str, np.ndarray] = field(default_factory=dict)
    crosstab: CrossTab | None = None

    def __post_init__(self):
        self.totals = np.asarray(self.totals, dtype=np.int64)
        if self.totals.shape != (self.n_areas,):
            raise ValidationError("margins: totals must have one entry per area")
        if np.any(self.totals < 0):
            raise ValidationError("margins: negative area total")
        for name, tab in self.tables.items():
            tab = np.asarray(tab, dtype=np.int64)
            if tab.ndim != 2 or tab.shape[0] != self.n_areas:
                raise ValidationError(f"margins: table {name!r} has wrong shape")
            if np.any(tab < 0):
                raise ValidationError(f"margins: table {name!r} has negative counts")
            if np.any(tab.sum(axis=1) != self.totals):
                raise ValidationError(
                    f"margins: table {name!r} does not sum to the area totals"
                )
            self.tables[name] = tab
        if self.crosstab is not None:
            tab = np.asarray(self.crosstab.table, dtype=np.int64)
            if tab.ndim != 3 or tab.shape[0] != self.n_areas:
                raise ValidationError("margins: crosstab has wrong shape")
            if np.any(tab < 0):
                raise ValidationError("margins: crosstab has negative counts")
            if np.any(tab.sum(axis=(1, 2)) != self.totals):
                raise ValidationError("margins: crosstab does not sum to the area totals")
            self.crosstab = CrossTab(self.crosstab.var1, self.crosstab.var2, tab)

    def table_for(self, name: str) -> np.ndarray:
        if name not in self.tables:
            raise ValidationError(f"margins: no table for variable {name!r}")
        return self.tables[name]

    def with_crosstab(self, var1: str, var2: str, table: np.ndarray) -> "PopulationMargins":
        return PopulationMargins(
            self.n_areas, self.totals, dict(self.tables), CrossTab(var1, var2, table)
        )


# ---------------------------------------------------------------------------
# file IO


def _data_rows(path) -> Iterator[list[str]]:
    with open(path, newline="") as fh:
        for row in csv.reader(line for line in fh if not line.lstrip().startswith("#")):
            if row:
                yield row


def load_areas(path) -> list[str]:
    """Area names in index order from a one-column ``area`` CSV."""
    rows = _data_rows(path)
    header = next(rows, None)
    if header is None or header[0].strip() != "area":
        raise ValidationError(f"{path}: expected header 'area'")
    names = [row[0].strip() for row in rows]
    if not names:
        raise ValidationError(f"{path}: no areas")
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate area names")
    return names


def load_schema(path) -> tuple[tuple[Variable, ...], DesignDescriptor, tuple[str, str] | None]:
    """Variables, design and the stored crosstab pair from a schema JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    variables = []
    for spec in doc.get("variables", []):
        name = spec.get("name")
        if "levels" in spec:
            levels = tuple(str(s) for s in spec["levels"])
        elif "k" in spec:
            levels = tuple(str(j) for j in range(int(spec["k"])))
        else:
            raise ValidationError(f"schema: variable {name!r} needs 'levels' or 'k'")
        variables.append(Variable(str(name), levels))
    dsn = doc.get("design", {"kind": "srs"})
    divisions = dsn.get("divisions")
    design = DesignDescriptor(
        kind=str(dsn.get("kind", "srs")),
        stratum=dsn.get("stratum"),
        divisions=tuple(int(d) for d in divisions) if divisions is not None else None,
    )
    pair = doc.get("crosstab")
    if pair is not None:
        if len(pair) != 2:
            raise ValidationError("schema: crosstab must name two variables")
        pair = (str(pair[0]), str(pair[1]))
    return tuple(variables), design, pair


def write_schema(path, variables: Sequence[Variable], design: DesignDescriptor,
                 config_hash: str | None = None,
                 crosstab: tuple[str, str] | None = None) -> None:
    doc: dict = {
        "variables": [{"name": v.name, "levels": list(v.levels)} for v in variables],
        "design": {"kind": design.kind},
    }
    if design.stratum is not None:
        doc["design"]["stratum"] = design.stratum
    if design.divisions is not None:
        doc["design"]["divisions"] = list(design.divisions)
    if crosstab is not None:
        doc["crosstab"] = list(crosstab)
    if config_hash:
        doc["config_hash"] = config_hash
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def area_index(names: Sequence[str]) -> dict[str, int]:
    return {name: i for i, name in enumerate(names)}


def load_sample(path, areas: Sequence[str], variables: Sequence[Variable],
                design: DesignDescriptor) -> SurveySample:
    """Read a respondent CSV ``area,y,<var>,...`` against the area list."""
    variables = tuple(variables)
    rows = _data_rows(path)
    header = next(rows, None)
    expected = ["area", "y"] + [v.name for v in variables]
    if header is None or [h.strip() for h in header] != expected:
        raise ValidationError(f"{path}: expected header {','.join(expected)!r}")
    idx = area_index(areas)
    area_col, y_col = [], []
    cat_cols: list[list[int]] = [[] for _ in variables]
    for lineno, row in enumerate(_pad(rows, len(expected), path), start=2):
        name = row[0].strip()
        if name not in idx:
            raise ValidationError(f"{path}:{lineno}: unknown area {name!r}")
        area_col.append(idx[name])
        try:
            y = int(row[1])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad outcome {row[1]!r}") from None
        y_col.append(y)
        for j, v in enumerate(variables):
            cat_cols[j].append(v.code_of(row[2 + j].strip()))
    cats = {
        v.name: np.asarray(col, dtype=np.int64)
        for v, col in zip(variables, cat_cols)
    }
    return SurveySample(
        len(areas), variables,
        np.asarray(area_col, dtype=np.int64), np.asarray(y_col, dtype=np.int64),
        cats, design,
    )


def write_sample(path, sample: SurveySample, areas: Sequence[str],
                 config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        names = [v.name for v in sample.variables]
        fh.write(",".join(["area", "y"] + names) + "\n")
        for r in range(sample.n_records):
            cells = [areas[sample.area[r]], str(int(sample.y[r]))]
            for v in sample.variables:
                cells.append(v.levels[sample.cats[v.name][r]])
            fh.write(",".join(cells) + "\n")


def load_margins(path, areas: Sequence[str], variables: Sequence[Variable]) -> PopulationMargins:
    """Read ``area,variable,category,count`` rows into population margins.

    ``total`` rows declare ``N_i`` and must exist for every area;
    missing category cells default to zero.
    """
    variables = tuple(variables)
    by_name = {v.name: v for v in variables}
    rows = _data_rows(path)
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != ["area", "variable", "category", "count"]:
        raise ValidationError(f"{path}: expected header 'area,variable,category,count'")
    idx = area_index(areas)
    totals = np.full(len(areas), -1, dtype=np.int64)
    tables = {v.name: np.zeros((len(areas), v.k), dtype=np.int64) for v in variables}
    for lineno, row in enumerate(_pad(rows, 4, path), start=2):
        name, var, cat, cnt = (c.strip() for c in row)
        if name not in idx:
            raise ValidationError(f"{path}:{lineno}: unknown area {name!r}")
        i = idx[name]
        try:
            count = int(cnt)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad count {cnt!r}") from None
        if count < 0:
            raise ValidationError(f"{path}:{lineno}: negative count")
        if var == "total":
            if totals[i] >= 0:
                raise ValidationError(f"{path}:{lineno}: duplicate total for {name!r}")
            totals[i] = count
        elif var in by_name:
            k = by_name[var].code_of(cat)
            tables[var][i, k] += count
        else:
            raise ValidationError(f"{path}:{lineno}: unknown variable {var!r}")
    if np.any(totals < 0):
        missing = [areas[i] for i in np.flatnonzero(totals < 0)]
        raise ValidationError(f"{path}: no 'total' row for areas {missing}")
    return PopulationMargins(len(areas), totals, tables)


def write_margins(path, margins: PopulationMargins, areas: Sequence[str],
                  variables: Sequence[Variable], config_hash: str | None = None) -> None:
    by_name = {v.name: v for v in variables}
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("area,variable,category,count\n")
        for i, name in enumerate(areas):
            fh.write(f"{name},total,0,{int(margins.totals[i])}\n")
        for var, tab in margins.tables.items():
            levels = by_name[var].levels
            for i, name in enumerate(areas):
                for k in range(tab.shape[1]):
                    fh.write(f"{name},{var},{levels[k]},{int(tab[i, k])}\n")


def load_crosstab(path, areas: Sequence[str], var1: Variable, var2: Variable) -> np.ndarray:
    """Read ``area,cat1,cat2,count`` joint counts for the given pair."""
    rows = _data_rows(path)
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != ["area", "cat1", "cat2", "count"]:
        raise ValidationError(f"{path}: expected header 'area,cat1,cat2,count'")
    idx = area_index(areas)
    table = np.zeros((len(areas), var1.k, var2.k), dtype=np.int64)
    for lineno, row in enumerate(_pad(rows, 4, path), start=2):
        name, c1, c2, cnt = (c.strip() for c in row)
        if name not in idx:
            raise ValidationError(f"{path}:{lineno}: unknown area {name!r}")
        try:
            count = int(cnt)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad count {cnt!r}") from None
        if count < 0:
            raise ValidationError(f"{path}:{lineno}: negative count")
        table[idx[name], var1.code_of(c1), var2.code_of(c2)] += count
    return table


def write_crosstab(path, crosstab: CrossTab, areas: Sequence[str],
                   var1: Variable, var2: Variable, config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("area,cat1,cat2,count\n")
        for i, name in enumerate(areas):
            for k1 in range(var1.k):
                for k2 in range(var2.k):
                    fh.write(
                        f"{name},{var1.levels[k1]},{var2.levels[k2]},"
                        f"{int(crosstab.table[i, k1, k2])}\n"
                    )


def load_gold(path, areas: Sequence[str]) -> np.ndarray:
    """True per-area proportions from an ``area,pi`` CSV."""
    rows = _data_rows(path)
    header = next(rows, None)
    if header is None or [h.strip() for h in header[:2]] != ["area", "pi"]:
        raise ValidationError(f"{path}: expected header 'area,pi'")
    idx = area_index(areas)
    pi = np.full(len(areas), np.nan)
    for lineno, row in enumerate(_pad(rows, 2, path), start=2):
        name = row[0].strip()
        if name not in idx:
            raise ValidationError(f"{path}:{lineno}: unknown area {name!r}")
        pi[idx[name]] = float(row[1])
    if np.any(np.isnan(pi)):
        raise ValidationError(f"{path}: missing areas")
    if np.any((pi < 0) | (pi > 1)):
        raise ValidationError(f"{path}: proportions outside [0, 1]")
    return pi


def write_gold(path, pi: np.ndarray, areas: Sequence[str],
               config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("area,pi\n")
        for i, name in enumerate(areas):
            fh.write(f"{name},{pi[i]:.17g}\n")


def write_areas(path, areas: Sequence[str], config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("area\n")
        for name in areas:
            fh.write(f"{name}\n")


def _pad(rows, width: int, path) -> Iterator[list[str]]:
    for row in rows:
        if len(row) < width:
            raise ValidationError(f"{path}: short row {row!r}")
        yield row
