"""Synthetic gold-standard populations and sampling designs.

A population is generated area by area: a smooth spatial field from the
Leroux CAR prior, per-person auxiliary categories from configurable
(optionally area-varying or jointly dependent) distributions, and a
binary outcome from a logistic model.  The full population is kept, so
true per-area proportions are exact and any sampling design can be
replayed against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import rng as rng_mod
from .car import LcarParams, lcar_sample
from .errors import ValidationError
from .frame import (
    CrossTab,
    DesignDescriptor,
    PopulationMargins,
    SurveySample,
    Variable,
)
from .graph import AreaGraph

ETA_CLIP = 35.0  # logistic saturates far earlier; keeps exp() finite


@dataclass(frozen=True)
class VariableSpec:
    """One auxiliary variable: level distribution and outcome effects.

    ``probs`` is ``(k,)`` for a shared distribution or ``(n_areas, k)``
    for area-varying ones; rows must sum to one.  ``effects`` are
    additive log-odds per level with the first level pinned at zero.
    """

    variable: Variable
    probs: np.ndarray
    effects: np.ndarray


@dataclass(frozen=True)
class TruthConfig:
    """Everything needed to generate a population."""

    graph: AreaGraph
    areas: tuple[str, ...]
    totals: np.ndarray
    mu: float
    sigma: float
    lam: float
    variables: tuple[VariableSpec, ...] = ()
    joint_probs: np.ndarray | None = None  # (k1, k2) or (n_areas, k1, k2)

    def __post_init__(self):
        object.__setattr__(self, "totals", np.asarray(self.totals, dtype=np.int64))
        if len(self.areas) != self.graph.n_areas:
            raise ValidationError("truth: area names do not match the graph")
        if self.totals.shape != (self.graph.n_areas,) or np.any(self.totals < 1):
            raise ValidationError("truth: totals must be positive, one per area")
        if not np.isfinite(self.mu):
            raise ValidationError("truth: mu must be finite")
        LcarParams(self.sigma, self.lam)  # bounds check
        for vs in self.variables:
            probs = np.asarray(vs.probs, dtype=float)
            if probs.ndim == 1:
                probs = np.broadcast_to(probs, (self.graph.n_areas, vs.variable.k))
            if probs.shape != (self.graph.n_areas, vs.variable.k):
                raise ValidationError(f"truth: probs shape wrong for {vs.variable.name!r}")
            if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
                raise ValidationError(f"truth: probs rows must sum to 1 for {vs.variable.name!r}")
            eff = np.asarray(vs.effects, dtype=float)
            if eff.shape != (vs.variable.k,) or eff[0] != 0.0 or not np.all(np.isfinite(eff)):
                raise ValidationError(
                    f"truth: effects for {vs.variable.name!r} need shape (k,) with first level 0"
                )
        if self.joint_probs is not None:
            if len(self.variables) != 2:
                raise ValidationError("truth: joint_probs requires exactly two variables")
            k1, k2 = self.variables[0].variable.k, self.variables[1].variable.k
            jp = np.asarray(self.joint_probs, dtype=float)
            if jp.ndim == 2:
                jp = np.broadcast_to(jp, (self.graph.n_areas, k1, k2))
            if jp.shape != (self.graph.n_areas, k1, k2):
                raise ValidationError("truth: joint_probs shape mismatch")
            if np.any(jp < 0) or np.any(np.abs(jp.sum(axis=(1, 2)) - 1.0) > 1e-9):
                raise ValidationError("truth: joint_probs slices must sum to 1")


@dataclass
class SyntheticTruth:
    """A generated population with its exact per-area proportions.

    Person arrays are area-contiguous: persons of area ``i`` occupy the
    slice ``area_starts[i]:area_starts[i + 1]``.
    """

    config: TruthConfig
    psi: np.ndarray
    pi_gold: np.ndarray
    person_area: np.ndarray
    person_cats: dict[str, np.ndarray]
    person_y: np.ndarray
    margins: PopulationMargins
    area_starts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.area_starts = np.concatenate(
            [[0], np.cumsum(self.config.totals)]
        ).astype(np.int64)

    @property
    def graph(self) -> AreaGraph:
        return self.config.graph

    @property
    def areas(self) -> tuple[str, ...]:
        return self.config.areas

    @property
    def n_people(self) -> int:
        return int(self.config.totals.sum())

    def sample_variables(self) -> tuple[Variable, ...]:
        return tuple(vs.variable for vs in self.config.variables)


def _draw_categorical(rng: np.random.Generator, probs_by_area: np.ndarray,
                      person_area: np.ndarray) -> np.ndarray:
    """Vectorised per-person draw from each person's area distribution."""
    cum = np.cumsum(probs_by_area, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(person_area.size)
    return (u[:, None] > cum[person_area, :-1]).sum(axis=1).astype(np.int64)


def generate_population(config: TruthConfig, seed: int) -> SyntheticTruth:
    """Generate the full population and tabulate its margins.

    The spatial field, category draws and outcome draws each use their
    own labelled stream under ``seed``, so enlarging one part of the
    configuration never reshuffles the others.
    """
    graph = config.graph
    n_areas = graph.n_areas
    totals = config.totals
    psi = lcar_sample(
        graph, LcarParams(config.sigma, config.lam), rng_mod.stream(seed, "synth/psi")
    )
    person_area = np.repeat(np.arange(n_areas, dtype=np.int64), totals)

    person_cats: dict[str, np.ndarray] = {}
    if config.joint_probs is not None:
        k1 = config.variables[0].variable.k
        k2 = config.variables[1].variable.k
        jp = np.asarray(config.joint_probs, dtype=float)
        if jp.ndim == 2:
            jp = np.broadcast_to(jp, (n_areas, k1, k2))
        flat = _draw_categorical(
            rng_mod.stream(seed, "synth/cats/joint"), jp.reshape(n_areas, k1 * k2),
            person_area,
        )
        person_cats[config.variables[0].variable.name] = flat // k2
        person_cats[config.variables[1].variable.name] = flat % k2
    else:
        for vs in config.variables:
            probs = np.asarray(vs.probs, dtype=float)
            if probs.ndim == 1:
                probs = np.broadcast_to(probs, (n_areas, vs.variable.k))
            person_cats[vs.variable.name] = _draw_categorical(
                rng_mod.stream(seed, f"synth/cats/{vs.variable.name}"), probs, person_area
            )

    eta = config.mu + psi[person_area]
    for vs in config.variables:
        eta = eta + np.asarray(vs.effects, dtype=float)[person_cats[vs.variable.name]]
    np.clip(eta, -ETA_CLIP, ETA_CLIP, out=eta)
    u = rng_mod.stream(seed, "synth/outcome").random(person_area.size)
    person_y = (u < expit(eta)).astype(np.int64)

    pi_gold = np.bincount(person_area, weights=person_y, minlength=n_areas) / totals

    tables = {}
    for vs in config.variables:
        name = vs.variable.name
        flat = person_area * vs.variable.k + person_cats[name]
        tables[name] = np.bincount(
            flat, minlength=n_areas * vs.variable.k
        ).reshape(n_areas, vs.variable.k).astype(np.int64)
    crosstab = None
    if len(config.variables) >= 2:
        v1, v2 = config.variables[0].variable, config.variables[1].variable
        flat = (person_area * v1.k + person_cats[v1.name]) * v2.k + person_cats[v2.name]
        joint = np.bincount(flat, minlength=n_areas * v1.k * v2.k)
        crosstab = CrossTab(v1.name, v2.name, joint.reshape(n_areas, v1.k, v2.k))
    margins = PopulationMargins(n_areas, totals, tables, crosstab)

    return SyntheticTruth(config, psi, pi_gold, person_area, person_cats, person_y, margins)


def _extract(truth: SyntheticTruth, picks: np.ndarray, design: DesignDescriptor) -> SurveySample:
    picks = np.sort(picks)
    cats = {name: col[picks] for name, col in truth.person_cats.items()}
    return SurveySample(
        truth.graph.n_areas,
        truth.sample_variables(),
        truth.person_area[picks],
        truth.person_y[picks],
        cats,
        design,
    )


def draw_srs(truth: SyntheticTruth, n, seed: int) -> SurveySample:
    """Simple random sample without replacement.

    ``n`` as an int draws one global sample of that size (the area of
    each respondent is recorded); a sequence draws ``n[i]`` per area.
    """
    rng = rng_mod.stream(seed, "synth/draw/srs")
    if np.isscalar(n):
        n = int(n)
        if not 0 <= n <= truth.n_people:
            raise ValidationError(f"draw_srs: n={n} exceeds population {truth.n_people}")
        picks = rng.choice(truth.n_people, size=n, replace=False)
    else:
        n = np.asarray(n, dtype=np.int64)
        if n.shape != (truth.graph.n_areas,):
            raise ValidationError("draw_srs: per-area n must have one entry per area")
        if np.any(n < 0) or np.any(n > truth.config.totals):
            raise ValidationError("draw_srs: per-area n exceeds an area population")
        parts = []
        for i in range(truth.graph.n_areas):
            if n[i] > 0:
                start = truth.area_starts[i]
                parts.append(start + rng.choice(truth.config.totals[i], size=int(n[i]),
                                                replace=False))
        picks = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    return _extract(truth, picks, DesignDescriptor("srs"))


def draw_stratified(truth: SyntheticTruth, stratum: str, allocation, seed: int,
                    divisions: Sequence[int] | None = None) -> SurveySample:
    """Stratified sample without replacement on a coarse frame.

    The frame is either global (``divisions=None``) or the partition of
    areas induced by ``divisions`` (one id per area).  ``allocation``
    gives sample sizes per stratum within each frame unit: an int is
    split proportionally to the unit's stratum sizes (largest
    remainder), a ``(k,)`` vector applies to every unit, a ``(units, k)``
    matrix is used as given.
    """
    names = [vs.variable.name for vs in truth.config.variables]
    if stratum not in names:
        raise ValidationError(f"draw_stratified: unknown stratum variable {stratum!r}")
    var = truth.sample_variables()[names.index(stratum)]
    if divisions is None:
        unit_of_area = np.zeros(truth.graph.n_areas, dtype=np.int64)
        n_units = 1
    else:
        unit_of_area = np.asarray(divisions, dtype=np.int64)
        if unit_of_area.shape != (truth.graph.n_areas,) or unit_of_area.min() < 0:
            raise ValidationError("draw_stratified: divisions must map every area to a unit id")
        n_units = int(unit_of_area.max()) + 1

    person_unit = unit_of_area[truth.person_area]
    person_cat = truth.person_cats[stratum]
    pop = np.zeros((n_units, var.k), dtype=np.int64)
    np.add.at(pop, (person_unit, person_cat), 1)

    alloc = _resolve_allocation(allocation, pop, n_units, var.k)
    if np.any(alloc > pop):
        bad = np.argwhere(alloc > pop)[0]
        raise ValidationError(
            f"draw_stratified: allocation {alloc[tuple(bad)]} exceeds population "
            f"{pop[tuple(bad)]} in unit {bad[0]}, stratum {var.levels[bad[1]]!r}"
        )

    rng = rng_mod.stream(seed, "synth/draw/stratified")
    parts = []
    for u in range(n_units):
        for k in range(var.k):
            take = int(alloc[u, k])
            if take == 0:
                continue
            members = np.flatnonzero((person_unit == u) & (person_cat == k))
            parts.append(rng.choice(members, size=take, replace=False))
    picks = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    design = DesignDescriptor(
        "stratified", stratum=stratum,
        divisions=tuple(int(d) for d in unit_of_area) if divisions is not None else None,
    )
    return _extract(truth, picks, design)


def _resolve_allocation(allocation, pop: np.ndarray, n_units: int, k: int) -> np.ndarray:
    if np.isscalar(allocation):
        total = int(allocation)
        if total < 0:
            raise ValidationError("draw_stratified: negative allocation")
        alloc = np.zeros((n_units, k), dtype=np.int64)
        for u in range(n_units):
            unit_pop = pop[u].sum()
            if unit_pop == 0:
                if total > 0:
                    raise ValidationError(f"draw_stratified: unit {u} is empty")
                continue
            if total > unit_pop:
                raise ValidationError(
                    f"draw_stratified: allocation {total} exceeds unit {u} population {unit_pop}"
                )
            exact = total * pop[u] / unit_pop
            base = np.floor(exact).astype(np.int64)
            short = total - int(base.sum())
            order = np.argsort(-(exact - base), kind="stable")
            base[order[:short]] += 1
            alloc[u] = base
        return alloc
    alloc = np.asarray(allocation, dtype=np.int64)
    if alloc.ndim == 1:
        alloc = np.broadcast_to(alloc, (n_units, k)).copy()
    if alloc.shape != (n_units, k) or np.any(alloc < 0):
        raise ValidationError("draw_stratified: allocation shape/sign invalid")
    return alloc


def lattice_geojson(areas: Sequence[str], cols: int) -> dict:
    """Unit-square grid geometry, row-major, as a GeoJSON FeatureCollection.

    Interior squares share full edges, so the ``segment`` adjacency rule
    recovers the rook lattice exactly.
    """
    if cols < 1:
        raise ValidationError("lattice: cols must be positive")
    feats = []
    for i, name in enumerate(areas):
        r, c = divmod(i, cols)
        ring = [
            [float(c), float(r)],
            [float(c + 1), float(r)],
            [float(c + 1), float(r + 1)],
            [float(c), float(r + 1)],
            [float(c), float(r)],
        ]
        feats.append({
            "type": "Feature",
            "properties": {"area": str(name)},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return {"type": "FeatureCollection", "features": feats}
