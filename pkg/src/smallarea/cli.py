"""Command-line pipelines: simulate, estimate, assess, report.

All four subcommands read the same TOML configuration (see
:mod:`smallarea.config`) and share one output directory:

    smallarea simulate --config run.toml
    smallarea estimate --config run.toml
    smallarea assess   --config run.toml
    smallarea report   --config run.toml

``simulate`` writes the synthetic register, map, sample and gold
standard; ``estimate`` produces one estimates CSV per configured
estimator (plus retained draws and convergence diagnostics for the
model-based ones); ``assess`` scores everything against the gold
standard into report CSV/JSON and renders one choropleth SVG per
estimator plus the gold map on a shared colour scale; ``report``
concatenates the outputs into a single table.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime
failure.  Every output file carries the 12-digit configuration hash.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import design, hb, maps, synth
from . import rng as rng_mod
from .config import (
    ESTIMATOR_REGISTRY,
    RunConfig,
    config_hash,
    load_config,
    resolve_divisions,
)
from .assess import (
    assess,
    morans_comparison_bayes,
    morans_comparison_freq,
    write_report_csv,
    write_report_json,
)
from .errors import DegenerateValuesError, ValidationError
from .frame import (
    DesignDescriptor,
    Variable,
    load_areas,
    load_crosstab,
    load_gold,
    load_margins,
    load_sample,
    load_schema,
    write_areas,
    write_crosstab,
    write_gold,
    write_margins,
    write_sample,
    write_schema,
)
from .graph import (
    AreaGraph,
    adjacency_from_polygons,
    graph_from_edge_csv,
    load_geojson_polygons,
    morans_i,
    write_edge_csv,
)

DESIGN_ESTIMATORS = ("srs", "bayes_srs", "stratified", "ratio", "combined")
MCMC_ESTIMATORS = ("spatial", "spatial_fpc", "str_small", "full")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage problems are code 1
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="smallarea",
        description="Survey estimation of small-area proportions with "
                    "design-based and spatial hierarchical estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "simulate": "generate a synthetic population, map, sample and gold standard",
        "estimate": "run the configured estimators over the inputs",
        "assess": "score estimates against the gold standard; render maps",
        "report": "concatenate estimates and assessment into one table",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override the root seed")
        sp.add_argument("--out", help="override the output directory")
        if name == "estimate":
            sp.add_argument("--threads", type=int,
                            help="fit models concurrently (default 1)")
        if name in ("estimate", "assess"):
            sp.add_argument("--adjacency-rule", choices=["segment", "point"],
                            dest="adjacency_rule",
                            help="polygon adjacency rule for the area graph")
        if name == "assess":
            sp.add_argument("--clip-t-draws", action="store_true", default=None,
                            dest="clip_t_draws",
                            help="clip simulated t draws to [0, 1] in the "
                                 "frequentist Moran comparison")
    return parser


def _prepare(args) -> tuple[RunConfig, str]:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError("--seed: must be >= 0")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ValidationError("--threads: must be >= 1")
        overrides["threads"] = args.threads
    if getattr(args, "adjacency_rule", None) is not None:
        overrides["adjacency_rule"] = args.adjacency_rule
    if getattr(args, "clip_t_draws", None) is not None:
        overrides["clip_t_draws"] = args.clip_t_draws
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg, config_hash(cfg)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, chash = _prepare(args)
        handler = {
            "simulate": cmd_simulate,
            "estimate": cmd_estimate,
            "assess": cmd_assess,
            "report": cmd_report,
        }[args.command]
        handler(cfg, chash)
        return 0
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numeric/runtime failures
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: RunConfig, chash: str) -> None:
    sim = cfg.simulate
    if sim is None:
        raise ValidationError("simulate: [simulate] section required")
    os.makedirs(cfg.out, exist_ok=True)
    areas = [f"A{i:03d}" for i in range(sim.areas)]

    geo = synth.lattice_geojson(areas, sim.cols)
    geo["config_hash"] = chash
    geo_path = os.path.join(cfg.out, "map.geojson")
    with open(geo_path, "w") as fh:
        json.dump(geo, fh)
        fh.write("\n")
    names, polygons = load_geojson_polygons(geo_path)
    graph = AreaGraph(len(areas), adjacency_from_polygons(polygons, cfg.adjacency_rule))

    if sim.totals is not None:
        totals = np.asarray(sim.totals, dtype=np.int64)
    else:
        z = rng_mod.stream(cfg.seed, "synth/totals").standard_normal(sim.areas)
        totals = np.maximum(
            1, np.rint(sim.total_median * np.exp(sim.total_spread * z))
        ).astype(np.int64)

    vspecs = tuple(
        synth.VariableSpec(
            Variable(v.name, v.levels),
            np.asarray(v.probs, dtype=float),
            np.asarray(v.effects, dtype=float),
        )
        for v in sim.variables
    )
    joint = np.asarray(sim.joint, dtype=float) if sim.joint is not None else None
    truth = synth.generate_population(
        synth.TruthConfig(graph, tuple(areas), totals, sim.mu, sim.sigma, sim.lam,
                          vspecs, joint),
        cfg.seed,
    )

    sc = sim.sample
    if sc.design == "srs":
        n = list(sc.n) if isinstance(sc.n, tuple) else sc.n
        sample = synth.draw_srs(truth, n, cfg.seed)
    elif sc.design == "census":
        sample = synth.draw_srs(truth, [int(t) for t in totals], cfg.seed)
    else:
        divisions = resolve_divisions(sc.divisions, sim.areas)
        alloc = np.asarray(sc.allocation) if isinstance(sc.allocation, tuple) else sc.allocation
        sample = synth.draw_stratified(truth, sc.stratum, alloc, cfg.seed, divisions)

    variables = truth.sample_variables()
    pair = (variables[0].name, variables[1].name) if len(variables) >= 2 else None
    write_areas(os.path.join(cfg.out, "areas.csv"), areas, chash)
    write_edge_csv(os.path.join(cfg.out, "edges.csv"), graph,
                   header_comment=f"config_hash={chash}")
    write_schema(os.path.join(cfg.out, "schema.json"), variables, sample.design,
                 chash, crosstab=pair)
    write_margins(os.path.join(cfg.out, "margins.csv"), truth.margins, areas,
                  variables, chash)
    if truth.margins.crosstab is not None:
        write_crosstab(os.path.join(cfg.out, "crosstab.csv"), truth.margins.crosstab,
                       areas, variables[0], variables[1], chash)
    write_gold(os.path.join(cfg.out, "gold.csv"), truth.pi_gold, areas, chash)
    write_sample(os.path.join(cfg.out, "sample.csv"), sample, areas, chash)
    print(f"simulate: {sim.areas} areas, {truth.n_people} people, "
          f"{sample.n_records} sampled -> {cfg.out} [{chash}]")


# ---------------------------------------------------------------------------
# shared input loading


class _Inputs:
    def __init__(self, cfg: RunConfig):
        d = cfg.inputs or cfg.out
        self.dir = d
        area_path = os.path.join(d, "areas.csv")
        if not os.path.exists(area_path):
            raise ValidationError(f"inputs: {area_path} not found (run simulate first?)")
        self.areas = load_areas(area_path)
        geo_path = os.path.join(d, "map.geojson")
        self.polygons = None
        if os.path.exists(geo_path):
            names, polygons = load_geojson_polygons(geo_path)
            order = _match_order(names, self.areas, geo_path)
            self.polygons = [polygons[j] for j in order]
            self.graph = AreaGraph(
                len(self.areas),
                adjacency_from_polygons(self.polygons, cfg.adjacency_rule),
            )
        else:
            self.graph = graph_from_edge_csv(
                os.path.join(d, "edges.csv"), len(self.areas)
            )
        self.variables, self.design, pair = load_schema(os.path.join(d, "schema.json"))
        self.sample = load_sample(os.path.join(d, "sample.csv"), self.areas,
                                  self.variables, self.design)
        self.margins = load_margins(os.path.join(d, "margins.csv"), self.areas,
                                    self.variables)
        ct_path = os.path.join(d, "crosstab.csv")
        if pair is not None and os.path.exists(ct_path):
            by_name = {v.name: v for v in self.variables}
            table = load_crosstab(ct_path, self.areas, by_name[pair[0]], by_name[pair[1]])
            self.margins = self.margins.with_crosstab(pair[0], pair[1], table)
        gold_path = os.path.join(d, "gold.csv")
        self.gold = load_gold(gold_path, self.areas) if os.path.exists(gold_path) else None

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ValidationError(f"inputs: no variable named {name!r} in the schema")


def _match_order(names, areas, path) -> list[int]:
    pos = {n: j for j, n in enumerate(names)}
    if set(pos) != set(areas) or len(names) != len(areas):
        raise ValidationError(f"{path}: polygon names do not match areas.csv")
    return [pos[a] for a in areas]


# ---------------------------------------------------------------------------
# estimate


def _resolve_stratum(cfg: RunConfig, inp: _Inputs, name: str) -> str:
    explicit = cfg.estimator_settings(name).variable
    if explicit:
        inp.variable(explicit)
        return explicit
    if inp.design.kind == "stratified" and inp.design.stratum:
        return inp.design.stratum
    if inp.variables:
        return inp.variables[0].name
    raise ValidationError(f"{name}: no stratum variable available")


def _resolve_ratio_variable(cfg: RunConfig, inp: _Inputs) -> str:
    explicit = cfg.estimator_settings("ratio").variable
    if explicit:
        inp.variable(explicit)
        return explicit
    stratum = inp.design.stratum if inp.design.kind == "stratified" else None
    for v in inp.variables:
        if v.name != stratum:
            return v.name
    if inp.variables:
        return inp.variables[0].name
    raise ValidationError("ratio: no auxiliary variable available")


def _resolve_pair(cfg: RunConfig, inp: _Inputs, name: str) -> tuple[str, str, str]:
    settings = cfg.estimator_settings(name)
    if settings.var1 and settings.var2:
        inp.variable(settings.var1)
        inp.variable(settings.var2)
        return settings.var1, settings.var2, settings.mode
    if len(inp.variables) >= 2:
        return inp.variables[0].name, inp.variables[1].name, settings.mode
    raise ValidationError(f"{name}: needs two auxiliary variables")


def _fit_key(cfg: RunConfig, inp: _Inputs, name: str) -> tuple[str, ...]:
    if name in ("spatial", "spatial_fpc"):
        return ()
    if name == "str_small":
        return (_resolve_stratum(cfg, inp, "str_small"),)
    v1, v2, _ = _resolve_pair(cfg, inp, "full")
    return (v1, v2)


def _run_fit(cfg: RunConfig, inp: _Inputs, key: tuple[str, ...]) -> hb.PosteriorDraws:
    spec = hb.ModelSpec(
        inp.graph,
        tuple(inp.variable(v) for v in key),
        likelihood="bernoulli",
        spatial=True,
    )
    counts = hb.cell_counts(inp.sample, key)
    mc = cfg.mcmc
    mcmc_cfg = hb.McmcConfig(
        chains=mc.chains, iterations=mc.iterations, burnin=mc.burnin,
        thin=mc.thin, adapt_window=mc.adapt_window, target_accept=mc.target_accept,
        seed=rng_mod.derive_seed(cfg.seed, "estimate/fit/" + ",".join(key)),
    )
    return hb.run_mcmc(spec, counts, mcmc_cfg)


def cmd_estimate(cfg: RunConfig, chash: str) -> None:
    inp = _Inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    skipped: dict[str, str] = {}

    # resolve which model fits are needed; identical keys share one fit
    fit_keys: dict[str, tuple[str, ...]] = {}
    for name in cfg.estimators:
        if name in MCMC_ESTIMATORS:
            try:
                fit_keys[name] = _fit_key(cfg, inp, name)
            except ValidationError as exc:
                skipped[name] = str(exc)
    unique_keys = sorted(set(fit_keys.values()))
    fits: dict[tuple[str, ...], hb.PosteriorDraws] = {}
    if unique_keys:
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                futures = {k: pool.submit(_run_fit, cfg, inp, k) for k in unique_keys}
                fits = {k: f.result() for k, f in futures.items()}
        else:
            fits = {k: _run_fit(cfg, inp, k) for k in unique_keys}

    for name in cfg.estimators:
        if name in skipped:
            continue
        try:
            if name in DESIGN_ESTIMATORS:
                est = _design_estimate(cfg, inp, name)
                draws, diagnostics = None, None
            else:
                est, draws, diagnostics = _mcmc_estimate(cfg, inp, name,
                                                         fits[fit_keys[name]])
        except ValidationError as exc:
            skipped[name] = str(exc)
            continue
        est_path = os.path.join(cfg.out, f"estimates_{name}.csv")
        design.write_estimates(est_path, est, inp.areas, chash)
        line = f"estimate: {name} -> {est_path}"
        if draws is not None:
            draws_path = os.path.join(cfg.out, f"draws_{name}.csv")
            hb.write_draws(draws_path, draws, chash)
            diag_path = os.path.join(cfg.out, f"diagnostics_{name}.json")
            with open(diag_path, "w") as fh:
                json.dump(_jsonable({"config_hash": chash, **diagnostics}), fh,
                          indent=2, sort_keys=True)
                fh.write("\n")
            flag = " [convergence warning]" if diagnostics.get("warning") else ""
            line += f" (+draws, diagnostics{flag})"
        print(line)

    if skipped:
        with open(os.path.join(cfg.out, "skipped.json"), "w") as fh:
            json.dump({"config_hash": chash, "skipped": skipped}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        for name, reason in skipped.items():
            print(f"estimate: skipped {name}: {reason}", file=sys.stderr)


def _design_estimate(cfg: RunConfig, inp: _Inputs, name: str) -> design.EstimateSet:
    if name == "srs":
        return design.srs_estimate(inp.sample, inp.margins, cfg.alpha)
    if name == "bayes_srs":
        return design.bayes_srs_estimate(inp.sample, cfg.alpha)
    if name == "stratified":
        return design.stratified_estimate(
            inp.sample, inp.margins, _resolve_stratum(cfg, inp, "stratified"), cfg.alpha
        )
    if name == "ratio":
        return design.ratio_estimate(
            inp.sample, inp.margins, _resolve_ratio_variable(cfg, inp), cfg.alpha
        )
    v1, v2, mode = _resolve_pair(cfg, inp, "combined")
    return design.combined_estimate(inp.sample, inp.margins, v1, v2, cfg.alpha, mode)


def _mcmc_estimate(cfg: RunConfig, inp: _Inputs, name: str,
                   fit: hb.PosteriorDraws):
    if name == "spatial":
        if fit.spec.variables:
            raise ValidationError("spatial: model unexpectedly carries variables")
        draws = fit.with_pi(hb.pi_star_cells(fit), "spatial")
    elif name == "spatial_fpc":
        draws = hb.finite_population_estimate(
            fit, inp.sample, inp.margins,
            seed=rng_mod.derive_seed(cfg.seed, "estimate/fpc"),
        )
    else:
        key = fit.spec.variable_names
        mode = cfg.estimator_settings(name).mode if name == "full" else "crosstab"
        pi = hb.poststratified_posterior(fit, inp.margins, key, mode)
        draws = fit.with_pi(pi, name)
    est, diagnostics = hb.summarize(draws, cfg.alpha)
    est.estimator = name
    return est, draws, diagnostics


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# assess


def cmd_assess(cfg: RunConfig, chash: str) -> None:
    inp = _Inputs(cfg)
    if inp.gold is None:
        raise ValidationError(
            f"assess: gold.csv not found in {inp.dir}; a gold standard is required"
        )
    os.makedirs(cfg.out, exist_ok=True)
    reps = cfg.assess.reps
    reports = []
    points: list[tuple[str, np.ndarray]] = []
    for name in cfg.estimators:
        try:
            est, pi_draws = _assessable(cfg, inp, name)
        except ValidationError as exc:
            print(f"assess: skipped {name}: {exc}", file=sys.stderr)
            continue
        rep = assess(est, inp.gold, inp.graph)
        try:
            if pi_draws is not None:
                p = morans_comparison_bayes(pi_draws, inp.gold, inp.graph)
            else:
                p = morans_comparison_freq(
                    est, inp.gold, inp.graph, reps=reps,
                    seed=cfg.seed, clip=cfg.clip_t_draws,
                )
        except (ValidationError, DegenerateValuesError) as exc:
            print(f"assess: no spatial comparison for {name}: {exc}", file=sys.stderr)
            p = None
        reports.append(dataclasses.replace(rep, p_below_gold=p))
        points.append((name, est.point))

    gold_i = morans_i(inp.gold, inp.graph)
    write_report_csv(os.path.join(cfg.out, "report.csv"), reports,
                                gold_i, chash)
    write_report_json(os.path.join(cfg.out, "report.json"), reports,
                                 gold_i, chash)
    _print_report(reports, gold_i)

    if cfg.assess.maps:
        if inp.polygons is None:
            print("assess: no map.geojson; skipping choropleths", file=sys.stderr)
            return
        edges = maps.shared_bins(inp.gold, *[pt for _, pt in points])
        maps.choropleth(os.path.join(cfg.out, "map_gold.svg"), inp.polygons,
                        inp.gold, "gold standard", edges, chash)
        for name, pt in points:
            maps.choropleth(os.path.join(cfg.out, f"map_{name}.svg"), inp.polygons,
                            pt, name, edges, chash)


def _assessable(cfg: RunConfig, inp: _Inputs, name: str):
    """EstimateSet (+ pi draws for posterior-based estimators) to score."""
    if name in DESIGN_ESTIMATORS:
        est = _design_estimate(cfg, inp, name)
        if name == "bayes_srs":
            rng = rng_mod.stream(cfg.seed, "assess/bayes_srs")
            mat = rng.beta(est.beta_a, est.beta_b,
                           size=(max(cfg.assess.reps, 100), est.n_areas))
            return est, mat
        return est, None
    est_path = os.path.join(inp.dir, f"estimates_{name}.csv")
    draws_path = os.path.join(inp.dir, f"draws_{name}.csv")
    if not (os.path.exists(est_path) and os.path.exists(draws_path)):
        raise ValidationError(f"{name}: outputs not found (run estimate first)")
    sets = design.load_estimates(est_path, inp.areas)
    if name not in sets:
        raise ValidationError(f"{est_path}: no rows for estimator {name!r}")
    return sets[name], hb.load_pi_draws(draws_path)


_REPORT_HEADER = (
    f"{'estimator':<12} {'miss':>4} {'corr':>7} {'rmse':>7} "
    f"{'ci_len':>7} {'cover':>7} {'moran':>7} {'P<gold':>7}"
)


def _print_report(reports, gold_i: float) -> None:
    print(_REPORT_HEADER)
    print(f"{'gold':<12} {'':>4} {'':>7} {'':>7} {'':>7} {'':>7} {gold_i:>7.3f}")
    for rep in reports:
        p = f"{rep.p_below_gold:>7.3f}" if rep.p_below_gold is not None else f"{'':>7}"
        print(
            f"{rep.estimator:<12} {rep.n_missing:>4} {_c(rep.correlation)} "
            f"{_c(rep.rmse)} {_c(rep.mean_ci_length)} {_c(rep.coverage)} "
            f"{_c(rep.morans_i)} {p}"
        )


def _c(x: float) -> str:
    return f"{x:>7.3f}" if np.isfinite(x) else f"{'':>7}"


# ---------------------------------------------------------------------------
# report


def cmd_report(cfg: RunConfig, chash: str) -> None:
    d = cfg.inputs or cfg.out
    os.makedirs(cfg.out, exist_ok=True)
    areas = load_areas(os.path.join(d, "areas.csv"))

    found = []
    all_path = os.path.join(cfg.out, "estimates_all.csv")
    with open(all_path, "w", newline="") as out_fh:
        out_fh.write(f"# config_hash={chash}\n")
        out_fh.write("area,estimator,point,variance,low,high,missing_reason\n")
        for name in cfg.estimators:
            path = os.path.join(d, f"estimates_{name}.csv")
            if not os.path.exists(path):
                continue
            found.append(name)
            with open(path, newline="") as fh:
                rows = [
                    line for line in fh
                    if line.strip() and not line.startswith("#")
                ]
            out_fh.writelines(rows[1:])  # drop per-file header

    lines = ["# Estimation run", "",
             f"- configuration hash: `{chash}`",
             f"- areas: {len(areas)}",
             f"- estimators with outputs: {', '.join(found) if found else 'none'}", ""]
    report_csv = os.path.join(d, "report.csv")
    if os.path.exists(report_csv):
        with open(report_csv, newline="") as fh:
            rows = [line.rstrip("\n") for line in fh
                    if line.strip() and not line.startswith("#")]
        if rows:
            header = rows[0].split(",")
            lines.append("| " + " | ".join(header) + " |")
            lines.append("|" + "---|" * len(header))
            for row in rows[1:]:
                cells = [_short(c) for c in row.split(",")]
                lines.append("| " + " | ".join(cells) + " |")
            lines.append("")
    md_path = os.path.join(cfg.out, "report.md")
    with open(md_path, "w") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    for line in lines:
        print(line)
    print(f"report: wrote {all_path} and {md_path}")


def _short(cell: str) -> str:
    try:
        return f"{float(cell):.4f}"
    except ValueError:
        return cell
