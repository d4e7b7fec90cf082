"""Run configuration: one TOML file drives every pipeline stage.

The file has a handful of tables:

    seed = 42                 # root seed for all randomness
    out = "runs/demo"         # output directory

    [simulate]                # population truth + survey draw
    areas = 73
    cols = 9                  # lattice width for the generated map
    mu = -1.6
    sigma = 0.55
    lambda = 0.95
    total_median = 20000      # lognormal area population sizes
    total_spread = 0.5

    [[simulate.variables]]
    name = "age"
    levels = ["young", "mid", "old"]
    probs = [0.3, 0.4, 0.3]
    effects = [0.0, 0.4, 0.9]

    [simulate.sample]
    design = "srs"            # srs | stratified | census
    n = 4000                  # global, or one entry per area

    [estimators]
    names = ["srs", "spatial"]
    alpha = 0.05
    [estimators.stratified]
    variable = "age"

    [mcmc]
    chains = 4
    iterations = 20000
    burnin = 10000
    thin = 10

    [assess]
    reps = 2000
    maps = true

Validation failures name the offending field path.  The resolved
configuration hashes to a 12-hex-digit tag stamped into every output
file, so artifacts can be traced to the settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ValidationError

ESTIMATOR_REGISTRY = (
    "srs", "bayes_srs", "stratified", "ratio", "combined",
    "spatial", "spatial_fpc", "str_small", "full",
)


@dataclass(frozen=True)
class SimVariable:
    name: str
    levels: tuple[str, ...]
    probs: tuple
    effects: tuple[float, ...]


@dataclass(frozen=True)
class SampleConfig:
    design: str = "srs"
    n: int | tuple[int, ...] | None = None
    stratum: str | None = None
    allocation: int | tuple | None = None
    divisions: int | tuple[int, ...] | None = None


@dataclass(frozen=True)
class SimulateConfig:
    areas: int
    cols: int
    mu: float
    sigma: float
    lam: float
    total_median: float = 1000.0
    total_spread: float = 0.0
    totals: tuple[int, ...] | None = None
    variables: tuple[SimVariable, ...] = ()
    joint: tuple | None = None
    sample: SampleConfig = field(default_factory=SampleConfig)


@dataclass(frozen=True)
class EstimatorSettings:
    variable: str | None = None
    var1: str | None = None
    var2: str | None = None
    mode: str = "crosstab"


@dataclass(frozen=True)
class McmcSection:
    chains: int = 4
    iterations: int = 20000
    burnin: int = 10000
    thin: int = 10
    adapt_window: int = 50
    target_accept: float = 0.44


@dataclass(frozen=True)
class AssessSection:
    reps: int = 2000
    maps: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    inputs: str | None = None
    adjacency_rule: str = "segment"
    clip_t_draws: bool = False
    threads: int = 1
    alpha: float = 0.05
    estimators: tuple[str, ...] = ESTIMATOR_REGISTRY
    settings: dict[str, EstimatorSettings] = field(default_factory=dict)
    simulate: SimulateConfig | None = None
    mcmc: McmcSection = field(default_factory=McmcSection)
    assess: AssessSection = field(default_factory=AssessSection)

    def estimator_settings(self, name: str) -> EstimatorSettings:
        return self.settings.get(name, EstimatorSettings())


class _Reader:
    """Typed extraction with field-path error messages."""

    def __init__(self, table: dict, path: str):
        if not isinstance(table, dict):
            raise ValidationError(f"{path}: expected a table")
        self.table = dict(table)
        self.path = path

    def _label(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, default=None):
        return self.table.pop(key, default)

    def scalar(self, key: str, kind, default=None, required=False):
        if key not in self.table:
            if required:
                raise ValidationError(f"{self._label(key)}: required")
            return default
        value = self.table.pop(key)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            raise ValidationError(f"{self._label(key)}: expected {kind.__name__}")
        if not isinstance(value, kind):
            raise ValidationError(f"{self._label(key)}: expected {kind.__name__}")
        return value

    def finish(self):
        if self.table:
            extra = sorted(self.table)
            where = self.path or "top level"
            raise ValidationError(f"{where}: unknown keys {extra}")


def _positive(value, path, strict=True):
    if value is None:
        return None
    if (strict and value <= 0) or (not strict and value < 0):
        raise ValidationError(f"{path}: must be positive")
    return value


def _parse_variable(raw: dict, path: str) -> SimVariable:
    r = _Reader(raw, path)
    name = r.scalar("name", str, required=True)
    levels = r.take("levels")
    k = r.scalar("k", int)
    if levels is not None:
        levels = tuple(str(s) for s in levels)
    elif k is not None:
        if k < 1:
            raise ValidationError(f"{path}.k: must be >= 1")
        levels = tuple(str(j) for j in range(k))
    else:
        raise ValidationError(f"{path}: needs 'levels' or 'k'")
    probs = r.take("probs")
    if probs is None:
        probs = tuple(1.0 / len(levels) for _ in levels)
    else:
        probs = _tuplify(probs)
    effects = r.take("effects")
    if effects is None:
        effects = tuple(0.0 for _ in levels)
    else:
        effects = tuple(float(e) for e in effects)
        if len(effects) != len(levels):
            raise ValidationError(f"{path}.effects: one entry per level required")
        if effects[0] != 0.0:
            raise ValidationError(f"{path}.effects: first level is the baseline, effect 0")
    r.finish()
    return SimVariable(name, levels, probs, effects)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return float(value) if isinstance(value, (int, float)) else value


def _parse_sample(raw: dict, path: str) -> SampleConfig:
    r = _Reader(raw, path)
    design = r.scalar("design", str, default="srs")
    if design not in ("srs", "stratified", "census"):
        raise ValidationError(f"{path}.design: unknown design {design!r}")
    n = r.take("n")
    if isinstance(n, list):
        n = tuple(int(v) for v in n)
    elif n is not None:
        n = int(n)
        _positive(n, f"{path}.n", strict=False)
    stratum = r.scalar("stratum", str)
    allocation = r.take("allocation")
    if isinstance(allocation, list):
        allocation = _int_tuplify(allocation, f"{path}.allocation")
    elif allocation is not None:
        allocation = int(allocation)
    divisions = r.take("divisions")
    if isinstance(divisions, list):
        divisions = tuple(int(v) for v in divisions)
    elif divisions is not None:
        divisions = int(divisions)
        if divisions < 1:
            raise ValidationError(f"{path}.divisions: must be >= 1")
    if design == "srs" and n is None:
        raise ValidationError(f"{path}.n: required for the srs design")
    if design == "stratified":
        if stratum is None:
            raise ValidationError(f"{path}.stratum: required for the stratified design")
        if allocation is None:
            raise ValidationError(f"{path}.allocation: required for the stratified design")
    r.finish()
    return SampleConfig(design, n, stratum, allocation, divisions)


def _int_tuplify(value, path):
    out = []
    for v in value:
        if isinstance(v, list):
            out.append(_int_tuplify(v, path))
        elif isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"{path}: integer entries required")
        else:
            out.append(v)
    return tuple(out)


def _parse_simulate(raw: dict, path: str = "simulate") -> SimulateConfig:
    r = _Reader(raw, path)
    areas = r.scalar("areas", int, required=True)
    if areas < 1:
        raise ValidationError(f"{path}.areas: must be >= 1")
    cols = r.scalar("cols", int, default=max(1, round(areas ** 0.5)))
    if cols < 1:
        raise ValidationError(f"{path}.cols: must be >= 1")
    mu = r.scalar("mu", float, required=True)
    sigma = r.scalar("sigma", float, required=True)
    if sigma <= 0:
        raise ValidationError(f"{path}.sigma: must be positive")
    lam = r.take("lambda")
    if lam is None:
        lam = r.take("lam")
    if lam is None or isinstance(lam, bool) or not isinstance(lam, (int, float)):
        raise ValidationError(f"{path}.lambda: required number")
    lam = float(lam)
    if not 0.0 <= lam < 1.0:
        raise ValidationError(f"{path}.lambda: must be in [0, 1)")
    total_median = r.scalar("total_median", float, default=1000.0)
    _positive(total_median, f"{path}.total_median")
    total_spread = r.scalar("total_spread", float, default=0.0)
    if total_spread < 0:
        raise ValidationError(f"{path}.total_spread: must be >= 0")
    totals = r.take("totals")
    if totals is not None:
        totals = tuple(int(v) for v in totals)
        if len(totals) != areas:
            raise ValidationError(f"{path}.totals: one entry per area required")
        if min(totals) < 1:
            raise ValidationError(f"{path}.totals: entries must be >= 1")
    variables = tuple(
        _parse_variable(v, f"{path}.variables[{j}]")
        for j, v in enumerate(r.take("variables", []))
    )
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}.variables: duplicate names")
    joint = r.take("joint")
    if joint is not None:
        if len(variables) != 2:
            raise ValidationError(f"{path}.joint: requires exactly two variables")
        joint = _tuplify(joint)
    sample = _parse_sample(r.take("sample", {}), f"{path}.sample")
    if sample.design == "stratified" and sample.stratum not in names:
        raise ValidationError(
            f"{path}.sample.stratum: {sample.stratum!r} is not a simulated variable"
        )
    r.finish()
    return SimulateConfig(areas, cols, mu, sigma, lam, total_median,
                          total_spread, totals, variables, joint, sample)


def _parse_estimators(raw: dict, path: str = "estimators"):
    r = _Reader(raw, path)
    names = r.take("names")
    if names is None:
        names = list(ESTIMATOR_REGISTRY)
    if not isinstance(names, list) or not names:
        raise ValidationError(f"{path}.names: non-empty list required")
    for name in names:
        if name not in ESTIMATOR_REGISTRY:
            raise ValidationError(
                f"{path}.names: unknown estimator {name!r}; "
                f"registry is {list(ESTIMATOR_REGISTRY)}"
            )
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}.names: duplicates")
    alpha = r.scalar("alpha", float, default=0.05)
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"{path}.alpha: must be in (0, 1)")
    settings = {}
    for name in list(r.table):
        if name not in ESTIMATOR_REGISTRY:
            raise ValidationError(f"{path}.{name}: unknown estimator table")
        er = _Reader(r.take(name), f"{path}.{name}")
        mode = er.scalar("mode", str, default="crosstab")
        if mode not in ("crosstab", "independence"):
            raise ValidationError(f"{path}.{name}.mode: crosstab or independence")
        settings[name] = EstimatorSettings(
            variable=er.scalar("variable", str),
            var1=er.scalar("var1", str),
            var2=er.scalar("var2", str),
            mode=mode,
        )
        er.finish()
    r.finish()
    return tuple(names), alpha, settings


def _parse_mcmc(raw: dict, path: str = "mcmc") -> McmcSection:
    r = _Reader(raw, path)
    out = McmcSection(
        chains=r.scalar("chains", int, default=4),
        iterations=r.scalar("iterations", int, default=20000),
        burnin=r.scalar("burnin", int, default=10000),
        thin=r.scalar("thin", int, default=10),
        adapt_window=r.scalar("adapt_window", int, default=50),
        target_accept=r.scalar("target_accept", float, default=0.44),
    )
    r.finish()
    if out.chains < 1:
        raise ValidationError(f"{path}.chains: must be >= 1")
    if not 0 <= out.burnin < out.iterations:
        raise ValidationError(f"{path}.burnin: need 0 <= burnin < iterations")
    if out.thin < 1:
        raise ValidationError(f"{path}.thin: must be >= 1")
    return out


def _parse_assess(raw: dict, path: str = "assess") -> AssessSection:
    r = _Reader(raw, path)
    reps = r.scalar("reps", int, default=2000)
    if reps < 1:
        raise ValidationError(f"{path}.reps: must be >= 1")
    maps = r.scalar("maps", bool, default=True)
    r.finish()
    return AssessSection(reps, maps)


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed TOML document into a RunConfig."""
    r = _Reader(doc, "")
    seed = r.scalar("seed", int, default=0)
    if seed < 0:
        raise ValidationError("seed: must be >= 0")
    out = r.scalar("out", str, default="out")
    inputs = r.scalar("inputs", str)
    rule = r.scalar("adjacency_rule", str, default="segment")
    if rule not in ("segment", "point"):
        raise ValidationError("adjacency_rule: segment or point")
    clip = r.scalar("clip_t_draws", bool, default=False)
    threads = r.scalar("threads", int, default=1)
    if threads < 1:
        raise ValidationError("threads: must be >= 1")
    sim_raw = r.take("simulate")
    simulate = _parse_simulate(sim_raw) if sim_raw is not None else None
    names, alpha, settings = _parse_estimators(r.take("estimators", {}))
    mcmc = _parse_mcmc(r.take("mcmc", {}))
    assess = _parse_assess(r.take("assess", {}))
    r.finish()
    return RunConfig(seed, out, inputs, rule, clip, threads, alpha,
                     names, settings, simulate, mcmc, assess)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: TOML parse error: {exc}") from None
    return parse_config(doc)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {
            k: _plain(getattr(obj, k)) for k in sorted(obj.__dataclass_fields__)
        }
    return obj


def config_hash(config: RunConfig) -> str:
    """12 hex digits identifying the resolved configuration."""
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def resolve_divisions(divisions, n_areas: int):
    """Config divisions -> per-area unit ids (int = contiguous blocks)."""
    if divisions is None:
        return None
    if isinstance(divisions, int):
        if not 1 <= divisions <= n_areas:
            raise ValidationError(
                f"simulate.sample.divisions: need 1 <= divisions <= {n_areas}"
            )
        return tuple(i * divisions // n_areas for i in range(n_areas))
    divisions = tuple(int(d) for d in divisions)
    if len(divisions) != n_areas:
        raise ValidationError("simulate.sample.divisions: one unit id per area required")
    return divisions
