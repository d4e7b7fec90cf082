"""Bayesian hierarchical spatial models of small-area proportions.

The model family shares one linear predictor over area x category cells,

    logit(pi*) = mu + psi_i + sum_v phi^(v)_{k_v},

with ``psi`` a Leroux CAR field over the area graph and each ``phi`` a
categorical effect whose first level is pinned at zero.  Outcomes enter
as collapsed cell counts: the record-level Bernoulli likelihood and the
Binomial cell form differ only by a constant that never affects the
posterior, so both are served by one function.

Fitting uses an adaptive random-walk Metropolis-within-Gibbs sampler
with scalar blocks for ``mu``, each free ``phi`` level, ``log sigma``
and ``logit lambda``, and single-site scans over ``psi``.  Proposal
scales adapt toward 0.44 acceptance during burn-in only.

Posterior draws convert into per-area estimates three ways: directly
(``pi*`` per area), through the finite-population correction (observed
successes plus a Binomial predictive draw for the unsampled remainder),
or by post-stratification against register margins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import rng as rng_mod
from .design import EstimateSet
from .errors import ValidationError
from .frame import CellCounts, PopulationMargins, SurveySample, Variable, cell_counts
from .graph import AreaGraph

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelSpec:
    """Structure of one hierarchical model.

    ``variables`` are the categorical effects entering the predictor
    (and the cell structure of the probability table); ``spatial``
    disables the CAR field for the degenerate conjugate-anchor model.
    ``likelihood`` records whether counts arose from record-level
    Bernoulli data or a collapsed Binomial table; the two share the
    same posterior.
    """

    graph: AreaGraph
    variables: tuple[Variable, ...] = ()
    likelihood: str = "binomial"
    spatial: bool = True

    def __post_init__(self):
        if self.likelihood not in ("bernoulli", "binomial"):
            raise ValidationError(f"model: unknown likelihood {self.likelihood!r}")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValidationError("model: duplicate variable names")

    @property
    def n_areas(self) -> int:
        return self.graph.n_areas

    @property
    def cells_shape(self) -> tuple[int, ...]:
        return (self.graph.n_areas,) + tuple(v.k for v in self.variables)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)


@dataclass(frozen=True)
class Hyperpriors:
    """Prior choices the data model leaves open.

    ``mu_prior`` is ``'normal'`` (sd ``mu_sd``), ``'uniform_pi'``
    (standard logistic on mu, i.e. uniform on the pooled proportion;
    the conjugate-anchor prior), or ``'flat'``.  ``phi`` levels are
    always flat improper.  ``sigma`` is uniform on (0, sigma_max) and
    ``lambda`` uniform on [0, lambda_max] with lambda_max < 1 keeping
    the field proper.
    """

    mu_prior: str = "normal"
    mu_sd: float = 10.0
    sigma_max: float = 5.0
    lambda_max: float = 1.0 - 1e-6

    def __post_init__(self):
        if self.mu_prior not in ("normal", "uniform_pi", "flat"):
            raise ValidationError(f"hyperpriors: unknown mu prior {self.mu_prior!r}")
        if self.mu_sd <= 0 or self.sigma_max <= 0:
            raise ValidationError("hyperpriors: scales must be positive")
        if not 0.0 < self.lambda_max < 1.0:
            raise ValidationError("hyperpriors: lambda_max must be in (0, 1)")


@dataclass(frozen=True)
class McmcConfig:
    """Sampler run lengths and adaptation settings."""

    chains: int = 4
    iterations: int = 20000
    burnin: int = 10000
    thin: int = 10
    adapt_window: int = 50
    target_accept: float = 0.44
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("mcmc: chains must be >= 1 (>= 2 for diagnostics)")
        if not 0 <= self.burnin < self.iterations:
            raise ValidationError("mcmc: need 0 <= burnin < iterations")
        if self.thin < 1:
            raise ValidationError("mcmc: thinning must be >= 1")
        if self.adapt_window < 1:
            raise ValidationError("mcmc: adaptation window must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("mcmc: target acceptance must be in (0, 1)")
        if (self.iterations - self.burnin) // self.thin < 1:
            raise ValidationError("mcmc: no retained draws")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burnin) // self.thin


@dataclass
class ModelParams:
    """One point in parameter space (for density evaluation)."""

    mu: float
    phi: dict[str, np.ndarray] = field(default_factory=dict)
    psi: np.ndarray | None = None
    sigma: float | None = None
    lam: float | None = None


@dataclass
class PosteriorDraws:
    """Retained MCMC draws, chain by chain.

    Parameter arrays have leading axes ``(chains, kept)``.  ``pi`` is
    set once an estimator derives per-area proportion draws; all other
    post-processing reads the primitive parameters.
    """

    spec: ModelSpec
    mu: np.ndarray
    phi: dict[str, np.ndarray]
    psi: np.ndarray | None
    sigma: np.ndarray | None
    lam: np.ndarray | None
    accept: dict[str, float]
    pi: np.ndarray | None = None
    pi_label: str | None = None

    @property
    def n_chains(self) -> int:
        return int(self.mu.shape[0])

    @property
    def n_kept(self) -> int:
        return int(self.mu.shape[1])

    def with_pi(self, pi: np.ndarray, label: str) -> "PosteriorDraws":
        pi = np.asarray(pi, dtype=float)
        want = (self.n_chains, self.n_kept, self.spec.n_areas)
        if pi.shape != want:
            raise ValidationError(f"draws: pi shape {pi.shape} != {want}")
        if np.any((pi < 0.0) | (pi > 1.0)):
            raise ValidationError("draws: pi outside [0, 1]")
        return replace(self, pi=pi, pi_label=label)


# ---------------------------------------------------------------------------
# densities


def _check_counts(spec: ModelSpec, counts: CellCounts) -> None:
    if counts.variables != spec.variable_names:
        raise ValidationError(
            f"model expects cells over {spec.variable_names}, got {counts.variables}"
        )
    if counts.n.shape != spec.cells_shape:
        raise ValidationError(
            f"model expects cell shape {spec.cells_shape}, got {counts.n.shape}"
        )


def _linear_predictor(spec: ModelSpec, params: ModelParams) -> np.ndarray:
    eta = np.full(spec.cells_shape, float(params.mu))
    ndim = len(spec.cells_shape)
    if spec.spatial:
        if params.psi is None:
            raise ValidationError("model: spatial term requires psi")
        eta += np.asarray(params.psi, dtype=float).reshape((-1,) + (1,) * (ndim - 1))
    for d, v in enumerate(spec.variables, start=1):
        phi = np.asarray(params.phi[v.name], dtype=float)
        if phi.shape != (v.k,) or phi[0] != 0.0:
            raise ValidationError(f"model: phi for {v.name!r} needs shape ({v.k},), level 0 at 0")
        shape = [1] * ndim
        shape[d] = v.k
        eta = eta + phi.reshape(shape)
    return eta


def log_likelihood(spec: ModelSpec, counts: CellCounts, params: ModelParams) -> float:
    """Collapsed log-likelihood ``sum O*eta - n*log(1 + e^eta)`` over sampled cells.

    Equals the record-level Bernoulli sum exactly; the Binomial
    coefficient constant is omitted for both forms.
    """
    _check_counts(spec, counts)
    eta = _linear_predictor(spec, params)
    mask = counts.n > 0
    eta_s = eta[mask]
    return float(counts.o[mask] @ eta_s - counts.n[mask] @ np.logaddexp(0.0, eta_s))


def _mu_logprior(mu: float, hyper: Hyperpriors) -> float:
    if hyper.mu_prior == "normal":
        return -0.5 * (mu / hyper.mu_sd) ** 2 - np.log(hyper.mu_sd) - 0.5 * LOG_2PI
    if hyper.mu_prior == "uniform_pi":
        # standard logistic: density of mu when expit(mu) ~ Uniform(0,1)
        return -mu - 2.0 * np.logaddexp(0.0, -mu)
    return 0.0


def log_posterior(spec: ModelSpec, counts: CellCounts, params: ModelParams,
                  hyper: Hyperpriors = Hyperpriors()) -> float:
    """Unnormalised log-posterior; ``-inf`` outside the support."""
    from .car import LcarParams, lcar_logpdf

    if not np.isfinite(params.mu):
        return -np.inf
    total = _mu_logprior(params.mu, hyper)
    if spec.spatial:
        if params.sigma is None or params.lam is None or params.psi is None:
            raise ValidationError("model: spatial term requires sigma, lam and psi")
        if not (0.0 < params.sigma < hyper.sigma_max):
            return -np.inf
        if not (0.0 <= params.lam <= hyper.lambda_max):
            return -np.inf
        if not np.all(np.isfinite(params.psi)):
            return -np.inf
        total += lcar_logpdf(params.psi, spec.graph, LcarParams(params.sigma, params.lam))
        total += -np.log(hyper.sigma_max) - np.log(hyper.lambda_max)
    for v in spec.variables:
        phi = np.asarray(params.phi[v.name], dtype=float)
        if not np.all(np.isfinite(phi)):
            return -np.inf
    return total + log_likelihood(spec, counts, params)


# ---------------------------------------------------------------------------
# sampler


def _flatten_cells(spec: ModelSpec, counts: CellCounts):
    n_full = counts.n.reshape(spec.n_areas, -1)
    o_full = counts.o.reshape(spec.n_areas, -1)
    s_area, s_cell = np.nonzero(n_full > 0)
    cats = []
    if spec.variables:
        dims = tuple(v.k for v in spec.variables)
        cats = list(np.unravel_index(s_cell, dims))
    return (s_area, n_full[s_area, s_cell].astype(float),
            o_full[s_area, s_cell].astype(float), cats)


def _initial_mu(n_tot: float, o_tot: float) -> float:
    if n_tot <= 0:
        return 0.0
    p = o_tot / n_tot
    if p <= 0.0 or p >= 1.0:
        p = (o_tot + 1.0) / (n_tot + 2.0)
    return float(np.log(p / (1.0 - p)))


def run_mcmc(spec: ModelSpec, counts: CellCounts, config: McmcConfig,
             hyper: Hyperpriors = Hyperpriors()) -> PosteriorDraws:
    """Adaptive random-walk Metropolis-within-Gibbs over the model blocks.

    Chains run sequentially with independent derived streams; proposal
    scales adapt in ``adapt_window`` batches during burn-in and are
    frozen afterwards.  Acceptance statistics cover post-burn-in
    iterations only.
    """
    _check_counts(spec, counts)
    s_area, n_s, o_s, cats = _flatten_cells(spec, counts)
    graph = spec.graph
    n_areas = spec.n_areas

    # block layout: mu, free phi levels, psi sites, log sigma, logit lambda
    labels = ["mu"]
    phi_levels: list[tuple[int, int]] = []  # (variable position, level)
    for vpos, v in enumerate(spec.variables):
        for k in range(1, v.k):
            phi_levels.append((vpos, k))
            labels.append(f"phi_{v.name}_{k}")
    psi_offset = len(labels)
    if spec.spatial:
        labels.extend(f"psi_{i}" for i in range(n_areas))
        labels.extend(["sigma", "lambda"])
    n_blocks = len(labels)

    cells_of_area = [np.flatnonzero(s_area == i) for i in range(n_areas)]
    o_sum_area = np.array([o_s[idx].sum() for idx in cells_of_area])
    cells_of_level = [np.flatnonzero(cats[vpos] == k) for vpos, k in phi_levels]
    o_sum_level = np.array([o_s[idx].sum() for idx in cells_of_level]) if phi_levels else np.empty(0)
    nbrs = [np.asarray(graph.neighbors[i], dtype=np.int64) for i in range(n_areas)]
    degrees = graph.degrees.astype(float)
    eigvals = graph.laplacian_eigh()[0] if spec.spatial else None
    o_tot = float(o_s.sum())
    n_tot = float(n_s.sum())

    mu0 = _initial_mu(n_tot, o_tot)
    sigma0 = min(1.0, 0.5 * hyper.sigma_max)
    lam0 = min(0.5, 0.5 * hyper.lambda_max)

    init = ModelParams(
        mu=mu0,
        phi={v.name: np.zeros(v.k) for v in spec.variables},
        psi=np.zeros(n_areas) if spec.spatial else None,
        sigma=sigma0 if spec.spatial else None,
        lam=lam0 if spec.spatial else None,
    )
    if not np.isfinite(log_posterior(spec, counts, init, hyper)):
        raise RuntimeError(
            "mcmc: non-finite log-posterior at initialization "
            f"(mu={mu0:.3f}, sigma={sigma0}, lambda={lam0})"
        )

    kept = config.n_kept
    mu_out = np.empty((config.chains, kept))
    phi_out = {v.name: np.zeros((config.chains, kept, v.k)) for v in spec.variables}
    psi_out = np.empty((config.chains, kept, n_areas)) if spec.spatial else None
    sig_out = np.empty((config.chains, kept)) if spec.spatial else None
    lam_out = np.empty((config.chains, kept)) if spec.spatial else None
    accept_sum = np.zeros(n_blocks)

    for c in range(config.chains):
        chain_rng = rng_mod.stream(config.seed, f"mcmc/chain/{c}")
        _run_chain(
            spec, config, hyper, chain_rng,
            s_area, n_s, o_s, cells_of_area, o_sum_area,
            phi_levels, cells_of_level, o_sum_level,
            nbrs, degrees, eigvals, o_tot,
            mu0, sigma0, lam0, psi_offset, n_blocks,
            mu_out[c],
            [phi_out[v.name][c] for v in spec.variables],
            psi_out[c] if spec.spatial else None,
            sig_out[c] if spec.spatial else None,
            lam_out[c] if spec.spatial else None,
            accept_sum,
        )

    post = config.iterations - config.burnin
    accept = {
        lab: float(accept_sum[b] / (config.chains * post))
        for b, lab in enumerate(labels)
    }
    if spec.spatial:
        psi_labels = [lab for lab in labels if lab.startswith("psi_")]
        accept["psi_mean"] = float(np.mean([accept[lab] for lab in psi_labels]))
    return PosteriorDraws(
        spec, mu_out, phi_out, psi_out, sig_out, lam_out, accept
    )


def _run_chain(spec, config, hyper, rng,
               s_area, n_s, o_s, cells_of_area, o_sum_area,
               phi_levels, cells_of_level, o_sum_level,
               nbrs, degrees, eigvals, o_tot,
               mu0, sigma0, lam0, psi_offset, n_blocks,
               mu_store, phi_stores, psi_store, sig_store, lam_store,
               accept_report):
    """One chain; writes retained draws into the provided views."""
    n_areas = spec.n_areas
    spatial = spec.spatial
    lam_max = hyper.lambda_max
    sig_max = hyper.sigma_max
    mu_prior = hyper.mu_prior
    mu_sd = hyper.mu_sd

    mu = mu0
    phis = [np.zeros(v.k) for v in spec.variables]
    psi = np.zeros(n_areas)
    log_sig = float(np.log(sigma0))
    lam_t = float(np.log(lam0 / lam_max) - np.log1p(-lam0 / lam_max))  # logit(lam/lam_max)

    eta_s = np.full(s_area.size, mu)
    sp_s = np.logaddexp(0.0, eta_s)

    scales = np.full(n_blocks, 0.8)
    window_acc = np.zeros(n_blocks)
    batch = 0

    def field_prior(q_rough, q_ind, sigma, lam):
        spectrum = lam * eigvals + (1.0 - lam)
        return 0.5 * (np.log(spectrum).sum() - 2.0 * n_areas * np.log(sigma)) \
            - 0.5 * (lam * q_rough + (1.0 - lam) * q_ind) / (sigma * sigma)

    edge_i = spec.graph.edge_i
    edge_j = spec.graph.edge_j

    keep_at = config.burnin
    kept_idx = 0
    for t in range(1, config.iterations + 1):
        z = rng.standard_normal(n_blocks)
        logu = np.log(rng.random(n_blocks))
        sigma = float(np.exp(log_sig))
        lam = lam_max * float(expit(lam_t))
        inv_2s2 = 0.5 / (sigma * sigma)

        # -- mu block
        delta = scales[0] * z[0]
        eta_new = eta_s + delta
        sp_new = np.logaddexp(0.0, eta_new)
        d = delta * o_tot - float(n_s @ (sp_new - sp_s))
        if mu_prior == "normal":
            d += -0.5 * ((mu + delta) ** 2 - mu * mu) / (mu_sd * mu_sd)
        elif mu_prior == "uniform_pi":
            m2 = mu + delta
            d += (-m2 - 2.0 * np.logaddexp(0.0, -m2)) - (-mu - 2.0 * np.logaddexp(0.0, -mu))
        if logu[0] < d:
            mu += delta
            eta_s = eta_new
            sp_s = sp_new
            window_acc[0] += 1.0

        # -- phi blocks (flat prior: likelihood only)
        for b, (vpos, k) in enumerate(phi_levels, start=1):
            idx = cells_of_level[b - 1]
            delta = scales[b] * z[b]
            if idx.size:
                eta_new = eta_s[idx] + delta
                sp_new = np.logaddexp(0.0, eta_new)
                d = delta * o_sum_level[b - 1] - float(n_s[idx] @ (sp_new - sp_s[idx]))
            else:
                d = 0.0
            if logu[b] < d:
                phis[vpos][k] += delta
                if idx.size:
                    eta_s[idx] = eta_new
                    sp_s[idx] = sp_new
                window_acc[b] += 1.0

        if spatial:
            # -- psi single-site scan
            for i in range(n_areas):
                b = psi_offset + i
                delta = scales[b] * z[b]
                p_i = psi[i]
                nb = nbrs[i]
                s_nb = float(psi[nb].sum()) if nb.size else 0.0
                dq_rough = degrees[i] * (2.0 * p_i * delta + delta * delta) \
                    - 2.0 * delta * s_nb
                dq_ind = 2.0 * p_i * delta + delta * delta
                d = -(lam * dq_rough + (1.0 - lam) * dq_ind) * inv_2s2
                idx = cells_of_area[i]
                if idx.size:
                    eta_new = eta_s[idx] + delta
                    sp_new = np.logaddexp(0.0, eta_new)
                    d += delta * o_sum_area[i] - float(n_s[idx] @ (sp_new - sp_s[idx]))
                if logu[b] < d:
                    psi[i] = p_i + delta
                    if idx.size:
                        eta_s[idx] = eta_new
                        sp_s[idx] = sp_new
                    window_acc[b] += 1.0

            diff = psi[edge_i] - psi[edge_j]
            q_rough = float(diff @ diff)
            q_ind = float(psi @ psi)

            # -- log sigma block (Jacobian: +log sigma)
            b = psi_offset + n_areas
            s_new = log_sig + scales[b] * z[b]
            sig_new = float(np.exp(s_new))
            if 0.0 < sig_new < sig_max:
                d = field_prior(q_rough, q_ind, sig_new, lam) \
                    - field_prior(q_rough, q_ind, sigma, lam) + (s_new - log_sig)
                if logu[b] < d:
                    log_sig = s_new
                    sigma = sig_new
                    inv_2s2 = 0.5 / (sigma * sigma)
                    window_acc[b] += 1.0

            # -- logit lambda block (Jacobian: +log u(1-u))
            b = psi_offset + n_areas + 1
            t_new = lam_t + scales[b] * z[b]
            u_new = float(expit(t_new))
            lam_new = lam_max * u_new
            if 0.0 < u_new < 1.0:
                u_cur = lam / lam_max
                d = field_prior(q_rough, q_ind, sigma, lam_new) \
                    - field_prior(q_rough, q_ind, sigma, lam) \
                    + np.log(u_new * (1.0 - u_new)) - np.log(u_cur * (1.0 - u_cur))
                if logu[b] < d:
                    lam_t = t_new
                    window_acc[b] += 1.0

        # -- adaptation during burn-in, frozen afterwards
        if t <= config.burnin:
            if t % config.adapt_window == 0:
                batch += 1
                rates = window_acc / config.adapt_window
                step = min(0.25, 4.0 / np.sqrt(batch))
                scales *= np.exp(step * (rates - config.target_accept))
                window_acc[:] = 0.0
            if t == config.burnin:
                window_acc[:] = 0.0
        elif t == keep_at + config.thin:
            keep_at = t
            mu_store[kept_idx] = mu
            for vpos in range(len(phis)):
                phi_stores[vpos][kept_idx] = phis[vpos]
            if spatial:
                psi_store[kept_idx] = psi
                sig_store[kept_idx] = np.exp(log_sig)
                lam_store[kept_idx] = lam_max * expit(lam_t)
            kept_idx += 1
            if kept_idx == mu_store.shape[0]:
                keep_at = config.iterations + config.thin  # stop retaining

    accept_report += window_acc


# ---------------------------------------------------------------------------
# posterior functionals


def pi_star_cells(draws: PosteriorDraws, spec: ModelSpec | None = None) -> np.ndarray:
    """Per-draw probability table, shape ``(chains, kept) + cells_shape``."""
    spec = spec or draws.spec
    if spec is not draws.spec and spec != draws.spec:
        raise ValidationError("pi_star_cells: spec does not match the draws")
    lead = (draws.n_chains, draws.n_kept)
    ndim = len(spec.cells_shape)
    eta = np.broadcast_to(
        draws.mu.reshape(lead + (1,) * ndim), lead + spec.cells_shape
    ).copy()
    if spec.spatial:
        eta += draws.psi.reshape(lead + (spec.n_areas,) + (1,) * (ndim - 1))
    for d, v in enumerate(spec.variables, start=1):
        shape = [1] * ndim
        shape[d] = v.k
        eta += draws.phi[v.name].reshape(lead + tuple(shape))
    return expit(eta)


def finite_population_estimate(draws: PosteriorDraws, sample: SurveySample,
                               margins: PopulationMargins, seed: int) -> PosteriorDraws:
    """Attach finite-population per-area estimates to the draws.

    Per retained draw, unsampled persons of each cell are predicted by
    one Binomial draw at that cell's ``pi*``; the estimate is (observed
    successes + predicted successes) / N_i.  Requires exact integer
    cell populations: area totals, one margin table, or a crosstab.
    """
    spec = draws.spec
    counts = cell_counts(sample, spec.variable_names)
    pop = _cell_populations(spec, margins)
    if np.any(counts.n > pop):
        raise ValidationError("finite_population_estimate: sampled cells exceed population")
    if np.any(margins.totals < 1):
        raise ValidationError("finite_population_estimate: empty area population")
    pi_star = pi_star_cells(draws)
    remainder = (pop - counts.n).astype(np.int64)
    rng = rng_mod.stream(seed, "hb/fpc")
    pred = rng.binomial(remainder, pi_star)
    pred_area = pred.sum(axis=tuple(range(3, 3 + len(spec.variables)))) \
        if spec.variables else pred
    obs_area = counts.o.reshape(spec.n_areas, -1).sum(axis=1)
    pi = (obs_area + pred_area) / margins.totals.astype(float)
    return draws.with_pi(pi, "spatial_fpc")


def _cell_populations(spec: ModelSpec, margins: PopulationMargins) -> np.ndarray:
    if margins.n_areas != spec.n_areas:
        raise ValidationError("margins area count does not match the model graph")
    if not spec.variables:
        return margins.totals.copy()
    if len(spec.variables) == 1:
        return margins.table_for(spec.variables[0].name)
    if len(spec.variables) == 2:
        ct = margins.crosstab
        names = spec.variable_names
        if ct is not None and (ct.var1, ct.var2) == names:
            return ct.table
        if ct is not None and (ct.var2, ct.var1) == names:
            return np.swapaxes(ct.table, 1, 2)
        raise ValidationError(
            "finite-population correction requires an exact crosstab for "
            f"{names}; the independence product is not integer-valued"
        )
    raise ValidationError("cell populations beyond two variables are not supported")


def poststratified_posterior(draws: PosteriorDraws, margins: PopulationMargins,
                             variables: Sequence[str], mode: str = "crosstab") -> np.ndarray:
    """Per-draw per-area estimates ``sum_cells pi* N_cell / N_i``.

    ``mode='independence'`` replaces a two-variable crosstab with the
    product of the marginal tables.  Cell weights always sum to the
    area total, so results stay inside [0, 1].
    """
    spec = draws.spec
    if tuple(variables) != spec.variable_names:
        raise ValidationError(
            f"poststratified_posterior: draws model {spec.variable_names}, "
            f"requested {tuple(variables)}"
        )
    if mode not in ("crosstab", "independence"):
        raise ValidationError(f"poststratified_posterior: unknown mode {mode!r}")
    if np.any(margins.totals < 1):
        raise ValidationError("poststratified_posterior: empty area population")
    if margins.n_areas != spec.n_areas:
        raise ValidationError("margins area count does not match the model graph")
    totals = margins.totals.astype(float)
    pi_star = pi_star_cells(draws)
    if not spec.variables:
        return pi_star
    if len(spec.variables) == 1:
        weights = margins.table_for(spec.variables[0].name).astype(float)
    elif len(spec.variables) == 2:
        if mode == "crosstab":
            weights = _cell_populations(spec, margins).astype(float)
        else:
            t1 = margins.table_for(spec.variables[0].name).astype(float)
            t2 = margins.table_for(spec.variables[1].name).astype(float)
            weights = t1[:, :, None] * t2[:, None, :] / totals[:, None, None]
    else:
        raise ValidationError("poststratified_posterior: more than two variables unsupported")
    flat = pi_star.reshape(draws.n_chains, draws.n_kept, spec.n_areas, -1)
    agg = np.einsum("ctik,ik->cti", flat, weights.reshape(spec.n_areas, -1))
    return agg / totals


# ---------------------------------------------------------------------------
# summaries and diagnostics


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction factor of one quantity."""
    x = np.asarray(x, dtype=float)
    c, t = x.shape
    half = t // 2
    if half < 2:
        return float("nan")
    halves = np.concatenate([x[:, :half], x[:, half:2 * half]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return float("nan")
    var_plus = (half - 1) / half * within + halves.mean(axis=1).var(ddof=1)
    return float(np.sqrt(var_plus / within))


def _autocov(v: np.ndarray) -> np.ndarray:
    t = v.size
    d = v - v.mean()
    m = 1 << (2 * t - 1).bit_length()
    f = np.fft.rfft(d, m)
    return np.fft.irfft(f * np.conj(f), m)[:t] / t


def ess(x: np.ndarray) -> float:
    """Effective sample size (Geyer initial monotone sequence, all chains)."""
    x = np.asarray(x, dtype=float)
    c, t = x.shape
    if t < 4:
        return float("nan")
    acov = np.stack([_autocov(x[ci]) for ci in range(c)])
    mean_var = acov[:, 0].mean() * t / (t - 1)
    var_plus = mean_var * (t - 1) / t
    if c > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float("nan")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    pair = rho[0:2 * (t // 2):2] + rho[1:2 * (t // 2):2]
    stop = pair.size
    for k in range(1, pair.size):
        if pair[k] < 0.0:
            stop = k
            break
    head = np.minimum.accumulate(pair[:stop])
    tau = max(-1.0 + 2.0 * float(head.sum()), 1e-8)
    return float(c * t / tau)


def summarize(draws: PosteriorDraws, alpha: float = 0.05):
    """Posterior means and equal-tailed intervals, with convergence checks.

    Returns ``(EstimateSet, diagnostics)``.  Diagnostics carry split
    R-hat and ESS per quantity (parameters and each area's estimate)
    and a warning flag when any R-hat exceeds 1.01 or any ESS falls
    below 400.  Requires at least two chains.
    """
    if draws.n_chains < 2:
        raise ValidationError("summarize: diagnostics unavailable with a single chain")
    pi = draws.pi
    label = draws.pi_label
    if pi is None:
        if draws.spec.variables:
            raise ValidationError(
                "summarize: attach per-area estimates first (post-stratify or fpc)"
            )
        pi = pi_star_cells(draws)
        label = label or "spatial"
    flat = pi.reshape(-1, pi.shape[2])
    point = flat.mean(axis=0)
    variance = flat.var(axis=0, ddof=1)
    # identical draws (census: nothing left to predict) must give exactly
    # zero variance; the running mean rounds an ulp off and would not
    const = flat.min(axis=0) == flat.max(axis=0)
    point[const] = flat[0, const]
    variance[const] = 0.0
    low = np.quantile(flat, alpha / 2.0, axis=0)
    high = np.quantile(flat, 1.0 - alpha / 2.0, axis=0)
    # a heavily skewed posterior can put the mean outside the equal-tailed
    # quantiles; extend the interval so it brackets the point
    low = np.minimum(low, point)
    high = np.maximum(high, point)
    est = EstimateSet(label or "posterior", alpha, point, variance, low, high,
                      [None] * pi.shape[2],
                      missing_cells=np.zeros(pi.shape[2], dtype=np.int64))

    quantities: dict[str, np.ndarray] = {"mu": draws.mu}
    if draws.sigma is not None:
        quantities["sigma"] = draws.sigma
        quantities["lambda"] = draws.lam
    for name, arr in draws.phi.items():
        for k in range(1, arr.shape[2]):
            quantities[f"phi_{name}_{k}"] = arr[:, :, k]
    for i in range(pi.shape[2]):
        quantities[f"pi_{i}"] = pi[:, :, i]

    diag_q = {}
    flagged = 0
    for name, arr in quantities.items():
        r = split_rhat(arr)
        e = ess(arr)
        diag_q[name] = {"rhat": r, "ess": e}
        if np.isnan(r) or np.isnan(e) or r > 1.01 or e < 400.0:
            flagged += 1
    rhats = [v["rhat"] for v in diag_q.values()]
    esses = [v["ess"] for v in diag_q.values()]
    diagnostics = {
        "quantities": diag_q,
        "max_rhat": float(np.nanmax(rhats)) if not np.all(np.isnan(rhats)) else float("nan"),
        "min_ess": float(np.nanmin(esses)) if not np.all(np.isnan(esses)) else float("nan"),
        "n_flagged": flagged,
        "warning": flagged > 0,
        "accept": dict(draws.accept),
    }
    return est, diagnostics


# ---------------------------------------------------------------------------
# draw export


def write_draws(path, draws: PosteriorDraws, config_hash: str | None = None) -> None:
    """One row per retained draw: parameters, then ``pi_<area>`` columns."""
    spec = draws.spec
    cols = ["chain", "iter", "mu"]
    if spec.spatial:
        cols += ["sigma", "lambda"]
        cols += [f"psi_{i}" for i in range(spec.n_areas)]
    for v in spec.variables:
        cols += [f"phi_{v.name}_{k}" for k in range(1, v.k)]
    if draws.pi is not None:
        cols += [f"pi_{i}" for i in range(spec.n_areas)]
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for c in range(draws.n_chains):
            for t in range(draws.n_kept):
                row = [c, t, _g(draws.mu[c, t])]
                if spec.spatial:
                    row += [_g(draws.sigma[c, t]), _g(draws.lam[c, t])]
                    row += [_g(v) for v in draws.psi[c, t]]
                for v in spec.variables:
                    row += [_g(x) for x in draws.phi[v.name][c, t, 1:]]
                if draws.pi is not None:
                    row += [_g(v) for v in draws.pi[c, t]]
                writer.writerow(row)


def load_pi_draws(path) -> np.ndarray:
    """Read back the ``pi_<area>`` columns as a ``(chains, kept, areas)`` array."""
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.lstrip().startswith("#"))
        header = next(rows, None)
        if header is None:
            raise ValidationError(f"{path}: empty draws file")
        pi_cols = [j for j, h in enumerate(header) if h.startswith("pi_")]
        if not pi_cols:
            raise ValidationError(f"{path}: no pi_<area> columns")
        chain_col = header.index("chain")
        chains: list[int] = []
        vals: list[list[float]] = []
        for row in rows:
            if not row:
                continue
            chains.append(int(row[chain_col]))
            vals.append([float(row[j]) for j in pi_cols])
    chain_arr = np.asarray(chains)
    mat = np.asarray(vals)
    ids = np.unique(chain_arr)
    per = [mat[chain_arr == cid] for cid in ids]
    if len({p.shape[0] for p in per}) != 1:
        raise ValidationError(f"{path}: chains have unequal lengths")
    return np.stack(per)


def _g(x: float) -> str:
    return format(float(x), ".17g")
