"""Exact log-likelihood kernels for the three observation factors.

The joint density factorizes into a transmission term (importation
Bernoulli, daily escape, and acquisition factors driven by the colonized
census), a screening observation term (sensitivity on true positives and
false negatives, with false positives impossible), and a genetic term
over all unordered isolate pairs. Two genetic models are supported:

* transmission diversity -- the geometric parameter for a pair scales as
  gamma * k**t with t the tree distance between hosts, and gamma_g
  applies across unrelated chains;
* importation structure  -- gamma within a group, gamma_g across groups,
  plus a Bernoulli factor on the number of distinct groups founded.

All arithmetic is in log space. Each geometric pmf may be swapped for a
Poisson pmf with the same mean (1-q)/q via ``distance_family``.

These functions are the reference implementations: direct, unoptimized
evaluations used by tests and by the sampler's debug cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import Dataset
from .priors import PriorSpec
from .state import (
    AugmentedState,
    ColonizedCensus,
    census,
    extended_distance,
    extended_isolate_hosts,
    host_tree_distance,
)

TRANSMISSION_DIVERSITY = "transmission_diversity"
IMPORTATION_STRUCTURE = "importation_structure"
GENETIC_MODELS = (TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE)

GEOMETRIC = "geometric"
POISSON = "poisson"


class ParameterDomainError(ValueError):
    """A derived pmf parameter left its domain (e.g. gamma * k**t > 1)."""


@dataclass(frozen=True)
class ModelParams:
    """Model parameters; ``k`` applies to the transmission diversity model
    only and ``c`` to the importation structure model only."""

    p: float
    z: float
    beta: float
    gamma: float
    gamma_g: float
    k: float | None = None
    c: float | None = None
    distance_family: str = GEOMETRIC

    def __post_init__(self) -> None:
        if self.distance_family not in (GEOMETRIC, POISSON):
            raise ValueError(f"unknown distance family {self.distance_family!r}")

    def replace(self, **changes) -> "ModelParams":
        import dataclasses

        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ScreenCounts:
    """True positive, false negative and false positive screen counts."""

    tp: int
    fn: int
    fp: int


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def _geom_log_pmf(d: int, q: float) -> float:
    # support {0,1,...}: q * (1-q)^d
    if q >= 1.0:
        return 0.0 if d == 0 else -math.inf
    return math.log(q) + d * math.log1p(-q)


def _poisson_log_pmf(d: int, q: float) -> float:
    # Poisson with the matched geometric mean (1-q)/q.
    if q >= 1.0:
        return 0.0 if d == 0 else -math.inf
    lam = (1.0 - q) / q
    return -lam + d * math.log(lam) - math.lgamma(d + 1)


def _pair_log_pmf(d: int, q: float, family: str) -> float:
    if family == GEOMETRIC:
        return _geom_log_pmf(d, q)
    return _poisson_log_pmf(d, q)


def transmission_log_lik(
    state: AugmentedState,
    cens: ColonizedCensus,
    dataset: Dataset,
    params: ModelParams,
) -> float:
    """Log probability of the transmission configuration.

    Combines the importation Bernoulli term, per-patient escape terms
    exp(-sum beta*C(t)) over at-risk days, and the acquisition factor
    (1 - exp(-beta*C(t_c))) / C(t_c) for each ward acquisition. Returns
    -inf when any acquisition day has an empty census.
    """
    n = state.n_patients
    n_imports = sum(state.import_flag)
    total = n_imports * _log(params.p) + (n - n_imports) * _log(1.0 - params.p)

    beta = params.beta
    exposure_sum = 0
    for j in range(n):
        if state.import_flag[j]:
            continue
        e = dataset.episodes[j]
        c = state.col_day[j]
        last = e.discharge_day if c is None else min(c - 1, e.discharge_day)
        for t in range(e.admit_day, last + 1):
            exposure_sum += cens.at(t)
    total -= beta * exposure_sum

    for j in range(n):
        c = state.col_day[j]
        if c is None or state.import_flag[j]:
            continue
        ct = cens.at(c)
        if ct == 0:
            return -math.inf
        total += _log(-math.expm1(-beta * ct)) - math.log(ct)
    return total


def screen_counts(state: AugmentedState, dataset: Dataset) -> ScreenCounts:
    """Classify every screen. A patient is detectable from their
    colonization day onward; screens before that day are true negatives
    (uncounted) or false positives."""
    tp = fn = fp = 0
    for j, e in enumerate(dataset.episodes):
        c = state.col_day[j]
        for s in e.screens:
            detectable = c is not None and s.day >= c
            if s.positive and detectable:
                tp += 1
            elif not s.positive and detectable:
                fn += 1
            elif s.positive:
                fp += 1
    return ScreenCounts(tp, fn, fp)


def observation_log_lik(counts: ScreenCounts, params: ModelParams) -> float:
    """Log probability of the screening results given detectability."""
    if counts.fp > 0:
        return -math.inf
    total = 0.0
    if counts.tp:
        total += counts.tp * _log(params.z)
    if counts.fn:
        total += counts.fn * _log(1.0 - params.z)
    return total


def pair_log_pmf_td(dist: int, t_xy: float, params: ModelParams) -> float:
    """Log pmf of one pairwise distance under the transmission diversity
    model; ``t_xy`` is the tree distance (``math.inf`` across chains).

    Raises:
        ParameterDomainError: when gamma * k**t falls outside (0, 1].
    """
    if dist < 0:
        raise ValueError("distances are nonnegative")
    if math.isinf(t_xy):
        return _pair_log_pmf(dist, params.gamma_g, params.distance_family)
    if params.k is None:
        raise ParameterDomainError("transmission diversity model requires k")
    q = params.gamma * params.k ** t_xy
    if not (0.0 < q <= 1.0):
        raise ParameterDomainError(
            f"gamma * k**t = {q} outside (0,1] at tree distance {t_xy}"
        )
    return _pair_log_pmf(dist, q, params.distance_family)


def genetic_log_lik_td(
    state: AugmentedState,
    dataset: Dataset,
    params: ModelParams,
    include_phantoms: bool = False,
) -> float:
    """Sum of pair log pmfs over all unordered isolate pairs under the
    transmission diversity model. Phantom-distance pairs enter only when
    ``include_phantoms`` is set (full augmentation)."""
    hosts = extended_isolate_hosts(state, dataset)
    if not include_phantoms:
        hosts = hosts[: dataset.n_isolates]
    total = 0.0
    for y in range(1, len(hosts)):
        for x in range(y):
            t_xy = host_tree_distance(state, hosts[x], hosts[y])
            total += pair_log_pmf_td(extended_distance(state, dataset, x, y), t_xy, params)
    return total


def pair_log_pmf_is(dist: int, same_group: bool, params: ModelParams) -> float:
    """Log pmf of one pairwise distance under the importation structure model."""
    if dist < 0:
        raise ValueError("distances are nonnegative")
    q = params.gamma if same_group else params.gamma_g
    if not (0.0 < q <= 1.0):
        raise ParameterDomainError(f"geometric parameter {q} outside (0,1]")
    return _pair_log_pmf(dist, q, params.distance_family)


def genetic_log_lik_is(
    state: AugmentedState,
    dataset: Dataset,
    params: ModelParams,
    include_phantoms: bool = False,
) -> float:
    """Sum of pair log pmfs with same_group decided by the hosts' labels."""
    hosts = extended_isolate_hosts(state, dataset)
    if not include_phantoms:
        hosts = hosts[: dataset.n_isolates]
    total = 0.0
    for y in range(1, len(hosts)):
        for x in range(y):
            same = state.group[hosts[x]] == state.group[hosts[y]]
            total += pair_log_pmf_is(extended_distance(state, dataset, x, y), same, params)
    return total


def n_import_groups(state: AugmentedState) -> int:
    """Number of distinct group labels among current importations."""
    return len(
        {state.group[j] for j in range(state.n_patients) if state.import_flag[j]}
    )


def grouping_log_lik(state: AugmentedState, params: ModelParams) -> float:
    """Log probability of the observed grouping of importations: each of
    the n_c distinct groups contributes c, each clustered importation 1-c."""
    n_imports = sum(state.import_flag)
    if n_imports == 0:
        return 0.0
    if params.c is None:
        raise ParameterDomainError("importation structure model requires c")
    n_c = n_import_groups(state)
    total = n_c * _log(params.c)
    if n_imports > n_c:
        total += (n_imports - n_c) * _log(1.0 - params.c)
    return total


def total_log_posterior(
    state: AugmentedState,
    dataset: Dataset,
    params: ModelParams,
    model: str,
    priors: PriorSpec,
    include_phantoms: bool = False,
) -> float:
    """Unnormalized log posterior density: all likelihood factors plus the
    log prior density of the parameters. Any impossible factor (including
    a pmf-parameter domain violation) yields -inf."""
    if model not in GENETIC_MODELS:
        raise ValueError(f"unknown genetic model {model!r}")
    log_prior = priors.log_density(params, model)
    if log_prior == -math.inf:
        return -math.inf
    cens = census(state, dataset)
    total = transmission_log_lik(state, cens, dataset, params)
    if total == -math.inf:
        return -math.inf
    total += observation_log_lik(screen_counts(state, dataset), params)
    if total == -math.inf:
        return -math.inf
    try:
        if model == TRANSMISSION_DIVERSITY:
            total += genetic_log_lik_td(state, dataset, params, include_phantoms)
        else:
            total += genetic_log_lik_is(state, dataset, params, include_phantoms)
            total += grouping_log_lik(state, params)
    except ParameterDomainError:
        return -math.inf
    return total + log_prior
