"""Data-augmented MCMC: structural tree moves plus parameter updates.

Each iteration performs one structural move, drawn uniformly from the
currently applicable set, followed by a full sweep of parameter updates
(Gibbs where the conditional is conjugate, random-walk Metropolis-Hastings
otherwise). The four structural moves:

* change colonisation route/time -- re-propose one colonized patient's
  day, source and (importation structure model) group;
* add colonisation           -- colonize a never-positive patient;
* remove colonisation        -- un-colonize a sampler-added, childless one;
* change genetic distances   -- redraw a positive-but-unsequenced
  patient's phantom distance vector (full augmentation only).

Proposal ratios follow the published transition tables; because the move
type is drawn from the applicable set only, the acceptance step also
multiplies in |applicable(T)| / |applicable(T*)| so the chain stays in
detailed balance when pool availability changes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .engine import ChainState, Undo, geom_log_pmf
from .likelihood import (
    GEOMETRIC,
    IMPORTATION_STRUCTURE,
    POISSON,
    TRANSMISSION_DIVERSITY,
    total_log_posterior,
)
from .priors import PriorSpec
from .state import IMPORTATION, validate as validate_state

NEG_INF = -math.inf

MOVE_CHANGE = "change_route"
MOVE_ADD = "add"
MOVE_REMOVE = "remove"
MOVE_PHANTOM = "change_phantom"


class InitializationError(RuntimeError):
    """The observed data admit no positive-likelihood starting state."""


class ConfigError(ValueError):
    """Invalid sampler configuration."""


def default_step_sizes() -> dict[str, float]:
    return {"beta": 0.7, "k": 0.35, "gamma": 0.6, "gamma_g": 0.6}


@dataclass
class SamplerConfig:
    iterations: int = 100_000
    burn_in: int = 20_000
    thin: int = 10
    seed: int = 0
    w: float = 0.3
    w_prime: float = 0.5
    full_augmentation: bool = False
    phantom_pmf_gamma: float = 0.2
    phantom_pmf_gamma_g: float = 0.01
    mh_step_sizes: dict[str, float] = field(default_factory=default_step_sizes)
    model: str = TRANSMISSION_DIVERSITY
    distance_family: str = GEOMETRIC
    data_free: bool = False
    debug_validate: bool = False

    def check(self) -> None:
        if not (0.0 < self.w < 1.0):
            raise ConfigError(f"w must be in (0,1), got {self.w}")
        if not (0.0 < self.w_prime < 1.0):
            raise ConfigError(f"w_prime must be in (0,1), got {self.w_prime}")
        if self.burn_in >= self.iterations:
            raise ConfigError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.model not in (TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.distance_family not in (GEOMETRIC, POISSON):
            raise ConfigError(f"unknown distance family {self.distance_family!r}")


@dataclass
class PosteriorTrace:
    model: str
    patient_ids: list[str]
    iterations: np.ndarray
    params: dict[str, np.ndarray]
    log_post: np.ndarray
    snapshots: list[np.ndarray]
    acceptance: dict[str, dict[str, int]]
    config: SamplerConfig

    @property
    def n_retained(self) -> int:
        return len(self.log_post)


class RngStream:
    """Buffered uniform/normal draws over a numpy Generator; other
    distributions pass through. Deterministic for a fixed seed."""

    __slots__ = ("gen", "_u", "_ui", "_n", "_ni")

    def __init__(self, gen: np.random.Generator, block: int = 4096):
        self.gen = gen
        self._u = gen.random(block)
        self._ui = 0
        self._n = gen.standard_normal(block)
        self._ni = 0

    def random(self) -> float:
        i = self._ui
        if i == len(self._u):
            self._u = self.gen.random(len(self._u))
            i = 0
        self._ui = i + 1
        return self._u[i]

    def normal(self) -> float:
        i = self._ni
        if i == len(self._n):
            self._n = self.gen.standard_normal(len(self._n))
            i = 0
        self._ni = i + 1
        return self._n[i]

    def choice_index(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)

    def beta(self, a: float, b: float) -> float:
        return float(self.gen.beta(a, b))


@dataclass
class Proposal:
    """A structural proposal already applied to the engine, with its undo
    record and the log proposal ratio log q(T*->T)/q(T->T*)."""

    move: str
    log_q: float
    undo: Undo


# ---------------------------------------------------------------------------
# structural moves


def _last_col_day(eng: ChainState, j: int) -> int:
    bound = eng.disch[j]
    fp = eng.first_pos[j]
    if fp is not None and fp < bound:
        bound = fp
    for o in eng.children[j]:
        b = eng.col[o] - 1
        if b < bound:
            bound = b
    return bound


def _apply_change(
    eng: ChainState,
    j: int,
    new_col: int,
    new_src: int,
    new_phi: bool,
    new_grp: int | None,
) -> Undo:
    """Apply a change-route proposal for patient j, with genetic bookkeeping."""
    attach_changed = (eng.src[j] != new_src) or (eng.phi[j] != new_phi)
    group_changed = eng.use_groups and eng.grp[j] != new_grp
    deltas: list = []
    sub: list[int] = []
    if attach_changed or group_changed:
        sub = eng.subtree(j)
        a_rows = eng.isolates_in(sub)
        if a_rows:
            if eng.use_groups:
                if group_changed:
                    deltas = eng.genetic_move_deltas(sub, a_rows, new_grp, None, False)
            elif attach_changed:
                deltas = eng.genetic_move_deltas(
                    sub,
                    a_rows,
                    None,
                    None if new_phi else new_src,
                    new_phi,
                )
    old = eng.set_patient(j, new_col, new_src, new_phi, new_grp, eng.added[j])
    regroup = []
    if group_changed:
        # sub[0] is j itself, whose label set_patient already handles
        regroup = eng.regroup_subtree(sub[1:], new_grp)
    if deltas:
        eng.apply_bucket_deltas(deltas)
    return Undo(j=j, old=old, bucket_deltas=deltas, regroup=regroup)


def _revert_change(eng: ChainState, undo: Undo) -> None:
    eng.set_patient(undo.j, *undo.old)
    for node, g in undo.regroup:
        eng.grp[node] = g
    if undo.bucket_deltas:
        eng.revert_bucket_deltas(undo.bucket_deltas)


def move_change_route(eng: ChainState, cfg: SamplerConfig, rng: RngStream) -> Proposal | None:
    """Re-propose the colonisation route/time of one colonized patient.

    Returns None when the drawn branch is rejected outright (no available
    source on the proposed day, or no importations to cluster with).
    """
    j = eng.colonized.sample(rng)
    w, wp = cfg.w, cfg.w_prime
    use_groups = eng.use_groups

    cur_phi = eng.phi[j]
    cur_col = eng.col[j]
    l_j = _last_col_day(eng, j)
    span = l_j - eng.admit[j] + 1

    if rng.random() < w:
        # propose importation
        new_col, new_src, new_phi = eng.admit[j], IMPORTATION, True
        if use_groups:
            if rng.random() < wp:
                y = eng.y_ext(eng.admit[j])
                if not y:
                    return None
                member = y[rng.choice_index(len(y))]
                new_grp = eng.grp[member]
                kind_new = "adopt"
                n_y = len(y)
            else:
                new_grp = j
                kind_new = "own"
                n_y = len(eng.y_ext(eng.admit[j]))
        else:
            new_grp, kind_new, n_y = None, "own", 0
    else:
        # propose acquisition
        new_col = eng.admit[j] + rng.choice_index(span)
        pool = eng.pool_members(j, new_col)
        if not pool:
            return None
        new_src = pool[rng.choice_index(len(pool))]
        new_phi = False
        new_grp = eng.grp[new_src] if use_groups else None
        kind_new = "acq"
        n_y = len(eng.y_ext(eng.admit[j])) if use_groups else 0

    if cur_phi:
        kind_cur = "adopt" if (use_groups and eng.grp[j] != j) else "own"
    else:
        kind_cur = "acq"

    # proposal ratio per the transition table
    if kind_cur == "acq":
        pool_cur = eng.pool_size(j, cur_col)
        if kind_new == "acq":
            log_q = math.log(eng.pool_size(j, new_col)) - math.log(pool_cur)
        elif kind_new == "adopt":
            log_q = math.log(n_y * (1 - w)) - math.log(w * wp * span * pool_cur)
        else:
            denom = (w * (1 - wp) if use_groups else w) * span * pool_cur
            log_q = math.log(1 - w) - math.log(denom)
    elif kind_cur == "adopt":
        if n_y == 0:
            # the adopted label's donors are gone: the reverse move (re-adopt
            # via Y_ext) has probability zero, so any exit is rejected
            return None
        if kind_new == "acq":
            log_q = math.log(w * wp * span * eng.pool_size(j, new_col)) - math.log(
                n_y * (1 - w)
            )
        elif kind_new == "adopt":
            log_q = 0.0
        else:
            log_q = math.log(wp) - math.log(n_y * (1 - wp))
    else:  # current unclustered importation (or any importation without groups)
        if kind_new == "acq":
            num = (w * (1 - wp) if use_groups else w) * span * eng.pool_size(j, new_col)
            log_q = math.log(num) - math.log(1 - w)
        elif kind_new == "adopt":
            log_q = math.log((1 - wp) * n_y) - math.log(wp)
        else:
            log_q = 0.0

    undo = _apply_change(eng, j, new_col, new_src, new_phi, new_grp)
    return Proposal(MOVE_CHANGE, log_q, undo)


def move_add(eng: ChainState, cfg: SamplerConfig, rng: RngStream) -> Proposal | None:
    """Colonize a currently-negative patient (importation or acquisition)."""
    j = eng.addable.sample(rng)
    w, wp = cfg.w, cfg.w_prime
    use_groups = eng.use_groups
    n_addable = len(eng.addable)
    v0_next = eng.v_0 + 1

    if rng.random() < w:
        new_col, new_src, new_phi = eng.admit[j], IMPORTATION, True
        if use_groups:
            if rng.random() < wp:
                y = eng.y_ext(eng.admit[j])
                if not y:
                    return None
                member = y[rng.choice_index(len(y))]
                new_grp = eng.grp[member]
                log_q = math.log(n_addable * len(y)) - math.log(w * wp * v0_next)
            else:
                new_grp = j
                log_q = math.log(n_addable) - math.log(w * (1 - wp) * v0_next)
        else:
            new_grp = None
            log_q = math.log(n_addable) - math.log(w * v0_next)
    else:
        span = eng.disch[j] - eng.admit[j] + 1
        new_col = eng.admit[j] + rng.choice_index(span)
        pool = eng.pool_members(j, new_col)
        if not pool:
            return None
        new_src = pool[rng.choice_index(len(pool))]
        new_phi = False
        new_grp = eng.grp[new_src] if use_groups else None
        if new_src in eng.removable:
            # the source leaves the childless-added pool, so the reverse
            # remove move selects among v_0 rather than v_0 + 1 patients
            v0_next -= 1
        log_q = math.log(n_addable * span * len(pool)) - math.log((1 - w) * v0_next)

    old = eng.set_patient(j, new_col, new_src, new_phi, new_grp, True)
    undo = Undo(j=j, old=old)
    if eng.full_aug:
        row, log_m, deltas = eng.add_phantom_row(j, rng)
        undo.phantom_added = row
        undo.bucket_deltas = deltas
        log_q -= log_m  # M_a in the denominator
    return Proposal(MOVE_ADD, log_q, undo)


def _revert_add(eng: ChainState, undo: Undo) -> None:
    if undo.phantom_added is not None:
        row = undo.phantom_added
        eng.iso_alive[row] = False
        eng.iso_host[row] = -1
        eng.phantom_of[undo.j] = None
        eng.free_rows.append(row)
        eng.revert_bucket_deltas(undo.bucket_deltas)
    eng.set_patient(undo.j, *undo.old)


def move_remove(eng: ChainState, cfg: SamplerConfig, rng: RngStream) -> Proposal | None:
    """Un-colonize a sampler-added patient with no offspring."""
    j = eng.removable.sample(rng)
    w, wp = cfg.w, cfg.w_prime
    use_groups = eng.use_groups
    v0 = eng.v_0
    n_addable_next = len(eng.addable) + 1  # = v_s - v_a + 1

    log_m_r = eng.phantom_vector_log_m(j) if eng.full_aug else 0.0

    if eng.phi[j]:
        if use_groups and eng.grp[j] != j:
            n_y = len(eng.y_ext(eng.admit[j]))
            if n_y == 0:
                return None  # reverse clustered add has probability zero
            log_q = math.log(w * wp * v0) - math.log(n_addable_next * n_y)
        elif use_groups:
            log_q = math.log(w * (1 - wp) * v0) - math.log(n_addable_next)
        else:
            log_q = math.log(w * v0) - math.log(n_addable_next)
    else:
        span = eng.disch[j] - eng.admit[j] + 1
        pool_cur = eng.pool_size(j, eng.col[j])
        log_q = math.log(v0 * (1 - w)) - math.log(span * n_addable_next * pool_cur)
    log_q += log_m_r  # M_r in the numerator

    undo = Undo(j=j, old=())
    if eng.full_aug:
        row, values, deltas = eng.remove_phantom_row(j)
        undo.phantom_removed = (row, values)
        undo.bucket_deltas = deltas
    undo.old = eng.set_patient(j, None, None, False, None, False)
    return Proposal(MOVE_REMOVE, log_q, undo)


def _revert_remove(eng: ChainState, undo: Undo) -> None:
    eng.set_patient(undo.j, *undo.old)
    if undo.phantom_removed is not None:
        row, values = undo.phantom_removed
        eng.restore_phantom_row(undo.j, row, values)
        eng.revert_bucket_deltas(undo.bucket_deltas)


def move_change_phantom(eng: ChainState, cfg: SamplerConfig, rng: RngStream) -> Proposal | None:
    """Redraw one positive-but-unsequenced patient's phantom vector."""
    j = eng.vn_list[rng.choice_index(len(eng.vn_list))]
    row = eng.phantom_of[j]
    old_log_m = eng.phantom_vector_log_m(j)
    values, new_log_m, keys = eng.draw_phantom_vector(j, rng, exclude_row=row)
    old_values: dict[int, int] = {}
    deltas = []
    for b, d_new in values.items():
        d_old = int(eng.psi[row, b])
        old_values[b] = d_old
        if d_old != d_new:
            key = keys[b]
            deltas.append((key, d_old, -1))
            deltas.append((key, d_new, +1))
            eng.psi[row, b] = d_new
            eng.psi[b, row] = d_new
    eng.apply_bucket_deltas(deltas)
    undo = Undo(j=j, old=(), bucket_deltas=deltas, phantom_redraw=(row, old_values))
    return Proposal(MOVE_PHANTOM, old_log_m - new_log_m, undo)


def _revert_phantom(eng: ChainState, undo: Undo) -> None:
    row, old_values = undo.phantom_redraw
    for b, d in old_values.items():
        eng.psi[row, b] = d
        eng.psi[b, row] = d
    eng.revert_bucket_deltas(undo.bucket_deltas)


_MOVES = {
    MOVE_CHANGE: move_change_route,
    MOVE_ADD: move_add,
    MOVE_REMOVE: move_remove,
    MOVE_PHANTOM: move_change_phantom,
}

_REVERTS = {
    MOVE_CHANGE: _revert_change,
    MOVE_ADD: _revert_add,
    MOVE_REMOVE: _revert_remove,
    MOVE_PHANTOM: _revert_phantom,
}


def revert_proposal(eng: ChainState, proposal: Proposal) -> None:
    _REVERTS[proposal.move](eng, proposal.undo)


def accept_probability(delta_log_post: float, log_q: float, log_sel: float = 0.0) -> float:
    """min(1, exp(delta log posterior) * q_ratio * selection correction)."""
    if delta_log_post == NEG_INF:
        return 0.0
    return math.exp(min(0.0, delta_log_post + log_q + log_sel))


# ---------------------------------------------------------------------------
# parameter updates


def update_params(
    eng: ChainState,
    priors: PriorSpec,
    cfg: SamplerConfig,
    rng: RngStream,
    counters: dict[str, dict[str, int]],
) -> None:
    """One sweep of parameter updates: Gibbs for conjugate conditionals,
    random-walk MH elsewhere. Mutates the engine's parameter fields."""
    data_free = eng.data_free

    # p | Beta(a + sum_phi, b + n - sum_phi)
    if data_free:
        eng.p = rng.beta(priors.p.a, priors.p.b)
    else:
        eng.p = rng.beta(priors.p.a + eng.sum_phi, priors.p.b + eng.n - eng.sum_phi)

    # z | Beta(a + TP, b + FN)
    if data_free:
        eng.z = rng.beta(priors.z.a, priors.z.b)
    else:
        eng.z = rng.beta(priors.z.a + eng.tp, priors.z.b + eng.fn)

    _mh_log_walk(
        eng, "beta", cfg.mh_step_sizes.get("beta", 0.7),
        lambda v: eng.loglik_trans(beta=v), priors.beta.log_density, rng, counters,
    )

    if eng.model == TRANSMISSION_DIVERSITY:
        _mh_logit_walk(
            eng, "gamma", cfg.mh_step_sizes.get("gamma", 0.6),
            lambda v: eng.loglik_gen(gamma=v), priors.gamma.log_density, rng, counters,
        )
        _mh_logit_walk(
            eng, "gamma_g", cfg.mh_step_sizes.get("gamma_g", 0.6),
            lambda v: eng.loglik_gen(gamma_g=v), priors.gamma_g.log_density, rng, counters,
        )

        def k_prior(v: float) -> float:
            if priors.constrain_k and v > 1.0:
                return NEG_INF
            return priors.k.log_density(v)

        _mh_log_walk(
            eng, "k", cfg.mh_step_sizes.get("k", 0.35),
            lambda v: eng.loglik_gen(k=v), k_prior, rng, counters,
        )
    else:
        if eng.family == GEOMETRIC:
            same = eng.buckets.data.get(1)
            diff = eng.buckets.data.get(0)
            cnt_s, sum_s = (same[0], same[1]) if same else (0, 0)
            cnt_d, sum_d = (diff[0], diff[1]) if diff else (0, 0)
            if data_free:
                cnt_s = sum_s = cnt_d = sum_d = 0
            eng.gamma = rng.beta(priors.gamma.a + cnt_s, priors.gamma.b + sum_s)
            eng.gamma_g = rng.beta(priors.gamma_g.a + cnt_d, priors.gamma_g.b + sum_d)
        else:
            # Poisson family breaks Beta/geometric conjugacy
            _mh_logit_walk(
                eng, "gamma", cfg.mh_step_sizes.get("gamma", 0.6),
                lambda v: eng.loglik_gen(gamma=v), priors.gamma.log_density, rng, counters,
            )
            _mh_logit_walk(
                eng, "gamma_g", cfg.mh_step_sizes.get("gamma_g", 0.6),
                lambda v: eng.loglik_gen(gamma_g=v), priors.gamma_g.log_density, rng, counters,
            )
        n_imp = 0 if data_free else eng.sum_phi
        n_c = 0 if data_free else len(eng.grp_counter)
        eng.c = rng.beta(priors.c.a + n_c, priors.c.b + (n_imp - n_c))


def _bump(counters: dict, name: str, accepted: bool) -> None:
    c = counters.setdefault(name, {"attempted": 0, "accepted": 0})
    c["attempted"] += 1
    if accepted:
        c["accepted"] += 1


def _mh_log_walk(eng, name, step, loglik_fn, log_prior_fn, rng, counters) -> None:
    cur = getattr(eng, name)
    cand = cur * math.exp(step * rng.normal())
    delta = (
        loglik_fn(cand)
        - loglik_fn(cur)
        + log_prior_fn(cand)
        - log_prior_fn(cur)
        + math.log(cand)
        - math.log(cur)
    )
    accepted = delta >= 0.0 or rng.random() < math.exp(delta)
    if accepted:
        setattr(eng, name, cand)
    _bump(counters, f"param_{name}", accepted)


def _mh_logit_walk(eng, name, step, loglik_fn, log_prior_fn, rng, counters) -> None:
    cur = getattr(eng, name)
    x = math.log(cur) - math.log1p(-cur)
    x2 = x + step * rng.normal()
    cand = 1.0 / (1.0 + math.exp(-x2))
    if cand <= 0.0 or cand >= 1.0:
        _bump(counters, f"param_{name}", False)
        return
    delta = (
        loglik_fn(cand)
        - loglik_fn(cur)
        + log_prior_fn(cand)
        - log_prior_fn(cur)
        + math.log(cand) + math.log1p(-cand)
        - math.log(cur) - math.log1p(-cur)
    )
    accepted = delta >= 0.0 or rng.random() < math.exp(delta)
    if accepted:
        setattr(eng, name, cand)
    _bump(counters, f"param_{name}", accepted)


# ---------------------------------------------------------------------------
# chain driver


def _initial_engine(
    dataset: Dataset, model: str, cfg: SamplerConfig, rng: RngStream
) -> ChainState:
    eng = ChainState(
        dataset,
        model,
        family=cfg.distance_family,
        full_augmentation=cfg.full_augmentation,
        phantom_pmf_gamma=cfg.phantom_pmf_gamma,
        phantom_pmf_gamma_g=cfg.phantom_pmf_gamma_g,
    )
    eng.data_free = cfg.data_free
    eng.initialize_observed_positives()
    eng.init_phantoms(rng)
    eng.recompute_all()
    return eng


def _init_params(eng: ChainState, priors: PriorSpec) -> None:
    eng.p = priors.p.mean
    eng.z = priors.z.mean
    eng.gamma = priors.gamma.mean
    eng.gamma_g = priors.gamma_g.mean
    eng.c = priors.c.mean
    eng.beta = 0.01
    eng.k = 1.0


def run_chain(
    dataset: Dataset,
    model: str | None = None,
    priors: PriorSpec | None = None,
    cfg: SamplerConfig | None = None,
) -> PosteriorTrace:
    """Run one MCMC chain and return the retained trace.

    Deterministic for a fixed config (seed included). Initializes every
    positively screened patient as an importation of its own group, with
    parameters at their prior means (beta at 0.01 and k at 1.0, where the
    exponential prior mean would be degenerate).

    Raises:
        InitializationError: if the starting state has zero likelihood.
    """
    cfg = cfg or SamplerConfig()
    model = model or cfg.model
    if model != cfg.model:
        cfg = replace(cfg, model=model)
    cfg.check()
    priors = priors or PriorSpec()

    gen = np.random.default_rng(cfg.seed)
    rng = RngStream(gen)
    eng = _initial_engine(dataset, model, cfg, rng)
    _init_params(eng, priors)

    lp = eng.log_posterior(priors)
    if lp == NEG_INF:
        raise InitializationError(
            "initial state (observed positives as importations) has zero posterior"
        )

    counters: dict[str, dict[str, int]] = {}
    retained_iters: list[int] = []
    kept_params: dict[str, list[float]] = {
        name: [] for name in ("p", "z", "beta", "gamma", "gamma_g", "k", "c")
    }
    kept_lp: list[float] = []
    snapshots: list[np.ndarray] = []

    use_k = model == TRANSMISSION_DIVERSITY
    debug = cfg.debug_validate

    for it in range(1, cfg.iterations + 1):
        moves = eng.applicable_moves()
        if moves:
            napp_old = len(moves)
            name = moves[rng.choice_index(napp_old)]
            proposal = _MOVES[name](eng, cfg, rng)
            if proposal is None:
                _bump(counters, name, False)
            else:
                lp_new = eng.log_posterior(priors)
                log_sel = math.log(napp_old) - math.log(eng.n_applicable_moves())
                if lp_new == NEG_INF:
                    alpha = 0.0
                else:
                    alpha = accept_probability(lp_new - lp, proposal.log_q, log_sel)
                if alpha >= 1.0 or rng.random() < alpha:
                    lp = lp_new
                    _bump(counters, name, True)
                    if debug:
                        _debug_check(eng, priors, lp)
                else:
                    revert_proposal(eng, proposal)
                    _bump(counters, name, False)

        update_params(eng, priors, cfg, rng, counters)
        lp = eng.log_posterior(priors)

        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            retained_iters.append(it)
            kept_params["p"].append(eng.p)
            kept_params["z"].append(eng.z)
            kept_params["beta"].append(eng.beta)
            kept_params["gamma"].append(eng.gamma)
            kept_params["gamma_g"].append(eng.gamma_g)
            kept_params["k"].append(eng.k if use_k else math.nan)
            kept_params["c"].append(eng.c if eng.use_groups else math.nan)
            kept_lp.append(lp)
            snapshots.append(eng.snapshot_array())

    return PosteriorTrace(
        model=model,
        patient_ids=[e.patient_id for e in dataset.episodes],
        iterations=np.asarray(retained_iters, dtype=np.int64),
        params={k: np.asarray(v) for k, v in kept_params.items()},
        log_post=np.asarray(kept_lp),
        snapshots=snapshots,
        acceptance=counters,
        config=cfg,
    )


def _debug_check(eng: ChainState, priors: PriorSpec, lp: float) -> None:
    """Cross-check incremental aggregates against the reference likelihood."""
    st = eng.export_state()
    problems = validate_state(st, eng.dataset)
    if problems:
        raise AssertionError("state invariant violated: " + "; ".join(problems))
    if eng.data_free:
        return
    ref = total_log_posterior(
        st, eng.dataset, eng.current_params(), eng.model, priors,
        include_phantoms=eng.full_aug,
    )
    if not math.isclose(ref, lp, rel_tol=0.0, abs_tol=1e-9 * max(1.0, abs(ref))):
        raise AssertionError(f"incremental log posterior {lp} != reference {ref}")


# ---------------------------------------------------------------------------
# trace persistence


def write_params_csv(trace: PosteriorTrace, path) -> None:
    cols = ["iteration", "p", "z", "beta", "gamma", "gamma_G", "k", "c", "log_post"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(trace.n_retained):
            row = [
                str(int(trace.iterations[i])),
                repr(float(trace.params["p"][i])),
                repr(float(trace.params["z"][i])),
                repr(float(trace.params["beta"][i])),
                repr(float(trace.params["gamma"][i])),
                repr(float(trace.params["gamma_g"][i])),
                "" if math.isnan(trace.params["k"][i]) else repr(float(trace.params["k"][i])),
                "" if math.isnan(trace.params["c"][i]) else repr(float(trace.params["c"][i])),
                repr(float(trace.log_post[i])),
            ]
            fh.write(",".join(row) + "\n")


def write_trees_jsonl(trace: PosteriorTrace, path) -> None:
    ids = trace.patient_ids
    with open(path, "w", encoding="utf-8") as fh:
        for i, snap in enumerate(trace.snapshots):
            patients = {}
            for j, col, src, phi, grp in snap.tolist():
                patients[ids[j]] = {
                    "col_day": col,
                    "source": None if src < 0 else ids[src],
                    "import_flag": bool(phi),
                    "group": None if grp < 0 else ids[grp],
                }
            fh.write(
                json.dumps(
                    {"iteration": int(trace.iterations[i]), "patients": patients},
                    separators=(",", ":"),
                )
                + "\n"
            )


def write_acceptance_json(trace: PosteriorTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.acceptance, fh, indent=2, sort_keys=True)
