"""Structural move tests: pinned proposal ratios, reversibility, and
incremental-aggregate consistency against full recomputation."""

from __future__ import annotations

import copy
import math

import numpy as np
import pytest

from wardtrace.engine import ChainState
from wardtrace.likelihood import IMPORTATION_STRUCTURE, TRANSMISSION_DIVERSITY
from wardtrace.mcmc import (
    RngStream,
    SamplerConfig,
    _initial_engine,
    accept_probability,
    move_add,
    move_change_phantom,
    move_change_route,
    move_remove,
    revert_proposal,
    update_params,
)
from wardtrace.priors import ExponentialPrior, PriorSpec

MODERATE_PRIORS = PriorSpec(beta=ExponentialPrior(1.0), k=ExponentialPrior(1.0))
from wardtrace.state import IMPORTATION

from conftest import make_dataset


class ScriptedRng:
    """Feeds a fixed queue of uniforms to the move functions."""

    def __init__(self, uniforms):
        self.queue = list(uniforms)

    def random(self):
        return self.queue.pop(0)

    def choice_index(self, n):
        return min(int(self.random() * n), n - 1)

    def normal(self):
        return 0.0

    def beta(self, a, b):
        return a / (a + b)


def build_engine(dataset, model=TRANSMISSION_DIVERSITY, seed=0, **cfg_kw):
    cfg = SamplerConfig(iterations=10, burn_in=1, seed=seed, model=model, **cfg_kw)
    rng = RngStream(np.random.default_rng(seed))
    eng = _initial_engine(dataset, model, cfg, rng)
    return eng, cfg, rng


def pick_u(items, target):
    """Uniform that makes choice_index(len(items)) select ``target``."""
    idx = list(items).index(target)
    return (idx + 0.5) / len(items)


# ---------------------------------------------------------------------------
# pinned q-ratio examples


def test_change_acq_to_acq_ratio():
    eps = [(f"S{i}", 0, 9 if i < 2 else 3, [(0, "pos")]) for i in range(4)]
    eps.append(("J", 0, 9, [(9, "pos")]))
    d = make_dataset(eps)
    eng, cfg, _ = build_engine(d)
    j = d.patient_index("J")
    eng.set_patient(j, 2, d.patient_index("S0"), False, None, False)
    assert eng.pool_size(j, 2) == 4 and eng.pool_size(j, 6) == 2

    rng = ScriptedRng([pick_u(eng.colonized.items, j), 0.99, 0.65, 0.0])
    prop = move_change_route(eng, cfg, rng)
    assert prop.log_q == pytest.approx(math.log(2 / 4), abs=1e-12)


def test_change_own_import_to_own_import_ratio_is_one():
    d = make_dataset([("A", 0, 9, [(0, "pos")]), ("B", 0, 9, [(0, "pos")])])
    eng, cfg, _ = build_engine(d, model=IMPORTATION_STRUCTURE)
    j = d.patient_index("A")
    rng = ScriptedRng([pick_u(eng.colonized.items, j), 0.01, 0.99])
    prop = move_change_route(eng, cfg, rng)
    assert prop.log_q == 0.0


def test_change_acq_to_unclustered_import_ratio():
    # w=0.3, w'=0.5, l - t^a + 1 = 6, pool(t^c) = 2 -> 0.7 / (0.3*0.5*6*2)
    d = make_dataset(
        [
            ("S1", 0, 9, [(0, "pos")]),
            ("S2", 0, 9, [(0, "pos")]),
            ("J", 0, 9, [(5, "pos")]),
        ]
    )
    eng, cfg, _ = build_engine(d, model=IMPORTATION_STRUCTURE)
    j = d.patient_index("J")
    eng.set_patient(j, 2, d.patient_index("S1"), False, d.patient_index("S1"), False)
    for node, g in [(j, eng.grp[d.patient_index("S1")])]:
        eng.grp[node] = g
    rng = ScriptedRng([pick_u(eng.colonized.items, j), 0.01, 0.99])
    prop = move_change_route(eng, cfg, rng)
    assert prop.log_q == pytest.approx(
        math.log(0.7 / (0.3 * 0.5 * 6 * 2)), abs=1e-12
    )
    assert math.exp(prop.log_q) == pytest.approx(0.38888888, abs=1e-6)


def add_fixture_dataset(n_extra_addable, model, x_added=2):
    eps = [
        ("S1", 0, 9, [(0, "pos")]),
        ("S2", 0, 9, [(0, "pos")]),
        ("J", 0, 4, []),
    ]
    eps += [(f"X{i}", 0, 9, []) for i in range(x_added)]
    eps += [(f"N{i}", 0, 9, []) for i in range(n_extra_addable)]
    d = make_dataset(eps)
    eng, cfg, rng = build_engine(d, model=model)
    s1 = d.patient_index("S1")
    for i in range(x_added):
        x = d.patient_index(f"X{i}")
        grp = eng.grp[s1] if eng.use_groups else None
        eng.set_patient(x, 8, s1, False, grp, True)
    return d, eng, cfg


def test_add_acquisition_ratio():
    # v_s - v_a = 10, v_0 + 1 = 3, episode length 5, pool = 2, w = 0.3
    d, eng, cfg = add_fixture_dataset(n_extra_addable=9, model=TRANSMISSION_DIVERSITY)
    assert len(eng.addable) == 10 and eng.v_0 == 2
    j = d.patient_index("J")
    pool = eng.pool_members(j, 2)
    assert len(pool) == 2
    rng = ScriptedRng([pick_u(eng.addable.items, j), 0.99, 0.5, 0.0])
    prop = move_add(eng, cfg, rng)
    assert math.exp(prop.log_q) == pytest.approx(10 * 5 * 2 / (0.7 * 3), abs=1e-9)
    assert math.exp(prop.log_q) == pytest.approx(47.619, abs=1e-2)


def test_add_clustered_import_rejected_without_externals():
    d = make_dataset([("S1", 0, 9, [(0, "pos")]), ("J", 0, 4, [])])
    eng, cfg, _ = build_engine(d, model=IMPORTATION_STRUCTURE)
    j = d.patient_index("J")
    assert eng.y_ext(eng.admit[j]) == []  # S1 admitted the same day, not before
    rng = ScriptedRng([pick_u(eng.addable.items, j), 0.01, 0.01])
    assert move_add(eng, cfg, rng) is None


def test_add_unclustered_import_ratio():
    # v_s - v_a = 4, w = 0.3, w' = 0.5, v_0 + 1 = 2 -> 13.33
    d, eng, cfg = add_fixture_dataset(
        n_extra_addable=3, model=IMPORTATION_STRUCTURE, x_added=1
    )
    assert len(eng.addable) == 4 and eng.v_0 == 1
    j = d.patient_index("J")
    rng = ScriptedRng([pick_u(eng.addable.items, j), 0.01, 0.99])
    prop = move_add(eng, cfg, rng)
    assert math.exp(prop.log_q) == pytest.approx(4 / (0.3 * 0.5 * 2), abs=1e-9)


def test_remove_acquisition_ratio():
    # v_0 = 2, w = 0.3, episode length 5, v_s - v_a + 1 = 11, pool = 1
    eps = [
        ("S1", 0, 9, [(0, "pos")]),
        ("X0", 0, 4, []),
        ("X1", 0, 9, []),
    ]
    eps += [(f"N{i}", 0, 9, []) for i in range(10)]
    d = make_dataset(eps)
    eng, cfg, _ = build_engine(d)
    s1 = d.patient_index("S1")
    x0, x1 = d.patient_index("X0"), d.patient_index("X1")
    eng.set_patient(x0, 2, s1, False, None, True)
    eng.set_patient(x1, 8, s1, False, None, True)
    assert eng.v_0 == 2 and len(eng.addable) == 10
    assert eng.pool_size(x0, 2) == 1
    rng = ScriptedRng([pick_u(eng.removable.items, x0)])
    prop = move_remove(eng, cfg, rng)
    assert math.exp(prop.log_q) == pytest.approx(2 * 0.7 / (5 * 11 * 1), abs=1e-9)
    assert math.exp(prop.log_q) == pytest.approx(0.025454, abs=1e-5)


def test_remove_never_proposes_patient_with_offspring():
    d = make_dataset(
        [("S1", 0, 9, [(0, "pos")]), ("X0", 0, 9, []), ("X1", 0, 9, [])]
    )
    eng, cfg, _ = build_engine(d)
    s1, x0, x1 = (d.patient_index(p) for p in ("S1", "X0", "X1"))
    eng.set_patient(x0, 2, s1, False, None, True)
    eng.set_patient(x1, 5, x0, False, None, True)  # x0 now has offspring
    assert x0 not in eng.removable and x1 in eng.removable
    assert eng.v_0 == 1


def test_phantom_redraw_ratio():
    d = make_dataset(
        [("A", 0, 9, [(0, "pos")]), ("B", 0, 9, [(2, "pos")])],
        isolates=[("iA", "A", 0)],
    )
    cfg = SamplerConfig(
        iterations=10,
        burn_in=1,
        model=TRANSMISSION_DIVERSITY,
        full_augmentation=True,
        phantom_pmf_gamma=0.2,
        phantom_pmf_gamma_g=0.2,
    )
    init_rng = ScriptedRng([0.3])  # phantom init draw: distance 1
    eng = _initial_engine(d, TRANSMISSION_DIVERSITY, cfg, init_rng)
    b = d.patient_index("B")
    row = eng.phantom_of[b]
    assert int(eng.psi[row, 0]) == 1
    # redraw to distance 0: q = pmf(1)/pmf(0) = 0.8
    rng = ScriptedRng([pick_u(eng.vn_list, b), 0.1])
    prop = move_change_phantom(eng, cfg, rng)
    assert math.exp(prop.log_q) == pytest.approx(0.8, abs=1e-12)
    assert int(eng.psi[row, 0]) == 0


def test_accept_probability_example():
    assert accept_probability(math.log(2.0), math.log(0.25)) == pytest.approx(0.5)
    assert accept_probability(-math.inf, 0.0) == 0.0
    assert accept_probability(0.0, 0.0) == 1.0


# ---------------------------------------------------------------------------
# reversibility: forward q times reverse q equals one


def random_engine(seed, model, full_aug=False):
    gen = np.random.default_rng(seed)
    n = 10
    eps = []
    for i in range(n):
        admit = int(gen.integers(0, 12))
        disch = admit + int(gen.integers(2, 9))
        screens = []
        if i < 4:
            day = int(gen.integers(admit, disch + 1))
            screens.append((day, "pos"))
        else:
            # negative screens keep 'colonize everyone' states improbable
            for day in range(admit, disch + 1, 3):
                screens.append((day, "neg"))
        eps.append((f"P{i}", admit, disch, screens))
    isolates, distances = [], {}
    for i in range(3 if full_aug else 4):
        pid, _, _, screens = eps[i]
        if screens:
            isolates.append((f"i{i}", pid, screens[0][0]))
    for a in range(len(isolates)):
        for b in range(a + 1, len(isolates)):
            distances[(isolates[a][0], isolates[b][0])] = int(gen.integers(0, 12))
    d = make_dataset(eps, isolates=isolates, distances=distances)
    eng, cfg, rng = build_engine(d, model=model, seed=seed, full_augmentation=full_aug)
    # a diffuse transmission prior colonizes everyone on tiny data; keep the
    # walk in a regime where all move kinds stay exercised
    priors = MODERATE_PRIORS
    #散step the chain into a non-trivial region
    from wardtrace.mcmc import _MOVES

    counters = {}
    lp = eng.log_posterior(priors)
    for _ in range(400):
        moves = eng.applicable_moves()
        name = moves[rng.choice_index(len(moves))]
        prop = _MOVES[name](eng, cfg, rng)
        if prop is None:
            continue
        lp_new = eng.log_posterior(priors)
        napp = eng.n_applicable_moves()
        alpha = accept_probability(lp_new - lp, prop.log_q)
        if rng.random() < alpha:
            lp = lp_new
        else:
            revert_proposal(eng, prop)
        update_params(eng, priors, cfg, rng, counters)
        lp = eng.log_posterior(priors)
    return d, eng, cfg, rng


def script_change_back(eng, cfg, j, old_col, old_src, old_phi, old_grp):
    """Uniform queue making move_change_route re-propose the old config."""
    w, wp = cfg.w, cfg.w_prime
    us = [pick_u(eng.colonized.items, j)]
    if old_phi:
        us.append(w / 2)
        if eng.use_groups:
            if old_grp != j:
                us.append(wp / 2)
                y = eng.y_ext(eng.admit[j])
                member = next(i for i in y if eng.grp[i] == old_grp)
                us.append(pick_u(y, member))
            else:
                us.append(wp + (1 - wp) / 2)
    else:
        us.append(w + (1 - w) / 2)
        from wardtrace.mcmc import _last_col_day

        span = _last_col_day(eng, j) - eng.admit[j] + 1
        us.append((old_col - eng.admit[j] + 0.5) / span)
        pool = eng.pool_members(j, old_col)
        us.append(pick_u(pool, old_src))
    return ScriptedRng(us)


@pytest.mark.parametrize("model", [TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE])
@pytest.mark.parametrize("seed", [11, 23, 87])
def test_change_route_reversibility(model, seed):
    d, eng, cfg, rng = random_engine(seed, model)
    checked = 0
    for _ in range(200):
        if not len(eng.colonized):
            break
        prop = move_change_route(eng, cfg, rng)
        if prop is None:
            continue
        j = prop.undo.j
        old = prop.undo.old[:4]  # (col, src, phi, grp)
        if old[2] and eng.use_groups and old[3] != j:
            # adopted importation: the reverse path re-adopts the old label
            # from Y_ext, which only exists while some member still carries it
            if not any(eng.grp[i] == old[3] for i in eng.y_ext(eng.admit[j])):
                revert_proposal(eng, prop)
                continue
        back = script_change_back(eng, cfg, j, *old)
        prop2 = move_change_route(eng, cfg, back)
        assert prop2 is not None
        assert (eng.col[j], eng.src[j], eng.phi[j], eng.grp[j]) == old
        assert prop.log_q + prop2.log_q == pytest.approx(0.0, abs=1e-9)
        revert_proposal(eng, prop2)
        revert_proposal(eng, prop)
        checked += 1
    assert checked > 50


@pytest.mark.parametrize("model", [TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE])
@pytest.mark.parametrize("full_aug", [False, True])
def test_add_remove_reversibility(model, full_aug):
    d, eng, cfg, rng = random_engine(5, model, full_aug=full_aug)
    checked = 0
    for _ in range(300):
        if not len(eng.addable):
            break
        prop = move_add(eng, cfg, rng)
        if prop is None:
            continue
        j = prop.undo.j
        back = ScriptedRng([pick_u(eng.removable.items, j)])
        prop2 = move_remove(eng, cfg, back)
        assert eng.col[j] is None
        assert prop.log_q + prop2.log_q == pytest.approx(0.0, abs=1e-9)
        revert_proposal(eng, prop2)
        revert_proposal(eng, prop)
        checked += 1
    assert checked > 100


# ---------------------------------------------------------------------------
# incremental aggregates equal full recomputation after every move


def assert_aggregates_consistent(eng: ChainState):
    ref = copy.deepcopy(eng)
    ref.recompute_all()
    assert eng.s_ce == ref.s_ce
    assert eng.exposure == ref.exposure
    assert [set(s) for s in eng.day_trans] == [set(s) for s in ref.day_trans]
    assert eng.acq_days == ref.acq_days
    assert (eng.tp, eng.fn, eng.fp) == (ref.tp, ref.fn, ref.fp)
    assert eng.sum_phi == ref.sum_phi
    assert eng.grp_counter == ref.grp_counter
    assert eng.v_a == ref.v_a
    assert set(eng.colonized.items) == set(ref.colonized.items)
    assert set(eng.addable.items) == set(ref.addable.items)
    assert set(eng.removable.items) == set(ref.removable.items)
    assert set(eng.buckets.data) == set(ref.buckets.data)
    for key, (cnt, sumpsi, sumlf) in ref.buckets.data.items():
        got = eng.buckets.data[key]
        assert got[0] == cnt and got[1] == sumpsi
        assert got[2] == pytest.approx(sumlf, abs=1e-9)


@pytest.mark.parametrize("model", [TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE])
@pytest.mark.parametrize("full_aug", [False, True])
def test_aggregates_match_recompute_after_moves(model, full_aug):
    from wardtrace.mcmc import _MOVES

    d, eng, cfg, rng = random_engine(99, model, full_aug=full_aug)
    priors = MODERATE_PRIORS
    lp = eng.log_posterior(priors)
    for step in range(150):
        moves = eng.applicable_moves()
        name = moves[rng.choice_index(len(moves))]
        prop = _MOVES[name](eng, cfg, rng)
        if prop is not None:
            lp_new = eng.log_posterior(priors)
            alpha = accept_probability(lp_new - lp, prop.log_q)
            if rng.random() < alpha:
                lp = lp_new
            else:
                revert_proposal(eng, prop)
        if step % 10 == 0:
            assert_aggregates_consistent(eng)
    assert_aggregates_consistent(eng)
