"""Forward simulation of ward outbreaks under both genetic models.

Generates patient episodes (uniform admission days, Poisson lengths of
stay), importations with probability p, daily acquisitions at rate
beta * C(t) with the source drawn uniformly from the patients able to
transmit, screening every x days with sensitivity z, and pairwise SNP
distances drawn per the model: within a chain Geom(gamma * k^tau) at
tree distance tau (transmission diversity) or Geom(gamma) within a
group (importation structure), and Geom(gamma_G) across chains/groups.
Repeat isolates from one host differ from the previous one by a
Geom(gamma) increment; all other new pairs are drawn independently.

Also provides the uninformed baseline tree (equal weight on every
census member at the known infection time) and Poisson perturbation of
distance matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DistanceMatrix, EpisodeRecord, IsolateRecord, Screen
from .likelihood import (
    GEOMETRIC,
    IMPORTATION_STRUCTURE,
    TRANSMISSION_DIVERSITY,
    ModelParams,
)
from .state import IMPORTATION, AugmentedState, census, validate

SEQUENCE_EVERY_POSITIVE = "every_positive"
SEQUENCE_FIRST_POSITIVE = "first_positive"


@dataclass(frozen=True)
class ScenarioConfig:
    """Forward-simulation scenario."""

    n_patients: int
    horizon_days: int
    params: ModelParams
    model: str = TRANSMISSION_DIVERSITY
    mean_los: float = 7.0
    screen_interval: int = 3
    seed: int = 0
    sequencing: str = SEQUENCE_EVERY_POSITIVE

    def check(self) -> None:
        if self.n_patients < 1 or self.horizon_days < 1:
            raise ValueError("n_patients and horizon_days must be positive")
        if self.mean_los <= 0:
            raise ValueError("mean_los must be positive")
        if self.screen_interval < 1:
            raise ValueError("screen_interval must be >= 1")
        if self.sequencing not in (SEQUENCE_EVERY_POSITIVE, SEQUENCE_FIRST_POSITIVE):
            raise ValueError(f"unknown sequencing policy {self.sequencing!r}")
        if self.model not in (TRANSMISSION_DIVERSITY, IMPORTATION_STRUCTURE):
            raise ValueError(f"unknown model {self.model!r}")
        p = self.params
        for name, value, lo, hi in [
            ("p", p.p, 0.0, 1.0),
            ("z", p.z, 0.0, 1.0),
            ("gamma", p.gamma, 0.0, 1.0),
            ("gamma_g", p.gamma_g, 0.0, 1.0),
        ]:
            if not (lo <= value <= hi) or (name in ("gamma", "gamma_g") and value == 0):
                raise ValueError(f"parameter {name}={value} outside its domain")
        if p.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.model == TRANSMISSION_DIVERSITY and (p.k is None or p.k < 0):
            raise ValueError("transmission diversity model requires k >= 0")
        if self.model == IMPORTATION_STRUCTURE and (
            p.c is None or not (0.0 <= p.c <= 1.0)
        ):
            raise ValueError("importation structure model requires c in [0,1]")


@dataclass
class SimulatedTruth:
    """A simulated dataset together with the generating latent state."""

    dataset: Dataset
    true_state: AugmentedState


class _Outbreak:
    """Colonization process plus lazy isolate/distance generation."""

    def __init__(self, episodes: list[EpisodeRecord], params: ModelParams, model: str,
                 rng: np.random.Generator):
        self.eps = episodes
        self.params = params
        self.model = model
        self.rng = rng
        n = len(episodes)
        self.col: list[int | None] = [None] * n
        self.src: list[int | None] = [None] * n
        self.phi: list[bool] = [False] * n
        self.grp: list[int | None] = [None] * n
        self.children: list[list[int]] = [[] for _ in range(n)]
        self.import_order: list[int] = []

    def run_colonization(self) -> None:
        eps, rng, params = self.eps, self.rng, self.params
        use_groups = self.model == IMPORTATION_STRUCTURE
        by_admit: dict[int, list[int]] = {}
        for j, e in enumerate(eps):
            by_admit.setdefault(e.admit_day, []).append(j)
        last_day = max(e.discharge_day for e in eps)
        transmitters: set[int] = set()
        susceptible: set[int] = set()
        new_today: list[int] = []

        for t in range(0, last_day + 1):
            # discharges from the previous day
            for j in list(transmitters):
                if eps[j].discharge_day < t:
                    transmitters.discard(j)
            for j in list(susceptible):
                if eps[j].discharge_day < t:
                    susceptible.discard(j)

            # admissions: importation decisions
            for j in by_admit.get(t, ()):
                if rng.random() < params.p:
                    self.col[j] = t
                    self.src[j] = IMPORTATION
                    self.phi[j] = True
                    if use_groups:
                        if self.import_order and rng.random() < params.c:
                            donor = self.import_order[
                                int(rng.random() * len(self.import_order))
                            ]
                            self.grp[j] = self.grp[donor]
                        else:
                            self.grp[j] = j
                    self.import_order.append(j)
                    transmitters.add(j)
                else:
                    susceptible.add(j)

            c_t = len(transmitters)
            if c_t and susceptible:
                p_acq = -math.expm1(-params.beta * c_t)
                pool = sorted(s for s in transmitters if self.col[s] <= t - 1)
                if pool and p_acq > 0.0:
                    for j in sorted(susceptible):
                        if rng.random() < p_acq:
                            src = pool[int(rng.random() * len(pool))]
                            self.col[j] = t
                            self.src[j] = src
                            self.children[src].append(j)
                            if use_groups:
                                self.grp[j] = self.grp[src]
                            susceptible.discard(j)
                            if t + 1 <= eps[j].discharge_day:
                                new_today.append(j)

            # acquisitions start transmitting the day after colonization
            transmitters.update(new_today)
            new_today.clear()

    def tree_distance(self, a: int, b: int) -> float:
        if a == b:
            return 0
        seen = {}
        node, depth = a, 0
        while True:
            seen[node] = depth
            s = self.src[node]
            if s == IMPORTATION:
                break
            node, depth = s, depth + 1
        node, depth = b, 0
        while True:
            if node in seen:
                return seen[node] + depth
            s = self.src[node]
            if s == IMPORTATION:
                return math.inf
            node, depth = s, depth + 1

    def chain_distances_from(self, a: int) -> dict[int, int]:
        """BFS distances from host a over its whole transmission chain."""
        dist = {a: 0}
        frontier = [a]
        while frontier:
            nxt = []
            for node in frontier:
                d = dist[node] + 1
                s = self.src[node]
                neighbors = list(self.children[node])
                if s is not None and s != IMPORTATION:
                    neighbors.append(s)
                for nb in neighbors:
                    if nb not in dist:
                        dist[nb] = d
                        nxt.append(nb)
            frontier = nxt
        return dist

    def pair_q(self, host_a: int, host_b: int) -> float:
        params = self.params
        if self.model == IMPORTATION_STRUCTURE:
            return params.gamma if self.grp[host_a] == self.grp[host_b] else params.gamma_g
        tau = self.tree_distance(host_a, host_b)
        if math.isinf(tau):
            return params.gamma_g
        return params.gamma * params.k**tau

    def pair_q_from(self, dist_map: dict[int, int], host_b: int) -> float:
        params = self.params
        tau = dist_map.get(host_b)
        if tau is None:
            return params.gamma_g
        return params.gamma * params.k**tau


def _screen_days(e: EpisodeRecord, interval: int) -> list[int]:
    return list(range(e.admit_day, e.discharge_day + 1, interval))


def _simulate_screens(
    outbreak: _Outbreak, days_by_patient: list[list[int]], rng: np.random.Generator
) -> list[list[Screen]]:
    z = outbreak.params.z
    screens: list[list[Screen]] = []
    for j, days in enumerate(days_by_patient):
        col = outbreak.col[j]
        result = []
        for day in days:
            detectable = col is not None and day >= col
            positive = detectable and rng.random() < z
            result.append(Screen(day, positive))
        screens.append(result)
    return screens


def _simulate_isolates(
    outbreak: _Outbreak,
    screens: list[list[Screen]],
    sequencing: str,
    rng: np.random.Generator,
):
    """Create sequenced isolates in sampling order and draw their distances.

    Returns (records, hosts, distance matrix values).
    """
    events: list[tuple[int, int]] = []  # (day, patient)
    for j, patient_screens in enumerate(screens):
        taken = False
        for s in patient_screens:
            if not s.positive:
                continue
            events.append((s.day, j))
            taken = True
            if sequencing == SEQUENCE_FIRST_POSITIVE and taken:
                break
    events.sort()

    hosts: list[int] = []
    days: list[int] = []
    values: list[np.ndarray] = []
    last_isolate_of: dict[int, int] = {}
    gamma = outbreak.params.gamma
    use_groups = outbreak.model == IMPORTATION_STRUCTURE
    for day, j in events:
        x = len(hosts)
        prev = last_isolate_of.get(j)
        if x:
            if use_groups:
                gj = outbreak.grp[j]
                qs = np.array(
                    [
                        gamma if gj == outbreak.grp[h] else outbreak.params.gamma_g
                        for h in hosts
                    ]
                )
            else:
                dist_map = outbreak.chain_distances_from(j)
                qs = np.array([outbreak.pair_q_from(dist_map, h) for h in hosts])
            if prev is not None:
                qs[prev] = gamma
            if np.any(qs > 1.0) or np.any(qs <= 0.0):
                raise ValueError(
                    "pair distance parameter gamma*k**tau left (0,1]; "
                    "check gamma and k"
                )
            u = rng.random(x)
            row = np.floor(np.log1p(-u) / np.log1p(-np.minimum(qs, 1.0 - 1e-15))).astype(
                np.int64
            )
            row[qs >= 1.0] = 0
        else:
            row = np.zeros(0, dtype=np.int64)
        hosts.append(j)
        days.append(day)
        values.append(row)
        last_isolate_of[j] = x

    n_s = len(hosts)
    matrix = np.zeros((n_s, n_s), dtype=np.int64)
    for x in range(n_s):
        matrix[x, :x] = values[x]
        matrix[:x, x] = values[x]
    return hosts, days, matrix


def simulate_outbreak(cfg: ScenarioConfig) -> SimulatedTruth:
    """Simulate one outbreak dataset plus its generating tree.

    The output always satisfies dataset and state validation; day 0 is the
    first admission.
    """
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_patients

    admits = rng.integers(0, cfg.horizon_days, size=n)
    admits = np.sort(admits) - int(admits.min())
    los = rng.poisson(cfg.mean_los, size=n)
    episodes = [
        EpisodeRecord(f"P{i + 1:04d}", int(admits[i]), int(admits[i] + los[i]))
        for i in range(n)
    ]

    outbreak = _Outbreak(episodes, cfg.params, cfg.model, rng)
    outbreak.run_colonization()
    days_by_patient = [_screen_days(e, cfg.screen_interval) for e in episodes]
    screens = _simulate_screens(outbreak, days_by_patient, rng)
    hosts, sample_days, matrix = _simulate_isolates(outbreak, screens, cfg.sequencing, rng)

    episodes = [
        EpisodeRecord(e.patient_id, e.admit_day, e.discharge_day, tuple(screens[j]))
        for j, e in enumerate(episodes)
    ]
    isolates = [
        IsolateRecord(f"I{x + 1:04d}", episodes[hosts[x]].patient_id, sample_days[x])
        for x in range(len(hosts))
    ]
    dataset = Dataset(
        episodes,
        isolates,
        DistanceMatrix(tuple(iso.isolate_id for iso in isolates), matrix),
        (0, max(e.discharge_day for e in episodes)),
    )
    state = AugmentedState(
        col_day=list(outbreak.col),
        source=list(outbreak.src),
        import_flag=list(outbreak.phi),
        group=list(outbreak.grp),
        added_by_sampler=[False] * n,
    )
    return SimulatedTruth(dataset, state)


def uninformed_tree(truth: SimulatedTruth) -> dict[tuple[str, str], float]:
    """Baseline edge weights: for each true acquisition, every patient in
    the census at the (known) colonization day gets weight 1/C(t_c)."""
    d = truth.dataset
    st = truth.true_state
    cens = census(st, d)
    ids = [e.patient_id for e in d.episodes]
    edges: dict[tuple[str, str], float] = {}
    for j in range(st.n_patients):
        c = st.col_day[j]
        if c is None or st.import_flag[j]:
            continue
        members = [
            i
            for i in range(st.n_patients)
            if i != j and _transmits_on(st, d, i, c)
        ]
        if not members:
            continue
        weight = 1.0 / len(members)
        for i in members:
            edges[(ids[i], ids[j])] = weight
    return edges


def _transmits_on(st: AugmentedState, d: Dataset, i: int, day: int) -> bool:
    c = st.col_day[i]
    if c is None:
        return False
    e = d.episodes[i]
    start = e.admit_day if st.import_flag[i] else c + 1
    return start <= day <= e.discharge_day


def perturb_distances(
    matrix: DistanceMatrix, noise_mean: float, seed: int
) -> DistanceMatrix:
    """Add independent Poisson(noise_mean) errors to each unordered pair,
    preserving symmetry and the zero diagonal."""
    if noise_mean < 0:
        raise ValueError("noise_mean must be nonnegative")
    values = matrix.values.copy()
    n = values.shape[0]
    if noise_mean > 0 and n > 1:
        rng = np.random.default_rng(seed)
        for a in range(n):
            for b in range(a + 1, n):
                noise = int(rng.poisson(noise_mean))
                values[a, b] += noise
                values[b, a] += noise
    return DistanceMatrix(matrix.ids, values)


def simulate_on_schedule(
    dataset: Dataset,
    params: ModelParams,
    model: str,
    rng: np.random.Generator,
    sequencing: str = SEQUENCE_FIRST_POSITIVE,
):
    """Simulate a replica outbreak on an observed admission/discharge and
    screening-day schedule (posterior predictive use).

    Returns (screens_by_patient, isolate_hosts, distance_matrix_values).
    """
    outbreak = _Outbreak(list(dataset.episodes), params, model, rng)
    outbreak.run_colonization()
    days_by_patient = [[s.day for s in e.screens] for e in dataset.episodes]
    screens = _simulate_screens(outbreak, days_by_patient, rng)
    hosts, _, matrix = _simulate_isolates(outbreak, screens, sequencing, rng)
    return screens, hosts, matrix
