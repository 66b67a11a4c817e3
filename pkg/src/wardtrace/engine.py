"""Incremental chain state for the data-augmented sampler (internal).

Maintains the latent configuration together with the aggregates from
which the full log likelihood is recomputed in O(small) after each move:

* per-day transmitter sets (the census C(t)) and at-risk counts E(t),
  plus the running dot product S_CE = sum_t C(t) * E(t);
* acquisition counts per day (for the (1-exp(-beta*C))/C factors);
* true-positive / false-negative screen totals;
* genetic "buckets": pair counts and distance sums keyed by tree
  distance (transmission diversity) or same/different group
  (importation structure), so the genetic log likelihood is a sum over
  a handful of keys rather than all isolate pairs.

Every mutation goes through ``set_patient`` / the phantom-row helpers,
each of which is exactly undoable; ``recompute_all`` rebuilds the
aggregates from scratch and is used by tests to pin incremental ==
full recomputation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .likelihood import (
    GEOMETRIC,
    IMPORTATION_STRUCTURE,
    TRANSMISSION_DIVERSITY,
)
from .priors import PriorSpec
from .state import IMPORTATION, AugmentedState

NEG_INF = -math.inf
INF_KEY = -1  # bucket key for cross-chain pairs under transmission diversity


def geom_log_pmf(d: int, q: float) -> float:
    if q >= 1.0:
        return 0.0 if d == 0 else NEG_INF
    return math.log(q) + d * math.log1p(-q)


class IndexedSet:
    """Set with O(1) add/discard and O(1) uniform sampling."""

    __slots__ = ("items", "pos")

    def __init__(self) -> None:
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def add(self, x: int) -> None:
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def discard(self, x: int) -> None:
        i = self.pos.pop(x, None)
        if i is None:
            return
        last = self.items.pop()
        if last != x:
            self.items[i] = last
            self.pos[last] = i

    def sample(self, rng) -> int:
        return self.items[min(int(rng.random() * len(self.items)), len(self.items) - 1)]

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, x: int) -> bool:
        return x in self.pos


class Buckets:
    """Pair-count aggregates keyed by tree distance or group relation."""

    __slots__ = ("data",)

    def __init__(self) -> None:
        self.data: dict[int, list] = {}

    def add(self, key: int, psi: int, sign: int) -> None:
        entry = self.data.get(key)
        if entry is None:
            entry = [0, 0, 0.0]
            self.data[key] = entry
        entry[0] += sign
        entry[1] += sign * psi
        entry[2] += sign * math.lgamma(psi + 1)
        if entry[0] == 0:
            del self.data[key]

    def copy_data(self) -> dict[int, list]:
        return {k: list(v) for k, v in self.data.items()}


@dataclass
class Undo:
    """Reverse log for one structural move."""

    j: int
    old: tuple  # (col, src, phi, grp, added)
    bucket_deltas: list = field(default_factory=list)  # (key, psi, sign)
    regroup: list = field(default_factory=list)  # (node, old_group)
    phantom_added: Optional[int] = None  # isolate row created by this move
    phantom_removed: Optional[tuple] = None  # (row, {other_row: value})
    phantom_redraw: Optional[tuple] = None  # (row, {other_row: old_value})


class ChainState:
    """Mutable sampler state bound to one dataset and one genetic model."""

    def __init__(
        self,
        dataset: Dataset,
        model: str,
        family: str = GEOMETRIC,
        full_augmentation: bool = False,
        phantom_pmf_gamma: float = 0.2,
        phantom_pmf_gamma_g: float = 0.01,
    ):
        self.dataset = dataset
        self.model = model
        self.family = family
        self.full_aug = full_augmentation
        self.m_q = phantom_pmf_gamma
        self.mg_q = phantom_pmf_gamma_g
        self.use_groups = model == IMPORTATION_STRUCTURE

        n = dataset.n_patients
        self.n = n
        self.admit = [e.admit_day for e in dataset.episodes]
        self.disch = [e.discharge_day for e in dataset.episodes]
        self.screens = [
            [(s.day, s.positive) for s in e.screens] for e in dataset.episodes
        ]
        self.first_pos = [e.first_positive_day() for e in dataset.episodes]
        self.day0 = dataset.day_range[0]
        self.n_days = dataset.day_range[1] - self.day0 + 1

        # latent configuration
        self.col: list[int | None] = [None] * n
        self.src: list[int | None] = [None] * n
        self.phi: list[bool] = [False] * n
        self.grp: list[int | None] = [None] * n
        self.added: list[bool] = [False] * n
        self.children: list[set[int]] = [set() for _ in range(n)]

        # census aggregates
        self.day_trans: list[set[int]] = [set() for _ in range(self.n_days)]
        self.exposure: list[int] = [0] * self.n_days
        self.s_ce = 0
        self.acq_days: dict[int, int] = {}
        self.tp = 0
        self.fn = 0
        self.fp = 0
        self.sum_phi = 0
        self.imports: set[int] = set()
        self.grp_counter: dict[int, int] = {}

        # move bookkeeping
        self.v_s = sum(1 for f in self.first_pos if f is None)
        self.v_a = 0
        self.colonized = IndexedSet()
        self.addable = IndexedSet()  # never-positive patients currently negative
        self.removable = IndexedSet()  # sampler-added patients with no offspring
        for j, f in enumerate(self.first_pos):
            if f is None:
                self.addable.add(j)

        # isolates: observed rows first, phantom rows appended on demand
        n_s = dataset.n_isolates
        self.n_obs = n_s
        cap = max(8, n_s + 16)
        self.psi = np.zeros((cap, cap), dtype=np.int64)
        self.psi[:n_s, :n_s] = dataset.distances.values
        self.iso_host: list[int] = [
            dataset.patient_index(iso.patient_id) for iso in dataset.isolates
        ]
        self.iso_alive: list[bool] = [True] * n_s
        self.free_rows: list[int] = []
        self.iso_of: list[list[int]] = [[] for _ in range(n)]
        for row, host in enumerate(self.iso_host):
            self.iso_of[host].append(row)
        self.phantom_of: list[int | None] = [None] * n
        self.has_observed_isolate = [bool(self.iso_of[j]) for j in range(n)]
        self.vn_list: list[int] = [
            j
            for j in range(n)
            if self.first_pos[j] is not None and not self.has_observed_isolate[j]
        ]
        self.v_n = len(self.vn_list)

        self.buckets = Buckets()

        # current parameter values (set by the sampler)
        self.p = 0.5
        self.z = 0.5
        self.beta = 0.01
        self.gamma = 0.5
        self.gamma_g = 0.5
        self.k = 1.0
        self.c = 0.5
        self.data_free = False

    # ------------------------------------------------------------------
    # construction helpers

    def initialize_observed_positives(self) -> None:
        """Start every positively screened patient as an importation of its
        own group; leaves everyone else never-colonized."""
        for j in range(self.n):
            if self.first_pos[j] is not None:
                grp = j if self.use_groups else None
                self.set_patient(j, self.admit[j], IMPORTATION, True, grp, False)

    def init_phantoms(self, rng) -> None:
        """Create phantom rows for positive-but-unsequenced patients."""
        if not self.full_aug:
            return
        for j in range(self.n):
            if (
                self.col[j] is not None
                and not self.has_observed_isolate[j]
                and self.phantom_of[j] is None
            ):
                self.add_phantom_row(j, rng)

    # ------------------------------------------------------------------
    # day/census primitives

    def _off(self, day: int) -> int:
        return day - self.day0

    def census_at(self, day: int) -> int:
        i = day - self.day0
        if 0 <= i < self.n_days:
            return len(self.day_trans[i])
        return 0

    def pool_members(self, j: int, day: int) -> list[int]:
        """Legal transmission sources for j on ``day``: transmitters other
        than j colonized strictly before that day."""
        i = day - self.day0
        if not (0 <= i < self.n_days):
            return []
        col = self.col
        return [i2 for i2 in self.day_trans[i] if i2 != j and col[i2] <= day - 1]

    def pool_size(self, j: int, day: int) -> int:
        return len(self.pool_members(j, day))

    def y_ext(self, day: int) -> list[int]:
        """Importations admitted strictly before ``day``, sorted for
        deterministic sampling."""
        admit = self.admit
        return sorted(i for i in self.imports if admit[i] < day)

    def _transmit_interval(self, col, phi, j) -> tuple[int, int] | None:
        if col is None:
            return None
        start = self.admit[j] if phi else col + 1
        if start > self.disch[j]:
            return None
        return (start, self.disch[j])

    def _exposure_interval(self, col, phi, j) -> tuple[int, int] | None:
        if phi:
            return None
        hi = self.disch[j] if col is None else min(col - 1, self.disch[j])
        if self.admit[j] > hi:
            return None
        return (self.admit[j], hi)

    # ------------------------------------------------------------------
    # the one structural mutation primitive (exactly undoable)

    def set_patient(
        self,
        j: int,
        col: int | None,
        src: int | None,
        phi: bool,
        grp: int | None,
        added: bool,
    ) -> tuple:
        """Reassign patient j's colonization fields, updating every aggregate.

        Returns the previous field tuple, suitable for the inverse call.
        """
        old = (self.col[j], self.src[j], self.phi[j], self.grp[j], self.added[j])
        old_col, old_src, old_phi, old_grp, old_added = old

        # screens of j reclassified
        if old_col != col:
            for day, positive in self.screens[j]:
                det_old = old_col is not None and day >= old_col
                det_new = col is not None and day >= col
                if det_old != det_new:
                    step = 1 if det_new else -1
                    if positive:
                        self.tp += step
                    else:
                        self.fn += step

        # exposure interval
        old_iv = self._exposure_interval(old_col, old_phi, j)
        new_iv = self._exposure_interval(col, phi, j)
        if old_iv != new_iv:
            off = self.day0
            if old_iv is not None:
                exposure, day_trans = self.exposure, self.day_trans
                for t in range(old_iv[0] - off, old_iv[1] - off + 1):
                    exposure[t] -= 1
                    self.s_ce -= len(day_trans[t])
            if new_iv is not None:
                exposure, day_trans = self.exposure, self.day_trans
                for t in range(new_iv[0] - off, new_iv[1] - off + 1):
                    exposure[t] += 1
                    self.s_ce += len(day_trans[t])

        # transmit interval
        old_tv = self._transmit_interval(old_col, old_phi, j)
        new_tv = self._transmit_interval(col, phi, j)
        if old_tv != new_tv:
            off = self.day0
            if old_tv is not None:
                exposure, day_trans = self.exposure, self.day_trans
                for t in range(old_tv[0] - off, old_tv[1] - off + 1):
                    day_trans[t].discard(j)
                    self.s_ce -= exposure[t]
            if new_tv is not None:
                exposure, day_trans = self.exposure, self.day_trans
                for t in range(new_tv[0] - off, new_tv[1] - off + 1):
                    day_trans[t].add(j)
                    self.s_ce += exposure[t]

        # acquisition-day counters
        old_acq = old_col is not None and not old_phi
        new_acq = col is not None and not phi
        if old_acq:
            t = old_col - self.day0
            cnt = self.acq_days[t] - 1
            if cnt:
                self.acq_days[t] = cnt
            else:
                del self.acq_days[t]
        if new_acq:
            t = col - self.day0
            self.acq_days[t] = self.acq_days.get(t, 0) + 1

        # children / removable bookkeeping
        if old_src != src:
            if old_src is not None and old_src != IMPORTATION:
                kids = self.children[old_src]
                kids.discard(j)
                if not kids and self.added[old_src]:
                    self.removable.add(old_src)
            if src is not None and src != IMPORTATION:
                kids = self.children[src]
                if not kids and self.added[src]:
                    self.removable.discard(src)
                kids.add(j)

        # importation marker and group-founder counter
        if old_phi != phi or (self.use_groups and old_grp != grp):
            if old_phi:
                self.sum_phi -= 1
                self.imports.discard(j)
                if self.use_groups:
                    cnt = self.grp_counter[old_grp] - 1
                    if cnt:
                        self.grp_counter[old_grp] = cnt
                    else:
                        del self.grp_counter[old_grp]
            if phi:
                self.sum_phi += 1
                self.imports.add(j)
                if self.use_groups:
                    self.grp_counter[grp] = self.grp_counter.get(grp, 0) + 1

        # colonized / added counters
        if (old_col is None) != (col is None):
            if col is not None:
                self.colonized.add(j)
                if self.first_pos[j] is None:
                    self.addable.discard(j)
            else:
                self.colonized.discard(j)
                if self.first_pos[j] is None:
                    self.addable.add(j)
        if old_added != added:
            if added:
                self.v_a += 1
                if not self.children[j]:
                    self.removable.add(j)
            else:
                self.v_a -= 1
                self.removable.discard(j)

        self.col[j] = col
        self.src[j] = src
        self.phi[j] = phi
        self.grp[j] = grp
        self.added[j] = added
        return old

    # ------------------------------------------------------------------
    # tree traversal

    def subtree(self, j: int) -> list[int]:
        out = [j]
        stack = [j]
        children = self.children
        while stack:
            node = stack.pop()
            for ch in children[node]:
                out.append(ch)
                stack.append(ch)
        return out

    def chain_distances(self, start: int, skip: set[int] | None = None) -> dict[int, int]:
        """Undirected BFS distances from ``start`` within its chain."""
        dist = {start: 0}
        frontier = [start]
        children = self.children
        src = self.src
        while frontier:
            nxt = []
            for node in frontier:
                d = dist[node] + 1
                s = src[node]
                neighbors = list(children[node])
                if s is not None and s != IMPORTATION:
                    neighbors.append(s)
                for nb in neighbors:
                    if nb in dist or (skip is not None and nb in skip):
                        continue
                    dist[nb] = d
                    nxt.append(nb)
            frontier = nxt
        return dist

    def isolates_in(self, patients: list[int]) -> list[int]:
        rows: list[int] = []
        for p in patients:
            rows.extend(self.iso_of[p])
            ph = self.phantom_of[p]
            if ph is not None:
                rows.append(ph)
        return rows

    def active_rows_excluding(self, excluded: set[int]) -> list[int]:
        return [r for r, alive in enumerate(self.iso_alive) if alive and r not in excluded]

    # ------------------------------------------------------------------
    # genetic bucket updates

    def genetic_move_deltas(
        self,
        sub: list[int],
        a_rows: list[int],
        new_root_grp: int | None,
        new_src: int | None,
        becomes_import: bool,
    ) -> list[tuple[int, int, int]]:
        """Bucket deltas for re-attaching ``sub`` (rooted at sub[0]).

        Old keys use the current forest/groups; new keys assume the subtree
        re-rooted under ``new_src`` (or as a fresh chain when
        ``becomes_import``) with every subtree member labeled
        ``new_root_grp``. Caller applies the deltas.
        """
        if not a_rows:
            return []
        j = sub[0]
        sub_set = set(sub)
        b_rows = [
            r for r in self.active_rows_excluding(set()) if self.iso_host[r] not in sub_set
        ]
        deltas: list[tuple[int, int, int]] = []
        psi = self.psi
        host = self.iso_host
        if self.use_groups:
            grp = self.grp
            g_old = grp[j]
            for a in a_rows:
                row = psi[a]
                for b in b_rows:
                    d = int(row[b])
                    deltas.append((1 if g_old == grp[host[b]] else 0, d, -1))
                    deltas.append((1 if new_root_grp == grp[host[b]] else 0, d, +1))
        else:
            dist_old = self.chain_distances(j)
            dist_new = (
                None
                if becomes_import
                else self.chain_distances(new_src, skip=sub_set)
            )
            depth = {p: dist_old[p] for p in sub}
            for a in a_rows:
                ha = host[a]
                da = depth[ha]
                row = psi[a]
                for b in b_rows:
                    hb = host[b]
                    d = int(row[b])
                    t_old = dist_old.get(hb)
                    deltas.append((INF_KEY if t_old is None else da + t_old, d, -1))
                    if dist_new is None:
                        key = INF_KEY
                    else:
                        t_new = dist_new.get(hb)
                        key = INF_KEY if t_new is None else da + 1 + t_new
                    deltas.append((key, d, +1))
        return deltas

    def apply_bucket_deltas(self, deltas: list[tuple[int, int, int]]) -> None:
        add = self.buckets.add
        for key, psi, sign in deltas:
            add(key, psi, sign)

    def revert_bucket_deltas(self, deltas: list[tuple[int, int, int]]) -> None:
        add = self.buckets.add
        for key, psi, sign in deltas:
            add(key, psi, -sign)

    def regroup_subtree(self, sub: list[int], new_grp: int | None) -> list[tuple[int, int | None]]:
        """Relabel every subtree member (the root's own label is handled by
        set_patient; included here for uniform revert)."""
        log = []
        for node in sub:
            log.append((node, self.grp[node]))
            self.grp[node] = new_grp
        return log

    # ------------------------------------------------------------------
    # phantom rows

    def _alloc_row(self) -> int:
        if self.free_rows:
            return self.free_rows.pop()
        row = len(self.iso_alive)
        if row >= self.psi.shape[0]:
            new_cap = self.psi.shape[0] * 2
            grown = np.zeros((new_cap, new_cap), dtype=np.int64)
            grown[: self.psi.shape[0], : self.psi.shape[0]] = self.psi
            self.psi = grown
        self.iso_alive.append(False)
        self.iso_host.append(-1)
        return row

    def pair_keys_for_host(self, j: int, exclude_row: int | None = None) -> dict[int, int]:
        """Current bucket key for (host j, isolate row) over all active rows.

        Keys: tree distance (transmission diversity, INF_KEY across chains)
        or 1/0 for same/different group (importation structure).
        """
        excluded = set() if exclude_row is None else {exclude_row}
        rows = self.active_rows_excluding(excluded)
        keys: dict[int, int] = {}
        if self.use_groups:
            gj = self.grp[j]
            grp, host = self.grp, self.iso_host
            for b in rows:
                keys[b] = 1 if gj == grp[host[b]] else 0
        else:
            dist = self.chain_distances(j)
            host = self.iso_host
            for b in rows:
                t = dist.get(host[b])
                keys[b] = INF_KEY if t is None else t
        return keys

    def draw_phantom_vector(
        self, j: int, rng, exclude_row: int | None = None
    ) -> tuple[dict[int, int], float, dict[int, int]]:
        """Draw distances from j's phantom to every active isolate from the
        m/m_G proposal pmfs ('related' = same group or same chain); returns
        ({row: d}, log proposal probability, {row: bucket key})."""
        keys = self.pair_keys_for_host(j, exclude_row=exclude_row)
        values: dict[int, int] = {}
        log_m = 0.0
        related_key = 1 if self.use_groups else None
        for b, key in keys.items():
            related = key == related_key if self.use_groups else key != INF_KEY
            q = self.m_q if related else self.mg_q
            u = rng.random()
            d = int(math.log1p(-u) / math.log1p(-q)) if q < 1.0 else 0
            values[b] = d
            log_m += geom_log_pmf(d, q)
        return values, log_m, keys

    def phantom_vector_log_m(self, j: int) -> float:
        """Log proposal probability of j's current phantom vector."""
        row = self.phantom_of[j]
        keys = self.pair_keys_for_host(j, exclude_row=row)
        log_m = 0.0
        for b, key in keys.items():
            related = key == 1 if self.use_groups else key != INF_KEY
            q = self.m_q if related else self.mg_q
            log_m += geom_log_pmf(int(self.psi[row, b]), q)
        return log_m

    def add_phantom_row(self, j: int, rng) -> tuple[int, float, list]:
        """Create j's phantom isolate, drawing its distances; returns the
        row index, the log proposal probability, and the bucket deltas."""
        values, log_m, keys = self.draw_phantom_vector(j, rng)
        row = self._alloc_row()
        self.iso_alive[row] = True
        self.iso_host[row] = j
        self.phantom_of[j] = row
        deltas = [(keys[b], d, +1) for b, d in values.items()]
        for b, d in values.items():
            self.psi[row, b] = d
            self.psi[b, row] = d
        self.apply_bucket_deltas(deltas)
        return row, log_m, deltas

    def remove_phantom_row(self, j: int) -> tuple[int, dict[int, int], list]:
        """Delete j's phantom isolate; returns (row, values, bucket deltas)."""
        row = self.phantom_of[j]
        keys = self.pair_keys_for_host(j, exclude_row=row)
        values = {}
        deltas = []
        for b, key in keys.items():
            d = int(self.psi[row, b])
            values[b] = d
            deltas.append((key, d, -1))
        self.apply_bucket_deltas(deltas)
        self.iso_alive[row] = False
        self.iso_host[row] = -1
        self.phantom_of[j] = None
        self.free_rows.append(row)
        return row, values, deltas

    def restore_phantom_row(self, j: int, row: int, values: dict[int, int]) -> None:
        self.free_rows.remove(row)
        self.iso_alive[row] = True
        self.iso_host[row] = j
        self.phantom_of[j] = row
        for b, d in values.items():
            self.psi[row, b] = d
            self.psi[b, row] = d

    # ------------------------------------------------------------------
    # log likelihood from aggregates

    def loglik_trans(self, p: float | None = None, beta: float | None = None) -> float:
        if self.data_free:
            return 0.0
        p = self.p if p is None else p
        beta = self.beta if beta is None else beta
        n_imp = self.sum_phi
        if p <= 0.0:
            total = NEG_INF if n_imp else 0.0
        elif p >= 1.0:
            total = NEG_INF if n_imp < self.n else self.n * math.log(p)
        else:
            total = n_imp * math.log(p) + (self.n - n_imp) * math.log1p(-p)
        if total == NEG_INF:
            return NEG_INF
        total -= beta * self.s_ce
        day_trans = self.day_trans
        log = math.log
        expm1 = math.expm1
        for t, cnt in self.acq_days.items():
            c = len(day_trans[t])
            if c == 0:
                return NEG_INF
            val = -expm1(-beta * c)
            if val <= 0.0:
                return NEG_INF
            total += cnt * (log(val) - log(c))
        return total

    def loglik_obs(self, z: float | None = None) -> float:
        if self.data_free:
            return 0.0
        z = self.z if z is None else z
        if self.fp:
            return NEG_INF
        total = 0.0
        if self.tp:
            if z <= 0.0:
                return NEG_INF
            total += self.tp * math.log(z)
        if self.fn:
            if z >= 1.0:
                return NEG_INF
            total += self.fn * math.log1p(-z)
        return total

    def _family_bucket_term(self, q: float, cnt: int, sumpsi: int, sumlf: float) -> float:
        if not (0.0 < q <= 1.0):
            return NEG_INF
        if self.family == GEOMETRIC:
            if q >= 1.0:
                return 0.0 if sumpsi == 0 else NEG_INF
            return cnt * math.log(q) + sumpsi * math.log1p(-q)
        lam = (1.0 - q) / q
        if lam == 0.0:
            return 0.0 if sumpsi == 0 else NEG_INF
        return -cnt * lam + sumpsi * math.log(lam) - sumlf

    def loglik_gen(
        self,
        gamma: float | None = None,
        gamma_g: float | None = None,
        k: float | None = None,
    ) -> float:
        if self.data_free:
            return 0.0
        gamma = self.gamma if gamma is None else gamma
        gamma_g = self.gamma_g if gamma_g is None else gamma_g
        k = self.k if k is None else k
        total = 0.0
        if self.use_groups:
            for key, (cnt, sumpsi, sumlf) in self.buckets.data.items():
                q = gamma if key == 1 else gamma_g
                term = self._family_bucket_term(q, cnt, sumpsi, sumlf)
                if term == NEG_INF:
                    return NEG_INF
                total += term
        else:
            for key, (cnt, sumpsi, sumlf) in self.buckets.data.items():
                q = gamma_g if key == INF_KEY else gamma * k**key
                term = self._family_bucket_term(q, cnt, sumpsi, sumlf)
                if term == NEG_INF:
                    return NEG_INF
                total += term
        return total

    def loglik_grp(self, c: float | None = None) -> float:
        if self.data_free or not self.use_groups:
            return 0.0
        c = self.c if c is None else c
        n_imp = self.sum_phi
        if n_imp == 0:
            return 0.0
        n_c = len(self.grp_counter)
        if c <= 0.0 or (c >= 1.0 and n_imp > n_c):
            return NEG_INF
        total = n_c * math.log(c)
        if n_imp > n_c:
            total += (n_imp - n_c) * math.log1p(-c)
        return total

    def current_params(self):
        from .likelihood import ModelParams

        return ModelParams(
            p=self.p,
            z=self.z,
            beta=self.beta,
            gamma=self.gamma,
            gamma_g=self.gamma_g,
            k=self.k if self.model == TRANSMISSION_DIVERSITY else None,
            c=self.c if self.use_groups else None,
            distance_family=self.family,
        )

    def log_prior(self, priors: PriorSpec) -> float:
        return priors.log_density(self.current_params(), self.model)

    def log_likelihood(self) -> float:
        total = self.loglik_trans()
        if total == NEG_INF:
            return NEG_INF
        total += self.loglik_obs()
        if total == NEG_INF:
            return NEG_INF
        total += self.loglik_gen()
        if total == NEG_INF:
            return NEG_INF
        return total + self.loglik_grp()

    def log_posterior(self, priors: PriorSpec) -> float:
        lp = self.log_prior(priors)
        if lp == NEG_INF:
            return NEG_INF
        ll = self.log_likelihood()
        if ll == NEG_INF:
            return NEG_INF
        return ll + lp

    # ------------------------------------------------------------------
    # applicability

    @property
    def v_q(self) -> int:
        return len(self.colonized)

    @property
    def v_0(self) -> int:
        return len(self.removable)

    def n_applicable_moves(self) -> int:
        count = 0
        if len(self.colonized):
            count += 1
        if len(self.addable):
            count += 1
        if len(self.removable):
            count += 1
        if self.full_aug and self.v_n:
            count += 1
        return count

    def applicable_moves(self) -> list[str]:
        moves = []
        if len(self.colonized):
            moves.append("change_route")
        if len(self.addable):
            moves.append("add")
        if len(self.removable):
            moves.append("remove")
        if self.full_aug and self.v_n:
            moves.append("change_phantom")
        return moves

    # ------------------------------------------------------------------
    # export / verification

    def export_state(self) -> AugmentedState:
        st = AugmentedState(
            col_day=list(self.col),
            source=list(self.src),
            import_flag=list(self.phi),
            group=list(self.grp),
            added_by_sampler=list(self.added),
        )
        if self.full_aug:
            phantom_js = sorted(
                j for j in range(self.n) if self.phantom_of[j] is not None
            )
            width = self.n_obs + len(phantom_js)
            cols = list(range(self.n_obs)) + [self.phantom_of[j] for j in phantom_js]
            for j in phantom_js:
                row = self.phantom_of[j]
                st.phantom_distances[j] = np.array(
                    [int(self.psi[row, b]) if b != row else 0 for b in cols],
                    dtype=np.int64,
                )[:width]
        return st

    def snapshot_array(self) -> np.ndarray:
        """Compact tree snapshot: rows (patient, col_day, source, phi, group)
        for colonized patients; source -1 = importation, group -1 = none."""
        rows = []
        for j in range(self.n):
            c = self.col[j]
            if c is None:
                continue
            s = self.src[j]
            g = self.grp[j]
            rows.append(
                (j, c, -1 if s == IMPORTATION else s, 1 if self.phi[j] else 0, -1 if g is None else g)
            )
        return np.array(rows, dtype=np.int32).reshape(-1, 5)

    def recompute_all(self) -> None:
        """Rebuild every aggregate from the latent fields (tests, debugging)."""
        self.day_trans = [set() for _ in range(self.n_days)]
        self.exposure = [0] * self.n_days
        self.acq_days = {}
        self.tp = self.fn = self.fp = 0
        self.sum_phi = 0
        self.imports = set()
        self.grp_counter = {}
        self.v_a = 0
        self.colonized = IndexedSet()
        self.addable = IndexedSet()
        self.removable = IndexedSet()
        self.children = [set() for _ in range(self.n)]
        for j in range(self.n):
            s = self.src[j]
            if s is not None and s != IMPORTATION:
                self.children[s].add(j)
        for j in range(self.n):
            col, phi = self.col[j], self.phi[j]
            if col is None and self.first_pos[j] is None:
                self.addable.add(j)
            if col is not None:
                self.colonized.add(j)
                if self.added[j]:
                    self.v_a += 1
                    if not self.children[j]:
                        self.removable.add(j)
                if phi:
                    self.sum_phi += 1
                    self.imports.add(j)
                    if self.use_groups:
                        g = self.grp[j]
                        self.grp_counter[g] = self.grp_counter.get(g, 0) + 1
                else:
                    t = col - self.day0
                    self.acq_days[t] = self.acq_days.get(t, 0) + 1
                tv = self._transmit_interval(col, phi, j)
                if tv is not None:
                    for t in range(tv[0] - self.day0, tv[1] - self.day0 + 1):
                        self.day_trans[t].add(j)
            ev = self._exposure_interval(col, phi, j)
            if ev is not None:
                for t in range(ev[0] - self.day0, ev[1] - self.day0 + 1):
                    self.exposure[t] += 1
            for day, positive in self.screens[j]:
                det = col is not None and day >= col
                if positive and det:
                    self.tp += 1
                elif not positive and det:
                    self.fn += 1
                elif positive:
                    self.fp += 1
        self.s_ce = sum(
            len(self.day_trans[t]) * self.exposure[t] for t in range(self.n_days)
        )
        self.buckets = Buckets()
        rows = self.active_rows_excluding(set())
        for bi in range(1, len(rows)):
            b = rows[bi]
            hb = self.iso_host[b]
            for ai in range(bi):
                a = rows[ai]
                ha = self.iso_host[a]
                d = int(self.psi[a, b])
                if self.use_groups:
                    key = 1 if self.grp[ha] == self.grp[hb] else 0
                else:
                    if ha == hb:
                        key = 0
                    else:
                        t = self.chain_distances(ha).get(hb)
                        key = INF_KEY if t is None else t
                self.buckets.add(key, d, +1)
