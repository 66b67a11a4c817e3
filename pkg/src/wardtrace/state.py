"""Augmented latent state: who was colonized when, by whom, and in which group.

The state holds, per patient (indexed by position in ``Dataset.episodes``):

* ``col_day``    -- colonization day, or ``None`` if never colonized
* ``source``     -- index of the infecting patient, ``IMPORTATION`` for
                    positive-on-admission cases, or ``None`` if never colonized
* ``import_flag``-- True iff positive on admission
* ``group``      -- founder label (a patient index) under the importation
                    structure model; ``None`` when unused or never colonized
* ``added_by_sampler`` -- True for colonizations introduced by data
                    augmentation rather than observed positives
* ``phantom_distances`` -- imputed SNP distances for colonized patients
                    without a sequenced isolate (full augmentation only)

Phantom vectors are aligned to the *extended isolate order*: observed
isolates in dataset order followed by phantom-bearing patients in
ascending index order. Entries at a phantom's own position are zero.

Derived quantities: the colonized census C(t) (patients able to transmit
on day t: importations from admission, acquisitions from the day after
colonization, until discharge), transmission-forest tree distances, and
the last potential colonization day used by the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, IsolateRecord

IMPORTATION = -1


class StateError(RuntimeError):
    """The state is internally inconsistent for the requested operation."""


@dataclass
class AugmentedState:
    col_day: list[int | None]
    source: list[int | None]
    import_flag: list[bool]
    group: list[int | None]
    added_by_sampler: list[bool]
    phantom_distances: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls, n_patients: int) -> "AugmentedState":
        return cls(
            col_day=[None] * n_patients,
            source=[None] * n_patients,
            import_flag=[False] * n_patients,
            group=[None] * n_patients,
            added_by_sampler=[False] * n_patients,
        )

    @property
    def n_patients(self) -> int:
        return len(self.col_day)

    def colonized_indices(self) -> list[int]:
        return [j for j, c in enumerate(self.col_day) if c is not None]

    def children_of(self) -> list[list[int]]:
        """Offspring lists: children[j] = patients whose source is j."""
        children: list[list[int]] = [[] for _ in range(self.n_patients)]
        for j, s in enumerate(self.source):
            if s is not None and s != IMPORTATION:
                children[s].append(j)
        return children

    def chain_root(self, j: int) -> int:
        """Follow sources upward to the founding importation of j's chain."""
        seen = set()
        while True:
            s = self.source[j]
            if s == IMPORTATION:
                return j
            if s is None or j in seen:
                raise StateError(f"patient {j} has no path to an importation")
            seen.add(j)
            j = s

    def to_json_dict(self, dataset: Dataset) -> dict:
        """Serializable snapshot (colonized patients only), keyed by patient id."""
        out = {}
        ids = [e.patient_id for e in dataset.episodes]
        for j in self.colonized_indices():
            s = self.source[j]
            out[ids[j]] = {
                "col_day": self.col_day[j],
                "source": None if s == IMPORTATION else ids[s],
                "import_flag": self.import_flag[j],
                "group": None if self.group[j] is None else ids[self.group[j]],
            }
        return out


@dataclass
class ColonizedCensus:
    """Per-day count C(t) of patients able to transmit, over day_range."""

    day0: int
    counts: list[int]

    def at(self, day: int) -> int:
        i = day - self.day0
        if 0 <= i < len(self.counts):
            return self.counts[i]
        return 0


def transmit_interval(state: AugmentedState, dataset: Dataset, j: int) -> tuple[int, int] | None:
    """Days on which patient j can transmit, or None. Importations transmit
    from admission, acquisitions from the day after colonization."""
    c = state.col_day[j]
    if c is None:
        return None
    e = dataset.episodes[j]
    start = e.admit_day if state.import_flag[j] else c + 1
    if start > e.discharge_day:
        return None
    return (start, e.discharge_day)


def census(state: AugmentedState, dataset: Dataset) -> ColonizedCensus:
    """Compute C(t) for every day in the dataset's day range."""
    day0, day_end = dataset.day_range
    counts = [0] * (day_end - day0 + 1)
    for j in range(state.n_patients):
        interval = transmit_interval(state, dataset, j)
        if interval is None:
            continue
        lo, hi = interval
        for t in range(max(lo, day0), min(hi, day_end) + 1):
            counts[t - day0] += 1
    return ColonizedCensus(day0, counts)


def tree_distance(
    state: AugmentedState,
    dataset: Dataset,
    isolate_x: IsolateRecord,
    isolate_y: IsolateRecord,
) -> float:
    """Number of transmission edges separating two isolates' hosts.

    Returns 0 for two isolates from the same host and ``math.inf`` when the
    hosts belong to different transmission chains.
    """
    a = dataset.patient_index(isolate_x.patient_id)
    b = dataset.patient_index(isolate_y.patient_id)
    return host_tree_distance(state, a, b)


def host_tree_distance(state: AugmentedState, a: int, b: int) -> float:
    if state.col_day[a] is None or state.col_day[b] is None:
        raise StateError("tree distance requested for a host that is not colonized")
    if a == b:
        return 0
    path_a: dict[int, int] = {}
    node, depth = a, 0
    while True:
        path_a[node] = depth
        s = state.source[node]
        if s == IMPORTATION:
            break
        if s is None:
            raise StateError(f"patient {node} colonized but has no source")
        node, depth = s, depth + 1
    node, depth = b, 0
    while True:
        if node in path_a:
            return path_a[node] + depth
        s = state.source[node]
        if s == IMPORTATION:
            return math.inf
        if s is None:
            raise StateError(f"patient {node} colonized but has no source")
        node, depth = s, depth + 1


def last_colonization_day(state: AugmentedState, dataset: Dataset, j: int) -> int:
    """Last admissible colonization day for patient j.

    The minimum of the discharge day, the first positive screen day (when
    one exists), and, over offspring o, col_day(o) - 1: a source must be
    colonized strictly before it can transmit.
    """
    if state.col_day[j] is None:
        raise StateError(f"patient {j} is not colonized")
    e = dataset.episodes[j]
    bound = e.discharge_day
    fp = e.first_positive_day()
    if fp is not None:
        bound = min(bound, fp)
    for o, s in enumerate(state.source):
        if s == j:
            bound = min(bound, state.col_day[o] - 1)
    return bound


def extended_isolate_hosts(state: AugmentedState, dataset: Dataset) -> list[int]:
    """Host patient index per extended isolate (observed, then phantoms)."""
    hosts = [dataset.patient_index(iso.patient_id) for iso in dataset.isolates]
    hosts.extend(sorted(state.phantom_distances))
    return hosts


def extended_distance(
    state: AugmentedState, dataset: Dataset, x: int, y: int
) -> int:
    """Distance between extended isolates x < y (observed or phantom)."""
    n_s = dataset.n_isolates
    if x > y:
        x, y = y, x
    if y < n_s:
        return int(dataset.distances.values[x, y])
    phantom_order = sorted(state.phantom_distances)
    vec = state.phantom_distances[phantom_order[y - n_s]]
    return int(vec[x])


def validate(state: AugmentedState, dataset: Dataset) -> list[str]:
    """Check every state invariant; returns a list of violation messages.

    Used as a debug assertion after MCMC moves; an empty list means ok.
    """
    violations: list[str] = []
    n = state.n_patients
    if n != dataset.n_patients:
        return [f"state covers {n} patients, dataset has {dataset.n_patients}"]

    children = [0] * n
    for j, s in enumerate(state.source):
        if s is not None and s != IMPORTATION:
            if not (0 <= s < n):
                violations.append(f"patient {j}: source {s} out of range")
            else:
                children[s] += 1

    for j in range(n):
        e = dataset.episodes[j]
        c, s, phi = state.col_day[j], state.source[j], state.import_flag[j]
        if c is None:
            if s is not None:
                violations.append(f"patient {j}: never colonized but source set")
            if phi:
                violations.append(f"patient {j}: never colonized but import_flag set")
            if e.first_positive_day() is not None:
                violations.append(f"patient {j}: positive screen but never colonized")
            if children[j]:
                violations.append(f"patient {j}: never colonized but has offspring")
            continue
        if s is None:
            violations.append(f"patient {j}: colonized but source unset")
            continue
        if phi != (c == e.admit_day and s == IMPORTATION):
            violations.append(
                f"patient {j}: import_flag={phi} inconsistent with col_day/source"
            )
        if not (e.admit_day <= c <= e.discharge_day):
            violations.append(
                f"patient {j}: col_day {c} outside episode [{e.admit_day},{e.discharge_day}]"
            )
        fp = e.first_positive_day()
        if fp is not None and c > fp:
            violations.append(
                f"patient {j}: col_day {c} after first positive screen {fp} (false positive)"
            )
        if s != IMPORTATION and 0 <= s < n:
            cs = state.col_day[s]
            es = dataset.episodes[s]
            if cs is None:
                violations.append(f"patient {j}: source {s} not colonized")
            else:
                if cs > c - 1:
                    violations.append(
                        f"patient {j}: source {s} colonized on {cs}, not before day {c}"
                    )
                start = es.admit_day if state.import_flag[s] else cs + 1
                if not (start <= c <= es.discharge_day):
                    violations.append(
                        f"patient {j}: source {s} cannot transmit on day {c}"
                    )

    # Acyclicity: every colonized patient must reach an importation.
    for j in state.colonized_indices():
        node, hops = j, 0
        while hops <= n:
            s = state.source[node]
            if s == IMPORTATION:
                break
            if s is None or not (0 <= s < n):
                break
            node, hops = s, hops + 1
        else:
            violations.append(f"patient {j}: source relation contains a cycle")

    # Group labels: every member of a chain shares the founder's label.
    if any(g is not None for g in state.group):
        for j in state.colonized_indices():
            if state.group[j] is None:
                violations.append(f"patient {j}: colonized but group unset")
                continue
            try:
                root = state.chain_root(j)
            except StateError:
                continue
            if state.group[j] != state.group[root]:
                violations.append(
                    f"patient {j}: group {state.group[j]} differs from chain founder's {state.group[root]}"
                )
        for j in range(n):
            if state.col_day[j] is None and state.group[j] is not None:
                violations.append(f"patient {j}: never colonized but group set")

    # Phantom vectors: hosts colonized and unsequenced, symmetric entries.
    if state.phantom_distances:
        hosts_with_isolates = {dataset.patient_index(i.patient_id) for i in dataset.isolates}
        order = sorted(state.phantom_distances)
        width = dataset.n_isolates + len(order)
        for pos, j in enumerate(order):
            if state.col_day[j] is None:
                violations.append(f"patient {j}: phantom distances but never colonized")
            if j in hosts_with_isolates:
                violations.append(f"patient {j}: phantom distances but has a sequenced isolate")
            vec = state.phantom_distances[j]
            if len(vec) != width:
                violations.append(
                    f"patient {j}: phantom vector length {len(vec)}, expected {width}"
                )
                continue
            for qos in range(pos + 1, len(order)):
                other = order[qos]
                if vec[dataset.n_isolates + qos] != state.phantom_distances[other][dataset.n_isolates + pos]:
                    violations.append(
                        f"phantom distance mismatch between patients {j} and {other}"
                    )
            if int(vec[dataset.n_isolates + pos]) != 0:
                violations.append(f"patient {j}: nonzero phantom self-distance")
            if any(int(v) < 0 for v in vec):
                violations.append(f"patient {j}: negative phantom distance")

    return violations
