"""Shared builders for hand-constructed datasets and latent states."""

from __future__ import annotations

import numpy as np
import pytest

from wardtrace.data import Dataset, DistanceMatrix, EpisodeRecord, IsolateRecord, Screen
from wardtrace.state import IMPORTATION, AugmentedState


def make_dataset(episodes, isolates=(), distances=None, day_range=None) -> Dataset:
    """Build a Dataset from terse tuples.

    episodes: (patient_id, admit, discharge, [(day, 'pos'|'neg'), ...])
    isolates: (isolate_id, patient_id, day)
    distances: {(iso_a, iso_b): snps}
    """
    eps = []
    for pid, admit, disch, screens in episodes:
        eps.append(
            EpisodeRecord(
                pid,
                admit,
                disch,
                tuple(Screen(day, result == "pos") for day, result in screens),
            )
        )
    isos = [IsolateRecord(iid, pid, day) for iid, pid, day in isolates]
    ids = tuple(iso.isolate_id for iso in isos)
    values = np.zeros((len(ids), len(ids)), dtype=np.int64)
    index = {iid: i for i, iid in enumerate(ids)}
    for (a, b), d in (distances or {}).items():
        values[index[a], index[b]] = d
        values[index[b], index[a]] = d
    if day_range is None:
        if eps:
            day_range = (min(e.admit_day for e in eps), max(e.discharge_day for e in eps))
        else:
            day_range = (0, 0)
    return Dataset(eps, isos, DistanceMatrix(ids, values), day_range)


def make_state(dataset: Dataset, entries: dict, added=()) -> AugmentedState:
    """Build an AugmentedState from {patient_id: (col_day, source, group)}.

    source is another patient_id or "import"; group is a patient_id or None.
    Patients not listed are never colonized.
    """
    st = AugmentedState.empty(dataset.n_patients)
    for pid, (col, source, group) in entries.items():
        j = dataset.patient_index(pid)
        st.col_day[j] = col
        if source == "import":
            st.source[j] = IMPORTATION
            st.import_flag[j] = True
        else:
            st.source[j] = dataset.patient_index(source)
        st.group[j] = None if group is None else dataset.patient_index(group)
    for pid in added:
        st.added_by_sampler[dataset.patient_index(pid)] = True
    return st


@pytest.fixture
def two_patient_pair():
    """A imports on day 0 and infects B on day 2; both have one isolate."""
    d = make_dataset(
        episodes=[
            ("A", 0, 6, [(0, "pos"), (3, "pos")]),
            ("B", 0, 6, [(0, "neg"), (3, "pos")]),
        ],
        isolates=[("iA", "A", 0), ("iB", "B", 3)],
        distances={("iA", "iB"): 1},
    )
    st = make_state(d, {"A": (0, "import", "A"), "B": (2, "A", "A")})
    return d, st
