"""Domain types and CSV I/O for hospital screening datasets.

A dataset bundles patient episodes (admission/discharge windows plus
screening results), sequenced isolates, and a symmetric pairwise SNP
distance matrix over those isolates. Days are integers in discrete
calendar time; by convention day 0 is the first admission, but the
loader accepts any integer days.

CSV schemas (header row required, comma-delimited, UTF-8):

    episodes.csv:   patient_id,admit_day,discharge_day
    screens.csv:    patient_id,day,result        (result in {pos,neg})
    isolates.csv:   isolate_id,patient_id,day
    distances.csv:  isolate_a,isolate_b,snps     (sparse triples)
                    -- or a square matrix with isolate_id header row/column
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """A CSV file is malformed (missing column, non-integer day, bad result)."""


class DataValidationError(ValueError):
    """Parsed records violate a dataset invariant (names the offending record)."""


@dataclass(frozen=True)
class Screen:
    """One screening test: calendar day plus the observed result."""

    day: int
    positive: bool


@dataclass(frozen=True)
class EpisodeRecord:
    """One patient's admission window and the screens taken during it."""

    patient_id: str
    admit_day: int
    discharge_day: int
    screens: tuple[Screen, ...] = ()

    def first_positive_day(self) -> int | None:
        for s in self.screens:
            if s.positive:
                return s.day
        return None


@dataclass(frozen=True)
class IsolateRecord:
    """A sequenced isolate sampled from a positive screen of its host."""

    isolate_id: str
    patient_id: str
    sample_day: int


class DistanceMatrix:
    """Symmetric nonnegative integer SNP distances over sequenced isolates.

    Rows/columns follow the order of ``ids``. Entries are validated to be
    symmetric with a zero diagonal.
    """

    def __init__(self, ids: tuple[str, ...], values: np.ndarray):
        values = np.asarray(values, dtype=np.int64)
        n = len(ids)
        if values.shape != (n, n):
            raise DataValidationError(
                f"distance matrix shape {values.shape} does not match {n} isolates"
            )
        if np.any(values < 0):
            a, b = np.argwhere(values < 0)[0]
            raise DataValidationError(
                f"negative distance between isolates {ids[a]!r} and {ids[b]!r}"
            )
        if np.any(values != values.T):
            a, b = np.argwhere(values != values.T)[0]
            raise DataValidationError(
                f"asymmetric distances for isolates {ids[a]!r} and {ids[b]!r}"
            )
        if np.any(np.diag(values) != 0):
            a = int(np.argwhere(np.diag(values) != 0)[0][0])
            raise DataValidationError(f"nonzero self-distance for isolate {ids[a]!r}")
        self.ids = tuple(ids)
        self.values = values

    @property
    def size(self) -> int:
        return len(self.ids)

    def __getitem__(self, pair: tuple[int, int]) -> int:
        return int(self.values[pair])

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DistanceMatrix)
            and self.ids == other.ids
            and np.array_equal(self.values, other.values)
        )


@dataclass
class Dataset:
    """A validated outbreak dataset ready for inference or simulation."""

    episodes: list[EpisodeRecord]
    isolates: list[IsolateRecord]
    distances: DistanceMatrix
    day_range: tuple[int, int]

    _patient_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._patient_index = {e.patient_id: i for i, e in enumerate(self.episodes)}

    @property
    def n_patients(self) -> int:
        return len(self.episodes)

    @property
    def n_isolates(self) -> int:
        return len(self.isolates)

    def patient_index(self, patient_id: str) -> int:
        return self._patient_index[patient_id]

    def episode(self, patient_id: str) -> EpisodeRecord:
        return self.episodes[self._patient_index[patient_id]]

    def isolates_of(self, patient_id: str) -> list[IsolateRecord]:
        return [iso for iso in self.isolates if iso.patient_id == patient_id]


def _read_rows(path: Path, columns: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if header is None or tuple(header[: len(columns)]) != columns:
                raise DataFormatError(
                    f"{path}: expected header {','.join(columns)}, got {header}"
                )
            return list(reader)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def _int_field(path: Path, row_no: int, name: str, raw: str | None) -> int:
    if raw is None:
        raise DataFormatError(f"{path} row {row_no}: missing field {name!r}")
    try:
        return int(raw)
    except ValueError:
        raise DataFormatError(
            f"{path} row {row_no}: field {name!r} is not an integer: {raw!r}"
        ) from None


def _load_distances(path: Path, isolate_ids: tuple[str, ...]) -> DistanceMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty distances file")
    header = rows[0]
    if [c.strip() for c in header[:3]] == ["isolate_a", "isolate_b", "snps"]:
        return _distances_from_triples(path, rows[1:], isolate_ids)
    return _distances_from_square(path, rows, isolate_ids)


def _distances_from_triples(
    path: Path, rows: list[list[str]], isolate_ids: tuple[str, ...]
) -> DistanceMatrix:
    index = {iso: i for i, iso in enumerate(isolate_ids)}
    n = len(isolate_ids)
    values = np.zeros((n, n), dtype=np.int64)
    seen: set[tuple[int, int]] = set()
    for row_no, row in enumerate(rows, start=2):
        if len(row) < 3:
            raise DataFormatError(f"{path} row {row_no}: expected 3 fields")
        a_id, b_id = row[0], row[1]
        if a_id not in index or b_id not in index:
            missing = a_id if a_id not in index else b_id
            raise DataValidationError(
                f"{path} row {row_no}: unknown isolate {missing!r}"
            )
        snps = _int_field(path, row_no, "snps", row[2])
        if snps < 0:
            raise DataValidationError(
                f"{path} row {row_no}: negative distance for pair ({a_id!r},{b_id!r})"
            )
        a, b = index[a_id], index[b_id]
        if a == b:
            if snps != 0:
                raise DataValidationError(
                    f"{path} row {row_no}: nonzero self-distance for {a_id!r}"
                )
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            raise DataValidationError(
                f"{path} row {row_no}: duplicate pair ({a_id!r},{b_id!r})"
            )
        seen.add(key)
        values[a, b] = values[b, a] = snps
    expected = n * (n - 1) // 2
    if len(seen) != expected:
        raise DataValidationError(
            f"{path}: sparse distances cover {len(seen)} pairs, expected {expected}"
        )
    return DistanceMatrix(isolate_ids, values)


def _distances_from_square(
    path: Path, rows: list[list[str]], isolate_ids: tuple[str, ...]
) -> DistanceMatrix:
    header_ids = tuple(c.strip() for c in rows[0][1:])
    if set(header_ids) != set(isolate_ids) or len(header_ids) != len(isolate_ids):
        raise DataValidationError(
            f"{path}: matrix header isolates do not match isolates.csv"
        )
    order = {iso: i for i, iso in enumerate(isolate_ids)}
    n = len(isolate_ids)
    values = np.zeros((n, n), dtype=np.int64)
    if len(rows) - 1 != n:
        raise DataFormatError(f"{path}: expected {n} matrix rows, got {len(rows) - 1}")
    for row_no, row in enumerate(rows[1:], start=2):
        row_id = row[0].strip()
        if row_id not in order:
            raise DataValidationError(f"{path} row {row_no}: unknown isolate {row_id!r}")
        if len(row) - 1 != n:
            raise DataFormatError(f"{path} row {row_no}: expected {n} entries")
        i = order[row_id]
        for col, raw in enumerate(row[1:]):
            j = order[header_ids[col]]
            values[i, j] = _int_field(path, row_no, header_ids[col], raw)
    return DistanceMatrix(isolate_ids, values)


def load_dataset(
    episodes_path: str | Path,
    screens_path: str | Path,
    isolates_path: str | Path,
    distances_path: str | Path,
) -> Dataset:
    """Load and validate a dataset from its four CSV files.

    Args:
        episodes_path: patient_id,admit_day,discharge_day rows.
        screens_path: patient_id,day,result rows with result in {pos,neg}.
        isolates_path: isolate_id,patient_id,day rows.
        distances_path: sparse triples or a dense square matrix.

    Returns:
        A validated ``Dataset`` with screens sorted by day per patient.

    Raises:
        DataFormatError: on malformed rows or non-integer days.
        DataValidationError: on invariant violations; the message names
            the offending record.
    """
    episodes_path = Path(episodes_path)
    screens_path = Path(screens_path)
    isolates_path = Path(isolates_path)
    distances_path = Path(distances_path)

    screen_rows: dict[str, list[Screen]] = {}
    for row_no, row in enumerate(_read_rows(screens_path, ("patient_id", "day", "result")), start=2):
        pid = row["patient_id"]
        day = _int_field(screens_path, row_no, "day", row.get("day"))
        result = (row.get("result") or "").strip()
        if result not in ("pos", "neg"):
            raise DataFormatError(
                f"{screens_path} row {row_no}: result must be 'pos' or 'neg', got {result!r}"
            )
        screen_rows.setdefault(pid, []).append(Screen(day, result == "pos"))

    episodes: list[EpisodeRecord] = []
    seen_patients: set[str] = set()
    for row_no, row in enumerate(_read_rows(episodes_path, ("patient_id", "admit_day", "discharge_day")), start=2):
        pid = row["patient_id"]
        if pid in seen_patients:
            raise DataValidationError(f"{episodes_path} row {row_no}: duplicate patient {pid!r}")
        seen_patients.add(pid)
        admit = _int_field(episodes_path, row_no, "admit_day", row.get("admit_day"))
        disch = _int_field(episodes_path, row_no, "discharge_day", row.get("discharge_day"))
        if admit > disch:
            raise DataValidationError(
                f"patient {pid!r}: admit_day {admit} after discharge_day {disch}"
            )
        screens = tuple(sorted(screen_rows.pop(pid, []), key=lambda s: s.day))
        for s in screens:
            if s.day < admit or s.day > disch:
                raise DataValidationError(
                    f"patient {pid!r}: screen on day {s.day} outside episode [{admit},{disch}]"
                )
        episodes.append(EpisodeRecord(pid, admit, disch, screens))

    if screen_rows:
        stray = next(iter(screen_rows))
        raise DataValidationError(f"screens reference unknown patient {stray!r}")

    by_patient = {e.patient_id: e for e in episodes}
    isolates: list[IsolateRecord] = []
    seen_isolates: set[str] = set()
    for row_no, row in enumerate(_read_rows(isolates_path, ("isolate_id", "patient_id", "day")), start=2):
        iid, pid = row["isolate_id"], row["patient_id"]
        if iid in seen_isolates:
            raise DataValidationError(f"{isolates_path} row {row_no}: duplicate isolate {iid!r}")
        seen_isolates.add(iid)
        day = _int_field(isolates_path, row_no, "day", row.get("day"))
        if pid not in by_patient:
            raise DataValidationError(f"isolate {iid!r} references unknown patient {pid!r}")
        episode = by_patient[pid]
        if not any(s.day == day and s.positive for s in episode.screens):
            raise DataValidationError(
                f"isolate {iid!r}: day {day} is not a positive screen day of patient {pid!r}"
            )
        isolates.append(IsolateRecord(iid, pid, day))

    distances = _load_distances(distances_path, tuple(iso.isolate_id for iso in isolates))

    if episodes:
        day_range = (min(e.admit_day for e in episodes), max(e.discharge_day for e in episodes))
    else:
        day_range = (0, 0)
    return Dataset(episodes, isolates, distances, day_range)


def write_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Write a dataset to canonical CSV files under ``out_dir``.

    Canonical form: episodes sorted by patient_id, screens by
    (patient_id, day), isolates by isolate_id, and distances as sparse
    triples ordered by isolate index with a < b. Loading the written
    files reproduces the dataset.

    Returns:
        Mapping from logical name to written path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "episodes": out_dir / "episodes.csv",
        "screens": out_dir / "screens.csv",
        "isolates": out_dir / "isolates.csv",
        "distances": out_dir / "distances.csv",
    }
    episodes = sorted(dataset.episodes, key=lambda e: e.patient_id)
    with open(paths["episodes"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "admit_day", "discharge_day"])
        for e in episodes:
            w.writerow([e.patient_id, e.admit_day, e.discharge_day])
    with open(paths["screens"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "day", "result"])
        for e in episodes:
            for s in sorted(e.screens, key=lambda s: s.day):
                w.writerow([e.patient_id, s.day, "pos" if s.positive else "neg"])
    with open(paths["isolates"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["isolate_id", "patient_id", "day"])
        for iso in sorted(dataset.isolates, key=lambda iso: iso.isolate_id):
            w.writerow([iso.isolate_id, iso.patient_id, iso.sample_day])
    with open(paths["distances"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["isolate_a", "isolate_b", "snps"])
        ids = dataset.distances.ids
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        for ai in range(len(order)):
            for bi in range(ai + 1, len(order)):
                a, b = order[ai], order[bi]
                w.writerow([ids[a], ids[b], int(dataset.distances.values[a, b])])
    return paths


def observed_positive_set(dataset: Dataset) -> tuple[str, ...]:
    """Patients with at least one positive screen, sorted for determinism."""
    return tuple(
        sorted(e.patient_id for e in dataset.episodes if e.first_positive_day() is not None)
    )
