"""Loader, validation and round-trip tests for the dataset CSV formats."""

from __future__ import annotations

import numpy as np
import pytest

from wardtrace.data import (
    DataFormatError,
    DataValidationError,
    DistanceMatrix,
    load_dataset,
    observed_positive_set,
    write_dataset,
)

from conftest import make_dataset


def write_csvs(tmp_path, episodes, screens, isolates, distances):
    paths = {}
    for name, content in [
        ("episodes", episodes),
        ("screens", screens),
        ("isolates", isolates),
        ("distances", distances),
    ]:
        p = tmp_path / f"{name}.csv"
        p.write_text(content, encoding="utf-8")
        paths[name] = p
    return paths


BASIC = dict(
    episodes="patient_id,admit_day,discharge_day\nA,0,5\nB,2,9\nC,4,6\n",
    screens="patient_id,day,result\nA,0,pos\nA,3,pos\nB,2,neg\nB,8,pos\nC,5,neg\n",
    isolates="isolate_id,patient_id,day\niA,A,0\niB,B,8\n",
    distances="isolate_a,isolate_b,snps\niA,iB,3\n",
)


def test_load_basic_sparse(tmp_path):
    paths = write_csvs(tmp_path, **BASIC)
    d = load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])
    assert d.n_patients == 3
    assert d.n_isolates == 2
    assert d.day_range == (0, 9)
    assert d.distances[(0, 1)] == 3
    # screens sorted by day per patient
    assert [s.day for s in d.episode("A").screens] == [0, 3]


def test_load_dense_matrix(tmp_path):
    dense = "isolate_id,iA,iB\niA,0,3\niB,3,0\n"
    paths = write_csvs(tmp_path, **{**BASIC, "distances": dense})
    d = load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])
    assert d.distances[(0, 1)] == 3


def test_empty_genetic_data(tmp_path):
    paths = write_csvs(
        tmp_path,
        episodes="patient_id,admit_day,discharge_day\nA,0,5\nB,2,9\nC,4,6\n",
        screens="patient_id,day,result\nA,0,neg\n",
        isolates="isolate_id,patient_id,day\n",
        distances="isolate_a,isolate_b,snps\n",
    )
    d = load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])
    assert d.n_isolates == 0
    assert d.distances.size == 0


def test_screen_outside_episode_rejected(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "screens": "patient_id,day,result\nB,1,neg\n"}
    )
    with pytest.raises(DataValidationError, match="'B'"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_non_integer_day_rejected(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "episodes": "patient_id,admit_day,discharge_day\nA,zero,5\n"}
    )
    with pytest.raises(DataFormatError, match="admit_day"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_admit_after_discharge_rejected(tmp_path):
    paths = write_csvs(
        tmp_path,
        **{
            **BASIC,
            "episodes": "patient_id,admit_day,discharge_day\nA,7,5\n",
            "screens": "patient_id,day,result\n",
            "isolates": "isolate_id,patient_id,day\n",
            "distances": "isolate_a,isolate_b,snps\n",
        },
    )
    with pytest.raises(DataValidationError, match="'A'"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_dangling_isolate_rejected(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "isolates": "isolate_id,patient_id,day\niX,NOPE,3\n"}
    )
    with pytest.raises(DataValidationError, match="'NOPE'"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_isolate_day_must_match_positive_screen(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "isolates": "isolate_id,patient_id,day\niA,A,1\n"}
    )
    with pytest.raises(DataValidationError, match="'iA'"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_duplicate_pair_rejected(tmp_path):
    paths = write_csvs(
        tmp_path,
        **{**BASIC, "distances": "isolate_a,isolate_b,snps\niA,iB,3\niB,iA,3\n"},
    )
    with pytest.raises(DataValidationError, match="duplicate pair"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_missing_pair_rejected(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "distances": "isolate_a,isolate_b,snps\n"}
    )
    with pytest.raises(DataValidationError, match="expected 1"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_negative_distance_rejected(tmp_path):
    paths = write_csvs(
        tmp_path, **{**BASIC, "distances": "isolate_a,isolate_b,snps\niA,iB,-1\n"}
    )
    with pytest.raises(DataValidationError, match="negative"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_asymmetric_dense_rejected(tmp_path):
    dense = "isolate_id,iA,iB\niA,0,3\niB,4,0\n"
    paths = write_csvs(tmp_path, **{**BASIC, "distances": dense})
    with pytest.raises(DataValidationError, match="asymmetric"):
        load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])


def test_distance_matrix_invariants():
    with pytest.raises(DataValidationError):
        DistanceMatrix(("a", "b"), np.array([[0, 1], [2, 0]]))
    with pytest.raises(DataValidationError):
        DistanceMatrix(("a", "b"), np.array([[0, -1], [-1, 0]]))
    with pytest.raises(DataValidationError):
        DistanceMatrix(("a", "b"), np.array([[1, 2], [2, 0]]))


def test_observed_positive_set():
    d = make_dataset(
        [
            ("A", 0, 5, [(0, "neg"), (3, "neg")]),
            ("B", 0, 5, []),
        ]
    )
    assert observed_positive_set(d) == ()

    d = make_dataset([("A", 0, 5, [(2, "pos")]), ("B", 0, 5, [(1, "neg")])])
    assert observed_positive_set(d) == ("A",)


def test_round_trip_byte_identical(tmp_path):
    paths = write_csvs(tmp_path, **BASIC)
    d = load_dataset(paths["episodes"], paths["screens"], paths["isolates"], paths["distances"])
    out = write_dataset(d, tmp_path / "out")
    for name in ("episodes", "screens", "isolates", "distances"):
        assert out[name].read_bytes().replace(b"\r\n", b"\n") == paths[name].read_bytes()
    # a second round trip is exactly stable
    d2 = load_dataset(out["episodes"], out["screens"], out["isolates"], out["distances"])
    out2 = write_dataset(d2, tmp_path / "out2")
    for name in out:
        assert out[name].read_bytes() == out2[name].read_bytes()
