"""Census, tree distance, last-colonization-day and validation tests."""

from __future__ import annotations

import math

import pytest

from wardtrace.state import (
    IMPORTATION,
    census,
    host_tree_distance,
    last_colonization_day,
    tree_distance,
    validate,
)

from conftest import make_dataset, make_state


def test_census_empty():
    d = make_dataset([("A", 0, 5, []), ("B", 0, 5, [])])
    st = make_state(d, {})
    assert census(st, d).counts == [0] * 6


def test_census_importation_full_episode():
    d = make_dataset([("A", 5, 9, [])], day_range=(0, 12))
    st = make_state(d, {"A": (5, "import", None)})
    c = census(st, d)
    assert [c.at(t) for t in range(0, 13)] == [0] * 5 + [1] * 5 + [0] * 3
    assert c.at(-3) == 0 and c.at(99) == 0


def test_census_acquisition_starts_next_day():
    d = make_dataset(
        [("S", 0, 9, [(0, "pos")]), ("A", 0, 9, [(6, "pos")])], day_range=(0, 9)
    )
    st = make_state(d, {"S": (0, "import", None), "A": (5, "S", None)})
    c = census(st, d)
    # A transmits on days 6..9 only; S on 0..9.
    assert [c.at(t) for t in range(10)] == [1, 1, 1, 1, 1, 1, 2, 2, 2, 2]


def test_census_same_day_discharge_contributes_nothing():
    # colonized and discharged the same day: day t+1 exceeds discharge
    d = make_dataset([("A", 3, 3, [])], day_range=(0, 5))
    st = make_state(d, {"A": (3, "import", None)})
    assert census(st, d).at(3) == 1  # importation transmits on admission day
    st2 = make_state(
        make_dataset([("S", 0, 9, [(0, "pos")]), ("A", 3, 3, [])], day_range=(0, 9)),
        {"S": (0, "import", None), "A": (3, "S", None)},
    )
    d2 = make_dataset([("S", 0, 9, [(0, "pos")]), ("A", 3, 3, [])], day_range=(0, 9))
    assert census(st2, d2).at(3) == 1  # only S; A never transmits


def three_chain():
    d = make_dataset(
        episodes=[
            ("A", 0, 20, [(1, "pos")]),
            ("B", 0, 20, [(6, "pos")]),
            ("C", 0, 20, [(9, "pos")]),
            ("D", 0, 20, [(2, "pos")]),
        ],
        isolates=[
            ("iA", "A", 1),
            ("iB", "B", 6),
            ("iC", "C", 9),
            ("iD", "D", 2),
        ],
        distances={},
    )
    st = make_state(
        d,
        {
            "A": (0, "import", "A"),
            "B": (5, "A", "A"),
            "C": (8, "B", "A"),
            "D": (0, "import", "D"),
        },
    )
    return d, st


def test_tree_distance_cases():
    d, st = three_chain()
    iso = {i.isolate_id: i for i in d.isolates}
    assert tree_distance(st, d, iso["iA"], iso["iA"]) == 0
    assert tree_distance(st, d, iso["iA"], iso["iB"]) == 1
    assert tree_distance(st, d, iso["iA"], iso["iC"]) == 2
    assert tree_distance(st, d, iso["iB"], iso["iC"]) == 1
    assert tree_distance(st, d, iso["iA"], iso["iD"]) == math.inf
    # symmetry
    assert tree_distance(st, d, iso["iC"], iso["iA"]) == 2


def test_tree_distance_triangle_within_chain():
    d, st = three_chain()
    a, b, c = (d.patient_index(p) for p in "ABC")
    for x, y, z in [(a, c, b), (a, b, c), (b, c, a)]:
        assert host_tree_distance(st, x, y) <= host_tree_distance(
            st, x, z
        ) + host_tree_distance(st, z, y)


def test_last_colonization_day():
    # no positive screens, no offspring: discharge day
    d = make_dataset([("A", 0, 7, []), ("S", 0, 9, [(0, "pos")])])
    st = make_state(d, {"S": (0, "import", None), "A": (3, "S", None)}, added=["A"])
    assert last_colonization_day(st, d, d.patient_index("A")) == 7

    # min over first positive (12), discharge (20), offspring col 10 -> 9
    d = make_dataset(
        [("J", 0, 20, [(12, "pos")]), ("O", 0, 20, [(11, "pos")])]
    )
    st = make_state(d, {"J": (5, "import", None), "O": (10, "J", None)})
    assert last_colonization_day(st, d, d.patient_index("J")) == 9

    # importation with positive screen on admission day
    d = make_dataset([("J", 4, 9, [(4, "pos")])])
    st = make_state(d, {"J": (4, "import", None)})
    assert last_colonization_day(st, d, d.patient_index("J")) == 4


def test_validate_clean_state_ok():
    d, st = three_chain()
    assert validate(st, d) == []


def test_validate_detects_cycle():
    d = make_dataset([("A", 0, 9, []), ("B", 0, 9, [])])
    st = make_state(d, {"A": (3, "B", None), "B": (5, "A", None)})
    messages = "\n".join(validate(st, d))
    assert "cycle" in messages or "not before" in messages


def test_validate_detects_false_positive():
    d = make_dataset([("A", 0, 9, [(3, "pos")])])
    st = make_state(d, {"A": (5, "import", None)})
    messages = "\n".join(validate(st, d))
    assert "false positive" in messages
    # import_flag requires col_day == admit_day, so that is flagged too
    assert "import_flag" in messages


def test_validate_detects_positive_but_never_colonized():
    d = make_dataset([("A", 0, 9, [(3, "pos")])])
    st = make_state(d, {})
    assert any("never colonized" in v for v in validate(st, d))


def test_validate_detects_group_mismatch():
    d, st = three_chain()
    st.group[d.patient_index("C")] = d.patient_index("D")
    assert any("group" in v for v in validate(st, d))


def test_validate_detects_source_unable_to_transmit():
    d = make_dataset([("A", 0, 4, [(0, "pos")]), ("B", 6, 9, [])])
    st = make_state(d, {"A": (0, "import", None), "B": (7, "A", None)})
    assert any("cannot transmit" in v for v in validate(st, d))
