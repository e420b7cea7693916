from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from floodrag.knowledge import GLOBAL_SCOPE, build_library
from floodrag.records import PDECategory
from floodrag.retrieval import (
    InjectionPlan,
    SpatialIndex,
    find_neighbors,
    haversine_km,
    plan_injection,
    resolve_free_shots,
)

from conftest import make_entry, simple_record

coords = st.tuples(
    st.floats(min_value=-179.9, max_value=179.9),
    st.floats(min_value=-84.9, max_value=84.9),
)


class TestHaversine:
    def test_identical_points(self):
        assert haversine_km((-95.5, 30.0), (-95.5, 30.0)) == 0.0

    def test_one_degree_of_latitude(self):
        assert haversine_km((-95.5, 30.0), (-95.5, 31.0)) == pytest.approx(111.19, abs=0.05)

    @given(coords, coords)
    def test_symmetric_and_nonnegative(self, a, b):
        d = haversine_km(a, b)
        assert d >= 0.0
        assert d == haversine_km(b, a)


def _entry_at(row_id, lon, lat, label=1):
    return make_entry(simple_record(row_id, label, predictors={"A": 1.0}, x=lon, y=lat))


def scan_neighbors(target, entries, k_max=3, radius_km=1.0):
    """O(n) oracle with the same scalar distance function."""
    scored = []
    for entry in entries:
        if entry.record.row_id == target.row_id:
            continue
        d = haversine_km((target.x, target.y), (entry.record.x, entry.record.y))
        if d <= radius_km:
            scored.append((d, entry.record.row_id))
    scored.sort()
    return [row_id for _, row_id in scored[:k_max]]


class TestFindNeighbors:
    def test_same_coordinates_different_row(self):
        entries = [_entry_at(2, -95.4, 29.8)]
        target = simple_record(1, 0, predictors={"A": 1.0}, x=-95.4, y=29.8)
        found = find_neighbors(target, SpatialIndex(entries))
        assert len(found) == 1
        assert found[0].distance_km == 0.0
        assert found[0].rank == 1

    def test_self_excluded(self):
        entries = [_entry_at(1, -95.4, 29.8)]
        target = simple_record(1, 0, predictors={"A": 1.0}, x=-95.4, y=29.8)
        assert find_neighbors(target, SpatialIndex(entries)) == []

    def test_five_in_radius_returns_three_closest(self):
        entries = [_entry_at(i, -95.4 + i * 0.001, 29.8) for i in range(2, 7)]
        target = simple_record(1, 0, predictors={"A": 1.0}, x=-95.4, y=29.8)
        found = find_neighbors(target, SpatialIndex(entries))
        assert [n.entry.record.row_id for n in found] == [2, 3, 4]
        assert [n.rank for n in found] == [1, 2, 3]
        assert all(n.distance_km <= 1.0 for n in found)

    def test_matches_scan_oracle_on_random_points(self):
        rng = random.Random(11)
        entries = [
            _entry_at(i, -95.6 + rng.random() * 0.2, 29.7 + rng.random() * 0.2)
            for i in range(2000)
        ]
        index = SpatialIndex(entries)
        for q in range(150):
            target = simple_record(
                10_000 + q, 0, predictors={"A": 1.0},
                x=-95.6 + rng.random() * 0.2, y=29.7 + rng.random() * 0.2,
            )
            found = [n.entry.record.row_id for n in find_neighbors(target, index)]
            assert found == scan_neighbors(target, entries)

    def test_distance_ties_break_by_row_id(self):
        entries = [_entry_at(5, -95.4, 29.801), _entry_at(3, -95.4, 29.801)]
        target = simple_record(1, 0, predictors={"A": 1.0}, x=-95.4, y=29.8)
        found = find_neighbors(target, SpatialIndex(entries))
        assert [n.entry.record.row_id for n in found] == [3, 5]


def _neighbors(labels, start_lon=-95.4):
    entries = [
        _entry_at(100 + i, start_lon + i * 0.002, 29.8, label)
        for i, label in enumerate(labels)
    ]
    target = simple_record(1, 0, predictors={"A": 1.0}, x=start_lon, y=29.8)
    return find_neighbors(target, SpatialIndex(entries))


class TestPlanInjection:
    def test_three_neighbors_suppress_free_shots(self):
        plan = plan_injection(_neighbors([0, 1, 2]))
        assert plan == InjectionPlan(3, 0, ())

    def test_two_neighbors_align_with_nearest(self):
        assert plan_injection(_neighbors([0, 1])).hard_examples == (("occurrence", "for_0"),)
        assert plan_injection(_neighbors([1, 0])).hard_examples == (("occurrence", "for_1"),)
        assert plan_injection(_neighbors([2, 0])).hard_examples == (("severity", "for_2"),)
        assert plan_injection(_neighbors([0, 1])).prototypes_per_level == 1

    def test_one_neighbor_emphasizes_boundary(self):
        high = plan_injection(_neighbors([2]))
        assert high.hard_examples == (("severity", "for_1"), ("severity", "for_2"))
        low = plan_injection(_neighbors([0]))
        assert low.hard_examples == (("occurrence", "for_0"), ("occurrence", "for_1"))
        assert high.prototypes_per_level == low.prototypes_per_level == 1

    def test_zero_neighbors_cover_both_boundaries(self):
        plan = plan_injection([])
        assert plan.prototypes_per_level == 2
        assert {pair[0] for pair in plan.hard_examples} == {"occurrence", "severity"}
        assert len(plan.hard_examples) == 2

    def test_exhaustive_policy_table(self):
        for count in range(4):
            for nearest in (0, 1, 2):
                labels = [nearest] + [0] * (count - 1) if count else []
                plan = plan_injection(_neighbors(labels))
                assert plan.neighbor_count == count
                if count == 3:
                    assert plan.prototypes_per_level == 0 and plan.hard_examples == ()
                elif count == 2:
                    assert plan.prototypes_per_level == 1 and len(plan.hard_examples) == 1
                elif count == 1:
                    assert plan.prototypes_per_level == 1 and len(plan.hard_examples) == 2
                else:
                    assert plan.prototypes_per_level == 2 and len(plan.hard_examples) == 2

    def test_more_than_three_rejected(self):
        from floodrag.retrieval import NeighborContext

        entry = _entry_at(100, -95.4, 29.8, 1)
        fake = [NeighborContext(entry=entry, distance_km=0.0, rank=i + 1) for i in range(4)]
        with pytest.raises(ValueError):
            plan_injection(fake)


def _library_fixture(scope, rng, n=40, huc12="120401020101"):
    entries = []
    for i in range(n):
        predictors = {"A": rng.random() * 5, "B": rng.random() * 5}
        entries.append(make_entry(simple_record(
            (hash(scope) % 1000) * 1000 + i, i % 3, predictors=predictors, huc12=huc12
        )))
    return build_library(entries, {"A": 0.5, "B": 0.5}, scope)


class TestResolveFreeShots:
    def setup_method(self):
        rng = random.Random(17)
        self.global_lib = _library_fixture(GLOBAL_SCOPE, rng)
        self.local_lib = _library_fixture("120401020101", rng)
        self.libraries = {GLOBAL_SCOPE: self.global_lib, "120401020101": self.local_lib}

    def test_zero_slots(self):
        plan = InjectionPlan(3, 0, ())
        assert resolve_free_shots(plan, "120401020101", self.libraries) == []

    def test_local_preferred_when_present(self):
        plan = plan_injection([])
        shots = resolve_free_shots(plan, "120401020101", self.libraries)
        local_ids = {
            s.row_id
            for shots_per in self.local_lib.prototypes.values()
            for s in shots_per
        }
        assert all(s.row_id in local_ids for s in shots[:6])

    def test_unknown_scope_falls_back_to_global(self):
        plan = plan_injection([])
        shots = resolve_free_shots(plan, "999999999999", self.libraries)
        assert len(shots) == 8  # 2 prototypes x 3 levels + 2 hard cases
        global_ids = {
            s.row_id
            for shots_per in self.global_lib.prototypes.values()
            for s in shots_per
        } | {s.row_id for s in self.global_lib.hard_occurrence.values()} \
          | {s.row_id for s in self.global_lib.hard_severity.values()}
        assert all(s.row_id in global_ids for s in shots)

    def test_slotwise_fallback_for_missing_level(self):
        from dataclasses import replace

        gutted = replace(self.local_lib, prototypes={
            **self.local_lib.prototypes, PDECategory.HIGH: ()
        })
        libraries = {GLOBAL_SCOPE: self.global_lib, "120401020101": gutted}
        plan = InjectionPlan(0, 1, ())
        shots = resolve_free_shots(plan, "120401020101", libraries)
        assert len(shots) == 3
        assert shots[0].row_id in {s.row_id for s in self.local_lib.prototypes[PDECategory.LOW]}
        assert shots[2].row_id in {s.row_id for s in self.global_lib.prototypes[PDECategory.HIGH]}

    def test_no_duplicate_row_ids(self):
        plan = plan_injection([])
        shots = resolve_free_shots(plan, "120401020101", self.libraries)
        ids = [s.row_id for s in shots]
        assert len(ids) == len(set(ids))

    def test_missing_global_scope_rejected(self):
        with pytest.raises(ValueError):
            resolve_free_shots(InjectionPlan(0, 1, ()), "x", {"y": self.local_lib})
