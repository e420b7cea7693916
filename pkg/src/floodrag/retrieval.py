"""Spatial neighbor search and the free-shot injection policy.

Neighbors are labeled knowledge-base entries whose centroids fall within a
1 km radius of the target, capped at three and ranked by distance. When
fewer than three are available the injection policy decides how many
prototypes and which hard-boundary cases supplement the prompt; slots the
local watershed library cannot fill resolve from the global library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .knowledge import FreeShot, FreeShotLibrary, GLOBAL_SCOPE, KBEntry
from .records import PDECategory, Record

EARTH_RADIUS_KM = 6371.0088
DEFAULT_RADIUS_KM = 1.0
DEFAULT_K_MAX = 3

# Degrees per km, shrunk a little so grid cells are never under one radius tall.
_LAT_DEG_PER_KM = 1.0 / 110.574


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (lon, lat) points in kilometers."""
    lon1, lat1 = math.radians(a[0]), math.radians(a[1])
    lon2, lat2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class NeighborContext:
    entry: KBEntry
    distance_km: float
    rank: int
    within_1km: bool = True


class SpatialIndex:
    """Uniform grid over lon/lat with cells at least one radius wide.

    A query inspects the 3x3 block of cells around the target, which covers
    the search radius by construction; candidates are then filtered by
    exact haversine distance. Falls back to a full scan for data beyond
    85 degrees latitude, where a fixed longitude cell width breaks down.
    """

    def __init__(self, entries: Sequence[KBEntry], radius_km: float = DEFAULT_RADIUS_KM):
        self.entries = list(entries)
        self.radius_km = radius_km
        max_lat = max((abs(e.record.y) for e in self.entries), default=0.0)
        self._scan_only = max_lat >= 85.0 or not self.entries
        self._cells: dict[tuple[int, int], list[KBEntry]] = {}
        if not self._scan_only:
            self._cell_lat = radius_km * _LAT_DEG_PER_KM
            km_per_lon_deg = 111.320 * math.cos(math.radians(min(max_lat + 0.1, 85.0)))
            self._cell_lon = radius_km / km_per_lon_deg
            for entry in self.entries:
                self._cells.setdefault(self._cell_of(entry.record.x, entry.record.y), []).append(entry)

    def _cell_of(self, lon: float, lat: float) -> tuple[int, int]:
        return (math.floor(lon / self._cell_lon), math.floor(lat / self._cell_lat))

    def candidates(self, lon: float, lat: float) -> list[KBEntry]:
        if self._scan_only:
            return self.entries
        cx, cy = self._cell_of(lon, lat)
        found: list[KBEntry] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                found.extend(self._cells.get((cx + dx, cy + dy), ()))
        return found


def find_neighbors(
    target: Record,
    index: SpatialIndex,
    k_max: int = DEFAULT_K_MAX,
    radius_km: float = DEFAULT_RADIUS_KM,
) -> list[NeighborContext]:
    """Up to k_max nearest labeled entries within the radius, ranked by distance.

    Ties break by row_id; the target's own row_id is excluded. An empty
    result is valid.
    """
    scored = []
    for entry in index.candidates(target.x, target.y):
        if entry.record.row_id == target.row_id:
            continue
        distance = haversine_km((target.x, target.y), (entry.record.x, entry.record.y))
        if distance <= radius_km:
            scored.append((distance, entry.record.row_id, entry))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [
        NeighborContext(entry=entry, distance_km=distance, rank=rank)
        for rank, (distance, _, entry) in enumerate(scored[:k_max], start=1)
    ]


@dataclass(frozen=True)
class InjectionPlan:
    """How many prototypes per level and which hard-boundary slots to inject."""

    neighbor_count: int
    prototypes_per_level: int
    hard_examples: tuple[tuple[str, str], ...]  # (boundary, side)


def plan_injection(neighbors: Sequence[NeighborContext]) -> InjectionPlan:
    """The free-shot injection policy, keyed on neighbor count and nearest label.

    Three neighbors suppress free-shots entirely. Two neighbors add one
    prototype per level plus the hard case aligned with the nearest
    neighbor's level. One neighbor adds one prototype per level plus both
    sides of the emphasized boundary: severity when the neighbor is high
    damage, occurrence otherwise. No neighbors adds two prototypes per
    level plus one case per boundary.
    """
    count = len(neighbors)
    if count > 3:
        raise ValueError(f"at most 3 neighbors expected, got {count}")
    if count == 3:
        return InjectionPlan(3, 0, ())
    if count == 2:
        nearest = neighbors[0].entry.record.label
        if nearest == PDECategory.HIGH:
            hard = (("severity", "for_2"),)
        elif nearest == PDECategory.MEDIUM:
            hard = (("occurrence", "for_1"),)
        else:
            hard = (("occurrence", "for_0"),)
        return InjectionPlan(2, 1, hard)
    if count == 1:
        if neighbors[0].entry.record.label == PDECategory.HIGH:
            hard = (("severity", "for_1"), ("severity", "for_2"))
        else:
            hard = (("occurrence", "for_0"), ("occurrence", "for_1"))
        return InjectionPlan(1, 1, hard)
    return InjectionPlan(0, 2, (("occurrence", "for_0"), ("severity", "for_2")))


def resolve_free_shots(
    plan: InjectionPlan,
    target_huc12: str,
    libraries: Mapping[str, FreeShotLibrary],
) -> list[FreeShot]:
    """Fill the plan's slots, slot-wise, from the local then global library.

    Output order is prototypes by level ascending then hard examples in
    plan order; row_ids never repeat within one context.
    """
    if GLOBAL_SCOPE not in libraries:
        raise ValueError("libraries must include the global scope")
    local = libraries.get(target_huc12)
    global_lib = libraries[GLOBAL_SCOPE]

    shots: list[FreeShot] = []
    seen: set[int] = set()

    def add(shot: FreeShot | None) -> None:
        if shot is not None and shot.row_id not in seen:
            seen.add(shot.row_id)
            shots.append(shot)

    for level in PDECategory:
        for slot in range(plan.prototypes_per_level):
            shot = local.prototype(level, slot) if local is not None else None
            if shot is None:
                shot = global_lib.prototype(level, slot)
            add(shot)
    for boundary, side in plan.hard_examples:
        shot = local.hard_case(boundary, side) if local is not None else None
        if shot is None:
            shot = global_lib.hard_case(boundary, side)
        add(shot)
    return shots


def retrieval_audit(
    target: Record,
    neighbors: Sequence[NeighborContext],
    plan: InjectionPlan,
    free_shots: Sequence[FreeShot],
) -> dict[str, object]:
    """One JSON-ready audit line describing the assembled context."""
    return {
        "row_id": target.row_id,
        "neighbors": [
            {"row_id": n.entry.record.row_id, "distance_km": n.distance_km, "rank": n.rank}
            for n in neighbors
        ],
        "plan": {
            "neighbor_count": plan.neighbor_count,
            "prototypes_per_level": plan.prototypes_per_level,
            "hard_examples": [list(pair) for pair in plan.hard_examples],
        },
        "free_shots": [s.row_id for s in free_shots],
    }
