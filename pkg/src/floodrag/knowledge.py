"""Knowledge-base entries and free-shot library construction.

A knowledge-base entry joins a labeled record with its text-mode summary
and an audit-clean reasoning trajectory. Within each watershed scope
(HUC12 groups large enough to be stable, plus an always-present global
scope) we select, per damage level, the two entries closest to the level's
feature profile under a divergence-weighted z-distance, and the entries
sitting closest to the occurrence and severity boundaries by distance
margin. Every selection records its distances, per-feature contributions,
and a human-readable reason.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .prompts import Trajectory, TrajectoryAudit
from .records import PDECategory, Record

DEFAULT_EPSILON = 1e-6
DEFAULT_MIN_SCOPE = 100
GLOBAL_SCOPE = "global"

OCCURRENCE_SIDES = ("for_0", "for_1")
SEVERITY_SIDES = ("for_1", "for_2")


@dataclass(frozen=True)
class KBEntry:
    record: Record
    text_mode: str
    trajectory: Trajectory
    audit: TrajectoryAudit

    def __post_init__(self) -> None:
        if self.audit.violations:
            raise ValueError(f"row {self.record.row_id}: trajectory failed audit")
        if self.record.label is None:
            raise ValueError(f"row {self.record.row_id}: knowledge-base entry needs a label")
        if self.trajectory.answer != self.record.label:
            raise ValueError(f"row {self.record.row_id}: answer does not match label")


@dataclass(frozen=True)
class FeatureStats:
    mu: float
    sigma: float
    n: int


@dataclass(frozen=True)
class ClassStats:
    level: PDECategory
    per_feature: dict[str, FeatureStats]


class FreeShotKind(str, enum.Enum):
    PROTOTYPE = "prototype"
    HARD_OCCURRENCE = "hard_occurrence"
    HARD_SEVERITY = "hard_severity"


@dataclass(frozen=True)
class FreeShot:
    kind: FreeShotKind
    level: PDECategory
    row_id: int
    features: dict[str, float]
    per_feature_contrib: dict[str, float]
    why_selected: str
    text_mode: str
    reasoning: str
    weighted_zdist: float | None = None
    margin: float | None = None

    def __post_init__(self) -> None:
        if self.kind is FreeShotKind.PROTOTYPE and self.weighted_zdist is None:
            raise ValueError("prototype free-shot needs weighted_zdist")
        if self.kind is not FreeShotKind.PROTOTYPE and self.margin is None:
            raise ValueError("hard free-shot needs a margin")


@dataclass(frozen=True)
class FreeShotLibrary:
    """Per-scope prototypes and hard-boundary cases plus the stats behind them."""

    scope: str
    prototypes: dict[PDECategory, tuple[FreeShot, ...]]
    hard_occurrence: dict[str, FreeShot]
    hard_severity: dict[str, FreeShot]
    stats: dict[PDECategory, ClassStats]
    cue_weights: dict[str, float]
    absent: tuple[str, ...] = field(default=())

    def prototype(self, level: PDECategory, index: int) -> FreeShot | None:
        shots = self.prototypes.get(level, ())
        return shots[index] if index < len(shots) else None

    def hard_case(self, boundary: str, side: str) -> FreeShot | None:
        table = self.hard_occurrence if boundary == "occurrence" else self.hard_severity
        return table.get(side)


def class_stats(entries: Iterable[KBEntry], level: PDECategory) -> ClassStats:
    """Per-feature mean and population standard deviation at one level."""
    values: dict[str, list[float]] = {}
    for entry in entries:
        if entry.record.label != level:
            continue
        for key, value in entry.record.predictors.items():
            values.setdefault(key, []).append(value)
    per_feature = {}
    for key, xs in values.items():
        n = len(xs)
        mu = sum(xs) / n
        sigma = math.sqrt(sum((x - mu) ** 2 for x in xs) / n)
        per_feature[key] = FeatureStats(mu=mu, sigma=sigma, n=n)
    return ClassStats(level=level, per_feature=per_feature)


def standardized_distance(
    record: Record, stats: ClassStats, epsilon: float = DEFAULT_EPSILON
) -> dict[str, float]:
    """Per-feature |x - mu| / (sigma + epsilon); features missing on either side drop out."""
    z = {}
    for key, value in record.predictors.items():
        fs = stats.per_feature.get(key)
        if fs is not None:
            z[key] = abs(value - fs.mu) / (fs.sigma + epsilon)
    if not z:
        raise ValueError(f"row {record.row_id}: no features overlap the class stats")
    return z


def weighted_zdistance(z: Mapping[str, float], cue_weights: Mapping[str, float]) -> float:
    """Cue-weighted sum of standardized distances; absent features contribute 0."""
    common = [key for key in cue_weights if key in z]
    if not common:
        raise ValueError("no overlap between cue weights and standardized distances")
    return sum(cue_weights[key] * z[key] for key in common)


def occurrence_margin(d_low: float, d_med: float, d_high: float) -> float:
    return abs(d_low - min(d_med, d_high))


def severity_margin(d_med: float, d_high: float) -> float:
    return abs(d_med - d_high)


def _level_distances(
    record: Record,
    stats: Mapping[PDECategory, ClassStats],
    cue_weights: Mapping[str, float],
    epsilon: float,
) -> dict[PDECategory, float]:
    distances = {}
    for level in PDECategory:
        if level not in stats:
            raise ValueError(f"missing class stats for level {int(level)}")
        z = standardized_distance(record, stats[level], epsilon)
        distances[level] = weighted_zdistance(z, cue_weights)
    return distances


def record_margins(
    record: Record,
    stats: Mapping[PDECategory, ClassStats],
    cue_weights: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[float, float]:
    """Occurrence and severity margins of one record's weighted distances."""
    d = _level_distances(record, stats, cue_weights, epsilon)
    return (
        occurrence_margin(d[PDECategory.LOW], d[PDECategory.MEDIUM], d[PDECategory.HIGH]),
        severity_margin(d[PDECategory.MEDIUM], d[PDECategory.HIGH]),
    )


def boundary_margins(
    entry: KBEntry,
    stats: Mapping[PDECategory, ClassStats],
    cue_weights: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[float, float]:
    """Occurrence and severity margins of one entry's weighted distances."""
    return record_margins(entry.record, stats, cue_weights, epsilon)


def _contributions(
    z: Mapping[str, float], cue_weights: Mapping[str, float]
) -> dict[str, float]:
    return {key: cue_weights[key] * z[key] for key in cue_weights if key in z}


def _top_contributors(
    contrib: Mapping[str, float], z: Mapping[str, float], k: int = 3
) -> str:
    ranked = sorted(contrib.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return ", ".join(f"{key}: {z[key]:.3f} (weighted {value:.3f})" for key, value in ranked)


def select_prototypes(
    entries: Sequence[KBEntry],
    stats: Mapping[PDECategory, ClassStats],
    cue_weights: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
    per_level: int = 2,
) -> dict[PDECategory, tuple[FreeShot, ...]]:
    """Per level, the entries with the smallest weighted z-distance to the level means.

    Ties break by row_id ascending, so selection is invariant to input order.
    """
    if not entries:
        raise ValueError("empty scope")
    out: dict[PDECategory, tuple[FreeShot, ...]] = {}
    for level in PDECategory:
        level_stats = stats.get(level)
        if level_stats is None or not level_stats.per_feature:
            out[level] = ()
            continue
        scored = []
        for entry in entries:
            if entry.record.label != level:
                continue
            z = standardized_distance(entry.record, level_stats, epsilon)
            d = weighted_zdistance(z, cue_weights)
            scored.append((d, entry.record.row_id, entry, z))
        scored.sort(key=lambda item: (item[0], item[1]))
        shots = []
        for d, row_id, entry, z in scored[:per_level]:
            contrib = _contributions(z, cue_weights)
            shots.append(FreeShot(
                kind=FreeShotKind.PROTOTYPE,
                level=level,
                row_id=row_id,
                features=dict(entry.record.predictors),
                per_feature_contrib=contrib,
                why_selected=(
                    f"Selected as class {int(level)} prototype by minimal weighted "
                    f"z-distance; d={d:.4f}. Top contributors: {_top_contributors(contrib, z)}."
                ),
                text_mode=entry.text_mode,
                reasoning=entry.trajectory.raw,
                weighted_zdist=d,
            ))
        out[level] = tuple(shots)
    return out


def select_hard_examples(
    entries: Sequence[KBEntry],
    stats: Mapping[PDECategory, ClassStats],
    cue_weights: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[dict[str, FreeShot], dict[str, FreeShot], list[str]]:
    """Closest example per side of each boundary, by distance margin.

    Returns (occurrence side map, severity side map, absent side names).
    Sides with no candidates, or where a level's stats are missing, stay
    absent and are resolved from the global library by the caller.
    """
    candidates = []
    for entry in entries:
        try:
            d = _level_distances(entry.record, stats, cue_weights, epsilon)
        except ValueError:
            continue
        candidates.append((entry, d))

    def pick(levels: set[PDECategory], margin_of, kind, side_label: str) -> FreeShot | None:
        pool = []
        for entry, d in candidates:
            if entry.record.label in levels:
                pool.append((margin_of(d), entry.record.row_id, entry, d))
        if not pool:
            return None
        pool.sort(key=lambda item: (item[0], item[1]))
        margin, row_id, entry, d = pool[0]
        if kind is FreeShotKind.HARD_OCCURRENCE:
            why = (
                f"Closest to 0/1 occurrence boundary (margin={margin:.4f}; "
                f"d0={d[PDECategory.LOW]:.4f}, "
                f"d12={min(d[PDECategory.MEDIUM], d[PDECategory.HIGH]):.4f})."
            )
        else:
            why = (
                f"Closest to 1/2 severity boundary (margin={margin:.4f}; "
                f"d1={d[PDECategory.MEDIUM]:.4f}, d2={d[PDECategory.HIGH]:.4f})."
            )
        z = standardized_distance(entry.record, stats[entry.record.label], epsilon)
        contrib = _contributions(z, cue_weights)
        return FreeShot(
            kind=kind,
            level=entry.record.label,
            row_id=row_id,
            features=dict(entry.record.predictors),
            per_feature_contrib=contrib,
            why_selected=why,
            text_mode=entry.text_mode,
            reasoning=entry.trajectory.raw,
            margin=margin,
        )

    m_occ = lambda d: occurrence_margin(d[PDECategory.LOW], d[PDECategory.MEDIUM], d[PDECategory.HIGH])
    m_sev = lambda d: severity_margin(d[PDECategory.MEDIUM], d[PDECategory.HIGH])

    occurrence: dict[str, FreeShot] = {}
    severity: dict[str, FreeShot] = {}
    absent: list[str] = []

    shot = pick({PDECategory.LOW}, m_occ, FreeShotKind.HARD_OCCURRENCE, "for_0")
    if shot is not None:
        occurrence["for_0"] = shot
    else:
        absent.append("occurrence:for_0")
    shot = pick({PDECategory.MEDIUM, PDECategory.HIGH}, m_occ, FreeShotKind.HARD_OCCURRENCE, "for_1")
    if shot is not None:
        occurrence["for_1"] = shot
    else:
        absent.append("occurrence:for_1")
    shot = pick({PDECategory.MEDIUM}, m_sev, FreeShotKind.HARD_SEVERITY, "for_1")
    if shot is not None:
        severity["for_1"] = shot
    else:
        absent.append("severity:for_1")
    shot = pick({PDECategory.HIGH}, m_sev, FreeShotKind.HARD_SEVERITY, "for_2")
    if shot is not None:
        severity["for_2"] = shot
    else:
        absent.append("severity:for_2")
    return occurrence, severity, absent


def build_library(
    entries: Sequence[KBEntry],
    cue_weights: Mapping[str, float],
    scope: str,
    epsilon: float = DEFAULT_EPSILON,
) -> FreeShotLibrary:
    stats = {level: class_stats(entries, level) for level in PDECategory}
    prototypes = select_prototypes(entries, stats, cue_weights, epsilon)
    occurrence, severity, absent = select_hard_examples(entries, stats, cue_weights, epsilon)
    for level in PDECategory:
        have = len(prototypes.get(level, ()))
        n_level = sum(1 for e in entries if e.record.label == level)
        if have < min(2, n_level) or n_level == 0:
            absent.append(f"prototype:{int(level)}")
    return FreeShotLibrary(
        scope=scope,
        prototypes=prototypes,
        hard_occurrence=occurrence,
        hard_severity=severity,
        stats=stats,
        cue_weights=dict(cue_weights),
        absent=tuple(sorted(set(absent))),
    )


def build_libraries(
    entries: Sequence[KBEntry],
    cue_weights: Mapping[str, float],
    min_scope: int = DEFAULT_MIN_SCOPE,
    epsilon: float = DEFAULT_EPSILON,
) -> dict[str, FreeShotLibrary]:
    """One library per sufficiently large HUC12 scope, plus the global one.

    Class stats are computed within each scope, so local selections reflect
    local feature profiles. Scopes below ``min_scope`` entries get no local
    library and resolve from the global one.
    """
    if not entries:
        raise ValueError("no knowledge-base entries")
    by_scope: dict[str, list[KBEntry]] = {}
    for entry in entries:
        by_scope.setdefault(entry.record.huc12, []).append(entry)
    libraries = {GLOBAL_SCOPE: build_library(entries, cue_weights, GLOBAL_SCOPE, epsilon)}
    for scope in sorted(by_scope):
        scoped = by_scope[scope]
        if len(scoped) >= min_scope:
            libraries[scope] = build_library(scoped, cue_weights, scope, epsilon)
    return libraries


# --- serialization -------------------------------------------------------


def _shot_to_dict(shot: FreeShot) -> dict[str, object]:
    out: dict[str, object] = {
        "type": shot.kind.value,
        "row_id": shot.row_id,
        "PDE_category": int(shot.level),
        "features": shot.features,
        "per_feature": shot.per_feature_contrib,
        "why_selected": shot.why_selected,
        "text_mode": shot.text_mode,
        "reasoning": shot.reasoning,
    }
    if shot.weighted_zdist is not None:
        out["weighted_zdist"] = shot.weighted_zdist
    if shot.margin is not None:
        out["margin"] = shot.margin
    return out


def _shot_from_dict(payload: Mapping[str, object]) -> FreeShot:
    return FreeShot(
        kind=FreeShotKind(payload["type"]),
        level=PDECategory(payload["PDE_category"]),
        row_id=int(payload["row_id"]),
        features=dict(payload["features"]),
        per_feature_contrib=dict(payload["per_feature"]),
        why_selected=str(payload["why_selected"]),
        text_mode=str(payload["text_mode"]),
        reasoning=str(payload["reasoning"]),
        weighted_zdist=payload.get("weighted_zdist"),
        margin=payload.get("margin"),
    )


def library_to_json(library: FreeShotLibrary) -> str:
    payload = {
        "scope": library.scope,
        "cue_weights": library.cue_weights,
        "prototypes": {
            str(int(level)): [_shot_to_dict(s) for s in shots]
            for level, shots in library.prototypes.items()
        },
        "hard_examples": {
            "occurrence_boundary": {
                side: _shot_to_dict(shot) for side, shot in library.hard_occurrence.items()
            },
            "severity_boundary": {
                side: _shot_to_dict(shot) for side, shot in library.hard_severity.items()
            },
        },
        "class_stats": {
            str(int(level)): {
                key: {"mu": fs.mu, "sigma": fs.sigma, "n": fs.n}
                for key, fs in sorted(stats.per_feature.items())
            }
            for level, stats in library.stats.items()
        },
        "absent": list(library.absent),
    }
    return json.dumps(payload, indent=2)


def library_from_json(text: str) -> FreeShotLibrary:
    payload = json.loads(text)
    return FreeShotLibrary(
        scope=payload["scope"],
        prototypes={
            PDECategory(int(level)): tuple(_shot_from_dict(s) for s in shots)
            for level, shots in payload["prototypes"].items()
        },
        hard_occurrence={
            side: _shot_from_dict(shot)
            for side, shot in payload["hard_examples"]["occurrence_boundary"].items()
        },
        hard_severity={
            side: _shot_from_dict(shot)
            for side, shot in payload["hard_examples"]["severity_boundary"].items()
        },
        stats={
            PDECategory(int(level)): ClassStats(
                level=PDECategory(int(level)),
                per_feature={
                    key: FeatureStats(mu=fs["mu"], sigma=fs["sigma"], n=fs["n"])
                    for key, fs in features.items()
                },
            )
            for level, features in payload["class_stats"].items()
        },
        cue_weights=dict(payload["cue_weights"]),
        absent=tuple(payload.get("absent", ())),
    )
