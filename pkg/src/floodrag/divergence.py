"""Per-feature distributional separation at the two ordinal boundaries.

For every predictor we measure how differently it is distributed between
the no-damage class and the damage classes (occurrence boundary) and
between the medium and high classes (severity boundary), using the
Kolmogorov-Smirnov statistic and the Jensen-Shannon divergence. The
weighted composite of the two ranks features; the top-ranked block per
boundary forms the salient set, and the scores of that set are
renormalized into the cue weights that drive free-shot selection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import PDECategory, PREDICTOR_KEYS, Record

OCCURRENCE = "occurrence"
SEVERITY = "severity"
BOUNDARY_NAMES = (OCCURRENCE, SEVERITY)


@dataclass(frozen=True)
class BoundarySpec:
    """A two-group comparison over the ordinal label space."""

    name: str
    group_a: frozenset[PDECategory]
    group_b: frozenset[PDECategory]

    def __post_init__(self) -> None:
        if not self.group_a or not self.group_b or self.group_a & self.group_b:
            raise ValueError("boundary groups must be disjoint and non-empty")


OCCURRENCE_BOUNDARY = BoundarySpec(
    OCCURRENCE, frozenset({PDECategory.LOW}), frozenset({PDECategory.MEDIUM, PDECategory.HIGH})
)
SEVERITY_BOUNDARY = BoundarySpec(
    SEVERITY, frozenset({PDECategory.MEDIUM}), frozenset({PDECategory.HIGH})
)
BOUNDARIES: dict[str, BoundarySpec] = {
    OCCURRENCE: OCCURRENCE_BOUNDARY,
    SEVERITY: SEVERITY_BOUNDARY,
}


@dataclass(frozen=True)
class FeatureDivergence:
    feature: str
    js: float
    ks: float
    score: float
    n_a: int
    n_b: int


@dataclass(frozen=True)
class DivergenceConfig:
    """Knobs for the divergence analysis.

    The (0.7, 0.3) weights are a derived constant: they reproduce the
    reference composite scores from their JS/KS components. The base-2
    logarithm keeps JS in [0, 1].
    """

    w_js: float = 0.7
    w_ks: float = 0.3
    bins: int = 64
    top_k: int = 5
    log_base: float = 2.0

    def __post_init__(self) -> None:
        if not (0 < self.w_js <= 1 and 0 < self.w_ks <= 1):
            raise ValueError("weights must lie in (0, 1]")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.log_base <= 1:
            raise ValueError("log base must exceed 1")


@dataclass(frozen=True)
class DivergenceProfile:
    """Scores, orderings, salient set, and cue weights for all boundaries."""

    w_js: float
    w_ks: float
    per_boundary: dict[str, tuple[FeatureDivergence, ...]]
    ordered_features: dict[str, tuple[str, ...]]
    salient_set: tuple[str, ...]
    cue_weights: dict[str, float]
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> str:
        payload = {
            "w_js": self.w_js,
            "w_ks": self.w_ks,
            "per_boundary": {
                name: [asdict(fd) for fd in rows]
                for name, rows in self.per_boundary.items()
            },
            "ordered_features": {k: list(v) for k, v in self.ordered_features.items()},
            "salient_set": list(self.salient_set),
            "cue_weights": dict(self.cue_weights),
            "notes": list(self.notes),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DivergenceProfile":
        payload = json.loads(text)
        return cls(
            w_js=payload["w_js"],
            w_ks=payload["w_ks"],
            per_boundary={
                name: tuple(FeatureDivergence(**row) for row in rows)
                for name, rows in payload["per_boundary"].items()
            },
            ordered_features={k: tuple(v) for k, v in payload["ordered_features"].items()},
            salient_set=tuple(payload["salient_set"]),
            cue_weights=dict(payload["cue_weights"]),
            notes=tuple(payload.get("notes", ())),
        )

    def report_table(self) -> str:
        """Aligned-column score table, one row per feature, both boundaries."""
        occ = {fd.feature: fd for fd in self.per_boundary[OCCURRENCE]}
        sev = {fd.feature: fd for fd in self.per_boundary[SEVERITY]}
        header = (
            f"{'Feature':<18}{'Score(0|1+2)':>14}{'Score(1|2)':>12}"
            f"{'JS(0|1+2)':>11}{'KS(0|1+2)':>11}{'JS(1|2)':>9}{'KS(1|2)':>9}"
        )
        lines = [header]
        for feature in self.ordered_features[OCCURRENCE]:
            o, s = occ[feature], sev[feature]
            lines.append(
                f"{feature:<18}{o.score:>14.4f}{s.score:>12.4f}"
                f"{o.js:>11.3f}{o.ks:>11.3f}{s.js:>9.3f}{s.ks:>9.3f}"
            )
        return "\n".join(lines)


def ks_statistic(samples_a: Sequence[float], samples_b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b| over the ECDFs."""
    if len(samples_a) == 0 or len(samples_b) == 0:
        raise ValueError("KS statistic needs non-empty samples")
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    grid = np.concatenate([a, b])
    f_a = np.searchsorted(a, grid, side="right") / a.size
    f_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(f_a - f_b)))


def js_from_probs(p: Sequence[float], q: Sequence[float], log_base: float = 2.0) -> float:
    """Jensen-Shannon divergence of two probability vectors.

    Empty-bin terms follow the 0*log(0) = 0 convention; the default base-2
    logarithm bounds the result to [0, 1].
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have equal length")
    m = 0.5 * (p + q)

    def _kl(u: np.ndarray) -> float:
        mask = u > 0
        return float(np.sum(u[mask] * np.log(u[mask] / m[mask])))

    value = 0.5 * (_kl(p) + _kl(q)) / math.log(log_base)
    return max(value, 0.0)


def js_divergence(
    samples_a: Sequence[float],
    samples_b: Sequence[float],
    bins: int = 64,
    log_base: float = 2.0,
) -> float:
    """Histogram-based JS divergence over the pooled min-max range.

    Both samples are binned into ``bins`` equal-width bins spanning the
    shared range and normalized to probability vectors before the
    divergence is evaluated. Two identical constant samples give 0.
    """
    if len(samples_a) == 0 or len(samples_b) == 0:
        raise ValueError("JS divergence needs non-empty samples")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return 0.0
    p = np.histogram(a, bins=bins, range=(lo, hi))[0] / a.size
    q = np.histogram(b, bins=bins, range=(lo, hi))[0] / b.size
    return js_from_probs(p, q, log_base=log_base)


def composite_score(js: float, ks: float, w_js: float = 0.7, w_ks: float = 0.3) -> float:
    """Weighted combination of the two separation measures."""
    if not (0 < w_js <= 1 and 0 < w_ks <= 1):
        raise ValueError("weights must lie in (0, 1]")
    return w_js * js + w_ks * ks


def _group_values(records: Iterable[Record], levels: frozenset[PDECategory], feature: str) -> list[float]:
    return [
        r.predictors[feature]
        for r in records
        if r.label in levels and feature in r.predictors
    ]


def build_profile(
    records: Sequence[Record],
    config: DivergenceConfig = DivergenceConfig(),
    features: Sequence[str] = PREDICTOR_KEYS,
) -> DivergenceProfile:
    """Score every feature at both boundaries and assemble the profile.

    Per boundary, features are sorted by composite score descending with
    lexicographic tie-breaks, so identical inputs serialize identically.
    The salient set is the union of the per-boundary top-k blocks, and cue
    weights renormalize each salient feature's score at the boundary that
    selected it (the larger one when both did).
    """
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        raise ValueError("no labeled records")
    notes: list[str] = []
    per_boundary: dict[str, tuple[FeatureDivergence, ...]] = {}
    ordered: dict[str, tuple[str, ...]] = {}

    for name in BOUNDARY_NAMES:
        spec = BOUNDARIES[name]
        if not any(r.label in spec.group_a for r in labeled):
            raise ValueError(f"{name} boundary: group a has no labeled records")
        if not any(r.label in spec.group_b for r in labeled):
            raise ValueError(f"{name} boundary: group b has no labeled records")
        rows = []
        for feature in features:
            values_a = _group_values(labeled, spec.group_a, feature)
            values_b = _group_values(labeled, spec.group_b, feature)
            if not values_a or not values_b:
                notes.append(f"{name}:{feature}: insufficient non-missing values, scored 0")
                rows.append(FeatureDivergence(feature, 0.0, 0.0, 0.0,
                                              len(values_a), len(values_b)))
                continue
            js = js_divergence(values_a, values_b, bins=config.bins, log_base=config.log_base)
            ks = ks_statistic(values_a, values_b)
            score = composite_score(js, ks, config.w_js, config.w_ks)
            rows.append(FeatureDivergence(feature, js, ks, score, len(values_a), len(values_b)))
        rows.sort(key=lambda fd: (-fd.score, fd.feature))
        per_boundary[name] = tuple(rows)
        ordered[name] = tuple(fd.feature for fd in rows)

    # Each salient feature takes its score at the boundary whose top-k block
    # selected it; features selected by both keep the larger score.
    raw_weights: dict[str, float] = {}
    for name in BOUNDARY_NAMES:
        scores = {fd.feature: fd.score for fd in per_boundary[name]}
        for feature in ordered[name][: config.top_k]:
            raw_weights[feature] = max(raw_weights.get(feature, 0.0), scores[feature])
    salient = tuple(sorted(raw_weights))
    total = sum(raw_weights.values())
    if total > 0:
        cue_weights = {f: raw_weights[f] / total for f in salient}
    else:
        cue_weights = {f: 1.0 / len(salient) for f in salient}
        notes.append("all salient scores were zero; cue weights fell back to uniform")

    return DivergenceProfile(
        w_js=config.w_js,
        w_ks=config.w_ks,
        per_boundary=per_boundary,
        ordered_features=ordered,
        salient_set=salient,
        cue_weights=cue_weights,
        notes=tuple(notes),
    )
