"""Prediction metrics, instance-level reasoning metrics, and efficiency.

Prediction quality uses overall accuracy, macro-F1 over the three ordinal
classes, accuracy restricted to the damage classes, an ordinal severity
score (1 minus half the absolute label error), and recall on the high
class. Reasoning quality is scored per rationale: label-reasoning
alignment, salient-feature coverage, feature-direction consistency,
prototype alignment, and boundary tradeoff articulation. Efficiency is
the severity score earned per unit of per-sample cost.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .downgrade import LIGHT_CUES, SEVERITY_CUES
from .knowledge import (
    DEFAULT_EPSILON,
    FreeShotLibrary,
    standardized_distance,
)
from .prompts import CLOSING_PHRASE, Trajectory
from .records import (
    PDECategory,
    PREDICTOR_KEYS,
    Record,
    RiskDirection,
)
from .textops import split_sentences, word_pattern


@dataclass(frozen=True)
class PredictionMetrics:
    overall_accuracy: float
    macro_f1: float
    damage_class_accuracy: float | None
    severity_score: float
    recall_2: float | None
    n: int

    def to_dict(self) -> dict[str, object]:
        return {
            "overall_accuracy": self.overall_accuracy,
            "macro_f1": self.macro_f1,
            "damage_class_accuracy": self.damage_class_accuracy,
            "severity_score": self.severity_score,
            "recall_2": self.recall_2,
            "n": self.n,
        }


@dataclass(frozen=True)
class ReasoningMetrics:
    lra: float
    sfc: float
    fdc: float
    pas: float | None
    bts: float | None
    boundary_subset_size: int

    def to_dict(self) -> dict[str, object]:
        return {
            "lra": self.lra,
            "sfc": self.sfc,
            "fdc": self.fdc,
            "pas": self.pas,
            "bts": self.bts,
            "boundary_subset_size": self.boundary_subset_size,
        }


def severity_score(y: Sequence[int], yhat: Sequence[int]) -> float:
    """Mean of 1 - |y - yhat| / 2 over the ordinal label space {0,1,2}."""
    if len(y) != len(yhat):
        raise ValueError("label vectors must have equal length")
    if not y:
        raise ValueError("label vectors must be non-empty")
    return sum(1.0 - abs(int(a) - int(b)) / 2.0 for a, b in zip(y, yhat)) / len(y)


def classification_metrics(y: Sequence[int], yhat: Sequence[int]) -> PredictionMetrics:
    """Accuracy, macro-F1, damage-class accuracy, severity score, and recall_2.

    Macro-F1 averages the per-class F1 over all three classes with the 0/0
    convention F1 = 0. Damage-class accuracy restricts to true labels in
    {1, 2} and is absent when that subset is empty; recall_2 is absent when
    class 2 never occurs.
    """
    if len(y) != len(yhat):
        raise ValueError("label vectors must have equal length")
    n = len(y)
    if n == 0:
        raise ValueError("label vectors must be non-empty")
    y = [int(v) for v in y]
    yhat = [int(v) for v in yhat]

    correct = sum(1 for a, b in zip(y, yhat) if a == b)
    f1s = []
    for c in (0, 1, 2):
        tp = sum(1 for a, b in zip(y, yhat) if a == c and b == c)
        fp = sum(1 for a, b in zip(y, yhat) if a != c and b == c)
        fn = sum(1 for a, b in zip(y, yhat) if a == c and b != c)
        denominator = 2 * tp + fp + fn
        f1s.append(2 * tp / denominator if denominator else 0.0)

    damage = [(a, b) for a, b in zip(y, yhat) if a in (1, 2)]
    damage_accuracy = (
        sum(1 for a, b in damage if a == b) / len(damage) if damage else None
    )
    n2 = sum(1 for a in y if a == 2)
    recall_2 = (
        sum(1 for a, b in zip(y, yhat) if a == 2 and b == 2) / n2 if n2 else None
    )
    return PredictionMetrics(
        overall_accuracy=correct / n,
        macro_f1=sum(f1s) / 3.0,
        damage_class_accuracy=damage_accuracy,
        severity_score=severity_score(y, yhat),
        recall_2=recall_2,
        n=n,
    )


# --- feature mentions ----------------------------------------------------

#: Surface forms under which a rationale may mention each predictor.
FEATURE_ALIASES: dict[str, tuple[str, ...]] = {
    "age": ("age", "building age"),
    "FAR": ("FAR", "floor area ratio"),
    "Poly_num": ("Poly_num", "building number", "building count", "buildings"),
    "poi_num": ("poi_num", "POI", "points of interest", "point of interest"),
    "fndn": ("fndn", "foundation", "foundation height"),
    "Popu_num": ("Popu_num", "population"),
    "elevation": ("elevation",),
    "dis_coa": ("dis_coa", "distance to coast", "coast"),
    "impervious": ("impervious", "imperviousness", "impervious surface"),
    "roughness": ("roughness", "terrain roughness"),
    "dis_stream": ("dis_stream", "distance to stream", "stream proximity", "stream"),
    "hand": ("hand", "height above nearest drainage"),
    "claims_past_50yr": ("claims_past_50yr", "claims", "prior claims", "insurance claims"),
    "Rain_max": ("Rain_max", "rainfall", "rain", "maximum rainfall"),
}

_ALIAS_PATTERNS: dict[str, tuple[re.Pattern[str], ...]] = {
    feature: tuple(word_pattern(alias) for alias in aliases)
    for feature, aliases in FEATURE_ALIASES.items()
}


def mentioned_features(text: str, features: Iterable[str] = PREDICTOR_KEYS) -> set[str]:
    """Features whose aliases appear (word-bounded, case-insensitive) in the text."""
    found = set()
    for feature in features:
        if any(p.search(text) for p in _ALIAS_PATTERNS[feature]):
            found.add(feature)
    return found


# --- label-reasoning alignment -------------------------------------------

_CLOSING_LABEL_RE = re.compile(re.escape(CLOSING_PHRASE) + r"\s*([012])")
_SEVERITY_RESOLVE_RE = re.compile(r"severity resolves to\s*([^\s,.;]+)")
_OCCURRENCE_ZERO_RE = re.compile(r"occurrence resolves to\s*(0|zero)\b", re.IGNORECASE)


def infer_label(trajectory: Trajectory) -> PDECategory:
    """Lightweight label inference from a rationale.

    Priority: the closing claim, then a severity resolution mapped into
    {1, 2}, then an occurrence resolution to zero; the answer tag is the
    fallback when nothing is extractable.
    """
    matches = _CLOSING_LABEL_RE.findall(trajectory.think)
    if matches:
        return PDECategory(int(matches[-1]))
    for token in _SEVERITY_RESOLVE_RE.findall(trajectory.think):
        lowered = token.lower()
        if lowered in ("2", "high"):
            return PDECategory.HIGH
        if lowered in ("1", "medium", "moderate"):
            return PDECategory.MEDIUM
    if _OCCURRENCE_ZERO_RE.search(trajectory.think):
        return PDECategory.LOW
    return trajectory.answer


def lra(trajectory: Trajectory, pred: PDECategory) -> int:
    """1 iff the label implied by the rationale equals the prediction."""
    return int(infer_label(trajectory) == pred)


def sfc(trajectory: Trajectory, salient_set: Sequence[str]) -> float:
    """Share of the salient feature set explicitly mentioned in the rationale."""
    if not salient_set:
        raise ValueError("salient set must be non-empty")
    mentioned = mentioned_features(trajectory.think, salient_set)
    return len(mentioned) / len(salient_set)


# --- feature direction consistency ----------------------------------------

#: Magnitude adjectives and the value class they imply.
MAGNITUDE_ADJECTIVES: dict[str, str] = {
    "high": "high",
    "elevated": "high",
    "raised": "high",
    "deep": "high",
    "moderate": "mid",
    "shallow": "low",
    "low": "low",
}

_ADJECTIVE_PATTERNS = {
    adjective: word_pattern(adjective) for adjective in MAGNITUDE_ADJECTIVES
}

_PROTECTIVE_TERMS = ("protective", "protection", "protects", "mitigat")
_RISKY_TERMS = ("risk", "risky", "hazard", "exposure", "vulnerab")


def terciles_from_records(
    records: Sequence[Record], features: Sequence[str] = PREDICTOR_KEYS
) -> dict[str, tuple[float, float]]:
    """Per-feature tercile cut points from the training distribution."""
    cuts = {}
    for feature in features:
        values = [r.predictors[feature] for r in records if feature in r.predictors]
        if values:
            arr = np.asarray(values, dtype=float)
            cuts[feature] = (float(np.quantile(arr, 1 / 3)), float(np.quantile(arr, 2 / 3)))
    return cuts


def _tercile_class(value: float, cuts: tuple[float, float]) -> str:
    if value <= cuts[0]:
        return "low"
    if value <= cuts[1]:
        return "mid"
    return "high"


def _direction_consistent(
    sentence: str, magnitude: str, prior: RiskDirection
) -> bool | None:
    """Whether a stated risk direction agrees with the prior, if one is stated."""
    lowered = sentence.lower()
    stated_protective = any(t in lowered for t in _PROTECTIVE_TERMS)
    stated_risky = any(t in lowered for t in _RISKY_TERMS)
    if stated_protective == stated_risky:
        return None  # nothing stated, or contradictory surface forms
    if magnitude == "mid":
        return None
    if stated_protective:
        return (prior is RiskDirection.HIGHER_IS_PROTECTIVE and magnitude == "high") or (
            prior is RiskDirection.HIGHER_IS_RISKIER and magnitude == "low"
        )
    return (prior is RiskDirection.HIGHER_IS_RISKIER and magnitude == "high") or (
        prior is RiskDirection.HIGHER_IS_PROTECTIVE and magnitude == "low"
    )


def directional_mentions(text: str) -> list[tuple[str, str, str]]:
    """(feature, adjective class, sentence) triples for adjective-qualified mentions.

    Within a sentence, each mentioned feature pairs with the nearest
    magnitude adjective by character distance.
    """
    mentions = []
    for sentence in split_sentences(text):
        adjectives = []
        for adjective, pattern in _ADJECTIVE_PATTERNS.items():
            for match in pattern.finditer(sentence):
                adjectives.append((match.start(), MAGNITUDE_ADJECTIVES[adjective]))
        if not adjectives:
            continue
        for feature, patterns in _ALIAS_PATTERNS.items():
            positions = [m.start() for p in patterns for m in p.finditer(sentence)]
            if not positions:
                continue
            feature_pos = min(positions)
            _, magnitude = min(adjectives, key=lambda a: abs(a[0] - feature_pos))
            mentions.append((feature, magnitude, sentence))
    return mentions


def fdc(
    trajectory: Trajectory,
    record: Record,
    priors: Mapping[str, RiskDirection],
    terciles: Mapping[str, tuple[float, float]],
) -> float:
    """Share of directional feature statements consistent with the data.

    A mention is consistent when its adjective's magnitude class matches
    the record value's tercile, or when the sentence states a risk
    direction that agrees with the feature's prior. Rationales with no
    directional statements score 1.
    """
    mentions = directional_mentions(trajectory.think)
    if not mentions:
        return 1.0
    consistent = 0
    for feature, magnitude, sentence in mentions:
        value = record.predictors.get(feature)
        cuts = terciles.get(feature)
        if value is not None and cuts is not None and _tercile_class(value, cuts) == magnitude:
            consistent += 1
            continue
        prior = priors.get(feature)
        if prior is not None and _direction_consistent(sentence, magnitude, prior):
            consistent += 1
    return consistent / len(mentions)


# --- prototype alignment ---------------------------------------------------


def pas(
    trajectory: Trajectory,
    pred: PDECategory,
    library: FreeShotLibrary,
    record: Record,
    top_k: int = 3,
    epsilon: float = DEFAULT_EPSILON,
) -> float | None:
    """Overlap between the rationale's mentions and the nearest prototype's drivers.

    The nearest prototype of the predicted class is found by cue-weighted
    z-distance between the record and prototype feature vectors under the
    class stats; the score is the mentioned share of that prototype's
    top-k contribution features. Absent prototypes make the metric absent.
    """
    prototypes = library.prototypes.get(pred, ())
    if not prototypes:
        return None
    stats = library.stats[pred]
    weights = library.cue_weights

    def proto_distance(shot) -> float:
        d = 0.0
        any_overlap = False
        for key, weight in weights.items():
            fs = stats.per_feature.get(key)
            if fs is None or key not in record.predictors or key not in shot.features:
                continue
            any_overlap = True
            d += weight * abs(record.predictors[key] - shot.features[key]) / (fs.sigma + epsilon)
        return d if any_overlap else float("inf")

    nearest = min(prototypes, key=lambda s: (proto_distance(s), s.row_id))
    top = sorted(
        nearest.per_feature_contrib.items(), key=lambda kv: (-kv[1], kv[0])
    )[:top_k]
    top_features = [key for key, _ in top]
    if not top_features:
        return None
    mentioned = mentioned_features(trajectory.think, top_features)
    return len(mentioned) / len(top_features)


# --- boundary tradeoff -------------------------------------------------------


@dataclass(frozen=True)
class BtsLexicon:
    """Cue sets for boundary tradeoff detection; reuses the downgrade cues."""

    risk: tuple[str, ...] = SEVERITY_CUES + ("risk", "risky", "exposure", "vulnerable", "claims")
    protective: tuple[str, ...] = LIGHT_CUES + (
        "protective", "protected", "higher elevation", "raised foundation", "drainage",
    )
    tradeoff: tuple[str, ...] = ("despite", "however", "although", "but", "offset")


DEFAULT_BTS_LEXICON = BtsLexicon()


def boundary_tradeoff_flag(text: str, lexicon: BtsLexicon = DEFAULT_BTS_LEXICON) -> int:
    """1 iff the text names a risk cue, a protective cue, and a tradeoff connective."""
    lowered = text.lower()
    has_risk = any(c.lower() in lowered for c in lexicon.risk)
    has_protective = any(c.lower() in lowered for c in lexicon.protective)
    has_tradeoff = any(word_pattern(c).search(text) for c in lexicon.tradeoff)
    return int(has_risk and has_protective and has_tradeoff)


def bts(
    samples: Sequence[tuple[Trajectory, float]],
    quantile: float = 0.1,
    lexicon: BtsLexicon = DEFAULT_BTS_LEXICON,
) -> tuple[float | None, int]:
    """Mean tradeoff flag over the near-boundary subset.

    ``samples`` pairs each rationale with min(occurrence margin, severity
    margin); the subset keeps the lowest ``quantile`` of those margins.
    Returns (score, subset size); the score is absent when the subset is
    empty.
    """
    if not samples:
        return None, 0
    margins = np.asarray([m for _, m in samples], dtype=float)
    threshold = float(np.quantile(margins, quantile))
    subset = [t for t, m in samples if m <= threshold]
    if not subset:
        return None, 0
    flags = [boundary_tradeoff_flag(t.think, lexicon) for t in subset]
    return sum(flags) / len(flags), len(subset)


def efficiency(severity: float, cost_idx: float) -> float:
    """Severity score earned per unit of per-sample cost."""
    if cost_idx <= 0:
        raise ValueError("cost index must be positive")
    return severity / cost_idx


def metrics_table(rows: Mapping[str, Mapping[str, object]]) -> str:
    """Aligned-column text table; one row per configuration or model."""
    columns = ["overall_accuracy", "macro_f1", "damage_class_accuracy",
               "severity_score", "recall_2"]
    header = f"{'name':<14}" + "".join(f"{c:>22}" for c in columns)
    lines = [header]
    for name, values in rows.items():
        cells = []
        for column in columns:
            value = values.get(column)
            cells.append(f"{value:>22.4f}" if isinstance(value, float) else f"{'-':>22}")
        lines.append(f"{name:<14}" + "".join(cells))
    return "\n".join(lines)
