"""Rule-based post-check that lowers over-predicted severity by one level.

After a prediction arrives, the rationale text is re-read against three
cue lexicons. A predicted 2 drops to 1 when the narrative is dominated by
light cues with essentially no severity cues, or expresses uncertainty
about the high-damage evidence; a predicted 1 drops to 0 under the
analogous conditions. Neighbor labels are a secondary signal only: they
can confirm a firing in a weak-evidence setting but never cause one.
Predicted 0 never changes and no rule chains, so one call moves a label
by at most one step downward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .records import PDECategory
from .retrieval import NeighborContext
from .textops import split_sentences

SEVERITY_CUES = (
    "deep inundation", "indoor damage", "water entered building",
    "long-lasting flooding", "prolonged", "severe structural",
    "impassable", "major damage", "over-topping", "overtopping",
    "high water depth", "significant damage",
)
LIGHT_CUES = (
    "minor", "shallow", "surface-level", "brief", "quickly receded",
    "passable", "no indoor", "limited", "localized", "light impact",
    "nuisance flooding",
)
UNCERTAIN_CUES = ("uncertain", "insufficient", "not enough evidence", "ambiguous", "unsure")

# Subjects that scope an uncertainty expression to the class under threat.
_UNCERTAIN_SUBJECTS_2_TO_1 = ("high", "class 2", "severe")
_UNCERTAIN_SUBJECTS_1_TO_0 = ("damage", "medium", "class 1")


@dataclass(frozen=True)
class CueLexicon:
    severity_cues: tuple[str, ...] = SEVERITY_CUES
    light_cues: tuple[str, ...] = LIGHT_CUES
    uncertain_cues: tuple[str, ...] = UNCERTAIN_CUES


DEFAULT_LEXICON = CueLexicon()


@dataclass(frozen=True)
class CueHits:
    severity: tuple[str, ...]
    light: tuple[str, ...]
    uncertain: tuple[str, ...]


@dataclass(frozen=True)
class DowngradeThresholds:
    """Numeric operationalization of the qualitative rule wording.

    ``light_min`` light cues with at most ``severity_max`` severity cues
    count as "mainly light"; ``weak_evidence_max`` severity cues is the
    ceiling under which neighbor labels are consulted at all.
    """

    light_min: int = 2
    severity_max: int = 0
    weak_evidence_max: int = 1


DEFAULT_THRESHOLDS = DowngradeThresholds()


class FiredRule(str, enum.Enum):
    NONE = "none"
    RULE_2_TO_1 = "rule_2_to_1"
    RULE_1_TO_0 = "rule_1_to_0"


class NeighborSignal(str, enum.Enum):
    UNUSED = "unused"
    CONFIRMING = "confirming"
    NON_CONFIRMING = "non_confirming"


@dataclass(frozen=True)
class DowngradeDecision:
    input_label: PDECategory
    output_label: PDECategory
    fired_rule: FiredRule
    matched: CueHits
    neighbor_signal: NeighborSignal

    def __post_init__(self) -> None:
        if self.output_label > self.input_label:
            raise ValueError("downgrade may never raise a label")
        if int(self.input_label) - int(self.output_label) > 1:
            raise ValueError("downgrade moves at most one step")


def scan_cues(text: str, lexicon: CueLexicon = DEFAULT_LEXICON) -> CueHits:
    """Case-insensitive substring hits; each matched phrase reported once."""
    lowered = text.lower()
    return CueHits(
        severity=tuple(c for c in lexicon.severity_cues if c.lower() in lowered),
        light=tuple(c for c in lexicon.light_cues if c.lower() in lowered),
        uncertain=tuple(c for c in lexicon.uncertain_cues if c.lower() in lowered),
    )


def _uncertain_about(text: str, uncertain_cues: Sequence[str], subjects: Sequence[str]) -> bool:
    """An uncertainty cue sharing a sentence with a subject term."""
    for sentence in split_sentences(text):
        lowered = sentence.lower()
        if any(c.lower() in lowered for c in uncertain_cues) and any(
            s.lower() in lowered for s in subjects
        ):
            return True
    return False


def _light_dominated(text: str, lexicon: CueLexicon) -> bool:
    hits = scan_cues(text, lexicon)
    return len(hits.light) > len(hits.severity)


def _neighbor_signal(
    neighbors: Sequence[NeighborContext],
    allowed_labels: set[PDECategory],
    lexicon: CueLexicon,
) -> NeighborSignal:
    if not neighbors:
        return NeighborSignal.UNUSED
    confirming = sum(
        1
        for n in neighbors
        if n.entry.record.label in allowed_labels
        and _light_dominated(n.entry.trajectory.think, lexicon)
    )
    if confirming * 2 > len(neighbors):
        return NeighborSignal.CONFIRMING
    return NeighborSignal.NON_CONFIRMING


def apply_downgrade(
    pred: PDECategory,
    think: str,
    neighbors: Sequence[NeighborContext] = (),
    lexicon: CueLexicon = DEFAULT_LEXICON,
    thresholds: DowngradeThresholds = DEFAULT_THRESHOLDS,
) -> DowngradeDecision:
    """Apply the one-step downgrade rules to a predicted label.

    A rule fires on the rationale text alone; the neighbor check only
    annotates the decision as confirming or not when the severity evidence
    is weak enough for neighbors to matter.
    """
    hits = scan_cues(think, lexicon)
    mainly_light = (
        len(hits.light) >= thresholds.light_min
        and len(hits.severity) <= thresholds.severity_max
    )

    fired = FiredRule.NONE
    signal = NeighborSignal.UNUSED
    if pred == PDECategory.HIGH:
        uncertain = _uncertain_about(think, lexicon.uncertain_cues, _UNCERTAIN_SUBJECTS_2_TO_1)
        if mainly_light or uncertain:
            fired = FiredRule.RULE_2_TO_1
            if len(hits.severity) <= thresholds.weak_evidence_max:
                signal = _neighbor_signal(
                    neighbors, {PDECategory.LOW, PDECategory.MEDIUM}, lexicon
                )
    elif pred == PDECategory.MEDIUM:
        uncertain = _uncertain_about(think, lexicon.uncertain_cues, _UNCERTAIN_SUBJECTS_1_TO_0)
        if mainly_light or (uncertain and len(hits.severity) <= thresholds.severity_max):
            fired = FiredRule.RULE_1_TO_0
            if len(hits.severity) <= thresholds.weak_evidence_max:
                signal = _neighbor_signal(neighbors, {PDECategory.LOW}, lexicon)

    output = PDECategory(int(pred) - 1) if fired is not FiredRule.NONE else pred
    return DowngradeDecision(
        input_label=pred,
        output_label=output,
        fired_rule=fired,
        matched=hits,
        neighbor_signal=signal,
    )


#: The rule text embedded verbatim in prediction prompts.
DOWNGRADE_RULE_TEXT = (
    "[RULE] Only apply the following rules when your <think> clearly shows "
    "uncertainty or a contradiction between the predicted class and your own "
    "description. "
    "[2:1] High damage to medium. If you output class 2 but in your <think> the "
    "text mainly matches {LIGHT_CUES} and does not strongly match {SEVERITY_CUES}, "
    "or you use expressions that match {UNCERTAIN_CUES} about the evidence for "
    "high damage, then you must downgrade the answer from 2 to 1. Neighbors are "
    "only a secondary signal: when the target text_mode contains very few "
    "{SEVERITY_CUES} and in this weak-evidence setting the closest neighbors "
    "within one kilometer are mostly class 0 or 1 with reasoning dominated by "
    "{LIGHT_CUES}, you should treat this as confirming the contradiction and keep "
    "the downgrade from 2 to 1. "
    "[1:0] Medium damage to low. If you output class 1 but in your <think> the "
    "text mainly matches {LIGHT_CUES} and clearly does not describe a state "
    "supported by {SEVERITY_CUES}, or you say that there is not enough evidence "
    "of damage in a way that matches {UNCERTAIN_CUES} and your description is "
    "closer to no damage than to medium damage, then you must downgrade the "
    "answer from 1 to 0. Neighbors are only a secondary signal: when the target "
    "text_mode contains very few {SEVERITY_CUES} and the closest neighbors within "
    "one kilometer are class 0 with reasoning dominated by {LIGHT_CUES}, you "
    "should treat this as confirming the contradiction and keep the downgrade "
    "from 1 to 0."
)


def render_downgrade_rule(lexicon: CueLexicon = DEFAULT_LEXICON) -> str:
    """The rule template with the cue sets spliced in."""
    return (
        DOWNGRADE_RULE_TEXT
        .replace("{SEVERITY_CUES}", "[" + ", ".join(lexicon.severity_cues) + "]")
        .replace("{LIGHT_CUES}", "[" + ", ".join(lexicon.light_cues) + "]")
        .replace("{UNCERTAIN_CUES}", "[" + ", ".join(lexicon.uncertain_cues) + "]")
    )
