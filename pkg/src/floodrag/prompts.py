"""Prompt construction and strict response parsing.

Three prompt families share one shape: a fixed system contract, a user
message with instructions, and the input payload as JSON Lines after a
marker so a response generator (or a person) can find it. Responses are
held to the letter of their contracts; validators return violation names
instead of raising so a caller can re-ask or reject per row.

Violation names form a closed set (see VIOLATIONS below).
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .records import PDECategory, Record, VariableDictionary
from .textops import contains_ci, count_words, split_sentences

#: Closed enumeration of violation names emitted by parsers and audits.
VIOLATIONS = frozenset({
    # trajectory structure
    "missing_think", "multiple_think", "missing_answer", "multiple_answer",
    "stray_content", "bad_answer_token",
    # knowledge-base trajectory audit
    "despite_count", "missing_closing_phrase", "missing_occurrence_phrase",
    "missing_severity_phrase", "severity_phrase_for_class0", "answer_mismatch",
    # response-line plumbing
    "malformed_json", "missing_key", "unexpected_key", "bad_row_id",
    "row_id_mismatch", "duplicate_row", "missing_row", "unknown_row_id",
    # text-mode content
    "word_limit", "predictive_language",
    # prediction line
    "bad_pred_label", "label_answer_mismatch",
})

#: Surface forms that would turn a factual paraphrase into a prediction.
DEFAULT_PREDICTIVE_DENYLIST = ("predict", "risk is", "PDE_category is", "likely damage")

CLOSING_PHRASE = "Based on these factors, it is reasonable to claim PDE_category is"
OCCURRENCE_PHRASE = "occurrence resolves to"
SEVERITY_PHRASE = "severity resolves to"

TEXT_MODE_WORD_LIMIT = 120
INPUT_MARKER = "=== INPUT JSONL ==="


class PromptKind(str, enum.Enum):
    TEXT_MODE = "text_mode"
    KB_REASONING = "kb_reasoning"
    PREDICTION = "prediction"


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    expected_rows: tuple[int, ...]
    kind: PromptKind

    def input_lines(self) -> list[str]:
        """The JSON Lines payload after the input marker."""
        _, _, tail = self.user.partition(INPUT_MARKER)
        return [line for line in tail.strip().splitlines() if line.strip()]


@dataclass(frozen=True)
class Trajectory:
    think: str
    answer: PDECategory
    raw: str


@dataclass(frozen=True)
class TrajectoryAudit:
    has_single_think_answer: bool
    despite_count: int
    has_closing_phrase: bool
    has_occurrence_phrase: bool
    has_severity_phrase: bool
    answer_matches_ground_truth: bool | None
    violations: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not self.violations


def render_trajectory(think: str, answer: PDECategory) -> str:
    return f"<think>{think}</think><answer>{int(answer)}</answer>"


# --- text-mode prompts -------------------------------------------------

_TEXT_MODE_SYSTEM = (
    "Convert tabular rows into a concise human-readable text_mode. "
    'Output STRICT JSONL, one line per row: {"row_id":<int>, "text_mode":"<string>"}. '
    "No extra text."
)

_TEXT_MODE_USER = (
    "Write a <=120-word paragraph that only paraphrases feature values. "
    "Follow order: [%(ordered)s]. "
    "Do not infer risk or predict. Skip NULL or trivial zeros. "
    "Use units from the legend when useful. Keep numbers compact. "
    "Input legend: [%(legend)s].\n"
    f"{INPUT_MARKER}\n"
    "%(input_jsonl)s"
)


def build_text_mode_prompt(
    records: Sequence[Record],
    ordered_features: Sequence[str],
    dictionary: VariableDictionary,
) -> PromptBundle:
    """Instantiate the text-mode template for a batch of records.

    The feature order is the occurrence-boundary ordering, so the most
    class-separating evidence lands first under the word limit.
    """
    if not records:
        raise ValueError("empty record batch")
    lines = []
    for record in records:
        row: dict[str, object] = {"row_id": record.row_id}
        for key in ordered_features:
            if key in record.predictors:
                row[key] = record.predictors[key]
        lines.append(json.dumps(row))
    user = _TEXT_MODE_USER % {
        "ordered": ", ".join(ordered_features),
        "legend": dictionary.legend(ordered_features),
        "input_jsonl": "\n".join(lines),
    }
    return PromptBundle(
        system=_TEXT_MODE_SYSTEM,
        user=user,
        expected_rows=tuple(r.row_id for r in records),
        kind=PromptKind.TEXT_MODE,
    )


def _decode_single_json_line(line: str) -> tuple[dict | None, list[str]]:
    decoder = json.JSONDecoder()
    try:
        payload, end = decoder.raw_decode(line.strip())
    except json.JSONDecodeError:
        return None, ["malformed_json"]
    if line.strip()[end:].strip():
        return None, ["stray_content"]
    if not isinstance(payload, dict):
        return None, ["malformed_json"]
    return payload, []


def validate_text_mode(
    response_line: str,
    record: Record,
    denylist: Sequence[str] = DEFAULT_PREDICTIVE_DENYLIST,
) -> tuple[str | None, list[str]]:
    """Check one response line against the text-mode contract.

    Accepts iff the line is a single JSON object with the matching row_id,
    a text_mode within the word limit, and no predictive language.
    """
    payload, violations = _decode_single_json_line(response_line)
    if payload is None:
        return None, violations
    if set(payload) - {"row_id", "text_mode"}:
        return None, ["unexpected_key"]
    if "row_id" not in payload or "text_mode" not in payload:
        return None, ["missing_key"]
    if not isinstance(payload["row_id"], int) or isinstance(payload["row_id"], bool):
        return None, ["bad_row_id"]
    if payload["row_id"] != record.row_id:
        return None, ["row_id_mismatch"]
    text = payload["text_mode"]
    if not isinstance(text, str):
        return None, ["malformed_json"]
    problems = []
    if count_words(text) > TEXT_MODE_WORD_LIMIT:
        problems.append("word_limit")
    if any(contains_ci(text, phrase) for phrase in denylist):
        problems.append("predictive_language")
    if problems:
        return None, problems
    return text, []


# --- knowledge-base reasoning prompts ----------------------------------

_KB_SYSTEM = (
    "You are an expert flood risk analyst.\n"
    "Task: For each input item, output STRICT JSONL with exactly one line: "
    '{"row_id":<int>, "r1":"<think>...</think><answer>...</answer>"}.\n'
    "Format rules: r1 contains exactly one <think> block immediately followed by "
    "one <answer> block. Tag names are lowercase. Nothing before <think> or after "
    '</answer>. The content of <answer> is exactly one of "0", "1", "2". '
    "Output is valid single-line JSON with no trailing commas.\n"
    "Reasoning rules: use only the provided text_mode and the given ground_truth. "
    "Write about 200 words. Apply a two-stage structure: first occurrence (class 0 "
    "versus classes 1 or 2), then severity (class 1 versus class 2 when the outcome "
    "is nonzero). For occurrence, focus on structural, exposure, and history cues "
    "such as stream proximity, foundation height, building density or imperviousness, "
    "prior claims, and elevation. Rainfall intensity alone must not force a nonzero "
    "occurrence. Imperviousness or prior claims can support nonzero, but they do not "
    "overrule strong protection cues such as higher elevation or a raised foundation "
    "if text_mode frames them as protective. For severity, discuss rainfall intensity, "
    "duration and accumulation, local drainage such as HAND or elevation, and "
    "vulnerability such as FAR or low clearance. Use the exact phrases "
    f'"{OCCURRENCE_PHRASE} ..." and "{SEVERITY_PHRASE} ..." when applicable. '
    'Include exactly one sentence that begins with "Despite" to resolve conflicts. '
    f'End <think> with "{CLOSING_PHRASE} X.". '
    "The content of <answer> must equal the provided ground_truth. "
    f'If <answer> is "0", do not claim "{SEVERITY_PHRASE} ..."; you may state a '
    "conditional sentence about severity."
)

_KB_USER = (
    "For each item you will receive text_mode, ground_truth where 0=L, 1=M, 2=H, "
    "and huc12.\n"
    "Write a single <think>...</think> block followed immediately by a single "
    "<answer>...</answer> block, following the rules above. Include one conflict "
    'sentence that starts with "Despite". Conclude the <think> block with '
    f'"{CLOSING_PHRASE} X.". Ensure that <answer> exactly matches ground_truth '
    '("0", "1", or "2").\n'
    "Finally, output STRICT JSONL with no extra lines or commentary: "
    '{"row_id":<int>, "r1":"<think>...</think><answer>...</answer>"}.\n'
    f"{INPUT_MARKER}\n"
    "%(input_jsonl)s"
)


def build_kb_reasoning_prompt(
    entries: Sequence[tuple[int, str, PDECategory, str]],
) -> PromptBundle:
    """Instantiate the reasoning template for (row_id, text_mode, label, huc12) items."""
    if not entries:
        raise ValueError("empty entry batch")
    lines = []
    for row_id, text_mode, ground_truth, huc12 in entries:
        if not text_mode:
            raise ValueError(f"row {row_id}: empty text mode")
        if ground_truth is None:
            raise ValueError(f"row {row_id}: missing ground-truth label")
        lines.append(json.dumps({
            "row_id": row_id,
            "text_mode": text_mode,
            "ground_truth": int(ground_truth),
            "huc12": huc12,
        }))
    user = _KB_USER % {"input_jsonl": "\n".join(lines)}
    return PromptBundle(
        system=_KB_SYSTEM,
        user=user,
        expected_rows=tuple(e[0] for e in entries),
        kind=PromptKind.KB_REASONING,
    )


_TRAJECTORY_RE = re.compile(r"<think>(.*)</think><answer>(.*)</answer>", re.DOTALL)


def parse_trajectory(raw: str) -> tuple[Trajectory | None, list[str]]:
    """Strict parse of one <think>/<answer> pair.

    Exactly one lowercase block of each kind, immediately adjacent, with
    nothing before or after; the answer must be exactly "0", "1", or "2".
    All applicable violations are returned rather than raised.
    """
    violations: list[str] = []
    think_open, think_close = raw.count("<think>"), raw.count("</think>")
    answer_open, answer_close = raw.count("<answer>"), raw.count("</answer>")
    if think_open == 0 or think_close == 0:
        violations.append("missing_think")
    elif think_open > 1 or think_close > 1:
        violations.append("multiple_think")
    if answer_open == 0 or answer_close == 0:
        violations.append("missing_answer")
    elif answer_open > 1 or answer_close > 1:
        violations.append("multiple_answer")

    match = _TRAJECTORY_RE.fullmatch(raw)
    if match is None:
        if not violations:
            violations.append("stray_content")
        elif think_open and think_close and answer_open and answer_close:
            # tags exist but content leaks outside the blocks
            violations.append("stray_content")
        return None, violations
    if violations:
        return None, violations

    think, answer = match.group(1), match.group(2)
    if answer not in ("0", "1", "2"):
        return None, ["bad_answer_token"]
    return Trajectory(think=think, answer=PDECategory(int(answer)), raw=raw), []


def audit_kb_trajectory(
    trajectory: Trajectory, ground_truth: PDECategory
) -> TrajectoryAudit:
    """Check a parsed trajectory against the knowledge-base content rules."""
    think = trajectory.think
    despite = sum(1 for s in split_sentences(think) if s.startswith("Despite"))
    has_closing = CLOSING_PHRASE in think
    has_occurrence = OCCURRENCE_PHRASE in think
    has_severity = SEVERITY_PHRASE in think
    answer_matches = trajectory.answer == ground_truth

    violations: list[str] = []
    if despite != 1:
        violations.append("despite_count")
    if not has_closing:
        violations.append("missing_closing_phrase")
    if not has_occurrence:
        violations.append("missing_occurrence_phrase")
    if ground_truth == PDECategory.LOW:
        if has_severity:
            violations.append("severity_phrase_for_class0")
    elif not has_severity:
        violations.append("missing_severity_phrase")
    if not answer_matches:
        violations.append("answer_mismatch")

    return TrajectoryAudit(
        has_single_think_answer=True,
        despite_count=despite,
        has_closing_phrase=has_closing,
        has_occurrence_phrase=has_occurrence,
        has_severity_phrase=has_severity,
        answer_matches_ground_truth=answer_matches,
        violations=tuple(violations),
    )


# --- prediction prompts -------------------------------------------------

_PREDICTION_SYSTEM = (
    "You are an expert flood risk analyst.\n"
    "Task: For each item, predict PDE_category in {0,1,2} using only the provided "
    "fields. Neighbors within one kilometer are weighted by distance and rank. Use "
    "free-shots only as few-shot guidance when the number of neighbors is less "
    "than three.\n"
    "Allowed inputs: target text_mode; up to three neighbors (each with text_mode, "
    "reasoning, distance_km, rank); conditional free-shots (prototypes and hard "
    "examples). No external knowledge.\n"
    "Output format: STRICT JSONL, exactly one line per item: "
    '{"row_id":<int>, "pred_label":<0|1|2>, '
    '"r1":"<think>...</think><answer>...</answer>"}. '
    "Keep <think> concise, about two hundred words. The <answer> tag is only one "
    "of 0, 1, 2. If no neighbors are available, state this in <think> and rely on "
    "the target and the free-shots.\n"
    "Downgrade rule: When the prediction in <answer> contradicts the narrative "
    "evidence in <think>, adjust pred_label according to [%(downgrade_rule)s] while "
    "keeping <think> faithful to the inputs."
)

_PREDICTION_USER = (
    "For each JSON line, understand the target from its text_mode and coordinates, "
    "then compare it against labeled neighbors and optional free-shots.\n"
    "Treat neighbors with smaller distance_km and lower rank as more influential "
    "examples. Use free-shots mainly as prototypes or boundary cases when local "
    "neighbor evidence is sparse or ambiguous.\n"
    "In <think>, explain how the target resembles or differs from neighbors and "
    "free-shots, then apply the downgrade rule if the narrative evidence and the "
    "final label would otherwise be inconsistent.\n"
    "Return STRICT JSONL with no extra lines or commentary: "
    '{"row_id":<int>, "pred_label":<0|1|2>, '
    '"r1":"<think>...</think><answer>...</answer>"}.\n'
    f"{INPUT_MARKER}\n"
    "%(input_jsonl)s"
)


def build_prediction_prompt(
    target: Mapping[str, object],
    neighbors: Sequence[Mapping[str, object]],
    free_shots: Sequence[Mapping[str, object]],
    downgrade_rule: str,
) -> PromptBundle:
    """Instantiate the prediction template for one target.

    ``target`` needs row_id, text_mode, x, y. Neighbors arrive pre-ranked;
    free-shots arrive pre-filtered by the injection policy. Empty context
    arrays are legal and rendered as such.
    """
    item = {
        "row_id": int(target["row_id"]),
        "target": {
            "text_mode": target["text_mode"],
            "x": target["x"],
            "y": target["y"],
        },
        "neighbors": [
            {
                "n_label": int(n["n_label"]),
                "n_text_mode": n["n_text_mode"],
                "n_reasoning": n["n_reasoning"],
                "distance_km": n["distance_km"],
                "within_1km": True,
                "rank": int(n["rank"]),
            }
            for n in neighbors
        ],
        "free_shots": [
            {
                "type": s["type"],
                "PDE_category": int(s["PDE_category"]),
                "text_mode": s["text_mode"],
                "reasoning": s["reasoning"],
                "why_selected": s["why_selected"],
            }
            for s in free_shots
        ],
    }
    return PromptBundle(
        system=_PREDICTION_SYSTEM % {"downgrade_rule": downgrade_rule},
        user=_PREDICTION_USER % {"input_jsonl": json.dumps(item)},
        expected_rows=(int(target["row_id"]),),
        kind=PromptKind.PREDICTION,
    )


def parse_prediction(
    response_line: str,
) -> tuple[tuple[int, PDECategory, Trajectory] | None, list[str]]:
    """Strict parse of one prediction line.

    The line must be a single JSON object with exactly row_id, pred_label,
    and r1; r1 must parse as a trajectory whose answer equals pred_label.
    """
    payload, violations = _decode_single_json_line(response_line)
    if payload is None:
        return None, violations
    expected_keys = {"row_id", "pred_label", "r1"}
    if set(payload) - expected_keys:
        return None, ["unexpected_key"]
    if set(payload) != expected_keys:
        return None, ["missing_key"]
    if not isinstance(payload["row_id"], int) or isinstance(payload["row_id"], bool):
        return None, ["bad_row_id"]
    if payload["pred_label"] not in (0, 1, 2) or isinstance(payload["pred_label"], bool):
        return None, ["bad_pred_label"]
    if not isinstance(payload["r1"], str):
        return None, ["malformed_json"]
    trajectory, traj_violations = parse_trajectory(payload["r1"])
    if trajectory is None:
        return None, traj_violations
    pred = PDECategory(payload["pred_label"])
    if pred != trajectory.answer:
        return None, ["label_answer_mismatch"]
    return (payload["row_id"], pred, trajectory), []


# --- batch validators for the gateway -----------------------------------


def _split_response_lines(raw: str) -> list[str]:
    return [line for line in raw.splitlines() if line.strip()]


def _index_lines(
    raw: str, expected_rows: Sequence[int]
) -> tuple[dict[int, str], dict[int, list[str]]]:
    """Assign response lines to expected rows by their row_id field."""
    assigned: dict[int, str] = {}
    failures: dict[int, list[str]] = {}
    expected = set(expected_rows)
    for line in _split_response_lines(raw):
        payload, violations = _decode_single_json_line(line)
        if payload is None or "row_id" not in payload:
            # unattributable line: counts against every still-missing row
            continue
        row_id = payload["row_id"]
        if not isinstance(row_id, int) or row_id not in expected:
            continue
        if row_id in assigned:
            failures[row_id] = ["duplicate_row"]
            continue
        assigned[row_id] = line
    return assigned, failures


def text_mode_batch_validator(records: Sequence[Record], denylist=DEFAULT_PREDICTIVE_DENYLIST):
    """Validator over a whole text-mode response; one verdict per expected row."""
    by_id = {r.row_id: r for r in records}

    def validate(raw: str) -> dict[int, tuple[str | None, list[str]]]:
        assigned, failures = _index_lines(raw, list(by_id))
        out: dict[int, tuple[str | None, list[str]]] = {}
        for row_id, record in by_id.items():
            if row_id in failures:
                out[row_id] = (None, failures[row_id])
            elif row_id not in assigned:
                out[row_id] = (None, ["missing_row"])
            else:
                out[row_id] = validate_text_mode(assigned[row_id], record, denylist)
        return out

    return validate


def kb_batch_validator(ground_truth: Mapping[int, PDECategory]):
    """Validator over a reasoning response; payloads are (trajectory, audit)."""

    def validate(raw: str) -> dict[int, tuple[tuple[Trajectory, TrajectoryAudit] | None, list[str]]]:
        assigned, failures = _index_lines(raw, list(ground_truth))
        out: dict[int, tuple] = {}
        for row_id, label in ground_truth.items():
            if row_id in failures:
                out[row_id] = (None, failures[row_id])
                continue
            if row_id not in assigned:
                out[row_id] = (None, ["missing_row"])
                continue
            payload, violations = _decode_single_json_line(assigned[row_id])
            if payload is None:
                out[row_id] = (None, violations)
                continue
            if "r1" not in payload or not isinstance(payload.get("r1"), str):
                out[row_id] = (None, ["missing_key"])
                continue
            trajectory, traj_violations = parse_trajectory(payload["r1"])
            if trajectory is None:
                out[row_id] = (None, traj_violations)
                continue
            audit = audit_kb_trajectory(trajectory, label)
            if audit.violations:
                out[row_id] = (None, list(audit.violations))
            else:
                out[row_id] = ((trajectory, audit), [])
        return out

    return validate


def prediction_batch_validator(expected_rows: Sequence[int]):
    """Validator over a prediction response; payloads are (pred, trajectory)."""

    def validate(raw: str) -> dict[int, tuple[tuple[PDECategory, Trajectory] | None, list[str]]]:
        assigned, failures = _index_lines(raw, expected_rows)
        out: dict[int, tuple] = {}
        for row_id in expected_rows:
            if row_id in failures:
                out[row_id] = (None, failures[row_id])
                continue
            if row_id not in assigned:
                out[row_id] = (None, ["missing_row"])
                continue
            parsed, violations = parse_prediction(assigned[row_id])
            if parsed is None:
                out[row_id] = (None, violations)
            else:
                _, pred, trajectory = parsed
                out[row_id] = ((pred, trajectory), [])
        return out

    return validate
