"""Deterministic rule-following responder and mock-script recording.

The simulated analyst reads the JSON Lines payload out of a prompt and
writes back exactly what the contract demands: compact factual text modes,
audit-clean reasoning trajectories whose answers equal the provided
ground truth, and prediction lines driven by a fixed heuristic (nearest
neighbor label, then free-shot prototype majority, then a row-id hash).
Every fifth row is answered one level too high with a light-cue rationale
so the downgrade post-check has real work to do.

Wrapping any backend in a RecordingBackend captures {prompt hash ->
response} pairs that can be frozen into a replayable mock script.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Sequence

from .gateway import BackendConfig, prompt_sha256
from .prompts import PromptBundle, PromptKind
from .records import PDECategory, PREDICTOR_KEYS

_OVERCONFIDENT_EVERY = 5


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def render_text_mode(row: dict) -> str:
    """A compact factual paraphrase of the row's feature values."""
    pairs = [f"{key} is {_fmt(value)}" for key, value in row.items() if key != "row_id"]
    sentences = []
    for start in range(0, len(pairs), 4):
        sentences.append(", ".join(pairs[start:start + 4]) + ".")
    return " ".join(sentences) if sentences else "No feature values are recorded."


def _mentions_from_text_mode(text_mode: str, limit: int = 3) -> list[str]:
    found = [key for key in PREDICTOR_KEYS if key in text_mode]
    return found[:limit] or ["the recorded features"]


def render_kb_trajectory(text_mode: str, ground_truth: int) -> str:
    keys = _mentions_from_text_mode(text_mode)
    mention = ", ".join(keys[:-1]) + f", and {keys[-1]}" if len(keys) > 1 else keys[0]
    if ground_truth == 0:
        think = (
            f"The summary reads as a low-exposure cell anchored by {mention}. "
            "Street effects in cells like this are typically shallow, brief, and "
            "localized rather than building-threatening. Occurrence hinges on the "
            "protection cues, and occurrence resolves to 0 here. If conditions "
            "worsened, severity would only become a question after occurrence "
            "flipped. Despite the rainfall totals on record, the protective "
            "profile keeps the claims evidence at zero. Based on these factors, "
            "it is reasonable to claim PDE_category is 0."
        )
    elif ground_truth == 1:
        think = (
            f"The summary shows measurable exposure through {mention}. "
            "Prior claims and development cues argue for damage, so occurrence "
            "resolves to damage. The depth and duration signals stay moderate and "
            "the footprint reads localized, with limited standing water, so "
            "severity resolves to 1. Despite the protective terrain notes in the "
            "summary, the exposure evidence keeps this cell above zero. "
            "Based on these factors, it is reasonable to claim PDE_category is 1."
        )
    else:
        think = (
            f"The summary points to heavy exposure through {mention}. "
            "The pattern matches deep inundation with water entered building "
            "reports and prolonged ponding, so occurrence resolves to damage. "
            "Major damage markers dominate the narrative, and severity resolves "
            "to 2. Despite scattered protective cues in the terrain fields, the "
            "severity evidence is decisive. Based on these factors, it is "
            "reasonable to claim PDE_category is 2."
        )
    return f"<think>{think}</think><answer>{ground_truth}</answer>"


def _base_label(item: dict) -> int:
    neighbors = item.get("neighbors", [])
    if neighbors:
        return int(neighbors[0]["n_label"])
    prototypes = [s for s in item.get("free_shots", []) if s.get("type") == "prototype"]
    if prototypes:
        counts = Counter(int(s["PDE_category"]) for s in prototypes)
        best = max(counts.values())
        return min(level for level, c in counts.items() if c == best)
    return int(item["row_id"]) % 3


def render_prediction(item: dict) -> str:
    row_id = int(item["row_id"])
    base = _base_label(item)
    neighbors = item.get("neighbors", [])
    if neighbors:
        context = (
            "Labeled neighbors within one kilometer anchor the comparison, led "
            f"by the rank 1 case at class {int(neighbors[0]['n_label'])}."
        )
    elif item.get("free_shots"):
        context = (
            "No neighbors are available within one kilometer, so the target "
            "summary and the free-shots carry the decision."
        )
    else:
        context = (
            "No neighbors are available within one kilometer and no free-shots "
            "were provided, so the target summary carries the decision alone."
        )

    if row_id % _OVERCONFIDENT_EVERY == 0:
        pred = min(2, base + 1)
        keys = _mentions_from_text_mode(item["target"]["text_mode"])
        think = (
            f"The summary for this cell suggests minor, shallow surface-level "
            f"ponding that quickly receded, framed by {', '.join(keys)}. {context} "
            f"Taking the elevated reading of the context, occurrence resolves to "
            f"damage and severity resolves to {pred}. Despite the light look of "
            f"the narrative itself, the surrounding context pushes the call "
            f"upward. Based on these factors, it is reasonable to claim "
            f"PDE_category is {pred}."
        )
    else:
        pred = base
        keys = _mentions_from_text_mode(item["target"]["text_mode"])
        mention = ", ".join(keys[:-1]) + f", and {keys[-1]}" if len(keys) > 1 else keys[0]
        if pred == 0:
            resolution = "Occurrence resolves to 0 on this evidence, and severity stays conditional."
        else:
            resolution = f"Occurrence resolves to damage, and severity resolves to {pred}."
        if row_id % 2 == 0:
            conflict = (
                "Despite the protective terrain reading, the exposure history "
                "weighs more here."
            )
        else:
            conflict = (
                "Despite counter-signals in the wider context, the assembled "
                "evidence holds together."
            )
        think = (
            f"The target profile centers on {mention}. {context} {resolution} "
            f"{conflict} Based on these factors, it is reasonable "
            f"to claim PDE_category is {pred}."
        )
    r1 = f"<think>{think}</think><answer>{pred}</answer>"
    return json.dumps({"row_id": row_id, "pred_label": pred, "r1": r1})


class SimulatedAnalyst:
    """Offline backend that always answers in contract-conforming form."""

    def complete(self, bundle: PromptBundle, config: BackendConfig) -> tuple[str, int, int, float]:
        lines = bundle.input_lines()
        out = []
        if bundle.kind is PromptKind.TEXT_MODE:
            for line in lines:
                row = json.loads(line)
                out.append(json.dumps({
                    "row_id": row["row_id"],
                    "text_mode": render_text_mode(row),
                }))
        elif bundle.kind is PromptKind.KB_REASONING:
            for line in lines:
                row = json.loads(line)
                out.append(json.dumps({
                    "row_id": row["row_id"],
                    "r1": render_kb_trajectory(row["text_mode"], int(row["ground_truth"])),
                }))
        else:
            for line in lines:
                out.append(render_prediction(json.loads(line)))
        response = "\n".join(out)
        prompt_tokens = len(bundle.system.split()) + len(bundle.user.split())
        return response, prompt_tokens, len(response.split()), 0.0


class RecordingBackend:
    """Wraps a backend and captures responses keyed by prompt hash."""

    def __init__(self, inner):
        self.inner = inner
        self.script: dict[str, str] = {}

    def complete(self, bundle: PromptBundle, config: BackendConfig):
        result = self.inner.complete(bundle, config)
        self.script[prompt_sha256(bundle)] = result[0]
        return result


def write_script(script: dict[str, str], path: str | Path) -> None:
    """Freeze recorded responses into a replayable mock script file."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for key in sorted(script):
            handle.write(json.dumps({"prompt_sha256": key, "response": script[key]}) + "\n")
