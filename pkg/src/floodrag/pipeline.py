"""Stage orchestration: profile, text modes, knowledge base, libraries,
prediction with context assembly, downgrade post-check, and evaluation.

Each stage consumes only files produced by earlier stages, so runs are
resumable command by command. All outputs are sorted and free of wall
clock state, which makes a scripted-mock run bit-identical end to end.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .config import RunConfig
from .divergence import DivergenceProfile, OCCURRENCE, build_profile
from .downgrade import (
    CueLexicon,
    DEFAULT_LEXICON,
    DowngradeThresholds,
    FiredRule,
    apply_downgrade,
    render_downgrade_rule,
)
from .gateway import (
    Backend,
    BackendError,
    TranscriptWriter,
    UsageLedger,
    cost_index,
    invoke_validated_many,
)
from .knowledge import (
    GLOBAL_SCOPE,
    FreeShotLibrary,
    KBEntry,
    build_libraries,
    library_from_json,
    library_to_json,
    record_margins,
)
from .metrics import (
    PredictionMetrics,
    ReasoningMetrics,
    bts,
    classification_metrics,
    efficiency,
    fdc,
    lra,
    pas,
    sfc,
    terciles_from_records,
)
from .prompts import (
    Trajectory,
    audit_kb_trajectory,
    build_kb_reasoning_prompt,
    build_prediction_prompt,
    build_text_mode_prompt,
    kb_batch_validator,
    parse_trajectory,
    prediction_batch_validator,
    text_mode_batch_validator,
)
from .records import (
    DEFAULT_DICTIONARY,
    DEFAULT_RISK_DIRECTIONS,
    PDECategory,
    PREDICTOR_KEYS,
    Record,
    VariableDictionary,
    record_to_dict,
)
from .retrieval import (
    NeighborContext,
    SpatialIndex,
    find_neighbors,
    plan_injection,
    resolve_free_shots,
    retrieval_audit,
)

ABLATION_CONFIGS = ("I", "II", "III", "IV")


@dataclass
class RunPaths:
    out_dir: Path

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def profile_json(self) -> Path:
        return self.out_dir / "profile.json"

    @property
    def profile_report(self) -> Path:
        return self.out_dir / "divergence_report.txt"

    @property
    def kb_jsonl(self) -> Path:
        return self.out_dir / "kb.jsonl"

    @property
    def kb_rejects(self) -> Path:
        return self.out_dir / "kb_rejects.jsonl"

    @property
    def libraries_dir(self) -> Path:
        return self.out_dir / "libraries"

    @property
    def predictions_jsonl(self) -> Path:
        return self.out_dir / "predictions.jsonl"

    @property
    def audits_jsonl(self) -> Path:
        return self.out_dir / "audits.jsonl"

    @property
    def metrics_json(self) -> Path:
        return self.out_dir / "metrics.json"

    @property
    def metrics_report(self) -> Path:
        return self.out_dir / "metrics_report.txt"

    @property
    def transcript_jsonl(self) -> Path:
        return self.out_dir / "transcript.jsonl"

    @property
    def usage_json(self) -> Path:
        return self.out_dir / "usage.json"

    def textmodes_jsonl(self, role: str) -> Path:
        return self.out_dir / f"textmodes_{role}.jsonl"


def write_run_metadata(paths: RunPaths, config: RunConfig, inputs: Sequence[Path]) -> None:
    """Echo the configuration and hash every input file consumed."""
    (paths.out_dir / "config_echo.json").write_text(config.to_json() + "\n", encoding="utf-8")
    hashes = {}
    for path in inputs:
        path = Path(path)
        if path.exists():
            hashes[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    (paths.out_dir / "inputs.sha256.json").write_text(
        json.dumps(hashes, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _chunks(items: Sequence, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


@dataclass
class StageResult:
    payloads: dict[int, object] = field(default_factory=dict)
    rejects: dict[int, list[str]] = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return not self.rejects


def stage_profile(records: Sequence[Record], config: RunConfig, paths: RunPaths) -> DivergenceProfile:
    profile = build_profile(records, config.divergence)
    paths.profile_json.write_text(profile.to_json() + "\n", encoding="utf-8")
    paths.profile_report.write_text(profile.report_table() + "\n", encoding="utf-8")
    return profile


def stage_textmodes(
    records: Sequence[Record],
    profile: DivergenceProfile,
    config: RunConfig,
    backend: Backend,
    ledger: UsageLedger,
    transcript: TranscriptWriter | None = None,
    dictionary: VariableDictionary = DEFAULT_DICTIONARY,
) -> StageResult:
    """Generate validated text modes, batch by batch."""
    result = StageResult()
    ordered = list(profile.ordered_features[OCCURRENCE])
    records = sorted(records, key=lambda r: r.row_id)
    batches = list(_chunks(records, config.batch_size))
    tasks = [
        (build_text_mode_prompt(batch, ordered, dictionary), text_mode_batch_validator(batch))
        for batch in batches
    ]
    outcomes = invoke_validated_many(
        tasks, config.backend, backend, max_reasks=config.max_reasks,
        ledger=ledger, transcript=transcript, backoff_base=0.0,
    )
    for batch, outcome in zip(batches, outcomes):
        if isinstance(outcome, BackendError):
            for record in batch:
                result.rejects[record.row_id] = [f"backend_error: {outcome}"]
            continue
        result.payloads.update(outcome.payloads)
        result.rejects.update(outcome.failures)
    return result


def stage_build_kb(
    records: Sequence[Record],
    text_modes: Mapping[int, str],
    config: RunConfig,
    backend: Backend,
    ledger: UsageLedger,
    transcript: TranscriptWriter | None = None,
) -> tuple[list[KBEntry], dict[int, list[str]]]:
    """Generate and audit reasoning trajectories; only clean entries enter the KB."""
    labeled = sorted(
        (r for r in records if r.label is not None and r.row_id in text_modes),
        key=lambda r: r.row_id,
    )
    rejects: dict[int, list[str]] = {
        r.row_id: ["missing_text_mode"]
        for r in records
        if r.label is not None and r.row_id not in text_modes
    }
    entries: list[KBEntry] = []
    by_id = {r.row_id: r for r in labeled}
    batches = list(_chunks(labeled, config.batch_size))
    tasks = []
    for batch in batches:
        items = [(r.row_id, text_modes[r.row_id], r.label, r.huc12) for r in batch]
        tasks.append((
            build_kb_reasoning_prompt(items),
            kb_batch_validator({r.row_id: r.label for r in batch}),
        ))
    outcomes = invoke_validated_many(
        tasks, config.backend, backend, max_reasks=config.max_reasks,
        ledger=ledger, transcript=transcript, backoff_base=0.0,
    )
    for batch, outcome in zip(batches, outcomes):
        if isinstance(outcome, BackendError):
            for record in batch:
                rejects[record.row_id] = [f"backend_error: {outcome}"]
            continue
        for row_id, payload in outcome.payloads.items():
            trajectory, audit = payload
            entries.append(KBEntry(
                record=by_id[row_id],
                text_mode=text_modes[row_id],
                trajectory=trajectory,
                audit=audit,
            ))
        rejects.update(outcome.failures)
    entries.sort(key=lambda e: e.record.row_id)
    return entries, rejects


def save_kb(entries: Sequence[KBEntry], rejects: Mapping[int, list[str]], paths: RunPaths) -> None:
    with paths.kb_jsonl.open("w", encoding="utf-8") as handle:
        for entry in entries:
            row = record_to_dict(entry.record)
            row["text_mode"] = entry.text_mode
            row["r1"] = entry.trajectory.raw
            row["audit"] = {
                "despite_count": entry.audit.despite_count,
                "has_closing_phrase": entry.audit.has_closing_phrase,
                "has_occurrence_phrase": entry.audit.has_occurrence_phrase,
                "has_severity_phrase": entry.audit.has_severity_phrase,
            }
            handle.write(json.dumps(row) + "\n")
    with paths.kb_rejects.open("w", encoding="utf-8") as handle:
        for row_id in sorted(rejects):
            handle.write(json.dumps({"row_id": row_id, "violations": rejects[row_id]}) + "\n")


_PREDICTOR_SET = set(PREDICTOR_KEYS)


def load_kb(path: str | Path) -> list[KBEntry]:
    entries = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            row = json.loads(line)
            record = Record(
                row_id=row["row_id"], x=row["x"], y=row["y"], huc12=row["huc12"],
                predictors={k: row[k] for k in row if k in _PREDICTOR_SET},
                sum_pde=row.get("Sum_PDE"),
                label=PDECategory(row["PDE_category"]),
            )
            trajectory, violations = parse_trajectory(row["r1"])
            if trajectory is None:
                raise ValueError(f"row {row['row_id']}: stored trajectory invalid: {violations}")
            audit = audit_kb_trajectory(trajectory, record.label)
            entries.append(KBEntry(record=record, text_mode=row["text_mode"],
                                   trajectory=trajectory, audit=audit))
    return entries


def stage_freeshots(
    entries: Sequence[KBEntry],
    profile: DivergenceProfile,
    config: RunConfig,
    paths: RunPaths,
) -> dict[str, FreeShotLibrary]:
    libraries = build_libraries(
        entries, profile.cue_weights,
        min_scope=config.freeshot.min_scope,
        epsilon=config.freeshot.epsilon,
    )
    paths.libraries_dir.mkdir(parents=True, exist_ok=True)
    for scope in sorted(libraries):
        (paths.libraries_dir / f"{scope}.json").write_text(
            library_to_json(libraries[scope]) + "\n", encoding="utf-8"
        )
    return libraries


def load_libraries(directory: str | Path) -> dict[str, FreeShotLibrary]:
    libraries = {}
    for path in sorted(Path(directory).glob("*.json")):
        library = library_from_json(path.read_text(encoding="utf-8"))
        libraries[library.scope] = library
    if GLOBAL_SCOPE not in libraries:
        raise ValueError("library directory lacks the global scope")
    return libraries


@dataclass
class PredictionRow:
    row_id: int
    pred_label: int
    final_label: int
    fired_rule: str
    matched_cues: dict[str, list[str]] | None
    neighbor_signal: str
    r1: str

    def to_dict(self) -> dict[str, object]:
        return {
            "row_id": self.row_id,
            "pred_label": self.pred_label,
            "final_label": self.final_label,
            "fired_rule": self.fired_rule,
            "matched_cues": self.matched_cues,
            "neighbor_signal": self.neighbor_signal,
            "r1": self.r1,
        }


def stage_predict(
    targets: Sequence[Record],
    target_text_modes: Mapping[int, str],
    entries: Sequence[KBEntry],
    libraries: Mapping[str, FreeShotLibrary],
    config: RunConfig,
    backend: Backend,
    ledger: UsageLedger,
    transcript: TranscriptWriter | None = None,
    ablation: str | None = None,
    lexicon: CueLexicon = DEFAULT_LEXICON,
) -> tuple[list[PredictionRow], list[dict], dict[int, list[str]]]:
    """Context assembly, one prediction call per target, optional post-check.

    Ablation configs: I is text mode only, II adds neighbors, III adds
    free-shots under the injection policy, IV adds the downgrade post-check.
    The prompt text is identical between III and IV; only the host-side
    post-check differs.
    """
    ablation = ablation or config.ablation
    if ablation not in ABLATION_CONFIGS:
        raise ValueError(f"unknown ablation config {ablation!r}")
    use_neighbors = ablation in ("II", "III", "IV")
    use_free_shots = ablation in ("III", "IV")
    use_downgrade = ablation == "IV"

    index = SpatialIndex(list(entries), radius_km=config.retrieval.radius_km)
    rule_text = render_downgrade_rule(lexicon)
    rows: list[PredictionRow] = []
    audits: list[dict] = []
    rejects: dict[int, list[str]] = {}

    contexts = []
    for target in sorted(targets, key=lambda r: r.row_id):
        if target.row_id not in target_text_modes:
            rejects[target.row_id] = ["missing_text_mode"]
            continue
        neighbors: list[NeighborContext] = []
        if use_neighbors:
            neighbors = find_neighbors(
                target, index, k_max=config.retrieval.k_max,
                radius_km=config.retrieval.radius_km,
            )
        shots = []
        plan = plan_injection(neighbors)
        if use_free_shots:
            shots = resolve_free_shots(plan, target.huc12, libraries)
        bundle = build_prediction_prompt(
            target={
                "row_id": target.row_id,
                "text_mode": target_text_modes[target.row_id],
                "x": target.x,
                "y": target.y,
            },
            neighbors=[
                {
                    "n_label": int(n.entry.record.label),
                    "n_text_mode": n.entry.text_mode,
                    "n_reasoning": n.entry.trajectory.raw,
                    "distance_km": n.distance_km,
                    "rank": n.rank,
                }
                for n in neighbors
            ],
            free_shots=[
                {
                    "type": "prototype" if s.kind.value == "prototype" else "hard_example",
                    "PDE_category": int(s.level),
                    "text_mode": s.text_mode,
                    "reasoning": s.reasoning,
                    "why_selected": s.why_selected,
                }
                for s in shots
            ],
            downgrade_rule=rule_text,
        )
        contexts.append((target, neighbors, plan, shots, bundle))

    outcomes = invoke_validated_many(
        [(bundle, prediction_batch_validator([target.row_id]))
         for target, _, _, _, bundle in contexts],
        config.backend, backend, max_reasks=config.max_reasks,
        ledger=ledger, transcript=transcript, backoff_base=0.0,
    )
    for (target, neighbors, plan, shots, _), outcome in zip(contexts, outcomes):
        if isinstance(outcome, BackendError):
            rejects[target.row_id] = [f"backend_error: {outcome}"]
            continue
        audits.append(retrieval_audit(target, neighbors, plan, shots))
        if target.row_id in outcome.failures:
            rejects[target.row_id] = outcome.failures[target.row_id]
            continue
        pred, trajectory = outcome.payloads[target.row_id]
        if use_downgrade:
            decision = apply_downgrade(
                pred, trajectory.think, neighbors,
                lexicon=lexicon, thresholds=config.downgrade,
            )
            rows.append(PredictionRow(
                row_id=target.row_id,
                pred_label=int(pred),
                final_label=int(decision.output_label),
                fired_rule=decision.fired_rule.value,
                matched_cues={
                    "severity": list(decision.matched.severity),
                    "light": list(decision.matched.light),
                    "uncertain": list(decision.matched.uncertain),
                },
                neighbor_signal=decision.neighbor_signal.value,
                r1=trajectory.raw,
            ))
        else:
            rows.append(PredictionRow(
                row_id=target.row_id,
                pred_label=int(pred),
                final_label=int(pred),
                fired_rule=FiredRule.NONE.value,
                matched_cues=None,
                neighbor_signal="unused",
                r1=trajectory.raw,
            ))
    return rows, audits, rejects


def save_predictions(
    rows: Sequence[PredictionRow],
    audits: Sequence[dict],
    rejects: Mapping[int, list[str]],
    paths: RunPaths,
) -> None:
    with paths.predictions_jsonl.open("w", encoding="utf-8") as handle:
        items: list[tuple[int, dict]] = [(r.row_id, r.to_dict()) for r in rows]
        items += [
            (row_id, {"row_id": row_id, "unpredicted": True, "violations": violations})
            for row_id, violations in rejects.items()
        ]
        for _, payload in sorted(items, key=lambda kv: kv[0]):
            handle.write(json.dumps(payload) + "\n")
    with paths.audits_jsonl.open("w", encoding="utf-8") as handle:
        for audit in sorted(audits, key=lambda a: a["row_id"]):
            handle.write(json.dumps(audit) + "\n")


def load_predictions(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Returns (predicted rows, unpredicted rows)."""
    predicted, unpredicted = [], []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            row = json.loads(line)
            (unpredicted if row.get("unpredicted") else predicted).append(row)
    return predicted, unpredicted


def stage_evaluate(
    targets: Sequence[Record],
    predicted: Sequence[Mapping],
    unpredicted: Sequence[Mapping],
    entries: Sequence[KBEntry],
    profile: DivergenceProfile,
    libraries: Mapping[str, FreeShotLibrary],
    config: RunConfig,
    ledger: UsageLedger | None = None,
) -> dict:
    """Prediction metrics, reasoning metrics, and per-sample cost for one run."""
    by_id = {r.row_id: r for r in targets}
    pairs = [
        (by_id[p["row_id"]], p)
        for p in predicted
        if p["row_id"] in by_id and by_id[p["row_id"]].label is not None
    ]
    if not pairs:
        raise ValueError("no labeled targets with predictions to evaluate")
    y = [int(record.label) for record, _ in pairs]
    yhat = [int(p["final_label"]) for _, p in pairs]
    prediction = classification_metrics(y, yhat)

    global_library = libraries[GLOBAL_SCOPE]
    kb_records = [e.record for e in entries]
    terciles = terciles_from_records(kb_records)
    salient = list(profile.salient_set)

    lra_values, sfc_values, fdc_values, pas_values = [], [], [], []
    bts_samples = []
    for record, p in pairs:
        trajectory, violations = parse_trajectory(p["r1"])
        if trajectory is None:
            continue
        final = PDECategory(int(p["final_label"]))
        lra_values.append(lra(trajectory, final))
        sfc_values.append(sfc(trajectory, salient))
        fdc_values.append(fdc(trajectory, record, DEFAULT_RISK_DIRECTIONS, terciles))
        pas_value = pas(
            trajectory, final, global_library, record,
            top_k=config.freeshot.pas_top_k, epsilon=config.freeshot.epsilon,
        )
        if pas_value is not None:
            pas_values.append(pas_value)
        try:
            m_occ, m_sev = record_margins(
                record, global_library.stats, global_library.cue_weights,
                epsilon=config.freeshot.epsilon,
            )
        except ValueError:
            continue
        bts_samples.append((trajectory, min(m_occ, m_sev)))
    bts_score, bts_n = bts(bts_samples, quantile=config.evaluation.bts_quantile)
    reasoning = ReasoningMetrics(
        lra=sum(lra_values) / len(lra_values) if lra_values else 0.0,
        sfc=sum(sfc_values) / len(sfc_values) if sfc_values else 0.0,
        fdc=sum(fdc_values) / len(fdc_values) if fdc_values else 0.0,
        pas=sum(pas_values) / len(pas_values) if pas_values else None,
        bts=bts_score,
        boundary_subset_size=bts_n,
    )

    cost: dict[str, object] = {}
    if ledger is not None:
        idx = cost_index(ledger, config.backend, n_samples=len(pairs))
        cost = {
            "cost_idx": idx,
            "efficiency": efficiency(prediction.severity_score, idx) if idx > 0 else None,
            **ledger.to_dict(),
        }
    return {
        "n_targets": len(targets),
        "n_predicted": len(predicted),
        "n_unpredicted": len(unpredicted),
        "prediction": prediction.to_dict(),
        "reasoning": reasoning.to_dict(),
        "cost": cost,
    }


def run_ablation(
    targets: Sequence[Record],
    target_text_modes: Mapping[int, str],
    entries: Sequence[KBEntry],
    libraries: Mapping[str, FreeShotLibrary],
    profile: DivergenceProfile,
    config: RunConfig,
    backend: Backend,
    configs: Sequence[str] = ABLATION_CONFIGS,
) -> dict[str, dict]:
    """Run the requested ablation configs against one shared context state."""
    results = {}
    for name in configs:
        ledger = UsageLedger()
        rows, audits, rejects = stage_predict(
            targets, target_text_modes, entries, libraries, config,
            backend, ledger, ablation=name,
        )
        predicted = [r.to_dict() for r in rows]
        unpredicted = [
            {"row_id": row_id, "unpredicted": True, "violations": v}
            for row_id, v in rejects.items()
        ]
        metrics = stage_evaluate(
            targets, predicted, unpredicted, entries, profile, libraries,
            config, ledger=ledger,
        )
        results[name] = {
            "metrics": metrics,
            "rows": predicted,
            "audits": audits,
        }
    return results


def ablation_report(results: Mapping[str, Mapping]) -> str:
    lines = [f"{'config':<8}{'macro_f1':>10}{'accuracy':>10}{'severity':>10}"]
    for name in ABLATION_CONFIGS:
        if name not in results:
            continue
        pred = results[name]["metrics"]["prediction"]
        lines.append(
            f"{name:<8}{pred['macro_f1']:>10.4f}{pred['overall_accuracy']:>10.4f}"
            f"{pred['severity_score']:>10.4f}"
        )
    return "\n".join(lines)


def usage_to_file(ledger: UsageLedger, path: Path) -> None:
    path.write_text(json.dumps(ledger.to_dict(), indent=2) + "\n", encoding="utf-8")


def ledger_from_file(path: Path) -> UsageLedger:
    from .gateway import UsageRecord

    payload = json.loads(path.read_text(encoding="utf-8"))
    ledger = UsageLedger()
    # Reconstructed as one aggregate record; totals are what matter downstream.
    ledger.append(UsageRecord(
        prompt_tokens=payload["prompt_tokens"],
        completion_tokens=payload["completion_tokens"],
        wall_seconds=payload["wall_seconds"],
        retries=payload["retries"],
    ))
    return ledger
