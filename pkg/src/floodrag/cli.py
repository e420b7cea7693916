"""Command-line orchestration of the pipeline stages.

Each subcommand consumes only files written by earlier stages, echoes its
configuration and input hashes into the run directory, and exits 0 on a
fully clean run or 2 when some rows failed validation and were rejected.

    floodrag profile   --config run.json
    floodrag textmode  --config run.json --role targets
    floodrag build-kb  --config run.json
    floodrag freeshots --config run.json
    floodrag predict   --config run.json
    floodrag evaluate  --config run.json
    floodrag ablation  --config run.json
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig
from .divergence import DivergenceProfile
from .gateway import TranscriptWriter, UsageLedger, make_backend
from .metrics import metrics_table
from . import pipeline
from .records import load_dataset

EXIT_CLEAN = 0
EXIT_PARTIAL = 2


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("dataset", "targets", "out_dir", "mock_script", "ablation"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = RunConfig.from_dict({**config.to_dict(), **overrides})
    return config


def _paths(config: RunConfig) -> pipeline.RunPaths:
    return pipeline.RunPaths(Path(config.out_dir))


def _backend(config: RunConfig):
    return make_backend(config.backend, script_path=config.mock_script)


def _load_profile(paths: pipeline.RunPaths) -> DivergenceProfile:
    return DivergenceProfile.from_json(paths.profile_json.read_text(encoding="utf-8"))


def _load_textmodes(path: Path) -> dict[int, str]:
    out = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                row = json.loads(line)
                out[row["row_id"]] = row["text_mode"]
    return out


def _save_textmodes(text_modes: dict[int, str], path: Path) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for row_id in sorted(text_modes):
            handle.write(json.dumps({"row_id": row_id, "text_mode": text_modes[row_id]}) + "\n")


def _ensure_textmodes(
    role: str,
    records,
    profile: DivergenceProfile,
    config: RunConfig,
    paths: pipeline.RunPaths,
    backend,
    ledger: UsageLedger,
    transcript: TranscriptWriter | None,
) -> tuple[dict[int, str], dict]:
    """Reuse the stage output when present, otherwise generate it."""
    path = paths.textmodes_jsonl(role)
    if path.exists():
        return _load_textmodes(path), {}
    result = pipeline.stage_textmodes(records, profile, config, backend, ledger, transcript)
    _save_textmodes(result.payloads, path)
    return result.payloads, result.rejects


def cmd_profile(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    records, warnings = load_dataset(config.dataset)
    pipeline.write_run_metadata(paths, config, [Path(config.dataset)])
    pipeline.stage_profile(records, config, paths)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(paths.profile_report.read_text(encoding="utf-8"))
    return EXIT_CLEAN


def cmd_textmode(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    source = config.targets if args.role == "targets" else config.dataset
    records, _ = load_dataset(source)
    pipeline.write_run_metadata(paths, config, [Path(source)])
    profile = _load_profile(paths)
    backend = _backend(config)
    ledger = UsageLedger()
    result = pipeline.stage_textmodes(records, profile, config, backend, ledger)
    _save_textmodes(result.payloads, paths.textmodes_jsonl(args.role))
    print(f"text modes: {len(result.payloads)} ok, {len(result.rejects)} rejected")
    return EXIT_CLEAN if result.clean else EXIT_PARTIAL


def cmd_build_kb(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    records, _ = load_dataset(config.dataset)
    pipeline.write_run_metadata(paths, config, [Path(config.dataset)])
    profile = _load_profile(paths)
    backend = _backend(config)
    ledger = UsageLedger()
    transcript = TranscriptWriter(paths.transcript_jsonl)
    text_modes, tm_rejects = _ensure_textmodes(
        "train", records, profile, config, paths, backend, ledger, transcript
    )
    entries, rejects = pipeline.stage_build_kb(
        records, text_modes, config, backend, ledger, transcript
    )
    rejects.update(tm_rejects)
    pipeline.save_kb(entries, rejects, paths)
    print(f"knowledge base: {len(entries)} entries, {len(rejects)} rejected")
    return EXIT_CLEAN if not rejects else EXIT_PARTIAL


def cmd_freeshots(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    pipeline.write_run_metadata(paths, config, [paths.kb_jsonl])
    profile = _load_profile(paths)
    entries = pipeline.load_kb(paths.kb_jsonl)
    libraries = pipeline.stage_freeshots(entries, profile, config, paths)
    print(f"free-shot libraries: {', '.join(sorted(libraries))}")
    return EXIT_CLEAN


def cmd_predict(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    targets, _ = load_dataset(config.targets)
    pipeline.write_run_metadata(paths, config, [Path(config.targets), paths.kb_jsonl])
    profile = _load_profile(paths)
    entries = pipeline.load_kb(paths.kb_jsonl)
    libraries = pipeline.load_libraries(paths.libraries_dir)
    backend = _backend(config)
    ledger = UsageLedger()
    transcript = TranscriptWriter(paths.transcript_jsonl)
    text_modes, tm_rejects = _ensure_textmodes(
        "targets", targets, profile, config, paths, backend, ledger, transcript
    )
    rows, audits, rejects = pipeline.stage_predict(
        targets, text_modes, entries, libraries, config, backend, ledger, transcript
    )
    rejects.update(tm_rejects)
    pipeline.save_predictions(rows, audits, rejects, paths)
    pipeline.usage_to_file(ledger, paths.usage_json)
    print(f"predictions: {len(rows)} ok, {len(rejects)} unpredicted")
    return EXIT_CLEAN if not rejects else EXIT_PARTIAL


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    targets, _ = load_dataset(config.targets)
    pipeline.write_run_metadata(
        paths, config, [Path(config.targets), paths.predictions_jsonl]
    )
    profile = _load_profile(paths)
    entries = pipeline.load_kb(paths.kb_jsonl)
    libraries = pipeline.load_libraries(paths.libraries_dir)
    predicted, unpredicted = pipeline.load_predictions(paths.predictions_jsonl)
    ledger = pipeline.ledger_from_file(paths.usage_json) if paths.usage_json.exists() else None
    metrics = pipeline.stage_evaluate(
        targets, predicted, unpredicted, entries, profile, libraries, config, ledger
    )
    paths.metrics_json.write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    lines = [metrics_table({"run": metrics["prediction"]})]
    reasoning = metrics["reasoning"]
    lines.append("")
    lines.append("reasoning: " + "  ".join(
        f"{name}={reasoning[name]:.4f}" if isinstance(reasoning[name], float) else f"{name}=-"
        for name in ("lra", "sfc", "fdc", "pas", "bts")
    ))
    cost = metrics.get("cost") or {}
    if cost.get("cost_idx") is not None:
        efficiency_text = (
            f"{cost['efficiency']:.1f}" if cost.get("efficiency") is not None else "-"
        )
        lines.append(f"cost_idx={cost['cost_idx']:.6g}  efficiency={efficiency_text}")
    report = "\n".join(lines)
    paths.metrics_report.write_text(report + "\n", encoding="utf-8")
    print(report)
    return EXIT_CLEAN if not unpredicted else EXIT_PARTIAL


def cmd_ablation(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = _paths(config)
    targets, _ = load_dataset(config.targets)
    pipeline.write_run_metadata(paths, config, [Path(config.targets), paths.kb_jsonl])
    profile = _load_profile(paths)
    entries = pipeline.load_kb(paths.kb_jsonl)
    libraries = pipeline.load_libraries(paths.libraries_dir)
    backend = _backend(config)
    ledger = UsageLedger()
    text_modes, _ = _ensure_textmodes(
        "targets", targets, profile, config, paths, backend, ledger, None
    )
    results = pipeline.run_ablation(
        targets, text_modes, entries, libraries, profile, config, backend
    )
    for name, result in results.items():
        sub = pipeline.RunPaths(paths.out_dir / "ablation" / name)
        with sub.predictions_jsonl.open("w", encoding="utf-8") as handle:
            for row in result["rows"]:
                handle.write(json.dumps(row) + "\n")
        sub.metrics_json.write_text(
            json.dumps(result["metrics"], indent=2) + "\n", encoding="utf-8"
        )
    summary = {name: result["metrics"] for name, result in results.items()}
    (paths.out_dir / "ablation.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    report = pipeline.ablation_report(results)
    (paths.out_dir / "ablation_report.txt").write_text(report + "\n", encoding="utf-8")
    print(report)
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floodrag",
        description="Retrieval-augmented ordinal flood damage nowcasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="run configuration JSON file")
        p.add_argument("--dataset", help="labeled dataset path override")
        p.add_argument("--targets", help="target dataset path override")
        p.add_argument("--out-dir", dest="out_dir", help="run directory override")
        p.add_argument("--mock-script", dest="mock_script", help="mock script path override")

    p = sub.add_parser("profile", help="divergence profile and score report")
    common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("textmode", help="generate text modes for a dataset")
    common(p)
    p.add_argument("--role", choices=("train", "targets"), default="train")
    p.set_defaults(func=cmd_textmode)

    p = sub.add_parser("build-kb", help="build the reasoning knowledge base")
    common(p)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("freeshots", help="build per-scope free-shot libraries")
    common(p)
    p.set_defaults(func=cmd_freeshots)

    p = sub.add_parser("predict", help="context-augmented prediction")
    common(p)
    p.add_argument("--ablation", choices=pipeline.ABLATION_CONFIGS,
                   help="context configuration (default from config file)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="prediction and reasoning metrics")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="run context ablation configs I-IV")
    common(p)
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
