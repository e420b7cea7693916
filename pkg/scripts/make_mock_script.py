#!/usr/bin/env python3
"""Record a replayable mock script for a dataset.

Runs every pipeline stage (including all four ablation configs) against
the deterministic simulated analyst and freezes each prompt/response pair
into a JSON Lines script that the mock backend can replay offline.
"""

import argparse
import tempfile

from floodrag import pipeline
from floodrag.config import RunConfig
from floodrag.gateway import UsageLedger
from floodrag.records import load_dataset
from floodrag.simulate import RecordingBackend, SimulatedAnalyst, write_script


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset", help="labeled dataset (.jsonl or .csv)")
    parser.add_argument("script", help="output mock script path")
    parser.add_argument("--targets", help="target dataset (defaults to the labeled one)")
    args = parser.parse_args()

    records, _ = load_dataset(args.dataset)
    targets = records if args.targets is None else load_dataset(args.targets)[0]

    config = RunConfig(dataset=args.dataset, out_dir=tempfile.mkdtemp(prefix="mockrec-"))
    paths = pipeline.RunPaths(config.out_dir)
    profile = pipeline.stage_profile(records, config, paths)
    backend = RecordingBackend(SimulatedAnalyst())
    ledger = UsageLedger()
    train_tm = pipeline.stage_textmodes(records, profile, config, backend, ledger)
    entries, rejects = pipeline.stage_build_kb(records, train_tm.payloads, config, backend, ledger)
    libraries = pipeline.stage_freeshots(entries, profile, config, paths)
    if targets is records:
        target_tm = train_tm.payloads
    else:
        target_tm = pipeline.stage_textmodes(targets, profile, config, backend, ledger).payloads
    pipeline.run_ablation(targets, target_tm, entries, libraries, profile, config, backend)
    write_script(backend.script, args.script)
    print(f"recorded {len(backend.script)} prompt/response pairs to {args.script}"
          f" ({len(rejects)} knowledge-base rejects)")


if __name__ == "__main__":
    main()
