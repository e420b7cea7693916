#!/usr/bin/env python3
"""End-to-end offline demo: synthetic data, recorded mock script, full run.

Builds the 200-record synthetic dataset, records a mock script with the
simulated analyst, then drives every CLI stage against the replayed
script and prints the resulting reports.
"""

import argparse
import subprocess
import sys
from pathlib import Path

from floodrag.config import RunConfig
from floodrag.synth import write_synthetic_dataset


def sh(*argv: str) -> None:
    print("+", " ".join(argv))
    result = subprocess.run(argv)
    if result.returncode not in (0, 2):
        sys.exit(result.returncode)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="mock_demo")
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    dataset = work / "data.jsonl"
    script = work / "script.jsonl"
    config_path = work / "run.json"

    write_synthetic_dataset(dataset)
    config = RunConfig(
        dataset=str(dataset), targets=str(dataset),
        out_dir=str(work / "run"), mock_script=str(script),
    )
    config_path.write_text(config.to_json() + "\n", encoding="utf-8")

    sh(sys.executable, "scripts/make_mock_script.py", str(dataset), str(script))
    for command in ("profile", "build-kb", "freeshots", "predict", "evaluate", "ablation"):
        sh(sys.executable, "-m", "floodrag.cli", command, "--config", str(config_path))
    print(f"\nrun artifacts in {work / 'run'}")


if __name__ == "__main__":
    main()
