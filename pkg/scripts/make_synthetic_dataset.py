#!/usr/bin/env python3
"""Write the bundled synthetic dataset as canonical JSON Lines."""

import argparse

from floodrag.synth import write_synthetic_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("path", help="output .jsonl path")
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    records = write_synthetic_dataset(args.path, n=args.n, seed=args.seed)
    print(f"wrote {len(records)} records to {args.path}")


if __name__ == "__main__":
    main()
