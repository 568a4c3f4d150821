#!/usr/bin/env python3
"""Run one uniform-allocation episode and print its gain curves.

The hand-crafted controller fills every subskill to the same cap, so the
per-bin gains isolate the student's difficulty sweet spot and the rarity
penalty: expect the peak in the 3-4 difficulty bin and gains that shrink
as skills get rarer.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from teachgym.analyze import analyze
from teachgym.config import load_config
from teachgym.runner import run_episode

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "simulated_skill_tree.toml"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("runs/gain_analysis"))
    args = parser.parse_args()

    config = load_config(args.config, [f"episode.seed={args.seed}"])
    result = run_episode(config, args.out / "episode")
    print(f"episode: {result.status} ({result.stop_reason}), "
          f"best iteration {result.best_iteration}, "
          f"validation {result.best_validation_accuracy:.4f}, "
          f"test {result.test_accuracy:.4f}")

    bundle = analyze(args.out / "episode", args.out / "analysis")
    print()
    print(bundle.summary_text())


if __name__ == "__main__":
    main()
