#!/usr/bin/env python3
"""Compare skill discovery quality: clean labels vs a noisy annotator.

Runs matched skill-list episodes per seed with annotation confusion 0 and a
configurable noise rate; cleaner skills should produce a better student.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from teachgym.config import load_config
from teachgym.runner import run_episode

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "simulated_skill_list.toml"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--confusion", type=float, default=0.3)
    parser.add_argument("--out", type=Path, default=Path("runs/skill_quality"))
    args = parser.parse_args()

    finals: dict[float, list[float]] = {0.0: [], args.confusion: []}
    for seed in range(args.seeds):
        for rate in (0.0, args.confusion):
            config = load_config(
                args.config,
                [f"episode.seed={seed}", f"provider.confusion_rate={rate}"],
            )
            result = run_episode(config, args.out / f"seed_{seed}_conf_{rate}")
            finals[rate].append(result.best_validation_accuracy)
            print(f"seed {seed} confusion {rate}: {result.best_validation_accuracy:.4f}")

    clean = sum(finals[0.0]) / args.seeds
    noisy = sum(finals[args.confusion]) / args.seeds
    print(f"\nmean with clean labels:  {clean:.4f}")
    print(f"mean with confusion {args.confusion}: {noisy:.4f}")


if __name__ == "__main__":
    main()
