#!/usr/bin/env python3
"""Multi-seed with-state vs no-state comparison on the simulated domain.

Runs matched episode pairs for each seed and prints the summary table; the
mean margin is the headline number (with-state should win clearly).
"""

from __future__ import annotations

import argparse
from pathlib import Path

from teachgym.config import load_config
from teachgym.runner import render_sweep_table, run_state_ablation_sweep

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "simulated_skill_tree.toml"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", type=Path, default=Path("runs/state_ablation"))
    args = parser.parse_args()

    config = load_config(args.config)
    rows = run_state_ablation_sweep(config, range(args.seeds), args.out)
    table = render_sweep_table(rows)
    print(table)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep_summary.txt").write_text(table + "\n")


if __name__ == "__main__":
    main()
