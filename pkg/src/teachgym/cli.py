"""Command-line surface: run / replay / analyze / skills / forest / sweep / trainer-conformance."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from teachgym.core import TeachGymError, canonical_json


def _cmd_run(args: argparse.Namespace) -> int:
    from teachgym.config import load_config
    from teachgym.runner import run_episode

    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"episode.seed={args.seed}")
    config = load_config(args.config, overrides)
    result = run_episode(config, args.out)
    print(f"status: {result.status} ({result.stop_reason})")
    print(f"iterations: {len(result.trajectory)}")
    print(f"best iteration: {result.best_iteration}")
    print(f"best validation accuracy: {result.best_validation_accuracy:.4f}")
    if result.test_accuracy is not None:
        print(f"test accuracy: {result.test_accuracy:.4f}")
    print(f"trajectory digest: {result.trajectory_digest}")
    return 0 if result.status == "completed" else 1


def _cmd_replay(args: argparse.Namespace) -> int:
    from teachgym.runner import replay

    report = replay(args.episode)
    print(f"recorded digest: {report.recorded_digest}")
    print(f"replayed digest: {report.replayed_digest}")
    print(report.detail)
    return 0 if report.match else 1


def _cmd_analyze(args: argparse.Namespace) -> int:
    from teachgym.analyze import analyze

    out = Path(args.out) if args.out else Path(args.episode) / "analysis"
    bundle = analyze(args.episode, out)
    print(bundle.summary_text())
    print(f"\nCSV tables written to {out}")
    return 0


def _cmd_skills_discover(args: argparse.Namespace) -> int:
    from teachgym.core import load_dataset, read_jsonl, write_jsonl
    from teachgym.discovery import discover
    from teachgym.provider import MockProvider

    items = load_dataset(args.items)
    provider = MockProvider(seed=args.seed, confusion_rate=args.confusion_rate)
    user_skills = args.user_skills.split(",") if args.user_skills else None
    result = discover(items, provider, user_skills=user_skills, max_categories=args.max_categories)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "skills.json").write_text(canonical_json(list(result.skills)) + "\n", encoding="utf-8")

    predictions = read_jsonl(args.predictions) if args.predictions else [
        {"item_id": i.item_id} for i in items
    ]
    rows = []
    for row in predictions:
        item_id = row["item_id"]
        rows.append({**row, "assigned_skill": result.skill_of(item_id)})
    write_jsonl(out / "assignments.jsonl", rows)
    print(f"{len(result.skills)} skills over {len(rows)} items -> {out}")
    return 0


def _cmd_forest_dump(args: argparse.Namespace) -> int:
    from teachgym.forest import SkillForest, dump_text_table

    forest = SkillForest.from_dict(json.loads(Path(args.forest).read_text(encoding="utf-8")))
    if args.format == "json":
        print(canonical_json(forest.to_dict()))
    else:
        print(dump_text_table(forest))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    from teachgym.config import load_config
    from teachgym.runner import render_sweep_table, run_state_ablation_sweep

    config = load_config(args.config, list(args.set or []))
    rows = run_state_ablation_sweep(config, range(args.seeds), args.out, workers=args.workers)
    table = render_sweep_table(rows)
    print(table)
    (Path(args.out) / "sweep_summary.txt").write_text(table + "\n", encoding="utf-8")
    with (Path(args.out) / "sweep.csv").open("w", encoding="utf-8") as fh:
        fh.write("seed,with_state,no_state\n")
        for r in rows:
            fh.write(f"{r.seed},{r.with_state_accuracy},{r.no_state_accuracy}\n")
    return 0


def _cmd_trainer_conformance(args: argparse.Namespace) -> int:
    import shlex

    from teachgym.protocol import HttpTransport, SubprocessTransport, run_conformance

    if args.command:
        transport = SubprocessTransport(shlex.split(args.command))
    elif args.url:
        transport = HttpTransport(args.url)
    else:
        print("one of --command or --url is required", file=sys.stderr)
        return 2
    try:
        report = run_conformance(transport)
    finally:
        transport.close()
    print(report.render())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teachgym",
        description="Teacher environments for iterative training-data generation agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one episode from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--set", action="append", metavar="PATH=VALUE",
                     help="override a config value, e.g. --set ablation.no_state=true")
    run.set_defaults(func=_cmd_run)

    rep = sub.add_parser("replay", help="re-run a recorded episode and verify digests")
    rep.add_argument("--episode", required=True)
    rep.set_defaults(func=_cmd_replay)

    ana = sub.add_parser("analyze", help="emit CSV tables and a text summary for an episode")
    ana.add_argument("--episode", required=True)
    ana.add_argument("--out", default=None)
    ana.set_defaults(func=_cmd_analyze)

    skills = sub.add_parser("skills", help="skill discovery utilities")
    skills_sub = skills.add_subparsers(dest="skills_command", required=True)
    disc = skills_sub.add_parser("discover", help="discover skills over a dataset")
    disc.add_argument("--items", required=True, help="dataset JSONL")
    disc.add_argument("--predictions", default=None, help="predictions JSONL to annotate")
    disc.add_argument("--out", required=True)
    disc.add_argument("--seed", type=int, default=0)
    disc.add_argument("--confusion-rate", type=float, default=0.0)
    disc.add_argument("--max-categories", type=int, default=15)
    disc.add_argument("--user-skills", default=None, help="comma-separated skill list")
    disc.set_defaults(func=_cmd_skills_discover)

    forest = sub.add_parser("forest", help="skill forest utilities")
    forest_sub = forest.add_subparsers(dest="forest_command", required=True)
    dump = forest_sub.add_parser("dump", help="print a forest snapshot")
    dump.add_argument("--forest", required=True, help="forest JSON file")
    dump.add_argument("--format", choices=("table", "json"), default="table")
    dump.set_defaults(func=_cmd_forest_dump)

    sweep = sub.add_parser("sweep", help="multi-seed with-state vs no-state comparison")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seeds", type=int, required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--workers", type=int, default=1,
                       help="run episodes in this many parallel worker processes")
    sweep.add_argument("--set", action="append", metavar="PATH=VALUE")
    sweep.set_defaults(func=_cmd_sweep)

    conf = sub.add_parser("trainer-conformance", help="check an external trainer against the wire protocol")
    conf.add_argument("--command", default=None, help="worker command line (stdio transport)")
    conf.add_argument("--url", default=None, help="worker endpoint (HTTP transport)")
    conf.set_defaults(func=_cmd_trainer_conformance)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TeachGymError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
