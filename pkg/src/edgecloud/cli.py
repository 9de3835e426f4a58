"""Command-line entry point.

Subcommands map onto the harness pipeline; every command takes a JSON plan
and an output directory (``--out``, or the ``EDGECLOUD_OUT`` environment
variable, default ``./out``). All randomness flows from the plan's master
seed (overridable with ``--seed``), so re-running any command with the same
inputs reproduces its outputs byte for byte.

    gen-data   write dataset.npz for the plan
    train      run all training stages; write checkpoints + per-stage logs
    evaluate   score every policy in the plan; write reports.csv + frontiers
    sweep      dynamic-threshold sweep; write sweep.csv + sweep frontiers
    frontier   re-filter an existing reports CSV to its non-dominated rows
    report     print a reports CSV as a readable summary table

Exit codes: 0 success, 2 bad usage or malformed config, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import harness, metrics, nncore, train as train_mod
from .metrics import MAX, MIN, ParetoPoint, pareto_frontier
from .nncore import ConfigError, UsageError
from .train import DivergenceError

CHECKPOINT_FILES = {"edge": "edge.npz", "cloud": "cloud.npz", "adapter": "adapter.npz"}


def _out_dir(args) -> str:
    out = args.out or os.environ.get("EDGECLOUD_OUT") or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _load_plan(args) -> harness.ExperimentPlan:
    if not os.path.exists(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    return harness.load_plan(args.config, seed_override=args.seed)


def _load_system(plan, out_dir) -> harness.TrainedSystem:
    ds = harness.build_dataset(plan)
    edge, cloud, adapter = harness.build_models(plan)
    for name, component in (("edge", edge), ("cloud", cloud), ("adapter", adapter)):
        path = os.path.join(out_dir, CHECKPOINT_FILES[name])
        if not os.path.exists(path):
            raise ConfigError(f"missing checkpoint {path}; run `train` first")
        nncore.restore_params(component.params(), nncore.load_params(path))
    return harness.TrainedSystem(plan, ds, edge, cloud, adapter)


def cmd_gen_data(args) -> int:
    plan = _load_plan(args)
    out = _out_dir(args)
    ds = harness.build_dataset(plan)
    path = os.path.join(out, "dataset.npz")
    ds.save(path)
    print(f"wrote {path} ({len(ds.y)} samples, {ds.num_classes} classes)")
    return 0


def cmd_train(args) -> int:
    plan = _load_plan(args)
    out = _out_dir(args)
    ds = harness.build_dataset(plan)
    edge, cloud, adapter = harness.build_models(plan)
    logs = harness.train_stages(plan, ds, edge, cloud, adapter)
    for name, component in (("edge", edge), ("cloud", cloud), ("adapter", adapter)):
        nncore.save_params(os.path.join(out, CHECKPOINT_FILES[name]), component.params())
    for name, result in logs.items():
        train_mod.write_training_log(os.path.join(out, f"train_{name}.csv"), result)
    print(f"wrote checkpoints and training logs to {out}")
    for name, result in logs.items():
        final = result.final
        print(f"  {name}: ce={final.ce_loss:.4f} acc={final.accuracy:.4f} recall={final.recall:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    plan = _load_plan(args)
    out = _out_dir(args)
    system = _load_system(plan, out)
    reports = harness.evaluate_policies(system)
    harness.write_outputs(out, reports)
    print(f"wrote {os.path.join(out, 'reports.csv')} ({len(reports)} systems)")
    return 0


def cmd_sweep(args) -> int:
    plan = _load_plan(args)
    out = _out_dir(args)
    system = _load_system(plan, out)
    c1 = plan.policies[0].c1 if plan.policies else 0.8
    grid = sorted({0.0, *plan.c2_grid, c1})
    result = harness.sweep_dynamic(system, grid, c1=c1)
    metrics.write_reports_csv(os.path.join(out, "sweep.csv"), result.reports)
    keep = {p.label for p in result.frontier}
    front_rows = [r for r in result.reports if r.label in keep]
    metrics.write_reports_csv(os.path.join(out, "sweep_frontier.csv"), front_rows)
    metrics.write_reports_csv(os.path.join(out, "sweep_frontier_comp.csv"),
                              metrics.frontier_reports(result.reports, "s_comp"))
    metrics.write_reports_csv(os.path.join(out, "sweep_frontier_comm.csv"),
                              metrics.frontier_reports(result.reports, "s_comm"))
    print(f"wrote sweep CSVs to {out} ({len(result.reports)} points, "
          f"{len(result.frontier)} non-dominated)")
    return 0


def cmd_frontier(args) -> int:
    if not os.path.exists(args.input):
        raise ConfigError(f"input CSV not found: {args.input}")
    rows = metrics.read_report_rows(args.input)
    if not rows:
        raise ConfigError(f"{args.input}: no data rows")
    perf, cost = args.objectives.split(",") if "," in args.objectives else ("s_p", args.objectives)
    for col in (perf, cost, "label"):
        if col not in rows[0]:
            raise ConfigError(f"{args.input}: missing column {col!r}")
    points = []
    for i, row in enumerate(rows):
        try:
            points.append(ParetoPoint((float(row[perf]), float(row[cost])), (MAX, MIN), row["label"]))
        except ValueError as exc:
            raise ConfigError(f"{args.input} row {i + 1}: {exc}") from exc
    keep = {p.label for p in pareto_frontier(points)}
    kept_rows = [row for row in rows if row["label"] in keep]
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(kept_rows)
    print(f"wrote {args.output} ({len(kept_rows)} of {len(rows)} rows non-dominated)")
    return 0


def cmd_report(args) -> int:
    if not os.path.exists(args.input):
        raise ConfigError(f"input CSV not found: {args.input}")
    rows = metrics.read_report_rows(args.input)
    if not rows:
        raise ConfigError(f"{args.input}: no data rows")
    cols = ["label", "accuracy", "s_p", "s_comp", "s_comm", "tau", "psi", "recall"]
    present = [c for c in cols if c in rows[0]]
    widths = {c: max(len(c), 8) for c in present}
    widths["label"] = max(len(r["label"]) for r in rows + [{"label": "label"}])

    def fmt(row):
        cells = []
        for c in present:
            v = row[c]
            if c != "label":
                try:
                    v = f"{float(v):.4f}"
                except ValueError:
                    pass
            cells.append(v.ljust(widths[c]))
        return "  ".join(cells)

    print(fmt({c: c for c in present}))
    print("  ".join("-" * widths[c] for c in present))
    for row in rows:
        print(fmt(row))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgecloud",
                                     description="edge-cloud collaborative inference simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_plan_command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON experiment plan")
        p.add_argument("--seed", type=int, default=None, help="override the plan's master seed")
        p.add_argument("--out", default=None, help="output directory (default $EDGECLOUD_OUT or ./out)")
        p.set_defaults(func=func)
        return p

    add_plan_command("gen-data", cmd_gen_data, "generate the synthetic dataset file")
    add_plan_command("train", cmd_train, "run all training stages")
    add_plan_command("evaluate", cmd_evaluate, "evaluate the policy grid")
    add_plan_command("sweep", cmd_sweep, "sweep the dynamic c2 threshold")

    pf = sub.add_parser("frontier", help="re-filter a reports CSV to non-dominated rows")
    pf.add_argument("--input", required=True)
    pf.add_argument("--output", required=True)
    pf.add_argument("--objectives", default="s_p,s_comp",
                    help="perf,cost column pair (default s_p,s_comp)")
    pf.set_defaults(func=cmd_frontier)

    pr = sub.add_parser("report", help="print a reports CSV as a summary table")
    pr.add_argument("--input", required=True)
    pr.set_defaults(func=cmd_report)
    return parser


def dispatch(argv) -> int:
    """Run one command; returns the process exit code instead of exiting."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
