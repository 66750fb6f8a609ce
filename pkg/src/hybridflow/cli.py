"""``hybridflow`` command line: validate, plan, run, estimate, gridgen.

Exit codes: 0 success, 1 domain failure (diagnostics, failed run),
2 usage or environment failure (bad flags, unreadable or unparseable files).
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path
from typing import Any

OK, FAILED, USAGE = 0, 1, 2


class _Abort(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_workflow(path: str):
    from .workflow import WorkflowDefinitionError, WorkflowSyntaxError, load_workflow, validate

    try:
        w = load_workflow(path)
    except OSError as exc:
        raise _Abort(USAGE, f"cannot read workflow: {exc}") from exc
    except WorkflowSyntaxError as exc:
        raise _Abort(USAGE, f"{path}: {exc}") from exc
    except WorkflowDefinitionError as exc:
        raise _Abort(FAILED, "\n".join(str(d) for d in exc.diagnostics)) from exc
    diags = validate(w)
    if diags:
        raise _Abort(FAILED, "\n".join(str(d) for d in diags))
    return w


def _load_env(path: str, workflow):
    from .dataflow import ScatterNestingError, unfold_plan
    from .deploy import BindingError, DeploymentConfigError, EnvironmentSyntaxError, load_environment, resolve_bindings

    try:
        plan = load_environment(path)
    except OSError as exc:
        raise _Abort(USAGE, f"cannot read environment: {exc}") from exc
    except EnvironmentSyntaxError as exc:
        raise _Abort(USAGE, f"{path}: {exc}") from exc
    except DeploymentConfigError as exc:
        raise _Abort(FAILED, f"{path}: {exc}") from exc
    try:
        bindings = resolve_bindings(workflow, plan)
    except BindingError as exc:
        raise _Abort(FAILED, str(exc)) from exc
    try:
        steps = unfold_plan(workflow)
    except ScatterNestingError as exc:
        raise _Abort(FAILED, str(exc)) from exc
    return plan, bindings, steps


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    w = _load_workflow(args.workflow)
    if args.env:
        _load_env(args.env, w)
    return OK


def format_plan(workflow, bindings, steps) -> str:
    from .workflow import dependency_edges, topological_order

    rows = [("step", "target", "resources", "depth", "inputs")]
    for sid in topological_order(workflow):
        b, sp = bindings[sid], steps[sid]
        ports = ", ".join(f"{name}<-{pp.source} {pp.mode}" for name, pp in sp.ports.items()) or "-"
        rows.append((sid, b.target, str(b.resources_requested), str(sp.depth), ports))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(r[:4])) + "  " + r[4] for r in rows]
    lines.append("")
    lines.append("edges:")
    edges = dependency_edges(workflow)
    lines.extend(f"  {a} -> {b}" for a, b in edges)
    if not edges:
        lines.append("  (none)")
    return "\n".join(lines)


def cmd_plan(args) -> int:
    w = _load_workflow(args.workflow)
    _, bindings, steps = _load_env(args.env, w)
    print(format_plan(w, bindings, steps))
    return OK


def _parse_input(text: str) -> tuple[str, Any]:
    name, sep, raw = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name, json.loads(raw)
    except ValueError:
        return name, raw


def write_outputs(outcome, outdir: Path) -> dict[str, str]:
    """Values go to ``<name>.json``; files are copied under ``<name>/``.  Returns paths relative to outdir."""
    from .data import DataReference

    written: dict[str, str] = {}
    for name, payload in outcome.workflow_outputs.items():
        if isinstance(payload, DataReference):
            dst = outdir / name / payload.basename
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(outcome.data.local_path(payload), dst)
            written[name] = str(dst.relative_to(outdir))
            continue

        def place(p, prefix: tuple[int, ...]):
            if isinstance(p, DataReference):
                dst = outdir / name / "/".join(map(str, prefix)) / p.basename
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(outcome.data.local_path(p), dst)
                return str(dst.relative_to(outdir / name))
            if isinstance(p, list):
                return [place(x, prefix + (i,)) for i, x in enumerate(p)]
            return p

        value = place(payload, ())
        dst = outdir / f"{name}.json"
        dst.write_text(json.dumps(value, indent=2) + "\n", encoding="utf-8")
        written[name] = dst.name
    return written


def cmd_run(args) -> int:
    from .dataflow import Engine, RunOptions
    from .provenance import build_report, write_report

    w = _load_workflow(args.workflow)
    plan, _, _ = _load_env(args.env, w)
    outdir = Path(args.outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Abort(USAGE, f"cannot create {outdir}: {exc}") from exc
    opts = RunOptions(max_concurrency=args.max_concurrency, retries=args.retries, seed=args.seed,
                      inputs=dict(args.input or []))
    try:
        engine = Engine(w, plan, opts)
    except OSError as exc:
        raise _Abort(USAGE, f"setup failed: {exc}") from exc
    outcome = engine.run()
    written = write_outputs(outcome, outdir) if outcome.ok else {}
    report_path = Path(args.report) if args.report else outdir / "report.json"
    write_report(build_report(outcome, normalize=args.normalize_times, outputs=written), report_path)
    if not outcome.ok:
        _err(f"run failed: {outcome.error}")
        return FAILED
    return OK


def _slot_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("slot counts must be positive integers")
    return values


def cmd_estimate(args) -> int:
    from .grid.estimate import estimate_makespan

    if args.variants < 0 or args.hours <= 0:
        raise _Abort(USAGE, "need --variants >= 0 and --hours > 0")
    for g in args.slots:
        hours = estimate_makespan(args.variants, args.hours, g)
        print(f"slots={g}: {hours!r} h ({hours / 24:.2f} days)")
    return OK


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in _names(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_gridgen(args) -> int:
    from .grid.generator import GridSpec, GridSpecError, SiteOptions, hyperparam_grid, write_grid

    if args.hp_count is not None:
        if args.hp_count < 0:
            raise _Abort(USAGE, "--hp-count must be >= 0")
        hps = [{"name": f"hp{i}"} for i in range(args.hp_count)]
    else:
        hps = hyperparam_grid(args.learning_rates, args.weight_decays, args.lr_decays)
    try:
        spec = GridSpec(args.networks, hps, args.datasets, args.folds)
    except GridSpecError as exc:
        raise _Abort(USAGE, str(exc)) from exc
    sites = SiteOptions(batch_connector=args.batch_connector, batch_limit=args.batch_limit,
                        batch_resources=args.batch_resources or args.batch_limit,
                        local_connector=args.local_connector)
    paths = write_grid(spec, args.outdir, python=args.python, sites=sites)
    print(f"{spec.variant_count} variants x {spec.folds} folds")
    for key in ("workflow", "env", "manifest"):
        print(f"{key}: {paths[key]}")
    return OK


# -- parser -----------------------------------------------------------------


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonnegative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridflow", description="Hybrid workflow runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a workflow and, optionally, its bindings")
    p.add_argument("-w", "--workflow", required=True)
    p.add_argument("-e", "--env")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("plan", help="print step bindings, scatter depths and edges")
    p.add_argument("-w", "--workflow", required=True)
    p.add_argument("-e", "--env", required=True)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("run", help="execute a workflow")
    p.add_argument("-w", "--workflow", required=True)
    p.add_argument("-e", "--env", required=True)
    p.add_argument("-o", "--outdir", required=True)
    p.add_argument("--report", help="provenance report path (default OUTDIR/report.json)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-concurrency", type=_positive, default=None)
    p.add_argument("--retries", type=_nonnegative, default=0)
    p.add_argument("--normalize-times", action="store_true")
    p.add_argument("--input", action="append", type=_parse_input, metavar="NAME=VALUE",
                   help="override a workflow input (VALUE parsed as JSON when possible)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("estimate", help="makespan of equal-length variants on G slots")
    p.add_argument("--variants", type=int, required=True)
    p.add_argument("--hours", type=float, required=True)
    p.add_argument("--slots", type=_slot_list, required=True, help="comma list, e.g. 1,180,990")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("gridgen", help="emit workflow, environment and manifest for a grid")
    p.add_argument("--networks", type=_names, required=True)
    p.add_argument("--datasets", type=_names, required=True)
    p.add_argument("--folds", type=_positive, default=1)
    p.add_argument("--hp-count", type=int, help="plain hyperparameter settings hp0..hpN-1")
    p.add_argument("--learning-rates", type=_floats, default=[0.001])
    p.add_argument("--weight-decays", type=_floats, default=[0.0])
    p.add_argument("--lr-decays", type=_floats, default=[0.0])
    p.add_argument("--batch-connector", choices=("sim-batch", "sandbox", "local"), default="sim-batch")
    p.add_argument("--batch-limit", type=_positive, default=4)
    p.add_argument("--batch-resources", type=_positive)
    p.add_argument("--local-connector", choices=("local", "sandbox"), default="local")
    p.add_argument("--python", help="interpreter for stub stages (default: this one)")
    p.add_argument("-o", "--outdir", required=True)
    p.set_defaults(fn=cmd_gridgen)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Abort as exc:
        if str(exc):
            _err(str(exc))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
