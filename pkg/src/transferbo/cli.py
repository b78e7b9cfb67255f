"""Command-line front door: runs, sweeps, source building, reports.

Config files are JSON with four sections (problem, engine, transfer,
output); unknown keys anywhere are errors, every engine default is
overridable.  Each run writes a manifest (the fully resolved config plus
seed and code version) next to its outputs; running from a manifest
reproduces the trace byte-for-byte.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .benchmarks import (
    SpecError,
    build_fom_spec,
    evaluate,
    load_problem,
    make_problem,
    problem_names,
)
from .engine import (
    RunConfig,
    RunConfigError,
    evaluations_to_reach,
    read_trace,
    run_optimization,
    write_trace,
)
from .gp import GpModel
from .neural_kernel import NeuralKernel
from .transfer import load_source, save_source


class ConfigError(ValueError):
    pass


_ENGINE_KEYS = {
    "mode", "batch_size", "n_iterations", "n_initial", "seed",
    "fit_steps", "fit_restarts", "refresh_steps",
    "transfer_fit_steps", "transfer_refresh_steps",
    "population", "generations", "ucb_beta",
    "fom_samples", "fom_seed", "checkpoint_every",
}
_PROBLEM_KEYS = {"name", "variant", "path"}
_TRANSFER_KEYS = {"enabled", "source_checkpoint"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {"problem", "engine", "transfer", "output"}


def _check_keys(section: str, given: dict, allowed: set) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if "config" in raw:  # manifest: re-run the embedded resolved config
        raw = raw["config"]
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {sorted(unknown)}")
    if "problem" not in raw:
        raise ConfigError("config needs a [problem] section")
    _check_keys("problem", raw.get("problem", {}), _PROBLEM_KEYS)
    _check_keys("engine", raw.get("engine", {}), _ENGINE_KEYS)
    _check_keys("transfer", raw.get("transfer", {}), _TRANSFER_KEYS)
    _check_keys("output", raw.get("output", {}), _OUTPUT_KEYS)
    return raw


def resolve_config(raw: dict, overrides: argparse.Namespace) -> dict:
    """Materialize every default so the manifest is self-contained."""
    problem = dict(raw["problem"])
    engine = dict(raw.get("engine", {}))
    transfer = {"enabled": False, "source_checkpoint": None}
    transfer.update(raw.get("transfer", {}))
    output = {"dir": "."}
    output.update(raw.get("output", {}))

    if getattr(overrides, "seed", None) is not None:
        engine["seed"] = overrides.seed
    if getattr(overrides, "budget", None) is not None:
        engine["n_iterations"] = overrides.budget
    if getattr(overrides, "output", None) is not None:
        output["dir"] = overrides.output

    defaults = {f.name: f.default for f in fields(RunConfig)
                if f.name in _ENGINE_KEYS}
    for key, default in defaults.items():
        engine.setdefault(key, default)
    return {"problem": problem, "engine": engine, "transfer": transfer,
            "output": output}


def build_problem(problem_cfg: dict):
    if "path" in problem_cfg:
        return load_problem(problem_cfg["path"])
    name = problem_cfg.get("name")
    if name is None:
        raise ConfigError("problem section needs 'name' or 'path'")
    try:
        return make_problem(name, variant=problem_cfg.get("variant", "target"))
    except SpecError as exc:
        raise ConfigError(f"unknown problem: {exc}") from exc


def build_run_config(resolved: dict, out_dir: str) -> RunConfig:
    problem = build_problem(resolved["problem"])
    engine = resolved["engine"]
    try:
        return RunConfig(problem=problem, transfer=resolved["transfer"]["enabled"],
                         output_dir=out_dir, **engine)
    except TypeError as exc:
        raise ConfigError(f"bad engine settings: {exc}") from exc


def _load_source_if_any(resolved: dict):
    if not resolved["transfer"]["enabled"]:
        return None
    path = resolved["transfer"]["source_checkpoint"]
    if not path:
        raise ConfigError("transfer.enabled requires transfer.source_checkpoint")
    try:
        models, _, _ = load_source(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"source checkpoint not found: {path}") from exc
    return models


def write_manifest(path: str, resolved: dict) -> None:
    manifest = {"config": resolved, "seed": resolved["engine"]["seed"],
                "code_version": __version__}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def write_plot_data(path: str, trace_cols: dict) -> None:
    """Iteration vs incumbent, plain CSV (columns documented in README)."""
    iters = trace_cols["iteration"]
    inc = trace_cols["incumbent"]
    lines = ["iteration,evaluations,incumbent"]
    for it in sorted(set(iters.tolist())):
        mask = iters <= it
        last = np.flatnonzero(iters == it)[-1]
        value = inc[last]
        lines.append(f"{it},{int(mask.sum())},"
                     f"{'' if np.isnan(value) else repr(float(value))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _single_run(resolved: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    cfg = build_run_config(resolved, out_dir)
    source = _load_source_if_any(resolved)
    result = run_optimization(cfg, source_models=source)
    trace_path = os.path.join(out_dir, "trace.csv")
    write_trace(trace_path, result, cfg.problem)
    write_manifest(os.path.join(out_dir, "manifest.json"), resolved)
    write_plot_data(os.path.join(out_dir, "plotdata.csv"), read_trace(trace_path))
    return trace_path


def cmd_run(args) -> int:
    resolved = resolve_config(load_config(args.config), args)
    _single_run(resolved, resolved["output"]["dir"])
    return 0


def cmd_sweep(args) -> int:
    resolved = resolve_config(load_config(args.config), args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    base_dir = resolved["output"]["dir"]
    os.makedirs(base_dir, exist_ok=True)
    failures = []
    traces = {}
    baselines = {}
    for seed in seeds:
        per_seed = json.loads(json.dumps(resolved))
        per_seed["engine"]["seed"] = seed
        seed_dir = os.path.join(base_dir, f"seed_{seed}")
        per_seed["output"]["dir"] = seed_dir
        try:
            traces[seed] = read_trace(_single_run(per_seed, seed_dir))
            if resolved["transfer"]["enabled"]:
                base_cfg = json.loads(json.dumps(per_seed))
                base_cfg["transfer"] = {"enabled": False, "source_checkpoint": None}
                base_dir_seed = os.path.join(base_dir, f"seed_{seed}_baseline")
                base_cfg["output"]["dir"] = base_dir_seed
                baselines[seed] = read_trace(_single_run(base_cfg, base_dir_seed))
        except Exception as exc:  # noqa: BLE001 - summary must record failures
            failures.append((seed, repr(exc)))
    _write_sweep_summary(os.path.join(base_dir, "summary.csv"), traces, failures)
    if resolved["transfer"]["enabled"] and traces:
        _write_speedup(os.path.join(base_dir, "speedup.csv"), traces, baselines)
    if failures:
        print(f"{len(failures)} seed(s) failed", file=sys.stderr)
        return 1
    return 0


def _write_sweep_summary(path: str, traces: dict, failures: list) -> None:
    lines = ["iteration,median_incumbent,min_incumbent,max_incumbent,n_seeds"]
    if traces:
        all_iters = sorted({int(i) for cols in traces.values()
                            for i in cols["iteration"]})
        for it in all_iters:
            finals = []
            for cols in traces.values():
                idx = np.flatnonzero(cols["iteration"] == it)
                if idx.size:
                    finals.append(cols["incumbent"][idx[-1]])
            finals = np.asarray(finals, dtype=np.float64)
            lines.append(
                f"{it},{repr(float(np.nanmedian(finals)))},"
                f"{repr(float(np.nanmin(finals)))},{repr(float(np.nanmax(finals)))},"
                f"{finals.size}")
    for seed, err in failures:
        lines.append(f"# seed {seed} FAILED: {err}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_speedup(path: str, traces: dict, baselines: dict) -> None:
    """Per seed: evaluations for the baseline to reach its own best vs the
    transfer run to reach that same value; speedup = baseline / transfer."""
    lines = ["seed,baseline_best,baseline_evals,transfer_evals,speedup"]
    ratios = []
    for seed in sorted(traces):
        if seed not in baselines:
            continue
        base_inc = baselines[seed]["incumbent"]
        on_inc = traces[seed]["incumbent"]
        best = np.nanmax(base_inc)
        e_base = evaluations_to_reach(base_inc, best - 1e-12)
        e_on = evaluations_to_reach(on_inc, best - 1e-12)
        speed = float("nan") if e_on is None else e_base / e_on
        if e_on is not None:
            ratios.append(speed)
        lines.append(f"{seed},{repr(float(best))},{e_base},"
                     f"{'' if e_on is None else e_on},"
                     f"{'' if e_on is None else repr(speed)}")
    if ratios:
        lines.append(f"# median_speedup,{repr(float(np.median(ratios)))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_make_source(args) -> int:
    try:
        problem = make_problem(args.problem, variant=args.variant)
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(size=(args.samples, problem.dimension))
    y = evaluate(problem, x)
    models = []
    for j in range(y.shape[1]):
        kernel = NeuralKernel.initialize(problem.dimension, seed=args.seed + 7 * j)
        models.append(GpModel.fit(x, y[:, j], kernel, steps=args.fit_steps,
                                  restarts=args.restarts, seed=args.seed + 7 * j))
    save_source(args.output, models, problem.metric_names,
                problem_name=f"{problem.name}:{problem.variant}")
    print(f"wrote source checkpoint for {problem.name} ({args.samples} samples) "
          f"to {args.output}")
    return 0


def cmd_fom_spec(args) -> int:
    try:
        problem = make_problem(args.problem, variant=args.variant)
        spec = build_fom_spec(problem, n_samples=args.samples, seed=args.seed,
                              cache_dir=os.path.dirname(args.output) or ".")
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc
    with open(args.output, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=1)
    print(f"wrote FOM spec to {args.output}")
    return 0


def cmd_report(args) -> int:
    from .report import write_report  # matplotlib stays off the core path
    if not args.traces:
        raise ConfigError("report needs at least one trace file")
    write_report(args.traces, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transferbo",
        description="Constrained Bayesian optimization with selective "
                    "knowledge transfer")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one optimization run")
    run.add_argument("--config", required=True, help="JSON config or manifest")
    run.add_argument("--seed", type=int, help="override engine.seed")
    run.add_argument("--budget", type=int, help="override engine.n_iterations")
    run.add_argument("--output", help="override output.dir")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="repeat a run over several seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seeds", required=True,
                       help="comma-separated seed list, e.g. 0,1,2,3,4")
    sweep.add_argument("--output", help="override output.dir")
    sweep.set_defaults(fn=cmd_sweep)

    mk = sub.add_parser("make-source", help="sample a problem and fit the "
                                            "per-metric source models")
    mk.add_argument("--problem", required=True, choices=problem_names())
    mk.add_argument("--variant", default="source")
    mk.add_argument("--samples", type=int, default=200)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--fit-steps", type=int, default=120, dest="fit_steps")
    mk.add_argument("--restarts", type=int, default=1)
    mk.add_argument("--output", required=True)
    mk.set_defaults(fn=cmd_make_source)

    fom = sub.add_parser("fom-spec", help="build the scalarization ranges "
                                          "from random samples")
    fom.add_argument("--problem", required=True, choices=problem_names())
    fom.add_argument("--variant", default="target")
    fom.add_argument("--samples", type=int, default=1000)
    fom.add_argument("--seed", type=int, default=0)
    fom.add_argument("--output", required=True)
    fom.set_defaults(fn=cmd_fom_spec)

    rep = sub.add_parser("report", help="summarize trace CSVs and render "
                                        "convergence figures")
    rep.add_argument("traces", nargs="*", help="trace.csv files")
    rep.add_argument("--output", default="report")
    rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, RunConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
