"""Command-line entry point.

Subcommands: ``count``, ``enumerate``, ``sample``, ``estimate``, ``search``,
``pareto``, ``solve``, ``simulate`` and ``basin``. JSON and CSV artifacts
carry a header with the tool version, the seed and a digest of the run
configuration. Failures print a JSON error object on stderr and exit with 2
(usage) or 1 (runtime).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    apply_grid_overrides,
    config_digest,
    load_config_file,
    output_path,
    parse_value,
)
from .dp_solver import basin_sweep, load_policy, save_policy, simulate, solve_decomposition
from .enumeration import EnumerationCapExceeded, count_decompositions, enumerate_all, sample_uniform
from .input_tree import InputTree, InvalidTreeError, undecomposed, validate
from .lqr_metrics import FitnessEvaluator, linearize, solve_discounted_lqr
from .search import GaConfig, MctsConfig, ParetoConfig, RandomConfig, run_ga, run_mcts, run_pareto, run_random
from .systems import get_model

logger = logging.getLogger("poldec")


class UsageError(Exception):
    """Bad flags, unknown models or malformed input (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# helpers ---------------------------------------------------------------------


def _header(cfg: RunConfig, command: str) -> dict:
    return {
        "tool": "poldec",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_digest": config_digest({"command": command, **cfg.to_dict()}),
    }


def _emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if out:
        output_path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit_csv(header: dict, columns: Sequence[str], rows, out: str | None) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    if out:
        output_path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _values(args) -> dict[str, Any]:
    vals: dict[str, Any] = {}
    if getattr(args, "config", None):
        vals.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        vals[k.strip()] = parse_value(k.strip(), v)
    return vals


def _run_config(args, method=None) -> RunConfig:
    return RunConfig(
        model=getattr(args, "model", None),
        method=method,
        seed=getattr(args, "seed", 0),
        budget_seconds=getattr(args, "budget_seconds", None),
        budget_steps=getattr(args, "budget_steps", None),
        budget_evaluations=getattr(args, "budget_evaluations", None),
        workers=getattr(args, "workers", 1),
        values=_values(args),
        verbosity=getattr(args, "verbose", 0),
    )


def _model(name: str):
    try:
        return get_model(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tree(text: str, model) -> InputTree:
    try:
        tree = InputTree.parse(text, model.n, model.m)
    except (ValueError, InvalidTreeError) as exc:
        raise UsageError(f"cannot parse tree {text!r}: {exc}") from None
    ok, diags = validate(tree)
    if not ok:
        raise UsageError(f"invalid tree {text!r}: {'; '.join(diags)}")
    return tree


def _node_label(tree: InputTree, nid: int) -> str:
    nd = tree.node(nid)
    us = ",".join(f"u{u + 1}" for u in nd.inputs)
    xs = ",".join(f"x{x + 1}" for x in nd.states)
    return f"({us}|{xs})"


def _floats(text: str, size: int | None = None, name: str = "value") -> np.ndarray:
    try:
        vals = np.array([float(p) for p in text.replace(",", " ").split()])
    except ValueError:
        raise UsageError(f"{name} must be numbers separated by commas") from None
    if size is not None and vals.size != size:
        raise UsageError(f"{name} needs {size} numbers, got {vals.size}")
    return vals


# subcommands -----------------------------------------------------------------


def cmd_count(args) -> int:
    cnt = count_decompositions(args.n, args.m)
    if args.json or args.out:
        cfg = _run_config(args)
        payload = {
            "header": _header(cfg, "count"),
            "n": args.n,
            "m": args.m,
            "count": cnt.total,
            "per_r": {str(r): v for r, v in sorted(cnt.per_r().items())},
            "per_r_k": [{"r": r, "k": k, "count": v} for (r, k), v in sorted(cnt.per_r_k.items())],
        }
        _emit_json(payload, args.out)
    else:
        print(cnt.total)
    return 0


def cmd_enumerate(args) -> int:
    lines = [t.to_string() for t in enumerate_all(args.n, args.m, cap=args.cap)]
    text = "\n".join(lines) + "\n"
    if args.out:
        output_path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed)
    lines = [sample_uniform(args.n, args.m, rng).to_string() for _ in range(args.count)]
    text = "\n".join(lines) + "\n"
    if args.out:
        output_path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_estimate(args) -> int:
    cfg = _run_config(args)
    model = _model(args.model)
    grid = apply_grid_overrides(model.grid, cfg.values)
    tree = _tree(args.tree, model)
    metrics = FitnessEvaluator(model, grid)(tree)
    _emit_json({"header": _header(cfg, "estimate"), "model": model.name, "tree": tree.to_string(),
                **metrics.to_dict()}, args.out)
    return 0


def _budget_check(cfg: RunConfig) -> None:
    if cfg.budget_seconds is None and cfg.budget_steps is None and cfg.budget_evaluations is None:
        raise UsageError("give a budget: --budget-seconds, --budget-steps or --budget-evaluations")


def cmd_search(args) -> int:
    cfg = _run_config(args, args.method)
    _budget_check(cfg)
    model = _model(args.model)
    grid = apply_grid_overrides(model.grid, cfg.values)
    v = cfg.values
    common = dict(seed=cfg.seed, workers=cfg.workers, deterministic=cfg.deterministic,
                  max_seconds=cfg.budget_seconds, max_evaluations=cfg.budget_evaluations)
    if args.method == "ga":
        sc = GaConfig(population_size=v.get("population_size", 100), elite_fraction=v.get("elite_fraction", 0.1),
                      tournament_size=v.get("tournament_size", 3), max_generations=cfg.budget_steps, **common)
        report = run_ga(model, grid, sc)
    elif args.method == "mcts":
        common.pop("workers")
        sc = MctsConfig(max_rollouts=cfg.budget_steps, max_children=v.get("max_children"), **common)
        report = run_mcts(model, grid, sc)
    else:
        sc = RandomConfig(max_draws=cfg.budget_steps, batch_size=v.get("batch_size", 64), **common)
        report = run_random(model, grid, sc)
    _emit_json({"header": _header(cfg, "search"), **report.to_dict()}, args.out)
    return 0


def cmd_pareto(args) -> int:
    cfg = _run_config(args, "pareto")
    _budget_check(cfg)
    model = _model(args.model)
    grid = apply_grid_overrides(model.grid, cfg.values)
    pc = ParetoConfig(population_size=cfg.values.get("population_size", 100), max_seconds=cfg.budget_seconds,
                      max_generations=cfg.budget_steps, max_evaluations=cfg.budget_evaluations, seed=cfg.seed,
                      workers=cfg.workers, deterministic=cfg.deterministic)
    front = run_pareto(model, grid, pc)
    summary = front.report.to_dict() if front.report else {}
    summary.pop("history", None)
    _emit_json({"header": _header(cfg, "pareto"), "model": model.name, "front": front.rows(),
                "search": summary}, args.out)
    return 0


def cmd_solve(args) -> int:
    cfg = _run_config(args)
    model = _model(args.model)
    grid = apply_grid_overrides(model.grid, cfg.values)
    tree = _tree(args.tree, model) if args.tree else undecomposed(model.n, model.m)
    asm = solve_decomposition(model, tree, grid, decoupled_mode=cfg.values.get("decoupled_inputs", "trim"))
    path = output_path(args.out)
    save_policy(asm, path, extra_header={"header": _header(cfg, "solve")})
    summary = {
        "header": _header(cfg, "solve"),
        "policy": str(path),
        "tree": tree.to_string(),
        "n_parameters": asm.n_parameters,
        "nodes": [
            {"node": _node_label(tree, nid), "parameters": asm.policies[nid].n_parameters,
             "iterations": asm.stats[nid].iterations, "converged": asm.stats[nid].converged,
             **({"seconds": round(asm.node_seconds[nid], 3)} if args.timing else {})}
            for nid in asm.order
        ],
    }
    _emit_json(summary, None)
    return 0


def _controller_from(args, cfg):
    if args.policy:
        try:
            asm, _ = load_policy(args.policy)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read policy {args.policy!r}: {exc}") from None
        return asm.model, asm, {"policy": str(args.policy)}
    if not (args.model and args.lqr):
        raise UsageError("give --policy, or --model together with --lqr")
    model = _model(args.model)
    lin = linearize(model)
    _, K = solve_discounted_lqr(lin.A, lin.B, model.Q, model.R, model.discount)
    return model, K * args.gain_scale, {"controller": "lqr", "gain_scale": args.gain_scale}


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    model, ctrl, info = _controller_from(args, cfg)
    x0 = model.x_goal.copy() if args.x0 is None else _floats(args.x0, model.n, "--x0")
    dt = cfg.values.get("dt", args.dt)
    dur = cfg.values.get("duration", args.duration)
    tr = simulate(model, ctrl, x0, dur, dt, cfg.values.get("convergence_tolerance", 0.05))
    header = {**_header(cfg, "simulate"), **info, "model": model.name, "converged": tr.converged,
              "diverged": tr.diverged, "divergence_time": tr.divergence_time,
              "events": [[t, e] for t, e in tr.events]}
    cols, rows = tr.to_rows(model.state_names, model.input_names)
    _emit_csv(header, cols, rows, args.out)
    return 0


def cmd_basin(args) -> int:
    cfg = _run_config(args)
    model, ctrl, info = _controller_from(args, cfg)
    try:
        i, j = (int(p) for p in args.slice.split(","))
    except ValueError:
        raise UsageError("--slice expects two state indices, e.g. 0,1") from None
    if not (0 <= i < model.n and 0 <= j < model.n):
        raise UsageError(f"slice indices must lie in 0..{model.n - 1}")
    ri = _floats(args.range_i, 3, "--range-i") if args.range_i else None
    rj = _floats(args.range_j, 3, "--range-j") if args.range_j else None
    ax_i = np.linspace(*(ri[:2] if ri is not None else (model.x_lower[i], model.x_upper[i])),
                       int(ri[2]) if ri is not None else args.points)
    ax_j = np.linspace(*(rj[:2] if rj is not None else (model.x_lower[j], model.x_upper[j])),
                       int(rj[2]) if rj is not None else args.points)
    dur = cfg.values.get("duration", args.duration)
    res = basin_sweep(model, ctrl, (i, j), (ax_i, ax_j), dur, dt=cfg.values.get("dt", args.dt),
                      tolerance=cfg.values.get("convergence_tolerance", 0.05))
    header = {**_header(cfg, "basin"), **info, "model": model.name, "slice": [i, j],
              "converged_fraction": res.fraction}
    _emit_csv(header, [model.state_names[i], model.state_names[j], "converged"], res.rows(), args.out)
    return 0


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poldec", description="Policy decomposition toolkit.")
    p.add_argument("--version", action="version", version=f"poldec {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("count", help="number of decompositions of an n-state, m-input system")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--json", action="store_true", help="print a JSON record instead of the bare number")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_count)

    sp = sub.add_parser("enumerate", help="list every decomposition, one tree per line")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--cap", type=int, default=10**6)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("sample", help="uniform random decompositions")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("estimate", help="LQR value-error estimate and fitness of one tree")
    sp.add_argument("--model", required=True)
    sp.add_argument("--tree", required=True)
    sp.add_argument("--out")
    with_config(sp)
    sp.set_defaults(func=cmd_estimate)

    for name, help_text in (("search", "search for a low-fitness decomposition"),
                            ("pareto", "Pareto front over (F_err, F_comp)")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--model", required=True)
        if name == "search":
            sp.add_argument("--method", choices=("ga", "mcts", "random"), default="ga")
        sp.add_argument("--budget-seconds", type=float)
        sp.add_argument("--budget-steps", type=int, help="generations, rollouts or draws")
        sp.add_argument("--budget-evaluations", type=int, help="unique fitness evaluations")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1, help="fitness workers; 1 means deterministic mode")
        sp.add_argument("--out")
        with_config(sp)
        sp.set_defaults(func=cmd_search if name == "search" else cmd_pareto)

    sp = sub.add_parser("solve", help="compute lookup-table policies for a decomposition")
    sp.add_argument("--model", required=True)
    sp.add_argument("--tree", help="canonical tree string (default: undecomposed)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--timing", action="store_true", help="include per-node wall times in the summary")
    with_config(sp)
    sp.set_defaults(func=cmd_solve)

    for name in ("simulate", "basin"):
        sp = sub.add_parser(name, help="closed-loop trajectory" if name == "simulate" else "basin of attraction")
        sp.add_argument("--policy", help="policy file written by 'solve'")
        sp.add_argument("--model", help="with --lqr: simulate the LQR gain of this model")
        sp.add_argument("--lqr", action="store_true")
        sp.add_argument("--gain-scale", type=float, default=1.0, help="multiply the LQR gain (negative destabilises)")
        sp.add_argument("--duration", type=float, default=10.0)
        sp.add_argument("--dt", type=float, default=0.002)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        with_config(sp)
        if name == "simulate":
            sp.add_argument("--x0", help="initial state, comma separated (default: goal)")
            sp.set_defaults(func=cmd_simulate)
        else:
            sp.add_argument("--slice", required=True, help="two state indices, e.g. 0,1")
            sp.add_argument("--range-i", help="lo,hi,count for the first index (default: box, --points)")
            sp.add_argument("--range-j", help="lo,hi,count for the second index")
            sp.add_argument("--points", type=int, default=21)
            sp.set_defaults(func=cmd_basin)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", str(exc), 2)
    except EnumerationCapExceeded as exc:
        return _fail("usage", str(exc), 2)
    except ValueError as exc:
        if getattr(args, "command", "") in ("count", "enumerate", "sample"):
            return _fail("usage", str(exc), 2)
        return _fail("runtime", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable error
        logger.debug("failure", exc_info=True)
        return _fail("runtime", f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
