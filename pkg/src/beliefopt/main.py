"""Command-line entry point: ``beliefopt {infer,sweep,exact,gaussian,scatter,presets}``.

Results are printed to stdout as JSON. Exit code 0 means the command ran, whether
or not a solver converged; 2 means a structural error (bad file, bad config,
oracle misuse).
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from beliefopt.bo_solver import write_trace_csv
from beliefopt.config import (
    GibbsConfig,
    SolveConfig,
    gibbs_config_from_env,
    load_config_file,
    log_level_from_env,
    solve_config_from_env,
    with_overrides,
)
from beliefopt.exact import run_oracle
from beliefopt.gaussian import ga_boundedness_probe, ga_solve, probe_sweep
from beliefopt.graph_model import Model, condition, expand_marginals, lattice_square
from beliefopt.harness import METHODS, PRESETS, load_sweep_spec, scatter, spec_to_dict, sweep
from beliefopt.model_io import load_gaussian_model, load_model

logger = logging.getLogger("beliefopt")

EXIT_STRUCTURAL = 2
_ORACLE_ALIASES = {"brute": "brute", "elim": "elimination", "elimination": "elimination", "gibbs": "gibbs"}


def _configure_logging(verbose: int) -> None:
    level = {0: log_level_from_env(), 1: "INFO"}.get(verbose, "DEBUG")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if args.tol is not None:
        overrides["tol_q"] = args.tol
    return overrides


def resolve_configs(args: argparse.Namespace) -> tuple:
    """Environment defaults, then the config file, then CLI flags."""
    solve_cfg: SolveConfig = solve_config_from_env()
    gibbs_cfg: GibbsConfig = gibbs_config_from_env()
    if args.config:
        sections = load_config_file(args.config)
        solve_cfg = with_overrides(solve_cfg, sections["solve"])
        gibbs_cfg = with_overrides(gibbs_cfg, sections["gibbs"])
    solve_cfg = with_overrides(solve_cfg, _cli_overrides(args))
    if args.seed is not None:
        gibbs_cfg = replace(gibbs_cfg, seed=args.seed)
    logger.debug("solve config: %s", solve_cfg)
    return solve_cfg, gibbs_cfg


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2))


def _full_edge_marginals(model: Model, index_map: Dict[int, int],
                         reduced: Model, q_full: np.ndarray, xi_reduced: np.ndarray) -> List[float]:
    reduced_index = reduced.edge_index()
    xi = []
    for i, j in model.edges:
        i, j = int(i), int(j)
        if i in index_map and j in index_map:
            xi.append(float(xi_reduced[reduced_index[(index_map[i], index_map[j])]]))
        else:
            xi.append(float(q_full[i] * q_full[j]))
    return xi


def cmd_infer(args: argparse.Namespace) -> int:
    solve_cfg, _ = resolve_configs(args)
    model, evidence = load_model(args.model)
    conditioned = condition(model, evidence)
    beliefs, report = METHODS[args.method](conditioned.model, solve_cfg)
    if args.trace:
        write_trace_csv(report, args.trace)
    q = expand_marginals(conditioned, evidence, beliefs.q)
    xi = _full_edge_marginals(model, conditioned.index_map, conditioned.model, q, beliefs.xi)
    _print_json(
        {
            "q": q.tolist(),
            "xi": xi,
            # free energy of the clamped model, including the observed nodes' log-weight
            "free_energy": report.final_free_energy - conditioned.offset,
            "report": report.to_dict(),
        }
    )
    return 0


def cmd_exact(args: argparse.Namespace) -> int:
    _, gibbs_cfg = resolve_configs(args)
    model, evidence = load_model(args.model)
    conditioned = condition(model, evidence)
    result = run_oracle(conditioned.model, _ORACLE_ALIASES[args.oracle], gibbs_cfg)
    q = expand_marginals(conditioned, evidence, result.q)
    xi = _full_edge_marginals(model, conditioned.index_map, conditioned.model, q, result.xi)
    log_z = None if result.log_z is None else result.log_z + conditioned.offset
    _print_json({"q": q.tolist(), "xi": xi, "log_z": log_z, "oracle": _ORACLE_ALIASES[args.oracle]})
    return 0


def _load_spec(args: argparse.Namespace):
    if args.spec:
        spec = load_sweep_spec(args.spec)
    elif args.preset:
        spec = PRESETS[args.preset]
    else:
        raise ValueError("either --spec or --preset is required")
    if args.config:
        sections = load_config_file(args.config)
        spec = replace(
            spec,
            solve=with_overrides(spec.solve, sections["solve"]),
            gibbs=with_overrides(spec.gibbs, sections["gibbs"]),
        )
    solve_overrides = _cli_overrides(args)
    seed = solve_overrides.pop("seed", None)
    spec = replace(spec, solve=with_overrides(spec.solve, solve_overrides))
    if seed is not None:
        spec = replace(spec, seed=seed)
    if getattr(args, "workers", None):
        spec = replace(spec, workers=args.workers)
    return spec


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    rows = sweep(spec, args.out, timing_path=args.timing, beliefs_path=args.beliefs)
    converged = sum(row.converged for row in rows)
    _print_json({"rows": len(rows), "converged": converged, "out": str(args.out)})
    return 0


def cmd_scatter(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    count = scatter(spec, args.out, bo_method=args.bo_method)
    _print_json({"rows": count, "out": str(args.out)})
    return 0


def cmd_gaussian(args: argparse.Namespace) -> int:
    solve_cfg, _ = resolve_configs(args)
    if args.action == "solve":
        if not args.model:
            raise ValueError("gaussian solve requires --model")
        beliefs, report = ga_solve(load_gaussian_model(args.model), solve_cfg)
        if args.trace:
            write_trace_csv(report, args.trace)
        _print_json({**beliefs.to_dict(), "report": report.to_dict()})
        return 0
    if args.model:
        row = ga_boundedness_probe(load_gaussian_model(args.model), solve_cfg, seed=solve_cfg.seed)
        _print_json({"pd": row.pd, "gabo_status": row.gabo_status, "gabp_status": row.gabp_status,
                     "n": row.n, "seed": row.seed})
        return 0
    rows, cols = args.grid
    results = probe_sweep(lattice_square(rows, cols), args.scales, range(args.seeds), solve_cfg, args.out)
    summary: Dict[str, Dict[str, int]] = {}
    for scale, row in results:
        cell = summary.setdefault(repr(scale), {"pd": 0, "gabo_converged": 0, "gabp_converged": 0, "total": 0})
        cell["pd"] += int(row.pd)
        cell["gabo_converged"] += int(row.gabo_status == "converged")
        cell["gabp_converged"] += int(row.gabp_status == "converged")
        cell["total"] += 1
    _print_json(summary)
    return 0


def cmd_presets(args: argparse.Namespace) -> int:
    _print_json({name: spec_to_dict(spec) for name, spec in PRESETS.items()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Random seed override")
    common.add_argument("--max-iters", type=int, default=None, help="Iteration cap override")
    common.add_argument("--tol", type=float, default=None, help="Convergence threshold on max |dq|")
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(prog="beliefopt", description="Bethe free energy minimization for binary MRFs")
    sub = parser.add_subparsers(dest="command", required=True)

    infer = sub.add_parser("infer", parents=[common], help="Approximate marginals for one model")
    infer.add_argument("--model", type=Path, required=True)
    infer.add_argument("--method", choices=sorted(METHODS), default="bo-grad")
    infer.add_argument("--trace", type=Path, default=None, help="Per-iteration trace CSV")
    infer.set_defaults(handler=cmd_infer)

    exact = sub.add_parser("exact", parents=[common], help="Exact (or sampled) marginals for one model")
    exact.add_argument("--model", type=Path, required=True)
    exact.add_argument("--oracle", choices=sorted(_ORACLE_ALIASES), default="brute")
    exact.set_defaults(handler=cmd_exact)

    for name, handler, help_text in (
        ("sweep", cmd_sweep, "Error grid over weight and bias scales"),
        ("scatter", cmd_scatter, "BP vs BO scatter dump"),
    ):
        command = sub.add_parser(name, parents=[common], help=help_text)
        source = command.add_mutually_exclusive_group(required=True)
        source.add_argument("--spec", type=Path)
        source.add_argument("--preset", choices=sorted(PRESETS))
        command.add_argument("--out", type=Path, required=True)
        command.add_argument("--workers", type=int, default=None)
        command.set_defaults(handler=handler)
    sweep_parser = sub.choices["sweep"]
    sweep_parser.add_argument("--timing", type=Path, default=None)
    sweep_parser.add_argument("--beliefs", type=Path, default=None, help="JSON-lines beliefs sidecar")
    sub.choices["scatter"].add_argument("--bo-method", choices=["bo-grad", "bo-fp", "bo-cd"], default="bo-grad")

    gaussian = sub.add_parser("gaussian", parents=[common], help="Gaussian variant")
    gaussian.add_argument("action", choices=["solve", "probe"])
    gaussian.add_argument("--model", type=Path, default=None)
    gaussian.add_argument("--trace", type=Path, default=None)
    gaussian.add_argument("--grid", type=int, nargs=2, default=[4, 4], metavar=("ROWS", "COLS"))
    gaussian.add_argument("--scales", type=float, nargs="+", default=[0.1, 0.3, 0.5, 1.0])
    gaussian.add_argument("--seeds", type=int, default=10)
    gaussian.add_argument("--out", type=Path, default=None, help="Probe CSV")
    gaussian.set_defaults(handler=cmd_gaussian)

    presets = sub.add_parser("presets", parents=[common], help="List sweep presets")
    presets.set_defaults(handler=cmd_presets)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL


if __name__ == "__main__":
    sys.exit(main())
