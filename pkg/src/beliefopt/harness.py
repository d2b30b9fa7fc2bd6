"""Experiment driver: method comparison on sampled instances over a grid of scales.

A sweep visits every ``(w_scale, b_scale, instance)`` cell, samples one model from a
per-cell random stream, runs the exact oracle once and every requested method, and
streams one CSV row per ``(cell, method)``. Cells are independent jobs; with
``workers > 1`` they run in a process pool and are written in cell order, so the
output does not depend on the worker count. Wall times go to a separate file.
"""

import csv
import json
import logging
import multiprocessing
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from beliefopt.baselines import bp_solve, mf_solve, tap_solve
from beliefopt.bo_solver import solve_coordinate, solve_fixed_point, solve_gradient
from beliefopt.config import GibbsConfig, SolveConfig, with_overrides
from beliefopt.exact import ORACLES, check_oracle_feasible, run_oracle
from beliefopt.graph_model import (
    Model,
    Topology,
    lattice_cubic_periodic,
    lattice_square,
    random_tree,
    sample_instance,
)
from beliefopt.models import Beliefs, ExactResult, SolveReport

logger = logging.getLogger(__name__)

SCHEMA_ID = "beliefopt.cells.v1"
SCATTER_SCHEMA_ID = "beliefopt.scatter.v1"
CELL_HEADER = (
    "cell", "instance", "w_scale", "b_scale", "method", "seed",
    "mean_err", "cov_err", "converged", "status", "free_energy", "iterations",
)
TIMING_HEADER = ("cell", "instance", "method", "wall_time")
SCATTER_HEADER = ("kind", "instance", "index", "bp", "bo", "bp_converged", "bo_converged")

Solver = Callable[[Model, SolveConfig], Tuple[Beliefs, SolveReport]]

METHODS: Dict[str, Solver] = {
    "mf": mf_solve,
    "tap": tap_solve,
    "bp": bp_solve,
    "bo-grad": solve_gradient,
    "bo-fp": solve_fixed_point,
    "bo-cd": solve_coordinate,
}
TOPOLOGIES = ("square", "cubic-periodic", "tree")


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: topology, scale grid, methods, oracle, solver settings and seed."""

    topology: str = "square"
    dims: Tuple[int, ...] = (6, 6)
    w_scales: Tuple[float, ...] = (0.1, 1.0)
    b_scales: Tuple[float, ...] = (0.1, 1.0)
    instances_per_cell: int = 1
    methods: Tuple[str, ...] = ("mf", "tap", "bp", "bo-grad")
    oracle: str = "elimination"
    solve: SolveConfig = field(default_factory=SolveConfig)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    seed: int = 0
    exponent: float = 1.5
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "w_scales", tuple(float(s) for s in self.w_scales))
        object.__setattr__(self, "b_scales", tuple(float(s) for s in self.b_scales))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if not self.w_scales or not self.b_scales:
            raise ValueError("w_scales and b_scales must be non-empty")
        if any(s < 0 for s in self.w_scales + self.b_scales):
            raise ValueError("scales must be non-negative")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"Unknown methods {unknown}; expected a subset of {sorted(METHODS)}")
        if self.oracle not in ORACLES:
            raise ValueError(f"oracle must be one of {ORACLES}, got {self.oracle!r}")
        if self.instances_per_cell < 1 or self.workers < 1:
            raise ValueError("instances_per_cell and workers must be >= 1")

    @property
    def num_cells(self) -> int:
        return len(self.w_scales) * len(self.b_scales) * self.instances_per_cell

    def topology_for(self, seed: int) -> Topology:
        if self.topology == "square":
            rows, cols = self.dims
            return lattice_square(rows, cols)
        if self.topology == "cubic-periodic":
            (side,) = self.dims
            return lattice_cubic_periodic(side)
        (n,) = self.dims
        return random_tree(n, seed)


@dataclass(frozen=True)
class CellResult:
    """One CSV row: a method's errors against the oracle on one sampled instance."""

    cell: int
    instance: int
    w_scale: float
    b_scale: float
    method: str
    seed: int
    mean_err: float
    cov_err: float
    converged: bool
    status: str
    free_energy: float
    iterations: int

    def to_row(self) -> List[Any]:
        return [
            self.cell, self.instance, repr(self.w_scale), repr(self.b_scale), self.method, self.seed,
            repr(self.mean_err), repr(self.cov_err), int(self.converged), self.status,
            repr(self.free_energy), self.iterations,
        ]


_GRID_SCALES = tuple(round(0.1 + 0.5 * k, 10) for k in range(20))

PRESETS: Dict[str, SweepSpec] = {
    "smoke": SweepSpec(),
    "grid-10x10": SweepSpec(
        topology="square",
        dims=(10, 10),
        w_scales=_GRID_SCALES,
        b_scales=_GRID_SCALES,
        oracle="elimination",
    ),
    "cubic-5": SweepSpec(
        topology="cubic-periodic",
        dims=(5,),
        w_scales=(0.1, 1.0, 10.0),
        b_scales=(0.1, 1.0, 10.0),
        oracle="gibbs",
    ),
}


def spec_from_dict(data: Dict[str, Any]) -> SweepSpec:
    """
    Build a spec from a mapping; ``"preset"`` names a starting point and the remaining
    keys override it. ``"solve"`` and ``"gibbs"`` hold config overrides.
    """
    data = dict(data)
    base_name = data.pop("preset", None)
    if base_name is not None and base_name not in PRESETS:
        raise ValueError(f"Unknown preset {base_name!r}; expected one of {sorted(PRESETS)}")
    base = PRESETS[base_name] if base_name else SweepSpec()
    known = {f.name for f in fields(SweepSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown sweep spec keys: {', '.join(unknown)}")
    if "solve" in data:
        data["solve"] = with_overrides(base.solve, data["solve"])
    if "gibbs" in data:
        data["gibbs"] = with_overrides(base.gibbs, data["gibbs"])
    return replace(base, **data)


def load_sweep_spec(path: Path) -> SweepSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Sweep spec not found at {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: sweep spec must be a JSON object")
    return spec_from_dict(data)


def check_spec_feasible(spec: SweepSpec) -> None:
    """Refuse up front when the oracle cannot handle the topology."""
    topology = spec.topology_for(spec.seed)
    probe = Model(n=topology.n, edges=topology.edges, weights=np.ones(topology.num_edges), biases=np.zeros(topology.n))
    check_oracle_feasible(probe, spec.oracle)


def _failed(model: Model, method: str, cfg: SolveConfig, exc: Exception) -> Tuple[Beliefs, SolveReport]:
    beliefs = Beliefs(q=np.full(model.n, np.nan), xi=np.full(model.num_edges, np.nan))
    report = SolveReport(
        method=method,
        converged=False,
        iterations=cfg.max_iters,
        final_free_energy=float("nan"),
        final_grad_norm=float("nan"),
        message=f"{type(exc).__name__}: {exc}",
        status="failed",
    )
    return beliefs, report


def run_methods(model: Model, methods: Sequence[str], cfg: SolveConfig) -> Dict[str, Tuple[Beliefs, SolveReport]]:
    """
    Run each method with the same config; a method that raises is recorded as failed.

    Returns:
        Mapping from method name to (beliefs, report), in the order requested
    """
    results = {}
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"Unknown method {method!r}; expected one of {sorted(METHODS)}")
        start = time.perf_counter()
        try:
            beliefs, report = METHODS[method](model, cfg)
        except Exception as exc:
            logger.warning("%s failed: %s", method, exc)
            beliefs, report = _failed(model, method, cfg, exc)
        report.wall_time = time.perf_counter() - start
        results[method] = (beliefs, report)
    return results


def error_metrics(estimate: Beliefs, oracle: ExactResult, edges: np.ndarray) -> Tuple[float, float]:
    """
    Mean absolute error of the node marginals and of the edge covariances ``xi - q_i q_j``.

    Raises:
        ValueError: If the estimate and the oracle describe different shapes
    """
    edges = np.asarray(edges).reshape(-1, 2)
    if estimate.q.shape != oracle.q.shape or estimate.xi.shape != oracle.xi.shape:
        raise ValueError(
            f"shape mismatch: estimate q{estimate.q.shape} xi{estimate.xi.shape}, "
            f"oracle q{oracle.q.shape} xi{oracle.xi.shape}"
        )
    if estimate.xi.shape != (len(edges),):
        raise ValueError(f"expected {len(edges)} edge marginals, got {estimate.xi.shape}")
    mean_err = float(np.mean(np.abs(estimate.q - oracle.q))) if len(estimate.q) else 0.0
    if not len(edges):
        return mean_err, 0.0
    cov_err = float(np.mean(np.abs(estimate.covariances(edges) - oracle.as_beliefs().covariances(edges))))
    return mean_err, cov_err


@dataclass(frozen=True)
class _CellJob:
    spec: SweepSpec
    cell: int
    instance: int
    w_scale: float
    b_scale: float


@dataclass
class _CellOutput:
    results: List[CellResult]
    timings: List[Tuple[int, int, str, float]]
    beliefs: List[Dict[str, Any]]


def cell_seed(seed: int, cell: int) -> int:
    """Independent per-cell stream derived from ``(seed, cell)``."""
    return int(np.random.SeedSequence([seed, cell]).generate_state(1)[0])


def _jobs(spec: SweepSpec) -> List[_CellJob]:
    jobs = []
    for w_scale in spec.w_scales:
        for b_scale in spec.b_scales:
            for instance in range(spec.instances_per_cell):
                jobs.append(_CellJob(spec, len(jobs), instance, w_scale, b_scale))
    return jobs


def sample_cell(spec: SweepSpec, cell: int, w_scale: float, b_scale: float) -> Tuple[Model, int]:
    seed = cell_seed(spec.seed, cell)
    topology = spec.topology_for(seed)
    return sample_instance(topology, w_scale, b_scale, seed, exponent=spec.exponent), seed


def _run_cell(job: _CellJob) -> _CellOutput:
    spec = job.spec
    model, seed = sample_cell(spec, job.cell, job.w_scale, job.b_scale)
    start = time.perf_counter()
    oracle = run_oracle(model, spec.oracle, replace(spec.gibbs, seed=seed))
    timings = [(job.cell, job.instance, f"oracle:{spec.oracle}", time.perf_counter() - start)]
    solve_cfg = replace(spec.solve, seed=seed)
    results, beliefs = [], [{"cell": job.cell, "method": "oracle", **oracle.to_dict()}]
    for method, (estimate, report) in run_methods(model, spec.methods, solve_cfg).items():
        if report.status == "failed":
            mean_err = cov_err = float("nan")
        else:
            mean_err, cov_err = error_metrics(estimate, oracle, model.edges)
        results.append(
            CellResult(
                cell=job.cell,
                instance=job.instance,
                w_scale=job.w_scale,
                b_scale=job.b_scale,
                method=method,
                seed=seed,
                mean_err=mean_err,
                cov_err=cov_err,
                converged=report.converged,
                status=report.status,
                free_energy=report.final_free_energy,
                iterations=report.iterations,
            )
        )
        timings.append((job.cell, job.instance, method, report.wall_time))
        beliefs.append({"cell": job.cell, "method": method, **estimate.to_dict()})
    logger.info("cell %d (w=%g, b=%g) done", job.cell, job.w_scale, job.b_scale)
    return _CellOutput(results=results, timings=timings, beliefs=beliefs)


def _outputs(spec: SweepSpec, jobs: List[_CellJob]):
    if spec.workers == 1:
        for job in jobs:
            yield _run_cell(job)
        return
    with multiprocessing.Pool(spec.workers) as pool:
        yield from pool.imap(_run_cell, jobs)


def sweep(
    spec: SweepSpec,
    out_path: Path,
    timing_path: Optional[Path] = None,
    beliefs_path: Optional[Path] = None,
) -> List[CellResult]:
    """
    Run every cell of ``spec`` and stream rows to ``out_path`` as they complete.

    Args:
        spec: Sweep specification
        out_path: Results CSV; starts with a ``# schema=...`` line, then the header
        timing_path: Wall-time CSV; defaults to ``<out>.timing.csv``
        beliefs_path: Optional JSON-lines file with every estimate and oracle result

    Returns:
        All rows, in cell order

    Raises:
        OracleError: If the oracle cannot run on the spec's topology
    """
    check_spec_feasible(spec)
    out_path = Path(out_path)
    timing_path = Path(timing_path) if timing_path else out_path.with_suffix(".timing.csv")
    jobs = _jobs(spec)
    logger.info("sweep: %d cells x %d methods, oracle=%s, workers=%d",
                len(jobs), len(spec.methods), spec.oracle, spec.workers)

    rows: List[CellResult] = []
    beliefs_file = open(beliefs_path, "w", encoding="utf-8") if beliefs_path else None
    try:
        with open(out_path, "w", newline="", encoding="utf-8") as out, \
                open(timing_path, "w", newline="", encoding="utf-8") as timing:
            out.write(f"# schema={SCHEMA_ID}\n")
            writer = csv.writer(out)
            writer.writerow(CELL_HEADER)
            timing_writer = csv.writer(timing)
            timing_writer.writerow(TIMING_HEADER)
            for output in tqdm(_outputs(spec, jobs), total=len(jobs), desc="sweep", disable=None):
                for result in output.results:
                    writer.writerow(result.to_row())
                for cell, instance, method, wall in output.timings:
                    timing_writer.writerow([cell, instance, method, f"{wall:.6f}"])
                if beliefs_file:
                    for record in output.beliefs:
                        beliefs_file.write(json.dumps(record) + "\n")
                    beliefs_file.flush()
                out.flush()
                timing.flush()
                rows.extend(output.results)
    finally:
        if beliefs_file:
            beliefs_file.close()
    return rows


def read_cells(path: Path) -> List[Dict[str, str]]:
    """Read a results CSV written by ``sweep`` (schema line skipped)."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        first = f.readline()
        if first.strip() != f"# schema={SCHEMA_ID}":
            raise ValueError(f"{path}: missing or unknown schema line {first.strip()!r}")
        return list(csv.DictReader(f))


@dataclass
class ScatterRecord:
    """BP and BO results on one instance."""

    instance: int
    model: Model
    bp: Tuple[Beliefs, SolveReport]
    bo: Tuple[Beliefs, SolveReport]


def scatter_dump(records: Sequence[ScatterRecord], path: Path) -> int:
    """
    Write per-node ``(q_bp, q_bo)``, per-edge ``(cov_bp, cov_bo)`` and per-instance
    ``(F_bp, F_bo)`` rows; returns the number of data rows.

    Raises:
        ValueError: If BP and BO beliefs do not match the instance's shape
    """
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema={SCATTER_SCHEMA_ID}\n")
        writer = csv.writer(f)
        writer.writerow(SCATTER_HEADER)
        for record in records:
            model = record.model
            (bp, bp_report), (bo, bo_report) = record.bp, record.bo
            for name, beliefs in (("bp", bp), ("bo", bo)):
                if beliefs.q.shape != (model.n,) or beliefs.xi.shape != (model.num_edges,):
                    raise ValueError(f"instance {record.instance}: {name} beliefs do not match the model")
            flags = [int(bp_report.converged), int(bo_report.converged)]
            for i in range(model.n):
                writer.writerow(["node", record.instance, i, repr(float(bp.q[i])), repr(float(bo.q[i])), *flags])
            cov_bp, cov_bo = bp.covariances(model.edges), bo.covariances(model.edges)
            for e in range(model.num_edges):
                writer.writerow(["edge", record.instance, e, repr(float(cov_bp[e])), repr(float(cov_bo[e])), *flags])
            writer.writerow(
                ["instance", record.instance, model.n,
                 repr(bp_report.final_free_energy), repr(bo_report.final_free_energy), *flags]
            )
            count += model.n + model.num_edges + 1
    return count


def scatter(spec: SweepSpec, out_path: Path, bo_method: str = "bo-grad") -> int:
    """Run BP and BO on every cell of ``spec`` and write the scatter dump."""
    records = []
    for job in tqdm(_jobs(spec), desc="scatter", disable=None):
        model, seed = sample_cell(spec, job.cell, job.w_scale, job.b_scale)
        results = run_methods(model, ["bp", bo_method], replace(spec.solve, seed=seed))
        records.append(ScatterRecord(job.cell, model, results["bp"], results[bo_method]))
    return scatter_dump(records, out_path)


def spec_to_dict(spec: SweepSpec) -> Dict[str, Any]:
    data = asdict(spec)
    for key in ("dims", "w_scales", "b_scales", "methods"):
        data[key] = list(data[key])
    return data
