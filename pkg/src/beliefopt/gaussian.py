"""Gaussian Belief Optimization.

Density ``p(x) ∝ exp(-1/2 x^T W x - b^T x)`` with ``W`` assembled from the diagonal
``W_ii`` and the edge couplings. At the minimum of the Bethe free energy the means
solve ``W mu = -b`` exactly; variances are approximate on loopy graphs, and the free
energy need not be bounded from below. The variance descent detects that and
reports ``"diverged"`` instead of looping.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from beliefopt.bethe import ArrayLike, _scalar_or_array
from beliefopt.bo_solver import MIN_STEP_RATIO
from beliefopt.config import SolveConfig
from beliefopt.graph_model import Topology, _canonical_edges, _readonly
from beliefopt.models import SolveReport, TraceRow

logger = logging.getLogger(__name__)

PROBE_HEADER = ("coupling_scale", "pd", "gabo_status", "gabp_status", "n", "seed")
MEAN_BUDGET_FACTOR = 100


class NonPositiveDefiniteError(ValueError):
    """The full precision matrix ``W`` is not positive definite."""


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Couplings ``W_ij`` on edges ``i < j``, diagonal ``W_ii`` and linear terms ``b_i``."""

    n: int
    edges: np.ndarray
    weights: np.ndarray
    diag: np.ndarray
    biases: np.ndarray
    degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = _canonical_edges(self.n, np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        diag = np.asarray(self.diag, dtype=float).reshape(-1)
        biases = np.asarray(self.biases, dtype=float).reshape(-1)
        if len(weights) != len(edges):
            raise ValueError(f"Got {len(weights)} weights for {len(edges)} edges")
        if len(diag) != self.n or len(biases) != self.n:
            raise ValueError(f"diag and biases must have {self.n} entries")
        if not all(np.all(np.isfinite(a)) for a in (weights, diag, biases)):
            raise ValueError("Gaussian model entries must be finite")
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "diag", _readonly(diag))
        object.__setattr__(self, "biases", _readonly(biases))
        object.__setattr__(self, "degree", _readonly(np.bincount(edges.ravel(), minlength=self.n)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def matrix(self) -> np.ndarray:
        """Full symmetric precision matrix ``W``."""
        w = np.diag(self.diag)
        if self.num_edges:
            i, j = self.edges[:, 0], self.edges[:, 1]
            w[i, j] = self.weights
            w[j, i] = self.weights
        return w

    def is_positive_definite(self) -> bool:
        return self.n == 0 or bool(np.linalg.eigvalsh(self.matrix)[0] > 0)

    def is_diagonally_dominant(self) -> bool:
        off = np.bincount(self.edges.ravel(), weights=np.repeat(np.abs(self.weights), 2), minlength=self.n)
        return bool(np.all(np.abs(self.diag) > off))

    def is_tree(self) -> bool:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(map(tuple, self.edges))
        return self.n == 0 or nx.is_forest(graph)


@dataclass
class GaussianBeliefs:
    """Means ``mu``, variances ``v`` and per-edge covariances ``v_edge``."""

    mu: np.ndarray
    v: np.ndarray
    v_edge: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.v_edge = np.asarray(self.v_edge, dtype=float)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "v": self.v.tolist(), "v_edge": self.v_edge.tolist()}


@dataclass(frozen=True)
class ProbeRow:
    pd: bool
    gabo_status: str
    gabp_status: str
    n: int
    seed: Optional[int] = None


def _require_positive_definite(model: GaussianModel) -> Tuple[float, float]:
    if model.n == 0:
        return 1.0, 1.0
    eigenvalues = np.linalg.eigvalsh(model.matrix)
    if eigenvalues[0] <= 0:
        raise NonPositiveDefiniteError(f"W is not positive definite (smallest eigenvalue {eigenvalues[0]:.3g})")
    return float(eigenvalues[0]), float(eigenvalues[-1])


def ga_mean_solve(model: GaussianModel, cfg: SolveConfig) -> np.ndarray:
    """
    Gradient descent on the mean part of the free energy, gradient ``W mu + b``.

    Uses the fixed step ``2 / (lambda_min + lambda_max)`` and stops once the
    residual norm drops below ``cfg.tol_q``. The iteration budget grows with the
    condition number but never exceeds ``MEAN_BUDGET_FACTOR * cfg.max_iters``; check
    ``mean_residual`` to tell whether the solve got there.

    Raises:
        NonPositiveDefiniteError: If ``W`` is not positive definite
    """
    lam_min, lam_max = _require_positive_definite(model)
    w = model.matrix
    step = 2.0 / (lam_min + lam_max)
    mu = np.zeros(model.n)
    # Contraction factor per step is (k - 1) / (k + 1) for condition number k.
    budget = min(max(cfg.max_iters, int(np.ceil(50.0 * lam_max / lam_min))), MEAN_BUDGET_FACTOR * cfg.max_iters)
    for _ in range(budget):
        residual = w @ mu + model.biases
        if np.linalg.norm(residual) < cfg.tol_q:
            break
        mu = mu - step * residual
    else:
        logger.info("mean solve stopped at residual %.3g", mean_residual(model, mu))
    return mu


def mean_residual(model: GaussianModel, mu: np.ndarray) -> float:
    """Norm of ``W mu + b``; zero at the exact means."""
    return float(np.linalg.norm(model.matrix @ mu + model.biases)) if model.n else 0.0


def ga_vij_solve(v_i: ArrayLike, v_j: ArrayLike, w: ArrayLike) -> ArrayLike:
    """
    Covariance ``V_ij`` minimizing the free energy at fixed variances.

    The root ``1/(2w) - sign(w) sqrt(1/(4w^2) + V_i V_j)`` written as
    ``-2 w P / (1 + sqrt(1 + 4 w^2 P))`` with ``P = V_i V_j``, which is finite at ``w = 0``.
    """
    if np.any(np.asarray(v_i) <= 0) or np.any(np.asarray(v_j) <= 0):
        raise ValueError("ga_vij_solve requires positive variances")
    product = np.multiply(v_i, v_j)
    w = np.asarray(w, dtype=float)
    value = -2.0 * w * product / (1.0 + np.sqrt(1.0 + 4.0 * w**2 * product))
    return _scalar_or_array(value, v_i, v_j, w)


def _edge_determinants(model: GaussianModel, beliefs: GaussianBeliefs) -> np.ndarray:
    i, j = model.edges[:, 0], model.edges[:, 1]
    return beliefs.v[i] * beliefs.v[j] - beliefs.v_edge**2


def ga_free_energy(model: GaussianModel, beliefs: GaussianBeliefs) -> float:
    """
    Bethe free energy up to constants, ``E - S_1 - S_2``.

    Raises:
        ValueError: If a variance is non-positive or an edge block is not positive definite
    """
    mu, v = beliefs.mu, beliefs.v
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    energy = 0.5 * float(np.dot(model.diag, v + mu**2)) + float(np.dot(model.biases, mu))
    node_entropy = 0.5 * float(np.dot(1 - model.degree, np.log(v)))
    value = energy - node_entropy
    if model.num_edges:
        i, j = model.edges[:, 0], model.edges[:, 1]
        det = _edge_determinants(model, beliefs)
        if np.any(det <= 0):
            raise ValueError("edge covariance blocks must be positive definite (V_i V_j > V_ij^2)")
        value += float(np.dot(model.weights, beliefs.v_edge + mu[i] * mu[j]))
        value -= 0.5 * float(np.sum(np.log(det)))
    return value


def _edge_covariances(model: GaussianModel, v: np.ndarray) -> np.ndarray:
    if model.num_edges == 0:
        return np.zeros(0)
    return np.asarray(ga_vij_solve(v[model.edges[:, 0]], v[model.edges[:, 1]], model.weights))


def ga_variance_gradient(model: GaussianModel, v: np.ndarray, v_edge: np.ndarray) -> np.ndarray:
    """Gradient in ``y = log V`` with every ``V_ij`` at its minimum."""
    g = 0.5 * model.diag - 0.5 * (1 - model.degree) / v
    if model.num_edges:
        i, j = model.edges[:, 0], model.edges[:, 1]
        det = v[i] * v[j] - v_edge**2
        g = g - 0.5 * np.bincount(i, weights=v[j] / det, minlength=model.n)
        g = g - 0.5 * np.bincount(j, weights=v[i] / det, minlength=model.n)
    return g * v


def _initial_variances(model: GaussianModel) -> np.ndarray:
    return np.where(model.diag > 0, 1.0 / np.where(model.diag > 0, model.diag, 1.0), 1.0)


def ga_solve(model: GaussianModel, cfg: SolveConfig) -> Tuple[GaussianBeliefs, SolveReport]:
    """
    Exact means from ``ga_mean_solve``, then accept/reject gradient descent on the
    variances in ``y = log V`` with ``V_ij`` re-solved at every step.

    The status is ``"diverged"`` when ``W`` is not positive definite (the mean part is
    unbounded), when the free energy drops below ``cfg.divergence_floor``, or when a
    variance exceeds ``cfg.variance_cap``.
    Variances that converge while the mean solve ran out of budget give ``"max-iters"``.
    """
    start = time.perf_counter()
    n = model.n
    v = _initial_variances(model)

    def finish(mu, v, status, iterations, f, g, trace, message=""):
        if status == "converged" and mean_residual(model, mu) >= cfg.tol_q:
            status, message = "max-iters", f"mean residual {mean_residual(model, mu):.3g} is above tol_q"
        report = SolveReport(
            method="gabo",
            converged=status == "converged",
            iterations=iterations if status == "converged" else cfg.max_iters,
            final_free_energy=f,
            final_grad_norm=g,
            wall_time=time.perf_counter() - start,
            message=message,
            trace=trace,
            status=status,
        )
        if status != "converged":
            logger.info("gabo finished with status %s: %s", status, message)
        return GaussianBeliefs(mu=mu, v=v, v_edge=_edge_covariances(model, v)), report

    try:
        mu = ga_mean_solve(model, cfg)
    except NonPositiveDefiniteError as exc:
        return finish(np.full(n, np.nan), v, "diverged", 0, float("-inf"), float("nan"), [], str(exc))

    y = np.log(v)
    v_edge = _edge_covariances(model, v)
    f = ga_free_energy(model, GaussianBeliefs(mu, v, v_edge))
    g = ga_variance_gradient(model, v, v_edge)
    step = cfg.step0
    trace = [TraceRow(0, f, float(np.linalg.norm(g)), 0.0)]
    for iterations in range(1, cfg.max_iters + 1):
        y_new = y - step * g
        v_new = np.exp(y_new)
        if not np.all(np.isfinite(v_new)) or np.max(v_new, initial=0.0) > cfg.variance_cap:
            return finish(mu, v, "diverged", iterations, f, float(np.linalg.norm(g)), trace,
                          f"variance exceeded cap {cfg.variance_cap:g}")
        v_edge_new = _edge_covariances(model, v_new)
        try:
            f_new = ga_free_energy(model, GaussianBeliefs(mu, v_new, v_edge_new))
        except ValueError:
            # edge block lost positive definiteness to rounding
            f_new = float("inf")
        if f_new < cfg.divergence_floor:
            return finish(mu, v_new, "diverged", iterations, f_new, float(np.linalg.norm(g)), trace,
                          f"free energy fell below {cfg.divergence_floor:g}")
        if np.isfinite(f_new) and f_new < f:
            dy = float(np.max(np.abs(y_new - y), initial=0.0))
            df = f - f_new
            y, v, v_edge, f = y_new, v_new, v_edge_new, f_new
            g = ga_variance_gradient(model, v, v_edge)
            step *= cfg.step_up
            grad_norm = float(np.linalg.norm(g))
            trace.append(TraceRow(iterations, f, grad_norm, dy))
            if (dy < cfg.tol_q or df < cfg.tol_f) and grad_norm < cfg.grad_threshold(n):
                return finish(mu, v, "converged", iterations, f, grad_norm, trace)
        else:
            step *= cfg.step_down
            grad_norm = float(np.linalg.norm(g))
            trace.append(TraceRow(iterations, f, grad_norm, 0.0))
            if grad_norm < cfg.grad_threshold(n):
                return finish(mu, v, "converged", iterations, f, grad_norm, trace)
            if step < cfg.step0 * MIN_STEP_RATIO:
                break
    return finish(mu, v, "max-iters", cfg.max_iters, f, float(np.linalg.norm(g)), trace)


def gabp_solve(model: GaussianModel, cfg: SolveConfig) -> Tuple[GaussianBeliefs, SolveReport]:
    """
    Reference Gaussian BP: damped fixed-point iteration of the same stationarity system.

    Variances follow ``V_i <- (1 + sum_j [1 / (1 - rho_ij^2) - 1]) / W_ii`` with
    ``rho_ij^2 = V_ij^2 / (V_i V_j)`` and ``V_ij`` from ``ga_vij_solve``; means follow
    damped Jacobi sweeps on ``W mu = -b``.
    """
    start = time.perf_counter()
    n = model.n
    status, message, iterations = "max-iters", "", cfg.max_iters
    mu = np.zeros(n)
    v = _initial_variances(model)
    trace: List[TraceRow] = []
    if np.any(model.diag <= 0):
        status, message, iterations = "diverged", "non-positive diagonal entry", 0
    else:
        off = model.matrix - np.diag(model.diag)
        i, j = model.edges[:, 0], model.edges[:, 1]
        for it in range(1, cfg.max_iters + 1):
            delta = cfg.damping(it - 1)
            v_edge = _edge_covariances(model, v)
            excess = np.zeros(n)
            if model.num_edges:
                one_minus_rho2 = 1.0 - v_edge**2 / (v[i] * v[j])
                extra = 1.0 / one_minus_rho2 - 1.0
                excess = np.bincount(i, weights=extra, minlength=n) + np.bincount(j, weights=extra, minlength=n)
            v_target = (1.0 + excess) / model.diag
            mu_target = -(model.biases + off @ mu) / model.diag
            v_next = (1.0 - delta) * v_target + delta * v
            mu_next = (1.0 - delta) * mu_target + delta * mu
            change = max(
                float(np.max(np.abs(v_next - v) / v, initial=0.0)),
                float(np.max(np.abs(mu_next - mu), initial=0.0)),
            )
            v, mu = v_next, mu_next
            trace.append(TraceRow(it, float("nan"), float("nan"), change))
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(mu))) or (
                np.max(np.abs(np.concatenate([v, mu])), initial=0.0) > cfg.variance_cap
            ):
                status, message, iterations = "diverged", "iterates exceeded cap", it
                break
            if change < cfg.tol_q:
                status, iterations = "converged", it
                break

    beliefs = GaussianBeliefs(mu=mu, v=v, v_edge=_edge_covariances(model, v) if status != "diverged" else
                              np.full(model.num_edges, np.nan))
    report = SolveReport(
        method="gabp",
        converged=status == "converged",
        iterations=iterations if status == "converged" else cfg.max_iters,
        final_free_energy=float("nan"),
        final_grad_norm=float("nan"),
        wall_time=time.perf_counter() - start,
        message=message,
        trace=trace,
        status=status,
    )
    return beliefs, report


def ga_boundedness_probe(model: GaussianModel, cfg: SolveConfig, seed: Optional[int] = None) -> ProbeRow:
    """Run GaBO and the GaBP reference on one instance and record both outcomes."""
    _, gabo = ga_solve(model, cfg)
    _, gabp = gabp_solve(model, cfg)
    return ProbeRow(
        pd=model.is_positive_definite(),
        gabo_status=gabo.status,
        gabp_status=gabp.status,
        n=model.n,
        seed=seed,
    )


def sample_gaussian_instance(
    topology: Topology,
    coupling_scale: float,
    seed: int,
    diag: float = 1.0,
    b_scale: float = 1.0,
    diagonally_dominant: bool = False,
) -> GaussianModel:
    """
    Random couplings ``normal(0, coupling_scale**2)`` and biases ``normal(0, b_scale**2)``.

    With ``diagonally_dominant`` each ``W_ii`` is ``diag`` plus the absolute row sum.
    """
    rng = np.random.default_rng(seed)
    weights = coupling_scale * rng.standard_normal(topology.num_edges)
    biases = b_scale * rng.standard_normal(topology.n)
    diagonal = np.full(topology.n, float(diag))
    if diagonally_dominant and topology.num_edges:
        diagonal += np.bincount(
            topology.edges.ravel(), weights=np.repeat(np.abs(weights), 2), minlength=topology.n
        )
    return GaussianModel(n=topology.n, edges=topology.edges, weights=weights, diag=diagonal, biases=biases)


def probe_sweep(
    topology: Topology,
    coupling_scales: Sequence[float],
    seeds: Iterable[int],
    cfg: SolveConfig,
    out_path: Optional[Path] = None,
) -> List[Tuple[float, ProbeRow]]:
    """Probe one instance per ``(scale, seed)``; optionally write the phase-diagram CSV."""
    seeds = list(seeds)
    rows = []
    writer = None
    handle = open(out_path, "w", newline="", encoding="utf-8") if out_path else None
    try:
        if handle:
            writer = csv.writer(handle)
            writer.writerow(PROBE_HEADER)
        for scale in coupling_scales:
            for seed in seeds:
                model = sample_gaussian_instance(topology, scale, seed)
                row = ga_boundedness_probe(model, cfg, seed=seed)
                rows.append((scale, row))
                if writer:
                    writer.writerow([scale, int(row.pd), row.gabo_status, row.gabp_status, row.n, seed])
    finally:
        if handle:
            handle.close()
    return rows
