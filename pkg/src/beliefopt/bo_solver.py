"""Belief Optimization: direct minimization of the Bethe free energy over the marginals.

Three drivers share one state layout (marginals ``q`` with ``xi`` re-solved analytically):

- ``solve_gradient``: accept/reject adaptive gradient descent in ``y = logit(q)``;
  every accepted step strictly lowers ``F_b``.
- ``solve_fixed_point``: damped synchronous iteration of ``q <- sigmoid(field)``.
- ``solve_coordinate``: sequential convex 1-D updates of single ``q_i`` with ``xi``
  held fixed, each followed by a refresh of the incident ``xi``.
"""

import csv
import logging
import time
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from beliefopt.bethe import (
    P_FLOOR,
    Q_EPS,
    BeliefBoundsError,
    bethe_free_energy_of_q,
    beliefs_from_q,
    clamp_q,
    dF_dq,
    grad_q,
    xi_for,
    xi_solve,
)
from beliefopt.config import SolveConfig
from beliefopt.graph_model import Model
from beliefopt.models import TRACE_HEADER, Beliefs, SolveReport, TraceRow

logger = logging.getLogger(__name__)


# Rejected steps shrinking eta below step0 * MIN_STEP_RATIO end a descent.
MIN_STEP_RATIO = 1e-12


class NonFiniteFreeEnergyError(FloatingPointError):
    """The free energy evaluated to NaN or infinity."""


def initial_q(model: Model, cfg: SolveConfig, seed_offset: int = 0) -> np.ndarray:
    """Starting marginals for the configured init scheme."""
    if cfg.init == "uniform-half":
        return np.full(model.n, 0.5)
    if cfg.init == "bias-sigmoid":
        return clamp_q(expit(model.biases))
    rng = np.random.default_rng([cfg.seed, seed_offset])
    return 0.5 + rng.uniform(-0.01, 0.01, size=model.n)


def _checked_free_energy(model: Model, q: np.ndarray) -> float:
    value = bethe_free_energy_of_q(model, q)
    if not np.isfinite(value):
        raise NonFiniteFreeEnergyError(f"Bethe free energy is {value}")
    return value


def _grad_norm(model: Model, q: np.ndarray) -> float:
    return float(np.linalg.norm(grad_q(model, q))) if model.n else 0.0


def write_trace_csv(report: SolveReport, path: Path) -> None:
    """Dump per-iteration ``(iteration, F, grad-norm, max|dq|)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for row in report.trace:
            writer.writerow([row.iteration, repr(row.free_energy), repr(row.grad_norm), repr(row.max_dq)])


def _gradient_run(model: Model, cfg: SolveConfig, q0: np.ndarray) -> Tuple[np.ndarray, SolveReport]:
    y = logit(clamp_q(q0))
    q = clamp_q(expit(y))
    f = _checked_free_energy(model, q)
    g = grad_q(model, q)
    step = cfg.step0
    trace = [TraceRow(0, f, float(np.linalg.norm(g)), 0.0)]
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        y_new = y - step * g
        q_new = clamp_q(expit(y_new))
        f_new = bethe_free_energy_of_q(model, q_new)
        if np.isfinite(f_new) and f_new < f:
            dq = float(np.max(np.abs(q_new - q)))
            df = f - f_new
            y, q, f = y_new, q_new, f_new
            g = grad_q(model, q)
            step *= cfg.step_up
            grad_norm = float(np.linalg.norm(g))
            trace.append(TraceRow(iterations, f, grad_norm, dq))
            if (dq < cfg.tol_q or df < cfg.tol_f) and grad_norm < cfg.grad_threshold(model.n):
                converged = True
                break
        else:
            step *= cfg.step_down
            grad_norm = float(np.linalg.norm(g))
            trace.append(TraceRow(iterations, f, grad_norm, 0.0))
            if grad_norm < cfg.grad_threshold(model.n):
                converged = True
                break
            if step < cfg.step0 * MIN_STEP_RATIO:
                logger.debug("bo-grad stalled at |grad|=%.3g", grad_norm)
                break

    report = SolveReport(
        method="bo-grad",
        converged=converged,
        iterations=iterations if converged else cfg.max_iters,
        final_free_energy=f,
        final_grad_norm=float(np.linalg.norm(g)),
        trace=trace,
    )
    return q, report


def solve_gradient(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """
    Minimize ``F_b`` by adaptive gradient descent in ``y = logit(q)``.

    A candidate step ``y - eta * grad`` is accepted only if it lowers ``F_b``
    (then ``eta *= step_up``); otherwise it is discarded and ``eta *= step_down``.
    With ``cfg.restarts > 1`` independent seeded starts run and the lowest ``F_b`` wins.

    Args:
        model: Model to solve
        cfg: Solver configuration

    Returns:
        Tuple of (beliefs with ``xi`` re-solved at the final ``q``, report)
    """
    start = time.perf_counter()
    if model.n == 0:
        return Beliefs(q=np.zeros(0), xi=np.zeros(0)), SolveReport("bo-grad", True, 0, 0.0, 0.0)

    best_q, best = None, None
    for restart in range(cfg.restarts):
        q, report = _gradient_run(model, cfg, initial_q(model, cfg, seed_offset=restart))
        if best is None or report.final_free_energy < best.final_free_energy:
            best_q, best = q, report
    best.wall_time = time.perf_counter() - start
    if not best.converged:
        logger.info("bo-grad stopped after %d iterations without converging (|grad|=%.3g)",
                    best.iterations, best.final_grad_norm)
    return beliefs_from_q(model, best_q), best


def fixed_point_field(model: Model, q: np.ndarray) -> np.ndarray:
    """Argument of the sigmoid in the BO fixed-point update, with ``xi`` re-solved at ``q``."""
    return logit(q) - dF_dq(model, q, xi_for(model, q))


def _damped_iteration(
    model: Model,
    cfg: SolveConfig,
    method: str,
    field: Callable[[np.ndarray], np.ndarray],
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    q0: np.ndarray,
) -> Tuple[np.ndarray, SolveReport]:
    """Shared damped synchronous loop ``q <- (1 - d) sigmoid(field(q)) + d q``."""
    start = time.perf_counter()
    q = clamp_q(q0)
    trace: List[TraceRow] = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        target = clamp_q(expit(field(q)))
        residual = float(np.max(np.abs(target - q))) if model.n else 0.0
        if residual < cfg.tol_q:
            converged = True
            break
        delta = cfg.damping(iterations - 1)
        q_next = (1.0 - delta) * target + delta * q
        trace.append(
            TraceRow(
                iterations,
                float(objective(q_next)),
                float(np.linalg.norm(gradient(q_next))),
                float(np.max(np.abs(q_next - q))),
            )
        )
        q = q_next

    f = objective(q)
    grad_norm = float(np.linalg.norm(gradient(q))) if model.n else 0.0
    report = SolveReport(
        method=method,
        converged=converged,
        iterations=iterations if converged else cfg.max_iters,
        final_free_energy=f,
        final_grad_norm=grad_norm,
        wall_time=time.perf_counter() - start,
        trace=trace,
    )
    if not converged:
        logger.info("%s did not converge in %d iterations", method, cfg.max_iters)
    return q, report


def solve_fixed_point(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """
    Damped synchronous iteration of the BO fixed-point equations.

    Converged means ``max_i |q_i - q*_i| < tol_q`` for the undamped target ``q*``.
    There is no descent guarantee; non-convergence is reported, not raised.
    """
    q, report = _damped_iteration(
        model,
        cfg,
        method="bo-fp",
        field=lambda q: fixed_point_field(model, q),
        objective=lambda q: bethe_free_energy_of_q(model, q),
        gradient=lambda q: grad_q(model, q),
        q0=initial_q(model, cfg),
    )
    return beliefs_from_q(model, q), report


def _coordinate_derivative(model: Model, beliefs: Beliefs, i: int, q_i: float) -> float:
    value = -model.biases[i] + (model.degree[i] - 1) * (np.log1p(-q_i) - np.log(q_i))
    for j, e in model.adjacency[i]:
        xi = beliefs.xi[e]
        value += np.log(max(q_i - xi, P_FLOOR)) - np.log(max(xi + 1.0 - q_i - beliefs.q[j], P_FLOOR))
    return float(value)


def coordinate_update_q(model: Model, beliefs: Beliefs, i: int) -> float:
    """
    Minimize ``F_b`` over ``q_i`` alone, with every ``xi_ij`` and neighbouring ``q_j`` fixed.

    The derivative is increasing on ``(max_j xi_ij, min_j (xi_ij + 1 - q_j))`` and runs
    from -inf to +inf, so the root is bracketed and found with Brent's method.

    Raises:
        BeliefBoundsError: If the feasible interval is empty (corrupted beliefs)
    """
    lo, hi = Q_EPS, 1.0 - Q_EPS
    for j, e in model.adjacency[i]:
        xi = beliefs.xi[e]
        lo = max(lo, xi)
        hi = min(hi, xi + 1.0 - beliefs.q[j])
    if not lo < hi:
        raise BeliefBoundsError(f"empty feasible interval for q_{i}: ({lo}, {hi})")

    a, b = np.nextafter(lo, hi), np.nextafter(hi, lo)
    f_a = _coordinate_derivative(model, beliefs, i, a)
    f_b = _coordinate_derivative(model, beliefs, i, b)
    if f_a >= 0:
        return float(a)
    if f_b <= 0:
        return float(b)
    return float(brentq(lambda x: _coordinate_derivative(model, beliefs, i, x), a, b, xtol=1e-15, rtol=4e-16))


def solve_coordinate(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """
    Alternating coordinate descent: sweep ``coordinate_update_q`` over the nodes,
    re-solving the incident ``xi`` after each update. Both half-steps lower ``F_b``.
    """
    start = time.perf_counter()
    beliefs = beliefs_from_q(model, clamp_q(initial_q(model, cfg)))
    f = _checked_free_energy(model, beliefs.q)
    trace = [TraceRow(0, f, _grad_norm(model, beliefs.q), 0.0)]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        previous = beliefs.q.copy()
        for i in range(model.n):
            beliefs.q[i] = coordinate_update_q(model, beliefs, i)
            for j, e in model.adjacency[i]:
                a, b = model.edges[e]
                beliefs.xi[e] = xi_solve(beliefs.q[a], beliefs.q[b], model.weights[e])
        f_new = _checked_free_energy(model, beliefs.q)
        dq = float(np.max(np.abs(beliefs.q - previous))) if model.n else 0.0
        grad_norm = _grad_norm(model, beliefs.q)
        trace.append(TraceRow(iterations, f_new, grad_norm, dq))
        df, f = f - f_new, f_new
        if (dq < cfg.tol_q or abs(df) < cfg.tol_f) and grad_norm < cfg.grad_threshold(model.n):
            converged = True
            break

    report = SolveReport(
        method="bo-cd",
        converged=converged,
        iterations=iterations if converged else cfg.max_iters,
        final_free_energy=f,
        final_grad_norm=trace[-1].grad_norm,
        wall_time=time.perf_counter() - start,
        trace=trace,
    )
    return beliefs_from_q(model, beliefs.q), report
