"""Comparison methods: naive mean field, TAP, and damped loopy belief propagation.

MF, TAP and BP use the same linear damping ramp as the BO fixed-point solver.
MF reports ``xi_ij = q_i q_j``; TAP reports the first-order corrected correlation,
which may leave the feasible pair-table region for large weights.
"""

import logging
import time
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit, logit, logsumexp, xlogy

from beliefopt.bethe import (
    ArrayLike,
    _scalar_or_array,
    bethe_free_energy_of_q,
    clamp_q,
    grad_q,
)
from beliefopt.bo_solver import MIN_STEP_RATIO, _damped_iteration, initial_q
from beliefopt.config import SolveConfig
from beliefopt.graph_model import Model
from beliefopt.models import Beliefs, SolveReport, TraceRow

logger = logging.getLogger(__name__)


def _neighbour_sum(model: Model, edge_values: np.ndarray, q_weights: np.ndarray) -> np.ndarray:
    """``sum_{j in N(i)} edge_values_ij * q_weights_j`` for every node."""
    if model.num_edges == 0:
        return np.zeros(model.n)
    i, j = model.edges[:, 0], model.edges[:, 1]
    return np.bincount(i, weights=edge_values * q_weights[j], minlength=model.n) + np.bincount(
        j, weights=edge_values * q_weights[i], minlength=model.n
    )


def _entropy_term(q: np.ndarray) -> float:
    return float(np.sum(xlogy(q, q) + xlogy(1.0 - q, 1.0 - q)))


def independent_xi(model: Model, q: np.ndarray) -> np.ndarray:
    return q[model.edges[:, 0]] * q[model.edges[:, 1]] if model.num_edges else np.zeros(0)


def mf_free_energy(model: Model, q: np.ndarray) -> float:
    """Naive mean-field free energy ``-sum W q_i q_j - sum b q + sum [q ln q + (1-q) ln(1-q)]``."""
    return -float(np.dot(model.weights, independent_xi(model, q))) - float(np.dot(model.biases, q)) + _entropy_term(q)


def mf_field(model: Model, q: np.ndarray) -> np.ndarray:
    return _neighbour_sum(model, model.weights, q) + model.biases


def mf_gradient(model: Model, q: np.ndarray) -> np.ndarray:
    return logit(q) - mf_field(model, q)


def mf_solve(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """Damped iteration of ``q_i = sigmoid(sum_j W_ij q_j + b_i)``; ``xi`` is ``q_i q_j``."""
    q, report = _damped_iteration(
        model,
        cfg,
        method="mf",
        field=lambda q: mf_field(model, q),
        objective=lambda q: mf_free_energy(model, q),
        gradient=lambda q: mf_gradient(model, q),
        q0=initial_q(model, cfg),
    )
    return Beliefs(q=q, xi=independent_xi(model, q)), report


def xi_tap(q_i: ArrayLike, q_j: ArrayLike, w: ArrayLike) -> ArrayLike:
    """Small-weight correlation ``q_i q_j + W_ij q_i(1-q_i) q_j(1-q_j)``."""
    value = np.multiply(q_i, q_j) + np.asarray(w) * np.multiply(
        np.multiply(q_i, np.subtract(1.0, q_i)), np.multiply(q_j, np.subtract(1.0, q_j))
    )
    return _scalar_or_array(value, q_i, q_j, w)


def tap_free_energy(model: Model, q: np.ndarray) -> float:
    """Mean-field free energy minus the Onsager term ``1/2 sum W_ij^2 q_i(1-q_i) q_j(1-q_j)``."""
    q = np.asarray(q, dtype=float)
    value = mf_free_energy(model, q)
    if model.num_edges:
        v = q * (1.0 - q)
        value -= 0.5 * float(np.dot(model.weights**2, v[model.edges[:, 0]] * v[model.edges[:, 1]]))
    return value


def tap_field(model: Model, q: np.ndarray) -> np.ndarray:
    onsager = _neighbour_sum(model, model.weights**2, q * (1.0 - q))
    return mf_field(model, q) + 0.5 * (1.0 - 2.0 * q) * onsager


def tap_gradient(model: Model, q: np.ndarray) -> np.ndarray:
    """Partial derivatives of the TAP free energy in ``q``."""
    return logit(q) - tap_field(model, q)


def _tap_descent(model: Model, cfg: SolveConfig) -> Tuple[np.ndarray, SolveReport]:
    # Accept/reject descent on the TAP free energy in logit coordinates.
    start = time.perf_counter()
    y = logit(clamp_q(initial_q(model, cfg)))
    q = clamp_q(expit(y))
    f = tap_free_energy(model, q)
    g = tap_gradient(model, q) * q * (1.0 - q)
    step, converged, iterations, trace = cfg.step0, False, 0, []
    for iterations in range(1, cfg.max_iters + 1):
        y_new = y - step * g
        q_new = clamp_q(expit(y_new))
        f_new = tap_free_energy(model, q_new)
        if f_new < f:
            dq = float(np.max(np.abs(q_new - q)))
            y, q, f = y_new, q_new, f_new
            g = tap_gradient(model, q) * q * (1.0 - q)
            step *= cfg.step_up
            trace.append(TraceRow(iterations, f, float(np.linalg.norm(g)), dq))
            if dq < cfg.tol_q and np.linalg.norm(g) < cfg.grad_threshold(model.n):
                converged = True
                break
        else:
            step *= cfg.step_down
            if np.linalg.norm(g) < cfg.grad_threshold(model.n):
                converged = True
                break
            if step < cfg.step0 * MIN_STEP_RATIO:
                break
    report = SolveReport(
        method="tap",
        converged=converged,
        iterations=iterations if converged else cfg.max_iters,
        final_free_energy=f,
        final_grad_norm=float(np.linalg.norm(tap_gradient(model, q))),
        wall_time=time.perf_counter() - start,
        trace=trace,
    )
    return q, report


def tap_solve(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """
    TAP marginals by damped fixed-point iteration (or gradient descent when
    ``cfg.tap_use_gradient``); pairwise estimates from ``xi_tap``.
    """
    if cfg.tap_use_gradient and model.n:
        q, report = _tap_descent(model, cfg)
    else:
        q, report = _damped_iteration(
            model,
            cfg,
            method="tap",
            field=lambda q: tap_field(model, q),
            objective=lambda q: tap_free_energy(model, q),
            gradient=lambda q: tap_gradient(model, q),
            q0=initial_q(model, cfg),
        )
    xi = (
        np.asarray(xi_tap(q[model.edges[:, 0]], q[model.edges[:, 1]], model.weights))
        if model.num_edges
        else np.zeros(0)
    )
    return Beliefs(q=q, xi=xi), report


@dataclass
class BpState:
    """Normalized messages; row ``d`` of ``messages`` is the table of directed edge ``d``.

    Directed edge ``d < m`` runs ``edges[d, 0] -> edges[d, 1]``; ``d >= m`` runs the reverse.
    """

    messages: np.ndarray
    iteration: int = 0
    damping: float = 0.0

    @classmethod
    def uniform(cls, num_edges: int) -> "BpState":
        return cls(messages=np.full((2 * num_edges, 2), 0.5))


def _directed(model: Model):
    src = np.concatenate([model.edges[:, 0], model.edges[:, 1]])
    dst = np.concatenate([model.edges[:, 1], model.edges[:, 0]])
    weight = np.concatenate([model.weights, model.weights])
    m = model.num_edges
    reverse = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    return src, dst, weight, reverse


def _node_log_beliefs(model: Model, log_messages: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Unnormalized log node beliefs ``b_i s + sum_k log m_{k->i}(s)`` for ``s = 0, 1``."""
    log_b = np.zeros((model.n, 2))
    log_b[:, 1] = model.biases
    if len(dst):
        log_b[:, 0] += np.bincount(dst, weights=log_messages[:, 0], minlength=model.n)
        log_b[:, 1] += np.bincount(dst, weights=log_messages[:, 1], minlength=model.n)
    return log_b


def _message_update(cavity: np.ndarray, weight: np.ndarray, floor: float) -> np.ndarray:
    # new(s_j) ∝ sum_{s_i} exp(cavity(s_i) + w s_i s_j)
    new = np.empty_like(cavity)
    new[:, 0] = logsumexp(cavity, axis=1)
    new[:, 1] = np.logaddexp(cavity[:, 0], cavity[:, 1] + weight)
    new -= logsumexp(new, axis=1, keepdims=True)
    return np.maximum(np.exp(new), floor)


def _bp_sweep(model: Model, state: BpState, cfg: SolveConfig, directed) -> np.ndarray:
    src, dst, weight, reverse = directed
    if cfg.bp_schedule == "sequential":
        messages = state.messages.copy()
        log_messages = np.log(messages)
        log_b = _node_log_beliefs(model, log_messages, dst)
        for d in range(len(src)):
            cavity = log_b[src[d]] - log_messages[reverse[d]]
            new = _message_update(cavity[None, :], weight[d : d + 1], cfg.message_floor)[0]
            messages[d] = (1.0 - state.damping) * (new / new.sum()) + state.damping * messages[d]
            # only the receiving node sees message d
            log_new = np.log(messages[d])
            log_b[dst[d]] += log_new - log_messages[d]
            log_messages[d] = log_new
        return messages
    log_messages = np.log(state.messages)
    log_b = _node_log_beliefs(model, log_messages, dst)
    cavity = log_b[src] - log_messages[reverse]
    new = _message_update(cavity, weight, cfg.message_floor)
    new /= new.sum(axis=1, keepdims=True)
    return (1.0 - state.damping) * new + state.damping * state.messages


def bp_beliefs(model: Model, state: BpState) -> Beliefs:
    """Node and edge beliefs from the current messages, in the ``(q, xi)`` parameterization."""
    src, dst, weight, reverse = _directed(model)
    log_messages = np.log(state.messages)
    log_b = _node_log_beliefs(model, log_messages, dst)
    q = expit(log_b[:, 1] - log_b[:, 0])
    m = model.num_edges
    if m == 0:
        return Beliefs(q=q, xi=np.zeros(0))
    i, j = model.edges[:, 0], model.edges[:, 1]
    # cavity of i excluding j's message, and vice versa
    cav_i = log_b[i] - log_messages[m:]
    cav_j = log_b[j] - log_messages[:m]
    table = cav_i[:, :, None] + cav_j[:, None, :]
    table[:, 1, 1] += model.weights
    table -= logsumexp(table.reshape(m, 4), axis=1)[:, None, None]
    return Beliefs(q=q, xi=np.exp(table[:, 1, 1]))


def bp_solve(model: Model, cfg: SolveConfig) -> Tuple[Beliefs, SolveReport]:
    """
    Damped sum-product on potentials ``psi_ij = exp(W_ij s_i s_j)``, ``phi_i = exp(b_i s_i)``.

    Messages start uniform and are mixed as ``(1 - d) new + d old`` in normalized-table
    space. Converged means the largest message change drops below ``tol_q``; otherwise
    the run stops at ``max_iters`` and says so. The reported free energy is ``F_b`` at
    the BP node marginals with ``xi`` re-solved analytically.
    """
    start = time.perf_counter()
    state = BpState.uniform(model.num_edges)
    directed = _directed(model)
    converged = model.num_edges == 0
    trace = []
    iterations = 0
    if not converged:
        for iterations in range(1, cfg.max_iters + 1):
            state.damping = cfg.damping(iterations - 1)
            new = _bp_sweep(model, state, cfg, directed)
            change = float(np.max(np.abs(new - state.messages)))
            state.messages = new
            state.iteration = iterations
            q = clamp_q(bp_beliefs(model, state).q)
            trace.append(
                TraceRow(iterations, bethe_free_energy_of_q(model, q), float(np.linalg.norm(grad_q(model, q))), change)
            )
            if change < cfg.tol_q:
                converged = True
                break

    beliefs = bp_beliefs(model, state)
    q = clamp_q(beliefs.q)
    report = SolveReport(
        method="bp",
        converged=converged,
        iterations=(iterations if converged else cfg.max_iters) if model.num_edges else 0,
        final_free_energy=bethe_free_energy_of_q(model, q) if model.n else 0.0,
        final_grad_norm=float(np.linalg.norm(grad_q(model, q))) if model.n else 0.0,
        wall_time=time.perf_counter() - start,
        trace=trace,
    )
    if not converged:
        logger.info("bp did not converge in %d iterations (last change %.3g)",
                    cfg.max_iters, trace[-1].max_dq if trace else float("nan"))
    return beliefs, report
