"""Bethe free energy of a binary pairwise model in the (q, xi) parameterization.

``q_i = p(s_i = 1)`` and ``xi_ij = p(s_i = 1, s_j = 1)``; the remaining pair-table
entries follow from marginalization. For fixed marginals the optimal ``xi_ij`` is the
root of a quadratic that always lies strictly inside the feasible interval
``max(0, q_i + q_j - 1) < xi_ij < min(q_i, q_j)``.

All per-edge functions accept scalars or numpy arrays and broadcast.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import xlogy

from beliefopt.graph_model import Model
from beliefopt.models import Beliefs

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Below this |W_ij| the quadratic degenerates and xi = q_i q_j.
DEGENERATE_W = 1e-8
Q_EPS = 1e-12
_PAIR_TOL = 1e-12
# Smallest pair-table entry fed to a logarithm in the gradients.
P_FLOOR = np.finfo(float).tiny


class BeliefBoundsError(ValueError):
    """Marginals or pairwise marginals outside their feasible region."""


def _scalar_or_array(value: np.ndarray, *inputs) -> ArrayLike:
    if all(np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def clamp_q(q: np.ndarray) -> np.ndarray:
    return np.clip(q, Q_EPS, 1.0 - Q_EPS)


def xi_bounds(q_i: ArrayLike, q_j: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Feasible interval ``(max(0, q_i + q_j - 1), min(q_i, q_j))`` for ``xi_ij``."""
    lo = np.maximum(0.0, np.add(q_i, q_j) - 1.0)
    hi = np.minimum(q_i, q_j)
    return _scalar_or_array(lo, q_i, q_j), _scalar_or_array(hi, q_i, q_j)


def _discriminant(alpha: np.ndarray, one_plus_alpha: np.ndarray, q_i: np.ndarray, q_j: np.ndarray) -> np.ndarray:
    # Both forms equal Q^2 - 4 alpha (1 + alpha) q_i q_j; each is a sum of
    # non-negative terms on its branch of alpha.
    expanded = (
        1.0
        + 2.0 * alpha * q_i * (1.0 - q_j)
        + 2.0 * alpha * q_j * (1.0 - q_i)
        + alpha**2 * (q_i - q_j) ** 2
    )
    Q = 1.0 + alpha * (q_i + q_j)
    direct = Q**2 - 4.0 * alpha * one_plus_alpha * q_i * q_j
    return np.maximum(np.where(alpha >= 0, expanded, direct), 0.0)


def xi_solve(q_i: ArrayLike, q_j: ArrayLike, w: ArrayLike) -> ArrayLike:
    """
    Pairwise marginal minimizing the Bethe free energy at fixed ``q_i, q_j``.

    Uses the ``alpha = e^w - 1`` form for ``|alpha| <= 1`` and the ``beta = 1/alpha``
    form otherwise, each written so that no two nearly equal quantities are
    subtracted. ``|w| < DEGENERATE_W`` returns ``q_i q_j``.

    Args:
        q_i: Marginal of the first endpoint, in (0, 1)
        q_j: Marginal of the second endpoint, in (0, 1)
        w: Edge weight

    Returns:
        ``xi_ij`` strictly inside ``xi_bounds(q_i, q_j)``
    """
    qi, qj, ww = np.broadcast_arrays(
        np.asarray(q_i, dtype=float), np.asarray(q_j, dtype=float), np.asarray(w, dtype=float)
    )
    shape = qi.shape
    qi, qj, ww = (np.atleast_1d(x).ravel() for x in (qi, qj, ww))
    if not (np.all(np.isfinite(qi)) and np.all(np.isfinite(qj)) and np.all(np.isfinite(ww))):
        raise ValueError("xi_solve requires finite marginals and weights")

    xi = qi * qj
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        alpha = np.expm1(ww)
        one_plus_alpha = np.exp(ww)

        near = (np.abs(ww) >= DEGENERATE_W) & (np.abs(alpha) <= 1.0)
        if np.any(near):
            a, opa, pi, pj = alpha[near], one_plus_alpha[near], qi[near], qj[near]
            Q = 1.0 + a * (pi + pj)
            root = np.sqrt(_discriminant(a, opa, pi, pj))
            # Q <= 0 only happens for alpha < 0, where Q - root has no cancellation.
            xi[near] = np.where(Q > 0, 2.0 * opa * pi * pj / (Q + root), (Q - root) / (2.0 * a))

        far = np.abs(alpha) > 1.0
        if np.any(far):
            beta = 1.0 / alpha[far]
            pi, pj = qi[far], qj[far]
            sign = np.sign(ww[far])
            R = beta + pi + pj
            disc = (
                beta**2
                + 2.0 * beta * pi * (1.0 - pj)
                + 2.0 * beta * pj * (1.0 - pi)
                + (pi - pj) ** 2
            )
            root = np.sqrt(np.maximum(disc, 0.0))
            direct = 0.5 * (R - sign * root)
            rationalized = 2.0 * (1.0 + beta) * pi * pj / (R + sign * root)
            xi[far] = np.where(sign * R > 0, rationalized, direct)

    lo, hi = xi_bounds(qi, qj)
    xi = np.clip(xi, np.nextafter(lo, hi), np.nextafter(hi, lo)).reshape(shape)
    return _scalar_or_array(xi, q_i, q_j, w)


def _check_inside(q_i, q_j, xi, strict: bool = True) -> None:
    lo, hi = xi_bounds(q_i, q_j)
    if strict:
        bad = (np.asarray(xi) <= lo) | (np.asarray(xi) >= hi)
    else:
        bad = (np.asarray(xi) < lo - _PAIR_TOL) | (np.asarray(xi) > hi + _PAIR_TOL)
    if np.any(bad):
        raise BeliefBoundsError("xi outside the feasible interval max(0, q_i+q_j-1) < xi < min(q_i, q_j)")


def dF_dxi(q_i: ArrayLike, q_j: ArrayLike, xi: ArrayLike, w: ArrayLike) -> ArrayLike:
    """Derivative of the Bethe free energy with respect to ``xi_ij``; zero at ``xi_solve``."""
    _check_inside(q_i, q_j, xi)
    p11, p10, p01, p00 = pair_table(q_i, q_j, xi)
    value = -np.asarray(w) + np.log(p11) + np.log(p00) - np.log(p10) - np.log(p01)
    return _scalar_or_array(value, q_i, q_j, xi, w)


def xi_second_derivative(q_i: ArrayLike, q_j: ArrayLike, xi: ArrayLike) -> ArrayLike:
    """Curvature in ``xi_ij``: sum of reciprocals of the four pair-table entries (always positive)."""
    _check_inside(q_i, q_j, xi)
    p11, p10, p01, p00 = pair_table(q_i, q_j, xi)
    value = 1.0 / p11 + 1.0 / p00 + 1.0 / p10 + 1.0 / p01
    return _scalar_or_array(value, q_i, q_j, xi)


def positive_root_zeta(q_i: ArrayLike, q_j: ArrayLike, w: ArrayLike) -> ArrayLike:
    """
    The other root of the pairwise quadratic; always outside the feasible interval.

    Computed from the product of roots, ``xi * zeta = e^w q_i q_j / (e^w - 1)``.
    """
    if np.any(np.asarray(w) == 0):
        raise ValueError("positive root is undefined for w = 0 (degenerate quadratic)")
    xi = np.asarray(xi_solve(q_i, q_j, w))
    with np.errstate(over="ignore"):
        zeta = np.exp(w) * np.multiply(q_i, q_j) / (np.expm1(w) * xi)
    return _scalar_or_array(zeta, q_i, q_j, w)


@dataclass(frozen=True)
class EdgeScratch:
    """Per-edge intermediate quantities of the analytic solve."""

    alpha: float
    beta: float
    Q: float
    R: float
    zeta: float


def edge_scratch(q_i: float, q_j: float, w: float) -> EdgeScratch:
    alpha = float(np.expm1(w))
    beta = 1.0 / alpha if alpha != 0 else float("inf")
    zeta = positive_root_zeta(q_i, q_j, w) if w != 0 else float("nan")
    return EdgeScratch(
        alpha=alpha,
        beta=beta,
        Q=1.0 + alpha * q_i + alpha * q_j,
        R=beta + q_i + q_j,
        zeta=float(zeta),
    )


def pair_table(q_i: ArrayLike, q_j: ArrayLike, xi: ArrayLike):
    """
    Full 2x2 pair table ``(p11, p10, p01, p00)`` from ``(q_i, q_j, xi)``.

    Entries may touch zero only at the boundary; negative entries raise.
    """
    p11 = np.asarray(xi, dtype=float)
    p10 = np.subtract(q_i, xi)
    p01 = np.subtract(q_j, xi)
    p00 = p11 + 1.0 - np.add(q_i, q_j)
    table = (p11, p10, p01, p00)
    if any(np.any(p < -_PAIR_TOL) for p in table):
        raise BeliefBoundsError("pair table has negative entries; xi violates its bounds")
    return tuple(_scalar_or_array(np.maximum(p, 0.0), q_i, q_j, xi) for p in table)


def xi_for(model: Model, q: np.ndarray) -> np.ndarray:
    """Optimal ``xi`` for every edge of ``model`` at marginals ``q``."""
    if model.num_edges == 0:
        return np.zeros(0)
    return np.asarray(xi_solve(q[model.edges[:, 0]], q[model.edges[:, 1]], model.weights))


def beliefs_from_q(model: Model, q: np.ndarray) -> Beliefs:
    q = np.asarray(q, dtype=float)
    return Beliefs(q=q, xi=xi_for(model, q))


def _check_shapes(model: Model, q: np.ndarray, xi: np.ndarray = None) -> None:
    if q.shape != (model.n,):
        raise ValueError(f"Expected {model.n} marginals, got shape {q.shape}")
    if xi is not None and xi.shape != (model.num_edges,):
        raise ValueError(f"Expected {model.num_edges} pairwise marginals, got shape {xi.shape}")


def bethe_free_energy(model: Model, beliefs: Beliefs) -> float:
    """
    ``F_b = E - S_1 - S_2`` with ``x ln x := 0`` at ``x = 0``.

    Raises:
        BeliefBoundsError: If any ``q_i`` leaves [0, 1] or a pair table goes negative
    """
    q, xi = beliefs.q, beliefs.xi
    _check_shapes(model, q, xi)
    if np.any((q < 0) | (q > 1)):
        raise BeliefBoundsError("marginals must lie in [0, 1]")

    energy = -float(np.dot(model.biases, q))
    node_entropy = (1 - model.degree) * (xlogy(q, q) + xlogy(1.0 - q, 1.0 - q))
    value = energy + float(node_entropy.sum())
    if model.num_edges:
        i, j = model.edges[:, 0], model.edges[:, 1]
        value -= float(np.dot(model.weights, xi))
        for p in pair_table(q[i], q[j], xi):
            value += float(xlogy(p, p).sum())
    return value


def bethe_free_energy_of_q(model: Model, q: np.ndarray) -> float:
    """Bethe free energy with every ``xi`` at its analytic minimum."""
    return bethe_free_energy(model, beliefs_from_q(model, q))


def dF_dq(model: Model, q: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Partial derivative of ``F_b`` in each ``q_i`` with ``xi`` held at the given values."""
    g = -model.biases + (model.degree - 1) * (np.log1p(-q) - np.log(q))
    if model.num_edges:
        i, j = model.edges[:, 0], model.edges[:, 1]
        log_p00 = np.log(np.maximum(xi + 1.0 - q[i] - q[j], P_FLOOR))
        g = g + np.bincount(i, weights=np.log(q[i] - xi) - log_p00, minlength=model.n)
        g = g + np.bincount(j, weights=np.log(q[j] - xi) - log_p00, minlength=model.n)
    return g


def grad_q(model: Model, q: np.ndarray) -> np.ndarray:
    """
    Gradient of ``F_b`` in the unconstrained coordinates ``y_i`` with ``q_i = sigmoid(y_i)``.

    Each ``xi_ij`` is re-solved at ``q`` first, so its partial derivative vanishes.
    """
    q = np.asarray(q, dtype=float)
    _check_shapes(model, q)
    if np.any((q <= 0) | (q >= 1)):
        raise BeliefBoundsError("grad_q requires marginals strictly inside (0, 1)")
    return dF_dq(model, q, xi_for(model, q)) * q * (1.0 - q)
