"""Records exchanged between solvers, oracles and the experiment harness."""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


@dataclass
class Beliefs:
    """Node marginals ``q_i = p(s_i = 1)`` and edge marginals ``xi_ij = p(s_i = 1, s_j = 1)``.

    ``xi`` is aligned with ``Model.edges``.
    """

    q: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)

    def covariances(self, edges: np.ndarray) -> np.ndarray:
        """Connected correlations ``xi_ij - q_i q_j`` per edge."""
        if len(edges) == 0:
            return np.zeros(0)
        return self.xi - self.q[edges[:, 0]] * self.q[edges[:, 1]]

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "xi": self.xi.tolist()}


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    free_energy: float
    grad_norm: float
    max_dq: float


TRACE_HEADER = ("iteration", "free_energy", "grad_norm", "max_dq")


STATUSES = ("converged", "max-iters", "diverged", "failed")


@dataclass
class SolveReport:
    """Convergence diagnostics of one solve.

    ``status`` defaults from ``converged``; the Gaussian solvers also use
    ``"diverged"`` and the harness uses ``"failed"`` for a method that raised.
    """

    method: str
    converged: bool
    iterations: int
    final_free_energy: float
    final_grad_norm: float
    wall_time: float = 0.0
    message: str = ""
    trace: List[TraceRow] = field(default_factory=list, repr=False)
    status: str = ""

    def __post_init__(self):
        if not self.status:
            self.status = "converged" if self.converged else "max-iters"
        if self.status not in STATUSES:
            raise ValueError(f"Unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_free_energy": self.final_free_energy,
            "final_grad_norm": self.final_grad_norm,
            "wall_time": self.wall_time,
            "message": self.message,
        }


@dataclass
class ExactResult:
    """Oracle output. ``log_z`` is None when the oracle cannot provide it (Gibbs)."""

    q: np.ndarray
    xi: np.ndarray
    log_z: Optional[float]

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)

    def as_beliefs(self) -> Beliefs:
        return Beliefs(q=self.q.copy(), xi=self.xi.copy())

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "xi": self.xi.tolist(), "log_z": self.log_z}
