"""Shared fixtures for the beliefopt test suite."""

import numpy as np
import pytest

from beliefopt.config import SolveConfig
from beliefopt.graph_model import Model, lattice_square


@pytest.fixture
def two_node():
    """Single edge with W=1 and zero biases."""
    return Model.from_edge_list(2, [(0, 1, 1.0)], [0.0, 0.0])


@pytest.fixture
def two_node_exact():
    """Closed-form marginals of the ``two_node`` model."""
    e = np.e
    return {"q": (1 + e) / (3 + e), "xi": e / (3 + e), "log_z": float(np.log(3 + e))}


@pytest.fixture
def grid_2x3():
    """Six-node lattice with one loop."""
    return lattice_square(2, 3)


@pytest.fixture
def precise():
    """Solver config tight enough for exactness checks."""
    return SolveConfig(max_iters=20000, tol_q=1e-12, tol_f=0.0, tol_grad=1e-10)
