"""Tests for Gaussian Belief Optimization and the boundedness probe."""

import csv

import numpy as np
import pytest

from beliefopt.config import SolveConfig
from beliefopt.gaussian import (
    PROBE_HEADER,
    GaussianBeliefs,
    GaussianModel,
    NonPositiveDefiniteError,
    ga_boundedness_probe,
    ga_free_energy,
    ga_mean_solve,
    ga_solve,
    ga_vij_solve,
    gabp_solve,
    mean_residual,
    probe_sweep,
    sample_gaussian_instance,
)
from beliefopt.graph_model import lattice_square, random_tree


@pytest.fixture
def single_edge():
    """Two nodes, unit diagonal, coupling 0.5."""
    return GaussianModel(n=2, edges=[[0, 1]], weights=[0.5], diag=[1.0, 1.0], biases=[0.0, 0.0])


@pytest.fixture
def ill_conditioned():
    """Two independent nodes with diagonal (1, 1e-8)."""
    return GaussianModel(n=2, edges=[], weights=[], diag=[1.0, 1e-8], biases=[1.0, 1.0])


@pytest.fixture
def tight():
    """Config for precise variance descent."""
    return SolveConfig(max_iters=20000, tol_q=1e-12, tol_f=0.0, tol_grad=1e-10)


class TestGaussianModel:
    """Tests for the Gaussian model record."""

    def test_matrix(self, single_edge):
        """Test assembly of the full precision matrix."""
        assert single_edge.matrix.tolist() == [[1.0, 0.5], [0.5, 1.0]]

    def test_definiteness_and_dominance(self, single_edge):
        """Test the positive-definite and diagonal-dominance checks."""
        assert single_edge.is_positive_definite()
        assert single_edge.is_diagonally_dominant()
        strong = GaussianModel(n=2, edges=[[0, 1]], weights=[2.0], diag=[1.0, 1.0], biases=[0.0, 0.0])
        assert not strong.is_positive_definite()
        assert not strong.is_diagonally_dominant()

    def test_size_mismatch_raises(self):
        """Test that diag must have one entry per node."""
        with pytest.raises(ValueError):
            GaussianModel(n=2, edges=[[0, 1]], weights=[0.5], diag=[1.0], biases=[0.0, 0.0])


class TestMeans:
    """Tests for the mean solve."""

    def test_residual(self):
        """Test that the means solve W mu = -b."""
        model = sample_gaussian_instance(lattice_square(4, 4), 0.4, seed=1, diagonally_dominant=True)
        mu = ga_mean_solve(model, SolveConfig(tol_q=1e-10))
        assert np.linalg.norm(model.matrix @ mu + model.biases) < 1e-8

    def test_refuses_indefinite_matrix(self):
        """Test that a non-positive-definite W is reported as an error."""
        model = GaussianModel(n=2, edges=[[0, 1]], weights=[2.0], diag=[1.0, 1.0], biases=[1.0, 1.0])
        with pytest.raises(NonPositiveDefiniteError):
            ga_mean_solve(model, SolveConfig())

    def test_budget_is_capped_for_ill_conditioned_matrix(self, ill_conditioned):
        """Test that a condition number of 1e8 stops at the capped budget with the residual still large."""
        mu = ga_mean_solve(ill_conditioned, SolveConfig(max_iters=50))
        assert mean_residual(ill_conditioned, mu) > 1e-3

    def test_unfinished_means_are_not_converged(self, ill_conditioned):
        """Test that converged variances do not hide an unfinished mean solve."""
        beliefs, report = ga_solve(ill_conditioned, SolveConfig(max_iters=50))
        assert beliefs.v == pytest.approx([1.0, 1e8])
        assert report.status == "max-iters"
        assert not report.converged
        assert "mean residual" in report.message


class TestVariances:
    """Tests for the variance descent."""

    def test_covariance_closed_form(self):
        """Test V_ij on the single-edge example and at zero coupling."""
        assert ga_vij_solve(4 / 3, 4 / 3, 0.5) == pytest.approx(-2 / 3)
        assert ga_vij_solve(2.0, 3.0, 0.0) == 0.0

    def test_covariance_needs_positive_variances(self):
        """Test that non-positive variances are rejected."""
        with pytest.raises(ValueError):
            ga_vij_solve(-1.0, 1.0, 0.5)

    def test_single_edge(self, single_edge, tight):
        """Test V_i = 4/3 and V_12 = -2/3 for the single-edge model."""
        beliefs, report = ga_solve(single_edge, tight)
        assert report.method == "gabo"
        assert beliefs.v == pytest.approx([4 / 3, 4 / 3], abs=1e-6)
        assert beliefs.v_edge == pytest.approx([-2 / 3], abs=1e-6)
        assert beliefs.mu == pytest.approx([0.0, 0.0])

    def test_edgeless_converges_immediately(self):
        """Test that independent nodes start at their exact variances."""
        model = GaussianModel(n=2, edges=[], weights=[], diag=[2.0, 3.0], biases=[1.0, -3.0])
        beliefs, report = ga_solve(model, SolveConfig())
        assert report.status == "converged"
        assert report.iterations == 1
        assert beliefs.v == pytest.approx([0.5, 1 / 3])
        assert beliefs.mu == pytest.approx([-0.5, 1.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_trees_match_matrix_inverse(self, seed, tight):
        """Test that on trees means, variances and covariances are exact."""
        topology = random_tree(8, seed)
        model = sample_gaussian_instance(topology, 0.5, seed=seed, diagonally_dominant=True)
        beliefs, _ = ga_solve(model, tight)
        covariance = np.linalg.inv(model.matrix)
        i, j = model.edges[:, 0], model.edges[:, 1]
        assert beliefs.mu == pytest.approx(np.linalg.solve(model.matrix, -model.biases), abs=1e-6)
        assert beliefs.v == pytest.approx(np.diag(covariance), abs=1e-6)
        assert beliefs.v_edge == pytest.approx(covariance[i, j], abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_diagonally_dominant_converges(self, seed):
        """Test that diagonally dominant loopy instances always converge."""
        model = sample_gaussian_instance(lattice_square(4, 4), 1.0, seed=seed, diagonally_dominant=True)
        _, report = ga_solve(model, SolveConfig(max_iters=5000))
        assert report.status == "converged"
        assert report.converged

    def test_indefinite_instance_diverges(self):
        """Test that an indefinite W yields the diverged status instead of looping."""
        model = GaussianModel(n=2, edges=[[0, 1]], weights=[2.0], diag=[1.0, 1.0], biases=[1.0, 1.0])
        beliefs, report = ga_solve(model, SolveConfig())
        assert report.status == "diverged"
        assert not report.converged
        assert np.all(np.isnan(beliefs.mu))

    def test_free_energy_rejects_invalid_blocks(self, single_edge):
        """Test that an edge covariance outside the positive-definite range is rejected."""
        beliefs = GaussianBeliefs(mu=[0.0, 0.0], v=[1.0, 1.0], v_edge=[1.5])
        with pytest.raises(ValueError):
            ga_free_energy(single_edge, beliefs)


class TestGaussianBp:
    """Tests for the Gaussian BP reference."""

    def test_matches_gabo_on_tree(self, tight):
        """Test that GaBP and GaBO agree on a tree."""
        model = sample_gaussian_instance(random_tree(6, 1), 0.5, seed=1, diagonally_dominant=True)
        gabo, _ = ga_solve(model, tight)
        gabp, report = gabp_solve(model, SolveConfig(max_iters=5000, tol_q=1e-13))
        assert report.status == "converged"
        assert gabp.v == pytest.approx(gabo.v, abs=1e-6)
        assert gabp.mu == pytest.approx(gabo.mu, abs=1e-6)

    def test_diverges_on_indefinite_instance(self):
        """Test that GaBP reports divergence on an indefinite W."""
        model = GaussianModel(n=2, edges=[[0, 1]], weights=[2.0], diag=[1.0, 1.0], biases=[1.0, 1.0])
        _, report = gabp_solve(model, SolveConfig())
        assert report.status == "diverged"


class TestProbe:
    """Tests for the boundedness probe."""

    def test_weak_couplings(self):
        """Test that a weakly coupled diagonally dominant instance converges under both solvers."""
        model = sample_gaussian_instance(lattice_square(3, 3), 0.3, seed=0, diagonally_dominant=True)
        row = ga_boundedness_probe(model, SolveConfig(max_iters=5000), seed=0)
        assert row.pd
        assert row.gabo_status == "converged"
        assert row.gabp_status == "converged"
        assert row.n == 9
        assert row.seed == 0

    def test_sweep_writes_csv(self, tmp_path):
        """Test that the probe sweep writes one row per scale and seed."""
        path = tmp_path / "probe.csv"
        rows = probe_sweep(lattice_square(3, 3), [0.1, 2.0], range(3), SolveConfig(max_iters=500), path)
        assert len(rows) == 6
        with open(path, newline="") as f:
            lines = list(csv.reader(f))
        assert tuple(lines[0]) == PROBE_HEADER
        assert len(lines) == 7
        assert {line[2] for line in lines[1:]} <= {"converged", "max-iters", "diverged"}

    def test_strong_couplings_are_not_positive_definite(self):
        """Test that large random couplings on a unit diagonal break positive definiteness."""
        rows = probe_sweep(lattice_square(4, 4), [3.0], range(3), SolveConfig(max_iters=200))
        for _, row in rows:
            assert not row.pd
            assert row.gabo_status == "diverged"
