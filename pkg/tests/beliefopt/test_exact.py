"""Tests for the enumeration, elimination and Gibbs oracles."""

import numpy as np
import pytest

from beliefopt.config import GibbsConfig
from beliefopt.exact import (
    MAX_BRUTE_FORCE_NODES,
    OracleError,
    WidthExceededError,
    brute_force,
    check_oracle_feasible,
    eliminate,
    elimination_order,
    exact_marginals_via_elimination,
    gibbs,
    induced_width,
    run_oracle,
)
from beliefopt.graph_model import Model, lattice_cubic_periodic, lattice_square, sample_instance

from tests.beliefopt.factories import random_model


def _on(topology) -> Model:
    return Model(n=topology.n, edges=topology.edges, weights=np.ones(topology.num_edges), biases=np.zeros(topology.n))


class TestBruteForce:
    """Tests for exhaustive enumeration."""

    def test_two_node_golden(self, two_node, two_node_exact):
        """Test closed-form marginals and log partition function of a single edge."""
        result = brute_force(two_node)
        assert result.q == pytest.approx([two_node_exact["q"]] * 2, abs=1e-14)
        assert result.xi == pytest.approx([two_node_exact["xi"]], abs=1e-14)
        assert result.log_z == pytest.approx(two_node_exact["log_z"], abs=1e-14)

    def test_large_weights_do_not_overflow(self):
        """Test that the rescaled running sum survives huge log-weights."""
        model = Model.from_edge_list(3, [(0, 1, 800.0), (1, 2, 800.0)], [0.0, 0.0, 0.0])
        result = brute_force(model)
        assert np.isfinite(result.log_z)
        assert result.log_z == pytest.approx(1600.0)
        assert result.q == pytest.approx([1.0, 1.0, 1.0])

    def test_chunked_enumeration(self):
        """Test a model larger than one enumeration chunk against elimination."""
        model = sample_instance(lattice_square(3, 6), 1.0, 1.0, seed=1)
        assert brute_force(model).log_z == pytest.approx(eliminate(model), abs=1e-9)

    def test_refuses_too_many_nodes(self):
        """Test that enumeration refuses models past the node cap."""
        model = _on(lattice_square(1, MAX_BRUTE_FORCE_NODES + 1))
        with pytest.raises(OracleError):
            brute_force(model)

    def test_empty_model(self):
        """Test that a model without nodes has log Z = 0."""
        assert brute_force(Model(n=0, edges=[], weights=[], biases=[])).log_z == 0.0


class TestElimination:
    """Tests for variable elimination."""

    def test_natural_order_width_on_grid(self):
        """Test that row-major elimination of a 10x10 grid has width 10."""
        model = _on(lattice_square(10, 10))
        assert induced_width(model, range(100)) == 10
        assert induced_width(model, elimination_order(model)) <= 10

    def test_tree_has_width_one(self):
        """Test that min-degree elimination of a path has width 1."""
        model = _on(lattice_square(1, 8))
        assert induced_width(model, elimination_order(model)) == 1

    @pytest.mark.parametrize("seed", range(50))
    def test_agrees_with_brute_force(self, seed):
        """Test log Z and marginals against enumeration on random graphs with up to 16 nodes."""
        rng = np.random.default_rng(seed)
        model = random_model(int(rng.integers(1, 17)), 0.4, seed=seed, w_scale=1.5)
        expected = brute_force(model)
        assert eliminate(model) == pytest.approx(expected.log_z, abs=1e-9)
        result = exact_marginals_via_elimination(model)
        assert result.q == pytest.approx(expected.q, abs=1e-9)
        assert result.xi == pytest.approx(expected.xi, abs=1e-9)
        assert result.log_z == pytest.approx(expected.log_z, abs=1e-9)

    def test_explicit_order(self):
        """Test that any valid order gives the same log Z."""
        model = sample_instance(lattice_square(3, 3), 2.0, 1.0, seed=0)
        reverse = list(reversed(range(9)))
        assert eliminate(model, reverse) == pytest.approx(eliminate(model), abs=1e-10)

    def test_invalid_order_raises(self):
        """Test that an order that is not a permutation is rejected."""
        model = _on(lattice_square(2, 2))
        with pytest.raises(ValueError, match="permutation"):
            eliminate(model, [0, 1, 1, 2])

    def test_width_cap(self):
        """Test that an order wider than the cap is refused."""
        model = _on(lattice_square(6, 6))
        with pytest.raises(WidthExceededError):
            eliminate(model, list(range(36)), max_width=5)

    def test_cubic_lattice_is_infeasible(self):
        """Test that the periodic 5x5x5 cube exceeds the elimination cap."""
        with pytest.raises(WidthExceededError):
            check_oracle_feasible(_on(lattice_cubic_periodic(5)), "elimination")


class TestGibbs:
    """Tests for the annealed Gibbs sampler."""

    def test_two_node_within_tolerance(self, two_node, two_node_exact):
        """Test that sampled marginals of a single edge are within three standard errors."""
        n_samples = 100_000
        result = gibbs(two_node, GibbsConfig(n_samples=n_samples, burn_in=500, anneal_steps=500, seed=3))
        assert result.log_z is None
        q, xi = two_node_exact["q"], two_node_exact["xi"]
        assert result.q == pytest.approx([q] * 2, abs=3 * np.sqrt(q * (1 - q) / n_samples))
        assert result.xi == pytest.approx([xi], abs=3 * np.sqrt(xi * (1 - xi) / n_samples))

    def test_reproducible(self):
        """Test that a fixed seed gives identical samples."""
        model = sample_instance(lattice_square(3, 3), 1.0, 1.0, seed=2)
        cfg = GibbsConfig(n_samples=200, burn_in=50, anneal_steps=50, seed=9)
        assert np.array_equal(gibbs(model, cfg).q, gibbs(model, cfg).q)

    def test_loopy_model_roughly_matches_exact(self):
        """Test the sampler on a small loopy model with moderate couplings."""
        model = sample_instance(lattice_square(3, 3), 0.5, 0.5, seed=4)
        result = gibbs(model, GibbsConfig(n_samples=40_000, burn_in=1000, seed=1))
        assert result.q == pytest.approx(brute_force(model).q, abs=0.02)


class TestRunOracle:
    """Tests for oracle dispatch."""

    @pytest.mark.parametrize("oracle", ["brute", "elimination"])
    def test_dispatch(self, oracle, two_node, two_node_exact):
        """Test that exact oracles agree through the dispatcher."""
        assert run_oracle(two_node, oracle).log_z == pytest.approx(two_node_exact["log_z"])

    def test_unknown_oracle_raises(self, two_node):
        """Test that an unknown oracle name is rejected."""
        with pytest.raises(OracleError, match="Unknown oracle"):
            run_oracle(two_node, "junction-tree")

    def test_gibbs_always_feasible(self):
        """Test that Gibbs accepts models the exact oracles refuse."""
        check_oracle_feasible(_on(lattice_cubic_periodic(5)), "gibbs")

    def test_brute_refused_for_large_models(self):
        """Test that feasibility checks mirror the enumeration cap."""
        with pytest.raises(OracleError):
            check_oracle_feasible(_on(lattice_square(5, 5)), "brute")
