"""Tests for models, topologies, conditioning and instance sampling."""

import numpy as np
import pytest
from scipy.special import logsumexp

from beliefopt.exact import brute_force
from beliefopt.graph_model import (
    Evidence,
    EvidenceError,
    Model,
    Topology,
    condition,
    expand_marginals,
    lattice_cubic_periodic,
    lattice_square,
    random_tree,
    sample_instance,
    super_gaussian_scale,
)


class TestModel:
    """Tests for the immutable Model record."""

    def test_edges_are_canonicalized(self):
        """Test that (j, i) input edges are stored as (i, j)."""
        model = Model.from_edge_list(3, [(2, 0, 0.5), (1, 2, -0.3)], [0.0, 0.0, 0.0])
        assert model.edges.tolist() == [[0, 2], [1, 2]]
        assert model.degree.tolist() == [1, 1, 2]
        assert model.neighbors(2) == [0, 1]

    def test_arrays_are_read_only(self):
        """Test that weights and biases cannot be mutated in place."""
        model = Model.from_edge_list(2, [(0, 1, 1.0)], [0.0, 0.0])
        with pytest.raises(ValueError):
            model.weights[0] = 2.0

    @pytest.mark.parametrize(
        "edges, message",
        [
            ([(0, 0, 1.0)], "self-loop"),
            ([(0, 1, 1.0), (1, 0, 2.0)], "duplicate"),
            ([(0, 5, 1.0)], "out of range"),
        ],
    )
    def test_invalid_edges_raise(self, edges, message):
        """Test that malformed edge lists are rejected with a descriptive message."""
        with pytest.raises(ValueError, match=message):
            Model.from_edge_list(3, edges, [0.0, 0.0, 0.0])

    def test_length_mismatch_raises(self):
        """Test that bias and weight counts must match the graph."""
        with pytest.raises(ValueError, match="biases"):
            Model.from_edge_list(3, [(0, 1, 1.0)], [0.0, 0.0])

    def test_non_finite_weights_raise(self):
        """Test that NaN weights are rejected."""
        with pytest.raises(ValueError, match="finite"):
            Model.from_edge_list(2, [(0, 1, float("nan"))], [0.0, 0.0])

    def test_log_weight(self):
        """Test the unnormalized log-probability of explicit states."""
        model = Model.from_edge_list(2, [(0, 1, 1.5)], [0.2, -0.4])
        states = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
        assert model.log_weight(states) == pytest.approx([0.0, 0.2, -0.4, 1.3])

    def test_is_tree(self):
        """Test forest detection on a path and a triangle."""
        path = Model.from_edge_list(3, [(0, 1, 1.0), (1, 2, 1.0)], [0.0] * 3)
        triangle = Model.from_edge_list(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], [0.0] * 3)
        assert path.is_tree()
        assert not triangle.is_tree()


class TestTopologies:
    """Tests for the lattice and tree generators."""

    def test_square_lattice(self):
        """Test edge count and corner degree of a 10x10 grid."""
        topology = lattice_square(10, 10)
        assert topology.n == 100
        assert topology.num_edges == 180
        assert topology.degrees()[0] == 2
        assert topology.degrees().max() == 4

    def test_square_lattice_indexing(self):
        """Test that node r * cols + c neighbours r * cols + c + 1."""
        topology = lattice_square(2, 3)
        assert [0, 1] in topology.edges.tolist()
        assert [0, 3] in topology.edges.tolist()

    def test_cubic_periodic_lattice(self):
        """Test that every node of the periodic cube has degree 6."""
        topology = lattice_cubic_periodic(5)
        assert topology.n == 125
        assert topology.num_edges == 375
        assert np.all(topology.degrees() == 6)

    def test_cubic_needs_side_three(self):
        """Test that a side below 3 is rejected."""
        with pytest.raises(ValueError):
            lattice_cubic_periodic(2)

    @pytest.mark.parametrize("n", [1, 2, 7, 12])
    def test_random_tree(self, n):
        """Test that random trees are connected and acyclic."""
        topology = random_tree(n, seed=3)
        assert topology.num_edges == n - 1
        model = Model(n=n, edges=topology.edges, weights=np.ones(n - 1), biases=np.zeros(n))
        assert model.is_tree()

    def test_from_edges(self):
        """Test that from_edges canonicalizes and tags the topology."""
        topology = Topology.from_edges(4, [(1, 0), (3, 2)])
        assert topology.kind == "arbitrary"
        assert topology.edges.tolist() == [[0, 1], [2, 3]]


class TestSampleInstance:
    """Tests for random instance generation."""

    def test_unit_exponent_scale(self):
        """Test that the normalizer is 1 for Gaussian weights."""
        assert super_gaussian_scale(1.0) == pytest.approx(1.0)

    def test_weight_standard_deviation(self):
        """Test that sampled weights have standard deviation close to w_scale."""
        model = sample_instance(lattice_square(100, 100), w_scale=2.0, b_scale=1.0, seed=0)
        assert np.std(model.weights) == pytest.approx(2.0, rel=0.05)

    def test_deterministic_for_seed(self):
        """Test that equal seeds give equal instances and different seeds differ."""
        topology = lattice_square(4, 4)
        a = sample_instance(topology, 1.0, 1.0, seed=7)
        b = sample_instance(topology, 1.0, 1.0, seed=7)
        c = sample_instance(topology, 1.0, 1.0, seed=8)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)
        assert not np.array_equal(a.weights, c.weights)

    def test_zero_raw_bias_gives_half_means(self):
        """Test that shifted biases with b_scale=0 make every marginal exactly 1/2."""
        model = sample_instance(lattice_square(3, 3), w_scale=2.0, b_scale=0.0, seed=1)
        assert brute_force(model).q == pytest.approx(np.full(9, 0.5), abs=1e-12)

    def test_negative_scale_raises(self):
        """Test that negative scales are rejected."""
        with pytest.raises(ValueError):
            sample_instance(lattice_square(2, 2), -1.0, 1.0, seed=0)


class TestCondition:
    """Tests for clamping observed nodes."""

    @pytest.fixture
    def chain(self):
        """Three-node chain with distinct weights and biases."""
        return Model.from_edge_list(3, [(0, 1, 0.5), (1, 2, -0.3)], [0.1, 0.2, -0.4])

    def test_folds_couplings_into_biases(self, chain):
        """Test that an observed middle node moves its couplings into the neighbours' biases."""
        conditioned = condition(chain, Evidence({1: 1}))
        assert conditioned.index_map == {0: 0, 2: 1}
        assert conditioned.model.num_edges == 0
        assert conditioned.model.biases.tolist() == pytest.approx([0.6, -0.7])
        assert conditioned.offset == pytest.approx(0.2)

    def test_clamped_partition_function(self, chain):
        """Test that log Z of the clamped model equals offset plus log Z of the reduced model."""
        conditioned = condition(chain, Evidence({1: 1}))
        states = np.array([[s0, 1, s2] for s0 in (0, 1) for s2 in (0, 1)])
        expected = logsumexp(chain.log_weight(states))
        assert conditioned.offset + brute_force(conditioned.model).log_z == pytest.approx(expected)

    def test_both_endpoints_observed(self, chain):
        """Test that an edge between two observed nodes lands in the offset."""
        conditioned = condition(chain, Evidence({0: 1, 1: 1}))
        assert conditioned.offset == pytest.approx(0.1 + 0.2 + 0.5)
        assert conditioned.model.biases.tolist() == pytest.approx([-0.7])

    def test_out_of_range_evidence_raises(self, chain):
        """Test that evidence on a missing node is rejected."""
        with pytest.raises(EvidenceError):
            condition(chain, Evidence({5: 1}))

    def test_contradictory_evidence_raises(self):
        """Test that a node assigned both 0 and 1 is rejected."""
        with pytest.raises(EvidenceError, match="contradictory"):
            Evidence.from_pairs([(0, 1), (0, 0)])

    def test_invalid_value_raises(self):
        """Test that evidence values other than 0 and 1 are rejected."""
        with pytest.raises(EvidenceError):
            Evidence({0: 2})

    def test_expand_marginals(self, chain):
        """Test that observed nodes get their values back in the original indexing."""
        evidence = Evidence({1: 0})
        conditioned = condition(chain, evidence)
        full = expand_marginals(conditioned, evidence, np.array([0.3, 0.8]))
        assert full.tolist() == [0.3, 0.0, 0.8]
