"""Random model factories shared by the tests."""

import numpy as np

from beliefopt.graph_model import Model, Topology, random_tree


def random_model(n: int, edge_prob: float, seed: int, w_scale: float = 1.0, b_scale: float = 1.0) -> Model:
    """Erdos-Renyi style random model with normal weights and biases."""
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    topology = Topology.from_edges(n, pairs)
    return Model(
        n=n,
        edges=topology.edges,
        weights=w_scale * rng.standard_normal(topology.num_edges),
        biases=b_scale * rng.standard_normal(n),
    )


def random_tree_model(n: int, seed: int, w_scale: float = 1.0, b_scale: float = 0.5) -> Model:
    """Model on a uniformly random tree."""
    topology = random_tree(n, seed)
    rng = np.random.default_rng([seed, 1])
    return Model(
        n=n,
        edges=topology.edges,
        weights=w_scale * rng.standard_normal(topology.num_edges),
        biases=b_scale * rng.standard_normal(n),
    )
