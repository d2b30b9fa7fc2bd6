"""Binary pairwise MRFs (Boltzmann machines) over {0,1} variables.

The joint distribution is ``p(s) ∝ exp(sum_(ij) W_ij s_i s_j + sum_i b_i s_i)``.
Edges are stored once with ``i < j``; ``adjacency[i]`` lists ``(neighbor, edge_index)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.special import gamma

logger = logging.getLogger(__name__)

TOPOLOGY_KINDS = ("square", "cubic-periodic", "tree", "arbitrary")


class EvidenceError(ValueError):
    """Invalid or contradictory evidence."""


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _canonical_edges(n: int, pairs: Iterable[Tuple[int, int]]) -> np.ndarray:
    seen = set()
    canonical = []
    for k, (i, j) in enumerate(pairs):
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edges[{k}]: node index out of range for n={n}: ({i}, {j})")
        if i == j:
            raise ValueError(f"edges[{k}]: self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"edges[{k}]: duplicate edge {key}")
        seen.add(key)
        canonical.append(key)
    return np.array(canonical, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Topology:
    """Unweighted graph structure with a kind tag."""

    n: int
    edges: np.ndarray
    kind: str = "arbitrary"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Topology needs at least one node, got n={self.n}")
        if self.kind not in TOPOLOGY_KINDS:
            raise ValueError(f"Unknown topology kind {self.kind!r}")
        object.__setattr__(self, "edges", _readonly(_canonical_edges(self.n, self.edges)))

    @classmethod
    def from_edges(cls, n: int, pairs: Iterable[Tuple[int, int]]) -> "Topology":
        return cls(n=n, edges=np.array(list(pairs), dtype=np.int64).reshape(-1, 2), kind="arbitrary")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(map(tuple, self.edges))
        return graph


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable binary pairwise model: ``n`` nodes, edges ``(i, j)`` with weights, biases."""

    n: int
    edges: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    adjacency: Tuple[Tuple[Tuple[int, int], ...], ...] = field(init=False, repr=False)
    degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"Node count must be non-negative, got {self.n}")
        edges = _canonical_edges(self.n, np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        biases = np.asarray(self.biases, dtype=float).reshape(-1)
        if len(weights) != len(edges):
            raise ValueError(f"Got {len(weights)} weights for {len(edges)} edges")
        if len(biases) != self.n:
            raise ValueError(f"Got {len(biases)} biases for {self.n} nodes")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise ValueError("Weights and biases must be finite")

        adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(self.n)]
        for e, (i, j) in enumerate(edges):
            adjacency[i].append((int(j), e))
            adjacency[j].append((int(i), e))

        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "biases", _readonly(biases))
        object.__setattr__(self, "adjacency", tuple(tuple(a) for a in adjacency))
        object.__setattr__(
            self, "degree", _readonly(np.array([len(a) for a in adjacency], dtype=np.int64))
        )

    @classmethod
    def from_edge_list(
        cls, n: int, edges: Sequence[Tuple[int, int, float]], biases: Sequence[float]
    ) -> "Model":
        """Build a model from ``(i, j, w)`` triples; ``(j, i)`` orderings are canonicalized."""
        pairs = [(i, j) for i, j, _ in edges]
        weights = [w for _, _, w in edges]
        return cls(n=n, edges=np.array(pairs, dtype=np.int64).reshape(-1, 2), weights=weights, biases=biases)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> List[int]:
        return [j for j, _ in self.adjacency[i]]

    def edge_index(self) -> Dict[Tuple[int, int], int]:
        return {(int(i), int(j)): e for e, (i, j) in enumerate(self.edges)}

    def to_topology(self, kind: str = "arbitrary") -> Topology:
        return Topology(n=self.n, edges=self.edges, kind=kind)

    def with_weights(self, weights: np.ndarray) -> "Model":
        return Model(n=self.n, edges=self.edges, weights=weights, biases=self.biases)

    def log_weight(self, states: np.ndarray) -> np.ndarray:
        """Unnormalized log-probability of each row of a ``(k, n)`` 0/1 state matrix."""
        states = np.asarray(states, dtype=float)
        value = states @ self.biases
        if self.num_edges:
            value = value + (states[:, self.edges[:, 0]] * states[:, self.edges[:, 1]]) @ self.weights
        return value

    def is_tree(self) -> bool:
        """True for forests (every connected component acyclic)."""
        return nx.is_forest(self.to_topology().to_networkx()) if self.n else True


@dataclass(frozen=True)
class Evidence:
    """Observed values ``{node: 0 | 1}``."""

    assignments: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for node, value in self.assignments.items():
            if value not in (0, 1):
                raise EvidenceError(f"evidence[{node}]: value must be 0 or 1, got {value!r}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, int]]) -> "Evidence":
        """Collect ``(node, value)`` pairs; repeated nodes must agree."""
        assignments: Dict[int, int] = {}
        for node, value in pairs:
            node = int(node)
            if node in assignments and assignments[node] != value:
                raise EvidenceError(
                    f"evidence[{node}]: contradictory assignments {assignments[node]} and {value}"
                )
            assignments[node] = value
        return cls(assignments=assignments)

    def validate(self, n: int) -> None:
        for node in self.assignments:
            if not 0 <= node < n:
                raise EvidenceError(f"evidence[{node}]: node index out of range for n={n}")


class Conditioned(NamedTuple):
    """Result of clamping: reduced model, old->new index map, constant log-weight of the clamp."""

    model: Model
    index_map: Dict[int, int]
    offset: float


def condition(model: Model, evidence: Evidence) -> Conditioned:
    """
    Clamp observed nodes and fold their couplings into neighbouring biases.

    An observed ``v_j = 1`` adds ``W_ij`` to ``b_i`` of each hidden neighbour ``i``.
    Observed nodes and their edges are removed.

    Args:
        model: Model to condition
        evidence: Observed node values

    Returns:
        Conditioned record; ``offset`` is the log-weight contributed by the observed
        nodes alone, so that ``log Z(model | evidence) = offset + log Z(reduced)``
    """
    evidence.validate(model.n)
    observed = evidence.assignments
    hidden = [i for i in range(model.n) if i not in observed]
    index_map = {old: new for new, old in enumerate(hidden)}

    biases = model.biases[hidden].copy() if hidden else np.zeros(0)
    offset = float(sum(model.biases[j] * v for j, v in observed.items()))
    kept_pairs, kept_weights = [], []
    for (i, j), w in zip(model.edges, model.weights):
        i, j = int(i), int(j)
        i_obs, j_obs = i in observed, j in observed
        if i_obs and j_obs:
            offset += w * observed[i] * observed[j]
        elif j_obs:
            biases[index_map[i]] += w * observed[j]
        elif i_obs:
            biases[index_map[j]] += w * observed[i]
        else:
            kept_pairs.append((index_map[i], index_map[j]))
            kept_weights.append(w)

    reduced = Model(
        n=len(hidden),
        edges=np.array(kept_pairs, dtype=np.int64).reshape(-1, 2),
        weights=kept_weights,
        biases=biases,
    )
    return Conditioned(model=reduced, index_map=index_map, offset=offset)


def _topology_from_graph(graph: nx.Graph, kind: str) -> Topology:
    graph = nx.convert_node_labels_to_integers(graph, ordering="sorted")
    return Topology(n=graph.number_of_nodes(), edges=np.array(list(graph.edges()), dtype=np.int64), kind=kind)


def lattice_square(rows: int, cols: int) -> Topology:
    """Non-periodic 4-neighbour grid; node ``r * cols + c`` sits at row ``r``, column ``c``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"Lattice dimensions must be >= 1, got {rows}x{cols}")
    return _topology_from_graph(nx.grid_2d_graph(rows, cols), kind="square")


def lattice_cubic_periodic(side: int) -> Topology:
    """``side**3`` cubic lattice with wraparound in all three directions (degree 6)."""
    if side < 3:
        raise ValueError(f"Periodic cubic lattice needs side >= 3, got {side}")
    return _topology_from_graph(nx.grid_graph(dim=[side, side, side], periodic=True), kind="cubic-periodic")


def random_tree(n: int, seed: int) -> Topology:
    """Uniformly random labelled tree on ``n`` nodes (Prüfer sequence)."""
    if n < 1:
        raise ValueError(f"Tree needs at least one node, got n={n}")
    if n == 1:
        return Topology(n=1, edges=np.zeros((0, 2), dtype=np.int64), kind="tree")
    if n == 2:
        return Topology(n=2, edges=np.array([[0, 1]]), kind="tree")
    rng = np.random.default_rng(seed)
    sequence = rng.integers(0, n, size=n - 2).tolist()
    return _topology_from_graph(nx.from_prufer_sequence(sequence), kind="tree")


def super_gaussian_scale(exponent: float) -> float:
    """Standard deviation of ``sign(x)|x|**exponent`` for standard normal ``x``."""
    return float(np.sqrt(2.0**exponent * gamma(exponent + 0.5) / np.sqrt(np.pi)))


def sample_instance(
    topology: Topology,
    w_scale: float,
    b_scale: float,
    seed: int,
    exponent: float = 1.5,
    shift_biases: bool = True,
) -> Model:
    """
    Draw a random model on ``topology``.

    Weights are ``w_scale * sign(x)|x|**exponent / c`` for standard normal ``x``, with
    ``c`` normalizing to unit standard deviation. Biases are ``normal(0, b_scale**2)``
    shifted by ``-1/2 sum_{j in N(i)} W_ij`` so that zero raw bias means a mean of 1/2.
    The random stream is numpy's PCG64 seeded with ``seed``.
    """
    if w_scale < 0 or b_scale < 0:
        raise ValueError(f"Scales must be non-negative, got w_scale={w_scale}, b_scale={b_scale}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(topology.num_edges)
    weights = w_scale * np.sign(x) * np.abs(x) ** exponent / super_gaussian_scale(exponent)
    biases = rng.normal(0.0, 1.0, size=topology.n) * b_scale
    if shift_biases and topology.num_edges:
        half = 0.5 * weights
        biases -= np.bincount(topology.edges[:, 0], weights=half, minlength=topology.n)
        biases -= np.bincount(topology.edges[:, 1], weights=half, minlength=topology.n)
    logger.debug("Sampled instance n=%d m=%d w_scale=%g b_scale=%g seed=%d",
                 topology.n, topology.num_edges, w_scale, b_scale, seed)
    return Model(n=topology.n, edges=topology.edges, weights=weights, biases=biases)


def expand_marginals(conditioned: Conditioned, evidence: Evidence, q: np.ndarray) -> np.ndarray:
    """Map reduced-model marginals back to the original node indexing (observed nodes get their value)."""
    n = len(conditioned.index_map) + len(evidence.assignments)
    full = np.empty(n)
    for node, value in evidence.assignments.items():
        full[node] = float(value)
    for old, new in conditioned.index_map.items():
        full[old] = q[new]
    return full
