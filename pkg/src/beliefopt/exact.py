"""Ground-truth oracles: enumeration, variable elimination, annealed Gibbs sampling.

Variable elimination stands in for a junction tree: marginals come from clamped
partition functions, ``q_i = exp(ln Z[s_i = 1] - ln Z)``.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit, logsumexp

from beliefopt.config import GibbsConfig
from beliefopt.graph_model import Evidence, Model, condition
from beliefopt.models import ExactResult

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_NODES = 20
MAX_INDUCED_WIDTH = 14
_CHUNK_BITS = 16


class OracleError(ValueError):
    """The requested oracle cannot handle this model."""


class WidthExceededError(OracleError):
    """Elimination order would build a factor wider than the cap."""


def brute_force(model: Model) -> ExactResult:
    """
    Enumerate all ``2**n`` states in chunks with a rescaled running sum.

    Raises:
        OracleError: If ``n`` exceeds ``MAX_BRUTE_FORCE_NODES``
    """
    n, m = model.n, model.num_edges
    if n > MAX_BRUTE_FORCE_NODES:
        raise OracleError(f"brute force refuses n={n} > {MAX_BRUTE_FORCE_NODES}")
    if n == 0:
        return ExactResult(q=np.zeros(0), xi=np.zeros(0), log_z=0.0)

    bits = np.arange(n, dtype=np.int64)
    total = 1 << n
    chunk = 1 << min(n, _CHUNK_BITS)
    running_max = -np.inf
    z_sum, q_sum, xi_sum = 0.0, np.zeros(n), np.zeros(m)
    for start in range(0, total, chunk):
        index = np.arange(start, min(start + chunk, total), dtype=np.int64)
        states = ((index[:, None] >> bits) & 1).astype(float)
        log_w = model.log_weight(states)
        new_max = max(running_max, float(log_w.max()))
        rescale = np.exp(running_max - new_max) if np.isfinite(running_max) else 0.0
        w = np.exp(log_w - new_max)
        z_sum = z_sum * rescale + w.sum()
        q_sum = q_sum * rescale + w @ states
        if m:
            xi_sum = xi_sum * rescale + w @ (states[:, model.edges[:, 0]] * states[:, model.edges[:, 1]])
        running_max = new_max

    return ExactResult(q=q_sum / z_sum, xi=xi_sum / z_sum, log_z=running_max + float(np.log(z_sum)))


def _interaction_graph(model: Model) -> nx.Graph:
    return model.to_topology().to_networkx()


def induced_width(model: Model, order: Sequence[int]) -> int:
    """Largest neighbour set met while eliminating ``order`` (0 for edgeless models)."""
    graph = _interaction_graph(model)
    width = 0
    for v in order:
        neighbours = list(graph.neighbors(v))
        width = max(width, len(neighbours))
        for a in range(len(neighbours)):
            for b in range(a + 1, len(neighbours)):
                graph.add_edge(neighbours[a], neighbours[b])
        graph.remove_node(v)
    return width


def _min_degree_order(model: Model) -> List[int]:
    graph = _interaction_graph(model)
    order = []
    while graph.number_of_nodes():
        v = min(graph.nodes, key=lambda u: (graph.degree(u), u))
        neighbours = list(graph.neighbors(v))
        for a in range(len(neighbours)):
            for b in range(a + 1, len(neighbours)):
                graph.add_edge(neighbours[a], neighbours[b])
        graph.remove_node(v)
        order.append(v)
    return order


def elimination_order(model: Model) -> List[int]:
    """The better of natural index order and greedy min-degree, by induced width."""
    natural = list(range(model.n))
    greedy = _min_degree_order(model)
    return min((natural, greedy), key=lambda order: induced_width(model, order))


def _check_order(model: Model, order: Sequence[int]) -> List[int]:
    order = [int(v) for v in order]
    if sorted(order) != list(range(model.n)):
        raise ValueError(f"Elimination order must be a permutation of 0..{model.n - 1}")
    return order


Factor = Tuple[Tuple[int, ...], np.ndarray]


def _align(factor: Factor, scope: Tuple[int, ...]) -> np.ndarray:
    variables, table = factor
    present = sorted(variables, key=scope.index)
    table = np.transpose(table, [variables.index(v) for v in present])
    return table.reshape([2 if v in variables else 1 for v in scope])


def eliminate(model: Model, order: Optional[Sequence[int]] = None, max_width: int = MAX_INDUCED_WIDTH) -> float:
    """
    Exact ``ln Z`` by bucket elimination with log-space factor tables.

    Args:
        model: Model to sum out
        order: Elimination order; defaults to ``elimination_order(model)``
        max_width: Largest allowed induced width

    Returns:
        Log partition function

    Raises:
        WidthExceededError: If the order's induced width exceeds ``max_width``
    """
    if model.n == 0:
        return 0.0
    order = _check_order(model, elimination_order(model) if order is None else order)
    width = induced_width(model, order)
    if width > max_width:
        raise WidthExceededError(f"induced width {width} exceeds cap {max_width}")

    position = {v: k for k, v in enumerate(order)}
    buckets: Dict[int, List[Factor]] = {v: [] for v in order}
    constant = 0.0

    def place(factor: Factor) -> None:
        variables, _ = factor
        buckets[min(variables, key=position.__getitem__)].append(factor)

    for i in range(model.n):
        place(((i,), np.array([0.0, model.biases[i]])))
    for (i, j), w in zip(model.edges, model.weights):
        place(((int(i), int(j)), np.array([[0.0, 0.0], [0.0, w]])))

    for v in order:
        bucket = buckets.pop(v)
        scope = tuple(sorted({u for variables, _ in bucket for u in variables}, key=position.__getitem__))
        joint = sum(_align(factor, scope) for factor in bucket)
        reduced = logsumexp(joint, axis=0)
        rest = scope[1:]
        if rest:
            place((rest, reduced))
        else:
            constant += float(reduced)
    return constant


def _clamped_log_z(model: Model, evidence: Evidence, order: Sequence[int]) -> float:
    conditioned = condition(model, evidence)
    reduced_order = [conditioned.index_map[v] for v in order if v in conditioned.index_map]
    return conditioned.offset + eliminate(conditioned.model, reduced_order)


def exact_marginals_via_elimination(model: Model, order: Optional[Sequence[int]] = None) -> ExactResult:
    """Node and edge marginals from clamped eliminations, one per node and one per edge."""
    order = _check_order(model, elimination_order(model) if order is None else order)
    width = induced_width(model, order)
    if width > MAX_INDUCED_WIDTH:
        raise WidthExceededError(f"induced width {width} exceeds cap {MAX_INDUCED_WIDTH}")
    log_z = eliminate(model, order)
    q = np.array([np.exp(_clamped_log_z(model, Evidence({i: 1}), order) - log_z) for i in range(model.n)])
    xi = np.array(
        [
            np.exp(_clamped_log_z(model, Evidence({int(i): 1, int(j): 1}), order) - log_z)
            for i, j in model.edges
        ]
    )
    logger.debug("elimination oracle n=%d width=%d lnZ=%.6f", model.n, width, log_z)
    return ExactResult(q=q, xi=xi, log_z=log_z)


def _colour_classes(model: Model) -> List[np.ndarray]:
    colouring = nx.greedy_color(_interaction_graph(model), strategy="largest_first")
    classes: Dict[int, List[int]] = {}
    for node, colour in colouring.items():
        classes.setdefault(colour, []).append(node)
    return [np.array(sorted(nodes)) for _, nodes in sorted(classes.items())]


def _temperature(cfg: GibbsConfig, sweep: int) -> float:
    if cfg.anneal_steps == 0:
        return 1.0
    return 1.0 + (cfg.anneal_from - 1.0) * max(0.0, 1.0 - sweep / cfg.anneal_steps)


def gibbs(model: Model, cfg: GibbsConfig) -> ExactResult:
    """
    Annealed single-site Gibbs sampler; ``log_z`` is not available.

    Each sweep visits the colour classes of a greedy graph colouring in turn. Nodes of
    one class share no edge, so updating them together is the same as updating them
    one by one. The temperature falls linearly from ``anneal_from`` to 1 over
    ``anneal_steps`` burn-in sweeps; ``n_samples`` sweeps at ``T = 1`` are averaged.
    """
    if model.n == 0:
        return ExactResult(q=np.zeros(0), xi=np.zeros(0), log_z=None)
    rng = np.random.default_rng(cfg.seed)
    i, j = model.edges[:, 0], model.edges[:, 1]
    coupling = csr_matrix(
        (np.concatenate([model.weights, model.weights]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(model.n, model.n),
    )
    classes = _colour_classes(model)
    rows = [coupling[nodes] for nodes in classes]
    state = (rng.random(model.n) < 0.5).astype(float)

    def sweep(temperature: float) -> None:
        for nodes, row in zip(classes, rows):
            field = row @ state + model.biases[nodes]
            state[nodes] = rng.random(len(nodes)) < expit(field / temperature)

    for t in range(cfg.burn_in):
        sweep(_temperature(cfg, t))
    q_sum, xi_sum = np.zeros(model.n), np.zeros(model.num_edges)
    for _ in range(cfg.n_samples):
        sweep(1.0)
        q_sum += state
        xi_sum += state[i] * state[j]
    return ExactResult(q=q_sum / cfg.n_samples, xi=xi_sum / cfg.n_samples, log_z=None)


ORACLES = ("brute", "elimination", "gibbs")


def check_oracle_feasible(model: Model, oracle: str) -> None:
    """Raise ``OracleError`` if ``oracle`` cannot run on ``model``."""
    if oracle == "brute":
        if model.n > MAX_BRUTE_FORCE_NODES:
            raise OracleError(f"brute force refuses n={model.n} > {MAX_BRUTE_FORCE_NODES}")
    elif oracle == "elimination":
        width = induced_width(model, elimination_order(model))
        if width > MAX_INDUCED_WIDTH:
            raise WidthExceededError(f"induced width {width} exceeds cap {MAX_INDUCED_WIDTH}")
    elif oracle != "gibbs":
        raise OracleError(f"Unknown oracle {oracle!r}; expected one of {ORACLES}")


def run_oracle(model: Model, oracle: str, gibbs_cfg: Optional[GibbsConfig] = None) -> ExactResult:
    check_oracle_feasible(model, oracle)
    if oracle == "brute":
        return brute_force(model)
    if oracle == "elimination":
        return exact_marginals_via_elimination(model)
    return gibbs(model, gibbs_cfg or GibbsConfig())
