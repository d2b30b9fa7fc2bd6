"""JSON model files.

Binary models::

    {"num_nodes": 3, "biases": [0, 0, 0], "edges": [[0, 1, 0.5], [1, 2, 0.5]],
     "evidence": {"1": 1}}

Gaussian models add ``"diag"`` (the ``W_ii``) and take no evidence.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from beliefopt.gaussian import GaussianModel
from beliefopt.graph_model import Evidence, Model

logger = logging.getLogger(__name__)


class ModelFileError(ValueError):
    """Malformed model file; the message starts with the offending field path."""


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFileError(f"{where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ModelFileError(f"{where}: must be finite, got {value!r}")
    return float(value)


def _index(value: Any, where: str, n: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelFileError(f"{where}: expected an integer node index, got {value!r}")
    if not 0 <= value < n:
        raise ModelFileError(f"{where}: node index {value} out of range for num_nodes={n}")
    return value


def _vector(data: Dict[str, Any], key: str, n: int) -> List[float]:
    values = data.get(key)
    if not isinstance(values, list):
        raise ModelFileError(f"{key}: expected a list of {n} numbers")
    if len(values) != n:
        raise ModelFileError(f"{key}: expected {n} entries, got {len(values)}")
    return [_number(v, f"{key}[{k}]") for k, v in enumerate(values)]


def _edges(data: Dict[str, Any], n: int) -> Tuple[np.ndarray, List[float]]:
    raw = data.get("edges", [])
    if not isinstance(raw, list):
        raise ModelFileError("edges: expected a list of [i, j, w] triples")
    pairs, weights, seen = [], [], set()
    for k, entry in enumerate(raw):
        where = f"edges[{k}]"
        if not isinstance(entry, list) or len(entry) != 3:
            raise ModelFileError(f"{where}: expected [i, j, w], got {entry!r}")
        i = _index(entry[0], f"{where}[0]", n)
        j = _index(entry[1], f"{where}[1]", n)
        if not i < j:
            raise ModelFileError(f"{where}: expected i < j, got ({i}, {j})")
        if (i, j) in seen:
            raise ModelFileError(f"{where}: duplicate edge ({i}, {j})")
        seen.add((i, j))
        pairs.append((i, j))
        weights.append(_number(entry[2], f"{where}[2]"))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), weights


def _num_nodes(data: Any) -> int:
    if not isinstance(data, dict):
        raise ModelFileError("<root>: expected a JSON object")
    n = data.get("num_nodes")
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        raise ModelFileError(f"num_nodes: expected a non-negative integer, got {n!r}")
    return n


def model_from_dict(data: Dict[str, Any]) -> Tuple[Model, Evidence]:
    """Parse a binary model mapping into a model and its evidence."""
    n = _num_nodes(data)
    biases = _vector(data, "biases", n)
    pairs, weights = _edges(data, n)
    raw_evidence = data.get("evidence", {})
    if not isinstance(raw_evidence, dict):
        raise ModelFileError("evidence: expected an object mapping node index to 0 or 1")
    assignments = {}
    for key, value in raw_evidence.items():
        where = f"evidence[{key}]"
        try:
            node = int(key)
        except ValueError:
            raise ModelFileError(f"{where}: key is not a node index") from None
        _index(node, where, n)
        if value not in (0, 1) or isinstance(value, bool):
            raise ModelFileError(f"{where}: value must be 0 or 1, got {value!r}")
        if node in assignments:
            raise ModelFileError(f"{where}: node assigned twice")
        assignments[node] = int(value)
    return Model(n=n, edges=pairs, weights=weights, biases=biases), Evidence(assignments)


def gaussian_model_from_dict(data: Dict[str, Any]) -> GaussianModel:
    n = _num_nodes(data)
    pairs, weights = _edges(data, n)
    return GaussianModel(
        n=n, edges=pairs, weights=weights, diag=_vector(data, "diag", n), biases=_vector(data, "biases", n)
    )


def _read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found at {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from exc


def load_model(path: Path) -> Tuple[Model, Evidence]:
    """
    Load a binary model file.

    Args:
        path: JSON model file

    Returns:
        Tuple of (model, evidence); evidence is empty when the file has none

    Raises:
        FileNotFoundError: If the file does not exist
        ModelFileError: On malformed content, with the offending field path
    """
    model, evidence = model_from_dict(_read_json(path))
    logger.debug("Loaded model from %s: n=%d m=%d evidence=%d", path, model.n, model.num_edges,
                 len(evidence.assignments))
    return model, evidence


def load_gaussian_model(path: Path) -> GaussianModel:
    return gaussian_model_from_dict(_read_json(path))


def model_to_dict(model: Model, evidence: Optional[Evidence] = None) -> Dict[str, Any]:
    data = {
        "num_nodes": model.n,
        "biases": model.biases.tolist(),
        "edges": [[int(i), int(j), float(w)] for (i, j), w in zip(model.edges, model.weights)],
    }
    if evidence and evidence.assignments:
        data["evidence"] = {str(k): v for k, v in sorted(evidence.assignments.items())}
    return data


def save_model(model: Model, path: Path, evidence: Optional[Evidence] = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model, evidence), f, indent=2)


def save_gaussian_model(model: GaussianModel, path: Path) -> None:
    data = {
        "num_nodes": model.n,
        "diag": model.diag.tolist(),
        "biases": model.biases.tolist(),
        "edges": [[int(i), int(j), float(w)] for (i, j), w in zip(model.edges, model.weights)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
