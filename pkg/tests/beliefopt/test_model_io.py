"""Tests for JSON model files."""

import json

import numpy as np
import pytest

from beliefopt.gaussian import GaussianModel
from beliefopt.graph_model import Evidence, Model
from beliefopt.model_io import (
    ModelFileError,
    load_gaussian_model,
    load_model,
    model_from_dict,
    save_gaussian_model,
    save_model,
)


@pytest.fixture
def chain():
    """Three-node chain with one observed node."""
    return {
        "num_nodes": 3,
        "biases": [0.1, -0.2, 0.3],
        "edges": [[0, 1, 0.5], [1, 2, -1.5]],
        "evidence": {"1": 1},
    }


def _write(tmp_path, data, name="model.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


class TestLoadModel:
    """Tests for reading binary model files."""

    def test_valid_file(self, tmp_path, chain):
        """Test that a well-formed file yields the model and its evidence."""
        model, evidence = load_model(_write(tmp_path, chain))
        assert model.n == 3
        assert model.edges.tolist() == [[0, 1], [1, 2]]
        assert model.weights.tolist() == [0.5, -1.5]
        assert model.biases.tolist() == [0.1, -0.2, 0.3]
        assert evidence.assignments == {1: 1}

    def test_evidence_is_optional(self, chain):
        """Test that a file without evidence gives empty evidence."""
        del chain["evidence"]
        _, evidence = model_from_dict(chain)
        assert evidence.assignments == {}

    @pytest.mark.parametrize(
        "patch, message",
        [
            ({"num_nodes": -1}, "num_nodes: expected a non-negative integer"),
            ({"num_nodes": "3"}, "num_nodes"),
            ({"biases": [0.0, 0.0]}, "biases: expected 3 entries"),
            ({"biases": [0.0, "x", 0.0]}, r"biases\[1\]: expected a number"),
            ({"edges": [[1, 0, 0.5]]}, r"edges\[0\]: expected i < j"),
            ({"edges": [[0, 1, 0.5], [0, 1, 0.2]]}, r"edges\[1\]: duplicate edge"),
            ({"edges": [[0, 7, 0.5]]}, "out of range"),
            ({"edges": [[0, 1]]}, r"edges\[0\]: expected \[i, j, w\]"),
            ({"evidence": {"1": 2}}, "value must be 0 or 1"),
            ({"evidence": {"5": 1}}, "out of range"),
            ({"evidence": {"a": 1}}, "not a node index"),
        ],
    )
    def test_malformed_fields(self, chain, patch, message):
        """Test that each malformed field is reported with its path."""
        chain.update(patch)
        with pytest.raises(ModelFileError, match=message):
            model_from_dict(chain)

    def test_infinite_weight(self, chain):
        """Test that non-finite numbers are refused."""
        chain["edges"] = [[0, 1, float("inf")]]
        with pytest.raises(ModelFileError, match="finite"):
            model_from_dict(chain)

    def test_missing_file(self, tmp_path):
        """Test that a missing file raises FileNotFoundError naming the path."""
        with pytest.raises(FileNotFoundError, match="Model file not found"):
            load_model(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        """Test that a syntax error reports the line number."""
        path = tmp_path / "broken.json"
        path.write_text('{\n  "num_nodes": 2,\n  "biases": [0, 0\n}')
        with pytest.raises(ModelFileError, match="line 4: invalid JSON"):
            load_model(path)

    def test_root_must_be_object(self, tmp_path):
        """Test that a JSON array is refused."""
        with pytest.raises(ModelFileError, match="<root>"):
            load_model(_write(tmp_path, [1, 2, 3]))


class TestSaveModel:
    """Tests for writing model files."""

    def test_round_trip_with_evidence(self, tmp_path):
        """Test that a saved model loads back unchanged."""
        model = Model.from_edge_list(4, [(0, 1, 0.25), (2, 3, -2.0), (1, 2, 1.0)], [0.0, 1.0, -1.0, 0.5])
        path = tmp_path / "saved.json"
        save_model(model, path, Evidence({3: 0}))
        loaded, evidence = load_model(path)
        assert np.array_equal(loaded.edges, model.edges)
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.biases, model.biases)
        assert evidence.assignments == {3: 0}


class TestGaussianFiles:
    """Tests for Gaussian model files."""

    def test_load(self, tmp_path):
        """Test that the diagonal is read alongside biases and edges."""
        path = _write(tmp_path, {"num_nodes": 2, "diag": [1.0, 2.0], "biases": [0.0, 1.0], "edges": [[0, 1, 0.5]]})
        model = load_gaussian_model(path)
        assert model.matrix.tolist() == [[1.0, 0.5], [0.5, 2.0]]
        assert model.biases.tolist() == [0.0, 1.0]

    def test_missing_diag(self, tmp_path):
        """Test that a Gaussian file without a diagonal is refused."""
        path = _write(tmp_path, {"num_nodes": 2, "biases": [0.0, 1.0], "edges": []})
        with pytest.raises(ModelFileError, match="diag"):
            load_gaussian_model(path)

    def test_round_trip(self, tmp_path):
        """Test that a saved Gaussian model loads back unchanged."""
        model = GaussianModel(n=3, edges=[[0, 1], [1, 2]], weights=[0.3, -0.2], diag=[1.0, 1.5, 2.0], biases=[1, 2, 3])
        path = tmp_path / "gaussian.json"
        save_gaussian_model(model, path)
        assert np.array_equal(load_gaussian_model(path).matrix, model.matrix)
