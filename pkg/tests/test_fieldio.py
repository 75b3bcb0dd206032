import json

import numpy as np
import pytest

from statlap.errors import ShapeMismatch
from statlap.fieldio import (
    load_fields,
    load_operators,
    read_samples_jsonl,
    save_fields,
    save_operators,
    write_csv_matrix,
    write_csv_spectrum,
)
from statlap.geometry import Grid, TensorField, synthetic_manifold
from statlap.operators import assemble_weak_laplacian, inner_product_data


@pytest.fixture
def md():
    return synthetic_manifold("curved2d", (6, 6))


class TestFieldContainer:
    def test_round_trip(self, md, tmp_path):
        path = tmp_path / "fields.json"
        save_fields(path, md.grid, {"g": md.g, "C": md.C, "f": md.f})
        grid, fields = load_fields(path)
        assert grid.points == md.grid.points
        assert grid.periods == pytest.approx(md.grid.periods)
        assert np.array_equal(fields["g"].values, md.g.values)
        assert np.array_equal(fields["C"].values, md.C.values)
        assert np.array_equal(fields["f"].values, md.f.values)
        assert fields["g"].symmetries == ((0, 1),)

    def test_binary_column_identical_values(self, md, tmp_path):
        plain, binary = tmp_path / "a.json", tmp_path / "b.json"
        save_fields(plain, md.grid, {"g": md.g})
        save_fields(binary, md.grid, {"g": md.g}, binary=True)
        _, fa = load_fields(plain)
        _, fb = load_fields(binary)
        assert np.array_equal(fa["g"].values, fb["g"].values)
        doc = json.loads(binary.read_text())
        assert doc["fields"]["g"]["values"]["encoding"] == "base64-float64-le"

    def test_document_layout(self, md, tmp_path):
        path = tmp_path / "fields.json"
        save_fields(path, md.grid, {"f": md.f})
        doc = json.loads(path.read_text())
        assert set(doc) == {"grid", "fields"}
        assert doc["grid"]["dims"] == 2
        assert doc["grid"]["points"] == [6, 6]
        # values are flat row-major
        assert doc["fields"]["f"]["values"] == [float(v) for v in md.f.values]

    def test_shape_guard(self, md, tmp_path):
        grid = Grid(points=(4,), periods=(1.0,))
        wrong = TensorField.create(grid, np.zeros(4))
        with pytest.raises(ShapeMismatch):
            save_fields(tmp_path / "x.json", md.grid, {"f": wrong})


class TestOperatorExport:
    def test_round_trip_bit_exact(self, md, tmp_path):
        ipd = inner_product_data(md)
        L = assemble_weak_laplacian(md, ipd)
        path = tmp_path / "ops.json"
        save_operators(path, md.grid, {"laplacian": L,
                                       "mass_vector": ipd.b_matrix(),
                                       "mass_mixed": ipd.m_matrix()})
        _, ops = load_operators(path)
        diff = (ops["laplacian"] - L.matrix).tocsr()
        assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0
        diffB = (ops["mass_vector"] - ipd.b_matrix()).tocsr()
        assert diffB.nnz == 0 or np.abs(diffB.data).max() == 0.0


class TestCsv:
    def test_matrix_round_trip_floats(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.normal(size=(4, 4))
        path = tmp_path / "m.csv"
        write_csv_matrix(path, mat, list(range(4)), list(range(4)), corner="node_id")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "node_id,0,1,2,3"
        parsed = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
        assert np.array_equal(parsed, mat)

    def test_spectrum_csv(self, tmp_path):
        path = tmp_path / "s.csv"
        vals = np.array([0.0, 1.0 / 3.0, 2.7e-15])
        write_csv_spectrum(path, vals)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "index,eigenvalue"
        assert float(lines[1].split(",")[1]) == 0.0
        assert float(lines[2].split(",")[1]) == 1.0 / 3.0


class TestSamplesJsonl:
    def test_read(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        path.write_text('{"id": "a", "value": 1}\n\n{"id": "b", "value": 0.5}\n')
        ids, values = read_samples_jsonl(path)
        assert ids == ["a", "b"]
        assert values == [1.0, 0.5]
