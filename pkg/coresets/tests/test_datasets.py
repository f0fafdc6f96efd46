import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from coresets.config import DataConfig
from coresets.datasets import (
    build_model,
    generate_synthetic_gaussian,
    generate_synthetic_logistic,
    generate_synthetic_rbf,
    load_csv_dataset,
    load_dataset,
    make_rbf_basis,
)
from coresets.errors import DatasetError, InvalidArgumentError
from coresets.models import BayesLinReg, GaussianLocation, LogisticRegression


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_synthetic_gaussian_shape_and_determinism():
    first = generate_synthetic_gaussian(500, 4, 100.0, 100.0, seed=1)
    second = generate_synthetic_gaussian(500, 4, 100.0, 100.0, seed=1)
    assert first.features.shape == (500, 4)
    assert first.targets is None
    assert_array_equal(first.features, second.features)


def test_synthetic_gaussian_with_zero_variances_is_constant():
    dataset = generate_synthetic_gaussian(10, 3, 0.0, 0.0, seed=0)
    assert_array_equal(dataset.features, np.zeros((10, 3)))
    with pytest.raises(InvalidArgumentError):
        generate_synthetic_gaussian(10, 3, -1.0, 1.0, seed=0)


def test_synthetic_logistic_labels():
    dataset = generate_synthetic_logistic(1000, 5, seed=2)
    assert dataset.features.shape == (1000, 5)
    assert set(np.unique(dataset.targets)) == {-1.0, 1.0}
    assert dataset.schema == "classification"


def test_synthetic_rbf_points_lie_in_square():
    dataset = generate_synthetic_rbf(2000, seed=3)
    assert dataset.features.shape == (2000, 2)
    assert np.all((dataset.features >= 0.0) & (dataset.features <= 10.0))
    signal = np.sin(dataset.features[:, 0]) * np.cos(dataset.features[:, 1])
    assert np.std(dataset.targets - signal) == pytest.approx(0.1, rel=0.1)


def test_rbf_basis_layout():
    points = generate_synthetic_rbf(500, seed=4).features
    basis = make_rbf_basis(points, seed=5)
    assert basis.size == 301
    assert basis.scales[-1] == 100.0
    assert_allclose(basis.centers[-1], points.mean(axis=0))
    assert np.count_nonzero(basis.scales == 0.2) == 50


def test_csv_regression(tmp_path):
    path = _write(tmp_path, "a,b,y\n1.0,2.0,3.5\n-1, 0.5 ,2\n")
    dataset = load_csv_dataset(path, "regression")
    assert_array_equal(dataset.features, [[1.0, 2.0], [-1.0, 0.5]])
    assert_array_equal(dataset.targets, [3.5, 2.0])
    assert dataset.n == 2
    assert dataset.d == 2


def test_csv_binary_labels_are_remapped(tmp_path, caplog):
    path = _write(tmp_path, "x,label\n0.5,0\n1.5,1\n-2,1\n")
    with caplog.at_level(logging.WARNING, logger="coresets.datasets"):
        dataset = load_csv_dataset(path, "classification")
    assert_array_equal(dataset.targets, [-1.0, 1.0, 1.0])
    assert "remapped" in caplog.text


def test_csv_reports_line_and_column(tmp_path):
    rows = ["a,b,y"] + [f"{i},{i},{i}" for i in range(5)] + ["1,oops,2"]
    path = _write(tmp_path, "\n".join(rows) + "\n")
    with pytest.raises(DatasetError) as excinfo:
        load_csv_dataset(path, "regression")
    assert excinfo.value.line == 7
    assert excinfo.value.column == "b"


def test_csv_rejects_non_finite_values(tmp_path):
    path = _write(tmp_path, "a,y\n1,2\ninf,3\n")
    with pytest.raises(DatasetError) as excinfo:
        load_csv_dataset(path, "regression")
    assert excinfo.value.line == 3


def test_csv_rejects_invalid_utf8(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"a,y\n1,2\n\xff\xfe,3\n")
    with pytest.raises(DatasetError, match="UTF-8") as excinfo:
        load_csv_dataset(path, "regression")
    assert excinfo.value.line == 3


def test_csv_structural_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_csv_dataset(_write(tmp_path, "", "empty.csv"), "regression")
    with pytest.raises(DatasetError):
        load_csv_dataset(_write(tmp_path, "a,y\n", "header.csv"), "regression")
    with pytest.raises(DatasetError):
        load_csv_dataset(_write(tmp_path, "y\n1\n2\n", "single.csv"), "regression")
    with pytest.raises(DatasetError):
        load_csv_dataset(_write(tmp_path, "a,y\n1,2\n3,4,5\n", "ragged.csv"), "regression")
    with pytest.raises(DatasetError):
        load_csv_dataset(tmp_path / "missing.csv", "regression")


def test_csv_rejects_other_labels(tmp_path):
    path = _write(tmp_path, "x,label\n0.5,1\n1.5,2\n")
    with pytest.raises(DatasetError) as excinfo:
        load_csv_dataset(path, "classification")
    assert excinfo.value.line == 3


def test_build_model_per_kind(tmp_path):
    gaussian = DataConfig(kind="synthetic_gaussian", n=100, d=2, noise_var=100.0)
    model = build_model(gaussian, load_dataset(gaussian, 0), 0)
    assert isinstance(model, GaussianLocation)
    assert (model.n_data, model.dim, model.noise_var) == (100, 2, 100.0)

    logistic = DataConfig(kind="synthetic_logistic", n=50, d=3)
    assert isinstance(build_model(logistic, load_dataset(logistic, 0), 0), LogisticRegression)

    rbf = DataConfig(kind="synthetic_rbf", n=400, d=2)
    model = build_model(rbf, load_dataset(rbf, 0), 0)
    assert isinstance(model, BayesLinReg)
    assert model.dim == 301

    path = _write(tmp_path, "a,y\n1,2\n2,3.5\n3,4\n")
    csv = DataConfig(kind="csv", path=str(path), schema="regression", model="linear_regression")
    model = build_model(csv, load_dataset(csv, 0), 0)
    assert isinstance(model, BayesLinReg)
    assert model.noise_var == pytest.approx(np.var([2.0, 3.5, 4.0], ddof=1))
