import json

import numpy as np
import pytest

from latentgp import ContractError, LatentGP, load_model, save_model


def _fit(**kw):
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.uniform(size=16), rng.integers(0, 3, 16), np.r_[np.zeros(6), np.ones(10)]])
    y = np.sin(3 * X[:, 0]) + X[:, 1] + 0.2 * X[:, 2]
    return LatentGP(qual_dict={1: 3}, source_column=2, num_restarts=2, random_state=0, **kw).fit(X, y), X


@pytest.mark.parametrize("kw", [{}, dict(source_embedding="probabilistic", num_pass_train=3, num_pass_pred=4)])
def test_round_trip_bit_exact(tmp_path, kw):
    m, X = _fit(**kw)
    path = tmp_path / "m.json"
    save_model(m, path, columns=["x", "t", "s"], response="y")
    m2, doc = load_model(path)
    a = m.predict_dist(X)
    b = m2.predict_dist(X)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.variance, b.variance)
    assert doc["fingerprint"]["columns"] == ["x", "t", "s"]


def test_version_mismatch(tmp_path):
    m, _ = _fit()
    path = tmp_path / "m.json"
    save_model(m, path)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ContractError, match="schema"):
        load_model(path)


def test_tampered_data(tmp_path):
    m, _ = _fit()
    path = tmp_path / "m.json"
    save_model(m, path)
    doc = json.loads(path.read_text())
    doc["data"]["y"][0] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ContractError, match="fingerprint"):
        load_model(path)


def test_nan_calibration_cells_survive(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(size=14)
    z = np.r_[np.full(4, np.nan), rng.uniform(size=10)]
    s = np.r_[np.zeros(4), np.ones(10)]
    y = x * np.where(np.isnan(z), 0.5, z)
    X = np.column_stack([x, z, s])
    m = LatentGP(source_column=2, calibration_ids=[1], num_restarts=1, maxiter=20).fit(X, y)
    save_model(m, tmp_path / "c.json")
    m2, _ = load_model(tmp_path / "c.json")
    np.testing.assert_array_equal(m.predict(X), m2.predict(X))


def test_pickle_round_trip():
    import pickle

    m, X = _fit()
    m2 = pickle.loads(pickle.dumps(m))
    np.testing.assert_array_equal(m.predict(X), m2.predict(X))
