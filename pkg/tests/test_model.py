import zlib

import numpy as np
import pytest
import torch
from sklearn.base import clone

from latentgp import ContractError, LatentGP
from latentgp.training import IntervalScoreConfig


def _mixed_data(rng, n=14):
    X = np.column_stack([rng.uniform(size=n), rng.integers(0, 3, n), rng.uniform(size=n)])
    y = np.sin(4 * X[:, 0]) + 0.5 * X[:, 1] + X[:, 2] ** 2
    return X, y


def _mf_data(rng, n0=6, n1=12):
    x = rng.uniform(0, 3, n0 + n1)
    s = np.r_[np.zeros(n0), np.ones(n1)]
    y = np.sin(2 * x) + s * (0.3 * x - 0.2)
    return np.column_stack([x, s]), y


def _cal_data(rng, n0=6, n1=14):
    x = rng.uniform(size=n0 + n1)
    z = np.r_[np.full(n0, np.nan), rng.uniform(0, 2, n1)]
    s = np.r_[np.zeros(n0), np.ones(n1)]
    zt = np.where(np.isnan(z), 1.2, z)
    y = np.exp(-x) * zt + 0.1 * s
    return np.column_stack([x, z, s]), y


# configurations whose MAP loss exposes a gradient through autograd
LOSSES = {
    "single": (lambda r: (r.uniform(size=(12, 2)), None), dict()),
    "matern": (lambda r: (r.uniform(size=(12, 2)), None), dict(kernel="matern", nu=1.5)),
    "power_exp": (lambda r: (r.uniform(size=(12, 2)), None), dict(kernel="power_exponential", power=1.7)),
    "mixed_linear": (_mixed_data, dict(qual_dict={1: 3})),
    "mixed_random": (_mixed_data, dict(qual_dict={1: 3}, encoding="random")),
    "mixed_per_variable": (_mixed_data, dict(qual_dict={1: 3}, encoding="per_variable")),
    "mixed_ffnn": (_mixed_data, dict(qual_dict={1: 3}, embedding="ffnn", embedding_layers=(3,))),
    "mf_det": (_mf_data, dict(source_column=1)),
    "mf_per_source_mean": (_mf_data, dict(source_column=1, mean="per_source")),
    "mf_poly": (_mf_data, dict(source_column=1, mean="polynomial", poly_degree={0: None, 1: 2})),
    "mf_ffnn_mean": (_mf_data, dict(source_column=1, mean="ffnn", mean_layers=(3,))),
    "mf_prob": (_mf_data, dict(source_column=1, source_embedding="probabilistic", num_pass_train=4)),
    "cal_det": (_cal_data, dict(source_column=2, calibration_ids=[1])),
    "cal_prob": (_cal_data, dict(source_column=2, calibration_ids=[1], calibration_mode="probabilistic",
                                 num_pass_train=4)),
    "penalized": (_mf_data, dict(source_column=1, interval_score=True)),
}


def _quick(kw, X, y):
    return LatentGP(num_restarts=1, maxiter=5, random_state=0, **kw).fit(X, y)


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    make, kw = LOSSES[name]
    X, y = make(rng)
    if y is None:
        y = np.sin(3 * X[:, 0]) * X[:, 1]
    m = _quick(kw, X, y)
    pen = IntervalScoreConfig() if kw.get("interval_score") else None
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in m.bounds_])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in m.bounds_])
    h = 1e-5
    for _ in range(20):
        theta = np.clip(m.theta_ + 0.3 * rng.standard_normal(m.n_params_), lo + 2 * h, hi - 2 * h)
        _, g = m.loss_and_grad(theta, penalty=pen)
        fd = np.empty_like(g)
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (m.loss_at(theta + e, penalty=pen) - m.loss_at(theta - e, penalty=pen)) / (2 * h)
        err = np.linalg.norm(g - fd)
        assert err <= 1e-4 * max(np.linalg.norm(fd), 1.0), (name, err, np.linalg.norm(fd))


def test_sklearn_params_roundtrip():
    m = LatentGP(qual_dict={1: 3}, num_restarts=3, kernel="matern")
    c = clone(m)
    assert c.get_params() == m.get_params()


def test_fit_predict_smooth_function():
    X = np.linspace(0, 2 * np.pi, 20)[:, None]
    y = 2 * np.sin(X[:, 0])
    Xt = np.linspace(0.1, 6.1, 50)[:, None]
    m = LatentGP(num_restarts=4, random_state=0).fit(X, y)
    mu, sd = m.predict(Xt, return_std=True)
    err = np.sqrt(np.mean((mu - 2 * np.sin(Xt[:, 0])) ** 2)) / np.std(2 * np.sin(Xt[:, 0]), ddof=1)
    assert err < 0.01
    assert np.all(sd >= 0)
    assert m.score(Xt, 2 * np.sin(Xt[:, 0])) > 0.999


def test_same_seed_same_fit(rng):
    X, y = _mixed_data(rng)
    a = LatentGP(qual_dict={1: 3}, num_restarts=3, random_state=4).fit(X, y)
    b = LatentGP(qual_dict={1: 3}, num_restarts=3, random_state=4).fit(X, y)
    np.testing.assert_array_equal(a.theta_, b.theta_)


def test_full_covariance_consistent_with_marginals(rng):
    X, y = _mf_data(rng)
    m = LatentGP(source_column=1, num_restarts=2, random_state=0).fit(X, y)
    Q = np.column_stack([np.linspace(0, 3, 7), np.zeros(7)])
    full = m.predict_dist(Q, full_cov=True)
    marg = m.predict_dist(Q)
    np.testing.assert_allclose(np.diag(full.covariance), marg.variance, rtol=1e-8, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(full.covariance) > -1e-10)


def test_unknown_source_in_query(rng):
    X, y = _mf_data(rng)
    m = LatentGP(source_column=1, num_restarts=1, maxiter=5).fit(X, y)
    with pytest.raises(ContractError):
        m.predict([[0.5, 3.0]])


def test_unseen_level_rejected(rng):
    X, y = _mixed_data(rng)
    m = LatentGP(qual_dict={1: 3}, num_restarts=1, maxiter=5).fit(X, y)
    with pytest.raises(ContractError):
        m.predict([[0.5, 3.0, 0.5]])


def test_feature_count_checked(rng):
    X, y = _mixed_data(rng)
    m = LatentGP(qual_dict={1: 3}, num_restarts=1, maxiter=5).fit(X, y)
    with pytest.raises((ContractError, ValueError)):
        m.predict(np.zeros((2, 2)))


@pytest.mark.parametrize(
    "kw",
    [dict(kernel="rbf"), dict(mean="cubic"), dict(encoding="binary"), dict(qual_dict={0: 1})],
)
def test_bad_config(kw, rng):
    X, y = _mixed_data(rng)
    with pytest.raises(ContractError):
        LatentGP(**kw).fit(X, y)


def test_nan_in_numeric_column_rejected(rng):
    X, y = _mixed_data(rng)
    X[0, 0] = np.nan
    with pytest.raises((ContractError, ValueError)):
        LatentGP(qual_dict={1: 3}).fit(X, y)


def test_warm_start_shape_checked(rng):
    X, y = _mixed_data(rng)
    with pytest.raises(ContractError):
        LatentGP(qual_dict={1: 3}, num_restarts=1).fit(X, y, init_theta=np.zeros(3))


def test_loo_residuals_match_refits():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(10, 1))
    y = np.cos(3 * X[:, 0])
    m = LatentGP(num_restarts=2, random_state=0).fit(X, y)
    e = m.loo_residuals()
    # brute force: condition on n-1 points with the fitted hyperparameters
    D, yt = m._train_design()
    p = m._unpack(torch.as_tensor(m.theta_))
    mbar, C = m._train_moments(p, D, None)
    C = (C + torch.diag(m._noise_rows(m._noise_t(p, m.floor_), D.src))).detach().numpy()
    r = (yt - mbar).detach().numpy()
    want = []
    for i in range(10):
        k = np.delete(np.arange(10), i)
        want.append(r[i] - C[i, k] @ np.linalg.solve(C[np.ix_(k, k)], r[k]))
    np.testing.assert_allclose(e, np.array(want) * m.y_scale_, rtol=1e-7, atol=1e-10)


def test_continuation_selects_a_rung(rng):
    X = rng.uniform(size=(10, 1))
    y = np.sin(5 * X[:, 0])
    m = LatentGP(num_restarts=2, continuation=(1e-2, 1e-4), random_state=0).fit(X, y)
    assert m.floor_ in (1e-2, 1e-4)
    assert len(m.fit_trace_.rungs) == 2
