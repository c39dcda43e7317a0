import numpy as np
import pytest
import torch

from latentgp import ContractError, LatentGP, UnifiedInput
from latentgp.calibration import CalibrationConfig, CalibrationPosterior, calibrate, complete_inputs, sample_zeta
from latentgp.data import MFDataset


def test_lf_row_unchanged():
    row = UnifiedInput(np.array([0.5, 250.0, 1500.0]), np.zeros(2))
    out = complete_inputs(row, [1, 2], [1.0, 2.0], is_hf=False)
    np.testing.assert_array_equal(out.scaled, row.scaled)


def test_hf_row_filled():
    row = UnifiedInput(np.array([0.5, np.nan, np.nan]), np.zeros(0))
    out = complete_inputs(row, [1, 2], [250.0, 1500.0], is_hf=True)
    np.testing.assert_array_equal(out.scaled, [0.5, 250.0, 1500.0])


def test_hf_row_with_values_rejected():
    row = UnifiedInput(np.array([0.5, 3.0]), np.zeros(0))
    with pytest.raises(ContractError):
        complete_inputs(row, [1], [1.0], is_hf=True)


def test_sample_zeta():
    post = CalibrationPosterior([1.0, 2.0], [0.5, 0.1])
    np.testing.assert_array_equal(sample_zeta(post, np.zeros(2)), [1.0, 2.0])
    np.testing.assert_allclose(sample_zeta(post, np.array([1.0, -2.0])), [1.5, 1.8])
    with pytest.raises(ContractError):
        CalibrationPosterior([1.0], [0.0])


def _data(rng, n0=6, n1=20, truth=1.3):
    x = rng.uniform(size=n0 + n1)
    z = np.r_[np.full(n0, np.nan), rng.uniform(0.5, 2.0, n1)]
    zt = np.where(np.isnan(z), truth, z)
    y = np.exp(-x) * zt
    s = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return MFDataset(np.column_stack([x, z]), np.zeros((n0 + n1, 0)), s, y)


def test_config_errors():
    with pytest.raises(ContractError):
        CalibrationConfig(())
    with pytest.raises(ContractError):
        CalibrationConfig((1,), prior_mean=(0.0,))


def test_all_hf_rejected(rng):
    d = _data(rng)
    d2 = MFDataset(d.X[:6], d.T[:6], np.zeros(6, int), d.y[:6])
    with pytest.raises(ContractError):
        calibrate(CalibrationConfig((1,)), d2)


def test_recovers_zeta_on_easy_problem(rng):
    model, est = calibrate(CalibrationConfig((1,)), _data(rng), num_restarts=6, random_state=0)
    assert est[0] == pytest.approx(1.3, abs=0.15)


def test_probabilistic_returns_posterior(rng):
    model, post = calibrate(CalibrationConfig((1,), mode="probabilistic"), _data(rng),
                            num_restarts=2, num_pass_train=4, random_state=0)
    assert isinstance(post, CalibrationPosterior)
    assert np.all(post.tau > 0)


def test_zero_spread_matches_deterministic_loss(rng):
    d = _data(rng)
    M, _, sc = d.matrix()
    kw = dict(source_column=sc, calibration_ids=[1], num_restarts=1, maxiter=10, random_state=0)
    det = LatentGP(**kw).fit(M, d.y)
    prob = LatentGP(calibration_mode="probabilistic", num_pass_train=3, **kw).fit(M, d.y)
    keep = np.ones(prob.n_params_, bool)
    keep[prob._slices["zeta_logtau"]] = False
    theta = prob.theta_
    eps = {"zeta": torch.zeros((3, 1))}
    lp = prob.loss_at(theta, eps=eps)
    ld = det.loss_at(theta[keep])
    assert lp == pytest.approx(ld, rel=1e-8, abs=1e-10)


def test_raw_prior_is_standardized(rng):
    d = _data(rng)
    M, _, sc = d.matrix()
    m = LatentGP(source_column=sc, calibration_ids=[1], calibration_prior=[(1.0, 0.2)], num_restarts=1,
                 maxiter=5).fit(M, d.y)
    mean, std = m._cal_prior()
    assert mean[0] == pytest.approx((1.0 - m.z_loc_[0]) / m.z_scale_[0])
    assert std[0] == pytest.approx(0.2 / m.z_scale_[0])
