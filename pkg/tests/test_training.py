import numpy as np
import pytest
import torch

from latentgp import TrainingFailedError
from latentgp.training import (
    ContinuationSchedule,
    OptimizerConfig,
    continuation_fit,
    fit_map,
    interval_score,
    loo_residuals,
    normal_quantile,
    penalize,
)


def quad(x):
    return float((x[0] - 3) ** 2), np.array([2 * (x[0] - 3)])


def rosen(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return float(f), g


def test_convex_quadratic():
    res = fit_map(quad, [(-10, 10)], OptimizerConfig(num_restarts=5), seed=0)
    assert res.x[0] == pytest.approx(3.0, abs=1e-6)


def test_rosenbrock():
    res = fit_map(rosen, [(-2, 2), (-2, 2)], OptimizerConfig(num_restarts=32, gtol=1e-12, ftol=1e-15), seed=1)
    assert rosen(res.x)[0] < 1e-8
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-4)


def test_determinism():
    cfg = OptimizerConfig(num_restarts=6)
    a = fit_map(rosen, [(-2, 2), (-2, 2)], cfg, seed=5)
    b = fit_map(rosen, [(-2, 2), (-2, 2)], cfg, seed=5)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.index == b.index


def test_failing_restarts_are_skipped():
    calls = {"n": 0}

    def sometimes(x):
        calls["n"] += 1
        if x[0] < 0:
            raise np.linalg.LinAlgError("boom")
        return quad(x)

    res = fit_map(sometimes, [(-10, 10)], OptimizerConfig(num_restarts=8), seed=2)
    assert res.x[0] == pytest.approx(3.0, abs=1e-5)


def test_all_fail():
    def bad(x):
        raise np.linalg.LinAlgError("nope")

    with pytest.raises(TrainingFailedError) as err:
        fit_map(bad, [(-1, 1)], OptimizerConfig(num_restarts=3), seed=0)
    assert len(err.value.diagnostics) == 3


def test_loo_closed_form_vs_refits(rng):
    for n in (4, 8, 12):
        X = rng.uniform(size=(n, 2))
        d2 = ((X[:, None] - X[None]) ** 2).sum(-1)
        C = np.exp(-3 * d2) + 1e-3 * np.eye(n)
        r = rng.normal(size=n)
        got = loo_residuals(C, r)
        want = np.empty(n)
        for i in range(n):
            k = np.delete(np.arange(n), i)
            pred = C[i, k] @ np.linalg.solve(C[np.ix_(k, k)], r[k])
            want[i] = r[i] - pred
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)


def test_continuation_warm_start_and_selection():
    # loss family with minimum drifting with the floor; LOO prefers the second rung
    def family(floor):
        c = -np.log10(floor)

        def f(x):
            return float((x[0] - c) ** 2), np.array([2 * (x[0] - c)])

        return f

    def loo(floor, x):
        return abs(x[0] - 3.0)

    res = continuation_fit(family, ContinuationSchedule((1e-2, 1e-3, 1e-4)), loo, [(-10, 10)],
                           OptimizerConfig(num_restarts=3), seed=0)
    assert res.floor == 1e-3
    assert res.x[0] == pytest.approx(3.0, abs=1e-5)


def test_schedule_must_decrease():
    from latentgp import ContractError

    with pytest.raises(ContractError):
        ContinuationSchedule((1e-3, 1e-2))


def test_quantile_is_two_decimals():
    assert normal_quantile(0.05) == 1.96


def test_interval_score_hand_case():
    assert interval_score([0.0], [1.0], [3.0]) == pytest.approx(45.52, abs=1e-10)


def test_interval_score_inside_is_width(rng):
    mu = rng.normal(size=10)
    tau = rng.uniform(0.5, 1, size=10)
    y = mu + 0.1 * tau
    assert interval_score(mu, tau, y) == pytest.approx(np.mean(2 * 1.96 * tau))


def test_penalize():
    assert penalize(-10.0, 2.0, 0.08) == pytest.approx(-8.4)
    assert penalize(-10.0, 2.0, 0.0) == -10.0
    assert penalize(7.0, 0.0, 0.08) == 7.0
    t = penalize(torch.tensor(-10.0), torch.tensor(2.0))
    assert float(t) == pytest.approx(-8.4)
