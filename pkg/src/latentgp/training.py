"""Multi-restart MAP optimization, continuation over the noise floor,
leave-one-out residuals and the interval-score penalty."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .exceptions import ContractError, NumericalSingularityError, TrainingFailedError

log = logging.getLogger(__name__)

FAIL_VALUE = 1e10
DEFAULT_LADDER = (1e-2, 1e-3, 1e-4, 1e-6)


@dataclass
class OptimizerConfig:
    num_restarts: int = 32
    maxiter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-9
    jac: bool = True
    n_jobs: int = 1
    regularization: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.num_restarts < 1:
            raise ContractError("num_restarts must be >= 1")


@dataclass
class ContinuationSchedule:
    floors: tuple = DEFAULT_LADDER

    def __post_init__(self):
        f = np.asarray(self.floors, dtype=float)
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) >= 0):
            raise ContractError("continuation floors must be positive and strictly decreasing")
        object.__setattr__(self, "floors", tuple(float(v) for v in f))


@dataclass
class IntervalScoreConfig:
    v: float = 0.05
    eps: float = 0.08

    def __post_init__(self):
        if not 0 < self.v < 1:
            raise ContractError("v must lie in (0, 1)")
        if self.eps < 0:
            raise ContractError("eps must be non-negative")


@dataclass
class RestartRecord:
    index: int
    start: np.ndarray
    x: np.ndarray
    fun: float
    nit: int
    message: str
    failed: bool


@dataclass
class FitResult:
    x: np.ndarray
    fun: float
    index: int
    trace: list = field(default_factory=list)


class _Safe:
    """Wrap a loss so numerical failures become a large flat value."""

    def __init__(self, loss, jac):
        self.loss = loss
        self.jac = jac
        self.n_fail = 0

    def __call__(self, x):
        try:
            out = self.loss(x)
            f = out[0] if self.jac else out
            if not np.isfinite(f):
                raise FloatingPointError("non-finite loss")
            if self.jac and not np.all(np.isfinite(out[1])):
                raise FloatingPointError("non-finite gradient")
            return out
        except (NumericalSingularityError, FloatingPointError, RuntimeError, np.linalg.LinAlgError):
            self.n_fail += 1
            return (FAIL_VALUE, np.zeros_like(x)) if self.jac else FAIL_VALUE


def _uniform_sampler(bounds):
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ContractError("a start sampler is required when bounds are not finite")

    def sample(k, rng):
        return rng.uniform(lo, hi)

    return sample


def _clip(x, bounds):
    if bounds is None:
        return x
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    return np.clip(x, lo, hi)


def _run_restart(loss, bounds, cfg, seed, k, x0):
    safe = _Safe(loss, cfg.jac)
    x0 = _clip(np.asarray(x0, dtype=float), bounds)
    cb = None
    if hasattr(loss, "refresh"):
        rng_it = np.random.default_rng([seed, k, 1])
        loss.refresh(rng_it)

        def cb(xk, *args):
            loss.refresh(rng_it)

    res = minimize(
        safe,
        x0,
        jac=cfg.jac,
        method="L-BFGS-B",
        bounds=bounds,
        callback=cb,
        options={"maxiter": cfg.maxiter, "gtol": cfg.gtol, "ftol": cfg.ftol},
    )
    x = _clip(res.x, bounds)
    if hasattr(loss, "final_value"):
        try:
            fun = float(loss.final_value(x))
        except (NumericalSingularityError, FloatingPointError, RuntimeError):
            fun = math.inf
    else:
        fun = float(res.fun)
    failed = not np.isfinite(fun) or fun >= FAIL_VALUE
    return RestartRecord(k, x0, x, fun if not failed else math.inf, int(res.nit), str(res.message), failed)


def fit_map(loss, bounds, cfg: OptimizerConfig | None = None, seed=0, sampler=None, starts=None) -> FitResult:
    """Minimize ``loss`` from ``cfg.num_restarts`` starts with bounded L-BFGS-B.

    ``loss(x)`` returns ``(f, grad)`` when ``cfg.jac`` (else ``f``). Explicit
    ``starts`` take the first slots; the rest come from ``sampler(k, rng)``
    with ``rng = default_rng([seed, k])``. The restart with the lowest loss
    wins, ties going to the lower restart index.
    """
    cfg = cfg or OptimizerConfig()
    starts = [] if starts is None else list(starts)
    sampler = sampler or _uniform_sampler(bounds)
    n = max(cfg.num_restarts, len(starts))
    x0s = []
    for k in range(n):
        if k < len(starts):
            x0s.append(np.asarray(starts[k], dtype=float))
        else:
            x0s.append(np.asarray(sampler(k, np.random.default_rng([seed, k])), dtype=float))

    if cfg.n_jobs != 1 and n > 1:
        from joblib import Parallel, delayed

        trace = Parallel(n_jobs=cfg.n_jobs)(delayed(_run_restart)(loss, bounds, cfg, seed, k, x0s[k]) for k in range(n))
    else:
        trace = [_run_restart(loss, bounds, cfg, seed, k, x0s[k]) for k in range(n)]

    ok = [r for r in trace if not r.failed]
    if not ok:
        raise TrainingFailedError("all optimization restarts failed", [(r.index, r.message) for r in trace])
    best = min(ok, key=lambda r: (r.fun, r.index))
    log.debug("fit_map: best restart %d loss %.6g (%d/%d ok)", best.index, best.fun, len(ok), n)
    return FitResult(best.x.copy(), best.fun, best.index, trace)


def loo_residuals(C, r):
    """Closed-form leave-one-out residuals e_i = [C^-1 r]_i / [C^-1]_ii."""
    from scipy.linalg import cho_factor, cho_solve

    C = np.asarray(C, dtype=float)
    r = np.asarray(r, dtype=float)
    cf = cho_factor(C, lower=True)
    Cinv = cho_solve(cf, np.eye(len(r)))
    return cho_solve(cf, r) / np.diag(Cinv)


@dataclass
class ContinuationResult:
    x: np.ndarray
    floor: float
    index: int
    rungs: list  # (floor, FitResult or None, loo_mse)


def continuation_fit(loss_family, schedule: ContinuationSchedule, loo_mse, bounds, cfg=None, seed=0,
                     sampler=None, starts=None) -> ContinuationResult:
    """Solve a ladder of MAP problems indexed by a decreasing noise floor.

    ``loss_family(floor)`` gives the loss for a rung and ``loo_mse(floor, x)``
    the leave-one-out mean-squared error of its solution. The first rung uses
    all restarts; each later rung starts from the previous solution. The rung
    with the smallest LOO error is returned.
    """
    cfg = cfg or OptimizerConfig()
    rungs = []
    prev = None
    for i, floor in enumerate(schedule.floors):
        try:
            if prev is None:
                res = fit_map(loss_family(floor), bounds, cfg, seed, sampler, starts)
            else:
                one = OptimizerConfig(1, cfg.maxiter, cfg.gtol, cfg.ftol, cfg.jac, 1, cfg.regularization)
                res = fit_map(loss_family(floor), bounds, one, seed, sampler, starts=[prev])
            err = float(loo_mse(floor, res.x))
            prev = res.x
        except (TrainingFailedError, NumericalSingularityError) as exc:
            log.info("continuation rung %g failed: %s", floor, exc)
            res, err = None, math.inf
        rungs.append((floor, res, err))
    ok = [(err, i) for i, (f, res, err) in enumerate(rungs) if res is not None and np.isfinite(err)]
    if not ok:
        raise TrainingFailedError("every continuation rung failed", [(f, e) for f, _, e in rungs])
    _, best = min(ok)
    return ContinuationResult(rungs[best][1].x.copy(), rungs[best][0], best, rungs)


def normal_quantile(v):
    # two-decimal tabulated quantile (1.96 at v = 0.05)
    return round(float(norm.ppf(1.0 - v / 2.0)), 2)


def interval_score(mu, tau, y, v=0.05):
    """Mean interval score of central (1 - v) intervals mu +/- z*tau."""
    if not 0 < v < 1:
        raise ContractError("v must lie in (0, 1)")
    mu, tau, y = (np.asarray(a, dtype=float) for a in (mu, tau, y))
    z = normal_quantile(v)
    up, lo = mu + z * tau, mu - z * tau
    s = (up - lo) + (2.0 / v) * (lo - y) * (y < lo) + (2.0 / v) * (y - up) * (y > up)
    return float(np.mean(s))


def penalize(l_map, is_value, eps=0.08):
    """L + eps*|L|*IS (works on floats and torch scalars)."""
    return l_map + eps * abs(l_map) * is_value


def penalized_loss(model, X=None, y=None, isc: IntervalScoreConfig | None = None):
    """Interval-score penalized MAP loss of a fitted model at its estimated parameters."""
    isc = isc or IntervalScoreConfig()
    return model.loss_at(model.theta_, X, y, penalty=isc)
