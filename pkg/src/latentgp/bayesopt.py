"""Cost-aware single- and multi-fidelity Bayesian optimization.

Responses are handled internally in a "larger is better" orientation: when
minimizing, the model is fit to -y and every acquisition is computed on that
scale. Histories and incumbents are reported in the caller's orientation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .exceptions import ContractError
from .model import LatentGP

log = logging.getLogger(__name__)

TAU_FLOOR = 1e-12
IMPROVE_TOL = 1e-12


@dataclass
class BOConfig:
    costs: dict
    max_cost: float = 40000.0
    stall_limit: int = 50
    maximize: bool = False
    pool_size: int = 2000
    n_polish: int = 5
    polish_maxiter: int = 15
    interval_score: bool = True
    acquisition: str = "composite"  # composite | ei
    model_params: dict = field(default_factory=dict)
    refit_restarts: int | None = None
    max_iter: int | None = None

    def __post_init__(self):
        if not isinstance(self.costs, dict):
            self.costs = {j: float(c) for j, c in enumerate(self.costs)}
        if any(c <= 0 for c in self.costs.values()):
            raise ContractError("every source cost must be positive")
        if self.max_cost <= 0 or self.stall_limit < 0 or self.pool_size < 1:
            raise ContractError("max_cost and pool_size must be positive, stall_limit non-negative")
        if self.acquisition not in ("composite", "ei"):
            raise ContractError(f"unknown acquisition {self.acquisition!r}")


@dataclass
class BOState:
    X: np.ndarray
    s: np.ndarray
    y: np.ndarray
    maximize: bool = False
    cost: float = 0.0
    stall: int = 0
    log: list = field(default_factory=list)
    aborted: str | None = None
    theta: np.ndarray | None = None

    def g(self):
        """Responses in the internal larger-is-better orientation."""
        return self.y if self.maximize else -self.y

    def best_g(self, j):
        m = self.s == j
        return float(self.g()[m].max()) if m.any() else -np.inf

    def incumbent(self, j=0):
        """Best observed response of source ``j`` in the caller's orientation."""
        b = self.best_g(j)
        return b if self.maximize else -b

    def incumbent_x(self, j=0):
        m = np.flatnonzero(self.s == j)
        return self.X[m[np.argmax(self.g()[m])]]


# ------------------------------------------------------------------ sources


class AnalyticSource:
    """Query adapter over a benchmark problem (noisy by default)."""

    def __init__(self, problem, seed=0, with_noise=True):
        from . import benchmarks

        self._bm = benchmarks
        self.problem = problem
        self.rng = np.random.default_rng([seed, 31337])
        self.with_noise = with_noise
        self.ranges = problem.ranges
        self.levels = dict(problem.qual_dict)

    @property
    def sources(self):
        return sorted(self.problem.sources)

    def query(self, j, x):
        y = self._bm.evaluate(self.problem, j, np.asarray(x, float))
        sd = self.problem.noise.get(j, 0.0)
        if self.with_noise and sd > 0:
            y = y + sd * self.rng.standard_normal()
        return float(y)


class TableSource:
    """Finite candidate tables per source; queried rows are removed."""

    def __init__(self, tables, levels=None):
        self.tables = {j: (np.array(X, dtype=float), np.array(y, dtype=float)) for j, (X, y) in tables.items()}
        self.levels = dict(levels or {})
        allX = np.concatenate([t[0] for t in self.tables.values()])
        self.ranges = tuple(zip(allX.min(axis=0), allX.max(axis=0)))

    @property
    def sources(self):
        return sorted(self.tables)

    def pool(self, j):
        return self.tables[j][0]

    def query(self, j, x):
        X, y = self.tables[j]
        if len(X) == 0:
            raise ContractError(f"source {j} has no rows left")
        i = int(np.argmin(np.sum((X - np.asarray(x, float)) ** 2, axis=1)))
        out = float(y[i])
        self.tables[j] = (np.delete(X, i, axis=0), np.delete(y, i))
        return out


# -------------------------------------------------------------- acquisition


def _design_rows(U, j, multi):
    U = np.atleast_2d(U)
    return np.column_stack([U, np.full(len(U), float(j))]) if multi else U


def _acq_values(U, j, state, model, cfg, multi):
    mu, tau = model.predict(_design_rows(U, j, multi), return_std=True)
    tau = np.maximum(tau, TAU_FLOOR)
    best = state.best_g(j)
    O = cfg.costs[j]
    if cfg.acquisition == "ei":
        z = (mu - best) / tau
        return ((mu - best) * norm.cdf(z) + tau * norm.pdf(z)) / O
    if j == 0:
        return (mu - best) / O
    return tau * norm.pdf((best - mu) / tau) / O


def acquisition(u, j, state: BOState, model, cfg: BOConfig) -> float:
    """Acquisition of candidate ``u`` on source ``j`` (HF is source 0)."""
    multi = getattr(model, "n_sources_", 1) > 1
    return float(_acq_values(np.atleast_2d(u), j, state, model, cfg, multi)[0])


def candidate_pool(ranges, levels, n, seed):
    d = len(ranges)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        U = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed)).random(n)
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    X = lo + U * (hi - lo)
    for col, lev in (levels or {}).items():
        X[:, col] = np.minimum(np.floor(U[:, col] * lev), lev - 1)
    return X


def _polish(x0, j, state, model, cfg, ranges, levels, multi):
    cont = [c for c in range(len(ranges)) if c not in (levels or {})]
    cont = [c for c in cont if ranges[c][1] > ranges[c][0]]
    if not cont:
        return x0, None
    lo = np.array([ranges[c][0] for c in cont])
    hi = np.array([ranges[c][1] for c in cont])
    span = hi - lo

    def rows(V):
        X = np.repeat(x0[None, :], len(V), axis=0)
        X[:, cont] = lo + V * span
        return X

    def f_and_grad(v):
        # forward differences (scipy's default step), all rows in one model call
        h = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(v))
        h = np.where(v + h > 1.0, -h, h)
        V = np.vstack([v, v + np.diag(h)])
        a = -_acq_values(rows(V), j, state, model, cfg, multi)
        return a[0], (a[1:] - a[0]) / h

    v0 = (x0[cont] - lo) / span
    res = minimize(f_and_grad, v0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * len(cont),
                   options={"maxiter": cfg.polish_maxiter})
    x = x0.copy()
    x[cont] = lo + np.clip(res.x, 0, 1) * span
    return x, -float(res.fun)


def propose_next(state: BOState, model, cfg: BOConfig, ranges=None, levels=None, pools=None, seed=0):
    """Argmax of the acquisition over every source's candidates.

    ``pools`` maps source -> candidate array (no polishing); otherwise a
    quasi-random pool per source is drawn and its best candidates polished.
    Ties go to the lower source index, then the earlier candidate.
    Returns (u, j, value).
    """
    multi = getattr(model, "n_sources_", 1) > 1
    sources = sorted(cfg.costs)
    best = None
    for j in sources:
        if pools is not None:
            P = np.atleast_2d(np.asarray(pools.get(j, np.zeros((0, 0))), dtype=float))
            if P.size == 0:
                continue
            vals = _acq_values(P, j, state, model, cfg, multi)
            cands = list(zip(vals, range(len(P)), P))
        else:
            P = candidate_pool(ranges, levels, cfg.pool_size, [seed, j])
            vals = _acq_values(P, j, state, model, cfg, multi)
            cands = list(zip(vals, range(len(P)), P))
            top = np.argsort(-vals, kind="stable")[: cfg.n_polish]
            for r, i in enumerate(top):
                x, v = _polish(P[i].copy(), j, state, model, cfg, ranges, levels, multi)
                if v is not None:
                    cands.append((v, len(P) + r, x))
        for v, i, x in cands:
            key = (-v, j, i)
            if best is None or key < best[0]:
                best = (key, x, j, v)
    if best is None:
        raise ContractError("empty candidate pool")
    return best[1].copy(), best[2], float(best[3])


# --------------------------------------------------------------------- loop


def _fit(state, cfg, seed, multi, qual_dict):
    params = dict(cfg.model_params)
    restarts = cfg.refit_restarts or max(1, int(params.get("num_restarts", 32)) // 4)
    params.setdefault("interval_score", cfg.interval_score)
    params["random_state"] = seed
    qd = dict(qual_dict or {})
    X = state.X
    if multi:
        X = np.column_stack([X, state.s.astype(float)])
        params["source_column"] = X.shape[1] - 1
    model = LatentGP(qual_dict=qd, **params)
    init = state.theta
    try:
        model.fit(X, state.g(), init_theta=init, num_restarts=restarts)
    except ContractError:
        # layout changed (e.g. a new source appeared); fit from scratch
        model.fit(X, state.g(), num_restarts=restarts)
    state.theta = model.theta_
    return model


def run_bo(source, init, cfg: BOConfig, seed=0, count_initial_cost=True) -> BOState:
    """Sequential refit / propose / query loop.

    ``init`` is (X, s, y). Stops once the accumulated cost exceeds
    ``cfg.max_cost`` or the stall counter exceeds ``cfg.stall_limit``.
    """
    X0, s0, y0 = init
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    s0 = np.asarray(s0, dtype=int)
    for j in set(s0.tolist()) | set(cfg.costs):
        if j not in cfg.costs:
            raise ContractError(f"no cost given for source {j}")
        if np.sum(s0 == j) < 2:
            raise ContractError(f"initial data needs at least 2 rows from source {j}")
    state = BOState(X0.copy(), s0.copy(), np.asarray(y0, dtype=float).copy(), cfg.maximize)
    if count_initial_cost:
        state.cost = float(sum(cfg.costs[int(j)] for j in s0))
    multi = len(cfg.costs) > 1
    levels = getattr(source, "levels", {})
    it = 0
    while True:
        if state.cost > cfg.max_cost or state.stall > cfg.stall_limit:
            break
        if cfg.max_iter is not None and it >= cfg.max_iter:
            break
        model = _fit(state, cfg, seed, multi, levels)
        pools = None
        if hasattr(source, "pool"):
            pools = {j: source.pool(j) for j in cfg.costs}
        u, j, a = propose_next(state, model, cfg, source.ranges, levels, pools, seed=[seed, it])
        try:
            yq = source.query(j, u)
        except Exception as exc:  # noqa: BLE001 - any query failure aborts the run
            state.aborted = f"query failed at iteration {it}: {exc}"
            log.warning(state.aborted)
            break
        before = state.best_g(0)
        state.X = np.vstack([state.X, u])
        state.s = np.append(state.s, j)
        state.y = np.append(state.y, yq)
        state.cost += cfg.costs[j]
        if state.best_g(0) > before + IMPROVE_TOL:
            state.stall = 0
        else:
            state.stall += 1
        state.log.append(
            {
                "iteration": it,
                "source": int(j),
                "x": u.tolist(),
                "y": float(yq),
                "acquisition": float(a),
                "incumbent": state.incumbent(0),
                "cost": state.cost,
            }
        )
        log.info("bo it %d source %d y %.5g incumbent %.5g cost %.0f", it, j, yq, state.incumbent(0), state.cost)
        it += 1
    return state


def initial_data(problem, counts, seed=0, with_noise=True):
    """(X, s, y) from the benchmark initial-sample counts."""
    from .benchmarks import sample

    Xs, ss, ys = [], [], []
    for j in sorted(counts):
        X, y = sample(problem, j, counts[j], seed, with_noise)
        Xs.append(X)
        ys.append(y)
        ss.append(np.full(len(y), j))
    return np.concatenate(Xs), np.concatenate(ss), np.concatenate(ys)
