"""Accuracy metrics and global sensitivity analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .exceptions import ContractError, MetricUndefinedError
from .training import interval_score


def _std(y):
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise MetricUndefinedError("need at least two responses for a sample standard deviation")
    sd = float(np.std(y, ddof=1))
    if not sd > 0:
        raise MetricUndefinedError("responses have zero standard deviation")
    return sd


def nrmse(y_true, mu):
    y_true = np.asarray(y_true, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    if y_true.shape != mu.shape or y_true.size == 0:
        raise ContractError("y_true and mu must be equal-length and nonempty")
    return float(np.sqrt(np.mean((y_true - mu) ** 2)) / _std(y_true))


def nis(y_true, mu, tau, v=0.05, scale=None):
    """Interval score normalized by the sample std of ``y_true`` (or ``scale``)."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    tau = np.asarray(tau, dtype=float).ravel()
    if not (y_true.shape == mu.shape == tau.shape) or y_true.size == 0:
        raise ContractError("y_true, mu and tau must be equal-length and nonempty")
    if np.any(tau < 0):
        raise ContractError("tau must be non-negative")
    sd = _std(y_true) if scale is None else float(scale)
    return interval_score(mu, tau, y_true, v) / sd


@dataclass
class SensitivityReport:
    main: np.ndarray
    total: np.ndarray
    N: int
    seed: int
    s_cat: dict = field(default_factory=dict)
    constant_output: bool = False
    names: tuple = ()

    def rows(self):
        names = self.names or tuple(f"x{i}" for i in range(len(self.main)))
        out = [(n, float(s), float(t)) for n, s, t in zip(names, self.main, self.total)]
        return out

    def table(self):
        lines = ["input,main,total"]
        lines += [f"{n},{s:.6f},{t:.6f}" for n, s, t in self.rows()]
        for k, v in self.s_cat.items():
            lines.append(f"s_cat[{k}],{v:.6f},")
        return "\n".join(lines)


def _base_matrices(ranges, levels, N, seed):
    d = len(ranges)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        U = qmc.Sobol(2 * d, scramble=True, seed=np.random.default_rng(seed)).random(N)
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)

    def to_x(u):
        x = lo + u * (hi - lo)
        for col, lev in (levels or {}).items():
            x[:, col] = np.minimum(np.floor(u[:, col] * lev), lev - 1)
        return x

    return to_x(U[:, :d]), to_x(U[:, d:])


def sobol_indices(f, ranges, N=2**14, seed=0, levels=None, names=()) -> SensitivityReport:
    """Main and total Sobol indices by the pick-freeze design.

    ``f`` maps an (n, d) raw input array to n outputs. ``levels`` maps
    categorical columns to level counts; those columns get level indices by
    binning the uniform draw. Main effects use the Saltelli estimator, totals
    the Jansen estimator.
    """
    ranges = [tuple(map(float, r)) for r in ranges]
    if any(not (np.isfinite(a) and np.isfinite(b)) for a, b in ranges):
        raise ContractError("ranges must be finite")
    d = len(ranges)
    A, B = _base_matrices(ranges, levels, N, seed)
    fA = np.asarray(f(A), dtype=float).ravel()
    fB = np.asarray(f(B), dtype=float).ravel()
    V = np.var(np.concatenate([fA, fB]))
    if not V > 1e-300:
        return SensitivityReport(np.zeros(d), np.zeros(d), N, seed, constant_output=True, names=tuple(names))
    S = np.zeros(d)
    ST = np.zeros(d)
    for i in range(d):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        fABi = np.asarray(f(ABi), dtype=float).ravel()
        S[i] = np.mean(fB * (fABi - fA)) / V
        ST[i] = 0.5 * np.mean((fA - fABi) ** 2) / V
    return SensitivityReport(S, ST, N, seed, names=tuple(names))


def s_cat_points(points):
    """Mean pairwise Euclidean distance among latent points."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 2:
        return 0.0
    return float(np.mean(pdist(P)))


def s_cat(model, variable):
    """Categorical sensitivity of column ``variable`` from its learned latent block."""
    if variable not in (model.spec_.qual_dict or {}):
        raise ContractError(f"column {variable} is not categorical")
    return s_cat_points(model.latent_positions(variable))
