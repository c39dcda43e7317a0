"""Covariance assembly, the MAP objective and Gaussian conditioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ContractError, NumericalSingularityError
from .kernels import KernelConfig, UnifiedInput, correlation_from_config
from .priors import PriorSpec, horseshoe_logpdf, lognormal_logpdf, normal_logpdf

JITTER_START = 1e-8
JITTER_STOP = 1e-4


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "single"  # single | per_source | fixed
    delta: tuple = (1e-6,)
    lb: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("single", "per_source", "fixed"):
            raise ContractError(f"unknown noise kind {self.kind!r}")
        d = tuple(float(v) for v in np.atleast_1d(self.delta))
        object.__setattr__(self, "delta", d)
        if self.lb <= 0 or any(v < self.lb for v in d):
            raise ContractError("every nugget must be >= lb_noise > 0")
        if self.kind != "per_source" and len(d) != 1:
            raise ContractError("single/fixed noise takes exactly one value")

    def per_row(self, source_of):
        d = np.asarray(self.delta)
        if self.kind == "per_source":
            return d[np.asarray(source_of, dtype=int)]
        return np.full(len(source_of), d[0])


@dataclass
class PredictiveDistribution:
    mean: np.ndarray
    covariance: np.ndarray  # full matrix, or marginal variances when ``marginal``
    includes_noise: bool = False
    marginal: bool = True

    @property
    def variance(self):
        return self.covariance if self.marginal else np.diag(self.covariance).copy()

    @property
    def std(self):
        return np.sqrt(np.maximum(self.variance, 0.0))


def jitter_ladder(mean_diag):
    out, j = [], JITTER_START
    while j <= JITTER_STOP * (1 + 1e-9):
        out.append(j * mean_diag)
        j *= 10.0
    return out


def cholesky_with_jitter(C):
    """Lower Cholesky factor of ``C`` (torch), escalating diagonal jitter on failure.

    Returns (L, jitter_added).
    """
    L, info = torch.linalg.cholesky_ex(C)
    if int(info) == 0:
        return L, 0.0
    md = float(torch.diagonal(C).mean().detach())
    ladder = jitter_ladder(abs(md) if md != 0 else 1.0)
    eye = torch.eye(C.shape[0], dtype=C.dtype)
    for j in ladder:
        L, info = torch.linalg.cholesky_ex(C + j * eye)
        if int(info) == 0:
            return L, j
    raise NumericalSingularityError("covariance is not positive definite after jitter escalation", ladder)


def gp_neg_log_marginal(Cd, r):
    """0.5*log|Cd| + 0.5*r' Cd^-1 r via the Cholesky factor (no 2*pi term)."""
    L, _ = cholesky_with_jitter(Cd)
    alpha = torch.cholesky_solve(r[:, None], L)[:, 0]
    return torch.log(torch.diagonal(L)).sum() + 0.5 * (r * alpha).sum()


def _stack_inputs(inputs):
    if isinstance(inputs, UnifiedInput):
        inputs = [inputs]
    S = np.array([np.atleast_1d(np.asarray(u.scaled, float)) for u in inputs])
    H = np.array([np.atleast_1d(np.asarray(u.latent, float)) for u in inputs])
    if S.ndim != 2 or H.ndim != 2:
        raise ContractError("all unified inputs must share one layout")
    return S, H


def _tt(a):
    return torch.tensor(np.asarray(a, dtype=float), dtype=torch.float64)


def build_covariance(cfg: KernelConfig, sigma2, inputs, noise: NoiseModel, source_of=None):
    """C_delta = sigma2 * R + diag(delta_source) for a list of unified inputs."""
    if not sigma2 > 0:
        raise ContractError("sigma2 must be positive")
    S, H = _stack_inputs(inputs)
    if S.shape[1] != cfg.omega.shape[0]:
        raise ContractError("omega length does not match the scaled block")
    n = S.shape[0]
    source_of = np.zeros(n, dtype=int) if source_of is None else np.asarray(source_of, dtype=int)
    with torch.no_grad():
        R = correlation_from_config(cfg, _tt(S), _tt(S), _tt(H), _tt(H))
        C = sigma2 * R + torch.diag(_tt(noise.per_row(source_of)))
        C = 0.5 * (C + C.T)
        _, jit = cholesky_with_jitter(C)
        if jit:
            C = C + jit * torch.eye(n, dtype=torch.float64)
    return C.numpy()


def log_map_loss(params, data, priors: PriorSpec | None = None) -> float:
    """MAP objective for an explicit parameter set.

    ``params``: dict with ``kernel`` (KernelConfig), ``sigma2``, ``noise``
    (NoiseModel) and optional ``mean`` (scalar or per-row vector).
    ``data``: dict with ``inputs`` (list of UnifiedInput), ``y`` and optional
    ``source``. ``priors=None`` means a flat prior (no prior term).
    """
    cfg = params["kernel"]
    y = _tt(data["y"])
    if y.numel() == 0:
        raise ContractError("empty dataset")
    src = data.get("source")
    src = np.zeros(len(y), dtype=int) if src is None else src
    C = _tt(build_covariance(cfg, params["sigma2"], data["inputs"], params["noise"], src))
    m = _tt(np.broadcast_to(np.asarray(params.get("mean", 0.0), float), (len(y),)))
    with torch.no_grad():
        val = gp_neg_log_marginal(C, y - m)
        if priors is not None:
            val = val - normal_logpdf(cfg.omega, priors.omega_mean, priors.omega_std)
            val = val - lognormal_logpdf(params["sigma2"], priors.sigma2_logmean, priors.sigma2_logstd)
            if params["noise"].kind != "fixed":
                val = val - horseshoe_logpdf(np.asarray(params["noise"].delta), priors.noise_scale)
            if "beta" in params:
                val = val - normal_logpdf(params["beta"], 0.0, priors.beta_std)
    return float(val)


def condition(Kxx_d, Kqx, Kqq_diag_or_full, m_x, m_q, y, full=False):
    """Gaussian conditioning in torch; returns (mean, var or cov)."""
    L, _ = cholesky_with_jitter(Kxx_d)
    alpha = torch.cholesky_solve((y - m_x)[:, None], L)[:, 0]
    mu = m_q + Kqx @ alpha
    V = torch.linalg.solve_triangular(L, Kqx.T, upper=False)
    if full:
        cov = Kqq_diag_or_full - V.T @ V
        return mu, 0.5 * (cov + cov.T)
    var = Kqq_diag_or_full - (V**2).sum(0)
    return mu, var


def predict(model, queries, include_noise=False, full_cov=False) -> PredictiveDistribution:
    """Posterior predictive distribution of a fitted model at raw query rows."""
    return model.predict_dist(queries, include_noise=include_noise, full_cov=full_cov)
