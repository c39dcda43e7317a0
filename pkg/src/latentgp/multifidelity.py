"""Multi-source fusion: deterministic fits, ensemble moments and ensemble prediction."""

from __future__ import annotations

import numpy as np
import torch

from .data import MFDataset, augment_sources
from .exceptions import ContractError
from .gp import PredictiveDistribution
from .model import LatentGP

__all__ = [
    "augment_sources",
    "ensemble_moments",
    "ensemble_predict",
    "fit_deterministic_mf",
    "fit_probabilistic_mf",
    "EnsembleModel",
]

# A probabilistic LatentGP is the ensemble model: it stores the draw keys and
# combines members on prediction.
EnsembleModel = LatentGP


def ensemble_moments(means, covs):
    """(m_bar, C_bar) of a uniform mixture of Gaussians.

    m_bar = mean_k m_k and C_bar = mean_k [C_k + (m_k - m_bar)(m_k - m_bar)^T].
    Accepts numpy arrays or torch tensors.
    """
    if len(means) == 0 or len(means) != len(covs):
        raise ContractError("need one covariance per member and at least one member")
    if torch.is_tensor(means[0]):
        Ms, Cs = torch.stack(list(means)), torch.stack(list(covs))
        mbar = Ms.mean(0)
        dev = Ms - mbar
        return mbar, Cs.mean(0) + dev.T @ dev / len(means)
    Ms = np.asarray(means, dtype=float)
    Cs = np.asarray(covs, dtype=float)
    if Ms.ndim != 2 or Cs.shape != (Ms.shape[0], Ms.shape[1], Ms.shape[1]):
        raise ContractError("member means must be (M, n) and covariances (M, n, n)")
    mbar = Ms.mean(axis=0)
    dev = Ms - mbar
    return mbar, Cs.mean(axis=0) + dev.T @ dev / Ms.shape[0]


def mixture_marginals(mus, variances):
    """Mean and variance of a uniform mixture from member means/variances."""
    mus = np.asarray(mus, dtype=float)
    variances = np.asarray(variances, dtype=float)
    mbar = mus.mean(axis=0)
    var = (variances + mus**2).mean(axis=0) - mbar**2
    return mbar, np.maximum(var, 0.0)


def ensemble_predict(model: LatentGP, queries, Q=None, include_noise=False) -> PredictiveDistribution:
    """Marginal predictive distribution from ``Q`` ensemble members (default ``num_pass_pred``)."""
    if Q is not None and Q < 1:
        raise ContractError("Q must be >= 1")
    if Q is not None and Q > model.num_pass_pred:
        model.set_params(num_pass_pred=int(Q))
        model._cache = None
    return model.predict_dist(queries, include_noise=include_noise, Q=Q)


def _as_matrix(data):
    if isinstance(data, MFDataset):
        return data.matrix()
    raise ContractError("expected an MFDataset")


def _configure(config, data, **forced):
    M, qual, src_col = _as_matrix(data)
    params = dict(config or {})
    q = dict(params.pop("qual_dict", None) or {})
    q.update(qual)
    params.update(forced)
    model = LatentGP(qual_dict=q, source_column=src_col if data.ds > 1 else None, **params)
    if data.ds == 1:
        M = M[:, :-1]
    return model, M


def fit_deterministic_mf(config, data: MFDataset) -> LatentGP:
    """Fit one GP to all sources with a deterministic source embedding.

    ``config`` is a dict of :class:`LatentGP` parameters; with a single
    source this is an ordinary single-fidelity fit.
    """
    if data.ds < 1:
        raise ContractError("empty dataset")
    model, M = _configure(config, data, source_embedding="deterministic")
    return model.fit(M, data.y)


def fit_probabilistic_mf(config, data: MFDataset) -> LatentGP:
    """Fit the ensemble model with a probabilistic source embedding."""
    if data.ds < 2:
        raise ContractError("probabilistic source embedding needs at least two sources")
    model, M = _configure(config, data, source_embedding="probabilistic")
    return model.fit(M, data.y)
