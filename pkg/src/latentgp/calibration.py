"""Inverse estimation of calibration parameters shared by low-fidelity models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MFDataset
from .exceptions import ContractError
from .kernels import UnifiedInput
from .model import LatentGP


@dataclass(frozen=True)
class CalibrationConfig:
    calibration_ids: tuple
    mode: str = "deterministic"
    prior_mean: tuple | None = None  # raw units; None -> N(0, 1) on the standardized scale
    prior_std: tuple | None = None
    hf_sources: tuple = (0,)

    def __post_init__(self):
        if len(self.calibration_ids) < 1:
            raise ContractError("calibration needs at least one calibration column")
        if self.mode not in ("deterministic", "probabilistic"):
            raise ContractError(f"unknown calibration mode {self.mode!r}")
        if (self.prior_mean is None) != (self.prior_std is None):
            raise ContractError("give both prior mean and prior std, or neither")


@dataclass
class CalibrationPosterior:
    mu: np.ndarray
    tau: np.ndarray
    factor: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        if self.mu.shape != self.tau.shape:
            raise ContractError("mu and tau must have equal length")
        if np.any(self.tau <= 0):
            raise ContractError("tau must be positive")


def complete_inputs(row: UnifiedInput, cal_positions, zeta, is_hf: bool) -> UnifiedInput:
    """Fill the calibration coordinates of an HF row with ``zeta``.

    ``cal_positions`` index the calibration coordinates inside ``row.scaled``.
    LF rows pass through unchanged; HF rows must arrive with NaN there.
    """
    s = np.array(row.scaled, dtype=float, copy=True)
    pos = list(cal_positions)
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if len(zeta) != len(pos):
        raise ContractError(f"zeta has {len(zeta)} entries for {len(pos)} calibration columns")
    if not is_hf:
        return UnifiedInput(s, np.asarray(row.latent, float))
    if not np.all(np.isnan(s[pos])):
        raise ContractError("HF row already carries calibration values")
    s[pos] = zeta
    return UnifiedInput(s, np.asarray(row.latent, float))


def sample_zeta(post: CalibrationPosterior, eps):
    """zeta = mu + tau * eps (componentwise); a full factor is used when present."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != post.mu.shape[0]:
        raise ContractError(f"eps must have length {post.mu.shape[0]}")
    if post.factor is not None:
        return post.mu + eps @ np.asarray(post.factor).T
    return post.mu + post.tau * eps


def calibrate(config: CalibrationConfig, data: MFDataset, **model_params):
    """Fit the fused model with shared calibration parameters.

    Returns (model, estimates): deterministic mode gives a raw-unit array,
    probabilistic mode a :class:`CalibrationPosterior` in raw units.
    """
    if not isinstance(data, MFDataset):
        raise ContractError("calibrate expects an MFDataset")
    hf = np.isin(data.s, config.hf_sources)
    if not hf.any():
        raise ContractError("no HF rows")
    if hf.all():
        raise ContractError("all rows are HF; calibration needs LF rows")
    M, qual, src_col = data.matrix()
    prior = None
    if config.prior_mean is not None:
        prior = np.column_stack(
            [np.broadcast_to(config.prior_mean, (len(config.calibration_ids),)),
             np.broadcast_to(config.prior_std, (len(config.calibration_ids),))]
        )
    q = dict(model_params.pop("qual_dict", None) or {})
    q.update(qual)
    model = LatentGP(
        qual_dict=q,
        source_column=src_col,
        calibration_ids=list(config.calibration_ids),
        hf_sources=tuple(config.hf_sources),
        calibration_mode=config.mode,
        calibration_prior=prior,
        **model_params,
    )
    model.fit(M, data.y)
    est = model.calibration_estimates()
    if config.mode == "probabilistic":
        return model, CalibrationPosterior(est["mean"], est["std"])
    return model, est["mean"]
