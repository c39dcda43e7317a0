"""Correlation functions over mixed (scaled numeric + latent) inputs.

Numeric coordinates carry one log10 roughness ``omega_i`` each and enter as
``10**omega_i * dist_i``; latent coordinates (categorical embeddings ``h`` and
source embeddings ``z``) are learnt, so they enter unscaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .exceptions import ContractError

OMEGA_BOUNDS = (-10.0, 4.0)
FAMILIES = ("gaussian", "power_exponential", "matern")
MATERN_NUS = (0.5, 1.5, 2.5)


class UnifiedInput(NamedTuple):
    """One row of model input: the scaled block (x and calibration
    coordinates) and the unscaled latent block (h followed by z)."""

    scaled: np.ndarray
    latent: np.ndarray


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    power: float = 2.0
    nu: float = 2.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "omega", omega)
        lo, hi = OMEGA_BOUNDS
        if np.any(omega < lo) or np.any(omega > hi):
            raise ContractError(f"omega must lie in [{lo}, {hi}], got {omega}")
        if not 1.0 <= self.power <= 2.0:
            raise ContractError(f"power must lie in [1, 2], got {self.power}")
        if self.nu not in MATERN_NUS:
            raise ContractError(f"nu must be one of {MATERN_NUS}, got {self.nu}")


def _safe_sqrt(d2):
    # zero distances occur on the diagonal; keep the gradient finite there
    pos = d2 > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, d2, torch.ones_like(d2))), torch.zeros_like(d2))


def correlation(family, omega, xa, xb, la=None, lb=None, power=2.0, nu=2.5):
    """Correlation matrix between row sets ``a`` and ``b`` (torch, differentiable).

    ``xa``/``xb`` are the scaled blocks, ``la``/``lb`` the latent blocks (or None).
    """
    diff = xa[:, None, :] - xb[None, :, :]
    w = torch.pow(10.0, omega)
    if family == "power_exponential" and power != 2.0:
        scaled = (w * torch.abs(diff).clamp_min(1e-300) ** power).sum(-1)
    else:
        scaled = (w * diff**2).sum(-1)
    total = scaled
    if la is not None and la.shape[-1] > 0:
        total = total + ((la[:, None, :] - lb[None, :, :]) ** 2).sum(-1)

    if family in ("gaussian", "power_exponential"):
        return torch.exp(-total)
    d = _safe_sqrt(total)
    if nu == 0.5:
        return torch.exp(-d)
    if nu == 1.5:
        s = math.sqrt(3.0) * d
        return (1.0 + s) * torch.exp(-s)
    s = math.sqrt(5.0) * d
    return (1.0 + s + s**2 / 3.0) * torch.exp(-s)


def correlation_from_config(cfg: KernelConfig, xa, xb, la=None, lb=None):
    omega = torch.as_tensor(cfg.omega, dtype=torch.float64)
    return correlation(cfg.family, omega, xa, xb, la, lb, cfg.power, cfg.nu)


def eval_correlation(cfg: KernelConfig, a: UnifiedInput, b: UnifiedInput) -> float:
    """Correlation between two unified inputs."""
    sa, sb = np.atleast_1d(np.asarray(a.scaled, float)), np.atleast_1d(np.asarray(b.scaled, float))
    ha, hb = np.atleast_1d(np.asarray(a.latent, float)), np.atleast_1d(np.asarray(b.latent, float))
    if sa.shape != sb.shape or ha.shape != hb.shape:
        raise ContractError("inputs a and b have different layouts")
    if sa.shape[0] != cfg.omega.shape[0]:
        raise ContractError(
            f"kernel has {cfg.omega.shape[0]} roughness parameters but the scaled block has {sa.shape[0]} coordinates"
        )
    t = lambda v: torch.as_tensor(v, dtype=torch.float64)[None, :]
    r = correlation_from_config(cfg, t(sa), t(sb), t(ha), t(hb))
    return float(r[0, 0])
