"""Prior densities for MAP estimation.

Defaults: omega ~ N(-3, 3), beta ~ N(0, 1), embedding weights ~ N(0, 1),
sigma^2 ~ LogNormal(0, 1), nugget ~ half-horseshoe with scale 0.01.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# upper-bound constant of the horseshoe density, 1/sqrt(2 pi^3)
_HS_K = 1.0 / math.sqrt(2.0 * math.pi**3)


@dataclass(frozen=True)
class PriorSpec:
    omega_mean: float = -3.0
    omega_std: float = 3.0
    beta_std: float = 1.0
    latent_std: float = 1.0
    net_std: float = 1.0
    sigma2_logmean: float = 0.0
    sigma2_logstd: float = 1.0
    noise_scale: float = 0.01
    calibration_mean: float | tuple = 0.0
    calibration_std: float | tuple = 1.0


def normal_logpdf(x, mean, std):
    x = torch.as_tensor(x, dtype=torch.float64)
    std = torch.as_tensor(std, dtype=torch.float64)
    return (-0.5 * ((x - mean) / std) ** 2 - torch.log(std) - _LOG_SQRT_2PI).sum()


def lognormal_logpdf(x, logmean, logstd):
    x = torch.as_tensor(x, dtype=torch.float64)
    if torch.any(x <= 0):
        return torch.tensor(-math.inf, dtype=torch.float64)
    lx = torch.log(x)
    return (-0.5 * ((lx - logmean) / logstd) ** 2 - lx - math.log(logstd) - _LOG_SQRT_2PI).sum()


def horseshoe_logpdf(x, scale):
    """Surrogate half-horseshoe log-density ``log(K/s * log(1 + 2 (s/x)^2))``.

    The exact density has no closed form; the surrogate keeps the pole at zero
    and the Cauchy-like tail.
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    if torch.any(x <= 0):
        return torch.tensor(-math.inf, dtype=torch.float64)
    return (torch.log(torch.log1p(2.0 * (scale / x) ** 2)) + math.log(_HS_K / scale)).sum()


def sample_horseshoe(rng: np.random.Generator, scale, size=None):
    lam = np.abs(rng.standard_cauchy(size))
    return np.abs(scale * lam * rng.standard_normal(size))


def log_prior(params, priors: PriorSpec | None = None) -> float:
    """Sum of prior log-densities over the parameter groups present in ``params``.

    Recognised keys: ``omega``, ``sigma2``, ``noise``, ``beta``, ``latent``,
    ``net`` and ``calibration``. Out-of-support values give ``-inf``.
    """
    priors = priors or PriorSpec()
    total = torch.tensor(0.0, dtype=torch.float64)
    with torch.no_grad():
        if "omega" in params:
            total = total + normal_logpdf(params["omega"], priors.omega_mean, priors.omega_std)
        if "sigma2" in params:
            total = total + lognormal_logpdf(params["sigma2"], priors.sigma2_logmean, priors.sigma2_logstd)
        if "noise" in params:
            total = total + horseshoe_logpdf(params["noise"], priors.noise_scale)
        if "beta" in params:
            total = total + normal_logpdf(params["beta"], 0.0, priors.beta_std)
        if "latent" in params:
            total = total + normal_logpdf(params["latent"], 0.0, priors.latent_std)
        if "net" in params:
            total = total + normal_logpdf(params["net"], 0.0, priors.net_std)
        if "calibration" in params:
            total = total + normal_logpdf(params["calibration"], priors.calibration_mean, priors.calibration_std)
    value = float(total)
    return value if not math.isnan(value) else -math.inf
