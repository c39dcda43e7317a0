"""Mean-function families and helpers for the polynomial bases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.polynomial import Polynomial

from .exceptions import ContractError

MEAN_KINDS = ("zero", "constant", "per_source", "polynomial", "ffnn")


@dataclass(frozen=True)
class MeanFunction:
    kind: str = "constant"
    degree: object = None  # polynomial: int or {source: int or None}
    layers: tuple = (4, 4)

    def __post_init__(self):
        if self.kind not in MEAN_KINDS:
            raise ContractError(f"unknown mean kind {self.kind!r}; expected one of {MEAN_KINDS}")

    def degrees(self, ds, ref_zero=True):
        """Polynomial degree per source (None = identically zero mean)."""
        if isinstance(self.degree, dict):
            out = [self.degree.get(j, self.degree.get(str(j))) for j in range(ds)]
            return [None if d is None or int(d) < 0 else int(d) for d in out]
        d = 2 if self.degree is None else int(self.degree)
        if ds == 1:
            return [d]
        return [None if (j == 0 and ref_zero) else d for j in range(ds)]


def poly_basis(S, degree):
    """Pure-power basis [1, s_i, s_i^2, ..., s_i^deg] over every column of ``S``."""
    cols = [torch.ones(S.shape[0], dtype=S.dtype)]
    for p in range(1, degree + 1):
        cols.extend(S[:, i] ** p for i in range(S.shape[1]))
    return torch.stack(cols, dim=1)


def n_poly_terms(d, degree):
    return 1 + d * degree


def poly_to_raw(coef, loc, scale, degree, y_scale=1.0):
    """Re-express a standardized-scale pure-power polynomial in raw input units.

    ``coef`` follows :func:`poly_basis` ordering. Returns (intercept, C) with
    ``C[i, p-1]`` the raw coefficient of ``x_i**p``; everything is multiplied
    by ``y_scale``.
    """
    coef = np.asarray(coef, dtype=float)
    loc, scale = np.atleast_1d(loc).astype(float), np.atleast_1d(scale).astype(float)
    d = len(loc)
    intercept = coef[0]
    C = np.zeros((d, degree))
    for i in range(d):
        c_std = np.zeros(degree + 1)
        for p in range(1, degree + 1):
            c_std[p] = coef[1 + (p - 1) * d + i]
        # s = (x - loc) / scale
        poly = Polynomial(c_std)(Polynomial([-loc[i] / scale[i], 1.0 / scale[i]]))
        c = np.zeros(degree + 1)
        c[: len(poly.coef)] = poly.coef
        intercept += c[0]
        C[i] = c[1:]
    return y_scale * intercept, y_scale * C
