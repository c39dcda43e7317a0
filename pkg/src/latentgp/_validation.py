"""Input validation helpers."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import ContractError


def parse_qual_dict(text):
    """Parse ``"col:levels,col:levels"`` into a dict of ints."""
    out = {}
    if text is None or str(text).strip() == "":
        return out
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        parts = tok.split(":")
        if len(parts) != 2:
            raise ContractError(f"bad qual-dict token {tok!r}; expected col:levels")
        try:
            col, lev = int(parts[0]), int(parts[1])
        except ValueError:
            raise ContractError(f"bad qual-dict token {tok!r}; expected integers") from None
        if col in out:
            raise ContractError(f"column {col} listed twice in qual-dict")
        out[col] = lev
    return out


def check_design(X, n_features=None, nan_ok=()):
    """2-D float array; NaN allowed only in the ``nan_ok`` columns."""
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=False, ensure_2d=False)
    except ValueError as exc:
        raise ContractError(str(exc)) from None
    if X.ndim == 1:
        X = X[:, None]
    if n_features is not None and X.shape[1] != n_features:
        raise ContractError(f"expected {n_features} columns, got {X.shape[1]}")
    if np.isinf(X).any():
        raise ContractError("input contains infinite values")
    bad = np.isnan(X)
    if len(nan_ok):
        bad[:, list(nan_ok)] = False
    if bad.any():
        raise ContractError("input contains NaN outside the calibration columns")
    return X


def check_target(y, n):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != n:
        raise ContractError(f"y has {y.shape[0]} entries for {n} rows")
    if not np.all(np.isfinite(y)):
        raise ContractError("y contains non-finite values")
    return y


def check_levels(X, qual_dict):
    for col, lev in qual_dict.items():
        v = X[:, col]
        if np.any(v != np.round(v)) or np.any(v < 0) or np.any(v >= lev):
            raise ContractError(f"column {col}: level indices must be integers in [0, {lev})")
