"""Multi-source dataset container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError


@dataclass
class MFDataset:
    """Row-stacked data from ``ds`` sources; source 0 is the reference (HF).

    ``X`` holds numeric columns (calibration columns included, NaN where not
    recorded), ``T`` the categorical level indices, ``s`` the source index.
    """

    X: np.ndarray
    T: np.ndarray
    s: np.ndarray
    y: np.ndarray
    levels: tuple = ()

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = self.X.shape[0]
        self.T = np.asarray(self.T, dtype=int).reshape(n, -1)
        self.s = np.asarray(self.s, dtype=int).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not (len(self.s) == len(self.y) == n):
            raise ContractError("X, T, s and y must have the same number of rows")
        if n and (self.s.min() < 0 or set(np.unique(self.s)) != set(range(self.s.max() + 1))):
            raise ContractError("source indices must be contiguous from 0")
        if not self.levels and self.T.shape[1]:
            self.levels = tuple(int(v) + 1 for v in self.T.max(axis=0))
        self.levels = tuple(int(v) for v in self.levels)

    @property
    def n(self):
        return len(self.y)

    @property
    def ds(self):
        return int(self.s.max()) + 1 if self.n else 0

    @property
    def counts(self):
        return np.bincount(self.s, minlength=self.ds)

    def source(self, j):
        m = self.s == j
        return self.X[m], self.T[m], self.y[m]

    def matrix(self):
        """Single design matrix ``[X | T | s]`` plus the column roles it implies."""
        dx, dt = self.X.shape[1], self.T.shape[1]
        M = np.column_stack([self.X, self.T.astype(float), self.s.astype(float)])
        qual = {dx + i: l for i, l in enumerate(self.levels)}
        return M, qual, dx + dt


def augment_sources(datasets, levels=None) -> MFDataset:
    """Stack ``[(X, T, y), ...]`` into one dataset with a source column.

    ``T`` may be None when there are no categorical inputs.
    """
    if not datasets:
        raise ContractError("no datasets given")
    Xs, Ts, ys, ss = [], [], [], []
    layout = None
    for j, item in enumerate(datasets):
        X, T, y = item
        X = np.asarray(X, dtype=float)
        X = X.reshape(len(X), -1) if X.ndim != 2 else X
        y = np.asarray(y, dtype=float).ravel()
        T = np.zeros((len(y), 0), dtype=int) if T is None else np.asarray(T, dtype=int).reshape(len(y), -1)
        if X.shape[0] != len(y):
            raise ContractError(f"dataset {j}: X has {X.shape[0]} rows but y has {len(y)}")
        if layout is None:
            layout = (X.shape[1], T.shape[1])
        elif (X.shape[1], T.shape[1]) != layout:
            raise ContractError(f"dataset {j} has layout {(X.shape[1], T.shape[1])}, expected {layout}")
        Xs.append(X)
        Ts.append(T)
        ys.append(y)
        ss.append(np.full(len(y), j))
    T = np.concatenate(Ts)
    if levels is None and T.shape[1]:
        levels = tuple(int(v) + 1 for v in T.max(axis=0))
    return MFDataset(np.concatenate(Xs), T, np.concatenate(ss), np.concatenate(ys), tuple(levels or ()))
