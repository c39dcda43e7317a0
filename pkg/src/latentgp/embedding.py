"""Prior encodings and latent maps for categorical variables and data sources."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ContractError

ENCODINGS = ("onehot", "random", "per_variable")


@dataclass(frozen=True)
class CategoricalSpec:
    """Categorical column layout: ``qual_dict`` maps column index -> level count."""

    qual_dict: dict = field(default_factory=dict)
    source_column: int | None = None
    n_columns: int | None = None

    def __post_init__(self):
        qd = {int(k): int(v) for k, v in dict(self.qual_dict).items()}
        object.__setattr__(self, "qual_dict", dict(sorted(qd.items())))
        for col, lev in qd.items():
            if lev < 2:
                raise ContractError(f"column {col} declares {lev} levels; at least 2 are required")
            if col < 0 or (self.n_columns is not None and col >= self.n_columns):
                raise ContractError(f"categorical column {col} outside the dataset width")
        if self.source_column is not None and self.source_column in qd:
            raise ContractError("the source column cannot also be a categorical input column")

    @property
    def columns(self):
        return list(self.qual_dict)

    @property
    def levels(self):
        return [self.qual_dict[c] for c in self.qual_dict]

    @property
    def n_combinations(self):
        return int(np.prod(self.levels)) if self.qual_dict else 0


@dataclass(frozen=True)
class PriorEncoding:
    kind: str = "onehot"
    seed: int = 0
    width: int | None = None  # random-matrix width; defaults to sum of level counts

    def __post_init__(self):
        if self.kind not in ENCODINGS:
            raise ContractError(f"unknown encoding {self.kind!r}; expected one of {ENCODINGS}")


def _check_levels(levels, t):
    t = np.asarray(t, dtype=int)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape[1] != len(levels):
        raise ContractError(f"expected {len(levels)} categorical values per row, got {t.shape[1]}")
    lv = np.asarray(levels)
    if np.any(t < 0) or np.any(t >= lv[None, :]):
        raise ContractError("categorical level index out of range")
    return t


def random_rows(seed, combo_index, width):
    """Rows of the random prior matrix; row ``i`` depends only on (seed, i)."""
    out = np.empty((len(combo_index), width))
    for r, idx in enumerate(combo_index):
        out[r] = np.random.default_rng([int(seed), int(idx)]).standard_normal(width)
    return out


def encode_prior(spec: CategoricalSpec, enc: PriorEncoding, t):
    """Quantitative prior representation of level-index rows ``t``.

    Returns an (n, d_pi) array for the grouped one-hot and random kinds, and
    a list of per-variable (n, l_i) one-hot blocks for ``per_variable``.
    A single 1-D ``t`` gives 1-D output(s).
    """
    levels = spec.levels
    single = np.ndim(t) == 1
    t = _check_levels(levels, t)
    if enc.kind == "random":
        width = enc.width or int(sum(levels))
        idx = np.ravel_multi_index(tuple(t.T), tuple(levels))
        out = random_rows(enc.seed, idx, width)
        return out[0] if single else out
    blocks = [np.eye(l)[t[:, i]] for i, l in enumerate(levels)]
    if enc.kind == "per_variable":
        return [b[0] for b in blocks] if single else blocks
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


class FFNN:
    """Plain fully-connected network on a flat parameter vector.

    Hidden layers use ``activation``; the output layer is linear.
    """

    def __init__(self, sizes, activation="tanh"):
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.shapes = [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)

    def _act(self, x):
        if self.activation == "tanh":
            return torch.tanh(x)
        if self.activation == "identity":
            return x
        if self.activation == "sigmoid":
            return torch.sigmoid(x)
        raise ContractError(f"unknown activation {self.activation!r}")

    def forward(self, flat, x):
        pos = 0
        n_layers = len(self.shapes)
        for li, (a, b) in enumerate(self.shapes):
            W = flat[pos : pos + a * b].reshape(a, b)
            pos += a * b
            bias = flat[pos : pos + b]
            pos += b
            x = x @ W + bias
            if li < n_layers - 1:
                x = self._act(x)
        return x

    def init(self, rng):
        parts = []
        for a, b in self.shapes:
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(a), size=a * b))
            parts.append(np.zeros(b))
        return np.concatenate(parts) if parts else np.zeros(0)

    def pack(self, weights, biases):
        return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in zip(weights, biases)])


@dataclass
class EmbeddingMap:
    """``kind='linear'`` uses ``A`` (d_pi x dh); ``kind='ffnn'`` uses ``sizes`` and flat ``weights``."""

    kind: str = "linear"
    A: np.ndarray | None = None
    sizes: tuple = ()
    weights: np.ndarray | None = None
    activation: str = "tanh"

    @property
    def in_dim(self):
        return self.A.shape[0] if self.kind == "linear" else self.sizes[0]

    @property
    def out_dim(self):
        return self.A.shape[1] if self.kind == "linear" else self.sizes[-1]


def map_latent(emap: EmbeddingMap, pi):
    """Latent coordinates h for prior rows ``pi``."""
    pi = np.asarray(pi, dtype=float)
    single = pi.ndim == 1
    P = torch.as_tensor(np.atleast_2d(pi), dtype=torch.float64)
    if P.shape[1] != emap.in_dim:
        raise ContractError(f"embedding map expects width {emap.in_dim}, got {P.shape[1]}")
    with torch.no_grad():
        if emap.kind == "linear":
            h = P @ torch.as_tensor(emap.A, dtype=torch.float64)
        elif emap.kind == "ffnn":
            net = FFNN(emap.sizes, emap.activation)
            h = net.forward(torch.as_tensor(emap.weights, dtype=torch.float64), P)
        else:
            raise ContractError(f"unknown embedding map kind {emap.kind!r}")
    h = h.numpy()
    return h[0] if single else h


def n_tril(dz):
    return dz * (dz - 1) // 2


def softplus(x):
    return torch.nn.functional.softplus(x)


def heads_to_moments(out, dz, lb):
    """Split generator output (..., dz + dz + dz(dz-1)/2) into (mu, L)."""
    mu = out[..., :dz]
    diag = softplus(out[..., dz : 2 * dz]) + lb
    off = out[..., 2 * dz :]
    L = torch.diag_embed(diag)
    if dz > 1:
        r, c = torch.tril_indices(dz, dz, offset=-1)
        L = L.clone()
        L[..., r, c] = off
    return mu, L


class ProbabilisticEmbedding:
    """Generator network pi_s -> (mu_z, L_z) for the source latent variable."""

    def __init__(self, n_sources, dz=2, hidden=(5,), weights=None, lb=1e-6, activation="tanh"):
        self.n_sources = int(n_sources)
        self.dz = int(dz)
        self.lb = float(lb)
        self.net = FFNN([self.n_sources, *hidden, 2 * self.dz + n_tril(self.dz)], activation)
        if weights is None:
            weights = self.net.init(np.random.default_rng(0))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.net.n_params,):
            raise ContractError(f"generator expects {self.net.n_params} weights, got {weights.shape}")
        self.weights = weights

    def moments_t(self, flat, pi_s):
        return heads_to_moments(self.net.forward(flat, pi_s), self.dz, self.lb)

    def moments(self, pi_s):
        with torch.no_grad():
            P = torch.as_tensor(np.atleast_2d(np.asarray(pi_s, float)), dtype=torch.float64)
            mu, L = self.moments_t(torch.as_tensor(self.weights), P)
        if np.ndim(pi_s) == 1:
            return mu[0].numpy(), L[0].numpy()
        return mu.numpy(), L.numpy()


def sample_latent(pe: ProbabilisticEmbedding, pi_s, eps):
    """Reparameterized draw z = mu_z + L_z eps (``eps`` may be (dz,) or (k, dz))."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != pe.dz:
        raise ContractError(f"eps must have length {pe.dz}")
    mu, L = pe.moments(pi_s)
    return mu + eps @ L.T


def source_correlation(z, z2) -> float:
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z.shape != z2.shape:
        raise ContractError("latent vectors differ in length")
    return float(np.exp(-np.sum((z - z2) ** 2)))
