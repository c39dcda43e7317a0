"""The latent-variable GP estimator.

One object covers single-fidelity emulation with categorical inputs,
multi-source fusion (source column), calibration columns and the
probabilistic (ensemble) variants. Training works on standardized data;
predictions come back in raw units.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import means as _means
from ._validation import check_design, check_levels, check_target
from .embedding import FFNN, CategoricalSpec, PriorEncoding, encode_prior, heads_to_moments, n_tril
from .exceptions import ContractError
from .gp import PredictiveDistribution, cholesky_with_jitter, gp_neg_log_marginal
from .kernels import FAMILIES, OMEGA_BOUNDS, correlation
from .priors import PriorSpec, horseshoe_logpdf, lognormal_logpdf, normal_logpdf, sample_horseshoe
from .training import (
    ContinuationSchedule,
    IntervalScoreConfig,
    OptimizerConfig,
    continuation_fit,
    fit_map,
    normal_quantile,
    penalize,
)

torch.set_default_dtype(torch.float64)

_OM_LO, _OM_HI = OMEGA_BOUNDS
_FINAL_KEY = 104729
_PRED_KEY = 7919


def _omega(u):
    return _OM_LO + (_OM_HI - _OM_LO) * torch.sigmoid(u)


def _omega_inv(w):
    p = (np.asarray(w, float) - _OM_LO) / (_OM_HI - _OM_LO)
    return np.log(p) - np.log1p(-p)


def _t(a):
    return torch.as_tensor(np.asarray(a, dtype=float), dtype=torch.float64)


class _Design:
    """Tensors describing a block of rows in model coordinates."""

    def __init__(self, Sx, Zc, hf, P, src, ds):
        self.Sx = Sx
        self.Zc = Zc
        self.hf = hf
        self.P = P
        self.src = src
        self.ds = ds
        self.n = Sx.shape[0]


class _Objective:
    def __init__(self, model, D, y, floor, penalty=None, eps=None, prior=True):
        self.model = model
        self.D = D
        self.y = y
        self.floor = floor
        self.penalty = penalty
        self.eps = eps
        self.prior = prior

    def value_t(self, theta):
        return self.model._loss_t(theta, self.D, self.y, self.floor, self.eps, self.penalty, self.prior)

    def __call__(self, x):
        theta = torch.tensor(x, dtype=torch.float64, requires_grad=True)
        f = self.value_t(theta)
        f.backward()
        return float(f.detach()), theta.grad.numpy().copy()


class _StochasticObjective(_Objective):
    """Ensemble objective: draws are refreshed once per optimizer iteration."""

    def __init__(self, model, D, y, floor, penalty=None, seed=0, prior=True):
        super().__init__(model, D, y, floor, penalty, None, prior)
        self.M = model.num_pass_train
        self.final_eps = model._draw_eps(np.random.default_rng([seed, _FINAL_KEY]), self.M)
        self.eps = self.final_eps

    def refresh(self, rng):
        self.eps = self.model._draw_eps(rng, self.M)

    def final_value(self, x):
        with torch.no_grad():
            return float(
                self.model._loss_t(_t(x), self.D, self.y, self.floor, self.final_eps, self.penalty, self.prior)
            )


class LatentGP(RegressorMixin, BaseEstimator):
    """Gaussian process with learned latent embeddings of categorical inputs.

    Column roles in ``X``: ``qual_dict`` lists categorical columns (level
    indices), ``source_column`` the data-source indicator, ``calibration_ids``
    the calibration-parameter columns (NaN on HF rows). Remaining columns are
    numeric.
    """

    def __init__(
        self,
        qual_dict=None,
        source_column=None,
        calibration_ids=None,
        hf_sources=(0,),
        kernel="gaussian",
        power=2.0,
        nu=2.5,
        encoding="onehot",
        encoding_seed=0,
        embedding="linear",
        embedding_dim=2,
        embedding_layers=(),
        source_embedding="deterministic",
        source_dim=2,
        source_layers=(5,),
        mean="constant",
        poly_degree=None,
        mean_layers=(4, 4),
        multiple_noise=None,
        fix_noise=False,
        fixed_noise_val=1e-5,
        lb_noise=1e-8,
        standardize_y=True,
        latent_prior_std=None,
        priors=None,
        calibration_mode="deterministic",
        calibration_prior=None,
        num_pass_train=20,
        num_pass_pred=30,
        num_restarts=32,
        maxiter=500,
        n_jobs=1,
        continuation=None,
        interval_score=False,
        is_eps=0.08,
        is_v=0.05,
        regularization=(0.0, 0.0),
        random_state=0,
    ):
        self.qual_dict = qual_dict
        self.source_column = source_column
        self.calibration_ids = calibration_ids
        self.hf_sources = hf_sources
        self.kernel = kernel
        self.power = power
        self.nu = nu
        self.encoding = encoding
        self.encoding_seed = encoding_seed
        self.embedding = embedding
        self.embedding_dim = embedding_dim
        self.embedding_layers = embedding_layers
        self.source_embedding = source_embedding
        self.source_dim = source_dim
        self.source_layers = source_layers
        self.mean = mean
        self.poly_degree = poly_degree
        self.mean_layers = mean_layers
        self.multiple_noise = multiple_noise
        self.fix_noise = fix_noise
        self.fixed_noise_val = fixed_noise_val
        self.lb_noise = lb_noise
        self.standardize_y = standardize_y
        self.latent_prior_std = latent_prior_std
        self.priors = priors
        self.calibration_mode = calibration_mode
        self.calibration_prior = calibration_prior
        self.num_pass_train = num_pass_train
        self.num_pass_pred = num_pass_pred
        self.num_restarts = num_restarts
        self.maxiter = maxiter
        self.n_jobs = n_jobs
        self.continuation = continuation
        self.interval_score = interval_score
        self.is_eps = is_eps
        self.is_v = is_v
        self.regularization = regularization
        self.random_state = random_state

    # ------------------------------------------------------------------ setup
    def _check_config(self):
        if self.kernel not in FAMILIES:
            raise ContractError(f"unknown kernel {self.kernel!r}; expected one of {FAMILIES}")
        if self.encoding not in ("onehot", "random", "per_variable"):
            raise ContractError(f"unknown encoding {self.encoding!r}")
        if self.embedding not in ("linear", "ffnn"):
            raise ContractError(f"unknown embedding map {self.embedding!r}")
        if self.encoding == "per_variable" and self.embedding != "linear":
            raise ContractError("per-variable encoding supports the linear map only")
        if self.source_embedding not in ("deterministic", "probabilistic"):
            raise ContractError(f"unknown source embedding {self.source_embedding!r}")
        if self.calibration_mode not in ("deterministic", "probabilistic"):
            raise ContractError(f"unknown calibration mode {self.calibration_mode!r}")
        _means.MeanFunction(self.mean)
        if self.lb_noise <= 0:
            raise ContractError("lb_noise must be positive")

    def _setup(self, X, y):
        self._check_config()
        cal = [int(c) for c in (self.calibration_ids or [])]
        X = check_design(X, nan_ok=cal)
        n, p = X.shape
        y = check_target(y, n)
        spec = CategoricalSpec(self.qual_dict or {}, self.source_column, p)
        self.spec_ = spec
        self.n_features_in_ = p
        self.cal_cols_ = cal
        if any(c in spec.qual_dict or c == self.source_column or not 0 <= c < p for c in cal):
            raise ContractError("calibration columns must be numeric columns of X")
        roles = set(spec.columns) | set(cal) | ({self.source_column} if self.source_column is not None else set())
        self.num_cols_ = [c for c in range(p) if c not in roles]
        check_levels(X, spec.qual_dict)
        if self.source_column is not None:
            s = X[:, self.source_column]
            if np.any(s != np.round(s)) or s.min() < 0:
                raise ContractError("source column must hold non-negative integer indices")
            self.n_sources_ = int(s.max()) + 1
        else:
            self.n_sources_ = 1
        src = self._sources(X)
        self.hf_ = tuple(int(j) for j in self.hf_sources)
        hf_rows = np.isin(src, self.hf_)

        Xn = X[:, self.num_cols_]
        self.x_loc_ = Xn.mean(axis=0) if len(Xn) else np.zeros(0)
        sd = Xn.std(axis=0, ddof=1) if n > 1 else np.ones(Xn.shape[1])
        self.x_scale_ = np.where(sd > 0, sd, 1.0)
        if cal:
            lf = X[~hf_rows][:, cal]
            if lf.shape[0] == 0:
                raise ContractError("calibration needs at least one row from a non-HF source")
            if np.isnan(lf).any():
                raise ContractError("non-HF rows must record every calibration column")
            if not np.isnan(X[hf_rows][:, cal]).all():
                raise ContractError("HF rows must leave calibration columns empty (NaN)")
            if not hf_rows.any():
                raise ContractError("calibration needs at least one HF row")
            self.z_loc_ = lf.mean(axis=0)
            zs = lf.std(axis=0, ddof=1) if lf.shape[0] > 1 else np.ones(len(cal))
            self.z_scale_ = np.where(zs > 0, zs, 1.0)
        else:
            self.z_loc_ = np.zeros(0)
            self.z_scale_ = np.ones(0)
        if self.standardize_y:
            self.y_loc_ = float(y.mean())
            ys = float(y.std(ddof=1)) if n > 1 else 1.0
            self.y_scale_ = ys if ys > 0 else 1.0
        else:
            self.y_loc_, self.y_scale_ = 0.0, 1.0
        self._make_layout()
        return X, y

    def _sources(self, X):
        if self.source_column is None:
            return np.zeros(X.shape[0], dtype=int)
        return X[:, self.source_column].astype(int)

    @property
    def multi_noise_(self):
        mn = self.multiple_noise
        if mn is None:
            mn = self.n_sources_ > 1
        return bool(mn) and self.n_sources_ > 1

    @property
    def probabilistic_(self):
        return (self.source_embedding == "probabilistic" and self.n_sources_ > 1) or (
            self.calibration_mode == "probabilistic" and len(self.cal_cols_) > 0
        )

    def _latent_std(self):
        if self.latent_prior_std is not None:
            return float(self.latent_prior_std)
        base = (self.priors or PriorSpec()).latent_std
        return 0.1 if self.spec_.n_combinations > 200 else base

    def _dpi(self):
        levels = self.spec_.levels
        if not levels:
            return 0
        return int(sum(levels))

    def _make_layout(self):
        """Ordered (name, size, bounds) description of the unconstrained vector."""
        ds = self.n_sources_
        dx, dzeta = len(self.num_cols_), len(self.cal_cols_)
        dh = int(self.embedding_dim)
        dz = int(self.source_dim)
        lay = [("omega", dx + dzeta, (-12.0, 12.0)), ("log_sigma2", 1, (-15.0, 15.0))]
        if not self.fix_noise:
            lay.append(("noise", ds if self.multi_noise_ else 1, (-30.0, 3.0)))
        self._mean_net = None
        self._degrees = None
        d_sc = dx + dzeta
        if self.mean == "constant":
            lay.append(("beta", 1, (None, None)))
        elif self.mean == "per_source":
            if ds > 1:
                lay.append(("beta", ds - 1, (None, None)))
        elif self.mean == "polynomial":
            self._degrees = _means.MeanFunction("polynomial", self.poly_degree).degrees(ds)
            nb = sum(_means.n_poly_terms(d_sc, d) for d in self._degrees if d is not None)
            if nb:
                lay.append(("beta", nb, (None, None)))
        elif self.mean == "ffnn":
            self._mean_net = FFNN([d_sc + self._latent_width() + (dz if ds > 1 else 0), *self.mean_layers, 1])
            lay.append(("mean_net", self._mean_net.n_params, (None, None)))
        self._emb_net = None
        if self.spec_.qual_dict:
            if self.encoding == "per_variable":
                lay.append(("latent", sum(l * dh for l in self.spec_.levels), (None, None)))
            elif self.embedding == "linear":
                lay.append(("latent", self._dpi() * dh, (None, None)))
            else:
                self._emb_net = FFNN([self._dpi(), *self.embedding_layers, dh])
                lay.append(("latent_net", self._emb_net.n_params, (None, None)))
        self._src_net = None
        if ds > 1:
            if self.source_embedding == "deterministic":
                lay.append(("source", ds * dz, (None, None)))
            else:
                self._src_net = FFNN([ds, *self.source_layers, 2 * dz + n_tril(dz)])
                lay.append(("source_net", self._src_net.n_params, (None, None)))
        if dzeta:
            lay.append(("zeta", dzeta, (-20.0, 20.0)))
            if self.calibration_mode == "probabilistic":
                lay.append(("zeta_logtau", dzeta, (-12.0, 3.0)))
        self.layout_ = lay
        self._slices = {}
        pos = 0
        for name, size, _ in lay:
            self._slices[name] = slice(pos, pos + size)
            pos += size
        self.n_params_ = pos
        self.bounds_ = [b for _, size, b in lay for _ in range(size)]

    def _latent_width(self):
        if not self.spec_.qual_dict:
            return 0
        if self.encoding == "per_variable":
            return len(self.spec_.levels) * int(self.embedding_dim)
        return int(self.embedding_dim)

    def _cal_prior(self):
        dz = len(self.cal_cols_)
        pri = self.priors or PriorSpec()
        if self.calibration_prior is None:
            return np.full(dz, pri.calibration_mean, float), np.full(dz, pri.calibration_std, float)
        cp = np.asarray(self.calibration_prior, dtype=float).reshape(-1, 2)
        if cp.shape[0] == 1 and dz > 1:
            cp = np.repeat(cp, dz, axis=0)
        mean = (cp[:, 0] - self.z_loc_) / self.z_scale_
        std = cp[:, 1] / self.z_scale_
        return mean, std

    # ----------------------------------------------------------- design rows
    def _design(self, X, allow_missing_source=False):
        X = np.asarray(X, dtype=float)
        src = self._sources(X)
        if src.size and (src.min() < 0 or src.max() >= self.n_sources_):
            raise ContractError("source index outside the trained range")
        Sx = _t((X[:, self.num_cols_] - self.x_loc_) / self.x_scale_)
        if self.cal_cols_:
            Z = X[:, self.cal_cols_]
            hf = np.isin(src, self.hf_)
            if np.isnan(Z[~hf]).any():
                raise ContractError("non-HF rows must record every calibration column")
            if not np.isnan(Z[hf]).all():
                raise ContractError("HF rows carry recorded calibration values")
            Zs = np.where(np.isnan(Z), 0.0, (Z - self.z_loc_) / self.z_scale_)
            Zc, hfm = _t(Zs), torch.as_tensor(hf)
        else:
            Zc, hfm = _t(np.zeros((X.shape[0], 0))), torch.zeros(X.shape[0], dtype=torch.bool)
        P = None
        if self.spec_.qual_dict:
            T = X[:, self.spec_.columns].astype(int)
            enc = encode_prior(self.spec_, PriorEncoding(self.encoding, self.encoding_seed), T)
            P = [_t(b) for b in enc] if self.encoding == "per_variable" else _t(enc)
        return _Design(Sx, Zc, hfm, P, torch.as_tensor(src, dtype=torch.long), self.n_sources_)

    # ------------------------------------------------------------ parameters
    def _unpack(self, theta):
        return {name: theta[sl] for name, sl in self._slices.items()}

    def _draw_eps(self, rng, M):
        eps = {}
        if self.source_embedding == "probabilistic" and self.n_sources_ > 1:
            eps["z"] = _t(rng.standard_normal((M, self.n_sources_, int(self.source_dim))))
        if self.calibration_mode == "probabilistic" and self.cal_cols_:
            eps["zeta"] = _t(rng.standard_normal((M, len(self.cal_cols_))))
        return eps

    def _n_members(self, eps):
        if not eps:
            return 1
        return next(iter(eps.values())).shape[0]

    def _source_latent(self, p, k, eps):
        ds, dz = self.n_sources_, int(self.source_dim)
        if ds == 1:
            return None
        if self.source_embedding == "deterministic":
            return p["source"].reshape(ds, dz)
        mu, L = heads_to_moments(self._src_net.forward(p["source_net"], torch.eye(ds, dtype=torch.float64)), dz, 1e-6)
        if eps and "z" in eps:
            return mu + torch.einsum("sij,sj->si", L, eps["z"][k])
        return mu

    def _zeta(self, p, k, eps):
        z = p["zeta"]
        if self.calibration_mode == "probabilistic" and eps and "zeta" in eps:
            z = z + torch.exp(p["zeta_logtau"]) * eps["zeta"][k]
        return z

    def _categorical_latent(self, p, D):
        if D.P is None:
            return None
        dh = int(self.embedding_dim)
        if self.encoding == "per_variable":
            blocks, pos = [], 0
            for Pi, l in zip(D.P, self.spec_.levels):
                A = p["latent"][pos : pos + l * dh].reshape(l, dh)
                pos += l * dh
                blocks.append(Pi @ A)
            return torch.cat(blocks, dim=1)
        if self.embedding == "linear":
            return D.P @ p["latent"].reshape(self._dpi(), dh)
        return self._emb_net.forward(p["latent_net"], D.P)

    def _member(self, p, D, k, eps):
        """(scaled block, latent block, mean vector) of one ensemble member."""
        S = D.Sx
        if self.cal_cols_:
            zeta = self._zeta(p, k, eps)
            Zrow = torch.where(D.hf[:, None], zeta[None, :].expand(D.n, -1), D.Zc)
            S = torch.cat([S, Zrow], dim=1)
        lat = []
        h = self._categorical_latent(p, D)
        if h is not None:
            lat.append(h)
        zs = self._source_latent(p, k, eps)
        if zs is not None:
            lat.append(zs[D.src])
        Lb = torch.cat(lat, dim=1) if lat else torch.zeros((D.n, 0), dtype=torch.float64)
        m = self._mean_t(p, S, Lb, D)
        return S, Lb, m

    def _mean_t(self, p, S, Lb, D):
        n = D.n
        if self.mean == "zero":
            return torch.zeros(n, dtype=torch.float64)
        if self.mean == "constant":
            return p["beta"][0].expand(n)
        if self.mean == "per_source":
            if self.n_sources_ == 1:
                return torch.zeros(n, dtype=torch.float64)
            full = torch.cat([torch.zeros(1, dtype=torch.float64), p["beta"]])
            return full[D.src]
        if self.mean == "polynomial":
            m = torch.zeros(n, dtype=torch.float64)
            pos = 0
            for j, deg in enumerate(self._degrees):
                if deg is None:
                    continue
                nb = _means.n_poly_terms(S.shape[1], deg)
                coef = p["beta"][pos : pos + nb]
                pos += nb
                mask = D.src == j
                m = torch.where(mask, _means.poly_basis(S, deg) @ coef, m)
            return m
        return self._mean_net.forward(p["mean_net"], torch.cat([S, Lb], dim=1))[:, 0]

    def _noise_t(self, p, floor):
        if self.fix_noise:
            return torch.tensor([float(self.fixed_noise_val)], dtype=torch.float64)
        return floor + torch.exp(p["noise"])

    def _noise_rows(self, delta, src):
        return delta[src] if delta.numel() > 1 else delta.expand(src.shape[0])

    def _log_prior_t(self, p, floor):
        pri = self.priors or PriorSpec()
        lp = normal_logpdf(_omega(p["omega"]), pri.omega_mean, pri.omega_std)
        lp = lp + lognormal_logpdf(torch.exp(p["log_sigma2"]), pri.sigma2_logmean, pri.sigma2_logstd)
        if "noise" in p:
            lp = lp + horseshoe_logpdf(self._noise_t(p, floor), pri.noise_scale)
        if "beta" in p:
            lp = lp + normal_logpdf(p["beta"], 0.0, pri.beta_std)
        if "mean_net" in p:
            lp = lp + normal_logpdf(p["mean_net"], 0.0, pri.net_std)
        if "latent" in p:
            lp = lp + normal_logpdf(p["latent"], 0.0, self._latent_std())
        if "latent_net" in p:
            lp = lp + normal_logpdf(p["latent_net"], 0.0, pri.net_std)
        if "source" in p:
            lp = lp + normal_logpdf(p["source"], 0.0, pri.latent_std)
        if "source_net" in p:
            lp = lp + normal_logpdf(p["source_net"], 0.0, pri.net_std)
        if "zeta" in p:
            cm, cs = self._cal_prior()
            lp = lp + normal_logpdf(p["zeta"], _t(cm), _t(cs))
        return lp

    def _reg_t(self, p):
        l1, l2 = self.regularization or (0.0, 0.0)
        if not (l1 or l2):
            return 0.0
        parts = [p[k] for k in ("latent", "latent_net", "source", "source_net", "mean_net", "beta") if k in p]
        if not parts:
            return 0.0
        v = torch.cat(parts)
        return l1 * v.abs().sum() + l2 * (v**2).sum()

    def _train_moments(self, p, D, eps):
        """Ensemble mean and covariance (noise excluded) over the training rows."""
        om = _omega(p["omega"])
        s2 = torch.exp(p["log_sigma2"][0])
        ms, Cs = [], []
        for k in range(self._n_members(eps)):
            S, Lb, m = self._member(p, D, k, eps)
            R = correlation(self.kernel, om, S, S, Lb, Lb, self.power, self.nu)
            ms.append(m)
            Cs.append(s2 * R)
        if len(ms) == 1:
            return ms[0], Cs[0]
        mbar = torch.stack(ms).mean(0)
        dev = torch.stack(ms) - mbar
        Cbar = torch.stack(Cs).mean(0) + dev.T @ dev / len(ms)
        return mbar, Cbar

    def _loss_t(self, theta, D, y, floor, eps, penalty=None, prior=True):
        p = self._unpack(theta)
        mbar, Cbar = self._train_moments(p, D, eps)
        nd = self._noise_rows(self._noise_t(p, floor), D.src)
        Cd = Cbar + torch.diag(nd)
        r = y - mbar
        val = gp_neg_log_marginal(Cd, r)
        if prior:
            val = val - self._log_prior_t(p, floor)
        val = val + self._reg_t(p)
        if penalty is not None and penalty.eps > 0:
            L, _ = cholesky_with_jitter(Cd)
            alpha = torch.cholesky_solve(r[:, None], L)[:, 0]
            mu = mbar + Cbar @ alpha
            V = torch.linalg.solve_triangular(L, Cbar, upper=False)
            var = torch.diagonal(Cbar) - (V**2).sum(0) + nd
            tau = torch.sqrt(var.clamp_min(1e-12))
            zq = normal_quantile(penalty.v)
            up, lo = mu + zq * tau, mu - zq * tau
            isv = ((up - lo) + (2.0 / penalty.v) * (torch.relu(lo - y) + torch.relu(y - up))).mean()
            val = penalize(val, isv, penalty.eps)
        return val

    # --------------------------------------------------------------- starts
    def _start(self, k, rng):
        x = np.zeros(self.n_params_)
        pri = self.priors or PriorSpec()
        sl = self._slices
        floor = self._fit_floor
        if k == 0:
            x[sl["omega"]] = _omega_inv(np.full(sl["omega"].stop - sl["omega"].start, pri.omega_mean))
            x[sl["log_sigma2"]] = pri.sigma2_logmean
            if "noise" in sl:
                x[sl["noise"]] = math.log(0.01)
            if "zeta" in sl:
                x[sl["zeta"]] = np.clip(self._cal_prior()[0], -19, 19)
        else:
            n_om = sl["omega"].stop - sl["omega"].start
            om = np.clip(rng.normal(pri.omega_mean, pri.omega_std, n_om), _OM_LO + 0.5, _OM_HI - 0.5)
            x[sl["omega"]] = _omega_inv(om)
            x[sl["log_sigma2"]] = rng.normal(pri.sigma2_logmean, pri.sigma2_logstd)
            if "noise" in sl:
                nn = sl["noise"].stop - sl["noise"].start
                d = np.clip(sample_horseshoe(rng, pri.noise_scale, nn), 1e-6, 1.0)
                x[sl["noise"]] = np.log(np.maximum(d - floor, 1e-12) + 1e-12)
            if "beta" in sl:
                x[sl["beta"]] = rng.normal(0.0, pri.beta_std, sl["beta"].stop - sl["beta"].start)
            if "zeta" in sl:
                cm, cs = self._cal_prior()
                x[sl["zeta"]] = np.clip(rng.normal(cm, cs), -19, 19)
        if "zeta_logtau" in sl:
            x[sl["zeta_logtau"]] = math.log(0.1)
        # latent maps are always drawn at random: A = 0 is a stationary point
        if "latent" in sl:
            x[sl["latent"]] = rng.normal(0.0, self._latent_std(), sl["latent"].stop - sl["latent"].start)
        if "source" in sl:
            x[sl["source"]] = rng.normal(0.0, pri.latent_std, sl["source"].stop - sl["source"].start)
        for name, net in (("latent_net", self._emb_net), ("source_net", self._src_net), ("mean_net", self._mean_net)):
            if name in sl:
                x[sl[name]] = net.init(rng)
        return x

    # ------------------------------------------------------------------ fit
    def _objective(self, D, y, floor, penalty=None, prior=True):
        if self.probabilistic_:
            return _StochasticObjective(self, D, y, floor, penalty, int(self.random_state), prior)
        return _Objective(self, D, y, floor, penalty, None, prior)

    def _opt_cfg(self, num_restarts=None):
        return OptimizerConfig(
            num_restarts=int(num_restarts or self.num_restarts),
            maxiter=int(self.maxiter),
            n_jobs=int(self.n_jobs),
            regularization=tuple(self.regularization or (0.0, 0.0)),
        )

    def fit(self, X, y, init_theta=None, num_restarts=None):
        """Estimate all parameters by MAP; ``init_theta`` adds warm starts."""
        X, y = self._setup(X, y)
        self.X_train_ = X
        self.y_train_raw_ = y
        D = self._design(X)
        yt = _t((y - self.y_loc_) / self.y_scale_)
        penalty = IntervalScoreConfig(self.is_v, self.is_eps) if self.interval_score else None
        seed = int(self.random_state)
        starts = [] if init_theta is None else [np.asarray(t, float) for t in np.atleast_2d(init_theta)]
        for s in starts:
            if s.shape != (self.n_params_,):
                raise ContractError(f"warm start has {s.shape} entries, expected {self.n_params_}")
        cfg = self._opt_cfg(num_restarts)
        if self.continuation:
            sched = ContinuationSchedule(tuple(self.continuation))
            self._fit_floor = sched.floors[0]

            def family(floor):
                return self._objective(D, yt, floor, penalty)

            def loo(floor, x):
                return self._loo_mse(_t(x), D, yt, floor)

            res = continuation_fit(family, sched, loo, self.bounds_, cfg, seed, self._start, starts)
            self.theta_ = res.x
            self.floor_ = res.floor
            self.fit_trace_ = res
            self.loss_ = float(self._objective(D, yt, res.floor, penalty)(res.x)[0])
        else:
            self._fit_floor = float(self.lb_noise)
            res = fit_map(self._objective(D, yt, self.lb_noise, penalty), self.bounds_, cfg, seed, self._start, starts)
            self.theta_ = res.x
            self.floor_ = float(self.lb_noise)
            self.fit_trace_ = res
            self.loss_ = float(res.fun)
        self._cache = None
        return self

    def _loo_mse(self, theta, D, y, floor):
        with torch.no_grad():
            p = self._unpack(theta)
            mbar, Cbar = self._train_moments(p, D, self._fixed_eps(self.num_pass_train, _FINAL_KEY))
            Cd = Cbar + torch.diag(self._noise_rows(self._noise_t(p, floor), D.src))
            L, _ = cholesky_with_jitter(Cd)
            Cinv = torch.cholesky_inverse(L)
            e = (Cinv @ (y - mbar)) / torch.diagonal(Cinv)
        return float((e**2).mean())

    def _fixed_eps(self, M, key):
        if not self.probabilistic_:
            return None
        return self._draw_eps(np.random.default_rng([int(self.random_state), key]), M)

    # ---------------------------------------------------------- evaluation
    def _train_design(self):
        D = self._design(self.X_train_)
        yt = _t((self.y_train_raw_ - self.y_loc_) / self.y_scale_)
        return D, yt

    def loss_at(self, theta, X=None, y=None, penalty=None, prior=True, eps=None):
        """MAP loss (optionally penalized) at an unconstrained vector ``theta``.

        Ensemble models use the fixed selection draws unless ``eps`` is given.
        """
        check_is_fitted(self, "theta_")
        if X is None:
            D, yt = self._train_design()
        else:
            X = check_design(X, self.n_features_in_, self.cal_cols_)
            D = self._design(X)
            yt = _t((check_target(y, X.shape[0]) - self.y_loc_) / self.y_scale_)
        if eps is None:
            eps = self._fixed_eps(self.num_pass_train, _FINAL_KEY)
        with torch.no_grad():
            return float(self._loss_t(_t(theta), D, yt, self.floor_, eps, penalty, prior))

    def loss_and_grad(self, theta, eps=None, penalty=None, prior=True):
        """Loss and autograd gradient on the training data (gradient checks)."""
        check_is_fitted(self, "theta_")
        D, yt = self._train_design()
        if eps is None:
            eps = self._fixed_eps(self.num_pass_train, _FINAL_KEY)
        return _Objective(self, D, yt, self.floor_, penalty, eps, prior)(np.asarray(theta, float))

    def params(self, theta=None):
        """Constrained parameter values in model (standardized) units."""
        check_is_fitted(self, "theta_")
        with torch.no_grad():
            p = self._unpack(_t(self.theta_ if theta is None else theta))
            out = {
                "omega": _omega(p["omega"]).numpy(),
                "sigma2": float(torch.exp(p["log_sigma2"][0])),
                "noise": self._noise_t(p, self.floor_).numpy(),
            }
            for k in ("beta", "latent", "source", "zeta"):
                if k in p:
                    out[k] = p[k].numpy().copy()
            if "zeta_logtau" in p:
                out["zeta_tau"] = torch.exp(p["zeta_logtau"]).numpy()
        return out

    @property
    def noise_(self):
        """Estimated nugget(s) in raw response units (variance)."""
        return self.params()["noise"] * self.y_scale_**2

    # ---------------------------------------------------------- prediction
    def _members_cache(self):
        if getattr(self, "_cache", None) is not None:
            return self._cache
        D, yt = self._train_design()
        p = self._unpack(_t(self.theta_))
        eps = self._fixed_eps(self.num_pass_pred, _PRED_KEY)
        om = _omega(p["omega"])
        s2 = torch.exp(p["log_sigma2"][0])
        delta = self._noise_t(p, self.floor_)
        members = []
        with torch.no_grad():
            for k in range(self._n_members(eps)):
                S, Lb, m = self._member(p, D, k, eps)
                C = s2 * correlation(self.kernel, om, S, S, Lb, Lb, self.power, self.nu)
                Cd = C + torch.diag(self._noise_rows(delta, D.src))
                L, _ = cholesky_with_jitter(Cd)
                alpha = torch.cholesky_solve((yt - m)[:, None], L)[:, 0]
                members.append((S, Lb, L, alpha))
        self._cache = (p, eps, om, s2, delta, members)
        return self._cache

    def predict_dist(self, X, include_noise=False, full_cov=False, Q=None) -> PredictiveDistribution:
        check_is_fitted(self, "theta_")
        X = check_design(X, self.n_features_in_, self.cal_cols_)
        check_levels(X, self.spec_.qual_dict)
        Dq = self._design(X)
        p, eps, om, s2, delta, members = self._members_cache()
        if Q is not None:
            members = members[: int(Q)]
        mus, vs = [], []
        with torch.no_grad():
            for k, (S, Lb, L, alpha) in enumerate(members):
                Sq, Lq, mq = self._member(p, Dq, k, eps)
                Kqx = s2 * correlation(self.kernel, om, Sq, S, Lq, Lb, self.power, self.nu)
                mu = mq + Kqx @ alpha
                V = torch.linalg.solve_triangular(L, Kqx.T, upper=False)
                if full_cov:
                    Kqq = s2 * correlation(self.kernel, om, Sq, Sq, Lq, Lq, self.power, self.nu)
                    cov = Kqq - V.T @ V
                    cov = 0.5 * (cov + cov.T)
                    if include_noise:
                        cov = cov + torch.diag(self._noise_rows(delta, Dq.src))
                    vs.append(cov)
                else:
                    var = (s2 - (V**2).sum(0)).clamp_min(0.0)
                    if include_noise:
                        var = var + self._noise_rows(delta, Dq.src)
                    vs.append(var)
                mus.append(mu)
            M = len(mus)
            mu_bar = torch.stack(mus).mean(0)
            if full_cov:
                dev = torch.stack(mus) - mu_bar
                cov = torch.stack(vs).mean(0) + dev.T @ dev / M
            else:
                cov = (torch.stack(vs) + torch.stack(mus) ** 2).mean(0) - mu_bar**2
                cov = cov.clamp_min(0.0)
        mean = mu_bar.numpy() * self.y_scale_ + self.y_loc_
        cov = cov.numpy() * self.y_scale_**2
        return PredictiveDistribution(mean, cov, bool(include_noise), not full_cov)

    def predict(self, X, return_std=False, include_noise=False):
        pd = self.predict_dist(X, include_noise=include_noise)
        return (pd.mean, pd.std) if return_std else pd.mean

    # ------------------------------------------------------------ reports
    def calibration_estimates(self):
        """Raw-unit calibration estimates: dict with ``mean`` and (prob mode) ``std``."""
        check_is_fitted(self, "theta_")
        if not self.cal_cols_:
            raise ContractError("model has no calibration columns")
        pr = self.params()
        out = {"mean": self.z_loc_ + self.z_scale_ * pr["zeta"]}
        if "zeta_tau" in pr:
            out["std"] = self.z_scale_ * pr["zeta_tau"]
        return out

    def source_positions(self, eps=None):
        """Latent source coordinates z (posterior means in probabilistic mode)."""
        check_is_fitted(self, "theta_")
        if self.n_sources_ == 1:
            return np.zeros((1, 0))
        with torch.no_grad():
            p = self._unpack(_t(self.theta_))
            zs = self._source_latent(p, 0, eps)
        return zs.numpy()

    def latent_positions(self, variable=None):
        """Latent coordinates of categorical levels.

        ``variable=None``: (combinations, h) over every level combination.
        With a categorical column index: the (l_i, dh) positions of that
        variable's levels. Joint encodings only allow this when the model
        has a single categorical variable, where combinations are levels.
        """
        check_is_fitted(self, "theta_")
        spec = self.spec_
        if not spec.qual_dict:
            raise ContractError("model has no categorical inputs")
        dh = int(self.embedding_dim)
        p = self._unpack(_t(self.theta_))
        if variable is not None:
            if variable not in spec.qual_dict:
                raise ContractError(f"column {variable} is not categorical")
            if self.encoding != "per_variable":
                if len(spec.qual_dict) > 1:
                    raise ContractError(
                        "per-variable latent positions need the per_variable encoding "
                        "when there is more than one categorical variable"
                    )
                return self.latent_positions()[1]
            pos = 0
            for col, l in spec.qual_dict.items():
                if col == variable:
                    return p["latent"][pos : pos + l * dh].reshape(l, dh).detach().numpy().copy()
                pos += l * dh
        combos = np.array(np.unravel_index(np.arange(spec.n_combinations), spec.levels)).T
        enc = encode_prior(spec, PriorEncoding(self.encoding, self.encoding_seed), combos)
        P = [_t(b) for b in enc] if self.encoding == "per_variable" else _t(enc)
        D = _Design(torch.zeros((len(combos), 0), dtype=torch.float64), None, None, P, None, self.n_sources_)
        with torch.no_grad():
            h = self._categorical_latent(p, D)
        return combos, h.numpy()

    def mean_coefficients(self, source):
        """Raw-unit polynomial mean of one source: (intercept, C[i, p-1] for x_i**p).

        The response offset is not included, so differences between sources
        give the model-form error directly.
        """
        check_is_fitted(self, "theta_")
        if self.mean != "polynomial":
            raise ContractError("mean_coefficients needs the polynomial mean")
        beta = self.params().get("beta", np.zeros(0))
        d_sc = len(self.num_cols_) + len(self.cal_cols_)
        loc = np.concatenate([self.x_loc_, self.z_loc_])
        scale = np.concatenate([self.x_scale_, self.z_scale_])
        pos = 0
        for j, deg in enumerate(self._degrees):
            if deg is None:
                if j == source:
                    return 0.0, np.zeros((d_sc, 0))
                continue
            nb = _means.n_poly_terms(d_sc, deg)
            if j == source:
                return _means.poly_to_raw(beta[pos : pos + nb], loc, scale, deg, self.y_scale_)
            pos += nb
        raise ContractError(f"unknown source {source}")

    def mean_constants(self):
        """Per-source mean constants in raw units (constant/per-source means)."""
        check_is_fitted(self, "theta_")
        pr = self.params()
        if self.mean == "constant":
            return np.full(self.n_sources_, pr["beta"][0] * self.y_scale_ + self.y_loc_)
        if self.mean == "per_source":
            b = np.concatenate([[0.0], pr.get("beta", np.zeros(0))])
            return b * self.y_scale_ + self.y_loc_
        if self.mean == "zero":
            return np.full(self.n_sources_, self.y_loc_)
        return None

    def loo_residuals(self):
        """Closed-form leave-one-out residuals at the fitted parameters (raw units)."""
        check_is_fitted(self, "theta_")
        D, yt = self._train_design()
        with torch.no_grad():
            p = self._unpack(_t(self.theta_))
            mbar, Cbar = self._train_moments(p, D, self._fixed_eps(self.num_pass_train, _FINAL_KEY))
            Cd = Cbar + torch.diag(self._noise_rows(self._noise_t(p, self.floor_), D.src))
        from .training import loo_residuals

        return loo_residuals(Cd.numpy(), (yt - mbar).numpy()) * self.y_scale_

    # -------------------------------------------------------- persistence
    def fitted_state(self):
        check_is_fitted(self, "theta_")
        return {
            "theta": [float(v) for v in self.theta_],
            "floor": float(self.floor_),
            "loss": float(self.loss_),
        }

    def restore(self, X, y, state):
        """Rebuild a fitted model from training data and stored parameters."""
        X, y = self._setup(X, y)
        self.X_train_ = X
        self.y_train_raw_ = y
        theta = np.asarray(state["theta"], dtype=float)
        if theta.shape != (self.n_params_,):
            raise ContractError("stored parameter vector does not match the configuration")
        self.theta_ = theta
        self.floor_ = float(state["floor"])
        self._fit_floor = self.floor_
        self.loss_ = float(state.get("loss", float("nan")))
        self._cache = None
        return self

    def __getstate__(self):
        st = self.__dict__.copy()
        st["_cache"] = None
        return st
