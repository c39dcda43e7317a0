"""Analytic multi-fidelity test problems, sampling and the inter-source NRMSE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .data import MFDataset
from .exceptions import ContractError

# ----------------------------------------------------------------- formulas

BOREHOLE_NAMES = ("rw", "r", "Tu", "Hu", "Tl", "Hl", "L", "kw")
BOREHOLE_RANGES = (
    (0.05, 0.15),
    (100.0, 50000.0),
    (63070.0, 115600.0),
    (990.0, 1110.0),
    (63.1, 116.0),
    (700.0, 820.0),
    (1120.0, 1680.0),
    (9855.0, 12045.0),
)


def _bh_cols(X):
    X = np.atleast_2d(X)
    return [X[:, i] for i in range(8)]


def borehole_hf(X):
    rw, r, Tu, Hu, Tl, Hl, L, kw = _bh_cols(X)
    lg = np.log(r / rw)
    return 2 * np.pi * Tu * (Hu - Hl) / (lg * (1 + 2 * L * Tu / (lg * rw**2 * kw) + Tu / Tl))


def borehole_lf1(X):
    rw, r, Tu, Hu, Tl, Hl, L, kw = _bh_cols(X)
    lg = np.log(r / rw)
    return 2 * np.pi * Tu * (Hu - 0.8 * Hl) / (lg * (1 + 1 * L * Tu / (lg * rw**2 * kw) + Tu / Tl))


def borehole_lf2(X):
    rw, r, Tu, Hu, Tl, Hl, L, kw = _bh_cols(X)
    lg = np.log(r / rw)
    return 2 * np.pi * Tu * (Hu - Hl) / (lg * (1 + 8 * L * Tu / (lg * rw**2 * kw) + 0.75 * Tu / Tl))


def borehole_lf3(X):
    rw, r, Tu, Hu, Tl, Hl, L, kw = _bh_cols(X)
    lg = np.log(r / rw)
    return 2 * np.pi * Tu * (1.09 * Hu - Hl) / (np.log(4 * r / rw) * (1 + 3 * L * Tu / (lg * rw**2 * kw) + Tu / Tl))


def borehole_lf4(X):
    # same structure as LF3 with 1.05*Hu and ln(2r/rw) in front
    rw, r, Tu, Hu, Tl, Hl, L, kw = _bh_cols(X)
    lg = np.log(r / rw)
    return 2 * np.pi * Tu * (1.05 * Hu - Hl) / (np.log(2 * r / rw) * (1 + 3 * L * Tu / (lg * rw**2 * kw) + Tu / Tl))


WING_NAMES = ("Sw", "Wfw", "A", "Lambda", "q", "lam", "tc", "Nz", "Wdg", "Wp")
WING_RANGES = (
    (150.0, 200.0),
    (220.0, 300.0),
    (6.0, 10.0),
    (np.deg2rad(-10.0), np.deg2rad(10.0)),
    (16.0, 45.0),
    (0.5, 1.0),
    (0.08, 0.18),
    (2.5, 6.0),
    (1700.0, 2500.0),
    (0.025, 0.08),
)


def _wing_core(X, sw_pow):
    X = np.atleast_2d(X)
    Sw, Wfw, A, Lam, q, lam, tc, Nz, Wdg, Wp = (X[:, i] for i in range(10))
    c = np.cos(Lam)
    return (
        0.036 * Sw**sw_pow * Wfw**0.0035 * (A / c**2) ** 0.6 * q**0.006 * lam**0.04
        * (100 * tc / c) ** -0.3 * (Nz * Wdg) ** 0.49
    ), Sw, Wp


def wing_hf(X):
    core, Sw, Wp = _wing_core(X, 0.758)
    return core + Sw * Wp


def wing_lf1(X):
    core, Sw, Wp = _wing_core(X, 0.758)
    return core + Wp


def wing_lf2(X):
    core, Sw, Wp = _wing_core(X, 0.8)
    return core + Wp


def wing_lf3(X):
    core, Sw, Wp = _wing_core(X, 0.9)
    return core


def sinusoidal_hf(X):
    x = np.atleast_2d(X)[:, 0]
    return 2 * np.sin(x)


def sinusoidal_lf(X):
    x = np.atleast_2d(X)[:, 0]
    return 2 * np.sin(x) + 0.3 * x**2 - 0.7 * x + 1


BEAM_NAMES = ("p", "b", "h", "L", "E")
BEAM_FIXED = (12000.0, 0.15, 0.3, 5.0)
BEAM_E_TRUE = 30.0  # GPa


def _beam(X, E_pa):
    X = np.atleast_2d(X)
    p, b, h, L = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return 1000.0 * (5.0 / 32.0) * p * L**4 / (E_pa * b * h**3)  # millimetres


def beam_hf(X):
    return _beam(X, BEAM_E_TRUE * 1e9)


def beam_lf(X):
    return _beam(X, np.atleast_2d(X)[:, 4] * 1e9)


# ------------------------------------------------------------------ problems


@dataclass
class BenchmarkProblem:
    name: str
    sources: dict
    ranges: tuple
    names: tuple = ()
    noise: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)
    init_counts: dict = field(default_factory=dict)
    qual_dict: dict = field(default_factory=dict)
    level_values: dict = field(default_factory=dict)  # column -> sorted numeric values
    calibration_ids: tuple = ()
    calibration_true: tuple = ()
    hf_ranges: tuple | None = None  # numeric ranges where HF is sampled (calibration problems)

    def __post_init__(self):
        if 0 not in self.sources:
            raise ContractError("source 0 (HF) must be defined")
        for lo, hi in self.ranges:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ContractError(f"bad range {(lo, hi)} in {self.name}")

    @property
    def dim(self):
        return len(self.ranges)

    @property
    def n_sources(self):
        return len(self.sources)

    def to_numeric(self, X):
        """Replace categorical level indices by their stored numeric values."""
        X = np.array(np.atleast_2d(X), dtype=float, copy=True)
        for col, vals in self.level_values.items():
            X[:, col] = np.asarray(vals)[X[:, col].astype(int)]
        return X


def borehole():
    return BenchmarkProblem(
        "borehole",
        {0: borehole_hf, 1: borehole_lf1, 2: borehole_lf2, 3: borehole_lf3, 4: borehole_lf4},
        BOREHOLE_RANGES,
        BOREHOLE_NAMES,
        noise={0: 2.0, 1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0},
        costs={0: 1000.0, 1: 100.0, 2: 10.0, 3: 100.0, 4: 10.0},
        init_counts={0: 5, 1: 5, 2: 50, 3: 5, 4: 50},
    )


def wing():
    return BenchmarkProblem(
        "wing",
        {0: wing_hf, 1: wing_lf1, 2: wing_lf2, 3: wing_lf3},
        WING_RANGES,
        WING_NAMES,
        noise={0: 1.0, 1: 1.0, 2: 1.0, 3: 1.0},
        init_counts={0: 10, 1: 20, 2: 20, 3: 20},
    )


SINUSOIDAL_RANGE = (0.0, 2 * np.pi)


def sinusoidal():
    return BenchmarkProblem(
        "sinusoidal",
        {0: sinusoidal_hf, 1: sinusoidal_lf},
        (SINUSOIDAL_RANGE,),
        ("x",),
        noise={0: 1.0, 1: 1.0},
        costs={0: 1.0, 1: 1.0},
        init_counts={0: 4, 1: 20},
    )


def make_borehole_mixed(seed=0):
    """Borehole with r_w and H_l turned into 5-level categorical variables."""
    rng = np.random.default_rng(seed)
    levels = {}
    for col in (0, 5):
        lo, hi = BOREHOLE_RANGES[col]
        levels[col] = np.sort(rng.uniform(lo, hi, 5))
    ranges = list(BOREHOLE_RANGES)
    ranges[0] = (0.0, 4.0)
    ranges[5] = (0.0, 4.0)
    prob = BenchmarkProblem(
        "borehole_mixed",
        {0: None},
        tuple(ranges),
        BOREHOLE_NAMES,
        noise={0: 0.0},
        qual_dict={0: 5, 5: 5},
        level_values=levels,
    )
    prob.sources[0] = lambda X, _p=prob: borehole_hf(_p.to_numeric(X))
    return prob


BOREHOLE_CAL_TRUE = (250.0, 1500.0)  # (T_l, L)
BOREHOLE_CAL_ZRANGES = ((63.1, 500.0), (1120.0, 1680.0))


def borehole_calibration():
    """HF fixes T_l = 250 and L = 1500; LF1/LF2 take them as inputs (columns 4 and 6)."""
    ranges = list(BOREHOLE_RANGES)
    ranges[4], ranges[6] = BOREHOLE_CAL_ZRANGES

    def hf(X):
        X = np.array(np.atleast_2d(X), dtype=float, copy=True)
        X[:, 4], X[:, 6] = BOREHOLE_CAL_TRUE
        return borehole_hf(X)

    return BenchmarkProblem(
        "borehole_calibration",
        {0: hf, 1: borehole_lf1, 2: borehole_lf2},
        tuple(ranges),
        BOREHOLE_NAMES,
        noise={0: 2.0, 1: 0.0, 2: 0.0},
        init_counts={0: 20, 1: 100, 2: 100},
        calibration_ids=(4, 6),
        calibration_true=BOREHOLE_CAL_TRUE,
    )


WING_CAL_TRUE = (40.0, 0.85, 0.17, 3.0)


def wing_calibration():
    def hf(X):
        X = np.array(np.atleast_2d(X), dtype=float, copy=True)
        X[:, 4:8] = WING_CAL_TRUE
        return wing_hf(X)

    return BenchmarkProblem(
        "wing_calibration",
        {0: hf, 1: wing_lf1, 2: wing_lf2, 3: wing_lf3},
        WING_RANGES,
        WING_NAMES,
        noise={0: 1.0, 1: 1.0, 2: 1.0, 3: 1.0},
        init_counts={0: 25, 1: 40, 2: 50, 3: 60},
        calibration_ids=(4, 5, 6, 7),
        calibration_true=WING_CAL_TRUE,
    )


BEAM_E_RANGE = (15.0, 45.0)


def beam_deflection():
    """Deflection in mm; E (column 4) in GPa is the calibration parameter."""
    ranges = tuple((v, v) for v in BEAM_FIXED) + (BEAM_E_RANGE,)
    return BenchmarkProblem(
        "beam",
        {0: beam_hf, 1: beam_lf},
        ranges,
        BEAM_NAMES,
        noise={0: 0.05, 1: 0.0},
        init_counts={0: 1, 1: 200},
        calibration_ids=(4,),
        calibration_true=(BEAM_E_TRUE,),
    )


PROBLEMS = {
    "borehole": borehole,
    "wing": wing,
    "sinusoidal": sinusoidal,
    "borehole_mixed": make_borehole_mixed,
    "borehole_calibration": borehole_calibration,
    "wing_calibration": wing_calibration,
    "beam": beam_deflection,
}


def get_problem(name, **kw):
    try:
        return PROBLEMS[name](**kw)
    except KeyError:
        raise ContractError(f"unknown benchmark {name!r}; valid names: {', '.join(sorted(PROBLEMS))}") from None


# ------------------------------------------------------------------- access


def _check_source(problem, source):
    if source not in problem.sources:
        raise ContractError(f"{problem.name} has no source {source}")


def _fill_hf_calibration(problem, X):
    X = np.array(X, dtype=float, copy=True)
    for c, v in zip(problem.calibration_ids, problem.calibration_true):
        X[:, c] = np.where(np.isnan(X[:, c]), v, X[:, c])
    return X


def evaluate(problem: BenchmarkProblem, source, x):
    """Noise-free response(s) of ``source`` at raw input row(s) ``x``."""
    _check_source(problem, source)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) == 1
    if X.shape[1] != problem.dim:
        raise ContractError(f"{problem.name} takes {problem.dim} inputs, got {X.shape[1]}")
    if source == 0 and problem.calibration_ids:
        X = _fill_hf_calibration(problem, X)
    lo = np.array([r[0] for r in problem.ranges])
    hi = np.array([r[1] for r in problem.ranges])
    tol = 1e-9 * np.maximum(1.0, np.abs(hi))
    if np.any(X < lo - tol) or np.any(X > hi + tol):
        raise ContractError(f"input outside the {problem.name} ranges")
    for col, lev in problem.qual_dict.items():
        if np.any(X[:, col] != np.round(X[:, col])):
            raise ContractError(f"column {col} must hold level indices")
    y = np.asarray(problem.sources[source](X), dtype=float)
    return float(y[0]) if single else y


def _unit_points(d, n, seed, source):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(d, scramble=True, seed=np.random.default_rng([seed, source])).random(n)


def sample_inputs(problem, source, n, seed):
    """Quasi-random inputs over the problem ranges (categoricals uniform over levels)."""
    U = _unit_points(problem.dim, n, seed, source)
    lo = np.array([r[0] for r in problem.ranges])
    hi = np.array([r[1] for r in problem.ranges])
    X = lo + U * (hi - lo)
    for col, lev in problem.qual_dict.items():
        X[:, col] = np.minimum(np.floor(U[:, col] * lev), lev - 1)
    if source == 0 and problem.calibration_ids:
        X[:, list(problem.calibration_ids)] = np.nan
    return X


def sample(problem: BenchmarkProblem, source, n, seed=0, with_noise=True):
    """(X, y) for ``n`` quasi-random rows of one source; HF calibration columns are NaN."""
    if n < 1:
        raise ContractError("n must be >= 1")
    _check_source(problem, source)
    X = sample_inputs(problem, source, n, seed)
    y = evaluate(problem, source, X)
    sd = problem.noise.get(source, 0.0)
    if with_noise and sd > 0:
        y = y + sd * np.random.default_rng([seed, source, 2]).standard_normal(n)
    return X, y


def sample_dataset(problem, counts=None, seed=0, with_noise=True) -> MFDataset:
    """All sources stacked with source ids; ``counts`` defaults to the initial counts."""
    counts = counts or problem.init_counts
    Xs, ss, ys = [], [], []
    for j in sorted(counts):
        X, y = sample(problem, j, counts[j], seed, with_noise)
        Xs.append(X)
        ys.append(y)
        ss.append(np.full(len(y), j))
    X = np.concatenate(Xs)
    qcols = list(problem.qual_dict)
    num = [c for c in range(problem.dim) if c not in qcols]
    T = X[:, qcols].astype(int) if qcols else np.zeros((len(X), 0), dtype=int)
    return MFDataset(X[:, num], T, np.concatenate(ss), np.concatenate(ys), tuple(problem.qual_dict.values()))


def source_nrmse(problem: BenchmarkProblem, lf, n=10000, seed=0):
    """sqrt(mean((y_lf - y_hf)^2) / var(y_hf)) at ``n`` shared uniform random points."""
    if lf == 0:
        raise ContractError("lf must be a non-HF source id")
    _check_source(problem, lf)
    rng = np.random.default_rng(seed)
    lo = np.array([r[0] for r in problem.ranges])
    hi = np.array([r[1] for r in problem.ranges])
    X = rng.uniform(lo, hi, size=(n, problem.dim))
    for col, lev in problem.qual_dict.items():
        X[:, col] = rng.integers(0, lev, n)
    if problem.calibration_ids:
        X[:, list(problem.calibration_ids)] = problem.calibration_true
    yh = evaluate(problem, 0, X)
    yl = evaluate(problem, lf, X)
    return float(np.sqrt(np.mean((yl - yh) ** 2) / np.var(yh, ddof=1)))
