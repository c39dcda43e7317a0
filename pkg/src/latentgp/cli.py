"""Command-line interface: ``latentgp <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from . import analysis, bayesopt, benchmarks, persistence
from .exceptions import ContractError, MetricUndefinedError, NumericalSingularityError, TrainingFailedError
from .model import LatentGP

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------- I/O


def _parse_float(tok):
    tok = tok.strip()
    if tok == "" or tok.lower() == "nan":
        return math.nan
    return float(tok)  # locale independent, dot decimal separator


def read_table(path):
    """Header + float rows from a delimited text file."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ContractError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ContractError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    data = []
    for ln, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(header):
            raise ContractError(f"{path}:{ln}: expected {len(header)} fields, got {len(r)}")
        try:
            data.append([_parse_float(t) for t in r])
        except ValueError:
            raise ContractError(f"{path}:{ln}: non-numeric field") from None
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _col_index(token, header, what="column"):
    token = str(token).strip()
    if token in header:
        return header.index(token)
    try:
        i = int(token)
    except ValueError:
        raise UsageError(f"unknown {what} {token!r}") from None
    if not 0 <= i < len(header):
        raise UsageError(f"{what} index {i} out of range")
    return i


def _split_inputs(header, data, response):
    if response not in header:
        raise UsageError(f"response column {response!r} not found in {header}")
    r = header.index(response)
    cols = [h for i, h in enumerate(header) if i != r]
    return cols, np.delete(data, r, axis=1), data[:, r]


def _qual(text, cols):
    """``col:levels,...`` where ``col`` is an input index or column name."""
    q = {}
    for tok in filter(None, (t.strip() for t in (text or "").split(","))):
        name, _, lev = tok.partition(":")
        try:
            n = int(lev)
        except ValueError:
            raise UsageError(f"bad qual-dict token {tok!r}") from None
        if n < 2:
            raise UsageError(f"qual-dict token {tok!r} needs at least 2 levels")
        q[_col_index(name, cols, "qual-dict column")] = n
    return q


def _jobs(v):
    if v in (None, -1):
        return os.cpu_count() or 1
    return int(v)


# ---------------------------------------------------------------- commands


def _model_kwargs(a, cols):
    kw = dict(
        qual_dict=_qual(a.qual_dict, cols),
        kernel=a.kernel,
        embedding_dim=a.embedding_dim,
        mean=a.mean,
        num_restarts=a.restarts,
        lb_noise=a.lb_noise,
        fix_noise=a.fix_noise,
        fixed_noise_val=a.fixed_noise_val,
        random_state=a.seed,
        n_jobs=_jobs(a.jobs),
        num_pass_train=a.num_pass_train,
        num_pass_pred=a.num_pass_pred,
    )
    if a.multiple_noise != "auto":
        kw["multiple_noise"] = a.multiple_noise == "on"
    if a.source_column:
        kw["source_column"] = _col_index(a.source_column, cols, "source column")
    if a.continuation:
        kw["continuation"] = tuple(float(v) for v in a.continuation.split(","))
    return kw


def _report_fit(model):
    print(f"final_loss,{model.loss_!r}")
    for j, d in enumerate(np.atleast_1d(model.noise_)):
        print(f"noise[{j}],{float(d)!r}")
    mc = model.mean_constants()
    if mc is not None:
        for j, c in enumerate(mc):
            print(f"mean_constant[{j}],{float(c)!r}")


def cmd_fit(a):
    header, data = read_table(a.data)
    cols, X, y = _split_inputs(header, data, a.response)
    model = LatentGP(**_model_kwargs(a, cols))
    model.fit(X, y)
    persistence.save_model(model, a.out, cols, a.response)
    _report_fit(model)
    return EXIT_OK


def _load(a):
    try:
        return persistence.load_model(a.model)
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"cannot load model {a.model}: {exc}") from None


def cmd_predict(a):
    model, doc = _load(a)
    header, data = read_table(a.data)
    cols = doc["fingerprint"]["columns"]
    resp = doc.get("response")
    if resp in header:
        header, data = [h for h in header if h != resp], np.delete(data, header.index(resp), axis=1)
    if cols and header != cols:
        raise ContractError(f"columns {header} do not match the model's training columns {cols}")
    pd = model.predict_dist(data, include_noise=a.include_noise)
    write_table(a.out, ["mean", "std"], zip(pd.mean, pd.std))
    return EXIT_OK


def cmd_metrics(a):
    hp, P = read_table(a.pred)
    ht, T = read_table(a.truth)
    if "mean" not in hp:
        raise UsageError("prediction file needs a 'mean' column")
    resp = a.response if a.response in ht else ht[-1]
    y = T[:, ht.index(resp)]
    mu = P[:, hp.index("mean")]
    tau = P[:, hp.index("std")] if "std" in hp else np.zeros_like(mu)
    if len(y) != len(mu):
        raise ContractError("prediction and truth files differ in row count")
    print(f"nrmse,{analysis.nrmse(y, mu)!r}")
    print(f"nis,{analysis.nis(y, mu, tau)!r}")
    return EXIT_OK


def cmd_calibrate(a):
    header, data = read_table(a.data)
    cols, X, y = _split_inputs(header, data, a.response)
    kw = _model_kwargs(a, cols)
    if "source_column" not in kw:
        raise UsageError("calibration needs --source-column")
    cal = [_col_index(t, cols, "calibration column") for t in a.calibration_ids.split(",")]
    src = X[:, kw["source_column"]]
    if not np.any(src == 0):
        raise UsageError("no HF rows (source 0) in the data")
    kw.update(calibration_ids=cal, calibration_mode="probabilistic" if a.mode == "prob" else "deterministic")
    if a.prior_mean is not None or a.prior_std is not None:
        if a.prior_mean is None or a.prior_std is None:
            raise UsageError("give both --prior-mean and --prior-std")
        pm = [float(v) for v in a.prior_mean.split(",")]
        ps = [float(v) for v in a.prior_std.split(",")]
        if len(pm) != len(cal) or len(ps) != len(cal):
            raise UsageError("prior mean/std need one value per calibration column")
        kw["calibration_prior"] = list(zip(pm, ps))
    model = LatentGP(**kw).fit(X, y)
    est = model.calibration_estimates()
    for i, c in enumerate(cal):
        line = f"zeta[{cols[c]}],{float(est['mean'][i])!r}"
        if "std" in est:
            line += f",{float(est['std'][i])!r}"
        print(line)
    if a.out:
        persistence.save_model(model, a.out, cols, a.response)
    return EXIT_OK


def cmd_bo(a):
    if a.problem:
        prob = benchmarks.get_problem(a.problem, **({"seed": a.seed} if a.problem == "borehole_mixed" else {}))
        srcs = sorted(prob.sources) if not a.sfbo else [0]
        source = bayesopt.AnalyticSource(prob, seed=a.seed)
        counts = {j: prob.init_counts.get(j, 5) for j in srcs}
        if a.init_counts:
            vals = [int(v) for v in a.init_counts.split(",")]
            if len(vals) != len(srcs):
                raise UsageError("--init-counts needs one value per source")
            counts = dict(zip(srcs, vals))
        init = bayesopt.initial_data(prob, counts, a.seed)
        default_costs = [prob.costs.get(j, 1.0) for j in srcs]
    elif a.data_sources:
        paths = a.data_sources.split(",")
        srcs = list(range(len(paths)))
        tables = {}
        for j, p in enumerate(paths):
            header, data = read_table(p)
            cols, X, y = _split_inputs(header, data, a.response)
            tables[j] = (X, y)
        source = bayesopt.TableSource(tables)
        rng = np.random.default_rng(a.seed)
        Xi, si, yi = [], [], []
        for j in srcs:
            n0 = min(5, len(source.tables[j][1]))
            for _ in range(n0):
                X, y = source.tables[j]
                k = int(rng.integers(len(y)))
                Xi.append(X[k])
                yi.append(source.query(j, X[k]))
                si.append(j)
        init = (np.array(Xi), np.array(si), np.array(yi))
        default_costs = [1.0] * len(srcs)
    else:
        raise UsageError("give --problem or --data-sources")
    if a.costs:
        costs = [float(v) for v in a.costs.split(",")]
        if len(costs) != len(srcs):
            raise UsageError(f"--costs has {len(costs)} values for {len(srcs)} sources")
    else:
        costs = default_costs
    cfg = bayesopt.BOConfig(
        costs=dict(zip(srcs, costs)),
        max_cost=a.max_cost,
        stall_limit=a.stall,
        maximize=a.maximize,
        pool_size=a.pool_size,
        acquisition="ei" if len(srcs) == 1 else "composite",
        interval_score=not a.no_interval_score,
        model_params={"num_restarts": a.restarts, "maxiter": a.maxiter},
        max_iter=a.max_iter,
    )
    state = bayesopt.run_bo(source, init, cfg, seed=a.seed)
    rows = [
        (r["iteration"], r["source"], " ".join(repr(v) for v in r["x"]), r["y"], r["incumbent"], r["cost"])
        for r in state.log
    ]
    if a.out_history:
        write_table(a.out_history, ["iteration", "source", "input", "y", "incumbent", "cost"], rows)
    print(f"incumbent,{state.incumbent(0)!r}")
    print(f"cost,{state.cost!r}")
    if state.aborted:
        print(f"aborted,{state.aborted}")
        return EXIT_DATA
    return EXIT_OK


def cmd_sobol(a):
    if a.model:
        model, doc = _load(a)
        Xtr = model.X_train_
        qd = model.spec_.qual_dict
        fixed = {}
        if model.source_column is not None:
            fixed[model.source_column] = 0.0
        for c in model.cal_cols_:
            fixed[c] = math.nan
        free = [c for c in range(Xtr.shape[1]) if c not in fixed]
        ranges = [(np.nanmin(Xtr[:, c]), np.nanmax(Xtr[:, c])) if c not in qd else (0, 1) for c in free]
        levels = {i: qd[c] for i, c in enumerate(free) if c in qd}
        names = [doc["fingerprint"]["columns"][c] if doc["fingerprint"]["columns"] else f"x{c}" for c in free]

        def f(Z):
            Xf = np.empty((len(Z), Xtr.shape[1]))
            Xf[:, free] = Z
            for c, v in fixed.items():
                Xf[:, c] = v
            return model.predict(Xf)

        rep = analysis.sobol_indices(f, ranges, a.n, a.seed, levels, names)
    elif a.problem:
        prob = benchmarks.get_problem(a.problem)
        if prob.calibration_ids:
            raise UsageError("sobol --problem needs a non-calibration benchmark")
        levels = dict(prob.qual_dict)
        if a.exact:
            def f(Z):
                return benchmarks.evaluate(prob, 0, Z)
        else:
            X, y = benchmarks.sample(prob, 0, a.train_n, a.seed, with_noise=False)
            model = LatentGP(qual_dict=levels, num_restarts=a.restarts, random_state=a.seed).fit(X, y)
            f = model.predict
        ranges = [(0, 1) if c in levels else r for c, r in enumerate(prob.ranges)]
        rep = analysis.sobol_indices(f, ranges, a.n, a.seed, levels, prob.names)
    else:
        raise UsageError("give --model or --problem")
    print(rep.table())
    return EXIT_OK


def cmd_benchmark(a):
    prob = benchmarks.get_problem(a.name, **({"seed": a.seed} if a.name == "borehole_mixed" else {}))
    if a.source not in prob.sources:
        raise UsageError(f"{a.name} has sources {sorted(prob.sources)}")
    X, y = benchmarks.sample(prob, a.source, a.n, a.seed, with_noise=a.noise)
    names = list(prob.names) if prob.names else [f"x{i}" for i in range(X.shape[1])]
    write_table(a.out, names + ["y"], (list(r) + [v] for r, v in zip(X, y)))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_model_flags(p):
    p.add_argument("--data", required=True, help="delimited text dataset with a header row")
    p.add_argument("--response", default="y", help="response column name")
    p.add_argument("--qual-dict", default="", help="categorical columns as col:levels,... (index or name)")
    p.add_argument("--source-column", default=None, help="data-source column (index or name); 0 = HF")
    p.add_argument("--kernel", default="gaussian", choices=["gaussian", "power_exponential", "matern"])
    p.add_argument("--embedding-dim", type=int, default=2, help="latent dimension of categorical embeddings")
    p.add_argument("--mean", default="constant", choices=["zero", "constant", "per_source", "polynomial", "ffnn"])
    p.add_argument("--restarts", type=int, default=32, help="optimization restarts")
    p.add_argument("--multiple-noise", default="auto", choices=["auto", "on", "off"],
                   help="per-source nugget (auto: on with more than one source)")
    p.add_argument("--lb-noise", type=float, default=1e-8, help="lower bound of the nugget")
    p.add_argument("--fix-noise", action="store_true", help="hold the nugget at --fixed-noise-val")
    p.add_argument("--fixed-noise-val", type=float, default=1e-5)
    p.add_argument("--continuation", default=None, help="comma-separated decreasing noise floors")
    p.add_argument("--num-pass-train", type=int, default=20, help="ensemble draws during training")
    p.add_argument("--num-pass-pred", type=int, default=30, help="ensemble draws during prediction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=-1, help="parallel restarts (-1: all cores)")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="latentgp", description=__doc__, formatter_class=fmt)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a model file", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict with a saved model", formatter_class=fmt)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--include-noise", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("metrics", help="NRMSE and NIS of predictions", formatter_class=fmt)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--response", default="y")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("calibrate", help="estimate calibration parameters", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--calibration-ids", required=True, help="calibration columns (index or name), comma-separated")
    p.add_argument("--mode", default="det", choices=["det", "prob"])
    p.add_argument("--prior-mean", default=None, help="raw-unit prior means (default N(0,1) standardized)")
    p.add_argument("--prior-std", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bo", help="run (multi-fidelity) Bayesian optimization", formatter_class=fmt)
    p.add_argument("--problem", default=None, help="benchmark name")
    p.add_argument("--data-sources", default=None, help="comma-separated table files, one per source")
    p.add_argument("--response", default="y")
    p.add_argument("--sfbo", action="store_true", help="use the HF source only")
    p.add_argument("--costs", default=None, help="comma-separated cost per source")
    p.add_argument("--init-counts", default=None)
    p.add_argument("--max-cost", type=float, default=40000.0)
    p.add_argument("--stall", type=int, default=50, help="iterations without HF improvement before stopping")
    p.add_argument("--maximize", action="store_true")
    p.add_argument("--pool-size", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--maxiter", type=int, default=500)
    p.add_argument("--max-iter", type=int, default=None, help="hard cap on BO iterations")
    p.add_argument("--no-interval-score", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-history", default=None)
    p.set_defaults(func=cmd_bo)

    p = sub.add_parser("sobol", help="Sobol sensitivity indices", formatter_class=fmt)
    p.add_argument("--model", default=None)
    p.add_argument("--problem", default=None)
    p.add_argument("--exact", action="store_true", help="use the analytic function instead of an emulator")
    p.add_argument("--train-n", type=int, default=400)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--n", type=int, default=2**14)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sobol)

    p = sub.add_parser("benchmark", help="sample a benchmark source", formatter_class=fmt)
    p.add_argument("--name", required=True)
    p.add_argument("--source", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalSingularityError, TrainingFailedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractError, MetricUndefinedError) as exc:
        msg = str(exc)
        if "unknown benchmark" in msg:
            print(f"usage error: {msg}", file=sys.stderr)
            return EXIT_USAGE
        print(f"data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
