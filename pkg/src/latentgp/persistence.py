"""Self-describing JSON model files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import numpy as np

from .exceptions import ContractError
from .model import LatentGP
from .priors import PriorSpec

SCHEMA_VERSION = 1


def _jsonable(v):
    if isinstance(v, PriorSpec):
        return {"__prior__": {k: _jsonable(x) for k, x in dataclasses.asdict(v).items()}}
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    return v


def _config_from_json(cfg):
    cfg = dict(cfg)
    if cfg.get("qual_dict"):
        cfg["qual_dict"] = {int(k): int(v) for k, v in cfg["qual_dict"].items()}
    if isinstance(cfg.get("priors"), dict) and "__prior__" in cfg["priors"]:
        cfg["priors"] = PriorSpec(**cfg["priors"]["__prior__"])
    if isinstance(cfg.get("poly_degree"), dict):
        cfg["poly_degree"] = {int(k): v for k, v in cfg["poly_degree"].items()}
    for k in ("hf_sources", "embedding_layers", "source_layers", "mean_layers", "regularization"):
        if isinstance(cfg.get(k), list):
            cfg[k] = tuple(cfg[k])
    return cfg


def fingerprint(X, y, columns=()):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    h = hashlib.sha256()
    h.update(X.tobytes())
    h.update(y.tobytes())
    return {"rows": int(X.shape[0]), "columns": list(columns), "hash": h.hexdigest()}


def model_to_dict(model: LatentGP, columns=(), response=None):
    state = model.fitted_state()
    named = {k: _jsonable(v) for k, v in model.params().items()}
    return {
        "schema_version": SCHEMA_VERSION,
        "config": _jsonable(model.get_params()),
        "params": {"theta": state["theta"], "floor": state["floor"], "loss": state["loss"], "named": named},
        "seeds": {"random_state": model.random_state, "encoding_seed": model.encoding_seed},
        "fingerprint": fingerprint(model.X_train_, model.y_train_raw_, columns),
        "response": response,
        "standardization": {
            "x_loc": _jsonable(model.x_loc_),
            "x_scale": _jsonable(model.x_scale_),
            "z_loc": _jsonable(model.z_loc_),
            "z_scale": _jsonable(model.z_scale_),
            "y_loc": model.y_loc_,
            "y_scale": model.y_scale_,
        },
        "data": {"X": _jsonable(model.X_train_), "y": _jsonable(model.y_train_raw_)},
    }


def model_from_dict(doc) -> LatentGP:
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ContractError(f"model file schema version {ver} is not supported (expected {SCHEMA_VERSION})")
    X = np.array([[np.nan if v is None else v for v in row] for row in doc["data"]["X"]], dtype=float)
    y = np.asarray(doc["data"]["y"], dtype=float)
    if fingerprint(X, y)["hash"] != doc["fingerprint"]["hash"]:
        raise ContractError("stored training data does not match its fingerprint")
    model = LatentGP(**_config_from_json(doc["config"]))
    model.restore(X, y, doc["params"])
    return model


def save_model(model, path, columns=(), response=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, columns, response), fh, indent=1, allow_nan=False)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return model_from_dict(doc), doc
