"""JSON model files.

Every file is one object::

    {
      "format": "mfrec-model", "version": 1,
      "kind": "nmf" | "svd" | "sgd_mf",
      "n_users": int, "n_items": int, "components": int,
      "fill": "user_mean" | ... | null,
      "seed": int | null,
      "hyperparameters": {...},
      "factors": {"W": [[...]], "H": [[...]]}          # nmf
               | {"U": [[...]], "S": [...], "Vt": [[...]]}  # svd
               | {"P": [[...]], "Q": [[...]]},          # sgd_mf
      "scale": [min, max] | null,
      "user_ids": [...] | null, "item_ids": [...] | null
    }

Matrices are row-major nested lists. Floats are written with ``repr``
precision, so a save/load round trip reproduces predictions bit for bit.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .factorization import NmfModel, SgdMfModel, SvdModel
from .ratings import FillStrategy, RatingScale

FORMAT = "mfrec-model"
VERSION = 1


class ModelFile(NamedTuple):
    model: object
    scale: RatingScale | None
    user_ids: tuple | None
    item_ids: tuple | None
    extra: dict


def model_to_dict(model, scale=None, user_ids=None, item_ids=None, extra=None) -> dict:
    if isinstance(model, NmfModel):
        factors = {"W": model.W.tolist(), "H": model.H.tolist()}
        hyper = {"max_iterations": model.max_iterations, "rel_tolerance": model.rel_tolerance}
        if model.objective_trace:
            hyper["iterations"] = len(model.objective_trace)
        fill, seed = model.fill, model.seed
    elif isinstance(model, SvdModel):
        factors = {"U": model.U.tolist(), "S": model.S.tolist(), "Vt": model.Vt.tolist()}
        hyper, fill, seed = {}, model.fill, None
    elif isinstance(model, SgdMfModel):
        factors = {"P": model.P.tolist(), "Q": model.Q.tolist()}
        hyper = {"alpha": model.alpha, "lambda": model.lam, "epochs": model.epochs}
        fill, seed = None, model.seed
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    hyper.update(extra or {})
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "n_users": model.n_users,
        "n_items": model.n_items,
        "components": model.components,
        "fill": fill.name if fill is not None else None,
        "seed": seed,
        "hyperparameters": hyper,
        "factors": factors,
        "scale": [scale.min, scale.max] if scale is not None else None,
        "user_ids": list(user_ids) if user_ids is not None else None,
        "item_ids": list(item_ids) if item_ids is not None else None,
    }


def _matrix(doc, name, shape):
    arr = np.array(doc["factors"][name], dtype=float)
    if arr.shape != shape:
        raise ValueError(f"factor {name} has shape {arr.shape}, expected {shape}")
    return arr


def model_from_dict(doc: dict) -> ModelFile:
    if doc.get("format") != FORMAT:
        raise ValueError("not an mfrec model file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    n, m, r = doc["n_users"], doc["n_items"], doc["components"]
    kind = doc["kind"]
    hyper = dict(doc.get("hyperparameters") or {})
    fill = FillStrategy.parse(doc["fill"]) if doc.get("fill") else None
    if kind == "nmf":
        model = NmfModel(W=_matrix(doc, "W", (n, r)), H=_matrix(doc, "H", (r, m)), fill=fill,
                         seed=doc.get("seed"), max_iterations=hyper.pop("max_iterations", None),
                         rel_tolerance=hyper.pop("rel_tolerance", None))
    elif kind == "svd":
        S = np.array(doc["factors"]["S"], dtype=float)
        if S.shape != (r,):
            raise ValueError(f"factor S has shape {S.shape}, expected ({r},)")
        model = SvdModel(U=_matrix(doc, "U", (n, r)), S=S, Vt=_matrix(doc, "Vt", (r, m)),
                         fill=fill)
    elif kind == "sgd_mf":
        model = SgdMfModel(P=_matrix(doc, "P", (n, r)), Q=_matrix(doc, "Q", (r, m)),
                           alpha=hyper.pop("alpha"), lam=hyper.pop("lambda"),
                           epochs=hyper.pop("epochs"), seed=doc.get("seed"))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    scale = RatingScale(*doc["scale"]) if doc.get("scale") else None
    user_ids = tuple(doc["user_ids"]) if doc.get("user_ids") is not None else None
    item_ids = tuple(doc["item_ids"]) if doc.get("item_ids") is not None else None
    return ModelFile(model, scale, user_ids, item_ids, hyper)


def dumps_model(model, **kwargs) -> str:
    return json.dumps(model_to_dict(model, **kwargs), sort_keys=True) + "\n"


def save_model(model, path, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model, **kwargs))


def load_model(path) -> ModelFile:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
