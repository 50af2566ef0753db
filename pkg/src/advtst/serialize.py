"""Versioned JSON documents for fitted models.

Floats are written with ``repr`` precision by the json module, so a
save/load cycle reproduces every array bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .kernels import C2STKernel, DeepKernel, GaussianKernel, KernelModel
from .location import LocationTestModel
from .ndmath import MlpParams

FORMAT = "advtst.model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _net_doc(net: MlpParams) -> dict:
    return {
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from(doc) -> MlpParams:
    ws = tuple(np.asarray(w, float).reshape(len(w), -1) for w in doc["weights"])
    bs = tuple(np.asarray(b, float) for b in doc["biases"])
    return MlpParams(ws, bs, doc.get("activation", "softplus"))


def model_to_dict(model) -> dict:
    if not isinstance(model, (KernelModel, LocationTestModel)):
        raise TypeError(f"cannot serialize {type(model).__name__}")
    doc = {"format": FORMAT, "version": VERSION, "kind": model.kind}
    if isinstance(model, GaussianKernel):
        doc["log_sigma"] = model.log_sigma
    elif isinstance(model, DeepKernel):
        doc.update(log_sigma_phi=model.log_sigma_phi, log_sigma_q=model.log_sigma_q,
                   gamma=model.gamma, net=_net_doc(model.net))
    elif isinstance(model, C2STKernel):
        doc.update(guard=model.guard, net=_net_doc(model.net))
    elif isinstance(model, LocationTestModel):
        doc.update(locations=model.locations.tolist(), bandwidth=model.bandwidth, ridge=model.ridge)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != FORMAT:
        raise ModelFormatError("not a model document")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    try:
        if kind == "gaussian":
            return GaussianKernel(float(doc["log_sigma"]))
        if kind == "deep":
            return DeepKernel(float(doc["log_sigma_phi"]), float(doc["log_sigma_q"]),
                              float(doc["gamma"]), _net_from(doc["net"]))
        if kind in ("c2st_sign", "c2st_logit"):
            return C2STKernel(_net_from(doc["net"]), sign=kind == "c2st_sign", guard=float(doc["guard"]))
        if kind in ("me", "scf"):
            return LocationTestModel(kind, np.asarray(doc["locations"], float),
                                     float(doc["bandwidth"]), float(doc["ridge"]))
    except KeyError as exc:
        raise ModelFormatError(f"{kind} document lacks field {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model: KernelModel | LocationTestModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)))
    return path


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
