"""JSON checkpoint container for networks, mixtures and pseudo-datasets.

Layout::

    {"format": "imuda-checkpoint", "format_version": 1, "kind": <kind>, "payload": {...}}

Arrays are stored as ``{"shape": [...], "dtype": "float64"|"int64", "data": [flat row-major values]}``.
Floats are written with Python's shortest round-trip repr, so a load
reproduces every array bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gmm import GmmModel
from .netcore import Layer, NetworkParams
from .pseudoset import PseudoDataset

FORMAT = "imuda-checkpoint"
FORMAT_VERSION = 1


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def encode_array(a) -> dict:
    a = np.asarray(a)
    kind = "int64" if np.issubdtype(a.dtype, np.integer) else "float64"
    data = a.astype(kind).ravel().tolist()
    return {"shape": list(a.shape), "dtype": kind, "data": data}


def decode_array(d: dict) -> np.ndarray:
    try:
        return np.array(d["data"], dtype=d["dtype"]).reshape(d["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array record: {exc}") from exc


def _layers(layers: list[Layer]) -> list[dict]:
    return [{"activation": l.activation, "weight": encode_array(l.weight), "bias": encode_array(l.bias)} for l in layers]


def _unlayers(records: list[dict]) -> list[Layer]:
    return [Layer(decode_array(r["weight"]), decode_array(r["bias"]), r["activation"]) for r in records]


def network_to_dict(params: NetworkParams) -> dict:
    return {"encoder": _layers(params.encoder), "classifier": _layers(params.classifier)}


def gmm_to_dict(model: GmmModel) -> dict:
    return {
        "weights": encode_array(model.weights),
        "means": encode_array(model.means),
        "covs": encode_array(model.covs),
        "chols": encode_array(model.chols),
        "eps": model.eps,
        "diagonal": model.diagonal,
    }


def pseudo_to_dict(p: PseudoDataset) -> dict:
    return {
        "samples": encode_array(p.samples),
        "labels": encode_array(p.labels),
        "confidences": encode_array(p.confidences),
        "acceptance_rate": p.acceptance_rate,
        "tau": p.tau,
        "draw_index": encode_array(p.draw_index),
        "attempted": p.attempted,
        "components": encode_array(p.components),
    }


def to_container(obj) -> dict:
    if isinstance(obj, NetworkParams):
        kind, payload = "network", network_to_dict(obj)
    elif isinstance(obj, GmmModel):
        kind, payload = "gmm", gmm_to_dict(obj)
    elif isinstance(obj, PseudoDataset):
        kind, payload = "pseudo", pseudo_to_dict(obj)
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    return {"format": FORMAT, "format_version": FORMAT_VERSION, "kind": kind, "payload": payload}


def from_container(doc: dict):
    if doc.get("format") != FORMAT:
        raise FormatError(f"not an {FORMAT} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {doc.get('format_version')!r}")
    kind, p = doc.get("kind"), doc.get("payload", {})
    try:
        if kind == "network":
            return NetworkParams(_unlayers(p["encoder"]), _unlayers(p["classifier"]))
        if kind == "gmm":
            return GmmModel(decode_array(p["weights"]), decode_array(p["means"]), decode_array(p["covs"]),
                            decode_array(p["chols"]), p["eps"], p["diagonal"])
        if kind == "pseudo":
            return PseudoDataset(decode_array(p["samples"]), decode_array(p["labels"]), decode_array(p["confidences"]),
                                 p["acceptance_rate"], p["tau"], decode_array(p["draw_index"]), p["attempted"],
                                 decode_array(p["components"]))
    except KeyError as exc:
        raise FormatError(f"{kind} checkpoint is missing field {exc}") from exc
    raise FormatError(f"unknown checkpoint kind {kind!r}")


def save(obj, path) -> None:
    write_json(path, to_container(obj))


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc.msg}", exc.pos) from exc
    return from_container(doc)
