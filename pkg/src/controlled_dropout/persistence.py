"""Save and reload a fitted classifier, mask banks included.

Layout of a model directory::

    weights.npz   W0, b0, W1, b1, ...
    model.json    estimator params, classes, layer specs, banks, history
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dropout import DropoutAttachment, MaskBank
from .estimator import DropoutMLPClassifier, EpochRecord
from .nn import Layer, LayerSpec, NetworkParams

__all__ = ["save_model", "load_model"]


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def save_model(est: DropoutMLPClassifier, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    layers = []
    for i, layer in enumerate(est.params_.layers):
        arrays[f"W{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
        spec = layer.spec
        drop = None
        if spec.dropout is not None:
            drop = {"kind": spec.dropout.kind, "p": spec.dropout.p,
                    "bank": spec.dropout.bank.to_dict() if spec.dropout.bank else None}
        layers.append({"input_dim": spec.input_dim, "output_dim": spec.output_dim,
                       "activation": spec.activation, "dropout": drop})
    np.savez(directory / "weights.npz", **arrays)
    doc = {
        "params": {k: _jsonable(v) for k, v in est.get_params().items()
                   if not isinstance(v, np.random.Generator)},
        "classes": _jsonable(est.classes_.tolist()),
        "layers": layers,
        "best_epoch": getattr(est, "best_epoch_", None),
        "best_val_loss": getattr(est, "best_val_loss_", None),
        "history": [[h.epoch, h.train_loss, h.val_loss] for h in est.history_],
    }
    (directory / "model.json").write_text(json.dumps(doc, indent=2))
    return directory


def load_model(directory) -> DropoutMLPClassifier:
    directory = Path(directory)
    doc = json.loads((directory / "model.json").read_text())
    weights = np.load(directory / "weights.npz")
    layers = []
    for i, spec_doc in enumerate(doc["layers"]):
        drop = spec_doc["dropout"]
        attachment = None
        if drop is not None:
            bank = MaskBank.from_dict(drop["bank"]) if drop["bank"] else None
            attachment = DropoutAttachment(drop["kind"], drop["p"], bank)
        spec = LayerSpec(spec_doc["input_dim"], spec_doc["output_dim"], spec_doc["activation"], attachment)
        layers.append(Layer(weights[f"W{i}"], weights[f"b{i}"], spec))
    params = doc["params"]
    for key in ("hidden_layer_sizes", "dropout_layers"):
        params[key] = tuple(params[key])
    if isinstance(params.get("n_masks"), list):
        params["n_masks"] = tuple(params["n_masks"])
    est = DropoutMLPClassifier.from_params(NetworkParams(layers), doc["classes"], **params)
    est.best_epoch_ = doc["best_epoch"]
    est.best_val_loss_ = doc["best_val_loss"]
    est.history_ = [EpochRecord(*h) for h in doc["history"]]
    return est
