"""Declarative experiment configuration and the shipped presets."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..exceptions import ConfigurationError

__all__ = ["ExperimentConfig", "PRESETS", "get_preset", "load_config"]

MODEL_KINDS = ("mc", "cmc")
DATASETS = ("moons", "circles", "mnist")


def _tuple(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(value)
    return (value,)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one training/evaluation protocol.

    ``tau_grid`` is read in the units of ``tau_scale``: absolute entropies
    in nats, or fractions of ``ln C``. ``sweep="rate"`` trains one model
    per entry of ``rate_grid`` and evaluates at ``tau_fixed``.
    """

    name: str = "custom"
    dataset: str = "moons"
    n_samples: int = 10000
    noise: float = 0.3
    factor: float = 0.8
    mnist_dir: str | None = None
    train_n: int = 8000
    val_n: int = 1000
    test_n: int = 1000
    architecture: str = "mlp"
    hidden: tuple = (20, 20, 20)
    activation: str = "relu"
    dropout_layers: tuple = (0, 1)
    models: tuple = MODEL_KINDS
    p: float = 0.3
    n_sample: tuple = (10,)
    lr: float = 0.08
    momentum: float = 0.0
    loss: str = "bce"
    epochs_mc: int = 300
    epochs_cmc: int = 300
    batch_size: int = 64
    T: int = 100
    mask_mode: str = "per_example"
    sweep: str = "tau"
    tau_scale: str = "absolute"
    tau_grid: tuple = tuple(round(0.05 * i, 2) for i in range(15))
    tau_fixed: float = 0.5
    rate_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    reps: int = 20
    base_seed: int = 0
    notes: tuple = field(default=())

    def __post_init__(self):
        for name in ("hidden", "dropout_layers", "models", "n_sample", "tau_grid", "rate_grid", "notes"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        self.validate()

    # -- validation ---------------------------------------------------

    def validate(self):
        def bad(msg):
            raise ConfigurationError(f"config {self.name!r}: {msg}")

        if self.dataset not in DATASETS:
            bad(f"dataset must be one of {DATASETS}")
        if self.dataset == "mnist" and not self.mnist_dir:
            bad("mnist needs mnist_dir")
        if self.dataset != "mnist" and self.train_n + self.val_n + self.test_n > self.n_samples:
            bad("split sizes exceed n_samples")
        if self.dataset == "circles" and not 0 < self.factor < 1:
            bad("factor must lie in (0, 1)")
        if self.noise < 0:
            bad("noise must be >= 0")
        if min(self.train_n, self.val_n, self.test_n) < 1:
            bad("split sizes must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            bad("hidden sizes must be >= 1")
        if any(not 0 <= i < len(self.hidden) for i in self.dropout_layers):
            bad("dropout_layers must index hidden layers")
        if not self.models or any(m not in MODEL_KINDS for m in self.models):
            bad(f"models must be drawn from {MODEL_KINDS}")
        if "cmc" in self.models:
            if not self.n_sample or min(self.n_sample) < 1:
                bad("cmc requires n_sample >= 1 per dropout layer")
            if len(self.n_sample) not in (1, len(set(self.dropout_layers))):
                bad("give one n_sample, or one per dropout layer")
        if not 0 <= self.p < 1:
            bad("p must lie in [0, 1)")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            bad("need lr > 0 and momentum in [0, 1)")
        expected_loss = "nll" if self.dataset == "mnist" else "bce"
        if self.loss != expected_loss:
            bad(f"{self.dataset} uses loss {expected_loss!r}")
        if min(self.epochs_mc, self.epochs_cmc, self.batch_size, self.T, self.reps) < 1:
            bad("epochs, batch_size, T and reps must be >= 1")
        if self.activation not in ("relu", "sigmoid", "identity"):
            bad("activation must be relu, sigmoid or identity")
        if self.mask_mode not in ("per_example", "per_batch"):
            bad("mask_mode must be per_example or per_batch")
        if self.sweep not in ("tau", "rate"):
            bad("sweep must be 'tau' or 'rate'")
        if self.tau_scale not in ("absolute", "fraction"):
            bad("tau_scale must be 'absolute' or 'fraction'")
        grid = list(self.tau_grid)
        if not grid or min(grid) < 0 or grid != sorted(grid):
            bad("tau_grid must be non-empty, non-negative and ascending")
        if self.sweep == "rate":
            if not self.rate_grid or any(not 0 <= r < 1 for r in self.rate_grid):
                bad("rate_grid entries must lie in [0, 1)")
            if self.tau_fixed < 0:
                bad("tau_fixed must be >= 0")

    # -- derived values -----------------------------------------------

    @property
    def class_count(self) -> int:
        return 10 if self.dataset == "mnist" else 2

    def resolved_tau_grid(self) -> list[float]:
        scale = math.log(self.class_count) if self.tau_scale == "fraction" else 1.0
        return [float(t) * scale for t in self.tau_grid]

    def epochs_for(self, model: str) -> int:
        return self.epochs_cmc if model == "cmc" else self.epochs_mc

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- (de)serialization --------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, doc: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        if base is None:
            return cls(**doc)
        return dataclasses.replace(base, **doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_TOY = dict(
    n_samples=10000, train_n=8000, val_n=1000, test_n=1000,
    hidden=(20, 20, 20), dropout_layers=(0, 1), n_sample=(10,),
    lr=0.08, momentum=0.0, loss="bce", epochs_mc=300, epochs_cmc=300,
    T=100, reps=20, p=0.3,
)

PRESETS = {
    "moons-tau-sweep": ExperimentConfig(
        name="moons-tau-sweep", dataset="moons", noise=0.3, sweep="tau", **_TOY),
    "moons-rate-sweep": ExperimentConfig(
        name="moons-rate-sweep", dataset="moons", noise=0.3, sweep="rate", tau_fixed=0.5, **_TOY),
    "circles-tau-sweep": ExperimentConfig(
        name="circles-tau-sweep", dataset="circles", noise=0.07, factor=0.8, sweep="tau",
        notes=("circle factor 0.8 is a default; the protocol does not fix it",), **_TOY),
    "mnist-tau-sweep": ExperimentConfig(
        name="mnist-tau-sweep", dataset="mnist", mnist_dir="data/mnist", architecture="mnist-mlp",
        train_n=50000, val_n=10000, test_n=10000, hidden=(320, 50), dropout_layers=(0, 1),
        p=0.5, n_sample=(20,), lr=0.001, momentum=0.9, loss="nll",
        epochs_mc=100, epochs_cmc=70, T=100, reps=20, sweep="tau", tau_scale="fraction",
        tau_grid=tuple(round(0.05 * i, 2) for i in range(21)),
        notes=("MLP 784-320-50-10 stands in for LeNet-5; convolutions are not modeled",)),
}
PRESETS["mnist-mlp"] = PRESETS["mnist-tau-sweep"]


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a flat YAML (or JSON) key/value file.

    A manifest written by a sweep is also accepted; its ``config`` block
    is used.
    """
    doc = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a key/value mapping")
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    return ExperimentConfig.from_dict(doc, base)
