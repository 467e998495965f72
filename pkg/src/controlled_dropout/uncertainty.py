"""Monte-Carlo predictive sampling and entropy-based uncertainty metrics.

A prediction is *certain* when its predictive entropy is strictly below
the threshold ``tau``. Crossing that with correct/incorrect gives four
outcomes:

====  =========  =========
      certain    uncertain
====  =========  =========
right TC         FU
wrong FC         TU
====  =========  =========

and the four ratios

* ``u_sen  = TU / (TU + FC)``
* ``u_spec = TC / (TC + FU)``
* ``u_prec = TU / (TU + FU)``
* ``u_acc  = (TU + TC) / total``

A ratio with a zero denominator is reported as ``None``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dropout import Mode
from .nn import NetworkParams, forward

__all__ = [
    "Outcome",
    "MeanPrediction",
    "UncertaintyCounts",
    "UncertaintyMetrics",
    "ThresholdRow",
    "class_probabilities",
    "mc_predict",
    "predictive_entropy",
    "classify_outcome",
    "tally",
    "compute_metrics",
    "threshold_sweep",
    "sweep_pairs",
    "default_tau_grid",
]

METRIC_NAMES = ("u_acc", "u_sen", "u_spec", "u_prec")


class Outcome(str, enum.Enum):
    TC = "TC"
    TU = "TU"
    FC = "FC"
    FU = "FU"


def class_probabilities(out: np.ndarray) -> np.ndarray:
    """Turn network outputs into per-class probability rows.

    A single sigmoid unit ``p`` becomes the two-class row ``[1 - p, p]``.
    """
    out = np.asarray(out, dtype=np.float64)
    if out.shape[-1] == 1:
        return np.concatenate([1.0 - out, out], axis=-1)
    return out


def mc_predict(params: NetworkParams, x, n_samples: int, rng, per_example=True) -> np.ndarray:
    """Stochastic forward passes with dropout kept on.

    Parameters
    ----------
    params : NetworkParams
    x : array-like of shape (n_features,) or (n, n_features)
    n_samples : int
        Number of passes ``T``.
    rng : numpy.random.Generator
    per_example : bool
        Fresh mask per input within a pass (default) or one per pass.

    Returns
    -------
    ndarray of shape (n, T, C), or (T, C) for a single 1-D input.
    """
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    passes = [
        class_probabilities(forward(params, batch, Mode.EVAL_MC, rng, per_example=per_example).probs)
        for _ in range(n_samples)
    ]
    samples = np.stack(passes, axis=1)
    return samples[0] if single else samples


@dataclass
class MeanPrediction:
    """Mean predictive distribution, its argmax and its entropy.

    Fields are arrays whose leading shape is that of the input minus the
    last two axes (scalars for a single ``(T, C)`` sample block).
    """

    mean_dist: np.ndarray
    predicted_class: np.ndarray
    pe: np.ndarray


def predictive_entropy(samples) -> MeanPrediction:
    """Entropy, in nats, of the average of ``T`` class-probability rows.

    `samples` has shape ``(..., T, C)``. ``0 * log 0`` counts as 0 and
    argmax ties go to the lowest class index.
    """
    samples = np.asarray(samples, dtype=np.float64)
    mean = samples.mean(axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mean > 0, mean * np.log(mean), 0.0)
    pe = -terms.sum(axis=-1)
    # rounding can leave -1e-17 for a one-hot mean
    pe = np.maximum(pe, 0.0)
    return MeanPrediction(mean, np.argmax(mean, axis=-1), pe)


def classify_outcome(pred: MeanPrediction, label: int, tau: float) -> Outcome:
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    correct = int(pred.predicted_class) == int(label)
    certain = float(pred.pe) < tau
    if correct:
        return Outcome.TC if certain else Outcome.FU
    return Outcome.FC if certain else Outcome.TU


@dataclass(frozen=True)
class UncertaintyCounts:
    tc: int = 0
    tu: int = 0
    fc: int = 0
    fu: int = 0

    @property
    def total(self) -> int:
        return self.tc + self.tu + self.fc + self.fu


@dataclass(frozen=True)
class UncertaintyMetrics:
    u_sen: float | None
    u_spec: float | None
    u_prec: float | None
    u_acc: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def tally(pe, correct, tau: float) -> UncertaintyCounts:
    """Vectorized count of outcomes for arrays of entropies and hit flags."""
    pe = np.asarray(pe, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    certain = pe < tau
    return UncertaintyCounts(
        tc=int(np.sum(correct & certain)),
        tu=int(np.sum(~correct & ~certain)),
        fc=int(np.sum(~correct & certain)),
        fu=int(np.sum(correct & ~certain)),
    )


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(counts: UncertaintyCounts) -> UncertaintyMetrics:
    if counts.total == 0:
        raise ValueError("cannot compute metrics from empty counts")
    return UncertaintyMetrics(
        u_sen=_ratio(counts.tu, counts.tu + counts.fc),
        u_spec=_ratio(counts.tc, counts.tc + counts.fu),
        u_prec=_ratio(counts.tu, counts.tu + counts.fu),
        u_acc=_ratio(counts.tu + counts.tc, counts.total),
    )


@dataclass(frozen=True)
class ThresholdRow:
    tau: float
    counts: UncertaintyCounts
    metrics: UncertaintyMetrics


def sweep_pairs(pe, correct, grid) -> list[ThresholdRow]:
    """Counts and metrics at every threshold for precomputed ``(pe, correct)`` pairs."""
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be ascending")
    rows = []
    for tau in grid:
        counts = tally(pe, correct, tau)
        rows.append(ThresholdRow(tau, counts, compute_metrics(counts)))
    return rows


def threshold_sweep(samples, labels, grid) -> list[ThresholdRow]:
    """Classify every input at every threshold in the ascending `grid`.

    `samples` is an ``(n, T, C)`` stack of per-input predictive samples.
    """
    pred = predictive_entropy(samples)
    correct = pred.predicted_class == np.asarray(labels)
    return sweep_pairs(pred.pe, correct, grid)


def default_tau_grid(n_classes: int, scale: str = "auto", n_points: int | None = None) -> np.ndarray:
    """Thresholds for a sweep.

    Binary tasks use absolute entropies on ``[0, 0.7]``; multi-class
    tasks use fractions ``[0, 1]`` of the maximum entropy ``ln C``.
    """
    if scale == "auto":
        scale = "absolute" if n_classes == 2 else "fraction"
    if scale == "absolute":
        return np.linspace(0.0, 0.7, n_points or 15)
    if scale == "fraction":
        return np.linspace(0.0, 1.0, n_points or 21) * np.log(n_classes)
    raise ValueError(f"unknown threshold scale {scale!r}")
