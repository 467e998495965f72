"""Train/evaluate repetitions and aggregate them into sweep tables."""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..datasets import LabeledDataset, SplitSpec, load_mnist, make_circles, make_moons, split_dataset
from ..estimator import DropoutMLPClassifier
from ..exceptions import BankTimeoutError, InfeasibleBankError
from ..uncertainty import METRIC_NAMES, ThresholdRow, sweep_pairs
from .config import ExperimentConfig

__all__ = [
    "RunRecord",
    "SweepCell",
    "SweepResult",
    "prepare_data",
    "build_estimator",
    "train_with_checkpoint",
    "run_experiment",
    "dropout_rate_sweep",
    "aggregate",
]

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    """One trained-and-evaluated model.

    ``rows`` are recomputable from ``pe`` and ``correct`` with
    :func:`~controlled_dropout.uncertainty.sweep_pairs`.
    """

    run_id: str
    rep: int
    seed: int
    model: str
    p: float
    status: str = "ok"
    error: str = ""
    best_epoch: int | None = None
    best_val_loss: float | None = None
    test_accuracy: float | None = None
    rows: list[ThresholdRow] = field(default_factory=list)
    pe: np.ndarray | None = None
    correct: np.ndarray | None = None
    labels: np.ndarray | None = None
    predicted: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# -- data ---------------------------------------------------------------

@functools.lru_cache(maxsize=2)
def _mnist(directory: str):
    return load_mnist(directory, "train"), load_mnist(directory, "test")


def prepare_data(config: ExperimentConfig, seed: int):
    """Generate (or load) and split the data for one repetition.

    Data only depends on ``seed``; models trained in the same repetition
    see identical splits.
    """
    if config.dataset == "mnist":
        train_full, test = _mnist(str(config.mnist_dir))
        train, val, _ = split_dataset(
            train_full, SplitSpec(config.train_n, config.val_n, 0, seed=[seed, 0, 1]))
        if config.test_n < len(test):
            pick = np.random.default_rng([seed, 0, 2]).permutation(len(test))[:config.test_n]
            test = test.subset(np.sort(pick))
        return train, val, test
    if config.dataset == "moons":
        ds = make_moons(config.n_samples, config.noise, seed=[seed, 0, 0])
    else:
        ds = make_circles(config.n_samples, config.noise, config.factor, seed=[seed, 0, 0])
    return split_dataset(ds, SplitSpec(config.train_n, config.val_n, config.test_n, seed=[seed, 0, 1]))


# -- training -------------------------------------------------------------

def build_estimator(config: ExperimentConfig, model: str, seed: int, p: float | None = None):
    n_sample = config.n_sample[0] if len(config.n_sample) == 1 else config.n_sample
    return DropoutMLPClassifier(
        hidden_layer_sizes=config.hidden,
        activation=config.activation,
        dropout="controlled" if model == "cmc" else "traditional",
        dropout_rate=config.p if p is None else p,
        dropout_layers=config.dropout_layers,
        n_masks=n_sample,
        learning_rate=config.lr,
        momentum=config.momentum,
        batch_size=config.batch_size,
        max_epochs=config.epochs_for(model),
        n_mc_samples=config.T,
        mask_mode=config.mask_mode,
        random_state=seed,
    )


def train_with_checkpoint(config: ExperimentConfig, seed: int, model: str = "cmc",
                          p: float | None = None, data=None):
    """Train one model, keeping the epoch with the lowest validation loss.

    Returns ``(estimator, history)``; ``estimator.params_`` holds the
    retained weights.
    """
    train, val, _ = data if data is not None else prepare_data(config, seed)
    est = build_estimator(config, model, seed, p)
    est.fit(train.features, train.labels, val.features, val.labels)
    return est, est.history_


def _evaluate(est: DropoutMLPClassifier, test: LabeledDataset, taus) -> dict:
    pred = est.predict_uncertainty(test.features)
    predicted = est.classes_[pred.predicted_class]
    correct = predicted == test.labels
    return dict(
        rows=sweep_pairs(pred.pe, correct, taus),
        pe=pred.pe,
        correct=correct,
        labels=test.labels,
        predicted=predicted,
        test_accuracy=float(correct.mean()),
    )


def _run_one(config: ExperimentConfig, rep: int, p: float | None, taus) -> list[RunRecord]:
    seed = config.base_seed + rep
    rate = config.p if p is None else p
    data = prepare_data(config, seed)
    records = []
    for model in config.models:
        prefix = f"p{rate:.2f}-" if config.sweep == "rate" else ""
        rec = RunRecord(run_id=f"{prefix}r{rep:03d}-{model}", rep=rep, seed=seed, model=model, p=rate)
        try:
            est, _ = train_with_checkpoint(config, seed, model, rate, data)
            rec.best_epoch = est.best_epoch_
            rec.best_val_loss = est.best_val_loss_
            for key, value in _evaluate(est, data[2], taus).items():
                setattr(rec, key, value)
        except (InfeasibleBankError, BankTimeoutError) as err:
            rec.status, rec.error = "skipped", str(err)
        except Exception as err:  # a failed repetition must not sink the sweep
            log.exception("run %s failed", rec.run_id)
            rec.status, rec.error = "failed", f"{type(err).__name__}: {err}"
        records.append(rec)
    return records


def _execute(config, tasks, taus, parallel):
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_run_one, config, rep, p, taus) for rep, p in tasks]
            chunks = [f.result() for f in futures]
    else:
        chunks = []
        for rep, p in tasks:
            log.info("%s: rep %d%s", config.name, rep, "" if p is None else f" p={p}")
            chunks.append(_run_one(config, rep, p, taus))
    return [rec for chunk in chunks for rec in chunk]


def run_experiment(config: ExperimentConfig, parallel: int = 1) -> list[RunRecord]:
    """All repetitions of a threshold sweep.

    Repetition ``r`` uses seed ``base_seed + r``. Records come back in
    (rep, model) order whatever the degree of parallelism.

    Raises
    ------
    RuntimeError
        If every run failed.
    """
    records = _execute(config, [(r, None) for r in range(config.reps)],
                       config.resolved_tau_grid(), parallel)
    if not any(r.ok for r in records):
        raise RuntimeError(f"all runs of {config.name} failed: {records[0].error}")
    return records


def dropout_rate_sweep(config: ExperimentConfig, rates=None, tau=None, parallel: int = 1):
    """One model per (rate, model kind, repetition), scored at a fixed threshold.

    Rates whose bank cannot be built come back as ``status="skipped"``.
    """
    rates = tuple(config.rate_grid if rates is None else rates)
    tau = config.tau_fixed if tau is None else tau
    config = config.with_overrides(sweep="rate", rate_grid=rates, tau_fixed=tau)
    tasks = [(r, float(p)) for p in rates for r in range(config.reps)]
    return _execute(config, tasks, [tau], parallel)


# -- aggregation ------------------------------------------------------------

@dataclass
class SweepCell:
    grid: float
    model: str
    mean: dict
    std: dict
    n_defined: dict
    n_undefined_by_metric: dict
    n_runs: int
    # runs in this cell with at least one undefined metric
    n_undefined: int = 0


@dataclass
class SweepResult:
    axis: str
    cells: list[SweepCell]
    n_skipped: int = 0

    def cell(self, grid, model) -> SweepCell:
        for c in self.cells:
            if c.model == model and math.isclose(c.grid, grid, rel_tol=0, abs_tol=1e-12):
                return c
        raise KeyError((grid, model))

    @property
    def grid(self) -> list[float]:
        return sorted({c.grid for c in self.cells})

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(c.model for c in self.cells))


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate(records, axis: str = "tau") -> SweepResult:
    """Mean and sample std of every metric per (grid value, model).

    ``axis="tau"`` groups by threshold; ``axis="p"`` groups by dropout
    rate (each record then holds a single threshold row). Undefined
    metric values are left out and counted.
    """
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    ok = [r for r in records if r.ok]
    if not ok:
        raise ValueError("no successful runs to aggregate")
    groups: dict = {}
    for rec in ok:
        for row in rec.rows:
            key = (row.tau if axis == "tau" else rec.p, rec.model)
            groups.setdefault(key, []).append(row.metrics)
    models = list(dict.fromkeys(r.model for r in ok))
    cells = []
    for (grid, model) in sorted(groups, key=lambda k: (k[0], models.index(k[1]))):
        metrics = groups[(grid, model)]
        mean, std, n_def, n_undef = {}, {}, {}, {}
        for name in METRIC_NAMES:
            values = [getattr(m, name) for m in metrics if getattr(m, name) is not None]
            mean[name], std[name] = _mean_std(values)
            n_def[name] = len(values)
            n_undef[name] = len(metrics) - len(values)
        any_undef = sum(any(getattr(m, n) is None for n in METRIC_NAMES) for m in metrics)
        cells.append(SweepCell(float(grid), model, mean, std, n_def, n_undef, len(metrics), any_undef))
    return SweepResult(axis, cells, n_skipped=len(records) - len(ok))
