"""CSV/JSON emission, reloading of raw records, and the trend report."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from ..uncertainty import METRIC_NAMES, sweep_pairs
from .config import ExperimentConfig
from .runner import RunRecord, SweepResult, aggregate

__all__ = [
    "METRICS_HEADER",
    "N_BINS",
    "emit_outputs",
    "write_metrics_csv",
    "write_histogram_csv",
    "write_runs_csv",
    "write_predictions_csv",
    "write_manifest",
    "load_records",
    "trend_report",
]

METRICS_HEADER = [
    "grid", "model",
    "u_acc_mean", "u_acc_std", "u_sen_mean", "u_sen_std",
    "u_spec_mean", "u_spec_std", "u_prec_mean", "u_prec_std",
    "n_undefined",
]
N_BINS = 50
# Column order of runs.csv metric fields, matching the metrics header.
_RUN_METRICS = ("u_acc", "u_sen", "u_spec", "u_prec")


def _fmt(value):
    """Shortest round-tripping text; empty for undefined."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_metrics_csv(path, sweep: SweepResult):
    rows = []
    for c in sweep.cells:
        row = [c.grid, c.model]
        for name in _RUN_METRICS:
            row += [c.mean[name], c.std[name]]
        rows.append(row + [c.n_undefined])
    _write(path, METRICS_HEADER, rows)


def write_histogram_csv(path, records, class_count: int):
    """Binned PE densities split by model and by correct/incorrect.

    50 equal bins over ``[0, ln C]``; density is ``count / (n * width)``
    within each (p, model, outcome) group.
    """
    edges = np.linspace(0.0, math.log(class_count), N_BINS + 1)
    width = edges[1] - edges[0]
    groups: dict = {}
    for rec in records:
        if not rec.ok:
            continue
        for outcome, sel in (("correct", rec.correct), ("incorrect", ~rec.correct)):
            groups.setdefault((rec.p, rec.model, outcome), []).append(rec.pe[sel])
    rows = []
    for (p, model, outcome), parts in groups.items():
        pe = np.clip(np.concatenate(parts), 0.0, edges[-1])
        counts, _ = np.histogram(pe, bins=edges)
        n = counts.sum()
        for b, count in enumerate(counts):
            density = count / (n * width) if n else 0.0
            rows.append([p, model, outcome, b, edges[b], edges[b + 1], int(count), density])
    _write(path, ["p", "model", "outcome", "bin", "bin_left", "bin_right", "count", "density"], rows)


def write_runs_csv(path, records):
    header = ["run_id", "rep", "seed", "model", "p", "status", "best_epoch", "best_val_loss",
              "test_accuracy", "tau", "tc", "tu", "fc", "fu", *_RUN_METRICS, "error"]
    rows = []
    for rec in records:
        base = [rec.run_id, rec.rep, rec.seed, rec.model, rec.p, rec.status,
                rec.best_epoch, rec.best_val_loss, rec.test_accuracy]
        if not rec.ok:
            rows.append(base + [None] * (5 + len(_RUN_METRICS)) + [rec.error])
            continue
        for row in rec.rows:
            c, m = row.counts, row.metrics
            rows.append(base + [row.tau, c.tc, c.tu, c.fc, c.fu]
                        + [getattr(m, k) for k in _RUN_METRICS] + [""])
    _write(path, header, rows)


def write_predictions_csv(path, records):
    """Per-input (pe, correct) pairs: the raw material of every metric."""
    rows = []
    for rec in records:
        if not rec.ok:
            continue
        for i, (label, pred, pe, ok) in enumerate(zip(rec.labels, rec.predicted, rec.pe, rec.correct)):
            rows.append([rec.run_id, i, int(label), int(pred), pe, bool(ok)])
    _write(path, ["run_id", "index", "label", "predicted", "pe", "correct"], rows)


def write_manifest(path, config: ExperimentConfig, records=None):
    doc = {
        "package_version": __version__,
        "config": config.to_dict(),
        "resolved_tau_grid": config.resolved_tau_grid(),
        "mask_sampling": config.mask_mode,
        "notes": list(config.notes) + [
            "synthetic moons/circles use an evenly spaced angle grid plus Gaussian noise",
            "validation loss for checkpointing is computed with dropout off",
        ],
    }
    if records is not None:
        doc["runs"] = {"total": len(records), "ok": sum(r.ok for r in records),
                       "skipped": sum(r.status == "skipped" for r in records),
                       "failed": sum(r.status == "failed" for r in records)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def emit_outputs(sweep: SweepResult, records, out_dir, config: ExperimentConfig) -> dict:
    """Write metrics.csv, pe_histogram.csv, runs.csv, predictions.csv,
    manifest.json and report.md into `out_dir`; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "histogram": out / "pe_histogram.csv",
        "runs": out / "runs.csv",
        "predictions": out / "predictions.csv",
        "manifest": out / "manifest.json",
        "report": out / "report.md",
    }
    write_metrics_csv(paths["metrics"], sweep)
    write_histogram_csv(paths["histogram"], records, config.class_count)
    write_runs_csv(paths["runs"], records)
    write_predictions_csv(paths["predictions"], records)
    write_manifest(paths["manifest"], config, records)
    paths["report"].write_text(trend_report(sweep, records, config))
    return paths


def _opt(text, cast):
    return cast(text) if text != "" else None


def load_records(out_dir, config: ExperimentConfig | None = None) -> list[RunRecord]:
    """Rebuild RunRecords from runs.csv and predictions.csv.

    Threshold rows are recomputed from the stored (pe, correct) pairs,
    not read from runs.csv, so comparing the two checks consistency.
    """
    out = Path(out_dir)
    if config is None:
        from .config import load_config
        config = load_config(out / "manifest.json")
    records: dict[str, RunRecord] = {}
    taus: dict[str, list] = {}
    with open(out / "runs.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rid = row["run_id"]
            if rid not in records:
                records[rid] = RunRecord(
                    run_id=rid, rep=int(row["rep"]), seed=int(row["seed"]), model=row["model"],
                    p=float(row["p"]), status=row["status"], error=row["error"],
                    best_epoch=_opt(row["best_epoch"], int),
                    best_val_loss=_opt(row["best_val_loss"], float),
                    test_accuracy=_opt(row["test_accuracy"], float),
                )
                taus[rid] = []
            if row["tau"] != "":
                taus[rid].append(float(row["tau"]))
    pairs: dict[str, list] = {rid: [] for rid in records}
    with open(out / "predictions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            pairs[row["run_id"]].append(
                (int(row["label"]), int(row["predicted"]), float(row["pe"]), row["correct"] == "1"))
    for rid, rec in records.items():
        if not rec.ok:
            continue
        label, pred, pe, correct = (np.array(col) for col in zip(*pairs[rid]))
        rec.labels, rec.predicted, rec.pe, rec.correct = label, pred, pe, correct.astype(bool)
        rec.rows = sweep_pairs(rec.pe, rec.correct, taus[rid])
    return list(records.values())


# -- trend report -------------------------------------------------------------

def _cell_mean(sweep, grid, model, name):
    try:
        return sweep.cell(grid, model).mean[name]
    except KeyError:
        return None


def _f(value, digits=4):
    return "n/a" if value is None else f"{value:.{digits}f}"


def trend_report(sweep: SweepResult, records, config: ExperimentConfig) -> str:
    """Markdown side-by-side of CMC and MC mean curves.

    Flags whether CMC precision is at least MC precision over the lower
    half of the grid. Descriptive only; nothing here is asserted.
    """
    ok = [r for r in records if r.ok]
    lines = [f"# {config.name}: CMC vs MC dropout", ""]
    lines.append(f"dataset `{config.dataset}`, architecture `{config.architecture}`, "
                 f"repetitions {config.reps}, T={config.T}, mask sampling {config.mask_mode}.")
    lines.append("")
    lines.append("## Test accuracy and predictive entropy")
    lines.append("")
    lines.append("| model | runs | accuracy mean | accuracy std | mean PE (correct) | mean PE (wrong) |")
    lines.append("|---|---|---|---|---|---|")
    for model in dict.fromkeys(r.model for r in ok):
        mine = [r for r in ok if r.model == model]
        acc = np.array([r.test_accuracy for r in mine])
        pe_ok = np.concatenate([r.pe[r.correct] for r in mine])
        pe_bad = np.concatenate([r.pe[~r.correct] for r in mine])
        lines.append(
            f"| {model} | {len(mine)} | {acc.mean():.4f} | {acc.std(ddof=1) if acc.size > 1 else 0.0:.4f} "
            f"| {_f(pe_ok.mean() if pe_ok.size else None)} | {_f(pe_bad.mean() if pe_bad.size else None)} |"
        )
    skipped = [r for r in records if not r.ok]
    if skipped:
        lines += ["", f"{len(skipped)} run(s) not evaluated:"]
        lines += [f"- {r.run_id}: {r.status} ({r.error})" for r in skipped]

    axis_label = "tau" if sweep.axis == "tau" else "dropout rate"
    grid = sweep.grid
    for name in METRIC_NAMES:
        lines += ["", f"## {name} by {axis_label}", "",
                  f"| {axis_label} | cmc | mc | cmc - mc |", "|---|---|---|---|"]
        for g in grid:
            a, b = _cell_mean(sweep, g, "cmc", name), _cell_mean(sweep, g, "mc", name)
            diff = a - b if a is not None and b is not None else None
            lines.append(f"| {g:.4f} | {_f(a)} | {_f(b)} | {_f(diff)} |")

    lower = grid[: math.ceil(len(grid) / 2)]
    compared = [(g, _cell_mean(sweep, g, "cmc", "u_prec"), _cell_mean(sweep, g, "mc", "u_prec"))
                for g in lower]
    compared = [(g, a, b) for g, a, b in compared if a is not None and b is not None]
    lines += ["", "## Precision check", ""]
    if compared:
        wins = [g for g, a, b in compared if a >= b]
        holds = len(wins) == len(compared)
        lines.append(
            f"CMC u_prec >= MC u_prec on {len(wins)}/{len(compared)} comparable grid points "
            f"of the lower half ({axis_label} <= {lower[-1]:.4f}): "
            f"**{'holds' if holds else 'does not hold'}**."
        )
        losses = [f"{g:.4f}" for g, a, b in compared if a < b]
        if losses:
            lines.append(f"CMC below MC at: {', '.join(losses)}.")
    else:
        lines.append("No grid point in the lower half has defined precision for both models.")
    lines.append("")
    return "\n".join(lines)


def recompute_sweep(out_dir, config=None) -> SweepResult:
    records = load_records(out_dir, config)
    if config is None:
        from .config import load_config
        config = load_config(Path(out_dir) / "manifest.json")
    return aggregate(records, "p" if config.sweep == "rate" else "tau")
