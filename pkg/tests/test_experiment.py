import csv
import json
import math
import re

import numpy as np
import pytest

from controlled_dropout.cli import main
from controlled_dropout.exceptions import ConfigurationError
from controlled_dropout.experiment import (
    ExperimentConfig,
    RunRecord,
    aggregate,
    dropout_rate_sweep,
    emit_outputs,
    get_preset,
    load_config,
    load_records,
    run_experiment,
    train_with_checkpoint,
    trend_report,
)
from controlled_dropout.experiment.outputs import METRICS_HEADER, N_BINS, recompute_sweep
from controlled_dropout.uncertainty import (
    ThresholdRow,
    UncertaintyCounts,
    UncertaintyMetrics,
    sweep_pairs,
)

TINY = dict(name="tiny", dataset="moons", n_samples=300, noise=0.2, train_n=200, val_n=50,
            test_n=50, hidden=(8, 8), n_sample=(4,), epochs_mc=3, epochs_cmc=3, T=10,
            reps=2, base_seed=5)


@pytest.fixture
def tiny():
    return ExperimentConfig(**TINY)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config -------------------------------------------------------------------

def test_moons_preset_values():
    c = get_preset("moons-tau-sweep")
    assert (c.n_samples, c.noise, c.train_n, c.val_n, c.test_n) == (10000, 0.3, 8000, 1000, 1000)
    assert c.hidden == (20, 20, 20) and c.dropout_layers == (0, 1) and c.n_sample == (10,)
    assert (c.lr, c.loss, c.epochs_mc, c.epochs_cmc, c.T, c.reps, c.p) == (0.08, "bce", 300, 300, 100, 20, 0.3)


def test_other_presets():
    assert get_preset("moons-rate-sweep").tau_fixed == 0.5
    circles = get_preset("circles-tau-sweep")
    assert (circles.noise, circles.factor) == (0.07, 0.8)
    m = get_preset("mnist-tau-sweep")
    assert (m.p, m.n_sample, m.lr, m.momentum) == (0.5, (20,), 0.001, 0.9)
    assert (m.train_n, m.val_n, m.epochs_cmc, m.epochs_mc, m.T, m.reps) == (50000, 10000, 70, 100, 100, 20)
    assert m.hidden == (320, 50) and m.loss == "nll"
    assert m.resolved_tau_grid()[-1] == pytest.approx(math.log(10))
    with pytest.raises(ConfigurationError):
        get_preset("nope")


@pytest.mark.parametrize("change", [
    dict(models=("mc", "bayes")), dict(n_sample=(0,)), dict(p=1.0), dict(loss="nll"),
    dict(tau_grid=(0.3, 0.1)), dict(train_n=10**6), dict(dropout_layers=(4,)),
])
def test_config_validation(change):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**{**TINY, **change})


def test_config_file_round_trip(tmp_path, tiny):
    path = tmp_path / "c.yaml"
    path.write_text("\n".join(f"{k}: {json.dumps(v)}" for k, v in tiny.to_dict().items()))
    assert load_config(path) == tiny
    path.write_text("bogus: 1\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


# -- training and runs --------------------------------------------------------

def test_checkpoint_single_epoch(tiny):
    est, history = train_with_checkpoint(tiny.with_overrides(epochs_cmc=1), seed=0)
    assert len(history) == 1 and est.best_epoch_ == 1


def test_checkpoint_optimality(tiny):
    est, history = train_with_checkpoint(tiny.with_overrides(epochs_mc=8), seed=1, model="mc")
    assert all(est.best_val_loss_ <= h.val_loss for h in history)


def test_single_rep(tiny):
    records = run_experiment(tiny.with_overrides(reps=1, models=("cmc",)))
    assert len(records) == 1
    rec = records[0]
    assert rec.ok and rec.pe.shape == (50,) and len(rec.rows) == 15


def test_records_recompute_from_pairs(tiny):
    taus = tiny.resolved_tau_grid()
    for rec in run_experiment(tiny):
        assert sweep_pairs(rec.pe, rec.correct, taus) == rec.rows
        assert rec.test_accuracy == rec.correct.mean()


def test_runs_are_deterministic(tiny):
    a, b = run_experiment(tiny), run_experiment(tiny)
    for x, y in zip(a, b):
        assert np.array_equal(x.pe, y.pe) and x.rows == y.rows


def test_parallel_matches_serial(tiny):
    a, b = run_experiment(tiny), run_experiment(tiny, parallel=2)
    assert [r.run_id for r in a] == [r.run_id for r in b]
    for x, y in zip(a, b):
        assert np.array_equal(x.pe, y.pe)


# -- aggregation --------------------------------------------------------------

def _record(model, metrics_by_tau, rep=0):
    rows = [ThresholdRow(tau, UncertaintyCounts(), UncertaintyMetrics(**m)) for tau, m in metrics_by_tau]
    return RunRecord(run_id=f"r{rep}-{model}", rep=rep, seed=rep, model=model, p=0.3, rows=rows)


def _m(acc, prec=0.5):
    return dict(u_acc=acc, u_sen=0.5, u_spec=0.5, u_prec=prec)


def test_aggregate_single_record():
    sweep = aggregate([_record("cmc", [(0.1, _m(0.8)), (0.2, _m(0.9))])])
    assert all(v == 0.0 for c in sweep.cells for v in c.std.values())


def test_aggregate_mean():
    recs = [_record("mc", [(0.1, _m(0.8))], 0), _record("mc", [(0.1, _m(0.9))], 1)]
    cell = aggregate(recs).cell(0.1, "mc")
    assert cell.mean["u_acc"] == pytest.approx(0.85, abs=1e-15)
    assert cell.std["u_acc"] == pytest.approx(np.std([0.8, 0.9], ddof=1), abs=1e-15)


def test_aggregate_undefined_counts():
    rng = np.random.default_rng(0)
    precs = [None] * 3 + list(rng.uniform(size=17))
    recs = [_record("cmc", [(0.1, _m(0.9, p))], i) for i, p in enumerate(precs)]
    cell = aggregate(recs).cell(0.1, "cmc")
    assert cell.n_defined["u_prec"] == 17 and cell.n_undefined_by_metric["u_prec"] == 3
    assert cell.n_undefined == 3
    assert cell.mean["u_prec"] == pytest.approx(np.mean(precs[3:]), abs=1e-15)


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


# -- outputs ------------------------------------------------------------------

@pytest.fixture
def sweep_dir(tmp_path, tiny):
    records = run_experiment(tiny)
    emit_outputs(aggregate(records), records, tmp_path / "out", tiny)
    return tmp_path / "out"


def test_metrics_csv(sweep_dir, tiny):
    rows = _read(sweep_dir / "metrics.csv")
    assert rows[0] == METRICS_HEADER
    assert ",".join(rows[0]) == ("grid,model,u_acc_mean,u_acc_std,u_sen_mean,u_sen_std,"
                                 "u_spec_mean,u_spec_std,u_prec_mean,u_prec_std,n_undefined")
    assert len(rows) - 1 == len(tiny.tau_grid) * 2


def test_histogram_bins(sweep_dir):
    rows = _read(sweep_dir / "pe_histogram.csv")[1:]
    group = [r for r in rows if r[1] == "cmc" and r[2] == "correct"]
    assert len(group) == N_BINS
    assert float(group[0][4]) == 0.0
    assert float(group[-1][5]) == pytest.approx(math.log(2), abs=1e-15)
    widths = {round(float(r[5]) - float(r[4]), 12) for r in group}
    assert widths == {round(math.log(2) / N_BINS, 12)}


def test_recompute_matches(sweep_dir, tiny):
    sweep = recompute_sweep(sweep_dir)
    fresh = sweep_dir / "again.csv"
    from controlled_dropout.experiment.outputs import write_metrics_csv
    write_metrics_csv(fresh, sweep)
    assert fresh.read_bytes() == (sweep_dir / "metrics.csv").read_bytes()
    assert len(load_records(sweep_dir)) == 4


def test_manifest_rerun_is_byte_identical(sweep_dir, tmp_path):
    config = load_config(sweep_dir / "manifest.json")
    records = run_experiment(config)
    emit_outputs(aggregate(records), records, tmp_path / "again", config)
    for name in ("metrics.csv", "pe_histogram.csv", "runs.csv", "predictions.csv", "manifest.json"):
        assert (tmp_path / "again" / name).read_bytes() == (sweep_dir / name).read_bytes()


def test_trend_report_flags_precision(sweep_dir, tiny):
    text = (sweep_dir / "report.md").read_text()
    assert "## u_prec by tau" in text
    assert re.search(r"\*\*(holds|does not hold)\*\*", text) or "No grid point" in text


def test_rate_sweep_with_infeasible_bank(tmp_path, tiny):
    config = tiny.with_overrides(sweep="rate", rate_grid=(0.0, 0.3), tau_fixed=0.5)
    records = dropout_rate_sweep(config)
    assert len(records) == 2 * 2 * config.reps
    skipped = [r for r in records if r.status == "skipped"]
    assert {(r.p, r.model) for r in skipped} == {(0.0, "cmc")}
    sweep = aggregate(records, "p")
    assert sweep.n_skipped == config.reps
    assert {(c.grid, c.model) for c in sweep.cells} == {(0.0, "mc"), (0.3, "mc"), (0.3, "cmc")}
    emit_outputs(sweep, records, tmp_path / "rate", config)
    runs = _read(tmp_path / "rate" / "runs.csv")[1:]
    assert len(runs) == 2 * 2 * config.reps
    assert "dropout rate" in trend_report(sweep, records, config)


# -- CLI ----------------------------------------------------------------------

def _cli_args(tmp_path, *extra):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text("\n".join(f"{k}: {json.dumps(v)}" for k, v in TINY.items()))
    return ["--config", str(cfg), *extra]


def test_cli_generate_data(tmp_path):
    out = tmp_path / "data"
    assert main(["generate-data", *_cli_args(tmp_path), "--out", str(out)]) == 0
    assert len(_read(out / "train.csv")) == 201
    assert _read(out / "test.csv")[0] == ["x0", "x1", "label"]


def test_cli_train_then_evaluate(tmp_path):
    out = tmp_path / "models"
    assert main(["train", *_cli_args(tmp_path), "--out", str(out)]) == 0
    assert (out / "model-cmc" / "weights.npz").exists()
    assert main(["evaluate", "--out", str(out)]) == 0
    rows = _read(out / "model-mc" / "evaluation.csv")
    assert rows[0][0] == "tau" and len(rows) == 16


def test_cli_sweep_and_report(tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", *_cli_args(tmp_path), "--out", str(out), "--reps", "1", "--seed", "3",
            "--set", "T=5"]
    assert main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["reps"] == 1 and manifest["config"]["base_seed"] == 3
    assert manifest["config"]["T"] == 5
    assert main(["report", "--out", str(out)]) == 0
    # tamper with one aggregate: report must notice
    text = (out / "metrics.csv").read_text().splitlines()
    fields = text[1].split(",")
    fields[2] = "0.123"
    text[1] = ",".join(fields)
    (out / "metrics.csv").write_text("\n".join(text) + "\n")
    assert main(["report", "--out", str(out)]) == 1


def test_cli_errors(tmp_path, capsys):
    assert main(["sweep", *_cli_args(tmp_path), "--out", str(tmp_path), "--set", "p=2"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["sweep", "--preset", "nope", "--out", str(tmp_path)])
