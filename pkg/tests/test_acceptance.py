"""Acceptance criteria, one test each.

The terminal summary prints one PASS/FAIL line per criterion. The two
end-to-end protocols are marked ``slow``; deselect them with
``-m "not slow"``.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from controlled_dropout.dropout import build_mask_bank, count_possible_masks, sample_mask
from controlled_dropout.exceptions import InfeasibleBankError
from controlled_dropout.experiment import aggregate, emit_outputs, get_preset, run_experiment
from controlled_dropout.experiment import dropout_rate_sweep
from controlled_dropout.nn import backward, forward
from controlled_dropout.uncertainty import predictive_entropy, threshold_sweep

from conftest import finite_difference_grads, random_labels, random_network, relative_error
from test_dropout import _two_layer_controlled_net

RATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


@pytest.mark.criterion(1)
def test_mask_bank_property_suite():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(1000):
        size = int(rng.integers(1, 13))
        p = float(rng.choice(RATES))
        n = int(rng.integers(1, min(2**size - 1, 64) + 1))
        bank = build_mask_bank(size, n, p, seed=int(rng.integers(2**63 - 1)))
        masks = bank.masks
        assert masks.shape == (n, size)
        assert len({m.tobytes() for m in masks}) == n
        assert np.all((masks == 0.0) | (masks == 1.0 / (1.0 - p)))
        assert np.all(masks.any(axis=1))
    elapsed = time.perf_counter() - start
    with pytest.raises(InfeasibleBankError):
        build_mask_bank(2, 4, 0.5, seed=0)
    assert elapsed < 10.0, f"took {elapsed:.1f} s"


@pytest.mark.criterion(2)
def test_counting_checks():
    assert count_possible_masks(3) == 7
    assert count_possible_masks(100) > 10**29
    params = _two_layer_controlled_net(2)
    rng = np.random.default_rng(0)
    x = np.array([[0.3, -0.7]])
    seen = set()
    for _ in range(10_000):
        trace = forward(params, x, "eval_mc", rng)
        seen.add((trace.masks[0].tobytes(), trace.masks[1].tobytes()))
    assert len(seen) == 4


@pytest.mark.criterion(3)
def test_gradient_check():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    for i in range(20):
        loss_kind = ("bce", "nll")[i % 2]
        dropout = ("traditional", "controlled")[(i // 2) % 2]
        params = random_network(rng, loss_kind, depth=int(rng.integers(1, 4)), dropout=dropout)
        x = rng.normal(size=(4, params.layers[0].spec.input_dim))
        y = random_labels(rng, 4, params, loss_kind)
        trace = forward(params, x, "train", rng)
        analytic = backward(trace, params, y, loss_kind)
        numeric = finite_difference_grads(params, x, y, loss_kind, trace.masks, h=1e-5)
        for (gw, gb), (nw, nb) in zip(analytic, numeric):
            assert relative_error(gw, nw) < 1e-4
            assert relative_error(gb, nb) < 1e-4
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(4)
def test_predictive_entropy_values():
    one_hot = np.zeros((5, 4))
    one_hot[:, 1] = 1.0
    assert predictive_entropy(one_hot).pe == 0.0
    for c in (2, 3, 10):
        assert abs(predictive_entropy(np.full((7, c), 1.0 / c)).pe - math.log(c)) < 1e-12
    pe = predictive_entropy(np.array([[0.9, 0.1], [0.5, 0.5]])).pe
    assert abs(pe - 0.610864) < 1e-6


@pytest.mark.criterion(5)
def test_metric_endpoints_and_monotonicity():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n, t, c = int(rng.integers(5, 200)), int(rng.integers(1, 30)), int(rng.integers(2, 11))
        logits = rng.normal(scale=rng.uniform(0.5, 4.0), size=(n, t, c))
        samples = np.exp(logits - logits.max(axis=-1, keepdims=True))
        samples /= samples.sum(axis=-1, keepdims=True)
        labels = rng.integers(0, c, size=n)
        pred = predictive_entropy(samples)
        wrong = pred.predicted_class != labels

        low = threshold_sweep(samples, labels, [pred.pe.min() * 0.5])[0]
        if pred.pe.min() > 0:
            assert low.metrics.u_spec == 0.0
            if wrong.any():
                assert low.metrics.u_sen == 1.0
        high = threshold_sweep(samples, labels, [pred.pe.max() + 1e-9])[0]
        assert high.metrics.u_spec == 1.0
        if wrong.any():
            assert high.metrics.u_sen == 0.0

        grid = np.sort(rng.uniform(0, math.log(c), size=12))
        rows = threshold_sweep(samples, labels, grid)
        for row in rows:
            assert row.counts.total == n
        spec = [r.metrics.u_spec for r in rows if r.metrics.u_spec is not None]
        sen = [r.metrics.u_sen for r in rows if r.metrics.u_sen is not None]
        assert all(b >= a for a, b in zip(spec, spec[1:]))
        assert all(b <= a for a, b in zip(sen, sen[1:]))


@pytest.mark.criterion(6)
def test_uniform_mask_sampling():
    bank = build_mask_bank(20, 10, 0.3, seed=6)
    draws = sample_mask(bank, np.random.default_rng(6), n=100_000)
    lookup = {m.tobytes(): i for i, m in enumerate(bank.masks)}
    counts = np.bincount([lookup[d.tobytes()] for d in draws], minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_moons_end_to_end(tmp_path):
    config = get_preset("moons-tau-sweep")
    assert (config.reps, config.T) == (20, 100)
    records = run_experiment(config)
    emit_outputs(aggregate(records), records, tmp_path, config)
    for model in ("mc", "cmc"):
        acc = [r.test_accuracy for r in records if r.model == model and r.ok]
        print(f"{model}: accuracies {np.round(acc, 4).tolist()}")
        assert all(len(r.pe) == 1000 for r in records if r.model == model)
        assert sum(a >= 0.85 for a in acc) >= 18


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_mnist_end_to_end(tmp_path, mnist_dir):
    config = get_preset("mnist-mlp").with_overrides(mnist_dir=str(mnist_dir), reps=3)
    records = run_experiment(config)
    emit_outputs(aggregate(records), records, tmp_path, config)
    for model in ("mc", "cmc"):
        mine = [r for r in records if r.model == model and r.ok]
        assert len(mine) == 3
        pe_ok = np.concatenate([r.pe[r.correct] for r in mine])
        pe_bad = np.concatenate([r.pe[~r.correct] for r in mine])
        acc = [r.test_accuracy for r in mine]
        print(f"{model}: accuracies {acc}, mean PE correct {pe_ok.mean():.4f}, wrong {pe_bad.mean():.4f}")
        assert min(acc) >= 0.95
        assert pe_bad.mean() > pe_ok.mean()


def _small(config, **extra):
    """Shrink a preset's run length while keeping its protocol."""
    changes = dict(reps=2, epochs_mc=4, epochs_cmc=3, T=20)
    if config.dataset == "mnist":
        changes.update(train_n=2000, val_n=500, test_n=500)
    else:
        changes.update(n_samples=2000, train_n=1600, val_n=200, test_n=200)
    changes.update(extra)
    return config.with_overrides(**changes)


@pytest.mark.criterion(9)
@pytest.mark.parametrize("preset", ["moons-tau-sweep", "moons-rate-sweep", "circles-tau-sweep",
                                    "mnist-tau-sweep"])
def test_determinism(tmp_path, preset, request):
    config = get_preset(preset)
    if config.dataset == "mnist":
        config = config.with_overrides(mnist_dir=str(request.getfixturevalue("mnist_dir")))
    config = _small(config, rate_grid=(0.2, 0.5)) if config.sweep == "rate" else _small(config)
    outputs = []
    for attempt in ("a", "b"):
        if config.sweep == "rate":
            records = dropout_rate_sweep(config)
            sweep = aggregate(records, "p")
        else:
            records = run_experiment(config)
            sweep = aggregate(records)
        outputs.append(emit_outputs(sweep, records, tmp_path / attempt, config))
    for key in ("metrics", "histogram", "runs", "predictions"):
        assert outputs[0][key].read_bytes() == outputs[1][key].read_bytes(), key


@pytest.mark.criterion(10)
def test_trend_report(tmp_path):
    config = _small(get_preset("moons-tau-sweep"))
    records = run_experiment(config)
    paths = emit_outputs(aggregate(records), records, tmp_path, config)
    report = paths["report"].read_text()
    for name in ("u_acc", "u_prec", "u_sen", "u_spec"):
        assert f"## {name} by tau" in report
    assert "| tau | cmc | mc | cmc - mc |" in report
    assert ("**holds**" in report) or ("**does not hold**" in report)
    print(report)
