"""Command line entry point: ``cmc-dropout <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .exceptions import ConfigurationError
from .experiment.config import PRESETS, ExperimentConfig, get_preset, load_config
from .experiment.outputs import (
    emit_outputs,
    load_records,
    trend_report,
    write_manifest,
    write_metrics_csv,
)
from .experiment.runner import (
    aggregate,
    dropout_rate_sweep,
    prepare_data,
    run_experiment,
    train_with_checkpoint,
)
from .persistence import load_model, save_model
from .uncertainty import sweep_pairs

log = logging.getLogger("controlled_dropout")


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def resolve_config(args) -> ExperimentConfig:
    """Preset, then config file, then --set/--seed/--reps overrides."""
    config = get_preset(args.preset) if args.preset else None
    if args.config:
        config = load_config(args.config, base=config)
    if config is None:
        config = ExperimentConfig()
    changes = dict(_parse_override(s) for s in args.set or [])
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        changes["reps"] = args.reps
    return ExperimentConfig.from_dict(changes, base=config) if changes else config


def _history_csv(path, history):
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{h.epoch},{h.train_loss!r},{'' if h.val_loss is None else repr(h.val_loss)}"
              for h in history]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_generate_data(args):
    config = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test = prepare_data(config, config.base_seed)
    for name, part in (("train", train), ("val", val), ("test", test)):
        part.to_csv(out / f"{name}.csv")
    write_manifest(out / "manifest.json", config)
    print(f"wrote {len(train)}/{len(val)}/{len(test)} rows to {out}")


def cmd_train(args):
    config = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.base_seed
    data = prepare_data(config, seed)
    for model in config.models:
        est, history = train_with_checkpoint(config, seed, model, data=data)
        save_model(est, out / f"model-{model}")
        _history_csv(out / f"model-{model}" / "history.csv", history)
        print(f"{model}: best epoch {est.best_epoch_}, val loss {est.best_val_loss_:.6f}")
    write_manifest(out / "manifest.json", config)


def cmd_evaluate(args):
    out = Path(args.out)
    if args.config or args.preset:
        config = resolve_config(args)
    else:
        config = load_config(out / "manifest.json")
        if args.seed is not None:
            config = config.with_overrides(base_seed=args.seed)
    _, _, test = prepare_data(config, config.base_seed)
    taus = config.resolved_tau_grid()
    for model in config.models:
        est = load_model(out / f"model-{model}")
        pred = est.predict_uncertainty(test.features)
        correct = est.classes_[pred.predicted_class] == test.labels
        lines = ["tau,tc,tu,fc,fu,u_acc,u_sen,u_spec,u_prec"]
        for row in sweep_pairs(pred.pe, correct, taus):
            c, m = row.counts, row.metrics
            vals = [m.u_acc, m.u_sen, m.u_spec, m.u_prec]
            lines.append(",".join([repr(row.tau), str(c.tc), str(c.tu), str(c.fc), str(c.fu)]
                                  + ["" if v is None else repr(v) for v in vals]))
        (out / f"model-{model}" / "evaluation.csv").write_text("\n".join(lines) + "\n")
        print(f"{model}: test accuracy {correct.mean():.4f}")


def cmd_sweep(args):
    config = resolve_config(args)
    if config.sweep == "rate":
        records = dropout_rate_sweep(config, parallel=args.parallel)
        sweep = aggregate(records, "p")
    else:
        records = run_experiment(config, parallel=args.parallel)
        sweep = aggregate(records, "tau")
    paths = emit_outputs(sweep, records, args.out, config)
    ok = sum(r.ok for r in records)
    print(f"{ok}/{len(records)} runs succeeded; outputs in {Path(args.out)}")
    for name, path in paths.items():
        log.info("%s: %s", name, path)


def cmd_report(args):
    out = Path(args.out)
    config = load_config(out / "manifest.json")
    records = load_records(out, config)
    sweep = aggregate(records, "p" if config.sweep == "rate" else "tau")
    # Recompute from raw pairs and compare with what the sweep wrote.
    fresh = out / "metrics.recomputed.csv"
    write_metrics_csv(fresh, sweep)
    original = (out / "metrics.csv").read_text()
    same = fresh.read_text() == original
    fresh.unlink()
    (out / "report.md").write_text(trend_report(sweep, records, config))
    print(f"report written to {out / 'report.md'}")
    if not same:
        print("metrics.csv does not match the aggregate recomputed from predictions.csv",
              file=sys.stderr)
        return 1
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cmc-dropout",
        description="Controlled vs traditional MC dropout experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, reps=False, parallel=False):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="flat YAML/JSON key-value file (or a manifest.json)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config field (repeatable)")
        if reps:
            p.add_argument("--reps", type=int)
        if parallel:
            p.add_argument("--parallel", type=int, default=1, help="worker processes")

    common(sub.add_parser("generate-data", help="write train/val/test CSVs"))
    common(sub.add_parser("train", help="train one model per kind and save it"))
    common(sub.add_parser("evaluate", help="score saved models over the threshold grid"))
    common(sub.add_parser("sweep", help="repeat runs and aggregate a tau or rate sweep"),
           reps=True, parallel=True)
    rep = sub.add_parser("report", help="rebuild report.md from a sweep directory")
    rep.add_argument("--out", required=True)
    return parser


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (ConfigurationError, OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
