"""``fcstg`` command line: train, eval, gradcheck, sweep, synth, dump-adj, ingest.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence,
5 gradient check failure.  ``FCSTG_THREADS`` caps BLAS threads.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import ModelConfig, TrainConfig, dump_config, load_config, with_value
from .data import (
    CsvSchema, Dataset, ingest_csv, load_container, synth_dedt, synth_rul, write_container,
)
from .errors import ConfigError, DataError, TrainingDiverged
from .model import FCSTGNN
from .params import load_params, save_params
from .seeding import rng_for
from .tensor import NumericFault, ShapeError
from .training import EvalReport, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5

SWEEP_AXES = {"f": "patch_size", "M": "window", "s": "stride", "delta": "delta",
              "branches": "branches"}

log = logging.getLogger("fcstg")


class GradcheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting


def _num(v) -> str:
    return repr(float(v))


def report_rows(report: EvalReport, split: str) -> list[list[str]]:
    head = ["split", "n", *report.metrics()]
    return [head, [split, str(report.n), *(_num(v) for v in report.metrics().values())]]


def format_report(report: EvalReport, split: str, fmt: str) -> str:
    rows = report_rows(report, split)
    if fmt == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerows(rows)
        if report.per_class:
            w.writerow(["class", "precision", "recall", "f1", "support"])
            for r in report.per_class:
                w.writerow([r["class"], _num(r["precision"]), _num(r["recall"]), _num(r["f1"]),
                            r["support"]])
        return out.getvalue()
    lines = [f"{split} split, {report.n} samples"]
    for k, v in report.metrics().items():
        lines.append(f"  {k:<12} {_num(v)}")
    if report.per_class:
        lines.append(f"  {'class':>5} {'precision':>22} {'recall':>22} {'f1':>22} {'support':>8}")
        for r in report.per_class:
            lines.append(f"  {r['class']:>5} {_num(r['precision']):>22} {_num(r['recall']):>22} "
                         f"{_num(r['f1']):>22} {r['support']:>8}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# shared plumbing


def _load_data(path) -> Dataset:
    if path is None:
        raise DataError("--data is required")
    return load_container(path)


def _fit_config(cfg: ModelConfig, ds: Dataset) -> ModelConfig:
    """Reconcile the head with the dataset's task and class count."""
    m = ds.manifest
    if cfg.head != m.task:
        raise ConfigError(f"head = {cfg.head} but dataset {m.name!r} is a {m.task} task")
    if m.task == "classification" and cfg.n_classes != m.K:
        cfg = with_value(cfg, "n_classes", int(m.K))
    return cfg


def _coverage_warning(cfg: ModelConfig) -> None:
    if cfg.stride > cfg.window and cfg.ablation in ("none", "no_pooling", "no_decay"):
        log.warning("stride s=%d exceeds window M=%d: some patches fall in no window",
                    cfg.stride, cfg.window)


def build_model(cfg: ModelConfig, ds: Dataset, seed: int) -> FCSTGNN:
    m = ds.manifest
    return FCSTGNN(cfg, m.N, m.L, rng_for(seed, "init"), max_rul=m.max_rul or 0.0)


def fit(cfg: ModelConfig, tcfg: TrainConfig, ds: Dataset, on_epoch=None):
    model = build_model(cfg, ds, tcfg.seed)
    result = train(model, ds.split("train"), ds.split("val"), tcfg, on_epoch=on_epoch)
    return model, result


def _log_line(rec, fmt: str) -> str:
    vals = rec.val.metrics()
    if fmt == "csv":
        return ",".join([str(rec.epoch), _num(rec.train_loss), *(_num(v) for v in vals.values())])
    parts = " ".join(f"val_{k}={_num(v)}" for k, v in vals.items())
    return f"epoch {rec.epoch:>3}  train_loss={_num(rec.train_loss)}  {parts}"


def _configs(args) -> tuple[ModelConfig, TrainConfig, dict]:
    if args.config is None:
        mc, tc, extra = ModelConfig(), TrainConfig(), {}
    else:
        mc, tc, extra = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        tc = dataclasses.replace(tc, seed=args.seed)
    return mc, tc, extra


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    mc, tc, _ = _configs(args)
    ds = _load_data(args.data)
    mc = _fit_config(mc, ds)
    _coverage_warning(mc)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    names = list(EvalReport(ds.manifest.task, 0).metrics())
    lines = [",".join(["epoch", "train_loss", *(f"val_{k}" for k in names)])]

    def on_epoch(rec):
        lines.append(_log_line(rec, "csv"))
        print(_log_line(rec, args.format), flush=True)

    model, result = fit(mc, tc, ds, on_epoch)
    report = evaluate(model, *ds.split("test"))
    save_params(out / "params.bin", model, tc)
    (out / "train_log.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "test_report.csv").write_text(format_report(report, "test", "csv"), encoding="utf-8")
    print(f"best epoch {result.best_epoch}", flush=True)
    sys.stdout.write(format_report(report, "test", args.format))
    return EXIT_OK


def _check_dims(model: FCSTGNN, ds: Dataset) -> None:
    m = ds.manifest
    if (model.n_sensors, model.length) != (m.N, m.L):
        raise ConfigError(f"params expect samples of shape (N={model.n_sensors}, "
                          f"L={model.length}) but dataset has (N={m.N}, L={m.L})")
    if model.config.head != m.task:
        raise ConfigError(f"params have a {model.config.head} head, dataset is {m.task}")


def cmd_eval(args) -> int:
    if args.params is None:
        raise ConfigError("--params is required")
    model, _, _ = load_params(args.params)
    ds = _load_data(args.data)
    _check_dims(model, ds)
    x, y = ds.split(args.split)
    if len(x) == 0:
        raise DataError(f"split {args.split!r} is empty")
    sys.stdout.write(format_report(evaluate(model, x, y), args.split, args.format))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    mc = None
    if args.config is not None:
        mc, _, _ = load_config(args.config)
    results = gradcheck.run(args.seed or 0, mc)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradcheckFailed("failed blocks: " + ", ".join(failed))
    print(f"all {len(results)} blocks below {gradcheck.TOLERANCE:g}")
    return EXIT_OK


def _parse_values(axis: str, text: str) -> list:
    kind = float if axis == "delta" else int
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r} for axis {axis}") from None


def sweep_table(mc: ModelConfig, tc: TrainConfig, ds: Dataset, axis: str, values) -> list[list]:
    key = SWEEP_AXES[axis]
    names = list(EvalReport(ds.manifest.task, 0).metrics())
    rows = [[axis, "status", *names, "best_epoch"]]
    for v in values:
        try:
            cfg = with_value(mc, key, v)
            _coverage_warning(cfg)
            model, result = fit(cfg, tc, ds)
            rep = evaluate(model, *ds.split("test"))
            rows.append([v, "ok", *(_num(x) for x in rep.metrics().values()), result.best_epoch])
        except (ConfigError, TrainingDiverged, NumericFault, ShapeError) as exc:
            msg = str(exc).replace(",", ";").replace("\n", " ")
            rows.append([v, f"error: {msg}", *([""] * len(names)), ""])
    return rows


def cmd_sweep(args) -> int:
    mc, tc, _ = _configs(args)
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {', '.join(SWEEP_AXES)}")
    values = _parse_values(args.axis, args.values or "")
    if not values:
        raise ConfigError("--values needs at least one value")
    ds = _load_data(args.data)
    mc = _fit_config(mc, ds)
    rows = sweep_table(mc, tc, ds, args.axis, values)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.out is None:
        raise ConfigError("--out is required")
    seed = args.seed or 0
    try:
        if args.kind == "dedt":
            manifest, splits = synth_dedt(seed, args.sensors, args.length, args.samples,
                                          f=args.patch_size)
        else:
            manifest, splits = synth_rul(seed, args.sensors, args.length, args.samples,
                                         max_rul=args.max_rul, noise=args.noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_container(args.out, manifest, splits)
    print(f"wrote {manifest.name} to {args.out}: {manifest.splits}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    if args.out is None or args.src is None:
        raise ConfigError("--src and --out are required")
    schema = CsvSchema(task=args.task, layout=args.layout, labels_file=args.labels,
                       data_file=args.data_file, id_column=args.id_column,
                       n_classes=args.n_classes, max_rul=args.max_rul, seed=args.seed or 0,
                       name=args.name)
    manifest, _ = ingest_csv(args.src, schema, out=args.out)
    if manifest.constant_sensors:
        log.warning("constant sensors %s were given std 1", manifest.constant_sensors)
    print(f"wrote {manifest.name} to {args.out}: {manifest.splits}")
    return EXIT_OK


def cmd_dump_adj(args) -> int:
    if args.params is None:
        raise ConfigError("--params is required")
    model, _, _ = load_params(args.params)
    ds = _load_data(args.data)
    _check_dims(model, ds)
    x, _ = ds.split(args.split)
    if not 0 <= args.sample < len(x):
        raise ConfigError(f"sample index {args.sample} outside [0, {len(x)})")
    if not 0 <= args.branch < len(model.branches):
        raise ConfigError(f"branch index {args.branch} outside [0, {len(model.branches)})")
    if not 0 <= args.window < model.plan.count:
        raise ConfigError(f"window index {args.window} outside [0, {model.plan.count})")
    e, pre = model.adjacency(x[args.sample: args.sample + 1], args.branch, return_pre_decay=True)
    mat = (pre if args.pre_decay else e).data[0, args.window]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "value"])
    for (r, c), v in np.ndenumerate(mat):
        w.writerow([r, c, _num(v)])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcstg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, config=True, data=True, out=True):
        if config:
            sp.add_argument("--config", help="config file ([model] and [train] sections)")
        if data:
            sp.add_argument("--data", help="dataset container directory")
        if out:
            sp.add_argument("--out", help="output location")
        sp.add_argument("--seed", type=int, default=None, help="root seed")
        sp.add_argument("--format", choices=("csv", "pretty"), default="pretty")

    sp = sub.add_parser("train", help="train a model and report on the test split")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a params file on one split")
    common(sp, config=False, out=False)
    sp.add_argument("--params", help="params file written by train")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    common(sp, data=False, out=False)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("sweep", help="retrain along one hyperparameter axis")
    common(sp)
    sp.add_argument("--axis", required=True, choices=tuple(SWEEP_AXES))
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("synth", help="generate a synthetic dataset container")
    common(sp, config=False, data=False)
    sp.add_argument("--kind", choices=("dedt", "rul"), default="dedt")
    sp.add_argument("--sensors", type=int, default=4)
    sp.add_argument("--length", type=int, default=48)
    sp.add_argument("--samples", type=int, default=500,
                    help="samples per class (dedt) or in total (rul)")
    sp.add_argument("--patch-size", type=int, default=6, help="lag unit for dedt")
    sp.add_argument("--max-rul", type=float, default=60.0)
    sp.add_argument("--noise", type=float, default=0.05, help="sensor noise for rul")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("dump-adj", help="print one window's adjacency as CSV")
    common(sp, config=False, out=False)
    sp.add_argument("--params", help="params file written by train")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--sample", type=int, default=0)
    sp.add_argument("--branch", type=int, default=0)
    sp.add_argument("--window", type=int, default=0)
    sp.add_argument("--pre-decay", action="store_true", help="dump the softmax before decay")
    sp.set_defaults(func=cmd_dump_adj)

    sp = sub.add_parser("ingest", help="convert CSV files into a dataset container")
    common(sp, config=False, data=False)
    sp.add_argument("--src", help="directory of CSV files")
    sp.add_argument("--task", choices=("classification", "regression"), default="classification")
    sp.add_argument("--layout", choices=("per_file", "long"), default="per_file")
    sp.add_argument("--labels", default="labels.csv", help="labels file inside --src")
    sp.add_argument("--data-file", default="data.csv", help="long-format file inside --src")
    sp.add_argument("--id-column", default="sample_id")
    sp.add_argument("--n-classes", type=int, default=None)
    sp.add_argument("--max-rul", type=float, default=None)
    sp.add_argument("--name", default="ingested")
    sp.set_defaults(func=cmd_ingest)
    return p


@contextlib.contextmanager
def _thread_cap():
    raw = os.environ.get("FCSTG_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"FCSTG_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with _thread_cap():
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NumericFault) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GradcheckFailed as exc:
        print(f"gradcheck: {exc}", file=sys.stderr)
        return EXIT_GRADCHECK


if __name__ == "__main__":
    sys.exit(main())
