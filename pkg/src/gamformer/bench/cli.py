"""Command-line interface: ``gamformer <command> [options]``.

Exit status is 0 on success, 1 on usage errors, 2 when input data or files
cannot be read, and 3 on numeric failures such as a diverging training run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..binning import DEFAULT_N_BINS
from ..ebm import BoostConfig, fit_ebm_lite
from ..estimators import resolve_net
from ..interactions import rank_pairs, select_num_pairs
from ..model import estimate_shapes
from ..numkernel import NonFiniteError
from ..plotting import bin_counts, render_boundary_svg, render_shapes_svg
from ..priors import PriorConfig, PriorError, SupervisedTask, save_task, sample_task
from ..shapes import FormatError, ShapeModel, export_shapes_csv, load_shape_model, save_shape_model
from ..training import TrainingDiverged, load_checkpoint, load_config, parse_overrides, save_checkpoint, train
from .datasets import TOYS, DataError, generate_toy, load_csv, save_csv
from .evaluation import STUDIES, cross_validate, robustness_suite

log = logging.getLogger("gamformer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with status 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--config", help="flat key=value file; keys set option defaults")
    p.add_argument("--out", help="output path")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gamformer", description="In-context GAM estimation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write prior tasks or toy datasets")
    g.add_argument("--source", default="linear3", choices=["prior", *TOYS])
    g.add_argument("--n", type=int, help="rows for toy datasets")
    g.add_argument("--count", type=int, default=1, help="number of prior tasks")
    g.add_argument("--positive-ratio", type=float, default=0.5)

    t = sub.add_parser("train", parents=[common], help="pretrain on synthetic priors")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log", help="NDJSON training log path")

    def data_args(p):
        p.add_argument("--data", required=True, help="CSV with a header row")
        p.add_argument("--target", help="label column (default: last)")
        p.add_argument("--categorical", action="append", default=[], help="categorical column name")

    f = sub.add_parser("fit", parents=[common], help="estimate shape functions in one pass")
    data_args(f)
    f.add_argument("--checkpoint")
    f.add_argument("--pairs", default="0", help="0, 'auto', or a fixed number of pairs")
    f.add_argument("--max-pairs", type=int)
    f.add_argument("--shapes-csv", help="also export the shape table as CSV")

    e = sub.add_parser("ebm-fit", parents=[common], help="fit the boosted baseline GAM")
    data_args(e)
    e.add_argument("--rounds", type=int, default=BoostConfig.rounds)
    e.add_argument("--learning-rate", type=float, default=BoostConfig.learning_rate)
    e.add_argument("--n-bins", type=int, default=DEFAULT_N_BINS)
    e.add_argument("--shapes-csv")

    pr = sub.add_parser("predict", parents=[common], help="class probabilities for rows")
    pr.add_argument("--model", required=True, help="saved shape model")
    pr.add_argument("--data", required=True)

    ev = sub.add_parser("eval", parents=[common], help="cross-validated ROC-AUC")
    data_args(ev)
    ev.add_argument("--model", default="icl", choices=["icl", "ebm"])
    ev.add_argument("--checkpoint")
    ev.add_argument("--k", type=int, default=5)
    ev.add_argument("--pairs", default="0")
    ev.add_argument("--test", help="score this CSV after fitting on --data instead of cross-validating")

    r = sub.add_parser("robust", parents=[common], help="robustness sweeps")
    r.add_argument("--study", default="label_noise", choices=STUDIES)
    r.add_argument("--checkpoint")
    r.add_argument("--seeds", type=int, default=10)
    r.add_argument("--workers", type=int, default=1)

    pl = sub.add_parser("plot", parents=[common], help="render shape functions as SVG")
    pl.add_argument("--model", required=True)
    pl.add_argument("--data", help="CSV whose rows fill the density strips")
    pl.add_argument("--target")
    pl.add_argument("--boundary", action="store_true", help="draw a two-feature decision map instead")
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config and args.command != "train":
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        defaults = {k.replace("-", "_"): v for k, v in parse_overrides(text.splitlines()).items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = set(defaults) - known
        if bad:
            parser.error(f"unknown config keys {sorted(bad)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _pairs_arg(text):
    text = str(text)
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"--pairs must be 0, 'auto' or an integer, got {text!r}") from None


def _require_out(args, what):
    if not args.out:
        raise UsageError(f"{args.command} needs --out for the {what}")
    return Path(args.out)


def _read_rows(path, names) -> np.ndarray:
    """Numeric rows keyed by header name; extra columns are ignored."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: columns {missing} missing")
    cols = [header.index(n) for n in names]
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            out.append([float(row[c]) for c in cols])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: non-numeric feature value") from None
    return np.array(out, dtype=np.float32).astype(np.float64).reshape(-1, len(names))


def write_probabilities(proba: np.ndarray, path=None) -> str:
    lines = [",".join(f"p{c}" for c in range(proba.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in proba]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def _emit(text: str, path=None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_gen_data(args):
    out = _require_out(args, "generated data")
    if args.source == "prior":
        cfg = PriorConfig()
        out.mkdir(parents=True, exist_ok=True)
        for i in range(args.count):
            save_task(sample_task(cfg, (args.seed, i)), out / f"task{i:05d}.gamt")
        print(f"wrote {args.count} tasks to {out}")
        return
    task = generate_toy(args.source, n=args.n, seed=args.seed, positive_ratio=args.positive_ratio)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", task.train_idx), ("test", task.test_idx)):
        part = SupervisedTask(task.X[rows], task.y[rows], task.m, task.categorical_mask, np.arange(len(rows)), np.arange(0))
        save_csv(part, out / f"{name}.csv")
    print(f"wrote {len(task.train_idx)} train and {len(task.test_idx)} test rows to {out}")


def cmd_train(args):
    cfg = load_config(args.config, args.set + ([f"steps={args.steps}"] if args.steps else []) + [f"seed={args.seed}"])
    out = Path(args.out or "runs")
    if args.resume:
        trainer = load_checkpoint(args.resume, {"steps": cfg.steps})
        records = trainer.run(out_dir=out, log_file=args.log)
    else:
        records = train(cfg, out_dir=out, log_file=args.log)
    last = None
    for rec in records:
        last = rec
        if rec["step"] % 50 == 0:
            print(json.dumps(rec), flush=True)
    if last is not None:
        print(json.dumps(last))
    print(f"checkpoint: {out / 'final.gamf'}")


def _load_train(args):
    return load_csv(args.data, args.target, args.categorical)


def _finish_fit(model: ShapeModel, args):
    out = _require_out(args, "shape model")
    save_shape_model(model, out)
    if args.shapes_csv:
        export_shapes_csv(model, args.shapes_csv)
    print(f"saved {model.provenance} model with {model.n_features} terms to {out}")


def cmd_fit(args):
    pairs = _pairs_arg(args.pairs)
    task = _load_train(args)
    net = resolve_net(args.checkpoint)
    if task.m > net.config.max_classes:
        raise DataError(f"{task.m} classes exceed the model's limit of {net.config.max_classes}")
    names = task.feature_names
    if pairs == 0:
        model = estimate_shapes(net, task.X, task.y, task.m, task.categorical_mask, names)
        log.info("shape-estimation passes: 1")
    else:
        ranking = rank_pairs(net, task.X, task.y, task.m, task.categorical_mask)
        grid = None if pairs == "auto" else [pairs]
        sel = select_num_pairs(
            net, task.X, task.y, ranking, task.m, task.categorical_mask, names,
            seed=args.seed, grid=grid, max_pairs=args.max_pairs,
        )
        model = sel.model
    _finish_fit(model, args)


def cmd_ebm_fit(args):
    task = _load_train(args)
    if task.m != 2:
        raise DataError("ebm-fit handles binary labels only")
    cfg = BoostConfig(args.rounds, args.learning_rate, args.n_bins)
    model = fit_ebm_lite(task.X, task.y, cfg, task.categorical_mask, feature_names=task.feature_names)
    _finish_fit(model, args)


def cmd_predict(args):
    model = load_shape_model(args.model)
    X = _read_rows(args.data, model.feature_names[: model.n_base])
    write_probabilities(model.predict_proba(X), args.out)


def cmd_eval(args):
    pairs = _pairs_arg(args.pairs)
    task = _load_train(args)
    if args.test:
        from .evaluation import make_estimator

        est = make_estimator(args.model, args.checkpoint, pairs, args.seed).fit(task.X, task.y)
        X = _read_rows(args.test, task.feature_names)
        write_probabilities(est.predict_proba(X), args.out)
        return
    report = cross_validate(task, args.model, args.k, args.seed, args.checkpoint, pairs)
    _emit(report.to_ndjson(), args.out)
    print(f"AUC {report.mean:.4f} +/- {report.stderr:.4f} over {report.k} folds", file=sys.stderr)


def cmd_robust(args):
    report = robustness_suite(args.checkpoint, args.study, args.seed, args.seeds, workers=args.workers)
    print(report.table())
    if args.out:
        Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in report.records()))


def cmd_plot(args):
    model = load_shape_model(args.model)
    out = _require_out(args, "SVG file")
    X = None
    if args.data:
        X = _read_rows(args.data, model.feature_names[: model.n_base])
    if args.boundary:
        if X is None:
            raise UsageError("plot --boundary needs --data")
        y = None
        if args.target:
            y = load_csv(args.data, args.target).y
        render_boundary_svg(model, X, y, path=out)
    else:
        render_shapes_svg(model, bin_counts(model, X) if X is not None else None, path=out)
    print(f"wrote {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "fit": cmd_fit,
    "ebm-fit": cmd_ebm_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "robust": cmd_robust,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"gamformer: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gamformer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"gamformer: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, PriorError, FileNotFoundError, OSError, ValueError, KeyError) as exc:
        print(f"gamformer: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
