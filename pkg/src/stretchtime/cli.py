"""``stretchtime`` command line: generate, train, evaluate, verify, compare.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .config import ConfigError, ExperimentConfig, load_config, write_resolved
from .data import generate_warped_seasonal, oscillating_warp, write_csv
from .experiment import (VARIANTS, load_dataset, persistence_metrics, prepare, run_experiment,
                         segment_windows, write_metrics)
from .model import load_checkpoint, predict
from .train import TrainingDiverged, mae, mse

log = logging.getLogger("stretchtime")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = _load(args.config)
    if cfg.data:
        raise ConfigError(f"{args.config}: 'data' is set; generate only uses the synthetic section")
    syn = cfg.synthetic_config()
    ds = generate_warped_seasonal(syn)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ds.values, ds.columns)
    write_resolved(cfg, out.with_name(out.name + ".config"))
    tau = oscillating_warp(np.arange(syn.length), syn.warp_amplitude, syn.warp_period)
    with out.with_name(out.name + ".tau.csv").open("w") as fh:
        fh.write("t,tau\n")
        for t, v in enumerate(tau):
            fh.write(f"{t},{float(v)!r}\n")
    print(f"wrote {ds.length} rows x {ds.channels} channels to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args.config)
    out_dir = Path(args.out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(args.config).parent if args.config else None
    dataset = load_dataset(cfg, base)
    write_resolved(cfg, out_dir / "resolved.config")
    outcomes = run_experiment(cfg, dataset, out_dir)
    write_metrics(out_dir / "metrics.csv", [(o.horizon, o.test_mse, o.test_mae) for o in outcomes])
    for o in outcomes:
        print(f"horizon {o.horizon}: test mse {o.test_mse:.6f} mae {o.test_mae:.6f} (best epoch {o.result.best_epoch})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args.config)
    base = Path(args.config).parent if args.config else None
    dataset = load_dataset(cfg, base)
    if args.persistence and not args.checkpoint:
        horizons = args.horizons or list(cfg.horizons)
        rows = []
        for h in horizons:
            ds = prepare(dataset, cfg, h)
            X, Y = segment_windows(ds, args.split, cfg.lookback, h, args.stride or 1)
            rows.append((h, *persistence_metrics(X, Y)))
        _emit_metrics(args, rows)
        return EXIT_OK
    if not args.checkpoint:
        raise UsageError("evaluate needs --checkpoint (or --persistence)")
    params, meta = load_checkpoint(args.checkpoint)
    mc = params.config
    if mc.channels != dataset.channels:
        raise ConfigError(f"checkpoint expects {mc.channels} channels, data has {dataset.channels}")
    if mc.lookback != cfg.lookback:
        raise ConfigError(f"checkpoint lookback {mc.lookback} differs from config lookback {cfg.lookback}")
    horizons = args.horizons or [mc.horizon]
    if any(h > mc.horizon or h < 1 for h in horizons):
        raise ConfigError(f"horizons {horizons} must lie in [1, {mc.horizon}] for this checkpoint")
    ds = prepare(dataset, cfg, mc.horizon)
    if "mean" in meta and not (np.allclose(meta["mean"], ds.mean, rtol=0, atol=1e-12)
                               and np.allclose(meta["std"], ds.std, rtol=0, atol=1e-12)):
        raise ConfigError("data standardization differs from the one the checkpoint was trained with")
    stride = args.stride or meta.get("eval_stride", 1)
    X, Y = segment_windows(ds, args.split, mc.lookback, mc.horizon, stride)
    pred = None if args.persistence else predict(X, params)
    rows = []
    for h in horizons:
        if args.persistence:
            rows.append((h, *persistence_metrics(X, Y[:, :h])))
        else:
            rows.append((h, mse(pred[:, :h], Y[:, :h]), mae(pred[:, :h], Y[:, :h])))
    _emit_metrics(args, rows)
    if args.dump_forecasts:
        if pred is None:
            pred = np.repeat(X[:, -1:, :], Y.shape[1], axis=1)
        dump_forecasts(args.dump_path or Path(args.out).with_name("forecasts.csv"), X, Y, pred, args.dump_forecasts)
    return EXIT_OK


def _emit_metrics(args, rows) -> None:
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_metrics(args.out, rows)
    for h, m, a in rows:
        print(f"horizon {h}: mse {m:.6f} mae {a:.6f}")


def dump_forecasts(path, X, Y, pred, k: int) -> None:
    """``k`` windows as rows ``window,channel,t,truth,pred``; ``pred`` is blank over the lookback."""
    k = min(k, len(X))
    L = X.shape[1]
    with Path(path).open("w") as fh:
        fh.write("window,channel,t,truth,pred\n")
        for w in range(k):
            for c in range(X.shape[2]):
                for t in range(L):
                    fh.write(f"{w},{c},{t},{float(X[w, t, c])!r},\n")
                for t in range(Y.shape[1]):
                    fh.write(f"{w},{c},{L + t},{float(Y[w, t, c])!r},{float(pred[w, t, c])!r}\n")


def cmd_verify(args) -> int:
    rows = verify_mod.run_all(args.seed, args.suites)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    verify_mod.write_report(args.report, rows)
    failed = [r.check for r in rows if not r.passed]
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check}: max_error={float(r.max_error):.3e} threshold={r.threshold:.0e}")
    return EXIT_VERIFY if failed else EXIT_OK


def compare_rows(cfg: ExperimentConfig, variants, seeds, dataset=None) -> list[tuple]:
    """``(variant, seed, horizon, mse, mae)`` for every variant and seed on one dataset."""
    dataset = load_dataset(cfg) if dataset is None else dataset
    rows = []
    for seed in seeds:
        for name in variants:
            run = cfg.with_overrides(model=VARIANTS[name], train={"seed": seed})
            for o in run_experiment(run, dataset):
                rows.append((name, seed, o.horizon, o.test_mse, o.test_mae))
                log.info("%s seed %d horizon %d: mse %.6f", name, seed, o.horizon, o.test_mse)
    return rows


def cmd_compare(args) -> int:
    cfg = _load(args.config)
    variants = list(VARIANTS) if args.variants == ["all"] else args.variants
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)} or 'all'")
    seeds = args.seeds or [cfg.train_config().seed]
    base = Path(args.config).parent if args.config else None
    rows = compare_rows(cfg, variants, seeds, load_dataset(cfg, base))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out.with_name(out.name + ".config"))
    with out.open("w") as fh:
        fh.write("variant,seed,horizon,mse,mae\n")
        for v, s, h, m, a in rows:
            fh.write(f"{v},{s},{h},{m!r},{a!r}\n")
    print(f"{'horizon':>7} " + " ".join(f"{v:>14}" for v in variants))
    for h in cfg.horizons:
        means = [np.mean([m for v, _, hh, m, _ in rows if v == name and hh == h]) for name in variants]
        print(f"{h:>7} " + " ".join(f"{m:>14.6f}" for m in means))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stretchtime", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a warped seasonal AR(1) dataset as CSV")
    g.add_argument("--config", help="experiment config (synthetic.* keys are used)")
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model per configured horizon")
    t.add_argument("--config", help="experiment config")
    t.add_argument("--out-dir", help="override output_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics of a checkpoint (or persistence) on a split")
    e.add_argument("--config", help="experiment config naming the data")
    e.add_argument("--checkpoint", help="checkpoint written by train")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--horizons", type=_int_list, help="comma-separated prefixes of the checkpoint horizon")
    e.add_argument("--stride", type=int, help="window stride (default: the checkpoint's eval stride)")
    e.add_argument("--persistence", action="store_true", help="score the last-value baseline instead")
    e.add_argument("--dump-forecasts", type=int, default=0, metavar="K", help="write K windows for plotting")
    e.add_argument("--dump-path", help="forecast dump path (default: forecasts.csv next to --out)")
    e.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="run the invariant suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", default="verify_report.csv")
    v.add_argument("--suites", type=lambda s: s.split(","), help="comma-separated subset of suites")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="train several variants on the same data and seeds")
    c.add_argument("--config", help="experiment config")
    c.add_argument("--variants", type=lambda s: s.split(","), default=["sype", "rope"],
                   help=f"comma-separated from {','.join(VARIANTS)}, or 'all'")
    c.add_argument("--seeds", type=_int_list, help="comma-separated training seeds")
    c.add_argument("--out", default="compare.csv")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"stretchtime: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        print(f"stretchtime: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
