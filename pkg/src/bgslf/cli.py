"""Command line entry point.

Exit codes: 0 success, 1 configuration/argument error, 2 data or file error,
3 numeric abort during training, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import data as dp
from . import gradcheck, synth
from .config import ConfigError, load_run_config
from .graph import sparsity_report
from .metrics import format_table
from .optim import NumericError
from .training import evaluate, historical_average, model_from_checkpoint, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _out(args, text: str) -> None:
    if not args.quiet:
        print(text)


def cmd_train(args) -> int:
    try:
        cfg, run = load_run_config(args.config)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    cfg = dataclasses.replace(cfg, **overrides)
    data_path = Path(run["data"])
    if not data_path.is_absolute():
        data_path = Path(args.config).parent / data_path
    try:
        ds = dp.load(data_path, run["format"], cfg.zero_is_missing, cfg.input_len, cfg.output_len)
        ds = dp.zscore_fit_apply(ds)
    except dp.DataError as exc:
        _err(str(exc))
        return EXIT_DATA
    out_dir = Path(run["out_dir"])
    if not out_dir.is_absolute():
        out_dir = Path(args.config).parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train.log"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("epoch,lr,train_mae,valid_mae\n")

        def on_epoch(e):
            line = f"{e.epoch},{e.lr:.6g},{e.train_mae:.6f},{e.valid_mae:.6f}"
            log.write(line + "\n")
            log.flush()
            _out(args, line)

        try:
            result = train(cfg, ds, on_epoch)
        except NumericError as exc:
            _err(f"numeric abort: {exc}")
            return EXIT_NUMERIC
        except dp.DataError as exc:
            _err(str(exc))
            return EXIT_DATA
    ckpt_path = out_dir / "checkpoint.bgck"
    ck.save(ckpt_path, result.checkpoint)
    _out(args, f"checkpoint: {ckpt_path}")
    return 0


def _parse_horizons(text: str) -> list[int]:
    try:
        hs = [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise ConfigError(f"bad --horizons {text!r}") from None
    if not hs or any(h < 1 for h in hs):
        raise ConfigError(f"bad --horizons {text!r}")
    return hs


def cmd_eval(args) -> int:
    try:
        horizons = _parse_horizons(args.horizons)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        ckpt = ck.load(args.checkpoint)
        cfg = ckpt.config
        ds = dp.load(args.data, args.format, cfg["zero_is_missing"], cfg["input_len"], cfg["output_len"])
        if any(h > cfg["output_len"] for h in horizons):
            _err(f"horizons must lie in 1..{cfg['output_len']}")
            return EXIT_CONFIG
        table, picks = evaluate(ckpt, ds, horizons, args.split)
        result = {"bgslf": table}
        if args.baseline == "ha":
            result["ha"] = historical_average(ds, cfg["period"], horizons, args.split)
    except (ck.CheckpointError, dp.DataError, KeyError) as exc:
        _err(str(exc))
        return EXIT_DATA
    print(json.dumps({name: {str(h): row for h, row in t.items()} for name, t in result.items()}))
    for name, t in result.items():
        _out(args, format_table(t, title=name))
    if args.selection_out:
        counts = np.bincount(picks, minlength=len(ckpt.params["mgn.conv.bias"])).tolist()
        Path(args.selection_out).write_text(
            json.dumps({"batches": len(picks), "counts": counts}), encoding="utf-8")
    return 0


def cmd_export_graphs(args) -> int:
    try:
        ckpt = ck.load(args.checkpoint)
        model = model_from_checkpoint(ckpt)
    except (ck.CheckpointError, KeyError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA
    graphs = model.graph_set().data.astype(np.float64)
    if graphs.min() < 0 or graphs.max() > 1:
        _err("learned graph entries fall outside [0, 1]")
        return EXIT_DATA
    eps = args.epsilon if args.epsilon is not None else ckpt.config["eps"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for r, a in enumerate(graphs):
        np.savetxt(out / f"graph_{r}.csv", a, fmt="%.9g", delimiter=",")
        summary.append({"graph": r, "epsilon": eps, "fraction_below": sparsity_report(a, eps)})
    (out / "sparsity.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    _out(args, json.dumps(summary))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite()
    for r in results:
        _out(args, r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        _err("gradient check failed: " + ", ".join(failed))
        return EXIT_GRADCHECK
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.nodes < 2 or args.steps < 100:
        _err("synth needs --nodes >= 2 and --steps >= 100")
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dynamics == "diffusion":
        noise = 0.01 if args.noise is None else args.noise
        series, w = synth.diffusion_series(args.nodes, args.steps, seed, noise)
        graph_path = out.with_name(out.stem + "_graph.csv")
        np.savetxt(graph_path, w, fmt="%.17g", delimiter=",")
    else:
        series = synth.periodic_series(args.nodes, args.steps, args.period, seed, args.noise or 0.0)
    if out.suffix.lower() == ".csv":
        dp.write_csv(out, series)
    else:
        dp.write_binary(out, series)
    _out(args, f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="bgslf", description="Graph structure learning + DCGRU forecasting")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true", default=False)
    p.add_argument("--quiet", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--format", choices=["csv", "binary"], default=None)
    e.add_argument("--horizons", default="3,6,12")
    e.add_argument("--baseline", choices=["ha"], default=None)
    e.add_argument("--split", choices=["train", "valid", "test"], default="test")
    e.add_argument("--selection-out", default=None, help="write graph selection counts as JSON")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-graphs", parents=[common], help="write learned adjacency matrices")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--epsilon", type=float, default=None)
    x.set_defaults(func=cmd_export_graphs)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference verification suite")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--nodes", type=int, default=8)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--dynamics", choices=["diffusion", "periodic"], default="diffusion")
    s.add_argument("--period", type=int, default=288)
    s.add_argument("--noise", type=float, default=None)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
