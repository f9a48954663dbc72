"""Command-line entry point: ``dcfair {stat,train,eval,converge,tradeoff}``.

Every command writes ``manifest.json`` (resolved arguments, package
versions, seed and a timestamp) into its output directory. All randomness
derives from ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .data import DatasetSchema, load_cached, prepare, split, synth_biased
from .experiments import (
    PAIR_SAMPLERS,
    TRIPLE_SAMPLERS,
    TradeoffPoint,
    convergence_study_cdc,
    convergence_study_dc,
    grid_hash,
    reference_value,
    tradeoff_sweep,
    write_convergence,
    write_tradeoff,
)
from .nn import load_checkpoint, save_checkpoint
from .stats import cdc_stat, cdc_stat_direct, dcov, dcov_direct, silverman_bandwidth
from .train import PENALTY_KINDS, TrainConfig, evaluate, fit, history_lines

log = logging.getLogger("dcfair")


class UsageError(Exception):
    pass


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _columns(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, extra: Optional[dict] = None) -> Path:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "arguments": resolved,
        "seed": resolved.get("seed"),
        "versions": {
            "dcfair": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "created": datetime.now(timezone.utc).isoformat(),
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_numeric_columns(path: str, names: List[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = [h.strip() for h in next(reader, [])]
        if not header:
            raise UsageError(f"{path}: empty file")
        missing = [c for c in names if c not in header]
        if missing:
            raise UsageError(f"{path}: unknown column(s) {missing}")
        idx = [header.index(c) for c in names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise UsageError(f"{path}: row {lineno}: non-numeric or missing value in {names}") from None
    if not rows:
        raise UsageError(f"{path}: no data rows")
    arr = np.array(rows)
    if not np.isfinite(arr).all():
        raise UsageError(f"{path}: non-finite value in row {int(np.argwhere(~np.isfinite(arr))[0, 0]) + 2}")
    return arr


def _relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def cmd_stat(args) -> int:
    Y = read_numeric_columns(args.input, _columns(args.y))
    Z = read_numeric_columns(args.input, _columns(args.z))
    out = {"statistic": args.which, "n": int(Y.shape[0])}
    if args.which == "dcov":
        value = dcov(Y, Z).value
        if args.check:
            out["check_gap"] = _relative_gap(value, dcov_direct(Y, Z).value)
    else:
        if not args.u:
            raise UsageError("cdcov needs --u columns")
        U = read_numeric_columns(args.input, _columns(args.u))
        if args.h is not None:
            h = args.h
        else:
            h = silverman_bandwidth(U.shape[0], U.shape[1])
        out["h"] = h
        value = cdc_stat(Y, Z, U, h).value
        if args.check:
            out["check_gap"] = _relative_gap(value, cdc_stat_direct(Y, Z, U, h).value)
    out["value"] = value
    text = json.dumps(out, sort_keys=True)
    print(text)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "stat.json").write_text(text + "\n")
    write_manifest(out_dir, "stat", args, {"resolved": out})
    return 0


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    cfg = TrainConfig.from_dict(base)
    overlay = {}
    for key in ("epochs", "batch_size", "lr", "momentum", "lr_decay", "lambda_init", "beta", "lambda_max", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overlay[key] = val
    if args.milestones is not None:
        overlay["milestones"] = tuple(_ints(args.milestones))
    if args.hidden is not None:
        overlay["hidden"] = tuple(_ints(args.hidden))
    d = cfg.to_dict()
    d.update(overlay)
    pen = dict(d.pop("penalty"))
    if getattr(args, "penalty", None) is not None:
        pen["kind"] = args.penalty
    if args.bandwidth is not None:
        pen["bandwidth"] = "silverman" if args.bandwidth == "silverman" else float(args.bandwidth)
    d["penalty"] = pen
    cfg = TrainConfig.from_dict(d)
    errors = cfg.validate()
    if errors:
        raise UsageError("invalid training config:\n  " + "\n  ".join(errors))
    return cfg


def _load_splits(args, seed: int):
    if args.synthetic:
        ds = synth_biased(args.synthetic, args.bias, seed=args.synth_seed)
        return split(ds, seed=seed)
    if not (args.data and args.schema):
        raise UsageError("give either --synthetic N or both --data and --schema")
    schema = DatasetSchema.load(args.schema)
    raw = load_cached(args.data, schema, args.cache_dir)
    parts, _ = prepare(raw, schema, seed)
    return parts


def cmd_train(args) -> int:
    cfg = _train_config(args)
    train, val, test = _load_splits(args, cfg.seed)
    model, history = fit(train, cfg, val)
    report = evaluate(model, test, cfg.positive_class)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / "model.npz", {"config": cfg.to_dict()})
    (out_dir / "history.jsonl").write_text(history_lines(history))
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    write_manifest(out_dir, "train", args, {"config": cfg.to_dict()})
    print(report.to_json())
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    positive = meta.get("config", {}).get("positive_class", 1)
    parts = _load_splits(args, args.seed)
    which = {"train": 0, "val": 1, "test": 2}[args.split]
    report = evaluate(model, parts[which], positive)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"report_{args.split}.json").write_text(report.to_json() + "\n")
    write_manifest(out_dir, "eval", args)
    print(report.to_json())
    return 0


def cmd_converge(args) -> int:
    grid = _ints(args.grid)
    if args.statistic == "dc":
        if args.dist not in PAIR_SAMPLERS:
            raise UsageError(f"--dist for dc must be one of {sorted(PAIR_SAMPLERS)}")
        sampler = PAIR_SAMPLERS[args.dist]
        target = args.target
        if target is None and args.dist != "independent_normal":
            target = reference_value(sampler, args.reference_n, args.seed)
        results = convergence_study_dc(sampler, grid, args.trials, args.epsilon, args.seed, target)
    else:
        if args.dist not in TRIPLE_SAMPLERS:
            raise UsageError(f"--dist for cdc must be one of {sorted(TRIPLE_SAMPLERS)}")
        target = 0.0 if args.target is None else args.target
        results = convergence_study_cdc(TRIPLE_SAMPLERS[args.dist], grid, args.trials, args.epsilon, args.seed, target)
    stem = f"converge_{args.statistic}_seed{args.seed}_{grid_hash(args.statistic, args.dist, grid, args.trials)}"
    out_dir = Path(args.out_dir)
    csv_path, json_path = write_convergence(results, out_dir, stem)
    write_manifest(out_dir, "converge", args, {"outputs": [csv_path.name, json_path.name]})
    for r in results:
        print(json.dumps({k: r.summary()[k] for k in ("n", "mean", "median", "exceed_rate", "bandwidth")}))
    return 0


def _seed_list(text: str) -> List[int]:
    if text.isdigit():
        return list(range(int(text)))
    return _ints(text)


def cmd_tradeoff(args) -> int:
    cfg = _train_config(args)
    lambdas = _floats(args.lambdas)
    kinds = _columns(args.kinds)
    bad = [k for k in kinds if k not in PENALTY_KINDS]
    if bad:
        raise UsageError(f"unknown penalty kind(s) {bad}")
    seeds = _seed_list(args.seeds)
    if args.synthetic:
        ds = synth_biased(args.synthetic, args.bias, seed=args.synth_seed)
        points = tradeoff_sweep(ds, lambdas, kinds, seeds, cfg)
    else:
        points = _tradeoff_csv(args, lambdas, kinds, seeds, cfg)
    stem = f"tradeoff_seed{','.join(map(str, seeds))}_{grid_hash(lambdas, kinds, seeds)}"
    if len(stem) > 80:
        stem = f"tradeoff_seeds{len(seeds)}_{grid_hash(lambdas, kinds, seeds)}"
    out_dir = Path(args.out_dir)
    pts, agg = write_tradeoff(points, out_dir, stem)
    write_manifest(out_dir, "tradeoff", args, {"config": cfg.to_dict(), "outputs": [pts.name, agg.name]})
    print(f"wrote {pts} and {agg}")
    return 0


def _tradeoff_csv(args, lambdas, kinds, seeds, cfg):
    """CSV sweeps refit preprocessing per seed so each split is leak-free."""
    if not (args.data and args.schema):
        raise UsageError("give either --synthetic N or both --data and --schema")
    schema = DatasetSchema.load(args.schema)
    raw = load_cached(args.data, schema, args.cache_dir)
    points = []
    for lam in lambdas:
        for kind in kinds:
            for seed in seeds:
                (train, val, test), _ = prepare(raw, schema, seed)
                run_cfg = replace(
                    cfg,
                    seed=seed,
                    lambda_init=lam,
                    beta=0.0 if lam == 0.0 else cfg.beta,
                    penalty=replace(cfg.penalty, kind=kind),
                )
                model, _ = fit(train, run_cfg, val)
                rep = evaluate(model, test, run_cfg.positive_class)
                points.append(TradeoffPoint(lam, kind, seed, rep.accuracy, rep.delta_dp, rep.delta_eo))
    return points


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--schema", help="JSON schema file for --data")
    g.add_argument("--cache-dir", help="cache parsed CSVs here (keyed by schema + file hash)")
    g.add_argument("--synthetic", type=int, metavar="N", help="use the synthetic biased generator with N rows")
    g.add_argument("--bias", type=float, default=0.9, help="synthetic group bias in [0, 1] (default 0.9)")
    g.add_argument("--synth-seed", type=int, default=0, help="seed of the synthetic generator (default 0)")


def _add_train_args(p, with_penalty=True):
    g = p.add_argument_group("training (defaults: batch 1024, lr 0.1, momentum 0.9, 40 epochs, /10 at 15,30)")
    g.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    if with_penalty:
        g.add_argument("--penalty", choices=PENALTY_KINDS)
        g.add_argument("--lambda-init", type=float)
    g.add_argument("--beta", type=float, help="dual step size")
    g.add_argument("--lambda-max", type=float, help="optional ceiling on the multiplier")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--lr-decay", type=float)
    g.add_argument("--milestones", help="comma-separated epochs, e.g. 15,30")
    g.add_argument("--hidden", help="comma-separated hidden widths, e.g. 128,128,128")
    g.add_argument("--bandwidth", help="'silverman' (default) or a fixed positive h for cdc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcfair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"dcfair {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stat", help="compute dcov or cdcov on CSV columns")
    p.add_argument("which", choices=["dcov", "cdcov"])
    p.add_argument("--input", required=True)
    p.add_argument("--y", required=True, help="comma-separated Y columns")
    p.add_argument("--z", required=True, help="comma-separated Z columns")
    p.add_argument("--u", help="comma-separated U columns (cdcov)")
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--h", type=float, help="fixed kernel bandwidth")
    bw.add_argument("--silverman", action="store_true", help="Silverman bandwidth (default)")
    p.add_argument("--check", action="store_true", help="also run the direct route and report the gap")
    p.add_argument("--out-dir", default="dcfair-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stat)

    p = sub.add_parser("train", help="train a (fair) classifier")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--seed", type=int, help="split and model seed (default 0)")
    p.add_argument("--out-dir", default="dcfair-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--seed", type=int, default=0, help="split seed used in training")
    p.add_argument("--out-dir", default="dcfair-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("converge", help="Monte Carlo convergence study")
    p.add_argument("--statistic", choices=["dc", "cdc"], default="dc")
    p.add_argument("--dist", help="sampler name (dc: %s; cdc: %s)" % (", ".join(PAIR_SAMPLERS), ", ".join(TRIPLE_SAMPLERS)))
    p.add_argument("--grid", default="32,128,512")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--target", type=float, help="population target (default 0, or a reference draw for dependent dc)")
    p.add_argument("--reference-n", type=int, default=8192)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="dcfair-out")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("tradeoff", help="sweep lambda_init x penalty kinds x seeds")
    _add_data_args(p)
    _add_train_args(p, with_penalty=False)
    p.add_argument("--lambdas", default="0.5,2,8,20")
    p.add_argument("--kinds", default="dc,cdc")
    p.add_argument("--seeds", default="10", help="a count N (seeds 0..N-1) or a comma-separated list")
    p.add_argument("--out-dir", default="dcfair-out")
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.command == "converge" and args.dist is None:
        args.dist = "independent_normal" if args.statistic == "dc" else "conditionally_independent"
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError, KeyError) as exc:
        print(f"dcfair {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
