"""Monte Carlo convergence studies and accuracy/fairness trade-off sweeps."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, split
from .stats import cdc_stat, dcov, dcov_sform, silverman_bandwidth
from .train import TrainConfig, evaluate, fit

PAIR_SAMPLERS: Dict[str, Callable] = {}
TRIPLE_SAMPLERS: Dict[str, Callable] = {}


def _register(table):
    def deco(fn):
        table[fn.__name__] = fn
        return fn

    return deco


@_register(PAIR_SAMPLERS)
def independent_normal(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Independent standard normal scalars; population distance covariance 0."""
    return rng.standard_normal((n, 1)), rng.standard_normal((n, 1))


@_register(PAIR_SAMPLERS)
def identical_normal(rng: np.random.Generator, n: int):
    """``Z = Y``; needs a Monte Carlo reference target."""
    y = rng.standard_normal((n, 1))
    return y, y.copy()


def _onehot_condition(rng, n):
    u = rng.integers(0, 2, size=n)
    return u, np.eye(2)[u]


@_register(TRIPLE_SAMPLERS)
def conditionally_independent(rng: np.random.Generator, n: int):
    """``Y = f(U) + e1`` and ``Z = g(U) + e2`` with independent noises."""
    u, U = _onehot_condition(rng, n)
    Y = (2.0 * u - 1.0)[:, None] + rng.standard_normal((n, 1))
    Z = (1.5 * u)[:, None] + rng.standard_normal((n, 1))
    return Y, Z, U


@_register(TRIPLE_SAMPLERS)
def conditionally_dependent(rng: np.random.Generator, n: int):
    """Same ``Y`` as :func:`conditionally_independent` with ``Z = Y``."""
    u, U = _onehot_condition(rng, n)
    Y = (2.0 * u - 1.0)[:, None] + rng.standard_normal((n, 1))
    return Y, Y.copy(), U


@dataclass
class ConvergenceTrial:
    n: int
    trials: int
    values: np.ndarray
    deviations: np.ndarray
    epsilon: float
    target: float = 0.0
    bandwidth: Optional[float] = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.deviations))

    @property
    def median(self) -> float:
        return float(np.median(self.deviations))

    @property
    def exceed_rate(self) -> float:
        return float(np.mean(self.deviations > self.epsilon))

    def quantiles(self, qs=(0.1, 0.25, 0.75, 0.9)) -> Dict[str, float]:
        return {f"q{int(q * 100):02d}": float(np.quantile(self.deviations, q)) for q in qs}

    def summary(self) -> dict:
        out = {
            "n": self.n,
            "trials": self.trials,
            "epsilon": self.epsilon,
            "target": self.target,
            "bandwidth": self.bandwidth,
            "mean": self.mean,
            "median": self.median,
            "mean_value": float(np.mean(self.values)),
            "exceed_rate": self.exceed_rate,
        }
        out.update(self.quantiles())
        return out


def max_workers() -> int:
    """Worker cap from ``DCFAIR_MAX_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DCFAIR_MAX_WORKERS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(max_workers(), len(items)) or 1
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _validate_grid(n_grid: Sequence[int], trials: int, minimum: int) -> List[int]:
    grid = [int(n) for n in n_grid]
    if not grid:
        raise ValueError("sample-size grid is empty")
    if any(n < minimum for n in grid):
        raise ValueError(f"every sample size must be >= {minimum}, got {grid}")
    if len(set(grid)) != len(grid):
        raise ValueError(f"sample-size grid has duplicates: {grid}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    return grid


def _trial_seeds(seed: int, n_grid: Sequence[int], trials: int):
    """One independent child seed per (grid point, trial)."""
    children = np.random.SeedSequence(seed).spawn(len(n_grid) * trials)
    return [children[i * trials : (i + 1) * trials] for i in range(len(n_grid))]


def reference_value(sampler: Callable, n: int = 8192, seed: int = 20240101) -> float:
    """Single high-``n`` draw of the distance covariance, used as a stand-in target."""
    Y, Z = sampler(np.random.default_rng(seed), n)
    return dcov_sform(Y, Z).value


def convergence_study_dc(
    sampler: Callable = independent_normal,
    n_grid: Sequence[int] = (32, 128, 512),
    trials: int = 100,
    epsilon: float = 0.05,
    seed: int = 0,
    target: Optional[float] = None,
) -> List[ConvergenceTrial]:
    """Distance covariance deviations ``|dcov - target|`` across sample sizes.

    ``target`` defaults to 0, which is only correct for independent samplers.
    """
    grid = _validate_grid(n_grid, trials, 2)
    if target is None:
        if sampler not in (independent_normal,):
            raise ValueError("a reference target is required for dependent samplers")
        target = 0.0
    results = []
    for n, seeds in zip(grid, _trial_seeds(seed, grid, trials)):
        def one(ss, n=n):
            Y, Z = sampler(np.random.default_rng(ss), n)
            return dcov(Y, Z).value

        values = np.array(_map(one, seeds))
        results.append(ConvergenceTrial(n, trials, values, np.abs(values - target), epsilon, target))
    return results


def convergence_study_cdc(
    sampler: Callable = conditionally_independent,
    n_grid: Sequence[int] = (32, 128, 512),
    trials: int = 100,
    epsilon: float = 0.05,
    seed: int = 0,
    target: float = 0.0,
) -> List[ConvergenceTrial]:
    """Conditional statistic deviations with Silverman's bandwidth per sample size.

    The deviation includes the kernel bias, so each record carries ``h(n)``.
    """
    grid = _validate_grid(n_grid, trials, 3)
    results = []
    for n, seeds in zip(grid, _trial_seeds(seed, grid, trials)):
        def one(ss, n=n):
            Y, Z, U = sampler(np.random.default_rng(ss), n)
            h = silverman_bandwidth(n, U.shape[1])
            return cdc_stat(Y, Z, U, h).value, h

        out = _map(one, seeds)
        values = np.array([v for v, _ in out])
        h = out[0][1]
        results.append(ConvergenceTrial(n, trials, values, np.abs(values - target), epsilon, target, h))
    return results


def grid_hash(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:10]


def write_convergence(results: Sequence[ConvergenceTrial], out_dir, stem: str) -> Tuple[Path, Path]:
    """Per-trial CSV and per-``n`` JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}_trials.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "trial", "bandwidth", "value", "deviation"])
        for res in results:
            for i, (v, d) in enumerate(zip(res.values, res.deviations)):
                w.writerow([res.n, i, "" if res.bandwidth is None else repr(res.bandwidth), repr(float(v)), repr(float(d))])
    json_path = out_dir / f"{stem}_summary.json"
    json_path.write_text(json.dumps([r.summary() for r in results], indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


@dataclass(frozen=True)
class TradeoffPoint:
    lambda_init: float
    kind: str
    seed: int
    accuracy: float
    delta_dp: float
    delta_eo: float


def tradeoff_sweep(
    dataset: Dataset,
    lambda_grid: Sequence[float],
    kinds: Sequence[str],
    seeds: Sequence[int],
    config: TrainConfig = TrainConfig(),
    fractions=(0.70, 0.15, 0.15),
) -> List[TradeoffPoint]:
    """Train one model per (lambda_init, kind, seed) and score it on the test split.

    ``seed`` drives both the data split and the model. Cells with
    ``lambda_init == 0`` pin ``beta = 0`` so they stay unpenalised.
    """
    if not len(lambda_grid) or not len(kinds) or not len(seeds):
        raise ValueError("lambda grid, kinds and seeds must all be nonempty")
    cells = [(float(lam), kind, int(seed)) for lam in lambda_grid for kind in kinds for seed in seeds]

    def run(cell):
        lam, kind, seed = cell
        train, val, test = split(dataset, fractions, seed)
        cfg = replace(
            config,
            seed=seed,
            lambda_init=lam,
            beta=0.0 if lam == 0.0 else config.beta,
            penalty=replace(config.penalty, kind=kind),
        )
        model, _ = fit(train, cfg, val)
        rep = evaluate(model, test, cfg.positive_class)
        return TradeoffPoint(lam, kind, seed, rep.accuracy, rep.delta_dp, rep.delta_eo)

    return _map(run, cells)


def aggregate(points: Sequence[TradeoffPoint]) -> List[dict]:
    """Mean and population std of each metric per (kind, lambda_init) cell."""
    cells: Dict[Tuple[str, float], List[TradeoffPoint]] = {}
    for p in points:
        cells.setdefault((p.kind, p.lambda_init), []).append(p)
    rows = []
    for (kind, lam), pts in sorted(cells.items()):
        row = {"kind": kind, "lambda_init": lam, "n_seeds": len(pts)}
        for metric in ("accuracy", "delta_dp", "delta_eo"):
            vals = np.array([getattr(p, metric) for p in pts])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std())
        rows.append(row)
    return rows


POINT_COLUMNS = ["lambda_init", "kind", "seed", "accuracy", "delta_dp", "delta_eo"]
AGGREGATE_COLUMNS = [
    "kind", "lambda_init", "n_seeds",
    "accuracy_mean", "accuracy_std", "delta_dp_mean", "delta_dp_std", "delta_eo_mean", "delta_eo_std",
]


def write_tradeoff(points: Sequence[TradeoffPoint], out_dir, stem: str) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pts_path = out_dir / f"{stem}_points.csv"
    with open(pts_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, POINT_COLUMNS)
        w.writeheader()
        for p in points:
            w.writerow({c: getattr(p, c) for c in POINT_COLUMNS})
    agg_path = out_dir / f"{stem}_aggregate.csv"
    with open(agg_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, AGGREGATE_COLUMNS)
        w.writeheader()
        w.writerows(aggregate(points))
    return pts_path, agg_path
