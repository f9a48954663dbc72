"""Penalised cross-entropy training with per-epoch dual ascent on the multiplier.

Each epoch takes momentum-SGD steps on ``CE + lam * penalty`` over shuffled
mini-batches with ``lam`` held fixed, then moves ``lam`` by ``beta`` times the
batch-averaged penalty.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import nn
from .data import Dataset
from .grad import cdc_grad, dcov_grad
from .metrics import FairnessReport, GroupedPredictions, fairness_report
from .stats import silverman_bandwidth

log = logging.getLogger(__name__)

PENALTY_KINDS = ("none", "dc", "cdc")


@dataclass(frozen=True)
class PenaltySpec:
    """``dc`` targets demographic parity, ``cdc`` equalized odds."""

    kind: str = "none"
    bandwidth: Union[str, float] = "silverman"

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"penalty kind must be one of {PENALTY_KINDS}, got {self.kind!r}")
        if self.bandwidth != "silverman":
            h = float(self.bandwidth)
            if not h > 0:
                raise ValueError(f"fixed bandwidth must be positive, got {h}")
            object.__setattr__(self, "bandwidth", h)

    def resolve_bandwidth(self, n: int, r: int) -> float:
        if self.bandwidth == "silverman":
            return silverman_bandwidth(n, r)
        return float(self.bandwidth)


@dataclass
class DualState:
    lam: float
    beta: float
    epoch_penalty_sum: float = 0.0
    batch_count: int = 0
    lam_max: Optional[float] = None

    def record(self, value: float) -> None:
        self.epoch_penalty_sum += value
        self.batch_count += 1


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 1024
    lr: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 10.0
    milestones: Tuple[int, ...] = (15, 30)
    lambda_init: float = 2.0
    beta: float = 0.5
    lambda_max: Optional[float] = None
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    hidden: Tuple[int, ...] = (128, 128, 128)
    seed: int = 0
    positive_class: int = 1

    def validate(self) -> List[str]:
        """Every problem with the configuration, empty when valid."""
        errors = []
        if not isinstance(self.epochs, int) or self.epochs < 0:
            errors.append(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            errors.append(f"batch_size must be an integer >= 2, got {self.batch_size!r}")
        if not self.lr > 0:
            errors.append(f"lr must be positive, got {self.lr!r}")
        if not 0 <= self.momentum < 1:
            errors.append(f"momentum must lie in [0, 1), got {self.momentum!r}")
        if not self.lr_decay > 0:
            errors.append(f"lr_decay must be positive, got {self.lr_decay!r}")
        if any(m < 0 for m in self.milestones):
            errors.append(f"milestones must be nonnegative, got {list(self.milestones)}")
        if not self.lambda_init >= 0:
            errors.append(f"lambda_init must be >= 0, got {self.lambda_init!r}")
        if not self.beta >= 0:
            errors.append(f"beta must be >= 0, got {self.beta!r}")
        if self.lambda_max is not None and self.lambda_max < self.lambda_init:
            errors.append("lambda_max must be >= lambda_init")
        if any(h < 1 for h in self.hidden):
            errors.append(f"hidden widths must be positive, got {list(self.hidden)}")
        return errors

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if epoch >= m)
        return self.lr / self.lr_decay**passed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        pen = d.pop("penalty", None)
        if isinstance(pen, str):
            pen = PenaltySpec(pen)
        elif isinstance(pen, dict):
            pen = PenaltySpec(**pen)
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        cfg = cls(**d)
        if pen is not None:
            cfg = replace(cfg, penalty=pen)
        return cfg


def penalty_value_and_grad(spec: PenaltySpec, probs, Z, labels=None) -> Tuple[float, np.ndarray]:
    """Penalty on the softmax outputs and its gradient w.r.t. them.

    ``Z`` is the one-hot sensitive attribute; for ``cdc`` the one-hot labels
    are the conditioning variable and Silverman's ``h`` uses ``r = C``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if spec.kind == "none":
        return 0.0, np.zeros_like(probs)
    if len(Z) != len(probs):
        raise ValueError(f"sensitive attribute has {len(Z)} rows, predictions have {len(probs)}")
    if spec.kind == "dc":
        res = dcov_grad(probs, Z)
        return res.value, res.grad
    if labels is None or len(labels) == 0:
        raise ValueError("cdc penalty requires labels as the conditioning variable")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    h = spec.resolve_bandwidth(len(probs), labels.shape[1])
    res = cdc_grad(probs, Z, labels, h)
    return res.value, res.grad


@dataclass
class EpochStats:
    train_loss: float
    penalty_mean: float
    penalties: List[float]
    lr: float


def train_epoch(model: nn.Mlp, data: Dataset, dual: DualState, config: TrainConfig, epoch: int):
    """One pass of momentum SGD over shuffled batches; ``dual.lam`` is held fixed."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(n)
    lr = config.lr_at(epoch)
    Zoh = data.group_onehot
    Yoh = data.label_onehot
    losses, penalties = [], []
    for start in range(0, n, config.batch_size):
        idx = order[start : start + config.batch_size]
        trace = nn.forward(model, data.X[idx])
        loss, g_logits = nn.softmax_cross_entropy(trace.probs, data.labels[idx])
        value = 0.0
        if config.penalty.kind != "none":
            if len(idx) >= 2:
                value, g_probs = penalty_value_and_grad(config.penalty, trace.probs, Zoh[idx], Yoh[idx])
                if dual.lam != 0.0:
                    g_logits = g_logits + dual.lam * nn.softmax_backward(trace.probs, g_probs)
            else:
                log.info("epoch %d: singleton batch contributes zero penalty", epoch)
        dual.record(value)
        penalties.append(value)
        losses.append(loss + dual.lam * value)
        nn.sgd_momentum_step(model, nn.backward(model, trace, g_logits), lr, config.momentum)
    return model, EpochStats(float(np.mean(losses)), dual.epoch_penalty_sum / dual.batch_count, penalties, lr)


def dual_update(dual: DualState) -> DualState:
    """``lam <- lam + beta * mean batch penalty``; accumulators reset."""
    if dual.batch_count < 1:
        raise ValueError("dual_update called before any batch was recorded")
    lam = dual.lam + dual.beta * dual.epoch_penalty_sum / dual.batch_count
    if dual.lam_max is not None:
        lam = min(lam, dual.lam_max)
    return DualState(lam, dual.beta, 0.0, 0, dual.lam_max)


def evaluate(model: nn.Mlp, split: Dataset, positive_class: int = 1) -> FairnessReport:
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    pred = nn.predict(model, split.X)
    g = GroupedPredictions(pred, split.labels, split.groups, split.n_groups)
    return fairness_report(g, positive_class, split.n_classes, paper_compat=split.n_classes == 2)


def _safe_report(model, split, positive_class):
    try:
        return evaluate(model, split, positive_class)
    except ValueError as exc:
        log.warning("validation metrics unavailable: %s", exc)
        return None


def fit(train: Dataset, config: TrainConfig, val: Optional[Dataset] = None):
    """Alternate epochs of primal SGD and one dual step; returns ``(model, history)``."""
    errors = config.validate()
    if errors:
        raise ValueError("invalid training config:\n  " + "\n  ".join(errors))
    sizes = [train.X.shape[1], *config.hidden, train.n_classes]
    model = nn.init_mlp(sizes, config.seed)
    dual = DualState(float(config.lambda_init), float(config.beta), lam_max=config.lambda_max)
    history = []
    for epoch in range(config.epochs):
        lam_used = dual.lam
        model, stats = train_epoch(model, train, dual, config, epoch)
        dual = dual_update(dual)
        rec = {
            "epoch": epoch,
            "train_loss": stats.train_loss,
            "penalty_mean": stats.penalty_mean,
            "lambda": lam_used,
            "lambda_next": dual.lam,
            "lr": stats.lr,
        }
        rep = _safe_report(model, val, config.positive_class) if val is not None and len(val) else None
        rec["val_accuracy"] = rep.accuracy if rep else math.nan
        rec["val_ddp"] = rep.delta_dp if rep else math.nan
        rec["val_deo"] = rep.delta_eo if rep else math.nan
        history.append(rec)
    return model, history


def history_lines(history: Sequence[dict]) -> str:
    """One JSON object per epoch, newline terminated; NaN becomes ``null``."""
    def clean(rec):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}

    return "".join(json.dumps(clean(rec), sort_keys=True) + "\n" for rec in history)
