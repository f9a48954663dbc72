"""Accuracy, demographic-parity gap and equalized-odds gap over S groups."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, Optional

import numpy as np


@dataclass(frozen=True)
class GroupedPredictions:
    predicted: np.ndarray
    true: np.ndarray
    group: np.ndarray
    n_groups: Optional[int] = None

    def __post_init__(self):
        for name in ("predicted", "true", "group"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())
        if not (len(self.predicted) == len(self.true) == len(self.group)):
            raise ValueError(
                f"length mismatch: predicted={len(self.predicted)}, "
                f"true={len(self.true)}, group={len(self.group)}"
            )
        if len(self.group) and self.group.min() < 0:
            raise ValueError("group indices must be nonnegative")
        if self.n_groups is None:
            object.__setattr__(self, "n_groups", int(self.group.max()) + 1 if len(self.group) else 0)
        elif len(self.group) and self.group.max() >= self.n_groups:
            raise ValueError(f"group index {self.group.max()} outside [0, {self.n_groups})")

    def _members(self, g: int) -> np.ndarray:
        mask = self.group == g
        if not mask.any():
            raise ValueError(f"group {g} has no samples")
        return mask


def accuracy(g: GroupedPredictions) -> float:
    if len(g.true) == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean(g.predicted == g.true))


def group_positive_rates(g: GroupedPredictions, positive_class: int = 1) -> np.ndarray:
    return np.array(
        [np.mean(g.predicted[g._members(s)] == positive_class) for s in range(g.n_groups)]
    )


def group_class_recalls(g: GroupedPredictions, classes) -> np.ndarray:
    """``rates[s, j] = P(pred = classes[j] | group = s, true = classes[j])``."""
    rates = np.empty((g.n_groups, len(classes)))
    for s in range(g.n_groups):
        members = g._members(s)
        for j, y in enumerate(classes):
            stratum = members & (g.true == y)
            if not stratum.any():
                raise ValueError(f"no samples with group {s} and label {y}")
            rates[s, j] = np.mean(g.predicted[stratum] == y)
    return rates


def _mean_pairwise_gap(rates: np.ndarray) -> float:
    # rates: (S, ...) ; averaged over the C(S, 2) group pairs and trailing axes
    pairs = list(combinations(range(rates.shape[0]), 2))
    if not pairs:
        raise ValueError("at least two groups are needed for a fairness gap")
    gaps = [np.abs(rates[i] - rates[j]) for i, j in pairs]
    return float(np.mean(gaps))


def delta_dp(g: GroupedPredictions, positive_class: int = 1) -> float:
    """Mean absolute pairwise gap in positive-prediction rate."""
    return _mean_pairwise_gap(group_positive_rates(g, positive_class))


def delta_eo(g: GroupedPredictions, n_classes: int = 2, paper_compat: bool = True) -> float:
    """Mean absolute pairwise gap in per-class recall, averaged over classes.

    ``paper_compat`` keeps the binary definition over labels {0, 1}; switching
    it off allows ``n_classes > 2`` with prefactor ``1 / (C * C(S, 2))``.
    """
    if paper_compat and n_classes != 2:
        raise ValueError("paper-compatible delta_eo is defined for binary labels only")
    return _mean_pairwise_gap(group_class_recalls(g, list(range(n_classes))))


@dataclass
class FairnessReport:
    accuracy: float
    delta_dp: float
    delta_eo: float
    per_group_rates: Dict[str, float] = field(default_factory=dict)
    per_group_label_rates: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def fairness_report(
    g: GroupedPredictions, positive_class: int = 1, n_classes: int = 2, paper_compat: bool = True
) -> FairnessReport:
    pos = group_positive_rates(g, positive_class)
    rec = group_class_recalls(g, list(range(n_classes)))
    return FairnessReport(
        accuracy=accuracy(g),
        delta_dp=_mean_pairwise_gap(pos),
        delta_eo=delta_eo(g, n_classes, paper_compat),
        per_group_rates={str(s): float(r) for s, r in enumerate(pos)},
        per_group_label_rates={
            str(s): {str(y): float(rec[s, y]) for y in range(n_classes)} for s in range(g.n_groups)
        },
    )
