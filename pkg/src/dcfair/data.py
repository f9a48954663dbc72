"""Tabular ingestion, preprocessing, seeded splits and a synthetic biased generator.

Schema files are JSON objects with the keys::

    {
      "features": [{"name": "age", "type": "numeric"},
                   {"name": "workclass", "type": "categorical"}],
      "label": "income",
      "sensitive": ["sex"],
      "positive_class": ">50K",
      "missing_policy": "drop",          # or "impute"
      "missing_values": ["", "?", "NA"]  # optional
    }

A bare string in ``features`` means a numeric column.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_MISSING = ("", "?", "NA", "N/A", "nan", "NaN", "null")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = "numeric"  # numeric | categorical


@dataclass(frozen=True)
class DatasetSchema:
    features: Tuple[FeatureSpec, ...]
    label: str
    sensitive: Tuple[str, ...]
    positive_class: Optional[str] = None
    missing_policy: str = "drop"
    missing_values: Tuple[str, ...] = DEFAULT_MISSING

    def __post_init__(self):
        if self.missing_policy not in ("drop", "impute"):
            raise ValueError(f"missing_policy must be 'drop' or 'impute', got {self.missing_policy!r}")
        for f in self.features:
            if f.kind not in ("numeric", "categorical"):
                raise ValueError(f"feature {f.name!r} has unknown type {f.kind!r}")
        names = [f.name for f in self.features]
        overlap = set(names) & ({self.label} | set(self.sensitive))
        if overlap:
            raise ValueError(f"label/sensitive columns also listed as features: {sorted(overlap)}")
        if not self.sensitive:
            raise ValueError("schema needs at least one sensitive column")

    @property
    def columns(self) -> List[str]:
        return [f.name for f in self.features] + [self.label] + list(self.sensitive)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        unknown = set(d) - {"features", "label", "sensitive", "positive_class", "missing_policy", "missing_values"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        feats = []
        for f in d.get("features", []):
            if isinstance(f, str):
                feats.append(FeatureSpec(f))
            else:
                feats.append(FeatureSpec(f["name"], f.get("type", "numeric")))
        sens = d["sensitive"]
        if isinstance(sens, str):
            sens = [sens]
        pos = d.get("positive_class")
        return cls(
            features=tuple(feats),
            label=d["label"],
            sensitive=tuple(sens),
            positive_class=None if pos is None else str(pos),
            missing_policy=d.get("missing_policy", "drop"),
            missing_values=tuple(d.get("missing_values", DEFAULT_MISSING)),
        )

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "features": [{"name": f.name, "type": f.kind} for f in self.features],
            "label": self.label,
            "sensitive": list(self.sensitive),
            "positive_class": self.positive_class,
            "missing_policy": self.missing_policy,
            "missing_values": list(self.missing_values),
        }


@dataclass
class RawTable:
    """Typed columns: float arrays for numeric columns, ``str`` arrays otherwise."""

    columns: Dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def take(self, idx) -> "RawTable":
        return RawTable({k: v[idx] for k, v in self.columns.items()})


def load_csv(path, schema: DatasetSchema) -> RawTable:
    path = Path(path)
    numeric = {f.name for f in schema.features if f.kind == "numeric"}
    missing = set(schema.missing_values)
    wanted = schema.columns
    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        absent = [c for c in wanted if c not in header]
        if absent:
            raise ValueError(f"{path}: unknown column(s) {absent}; header has {header}")
        pos = {c: header.index(c) for c in wanted}
        cols: Dict[str, list] = {c: [] for c in wanted}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            for c in wanted:
                cell = row[pos[c]].strip()
                if cell in missing:
                    cols[c].append(None)
                elif c in numeric:
                    try:
                        cols[c].append(float(cell))
                    except ValueError:
                        raise ValueError(
                            f"{path}: row {lineno}, column {c!r}: cannot parse {cell!r} as a number"
                        ) from None
                else:
                    cols[c].append(cell)
    if not cols[wanted[0]]:
        raise ValueError(f"{path}: no data rows")
    return _apply_missing_policy(cols, schema)


def _apply_missing_policy(cols: Dict[str, list], schema: DatasetSchema) -> RawTable:
    n = len(next(iter(cols.values())))
    numeric = {f.name for f in schema.features if f.kind == "numeric"}
    targets = {schema.label, *schema.sensitive}
    keep = np.ones(n, dtype=bool)
    for c, values in cols.items():
        miss = np.array([v is None for v in values])
        if schema.missing_policy == "drop" or c in targets:
            keep &= ~miss
    if not keep.any():
        raise ValueError("no rows left after applying the missing-value policy")
    if (~keep).any():
        log.info("dropped %d row(s) with missing values", int((~keep).sum()))
    out = {}
    for c, values in cols.items():
        kept = [v for v, k in zip(values, keep) if k]
        if c in numeric:
            arr = np.array([np.nan if v is None else v for v in kept], dtype=np.float64)
            if np.isnan(arr).any():
                arr[np.isnan(arr)] = np.nanmean(arr) if (~np.isnan(arr)).any() else 0.0
        else:
            present = [v for v in kept if v is not None]
            if len(present) < len(kept):
                fill = _first_appearance_mode(present) if present else "missing"
                kept = [fill if v is None else v for v in kept]
            arr = np.array(kept, dtype=str)
        out[c] = arr
    return RawTable(out)


def _first_appearance_mode(values: Sequence[str]) -> str:
    counts: Dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return max(counts, key=counts.get)  # ties resolve to first appearance


def categories_in_order(values) -> List[str]:
    return list(dict.fromkeys(values.tolist()))


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    valid = indices >= 0
    out[np.flatnonzero(valid), indices[valid]] = 1.0
    return out


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    n_classes: int
    n_groups: int
    feature_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.X.shape[0]
        if not (len(self.labels) == len(self.groups) == n):
            raise ValueError("X, labels and groups must have the same length")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def group_onehot(self) -> np.ndarray:
        return one_hot(self.groups, self.n_groups)

    @property
    def label_onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.n_classes)

    def take(self, idx) -> "Dataset":
        return Dataset(
            self.X[idx], self.labels[idx], self.groups[idx], self.n_classes, self.n_groups, self.feature_names
        )


@dataclass
class PreprocessStats:
    """Everything fitted on the training rows and reused on other splits."""

    means: Dict[str, float]
    scales: Dict[str, float]
    categories: Dict[str, List[str]]
    label_classes: List[str]
    group_values: List[str]
    unseen: Dict[str, int] = field(default_factory=dict)


def _group_keys(raw: RawTable, schema: DatasetSchema) -> np.ndarray:
    parts = [raw.columns[c] for c in schema.sensitive]
    if len(parts) == 1:
        return parts[0]
    return np.array(["|".join(t) for t in zip(*parts)], dtype=str)


def _label_classes(raw: RawTable, schema: DatasetSchema) -> List[str]:
    values = raw.columns[schema.label]
    if schema.positive_class is not None:
        return ["__other__", schema.positive_class]
    return categories_in_order(values)


def fit_preprocess(train: RawTable, schema: DatasetSchema, full: Optional[RawTable] = None) -> PreprocessStats:
    """Fit standardisation and vocabularies on ``train``.

    Label and group vocabularies come from ``full`` when given, so rare
    classes in a small training split still receive an index.
    """
    ref = full if full is not None else train
    means, scales, cats = {}, {}, {}
    for f in schema.features:
        col = train.columns[f.name]
        if f.kind == "numeric":
            mu = float(col.mean())
            sd = float(col.std())
            means[f.name] = mu
            scales[f.name] = sd if sd > 0 else 1.0
        else:
            cats[f.name] = categories_in_order(col)
    return PreprocessStats(
        means, scales, cats, _label_classes(ref, schema), categories_in_order(_group_keys(ref, schema))
    )


def preprocess(raw: RawTable, schema: DatasetSchema, stats: Optional[PreprocessStats] = None):
    """Encode ``raw`` into a :class:`Dataset`; fits ``stats`` on ``raw`` if absent."""
    if stats is None:
        stats = fit_preprocess(raw, schema)
    blocks, names = [], []
    for f in schema.features:
        col = raw.columns[f.name]
        if f.kind == "numeric":
            blocks.append(((col - stats.means[f.name]) / stats.scales[f.name])[:, None])
            names.append(f.name)
        else:
            vocab = stats.categories[f.name]
            lookup = {v: i for i, v in enumerate(vocab)}
            idx = np.array([lookup.get(v, -1) for v in col.tolist()], dtype=np.int64)
            n_unseen = int((idx < 0).sum())
            if n_unseen:
                stats.unseen[f.name] = stats.unseen.get(f.name, 0) + n_unseen
                log.warning("%d unseen categor(ies) in column %r mapped to zeros", n_unseen, f.name)
            blocks.append(one_hot(idx, len(vocab)))
            names.extend(f"{f.name}={v}" for v in vocab)
    n = len(raw)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))

    label_col = raw.columns[schema.label]
    if schema.positive_class is not None:
        labels = (label_col == schema.positive_class).astype(np.int64)
    else:
        lookup = {v: i for i, v in enumerate(stats.label_classes)}
        unknown = sorted(set(label_col.tolist()) - set(lookup))
        if unknown:
            raise ValueError(f"label value(s) {unknown} not seen when fitting")
        labels = np.array([lookup[v] for v in label_col.tolist()], dtype=np.int64)
    gkeys = _group_keys(raw, schema)
    glookup = {v: i for i, v in enumerate(stats.group_values)}
    unknown = sorted(set(gkeys.tolist()) - set(glookup))
    if unknown:
        raise ValueError(f"sensitive value(s) {unknown} not seen when fitting")
    groups = np.array([glookup[v] for v in gkeys.tolist()], dtype=np.int64)
    ds = Dataset(X, labels, groups, len(stats.label_classes), len(stats.group_values), names)
    return ds, stats


def split_indices(n: int, fractions=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded shuffle followed by contiguous slicing."""
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split(dataset, fractions=(0.70, 0.15, 0.15), seed: int = 0):
    idx = split_indices(len(dataset), fractions, seed)
    return tuple(dataset.take(i) for i in idx)


def prepare(raw: RawTable, schema: DatasetSchema, seed: int = 0, fractions=(0.70, 0.15, 0.15)):
    """Split ``raw`` then preprocess every part with training-split statistics."""
    tr, va, te = split_indices(len(raw), fractions, seed)
    stats = fit_preprocess(raw.take(tr), schema, full=raw)
    parts = tuple(preprocess(raw.take(i), schema, stats)[0] for i in (tr, va, te))
    return parts, stats


def synth_biased(n: int, bias: float, class_balance: float = 0.5, seed: int = 0) -> Dataset:
    """Binary task whose label leans on the group, which leaks through proxies.

    Two informative features carry the label signal that is shared by both
    groups. The label also gets a group-dependent shift scaled by ``bias``,
    and a block of proxy features is correlated with the group at strength
    ``bias``, so an unconstrained classifier can recover (and reproduce) the
    group disparity. The group itself is not a feature.
    """
    if n < 100:
        raise ValueError(f"synth_biased needs n >= 100, got {n}")
    if not 0.0 <= bias <= 1.0:
        raise ValueError(f"bias must lie in [0, 1], got {bias}")
    if not 0.0 < class_balance < 1.0:
        raise ValueError(f"class_balance must lie in (0, 1), got {class_balance}")
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 2, size=n)
    sign = 2.0 * groups - 1.0
    informative = rng.normal(size=(n, 2))
    signal = informative @ np.array([1.0, 0.5]) + rng.normal(size=n)
    offset = np.quantile(signal, 1.0 - class_balance)
    score = signal - offset + 0.8 * bias * sign
    labels = (score > 0).astype(np.int64)
    proxies = bias * sign[:, None] + np.sqrt(1.0 - bias**2) * rng.normal(size=(n, 3))
    noise = rng.normal(size=(n, 2))
    X = np.hstack([informative, proxies, noise])
    names = ["inf0", "inf1", "proxy0", "proxy1", "proxy2", "noise0", "noise1"]
    return Dataset(X, labels, groups.astype(np.int64), 2, 2, names)


def file_digest(path, schema: DatasetSchema) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(schema.to_dict(), sort_keys=True).encode())
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_cached(path, schema: DatasetSchema, cache_dir=None) -> RawTable:
    """:func:`load_csv` with an ``.npz`` cache keyed by schema and file hash."""
    if cache_dir is None:
        return load_csv(path, schema)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    target = cache_dir / f"{file_digest(path, schema)}.npz"
    if target.exists():
        with np.load(target, allow_pickle=False) as data:
            return RawTable({c: data[c] for c in schema.columns})
    raw = load_csv(path, schema)
    with open(target, "wb") as fh:
        np.savez(fh, **raw.columns)
    return raw
