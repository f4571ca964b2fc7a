"""Tabular data under a declared schema.

Categorical and ordinal features are stored as integer codes into their
vocabulary, continuous features as raw reals, all inside one float64 matrix.
Labels are binary with 1 marking the undesirable class (the factual class).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
ORDINAL = "ordinal"
CONTINUOUS = "continuous"
KINDS = (CATEGORICAL, ORDINAL, CONTINUOUS)


class DatasetError(ValueError):
    """Base class for data ingestion and validation failures."""


class SchemaError(DatasetError):
    pass


class UnknownColumnError(DatasetError):
    pass


class NonBinaryLabelError(DatasetError):
    pass


class UnparsableValueError(DatasetError):
    pass


class EmptyFileError(DatasetError):
    pass


class EmptySplitError(DatasetError):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    range_min: float | None = None
    range_max: float | None = None
    immutable: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.range_min is None or self.range_max is None:
                raise SchemaError(f"feature {self.name!r}: continuous feature needs a range")
            if not self.range_max > self.range_min:
                raise SchemaError(
                    f"feature {self.name!r}: range_max must exceed range_min "
                    f"(got [{self.range_min}, {self.range_max}])"
                )
        else:
            if len(set(self.categories)) < 2:
                raise SchemaError(f"feature {self.name!r}: needs at least 2 distinct categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r}: duplicate categories")

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    @property
    def range(self) -> float:
        """Width of the value range; only defined for continuous features."""
        if not self.is_continuous:
            raise SchemaError(f"feature {self.name!r} is {self.kind}, it has no numeric range")
        return self.range_max - self.range_min

    def encode(self, value):
        if self.is_continuous:
            return float(value)
        try:
            return float(self.categories.index(value))
        except ValueError:
            raise DatasetError(f"feature {self.name!r}: unknown category {value!r}") from None

    def decode(self, value):
        if self.is_continuous:
            return float(value)
        return self.categories[int(value)]

    def to_dict(self) -> dict:
        d = {"name": self.name, "role": "feature", "kind": self.kind}
        if self.is_continuous:
            d["range"] = [self.range_min, self.range_max]
        else:
            d["categories"] = list(self.categories)
        d["immutable"] = self.immutable
        return d


@dataclass(frozen=True)
class Dataset:
    """Immutable encoded table. ``rows`` is (n, F) float64, ``labels`` is (n,) int."""

    schema: tuple[FeatureSchema, ...]
    rows: np.ndarray
    labels: np.ndarray
    label_name: str = "label"
    n_rejected: int = field(default=0, compare=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64, copy=True).reshape(-1, len(self.schema))
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if len(rows) != len(labels):
            raise DatasetError(f"{len(rows)} rows but {len(labels)} labels")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise NonBinaryLabelError("labels must be 0 or 1")
        for j, feat in enumerate(self.schema):
            col = rows[:, j]
            if feat.is_continuous:
                if col.size and (col.min() < feat.range_min or col.max() > feat.range_max):
                    raise DatasetError(f"feature {feat.name!r}: values outside recorded range")
            elif col.size:
                ok = (col == np.floor(col)) & (col >= 0) & (col < len(feat.categories))
                if not ok.all():
                    raise DatasetError(f"feature {feat.name!r}: code outside vocabulary")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.array([f.is_continuous for f in self.schema], dtype=bool)

    @property
    def immutable_mask(self) -> np.ndarray:
        return np.array([f.immutable for f in self.schema], dtype=bool)

    def feature_index(self, name: str) -> int:
        for j, f in enumerate(self.schema):
            if f.name == name:
                return j
        raise UnknownColumnError(f"unknown feature {name!r}")

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, self.rows[idx], self.labels[idx], self.label_name)

    def encode_row(self, values: Sequence) -> np.ndarray:
        return np.array([f.encode(v) for f, v in zip(self.schema, values)], dtype=np.float64)

    def decode_row(self, row) -> list:
        return [f.decode(v) for f, v in zip(self.schema, row)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([f.to_dict() for f in self.schema], sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.rows).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()[:16]


def ranges(schema: Sequence[FeatureSchema]) -> np.ndarray:
    """Per-feature range width, NaN for non-continuous features."""
    return np.array([f.range if f.is_continuous else np.nan for f in schema], dtype=np.float64)


# -- CSV ingestion -----------------------------------------------------------


def load_schema(path) -> tuple[list[dict], str]:
    """Read a schema document and return (feature column specs, label column name)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    columns = doc["columns"] if isinstance(doc, dict) else doc
    features, label = [], None
    for col in columns:
        role = col.get("role", "feature")
        if role == "label":
            if label is not None:
                raise SchemaError(f"second label column {col['name']!r}")
            label = col["name"]
        elif role == "feature":
            if col.get("kind") not in KINDS:
                raise SchemaError(f"column {col.get('name')!r}: kind must be one of {KINDS}")
            features.append(col)
        else:
            raise SchemaError(f"column {col.get('name')!r}: unknown role {role!r}")
    if label is None:
        raise SchemaError("schema declares no label column")
    return features, label


def load_csv(path, schema_path) -> Dataset:
    """Load and encode a CSV file under the schema file at ``schema_path``.

    Category vocabularies come from the schema when declared, otherwise from
    first appearance in the file. Declared continuous ranges are widened to
    cover the observed data. Rows with empty cells are dropped and counted.
    """
    feature_specs, label_name = load_schema(schema_path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFileError(f"{path}: empty file")
        records = list(reader)

    header = [h.strip() for h in header]
    declared = [c["name"] for c in feature_specs] + [label_name]
    for name in header:
        if name not in declared:
            raise UnknownColumnError(f"unknown column {name!r} (not declared in schema)")
    for name in declared:
        if name not in header:
            raise UnknownColumnError(f"column {name!r} declared in schema but missing from CSV")
    pos = {name: i for i, name in enumerate(header)}

    kept, n_rejected = [], 0
    for lineno, rec in enumerate(records, start=2):
        if not rec:
            continue
        if len(rec) != len(header) or any(rec[pos[n]].strip() == "" for n in declared):
            n_rejected += 1
            continue
        kept.append((lineno, rec))
    if n_rejected:
        logger.warning("%s: rejected %d row(s) with missing cells", path, n_rejected)
    if not kept:
        raise EmptyFileError(f"{path}: no data rows")

    labels = []
    for lineno, rec in kept:
        text = rec[pos[label_name]].strip()
        if text not in ("0", "1"):
            raise NonBinaryLabelError(f"non-binary label at row {lineno}: {text!r}")
        labels.append(int(text))

    schema, columns = [], []
    for spec in feature_specs:
        name, kind = spec["name"], spec["kind"]
        raw = [rec[pos[name]].strip() for _, rec in kept]
        if kind == CONTINUOUS:
            values = []
            for (lineno, _), text in zip(kept, raw):
                try:
                    v = float(text)
                except ValueError:
                    raise UnparsableValueError(
                        f"unparsable continuous value {text!r} in column {name!r} at row {lineno}"
                    ) from None
                if not math.isfinite(v):
                    raise UnparsableValueError(
                        f"non-finite value {text!r} in column {name!r} at row {lineno}"
                    )
                values.append(v)
            lo, hi = min(values), max(values)
            if "range" in spec:
                lo = min(lo, float(spec["range"][0]))
                hi = max(hi, float(spec["range"][1]))
            feat = FeatureSchema(name, kind, range_min=lo, range_max=hi,
                                 immutable=bool(spec.get("immutable", False)))
            columns.append(values)
        else:
            if "categories" in spec:
                cats = tuple(str(c) for c in spec["categories"])
                for (lineno, _), text in zip(kept, raw):
                    if text not in cats:
                        raise DatasetError(
                            f"unknown category {text!r} in column {name!r} at row {lineno}"
                        )
            else:
                cats = tuple(dict.fromkeys(raw))
            feat = FeatureSchema(name, kind, categories=cats,
                                 immutable=bool(spec.get("immutable", False)))
            index = {c: i for i, c in enumerate(cats)}
            columns.append([index[t] for t in raw])
        schema.append(feat)

    rows = np.array(columns, dtype=np.float64).T.reshape(len(kept), len(schema))
    return Dataset(tuple(schema), rows, np.array(labels), label_name, n_rejected=n_rejected)


def write_csv(ds: Dataset, path, schema_path=None) -> None:
    """Write a dataset back out as decoded CSV (and optionally its schema file)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.feature_names + [ds.label_name])
        for row, label in zip(ds.rows, ds.labels):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in ds.decode_row(row)]
                            + [int(label)])
    if schema_path is not None:
        doc = {"columns": [f.to_dict() for f in ds.schema]
               + [{"name": ds.label_name, "role": "label"}]}
        Path(schema_path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds)
    if n == 0:
        raise EmptySplitError("cannot split an empty dataset")
    n_train = int(math.floor(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise EmptySplitError(f"empty split: n={n}, train_fraction={train_fraction}")
    order = np.random.default_rng(seed).permutation(n)
    return ds.take(order[:n_train]), ds.take(order[n_train:])


def kfold_indices(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    """Unstratified shuffled folds."""
    if not 2 <= n_folds <= n:
        raise DatasetError(f"n_folds must lie in [2, {n}], got {n_folds}")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(order, n_folds)]


# -- synthetic fixtures ------------------------------------------------------


@dataclass(frozen=True)
class FixtureFeature:
    name: str
    kind: str = CONTINUOUS
    n_categories: int = 2
    categories: tuple[str, ...] = ()
    range: tuple[float, float] = (0.0, 1.0)
    immutable: bool = False

    def to_schema(self) -> FeatureSchema:
        if self.kind == CONTINUOUS:
            return FeatureSchema(self.name, CONTINUOUS, range_min=self.range[0],
                                 range_max=self.range[1], immutable=self.immutable)
        cats = self.categories or tuple(f"{self.name}_{i}" for i in range(self.n_categories))
        return FeatureSchema(self.name, self.kind, categories=tuple(cats), immutable=self.immutable)


@dataclass(frozen=True)
class Condition:
    """One planted-rule condition: ``feature`` in ``categories``, or low < value <= high."""

    feature: str
    categories: tuple[str, ...] = ()
    low: float = -math.inf
    high: float = math.inf


@dataclass(frozen=True)
class FixtureSpec:
    """Generator parameters. label = 1 iff at least ``min_satisfied`` conditions hold
    (all of them when ``min_satisfied`` is None), then flipped with ``label_noise``."""

    features: tuple[FixtureFeature, ...]
    rule: tuple[Condition, ...]
    n_rows: int = 200
    min_satisfied: int | None = None
    label_noise: float = 0.0


def synthesize_fixture(spec: FixtureSpec, seed: int) -> Dataset:
    schema = tuple(f.to_schema() for f in spec.features)
    names = [f.name for f in schema]
    for cond in spec.rule:
        if cond.feature not in names:
            raise SchemaError(f"planted rule references undeclared feature {cond.feature!r}")
    if not spec.rule:
        raise SchemaError("planted rule has no conditions")
    need = len(spec.rule) if spec.min_satisfied is None else spec.min_satisfied
    if not 1 <= need <= len(spec.rule):
        raise SchemaError(f"min_satisfied must lie in [1, {len(spec.rule)}]")

    rng = np.random.default_rng(seed)
    cols = []
    for feat in schema:
        if feat.is_continuous:
            cols.append(rng.uniform(feat.range_min, feat.range_max, spec.n_rows))
        else:
            cols.append(rng.integers(0, len(feat.categories), spec.n_rows).astype(np.float64))
    rows = np.column_stack(cols) if cols else np.zeros((spec.n_rows, 0))

    hits = np.zeros(spec.n_rows, dtype=np.int64)
    for cond in spec.rule:
        j = names.index(cond.feature)
        feat = schema[j]
        if feat.is_continuous:
            hits += (rows[:, j] > cond.low) & (rows[:, j] <= cond.high)
        else:
            for c in cond.categories:
                if c not in feat.categories:
                    raise SchemaError(f"planted rule: {c!r} is not a category of {feat.name!r}")
            codes = [feat.categories.index(c) for c in cond.categories]
            hits += np.isin(rows[:, j], codes)
    labels = (hits >= need).astype(np.int64)
    if spec.label_noise > 0:
        flip = rng.random(spec.n_rows) < spec.label_noise
        labels = np.where(flip, 1 - labels, labels)

    # keep continuous ranges tight to the data actually drawn
    tight = []
    for j, feat in enumerate(schema):
        if feat.is_continuous and spec.n_rows:
            lo = min(feat.range_min, float(rows[:, j].min()))
            hi = max(feat.range_max, float(rows[:, j].max()))
            feat = FeatureSchema(feat.name, feat.kind, range_min=lo, range_max=hi,
                                 immutable=feat.immutable)
        tight.append(feat)
    return Dataset(tuple(tight), rows, labels)


def planted_spec(n_rows: int = 200, n_inert: int = 1, immutable_categorical: bool = True) -> FixtureSpec:
    """Continuous x0 decides the label (x0 > 0.5); the other features are inert."""
    feats = [FixtureFeature("x0")]
    feats += [FixtureFeature(f"x{i + 1}") for i in range(n_inert)]
    if immutable_categorical:
        feats.append(FixtureFeature("group", kind=CATEGORICAL, n_categories=3, immutable=True))
    return FixtureSpec(tuple(feats), (Condition("x0", low=0.5),), n_rows=n_rows)


ACCIDENT_FEATURES = (
    FixtureFeature("Age_band_of_driver", ORDINAL, 5, immutable=True),
    FixtureFeature("Sex_of_driver", CATEGORICAL, 3, immutable=True),
    FixtureFeature("Driving_experience", ORDINAL, categories=(
        "No Licence", "Below 1yr", "1-2yr", "2-5yr", "5-10yr", "Above 10yr", "Unknown")),
    FixtureFeature("Types_of_Junction", CATEGORICAL, 8),
    FixtureFeature("Road_surface_type", CATEGORICAL, 6),
    FixtureFeature("Light_conditions", CATEGORICAL, 4),
    FixtureFeature("Weather_conditions", CATEGORICAL, 9),
    FixtureFeature("Type_of_collision", CATEGORICAL, 10),
    FixtureFeature("Vehicle_movement", CATEGORICAL, 13),
    FixtureFeature("Pedestrian_movement", CATEGORICAL, 9),
    FixtureFeature("Cause_of_accident", CATEGORICAL, 20),
)


def accident_spec(n_rows: int = 2000, label_noise: float = 0.0) -> FixtureSpec:
    """Eleven categorical features with the category counts of the road-accident task.

    Values are synthetic; severity (label 1) is planted on experience, collision
    type and cause of accident, any two of which suffice.
    """
    rule = (
        Condition("Driving_experience", categories=("5-10yr", "Above 10yr", "Unknown")),
        Condition("Type_of_collision", categories=tuple(f"Type_of_collision_{i}" for i in range(4))),
        Condition("Cause_of_accident", categories=tuple(f"Cause_of_accident_{i}" for i in range(8))),
    )
    return FixtureSpec(ACCIDENT_FEATURES, rule, n_rows=n_rows, min_satisfied=2,
                       label_noise=label_noise)
