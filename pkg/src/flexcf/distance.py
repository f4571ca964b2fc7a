"""Hamming and mixed (Gower-style, unweighted) distances between encoded instances."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dataset import FeatureSchema, SchemaError


def _check(x, y, schema=None):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise SchemaError(f"schema mismatch: {x.shape[-1]} vs {y.shape[-1]} features")
    if schema is not None and len(schema) != x.shape[-1]:
        raise SchemaError(f"schema mismatch: {len(schema)} schema features, {x.shape[-1]} values")
    return x, y


def hamming(x, y) -> int:
    """Number of features whose values differ exactly."""
    x, y = _check(x, y)
    return int(np.count_nonzero(x != y))


def _per_feature_weights(schema: Sequence[FeatureSchema]):
    cont = np.array([f.is_continuous for f in schema], dtype=bool)
    width = np.ones(len(schema))
    for j, f in enumerate(schema):
        if f.is_continuous:
            if not f.range > 0:
                raise SchemaError(f"feature {f.name!r}: zero range")
            width[j] = f.range
    return cont, width


def feature_distances(x, rows, schema: Sequence[FeatureSchema]) -> np.ndarray:
    """Per-feature distance terms between ``x`` and each row: 0/1 for categorical
    and ordinal features, |delta| / range for continuous ones. Shape (n, F)."""
    x, rows = _check(x, rows, schema)
    cont, width = _per_feature_weights(schema)
    rows2 = np.atleast_2d(rows)
    diff = np.abs(rows2 - x)
    out = np.where(cont, diff / width, (diff != 0).astype(np.float64))
    return out


def mixed_distance(x, y, schema: Sequence[FeatureSchema]) -> float:
    return float(feature_distances(x, y, schema).sum())


def mixed_distances(x, rows, schema: Sequence[FeatureSchema]) -> np.ndarray:
    return feature_distances(x, rows, schema).sum(axis=1)


def hamming_distances(x, rows) -> np.ndarray:
    x, rows = _check(x, rows)
    return np.count_nonzero(np.atleast_2d(rows) != x, axis=1)
