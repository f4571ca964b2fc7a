"""Regions of similar factuals and regional-versus-global diagnostics."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dataset import Dataset, DatasetError, SchemaError
from .distance import hamming, hamming_distances, mixed_distance, mixed_distances  # noqa: F401
from .flex import FlexResult

logger = logging.getLogger(__name__)

HAMMING = "hamming"
MIXED = "mixed"


class RegionError(ValueError):
    pass


# -- row filters -------------------------------------------------------------


@dataclass(frozen=True)
class Clause:
    feature: str
    op: str  # "=", "in", "between"
    values: tuple

    def describe(self) -> str:
        if self.op == "=":
            return f"{self.feature}={self.values[0]}"
        if self.op == "in":
            return f"{self.feature} in {{{','.join(map(str, self.values))}}}"
        return f"{self.feature} between {self.values[0]},{self.values[1]}"


_IN = re.compile(r"^\s*(.+?)\s+in\s+\{(.*)\}\s*$")
_BETWEEN = re.compile(r"^\s*(.+?)\s+between\s+([^,]+),(.+)$")


def parse_clause(text: str) -> Clause:
    """Parse ``feature=value``, ``feature in {a,b}`` or ``feature between lo,hi``."""
    m = _IN.match(text)
    if m:
        vals = tuple(v.strip() for v in m.group(2).split(",") if v.strip())
        if not vals:
            raise RegionError(f"empty set in filter {text!r}")
        return Clause(m.group(1).strip(), "in", vals)
    m = _BETWEEN.match(text)
    if m:
        try:
            lo, hi = float(m.group(2)), float(m.group(3))
        except ValueError:
            raise RegionError(f"bad bounds in filter {text!r}") from None
        return Clause(m.group(1).strip(), "between", (lo, hi))
    if "=" in text:
        name, _, value = text.partition("=")
        return Clause(name.strip(), "=", (value.strip(),))
    raise RegionError(f"cannot parse filter clause {text!r}")


@dataclass(frozen=True)
class RowFilter:
    """Conjunction of clauses."""

    clauses: tuple[Clause, ...] = ()

    @classmethod
    def parse(cls, texts) -> "RowFilter":
        if isinstance(texts, str):
            texts = [t for t in texts.split(";") if t.strip()]
        return cls(tuple(parse_clause(t) for t in texts))

    def describe(self) -> str:
        return " AND ".join(c.describe() for c in self.clauses)

    def mask(self, ds: Dataset) -> np.ndarray:
        keep = np.ones(len(ds), dtype=bool)
        for c in self.clauses:
            try:
                j = ds.feature_index(c.feature)
            except DatasetError:
                raise RegionError(f"filter references unknown feature {c.feature!r}") from None
            feat, col = ds.schema[j], ds.rows[:, j]
            if c.op == "between":
                keep &= (col >= c.values[0]) & (col <= c.values[1])
                continue
            if feat.is_continuous:
                try:
                    vals = [float(v) for v in c.values]
                except ValueError:
                    raise RegionError(f"non-numeric value for continuous {c.feature!r}") from None
            else:
                unknown = [v for v in c.values if v not in feat.categories]
                if unknown:
                    raise RegionError(f"{c.feature!r} has no categories {unknown}")
                vals = [feat.categories.index(v) for v in c.values]
            keep &= np.isin(col, vals)
        return keep


# -- regions -----------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    query_index: int
    member_indices: tuple[int, ...]
    selection_filter: str | None
    distance_used: str

    def to_dict(self):
        return {"query_index": self.query_index, "members": list(self.member_indices),
                "filter": self.selection_filter, "distance": self.distance_used}


def build_region(ds: Dataset, model, row_filter: RowFilter | None = None, n_members: int = 5,
                 seed: int = 0, distance: str | None = None) -> Region:
    """A random eligible query plus its nearest eligible neighbours.

    Eligible rows are predicted undesirable and satisfy the filter. Distance is
    Hamming on all-categorical schemas and mixed otherwise unless ``distance``
    forces one; ties go to the lower row index. The query is listed first.
    """
    if n_members < 1:
        raise RegionError("n_members must be at least 1")
    if distance is None:
        distance = MIXED if ds.continuous_mask.any() else HAMMING
    if distance not in (HAMMING, MIXED):
        raise RegionError(f"unknown distance {distance!r}")
    eligible = model.predict_batch(ds.rows) == 1
    if row_filter is not None:
        eligible &= row_filter.mask(ds)
    idx = np.nonzero(eligible)[0]
    if idx.size < n_members:
        raise RegionError(
            f"insufficient eligible instances: {idx.size} match, {n_members} required")
    query = int(np.random.default_rng(seed).choice(idx))
    others = idx[idx != query]
    if distance == HAMMING:
        d = hamming_distances(ds.rows[query], ds.rows[others]).astype(np.float64)
    else:
        d = mixed_distances(ds.rows[query], ds.rows[others], ds.schema)
    nearest = others[np.lexsort((others, d))][: n_members - 1]
    return Region(query, (query, *(int(i) for i in nearest)),
                  row_filter.describe() if row_filter and row_filter.clauses else None, distance)


# -- mode shift --------------------------------------------------------------


@dataclass(frozen=True)
class ModeShiftRow:
    feature: str
    factual_mode: str
    p_orig: float
    p_cf: float
    delta: float
    mode_count: int
    n_factuals: int
    cf_mode_count: int
    n_counterfactuals: int

    def to_dict(self):
        return {"feature": self.feature, "factual_mode": self.factual_mode,
                "p_orig": self.p_orig, "p_cf": self.p_cf, "delta": self.delta,
                "mode_count": self.mode_count, "n_factuals": self.n_factuals,
                "cf_mode_count": self.cf_mode_count, "n_counterfactuals": self.n_counterfactuals}


def mode_shift_from_counts(mode_count: int, n_factuals: int, cf_mode_count: int,
                           n_counterfactuals: int) -> tuple[float, float, float]:
    """(p_orig, p_cf, delta) with delta = (p_cf - p_orig) / p_orig evaluated exactly."""
    p_orig = Fraction(mode_count, n_factuals)
    p_cf = Fraction(cf_mode_count, n_counterfactuals)
    return float(p_orig), float(p_cf), float((p_cf - p_orig) / p_orig)


def mode_shift(region: Region | None, cfsets, ds: Dataset, include_immutable: bool = False) -> list[ModeShiftRow]:
    """Proportion of each feature's factual mode among factuals versus pooled counterfactuals.

    Continuous features are skipped with a log notice; immutable features are
    skipped unless ``include_immutable``. Mode ties go to the lower code.
    """
    cfsets = list(cfsets)
    if not cfsets:
        raise RegionError("no counterfactual sets")
    if region is not None:
        if len(cfsets) != len(region.member_indices):
            raise RegionError(
                f"region has {len(region.member_indices)} members but {len(cfsets)} counterfactual sets")
        for i, cs in zip(region.member_indices, cfsets):
            if not np.array_equal(ds.rows[i], cs.factual):
                raise RegionError(f"counterfactual set does not belong to region member {i}")
    factuals = np.stack([cs.factual for cs in cfsets])
    pooled = np.concatenate([cs.counterfactuals for cs in cfsets])
    if len(pooled) == 0:
        raise RegionError("no counterfactuals to pool")
    rows = []
    skipped = []
    for j, feat in enumerate(ds.schema):
        if feat.is_continuous:
            skipped.append(feat.name)
            continue
        if feat.immutable and not include_immutable:
            continue
        codes = factuals[:, j].astype(np.int64)
        counts = np.bincount(codes, minlength=len(feat.categories))
        mode = int(np.argmax(counts))
        cf_count = int(np.count_nonzero(pooled[:, j] == mode))
        p_orig, p_cf, delta = mode_shift_from_counts(int(counts[mode]), len(factuals), cf_count, len(pooled))
        rows.append(ModeShiftRow(feat.name, feat.categories[mode], p_orig, p_cf, delta,
                                 int(counts[mode]), len(factuals), cf_count, len(pooled)))
    if skipped:
        logger.info("mode shift skips continuous features: %s", ", ".join(skipped))
    return rows


# -- correlation -------------------------------------------------------------


@dataclass
class CorrelationReport:
    r: float | None  # None when either vector is constant
    features: list[str]
    f_region: list[float]
    f_global: list[float]
    quadrants: list[str]
    diagonal_distance: list[float]
    mu_region: float
    mu_global: float
    notes: list[str] = field(default_factory=list)

    @property
    def defined(self) -> bool:
        return self.r is not None

    def to_dict(self):
        return {
            "r": self.r if self.r is not None else "undefined",
            "split_rule": {"mu_global": self.mu_global, "mu_region": self.mu_region},
            "quadrants": [
                {"feature": n, "F_region": fr, "F_global": fg, "quadrant": q, "diagonal_distance": dd}
                for n, fr, fg, q, dd in zip(self.features, self.f_region, self.f_global,
                                            self.quadrants, self.diagonal_distance)
            ],
        }


def pearson(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Pearson r of two equal-length vectors; None when either is constant.

    Centred sums are formed exactly, so constancy is detected without
    rounding noise and r is correctly signed and within one ulp.
    """
    if len(a) != len(b):
        raise ValueError("vectors differ in length")
    if not a:
        return None
    xa = [Fraction(float(v)) for v in a]
    xb = [Fraction(float(v)) for v in b]
    ma, mb = sum(xa) / len(xa), sum(xb) / len(xb)
    saa = sum((v - ma) ** 2 for v in xa)
    sbb = sum((v - mb) ** 2 for v in xb)
    if saa == 0 or sbb == 0:
        return None
    sab = sum((x - ma) * (y - mb) for x, y in zip(xa, xb))
    r = math.sqrt(sab * sab / (saa * sbb))
    return min(1.0, r) if sab >= 0 else -min(1.0, r)


def quadrant(f_region: float, f_global: float, mu_region: float, mu_global: float) -> str:
    high_global = f_global > mu_global
    high_region = f_region > mu_region
    if high_region:
        return "C" if high_global else "A"
    return "D" if high_global else "B"


def correlate(regional: FlexResult, global_: FlexResult) -> CorrelationReport:
    if regional.feature_names != global_.feature_names:
        raise SchemaError("regional and global results cover different features")
    m = len(regional.feature_names)
    if m < 2:
        raise RegionError("correlation needs at least 2 features")
    fr = [float(v) for v in regional.phi]
    fg = [float(v) for v in global_.phi]
    mu_re, mu_g = math.fsum(fr) / m, math.fsum(fg) / m
    r = pearson(fr, fg)
    notes = [] if r is not None else ["r undefined: a frequency vector is constant"]
    return CorrelationReport(
        r, list(regional.feature_names), fr, fg,
        [quadrant(a, b, mu_re, mu_g) for a, b in zip(fr, fg)],
        [abs(a - b) / math.sqrt(2.0) for a, b in zip(fr, fg)],
        mu_re, mu_g, notes,
    )


@dataclass
class RegionReport:
    region: Region
    flex: FlexResult
    mode_shift: list[ModeShiftRow]
    correlation: CorrelationReport | None

    def to_dict(self):
        return {
            "filter": self.region.selection_filter,
            "region": self.region.to_dict(),
            "members": list(self.region.member_indices),
            "flex": self.flex.to_dict(),
            "mode_shift": [row.to_dict() for row in self.mode_shift],
            "correlation": self.correlation.to_dict() if self.correlation else None,
        }

    def scatter_rows(self) -> list[dict]:
        if self.correlation is None:
            return []
        c = self.correlation
        return [{"feature": n, "F_global": g, "F_region": r, "quadrant": q}
                for n, g, r, q in zip(c.features, c.f_global, c.f_region, c.quadrants)]
