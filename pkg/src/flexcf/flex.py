"""Counterfactual feature change frequencies (FLEX scores).

For one factual with counterfactual set C, feature j scores

    phi_j = |{x' in C : changed_j(x', x)}| / |C|

where categorical and ordinal features change on exact inequality and
continuous features change when |x'_j - x_j| / range_j exceeds tau_j. The
mean relative magnitude mu_j = mean |x'_j - x_j| / range_j is kept for
continuous features. Regional and global scores average phi over factuals.

Aggregation is done on the exact integer change counts so that results do not
depend on the order of counterfactuals or instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .dataset import CONTINUOUS, FeatureSchema, SchemaError

DEFAULT_TAU = 0.05


class FlexError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdVector:
    """Change thresholds for continuous features as fractions of their range."""

    default: float = DEFAULT_TAU
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "overrides", dict(sorted(self.overrides.items())))
        for name, t in [("default", self.default), *self.overrides.items()]:
            if not 0.0 <= t <= 1.0:
                raise FlexError(f"tau for {name!r} must lie in [0, 1], got {t}")

    def resolve(self, schema: Sequence[FeatureSchema]) -> np.ndarray:
        """Per-feature tau aligned to ``schema`` (NaN for non-continuous features)."""
        names = {f.name for f in schema}
        unknown = set(self.overrides) - names
        if unknown:
            raise FlexError(f"tau overrides for unknown features: {sorted(unknown)}")
        return np.array([self.overrides.get(f.name, self.default) if f.is_continuous else np.nan
                         for f in schema])

    def to_dict(self):
        return {"default": self.default, "overrides": dict(self.overrides)}

    @classmethod
    def from_dict(cls, d) -> "ThresholdVector":
        if isinstance(d, (int, float)):
            return cls(float(d))
        return cls(float(d["default"]), dict(d.get("overrides", {})))


def indicator(a, b, kind: str, tau_j: float = DEFAULT_TAU, range_j: float | None = None) -> int:
    """1 when ``a`` and ``b`` count as different values of one feature, else 0."""
    if kind != CONTINUOUS:
        return int(a != b)
    if range_j is None or not range_j > 0:
        raise FlexError(f"continuous indicator needs a positive range, got {range_j}")
    return int(abs(a - b) / range_j > tau_j)


@dataclass
class InstanceFrequencies:
    instance_index: int | None
    counts: np.ndarray  # changes per feature, int
    n_cf: int
    mu: np.ndarray  # NaN for non-continuous features
    tau: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.counts / self.n_cf


def _as_schema(schema):
    schema = tuple(schema)
    if not all(isinstance(f, FeatureSchema) for f in schema):
        raise SchemaError("expected a sequence of FeatureSchema")
    return schema


def instance_frequencies(cs, schema: Sequence[FeatureSchema],
                         tau: ThresholdVector | None = None) -> InstanceFrequencies:
    schema = _as_schema(schema)
    tau = tau or ThresholdVector()
    cfs = np.asarray(cs.counterfactuals, dtype=np.float64)
    x = np.asarray(cs.factual, dtype=np.float64)
    if cfs.size == 0 or len(cfs) == 0:
        raise FlexError("empty counterfactual list")
    if cfs.shape[1] != len(schema) or x.shape[0] != len(schema):
        raise SchemaError("counterfactuals do not match the schema width")
    taus = tau.resolve(schema)
    n_cf = len(cfs)

    cont = np.array([f.is_continuous for f in schema], dtype=bool)
    immutable = np.array([f.immutable for f in schema], dtype=bool)
    width = np.array([f.range if f.is_continuous else 1.0 for f in schema])
    if (width[cont] <= 0).any():
        raise FlexError("continuous feature with non-positive range")

    delta = np.abs(cfs - x)
    rel = delta / width
    changed = np.where(cont, rel > np.nan_to_num(taus, nan=0.0), delta != 0)
    counts = changed.sum(axis=0).astype(np.int64)
    counts[immutable] = 0

    mu = np.full(len(schema), np.nan)
    for j in np.nonzero(cont)[0]:
        mu[j] = 0.0 if immutable[j] else math.fsum(rel[:, j]) / n_cf
    return InstanceFrequencies(cs.factual_index, counts, n_cf, mu, taus)


@dataclass
class FlexResult:
    feature_names: list[str]
    kinds: list[str]
    phi: np.ndarray
    phi_std: np.ndarray
    mu: np.ndarray  # NaN for non-continuous features
    n_instances: int
    tau: ThresholdVector
    generator_name: str = ""

    def order(self) -> list[int]:
        """Feature indices by descending Phi, ties in schema order."""
        return sorted(range(len(self.phi)), key=lambda j: (-self.phi[j], j))

    def score_map(self) -> dict[str, float]:
        return {n: float(p) for n, p in zip(self.feature_names, self.phi)}

    def to_dict(self) -> dict:
        from .report import competition_ranks

        ranks = competition_ranks(self.phi)
        feats = []
        for j, name in enumerate(self.feature_names):
            d = {"name": name, "kind": self.kinds[j], "phi_mean": float(self.phi[j]),
                 "phi_std": float(self.phi_std[j])}
            if not np.isnan(self.mu[j]):
                d["mu"] = float(self.mu[j])
            d["rank"] = ranks[j]
            feats.append(d)
        return {"method": "flex", "tau": self.tau.to_dict(), "generator": self.generator_name,
                "n_instances": self.n_instances, "features": feats}

    @classmethod
    def from_dict(cls, d) -> "FlexResult":
        feats = d["features"]
        return cls(
            [f["name"] for f in feats], [f["kind"] for f in feats],
            np.array([f["phi_mean"] for f in feats]), np.array([f["phi_std"] for f in feats]),
            np.array([f.get("mu", np.nan) for f in feats]), int(d["n_instances"]),
            ThresholdVector.from_dict(d["tau"]), d.get("generator", ""),
        )


def _exact_mean_and_var(counts: np.ndarray, n_cfs: np.ndarray):
    """Exact mean and population variance of counts[i] / n_cfs[i] per feature."""
    n = len(n_cfs)
    means, variances = [], []
    groups = [(int(k), n_cfs == k) for k in np.unique(n_cfs)]
    for j in range(counts.shape[1]):
        s1 = Fraction(0)
        s2 = Fraction(0)
        for k, rows in groups:
            c = counts[rows, j]
            s1 += Fraction(int(c.sum()), k)
            s2 += Fraction(int((c * c).sum()), k * k)
        mean = s1 / n
        means.append(float(mean))
        variances.append(float(s2 / n - mean * mean))
    return np.array(means), np.array(variances)


def aggregate(per_instance: Sequence[InstanceFrequencies], schema: Sequence[FeatureSchema],
              tau: ThresholdVector | None = None, generator_name: str = "") -> FlexResult:
    """Average instance frequencies into a regional or global result."""
    per_instance = list(per_instance)
    schema = _as_schema(schema)
    if not per_instance:
        raise FlexError("nothing to aggregate")
    ref = per_instance[0].tau
    for inst in per_instance[1:]:
        if not np.array_equal(inst.tau, ref, equal_nan=True):
            raise FlexError("instance frequencies were computed under different thresholds")
    if len(ref) != len(schema):
        raise SchemaError("instance frequencies do not match the schema width")
    counts = np.stack([inst.counts for inst in per_instance])
    n_cfs = np.array([inst.n_cf for inst in per_instance], dtype=np.int64)
    phi, var = _exact_mean_and_var(counts, n_cfs)
    mu = np.full(len(schema), np.nan)
    for j, f in enumerate(schema):
        if f.is_continuous:
            mu[j] = math.fsum(inst.mu[j] for inst in per_instance) / len(per_instance)
    return FlexResult([f.name for f in schema], [f.kind for f in schema], phi,
                      np.sqrt(np.maximum(var, 0.0)), mu, len(per_instance),
                      tau or ThresholdVector(), generator_name)


def flex_scores(cfsets, schema: Sequence[FeatureSchema], tau: ThresholdVector | None = None,
                generator_name: str | None = None) -> FlexResult:
    """Score a list of counterfactual sets in one go."""
    cfsets = list(cfsets)
    if not cfsets:
        raise FlexError("no counterfactual sets to score")
    tau = tau or ThresholdVector()
    if generator_name is None:
        generator_name = ",".join(sorted({cs.generator_name for cs in cfsets}))
    per = [instance_frequencies(cs, schema, tau) for cs in cfsets]
    return aggregate(per, schema, tau, generator_name)


def tau_sweep(cfsets, schema: Sequence[FeatureSchema], taus: Sequence[float]) -> list[tuple[float, FlexResult]]:
    """Score the same counterfactual sets under each uniform threshold."""
    taus = [float(t) for t in taus]
    if not taus:
        raise FlexError("empty tau list")
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise FlexError(f"taus must be sorted ascending, got {taus}")
    cfsets = list(cfsets)
    return [(t, flex_scores(cfsets, schema, ThresholdVector(t))) for t in taus]


def monotonicity_summary(sweep: Sequence[tuple[float, FlexResult]]) -> dict[str, bool]:
    """Whether each continuous feature's Phi is non-increasing across the sweep."""
    if not sweep:
        return {}
    first = sweep[0][1]
    out = {}
    for j, (name, kind) in enumerate(zip(first.feature_names, first.kinds)):
        if kind != CONTINUOUS:
            continue
        seq = [res.phi[j] for _, res in sweep]
        out[name] = all(b <= a for a, b in zip(seq, seq[1:]))
    return out
