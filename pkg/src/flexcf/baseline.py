"""Pooled change-frequency importance in the style of DiCE, as a comparison baseline.

Counts every counterfactual of every instance into one pool and divides by the
pool size. Continuous features register a change when the absolute raw
difference exceeds ``epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import FeatureSchema
from .flex import ThresholdVector, flex_scores

DEFAULT_EPSILON = 1e-6


@dataclass
class DiceResult:
    feature_names: list[str]
    kinds: list[str]
    phi: np.ndarray
    counts: np.ndarray
    epsilon: float
    n_total_cf: int
    generator_name: str = ""

    def to_dict(self):
        from .report import competition_ranks

        ranks = competition_ranks(self.phi)
        return {
            "method": "dice",
            "epsilon": self.epsilon,
            "generator": self.generator_name,
            "n_total_cf": self.n_total_cf,
            "features": [
                {"name": n, "kind": k, "phi_mean": float(p), "count": int(c), "rank": r}
                for n, k, p, c, r in zip(self.feature_names, self.kinds, self.phi, self.counts, ranks)
            ],
        }


def dice_importance(cfsets, schema: Sequence[FeatureSchema], epsilon: float = DEFAULT_EPSILON) -> DiceResult:
    cfsets = list(cfsets)
    if not cfsets:
        raise ValueError("no counterfactual sets")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    cont = np.array([f.is_continuous for f in schema], dtype=bool)
    counts = np.zeros(len(schema), dtype=np.int64)
    total = 0
    for cs in cfsets:
        cfs = np.asarray(cs.counterfactuals, dtype=np.float64)
        delta = np.abs(cfs - np.asarray(cs.factual, dtype=np.float64))
        counts += np.where(cont, delta > epsilon, delta != 0).sum(axis=0)
        total += len(cfs)
    if total == 0:
        raise ValueError("zero total counterfactuals")
    phi = np.array([int(c) / total for c in counts])
    names = ",".join(sorted({cs.generator_name for cs in cfsets}))
    return DiceResult([f.name for f in schema], [f.kind for f in schema], phi, counts,
                      epsilon, total, names)


def matched_tau(schema: Sequence[FeatureSchema], epsilon: float = DEFAULT_EPSILON) -> ThresholdVector:
    """Per-feature FLEX thresholds equal to epsilon / range."""
    return ThresholdVector(0.0, {f.name: epsilon / f.range for f in schema if f.is_continuous})


@dataclass
class EquivalenceReport:
    equivalent: bool
    equal_n_cf: bool
    n_cf_values: list[int]
    flex_phi: dict[str, float]
    dice_phi: dict[str, float]
    mismatches: list[dict] = field(default_factory=list)
    tau: ThresholdVector | None = None

    def to_dict(self):
        return {
            "equivalent": self.equivalent,
            "equal_n_cf": self.equal_n_cf,
            "n_cf_values": self.n_cf_values,
            "tau": self.tau.to_dict() if self.tau else None,
            "flex_phi": self.flex_phi,
            "dice_phi": self.dice_phi,
            "mismatches": self.mismatches,
        }


def equivalence_check(cfsets, schema: Sequence[FeatureSchema],
                      epsilon: float = DEFAULT_EPSILON) -> EquivalenceReport:
    """Compare FLEX (tau_j = epsilon / range_j) with the pooled baseline feature by feature.

    The two agree exactly when every instance carries the same number of
    counterfactuals; with unequal counts the per-instance averaging of FLEX
    and the pooling of the baseline weight instances differently.
    """
    cfsets = list(cfsets)
    tau = matched_tau(schema, epsilon)
    flex = flex_scores(cfsets, schema, tau)
    dice = dice_importance(cfsets, schema, epsilon)
    sizes = sorted({len(cs) for cs in cfsets})
    mismatches = []
    for j, name in enumerate(dice.feature_names):
        a, b = float(flex.phi[j]), float(dice.phi[j])
        if a != b:
            mismatches.append({"feature": name, "flex": a, "dice": b, "difference": a - b})
    return EquivalenceReport(
        not mismatches, len(sizes) == 1, sizes,
        flex.score_map(), dict(zip(dice.feature_names, map(float, dice.phi))),
        mismatches, tau,
    )
