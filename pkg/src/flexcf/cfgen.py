"""Counterfactual generators.

Two cheap deterministic strategies: nearest unlike neighbour value copying and a
seeded sparse random search. Both flip an undesirable prediction (class 1) to
class 0 and never alter immutable features.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .distance import feature_distances, mixed_distances

logger = logging.getLogger(__name__)

NUN = "nearest_unlike_neighbor"
SPARSE = "sparse_search"
STRATEGIES = (NUN, SPARSE)

UNDESIRABLE = 1
DESIRABLE = 0


class GenerationError(RuntimeError):
    pass


class NoCounterfactualError(GenerationError):
    pass


class NotAFactualError(GenerationError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    strategy: str = SPARSE
    n_cf: int = 10
    max_changes: int | None = None
    search_budget: int = 500
    sparsity_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.n_cf < 1:
            raise ValueError("n_cf must be at least 1")
        if self.search_budget < self.n_cf:
            raise ValueError("search_budget must be at least n_cf")
        if self.max_changes is not None and self.max_changes < 1:
            raise ValueError("max_changes must be at least 1")
        if self.sparsity_weight < 0:
            raise ValueError("sparsity_weight must be non-negative")


@dataclass
class CounterfactualSet:
    factual: np.ndarray
    counterfactuals: np.ndarray
    generator_name: str
    seed: int
    changed_feature_counts: list[int] = field(default_factory=list)
    n_requested: int = 0
    factual_index: int | None = None

    def __post_init__(self):
        self.factual = np.asarray(self.factual, dtype=np.float64)
        self.counterfactuals = np.asarray(self.counterfactuals, dtype=np.float64).reshape(
            -1, len(self.factual))
        if not self.changed_feature_counts:
            self.changed_feature_counts = [
                int(c) for c in np.count_nonzero(self.counterfactuals != self.factual, axis=1)]
        if not self.n_requested:
            self.n_requested = len(self.counterfactuals)

    def __len__(self):
        return len(self.counterfactuals)

    @property
    def shortfall(self) -> int:
        return max(0, self.n_requested - len(self.counterfactuals))

    def to_dict(self, schema=None) -> dict:
        def row(x):
            if schema is None:
                return [float(v) for v in x]
            return [f.decode(v) for f, v in zip(schema, x)]

        return {
            "factual_index": self.factual_index,
            "generator": self.generator_name,
            "seed": self.seed,
            "factual": row(self.factual),
            "counterfactuals": [row(c) for c in self.counterfactuals],
            "changed_feature_counts": list(self.changed_feature_counts),
            "shortfall": self.shortfall,
        }


def _check_factual(factual, model):
    if model.predict(factual) != UNDESIRABLE:
        raise NotAFactualError("factual is already predicted desirable")


def _finish(factual, found, cfg, name, factual_index):
    if not found:
        raise NoCounterfactualError("zero valid counterfactuals found")
    cfs = np.array(found)
    cs = CounterfactualSet(factual, cfs, name, cfg.seed, n_requested=cfg.n_cf,
                           factual_index=factual_index)
    if cs.shortfall:
        logger.info("factual %s: found %d of %d counterfactuals", factual_index, len(cs), cfg.n_cf)
    return cs


def generate_nun(factual, pool: Dataset, model, cfg: GeneratorConfig, factual_index=None,
                 pool_predictions=None) -> CounterfactualSet:
    """Copy values from nearest unlike neighbours until the prediction flips.

    Opposite-class pool rows are visited nearest first (mixed distance, ties by
    row index). Differing mutable features are copied from the neighbour in
    decreasing order of their per-feature distance; the first prefix that flips
    the prediction is kept. Neighbours are visited until ``n_cf`` distinct
    counterfactuals are found or the pool is exhausted. ``pool_predictions``
    may carry the model's precomputed predictions for the pool rows.
    """
    factual = np.asarray(factual, dtype=np.float64)
    _check_factual(factual, model)
    schema = pool.schema
    mutable = ~np.array([f.immutable for f in schema], dtype=bool)
    preds = model.predict_batch(pool.rows) if pool_predictions is None else pool_predictions
    unlike = np.nonzero(preds == DESIRABLE)[0]
    if unlike.size == 0:
        raise NoCounterfactualError("zero valid counterfactuals found: no opposite-class rows in pool")
    dist = mixed_distances(factual, pool.rows[unlike], schema)
    order = unlike[np.argsort(dist, kind="stable")]

    found: dict[tuple, np.ndarray] = {}
    for r in order:
        if len(found) >= cfg.n_cf:
            break
        neighbour = pool.rows[r]
        per_feature = feature_distances(factual, neighbour, schema)[0]
        cand_feats = np.nonzero(mutable & (neighbour != factual))[0]
        if cand_feats.size == 0:
            continue
        cand_feats = cand_feats[np.argsort(-per_feature[cand_feats], kind="stable")]
        prefixes = np.repeat(factual[None, :], len(cand_feats), axis=0)
        for step, j in enumerate(cand_feats):
            prefixes[step:, j] = neighbour[j]
        flipped = np.nonzero(model.predict_batch(prefixes) == DESIRABLE)[0]
        if flipped.size == 0:
            continue
        cf = prefixes[flipped[0]]
        found.setdefault(tuple(cf.tolist()), cf)
    return _finish(factual, list(found.values()), cfg, NUN, factual_index)


def _score(cands, factual, cont, width, weight):
    changed = np.count_nonzero(cands != factual, axis=1)
    magnitude = (np.abs(cands - factual)[:, cont] / width[cont]).sum(axis=1)
    return changed + weight * magnitude


def generate_sparse_search(factual, train: Dataset, model, cfg: GeneratorConfig,
                           factual_index=None, batch_size: int = 50) -> CounterfactualSet:
    """Seeded random search with greedy refinement toward sparse counterfactuals.

    Each round proposes a batch of candidates. Fresh proposals change 1 to
    ``max_changes`` random mutable features (categorical: another category
    uniformly; continuous: uniform within the feature range). Once valid
    candidates exist, half of each batch instead refines a current elite by
    reverting one changed feature or halving a continuous change. Valid
    candidates are scored by changed-feature count plus ``sparsity_weight``
    times the summed range-normalised continuous change; the ``n_cf`` best
    distinct ones within ``search_budget`` evaluations are returned.
    """
    factual = np.asarray(factual, dtype=np.float64)
    _check_factual(factual, model)
    schema = train.schema
    mutable = np.array([j for j, f in enumerate(schema) if not f.immutable], dtype=np.int64)
    if mutable.size == 0:
        raise NoCounterfactualError("zero valid counterfactuals found: every feature is immutable")
    max_changes = min(cfg.max_changes or mutable.size, mutable.size)
    cont = np.array([f.is_continuous for f in schema], dtype=bool)
    width = np.array([f.range if f.is_continuous else 1.0 for f in schema])
    lo = np.array([f.range_min if f.is_continuous else 0.0 for f in schema])
    n_cats = np.array([0 if f.is_continuous else len(f.categories) for f in schema])
    rng = np.random.default_rng(cfg.seed)

    def fresh():
        cand = factual.copy()
        k = int(rng.integers(1, max_changes + 1))
        for j in rng.choice(mutable, size=k, replace=False):
            if cont[j]:
                cand[j] = lo[j] + width[j] * rng.random()
            else:
                other = int(rng.integers(0, n_cats[j] - 1))
                cand[j] = other + (other >= factual[j])
        return cand

    def refine(elite):
        cand = elite.copy()
        changed = np.nonzero(cand != factual)[0]
        if changed.size == 0:
            return fresh()
        j = int(rng.choice(changed))
        if cont[j] and rng.random() < 0.5:
            cand[j] = factual[j] + (cand[j] - factual[j]) / 2.0
        else:
            cand[j] = factual[j]
        return cand

    valid: dict[tuple, tuple[float, int, np.ndarray]] = {}
    seen: set[tuple] = set()
    used, serial = 0, 0
    while used < cfg.search_budget:
        size = min(batch_size, cfg.search_budget - used)
        elites = sorted(valid.values(), key=lambda t: (t[0], t[1]))[: cfg.n_cf]
        batch = []
        for _ in range(size):
            if elites and rng.random() < 0.5:
                batch.append(refine(elites[int(rng.integers(0, len(elites)))][2]))
            else:
                batch.append(fresh())
        batch = np.array(batch)
        used += size
        ok = model.predict_batch(batch) == DESIRABLE
        scores = _score(batch, factual, cont, width, cfg.sparsity_weight)
        for cand, good, s in zip(batch, ok, scores):
            key = tuple(cand.tolist())
            if key in seen:
                continue
            seen.add(key)
            if good:
                valid[key] = (float(s), serial, cand)
                serial += 1
    best = sorted(valid.values(), key=lambda t: (t[0], t[1]))[: cfg.n_cf]
    if not best:
        raise NoCounterfactualError(
            f"zero valid counterfactuals found: search budget of {cfg.search_budget} exhausted")
    return _finish(factual, [b[2] for b in best], cfg, SPARSE, factual_index)


@dataclass(frozen=True)
class SkipRecord:
    index: int
    reason: str

    def to_dict(self):
        return {"index": self.index, "reason": self.reason}


@dataclass
class BatchResult:
    sets: list[CounterfactualSet]
    skipped: list[SkipRecord]

    @property
    def n_counterfactuals(self) -> int:
        return sum(len(s) for s in self.sets)


def generate_one(factual, data: Dataset, model, cfg: GeneratorConfig, factual_index=None,
                 pool_predictions=None):
    if cfg.strategy == NUN:
        return generate_nun(factual, data, model, cfg, factual_index, pool_predictions)
    return generate_sparse_search(factual, data, model, cfg, factual_index)


def generate_batch(factuals: Sequence, data: Dataset, model, cfg: GeneratorConfig,
                   indices: Sequence[int] | None = None, n_jobs: int = 1) -> BatchResult:
    """Run the configured generator over many factuals.

    Per-instance seeds are ``cfg.seed + index`` where ``index`` is the matching
    entry of ``indices`` (positions by default). Failures become skip records.
    """
    factuals = list(factuals)
    if indices is None:
        indices = list(range(len(factuals)))
    indices = [int(i) for i in indices]
    if len(indices) != len(factuals):
        raise ValueError("indices and factuals differ in length")

    preds = model.predict_batch(data.rows) if cfg.strategy == NUN and factuals else None

    def task(pair):
        idx, x = pair
        try:
            return generate_one(x, data, model, replace(cfg, seed=cfg.seed + idx), idx, preds)
        except GenerationError as exc:
            return SkipRecord(idx, str(exc))

    pairs = list(zip(indices, factuals))
    if n_jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(task, pairs))
    else:
        results = [task(p) for p in pairs]
    sets = [r for r in results if isinstance(r, CounterfactualSet)]
    skipped = [r for r in results if isinstance(r, SkipRecord)]
    return BatchResult(sets, skipped)


def sample_factuals(ds: Dataset, model, n: int, seed: int) -> np.ndarray:
    """Row indices of up to ``n`` instances predicted undesirable, drawn without
    replacement under ``seed`` and returned sorted."""
    eligible = np.nonzero(model.predict_batch(ds.rows) == UNDESIRABLE)[0]
    if eligible.size <= n:
        return eligible
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(eligible, size=n, replace=False))


def sparsity_profile(sets: Sequence[CounterfactualSet]) -> dict:
    """Distribution of the number of changed features per counterfactual."""
    counts = [c for s in sets for c in s.changed_feature_counts]
    hist: dict[int, int] = {}
    for c in counts:
        hist[c] = hist.get(c, 0) + 1
    total = len(counts)
    return {
        "n_counterfactuals": total,
        "histogram": {str(k): hist[k] for k in sorted(hist)},
        "share_at_most_2": (sum(v for k, v in hist.items() if k <= 2) / total) if total else None,
    }
