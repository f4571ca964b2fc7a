"""Rankings, method comparisons and deterministic JSON/CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

REPORT_SCHEMA = "flexcf-report/1"


class ReportError(ValueError):
    pass


def competition_ranks(scores: Sequence[float]) -> list[int]:
    """Descending "1224" ranks: equal scores share a rank and the next rank skips."""
    s = [float(v) for v in scores]
    ordered = sorted(s, reverse=True)
    first = {}
    for pos, v in enumerate(ordered, start=1):
        first.setdefault(v, pos)
    return [first[v] for v in s]


@dataclass
class RankRow:
    rank: int
    feature: str
    score: float
    std: float | None
    method: str

    def display(self) -> str:
        if self.std is None:
            return f"{self.rank} ({self.score:.2f})"
        return f"{self.rank} ({self.score:.2f} ± {self.std:.2f})"

    def to_dict(self):
        return {"rank": self.rank, "feature": self.feature, "score": self.score,
                "std": self.std, "method": self.method, "display": self.display()}


@dataclass
class RankingTable:
    rows: list[RankRow]
    metadata: dict = field(default_factory=dict)

    @property
    def method(self) -> str:
        return self.rows[0].method if self.rows else ""

    def by_feature(self) -> dict[str, RankRow]:
        return {r.feature: r for r in self.rows}

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "kind": "ranking", "metadata": self.metadata,
                "rows": [r.to_dict() for r in self.rows]}

    def to_rows(self):
        return [r.to_dict() for r in self.rows]


def rank(result, metadata: dict | None = None, method: str | None = None) -> RankingTable:
    """Rank the features of a FlexResult or DiceResult by descending score."""
    names = list(result.feature_names)
    if not names:
        raise ReportError("empty result")
    scores = [float(v) for v in result.phi]
    std = getattr(result, "phi_std", None)
    if method is None:
        method = "dice" if hasattr(result, "epsilon") else "flex"
    ranks = competition_ranks(scores)
    order = sorted(range(len(names)), key=lambda j: (ranks[j], j))
    rows = [RankRow(ranks[j], names[j], scores[j], None if std is None else float(std[j]), method)
            for j in order]
    meta = {"method": method, "generator": getattr(result, "generator_name", "")}
    if hasattr(result, "tau"):
        meta["tau"] = result.tau.to_dict()
    if hasattr(result, "epsilon"):
        meta["epsilon"] = result.epsilon
    meta.update(metadata or {})
    return RankingTable(rows, meta)


def spearman(a: Sequence[float], b: Sequence[float]) -> float | None:
    if len(a) < 2:
        return None
    if len(set(a)) < 2 or len(set(b)) < 2:
        return None
    rho = float(spearmanr(a, b).statistic)
    return None if math.isnan(rho) else rho


def compare(tables: Sequence[RankingTable], labels: Sequence[str] | None = None) -> dict:
    """Align rankings by feature; report rank deltas against the first table and
    pairwise Spearman correlations of the scores."""
    tables = list(tables)
    if len(tables) < 2:
        raise ReportError("need at least two tables to compare")
    labels = list(labels) if labels is not None else [t.method for t in tables]
    if len(set(labels)) != len(labels):
        raise ReportError(f"duplicate table labels {labels}")
    maps = [t.by_feature() for t in tables]
    features = list(maps[0])  # first table's ranking order
    for lbl, m in zip(labels, maps):
        if set(m) != set(features):
            raise ReportError(f"feature set of {lbl!r} differs from {labels[0]!r}")
    rows = []
    for f in features:
        base = maps[0][f].rank
        rows.append({
            "feature": f,
            "ranks": {lbl: m[f].rank for lbl, m in zip(labels, maps)},
            "scores": {lbl: m[f].score for lbl, m in zip(labels, maps)},
            "rank_delta": {lbl: m[f].rank - base for lbl, m in zip(labels, maps)},
        })
    pairs = []
    for i in range(len(tables)):
        for k in range(i + 1, len(tables)):
            a = [maps[i][f].score for f in features]
            b = [maps[k][f].score for f in features]
            pairs.append({"a": labels[i], "b": labels[k], "spearman": spearman(a, b)})
    return {"schema": REPORT_SCHEMA, "kind": "comparison", "methods": labels,
            "features": rows, "spearman": pairs}


# -- serialisation -----------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dumps_json(doc) -> str:
    if hasattr(doc, "to_dict"):
        doc = doc.to_dict()
    doc = _clean(doc)
    if isinstance(doc, dict) and "schema" not in doc:
        doc = {"schema": REPORT_SCHEMA, **doc}
    return json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def dumps_csv(rows) -> str:
    if hasattr(rows, "to_rows"):
        rows = rows.to_rows()
    rows = [_clean(r) for r in rows]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if rows:
        header = list(rows[0])
        writer.writerow(header)
        for r in rows:
            writer.writerow([_cell(r.get(h)) for h in header])
    return buf.getvalue()


def emit(doc, path, fmt: str = "json") -> Path:
    """Write ``doc`` as JSON or CSV; identical input gives identical bytes."""
    if fmt == "json":
        text = dumps_json(doc)
    elif fmt == "csv":
        text = dumps_csv(doc)
    else:
        raise ReportError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path
