"""Binary classifiers whose predictions counterfactuals must flip.

Every predictor exposes ``predict_batch(rows) -> int array`` and
``predict(row) -> int`` over encoded rows in schema order. Class 1 is the
undesirable class.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import shlex
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, DatasetError, kfold_indices
from .distance import mixed_distances

logger = logging.getLogger(__name__)


class ModelError(RuntimeError):
    pass


class ExternalPredictorError(ModelError):
    pass


class ProtocolError(ExternalPredictorError):
    pass


class Predictor:
    def predict_batch(self, rows) -> np.ndarray:
        raise NotImplementedError

    def predict(self, row) -> int:
        return int(self.predict_batch(np.asarray(row, dtype=np.float64)[None, :])[0])


class CallablePredictor(Predictor):
    """Wrap a vectorized function ``fn(rows) -> array of {0, 1}``."""

    def __init__(self, fn):
        self.fn = fn

    def predict_batch(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return np.asarray(self.fn(rows), dtype=np.int64).reshape(len(rows))


# -- random forest -----------------------------------------------------------


def _gini_weighted(ones, n):
    """n * gini(node) for a binary node with ``ones`` positives out of ``n``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * ones * (n - ones) / n
    return np.where(n > 0, out, 0.0)


class _TreeBuilder:
    def __init__(self, X, y, is_categorical, max_depth, n_sub, rng, min_samples_split=2):
        self.X = X
        self.y = y
        self.is_categorical = is_categorical
        self.max_depth = max_depth
        self.n_sub = n_sub
        self.rng = rng
        self.min_samples_split = min_samples_split
        self.nodes: list[dict] = []

    def build(self):
        self._grow(np.arange(len(self.y)), 0)
        return self.nodes

    def _leaf(self, idx):
        ones = int(self.y[idx].sum())
        # ties go to class 0
        self.nodes.append({"value": 1 if 2 * ones > len(idx) else 0})
        return len(self.nodes) - 1

    def _grow(self, idx, depth):
        n = len(idx)
        ones = int(self.y[idx].sum())
        if depth >= self.max_depth or n < self.min_samples_split or ones in (0, n):
            return self._leaf(idx)
        split = self._best_split(idx, ones)
        if split is None:
            return self._leaf(idx)
        feature, rule, go_left = split
        me = len(self.nodes)
        self.nodes.append({"feature": int(feature), **rule, "left": -1, "right": -1})
        self.nodes[me]["left"] = self._grow(idx[go_left], depth + 1)
        self.nodes[me]["right"] = self._grow(idx[~go_left], depth + 1)
        return me

    def _best_split(self, idx, ones):
        n = len(idx)
        parent = float(_gini_weighted(np.float64(ones), np.float64(n)))
        y = self.y[idx]
        best_gain, best = 1e-12, None
        features = self.rng.choice(self.X.shape[1], size=self.n_sub, replace=False)
        for j in features:
            x = self.X[idx, j]
            if self.is_categorical[j]:
                found = self._categorical_split(x, y)
            else:
                found = self._threshold_split(x, y)
            if found is None:
                continue
            child, rule = found
            gain = (parent - child) / n
            if gain > best_gain:
                best_gain = gain
                if "threshold" in rule:
                    go_left = x <= rule["threshold"]
                else:
                    go_left = np.isin(x, rule["left_codes"])
                best = (j, rule, go_left)
        return best

    @staticmethod
    def _threshold_split(x, y):
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        distinct = np.nonzero(xs[:-1] < xs[1:])[0]
        if distinct.size == 0:
            return None
        n = len(xs)
        n_left = distinct + 1.0
        ones_left = np.cumsum(ys)[distinct].astype(np.float64)
        total = float(ys.sum())
        child = _gini_weighted(ones_left, n_left) + _gini_weighted(total - ones_left, n - n_left)
        k = int(np.argmin(child))
        i = distinct[k]
        thr = (xs[i] + xs[i + 1]) / 2.0
        if not xs[i] <= thr < xs[i + 1]:
            thr = xs[i]
        return float(child[k]), {"threshold": float(thr)}

    @staticmethod
    def _categorical_split(x, y):
        codes = x.astype(np.int64)
        counts = np.bincount(codes)
        pos = np.bincount(codes, weights=y.astype(np.float64), minlength=len(counts))
        present = np.nonzero(counts)[0]
        if present.size < 2:
            return None
        # ordering categories by positive rate makes prefix splits optimal for binary gini
        rate = pos[present] / counts[present]
        ordered = present[np.lexsort((present, rate))]
        n_left = np.cumsum(counts[ordered])[:-1].astype(np.float64)
        ones_left = np.cumsum(pos[ordered])[:-1]
        n, total = float(len(y)), float(y.sum())
        child = _gini_weighted(ones_left, n_left) + _gini_weighted(total - ones_left, n - n_left)
        k = int(np.argmin(child))
        left = sorted(int(c) for c in ordered[: k + 1])
        return float(child[k]), {"left_codes": left}


@dataclass
class ForestModel(Predictor):
    """Bagged ensemble of axis-aligned decision trees with majority voting."""

    trees: list
    is_categorical: tuple
    n_categories: tuple
    max_depth: int
    seed: int = 0
    _compiled: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.is_categorical = tuple(bool(c) for c in self.is_categorical)
        self.n_categories = tuple(int(c) for c in self.n_categories)
        self._compiled = self._compile()

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _compile(self):
        total = sum(len(t) for t in self.trees)
        width = max([1, *self.n_categories])
        feature = np.full(total, -1, dtype=np.int64)
        threshold = np.zeros(total)
        is_cat = np.zeros(total, dtype=bool)
        cat_left = np.zeros((total, width), dtype=bool)
        left = np.arange(total)
        right = np.arange(total)
        value = np.zeros(total, dtype=np.int64)
        roots = []
        offset = 0
        for tree in self.trees:
            roots.append(offset)
            for i, node in enumerate(tree):
                g = offset + i
                if "value" in node:
                    value[g] = node["value"]
                    continue
                feature[g] = node["feature"]
                left[g] = offset + node["left"]
                right[g] = offset + node["right"]
                if "left_codes" in node:
                    is_cat[g] = True
                    cat_left[g, node["left_codes"]] = True
                else:
                    threshold[g] = node["threshold"]
            offset += len(tree)
        depth = max([0, *(_depth(t) for t in self.trees)])
        return (np.array(roots, dtype=np.int64), feature, threshold, is_cat, cat_left,
                left, right, value, depth, width)

    def predict_batch(self, rows) -> np.ndarray:
        X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        n = len(X)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        roots, feature, threshold, is_cat, cat_left, left, right, value, depth, width = self._compiled
        node = np.repeat(roots[:, None], n, axis=1)
        cols = np.arange(n)[None, :]
        for _ in range(depth):
            f = feature[node]
            internal = f >= 0
            fx = X[cols, np.where(internal, f, 0)]
            code = np.clip(fx, 0, width - 1).astype(np.int64)
            go_left = np.where(is_cat[node], cat_left[node, code], fx <= threshold[node])
            node = np.where(internal, np.where(go_left, left[node], right[node]), node)
        votes = value[node].sum(axis=0)
        return (2 * votes > len(roots)).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": "forest",
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "is_categorical": list(self.is_categorical),
            "n_categories": list(self.n_categories),
            "trees": self.trees,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> "ForestModel":
        return cls(d["trees"], d["is_categorical"], d["n_categories"], d["max_depth"], d["seed"])


def _depth(tree, i=0):
    node = tree[i]
    if "value" in node:
        return 0
    return 1 + max(_depth(tree, node["left"]), _depth(tree, node["right"]))


def train_forest(train: Dataset, n_trees: int = 50, max_depth: int = 8, seed: int = 0) -> ForestModel:
    """Bootstrap-aggregated gini trees with sqrt(F) features tried per split.

    Categorical and ordinal features split on code subsets, continuous
    features on thresholds.
    """
    if len(train) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if len(np.unique(train.labels)) < 2:
        raise DatasetError("training data contains a single class")
    if n_trees < 1 or max_depth < 1:
        raise ValueError("n_trees and max_depth must be positive")
    is_cat = tuple(not f.is_continuous for f in train.schema)
    n_cat = tuple(len(f.categories) if not f.is_continuous else 0 for f in train.schema)
    n_sub = max(1, int(math.floor(math.sqrt(train.n_features))))
    rng = np.random.default_rng(seed)
    X, y = train.rows, train.labels
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, len(y), len(y))
        builder = _TreeBuilder(X[boot], y[boot], is_cat, max_depth, n_sub, rng)
        trees.append(builder.build())
    return ForestModel(trees, is_cat, n_cat, max_depth, seed)


def cross_validate(ds: Dataset, n_folds: int = 10, n_trees: int = 50, max_depth: int = 8,
                   seed: int = 0) -> list[dict]:
    """Unstratified k-fold accuracy and F1 (positive class 1) of the forest."""
    folds = kfold_indices(len(ds), n_folds, seed)
    out = []
    for k, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for i, f in enumerate(folds) if i != k])
        model = train_forest(ds.take(train_idx), n_trees, max_depth, seed + k)
        y = ds.labels[test_idx]
        pred = model.predict_batch(ds.rows[test_idx])
        tp = int(((pred == 1) & (y == 1)).sum())
        fp = int(((pred == 1) & (y == 0)).sum())
        fn = int(((pred == 0) & (y == 1)).sum())
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
        out.append({"fold": k, "accuracy": float((pred == y).mean()), "f1": f1})
    return out


# -- k nearest neighbours ----------------------------------------------------


class KNNModel(Predictor):
    def __init__(self, train: Dataset, k: int):
        if not 1 <= k <= len(train):
            raise ValueError(f"k must lie in [1, {len(train)}], got {k}")
        self.train = train
        self.k = k

    def predict_batch(self, rows):
        X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        out = np.zeros(len(X), dtype=np.int64)
        for i, x in enumerate(X):
            d = mixed_distances(x, self.train.rows, self.train.schema)
            nearest = np.argsort(d, kind="stable")[: self.k]
            out[i] = 1 if 2 * int(self.train.labels[nearest].sum()) > self.k else 0
        return out


def train_knn(train: Dataset, k: int) -> KNNModel:
    return KNNModel(train, k)


# -- external predictor ------------------------------------------------------

HANDSHAKE = "FLEXCF-PREDICT 1"
_EOF = object()


class ExternalPredictor(Predictor):
    """Predictor backed by a child process speaking a line protocol.

    The child prints ``FLEXCF-PREDICT 1`` on startup, then answers each
    request line (a JSON array of encoded feature values) with ``0`` or ``1``.
    One batch is in flight at a time.
    """

    def __init__(self, command, timeout: float = 30.0):
        self.command = command
        self.timeout = timeout
        args = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                args, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise ExternalPredictorError(f"cannot start {command!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._stderr: deque = deque(maxlen=20)
        self._lock = threading.Lock()
        self._failed: str | None = None
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        first = self._readline(time.monotonic() + timeout, "handshake")
        if first.strip() != HANDSHAKE:
            self.close()
            raise ProtocolError(f"bad handshake line {first.strip()!r}, expected {HANDSHAKE!r}")

    def _pump_stdout(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self):
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def _readline(self, deadline, what):
        try:
            line = self._lines.get(timeout=max(0.0, deadline - time.monotonic()))
        except queue.Empty:
            raise ExternalPredictorError(
                f"timeout after {self.timeout}s waiting for {what} from {self.command!r}"
            ) from None
        if line is _EOF:
            self._lines.put(_EOF)
            code = self._proc.wait()
            tail = " | ".join(self._stderr)
            raise ExternalPredictorError(
                f"child {self.command!r} exited with code {code} while waiting for {what}"
                + (f": {tail}" if tail else "")
            )
        return line

    def predict_batch(self, rows):
        X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        payload = "".join(json.dumps([float(v) for v in row]) + "\n" for row in X)
        with self._lock:
            if self._failed:
                raise ExternalPredictorError(f"predictor unusable after earlier failure: {self._failed}")
            try:
                return self._exchange(payload, len(X))
            except ExternalPredictorError as exc:
                # unread replies would shift every later batch, so stop the child
                self._failed = str(exc)
                self._kill()
                raise

    def _exchange(self, payload, n):
        deadline = time.monotonic() + self.timeout
        try:
            self._proc.stdin.write(payload)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ExternalPredictorError(f"child {self.command!r} is not accepting input: {exc}") from exc
        out = np.zeros(n, dtype=np.int64)
        for i in range(n):
            text = self._readline(deadline, f"response line {i + 1}").strip()
            if text not in ("0", "1"):
                raise ProtocolError(f"malformed response line {i + 1}: {text!r}")
            out[i] = int(text)
        return out

    def _kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def close(self):
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_predictor(command, timeout: float = 30.0) -> ExternalPredictor:
    return ExternalPredictor(command, timeout)


def load_model(path) -> ForestModel:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") != "forest":
        raise ModelError(f"{path}: unsupported model kind {d.get('kind')!r}")
    return ForestModel.from_dict(d)
