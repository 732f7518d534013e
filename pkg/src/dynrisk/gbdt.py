"""Gradient-boosted regression trees on logistic loss.

Each round fits a least-squares regression tree to the negative gradient
``y - p`` and sets every leaf by one shrunken Newton step. Leaf steps are
halved until that leaf's training loss does not increase, which makes the
total training loss non-increasing round over round.

Numeric splits send ``x <= threshold`` left, with thresholds drawn from the
node's sorted unique values. Categorical inputs are one-hot encoded.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from dynrisk.errors import DataError
from dynrisk.features import DYN_PREFIX, META_COLUMNS

FORMAT = "dynrisk-gbdt"
FORMAT_VERSION = 1
STATIC = "static"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Hyperparams:
    num_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf_count: int = 20
    subsample: float = 1.0
    max_categories: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_leaf_count < 1:
            raise ValueError("min_leaf_count must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")


def feature_columns(df: pd.DataFrame) -> list[str]:
    return [c for c in df.columns if c not in META_COLUMNS]


def _is_numeric(s: pd.Series) -> bool:
    return pd.api.types.is_numeric_dtype(s) or pd.api.types.is_bool_dtype(s)


def schema_hash(columns: Sequence[Mapping]) -> str:
    key = json.dumps([[c["name"], c["kind"]] for c in columns])
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def build_schema(df: pd.DataFrame, max_categories: int) -> list[dict]:
    schema = []
    for name in feature_columns(df):
        s = df[name]
        if _is_numeric(s):
            schema.append({"name": name, "kind": "numeric"})
        else:
            counts = s.astype(str).value_counts()
            levels = sorted(counts.index, key=lambda v: (-counts[v], v))[:max_categories]
            schema.append({"name": name, "kind": "categorical", "categories": sorted(levels)})
    return schema


def encode(df: pd.DataFrame, schema: Sequence[Mapping]) -> tuple[np.ndarray, list[str]]:
    blocks = []
    names = []
    for col in schema:
        s = df[col["name"]]
        if col["kind"] == "numeric":
            v = s.to_numpy(dtype=np.float64)
            if np.isnan(v).any():
                raise DataError(f"column {col['name']!r} has missing numeric values")
            blocks.append(v[:, None])
            names.append(col["name"])
        else:
            v = s.astype(str).to_numpy()
            cats = col["categories"]
            blocks.append(np.stack([(v == c).astype(np.float64) for c in cats], axis=1)
                          if cats else np.zeros((len(v), 0)))
            names.extend(f"{col['name']}={c}" for c in cats)
    X = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(df), 0))
    return X, names


def _sigmoid(f: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def logistic_loss(y: np.ndarray, f: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, names: Sequence[str], i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {"feature": names[self.feature[i]], "threshold": float(self.threshold[i]),
                "left": self.to_dict(names, int(self.left[i])),
                "right": self.to_dict(names, int(self.right[i]))}

    @classmethod
    def from_dict(cls, d: Mapping, names: Sequence[str]) -> "Tree":
        index = {n: i for i, n in enumerate(names)}
        feat, thr, left, right, val = [], [], [], [], []

        def visit(node) -> int:
            i = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(0.0)
            if "leaf" in node:
                val[i] = float(node["leaf"])
            else:
                feat[i] = index[node["feature"]]
                thr[i] = float(node["threshold"])
                left[i] = visit(node["left"])
                right[i] = visit(node["right"])
            return i

        visit(d)
        return cls(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), np.array(val))

    def internal_nodes(self) -> list[int]:
        return [i for i in range(len(self.feature)) if self.feature[i] >= 0]


def tie_tolerance(g: np.ndarray) -> float:
    """Gains within this of the best are ties, resolved by feature then threshold."""
    return 1e-10 * max(1.0, float(np.dot(g, g)))


class _SplitFinder:
    """Exact split search over per-feature histograms of unique-value codes."""

    def __init__(self, X: np.ndarray):
        n, d = X.shape
        self.uniques = []
        self.codes = np.empty((d, n), dtype=np.int32)
        for j in range(d):
            u, inv = np.unique(X[:, j], return_inverse=True)
            self.uniques.append(u)
            self.codes[j] = inv
        sizes = [len(u) for u in self.uniques]
        self.size = int(sum(sizes))
        offsets = np.r_[0, np.cumsum(sizes)[:-1]].astype(np.int64) if d else np.zeros(0, np.int64)
        self.seg_start = np.repeat(offsets, sizes)
        self.feat_of = np.repeat(np.arange(d), sizes)
        self.thr_of = np.concatenate(self.uniques) if d else np.zeros(0)

    def histogram(self, rows: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gr = g[rows]
        cnt = np.empty(self.size)
        sm = np.empty(self.size)
        pos = 0
        for j, u in enumerate(self.uniques):
            c = self.codes[j, rows]
            cnt[pos:pos + len(u)] = np.bincount(c, minlength=len(u))
            sm[pos:pos + len(u)] = np.bincount(c, weights=gr, minlength=len(u))
            pos += len(u)
        return cnt, sm

    def best(self, cnt: np.ndarray, sm: np.ndarray, min_leaf: int, tol: float):
        if self.size == 0:
            return None
        cum_n = np.cumsum(cnt)
        cum_s = np.cumsum(sm)
        start = self.seg_start
        base_n = np.where(start > 0, cum_n[start - 1], 0.0)
        base_s = np.where(start > 0, cum_s[start - 1], 0.0)
        n_left = cum_n - base_n
        s_left = cum_s - base_s
        # every feature's histogram covers the same rows; read totals off the first
        n = cum_n[len(self.uniques[0]) - 1]
        total = cum_s[len(self.uniques[0]) - 1]
        if n < 2 * min_leaf:
            return None
        n_right = n - n_left
        valid = (cnt > 0.5) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = s_left**2 / n_left + (total - s_left) ** 2 / n_right - total**2 / n
        gain = np.where(valid, gain, -np.inf)
        top = gain.max()
        if not top > tol:
            return None
        k = int(np.flatnonzero(gain >= top - tol)[0])
        return int(self.feat_of[k]), float(self.thr_of[k]), float(gain[k])


def _grow(finder: _SplitFinder, X: np.ndarray, rows: np.ndarray, g: np.ndarray,
          hp: Hyperparams) -> Tree:
    feat, thr, left, right = [-1], [0.0], [-1], [-1]
    tol = tie_tolerance(g[rows])
    frontier = [(0, rows, 0, finder.histogram(rows, g))]
    while frontier:
        node, idx, depth, (cnt, sm) = frontier.pop(0)
        split = finder.best(cnt, sm, hp.min_leaf_count, tol)
        if split is None:
            continue
        j, t, _ = split
        goes_left = X[idx, j] <= t
        li, ri = len(feat), len(feat) + 1
        for _ in range(2):
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1)
        feat[node], thr[node], left[node], right[node] = j, t, li, ri
        if depth + 1 >= hp.max_depth:
            continue
        l_idx, r_idx = idx[goes_left], idx[~goes_left]
        # histogram the smaller child, derive the sibling by subtraction
        if l_idx.size <= r_idx.size:
            lh = finder.histogram(l_idx, g)
            rh = (cnt - lh[0], sm - lh[1])
        else:
            rh = finder.histogram(r_idx, g)
            lh = (cnt - rh[0], sm - rh[1])
        frontier.append((li, l_idx, depth + 1, lh))
        frontier.append((ri, r_idx, depth + 1, rh))
    m = len(feat)
    return Tree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.zeros(m))


def _leaf_step(y: np.ndarray, f: np.ndarray, fit_mask: np.ndarray, lr: float) -> float:
    p = _sigmoid(f[fit_mask])
    h = float(np.sum(p * (1 - p)))
    gsum = float(np.sum(y[fit_mask] - p))
    if h <= 1e-12 or gsum == 0.0:
        return 0.0
    step = lr * gsum / h
    before = float(np.sum(np.logaddexp(0.0, f) - y * f))
    for _ in range(40):
        g = f + step
        if float(np.sum(np.logaddexp(0.0, g) - y * g)) <= before:
            return step
        step *= 0.5
    return 0.0


@dataclass
class TrainedModel:
    schema: list[dict]
    encoded_names: list[str]
    base_score: float
    trees: list[Tree]
    mode: str
    hyperparams: Hyperparams
    train_loss: list[float] = field(default_factory=list)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.schema)

    @property
    def input_columns(self) -> list[str]:
        return [c["name"] for c in self.schema]

    def check_schema(self, df: pd.DataFrame) -> None:
        have = set(feature_columns(df))
        want = self.input_columns
        missing = [c for c in want if c not in have]
        extra = [c for c in feature_columns(df) if c not in set(want)]
        if missing or extra:
            raise DataError(f"schema mismatch for {self.mode} model: "
                            f"missing columns {missing}, extra columns {extra}")

    def raw(self, df: pd.DataFrame) -> np.ndarray:
        self.check_schema(df)
        X, _ = encode(df, self.schema)
        f = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            f += tree.predict(X)
        return f

    def predict_proba(self, df: pd.DataFrame) -> np.ndarray:
        return _sigmoid(self.raw(df))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT, "version": FORMAT_VERSION, "mode": self.mode,
            "schema_hash": self.schema_hash, "schema": self.schema,
            "encoded_features": self.encoded_names, "base_score": self.base_score,
            "hyperparams": asdict(self.hyperparams), "train_loss": self.train_loss,
            "trees": [t.to_dict(self.encoded_names) for t in self.trees],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainedModel":
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model document {d.get('format')!r} v{d.get('version')}")
        m = cls(schema=list(d["schema"]), encoded_names=list(d["encoded_features"]),
                base_score=float(d["base_score"]),
                trees=[Tree.from_dict(t, d["encoded_features"]) for t in d["trees"]],
                mode=d["mode"], hyperparams=Hyperparams(**d["hyperparams"]),
                train_loss=list(d.get("train_loss", [])))
        if m.schema_hash != d["schema_hash"]:
            raise DataError("model schema hash does not match its schema")
        return m

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train(df: pd.DataFrame, hp: Hyperparams = Hyperparams(), mode: str | None = None) -> TrainedModel:
    if len(df) == 0:
        raise DataError("empty training set")
    y = df["label"].to_numpy(dtype=np.float64)
    if np.isnan(y).any():
        raise DataError("training rows without labels")
    pos = y.sum()
    if pos == 0 or pos == len(y):
        raise DataError("degenerate labels: training set needs both classes")
    if mode is None:
        mode = DYNAMIC if any(c.startswith(DYN_PREFIX) for c in feature_columns(df)) else STATIC
    schema = build_schema(df, hp.max_categories)
    X, names = encode(df, schema)
    finder = _SplitFinder(X)
    rng = np.random.Generator(np.random.PCG64(hp.seed))
    mean = pos / len(y)
    base = math.log(mean / (1 - mean))
    f = np.full(len(y), base)
    losses = [logistic_loss(y, f)]
    trees = []
    all_rows = np.arange(len(y))
    for _ in range(hp.num_trees):
        if hp.subsample < 1.0:
            rows = np.sort(rng.permutation(len(y))[: max(1, int(round(hp.subsample * len(y))))])
        else:
            rows = all_rows
        g = y - _sigmoid(f)
        tree = _grow(finder, X, rows, g, hp)
        leaf_of = tree.apply(X)
        in_fit = np.zeros(len(y), dtype=bool)
        in_fit[rows] = True
        for leaf in np.flatnonzero(tree.feature < 0):
            members = leaf_of == leaf
            tree.value[leaf] = _leaf_step(y[members], f[members], in_fit[members],
                                          hp.learning_rate)
        f = f + tree.value[leaf_of]
        trees.append(tree)
        losses.append(logistic_loss(y, f))
    return TrainedModel(schema, names, base, trees, mode, hp, losses)


def score(model: TrainedModel, rows, expected_hash: str | None = None) -> np.ndarray:
    """Fraud probabilities for a DataFrame or a single ``{column: value}`` mapping."""
    if expected_hash is not None and expected_hash != model.schema_hash:
        raise DataError(f"schema hash {expected_hash} does not match model {model.schema_hash}")
    df = pd.DataFrame([rows]) if isinstance(rows, Mapping) else rows
    return model.predict_proba(df)


def display_score(p) -> np.ndarray | int:
    """0-100 display scale, rounding half up."""
    out = np.floor(100.0 * np.asarray(p, dtype=np.float64) + 0.5).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def make_training_view(df: pd.DataFrame, mode: str, split: str = "random",
                       train_fraction: float = 0.7, seed: int = 0,
                       include_warmup: bool = False) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Column view for ``mode`` and a seeded random or temporal train/test split."""
    if len(df) == 0:
        raise DataError("empty dataset")
    view = select_mode(df, mode)
    if not include_warmup and "warm_up" in view:
        view = view[~view["warm_up"].astype(bool)]
    if len(view) == 0:
        raise DataError("no rows left after dropping warm-up")
    view = view.reset_index(drop=True)
    n_train = int(round(train_fraction * len(view)))
    if split == "random":
        perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(view))
        tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    elif split == "temporal":
        order = np.lexsort((view["id"].to_numpy(), view["time"].to_numpy()))
        tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])
    else:
        raise ValueError(f"unknown split {split!r}")
    return view.iloc[tr].reset_index(drop=True), view.iloc[te].reset_index(drop=True)


def temporal_views(df: pd.DataFrame, mode: str, train_fraction: float = 0.7,
                   in_time_fraction: float = 0.3, seed: int = 0,
                   include_warmup: bool = False):
    """(train, in-time, offline): the earliest ``train_fraction`` of rows is the
    training time range, of which a random ``in_time_fraction`` is held out."""
    early, offline = make_training_view(df, mode, "temporal", train_fraction, seed, include_warmup)
    train_part, in_time = make_training_view(early.assign(warm_up=False), mode, "random",
                                             1.0 - in_time_fraction, seed, True)
    return train_part, in_time, offline


def select_mode(df: pd.DataFrame, mode: str) -> pd.DataFrame:
    if mode == STATIC:
        return df[[c for c in df.columns if not c.startswith(DYN_PREFIX)]]
    if mode == DYNAMIC:
        return df
    raise ValueError(f"unknown mode {mode!r}")
