"""From-scratch supervised classifiers and authentication metrics.

CART decision trees with Gini splits, bagged random forests with sqrt-width
feature subsampling, and a single-hidden-layer logistic MLP trained with
mini-batch gradient descent on standardized features. Metrics: FAR, FRR,
F-measure at a threshold, and interpolated EER.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import DegenerateTrainingSet, FeatureWidthMismatch, UndefinedMetric

DEFAULT_RF_TREES = 100
DEFAULT_MLP_HIDDEN = 16
DEFAULT_MLP_LR = 0.01
DEFAULT_MLP_EPOCHS = 200
DEFAULT_MLP_BATCH = 32

MODEL_FORMAT_VERSION = 1


@dataclasses.dataclass
class Dataset:
    """Feature rows with binary labels (0 = fraud/reject, 1 = genuine)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, d) with one label per row")
        if np.isnan(self.X).any():
            raise ValueError("NaN in feature rows")

    def __len__(self):
        return len(self.y)


# --------------------------------------------------------------------------
# CART


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(X, y, feat_idx):
    """(feature, threshold, weighted gini) of the best split, or None."""
    n = len(y)
    best = None
    for f in feat_idx:
        vals = X[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[order]
        # prefix class-1 counts; candidate thresholds at value boundaries
        ones = np.cumsum(sy)
        total_ones = ones[-1]
        boundary = np.nonzero(sv[1:] > sv[:-1])[0]  # split after index i
        for i in boundary:
            nl = i + 1
            nr = n - nl
            l1 = ones[i]
            counts_l = np.array([nl - l1, l1], dtype=np.float64)
            counts_r = np.array([nr - (total_ones - l1), total_ones - l1],
                                dtype=np.float64)
            cost = (nl * _gini(counts_l) + nr * _gini(counts_r)) / n
            thr = (sv[i] + sv[i + 1]) / 2.0
            if best is None or cost < best[2] - 1e-12:
                best = (int(f), float(thr), float(cost))
    return best


def _build_tree(X, y, depth, max_depth, min_leaf, n_sub_features, rng):
    counts = np.bincount(y, minlength=2).astype(np.float64)
    prob1 = counts[1] / counts.sum()
    node = {"prob": float(prob1)}
    if (
        len(y) < 2 * min_leaf
        or counts[0] == 0
        or counts[1] == 0
        or (max_depth is not None and depth >= max_depth)
    ):
        return node
    d = X.shape[1]
    if n_sub_features is not None and n_sub_features < d:
        feat_idx = np.sort(rng.choice(d, size=n_sub_features, replace=False))
    else:
        feat_idx = np.arange(d)
    split = _best_split(X, y, feat_idx)
    if split is None:
        return node
    f, thr, _ = split
    left = X[:, f] <= thr
    if left.sum() < min_leaf or (~left).sum() < min_leaf:
        return node
    node["feature"] = f
    node["threshold"] = thr
    node["left"] = _build_tree(X[left], y[left], depth + 1, max_depth,
                               min_leaf, n_sub_features, rng)
    node["right"] = _build_tree(X[~left], y[~left], depth + 1, max_depth,
                                min_leaf, n_sub_features, rng)
    return node


def _tree_prob(node, row):
    while "feature" in node:
        node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
    return node["prob"]


@dataclasses.dataclass
class Model:
    """A trained classifier: kind tag, parameters, seed, and (for the MLP)
    feature standardization."""

    kind: str  # "TREE" | "RF" | "MLP"
    n_features: int
    seed: int
    params: dict

    def predict_proba(self, row) -> float:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.n_features,):
            raise FeatureWidthMismatch(
                f"expected width {self.n_features}, got {row.shape}"
            )
        if self.kind == "TREE":
            return float(_tree_prob(self.params["tree"], row))
        if self.kind == "RF":
            votes = [
                1.0 if _tree_prob(t, row) > 0.5 else 0.0
                for t in self.params["trees"]
            ]
            return float(np.mean(votes))
        if self.kind == "MLP":
            mu = np.asarray(self.params["mu"])
            sd = np.asarray(self.params["sd"])
            z = (row - mu) / sd
            return float(_mlp_forward(self.params, z[None, :])[0])
        raise ValueError(f"unknown model kind {self.kind!r}")

    def predict_proba_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "MLP":
            mu = np.asarray(self.params["mu"])
            sd = np.asarray(self.params["sd"])
            return _mlp_forward(self.params, (X - mu) / sd)
        return np.array([self.predict_proba(r) for r in X])

    def predict(self, row, threshold: float = 0.5) -> int:
        return int(self.predict_proba(row) >= threshold)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        def enc(obj):
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            raise TypeError(type(obj))

        payload = {
            "format": "trinketauth-model",
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "n_features": self.n_features,
            "seed": self.seed,
            "params": self.params,
        }
        return json.dumps(payload, default=enc)

    @staticmethod
    def from_json(text: str) -> "Model":
        payload = json.loads(text)
        if payload.get("format") != "trinketauth-model":
            raise ValueError("not a model file")
        params = payload["params"]
        for key in ("mu", "sd", "w1", "b1", "w2", "b2"):
            if key in params:
                params[key] = np.asarray(params[key], dtype=np.float64)
        return Model(
            kind=payload["kind"],
            n_features=payload["n_features"],
            seed=payload["seed"],
            params=params,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path) -> "Model":
        return Model.from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# MLP internals


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _mlp_forward(params, X):
    h = _sigmoid(X @ params["w1"] + params["b1"])
    return _sigmoid(h @ params["w2"] + params["b2"]).ravel()


def mlp_loss_and_grads(params, X, y):
    """Cross-entropy loss and analytic gradients for the 1-hidden-layer net."""
    n = len(X)
    h = _sigmoid(X @ params["w1"] + params["b1"])
    p = _sigmoid(h @ params["w2"] + params["b2"]).ravel()
    eps = 1e-12
    loss = float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    dz2 = (p - y)[:, None] / n
    gw2 = h.T @ dz2
    gb2 = dz2.sum(axis=0)
    dh = dz2 @ params["w2"].T
    dz1 = dh * h * (1 - h)
    gw1 = X.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


def _train_mlp(X, y, hidden, lr, epochs, batch, seed):
    rng = np.random.default_rng(seed)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Z = (X - mu) / sd
    d = X.shape[1]
    params = {
        "w1": rng.normal(0, 1.0 / np.sqrt(d), size=(d, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0, 1.0 / np.sqrt(hidden), size=(hidden, 1)),
        "b2": np.zeros(1),
    }
    n = len(Z)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            _, grads = mlp_loss_and_grads(params, Z[idx], y[idx])
            for k in params:
                params[k] = params[k] - lr * grads[k]
        loss, _ = mlp_loss_and_grads(params, Z, y)
        history.append(loss)
    params["mu"] = mu
    params["sd"] = sd
    params["loss_history"] = history
    return params


# --------------------------------------------------------------------------
# Training entry point


def train(kind: str, dataset: Dataset, hyperparams: dict | None = None,
          seed: int = 0) -> Model:
    """Train a TREE, RF, or MLP model. Deterministic for a given seed."""
    hp = dict(hyperparams or {})
    classes = np.unique(dataset.y)
    if len(classes) < 2:
        raise DegenerateTrainingSet("training data has a single class")
    X, y = dataset.X, dataset.y
    d = X.shape[1]
    rng = np.random.default_rng(seed)

    if kind == "TREE":
        tree = _build_tree(
            X, y, 0, hp.get("max_depth"), hp.get("min_leaf", 1), None, rng
        )
        params = {"tree": tree}
    elif kind == "RF":
        n_trees = hp.get("n_trees", DEFAULT_RF_TREES)
        n_sub = hp.get("n_sub_features", max(1, int(np.sqrt(d))))
        trees = []
        n = len(y)
        for t in range(n_trees):
            tree_rng = np.random.default_rng(seed * 1_000_003 + t)
            idx = tree_rng.integers(0, n, size=n)
            trees.append(
                _build_tree(X[idx], y[idx], 0, hp.get("max_depth"),
                            hp.get("min_leaf", 1), n_sub, tree_rng)
            )
        params = {"trees": trees}
    elif kind == "MLP":
        params = _train_mlp(
            X, y.astype(np.float64),
            hp.get("hidden", DEFAULT_MLP_HIDDEN),
            hp.get("lr", DEFAULT_MLP_LR),
            hp.get("epochs", DEFAULT_MLP_EPOCHS),
            hp.get("batch", DEFAULT_MLP_BATCH),
            seed,
        )
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return Model(kind=kind, n_features=d, seed=seed, params=params)


# --------------------------------------------------------------------------
# Metrics


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """Authentication error rates, all in percent."""

    far: float
    frr: float
    f_measure: float
    ta: int
    tr: int
    fa: int
    fr: int
    eer: float = float("nan")
    threshold_at_eer: float = float("nan")


def confusion(scores, threshold: float):
    ta = tr = fa = fr = 0
    for score, label in scores:
        accept = score >= threshold
        if label == 1:
            ta += accept
            fr += not accept
        else:
            fa += accept
            tr += not accept
    return int(ta), int(tr), int(fa), int(fr)


def evaluate(scores, threshold: float = 0.5) -> EvalReport:
    """FAR/FRR/F-measure at a fixed decision threshold."""
    labels = {label for _, label in scores}
    if labels != {0, 1}:
        raise UndefinedMetric("need both genuine and fraud scores")
    ta, tr, fa, fr = confusion(scores, threshold)
    far = 100.0 * fa / (fa + tr) if fa + tr else 0.0
    frr = 100.0 * fr / (fr + ta) if fr + ta else 0.0
    precision = ta / (ta + fa) if ta + fa else 0.0
    recall = ta / (ta + fr) if ta + fr else 0.0
    f = (
        100.0 * 2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return EvalReport(far=far, frr=frr, f_measure=f, ta=ta, tr=tr, fa=fa, fr=fr)


def compute_eer(scores) -> tuple[float, float]:
    """EER in percent and the threshold where FAR and FRR cross.

    Sweeps the distinct scores as thresholds (plus a catch-all above the
    maximum) and linearly interpolates between the bracketing thresholds.
    """
    labels = {label for _, label in scores}
    if labels != {0, 1}:
        raise UndefinedMetric("need both genuine and fraud scores")
    vals = np.array([s for s, _ in scores], dtype=np.float64)
    labs = np.array([l for _, l in scores], dtype=np.int64)
    n_gen = int((labs == 1).sum())
    n_fraud = int((labs == 0).sum())
    thresholds = np.unique(vals)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)

    # FAR falls and FRR rises as the threshold sweeps upward
    fars = np.empty(len(thresholds))
    frrs = np.empty(len(thresholds))
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    sl = labs[order]
    cum_gen = np.cumsum(sl == 1)  # genuine scores strictly below each cut
    cum_fraud = np.cumsum(sl == 0)
    for i, t in enumerate(thresholds):
        below = np.searchsorted(sv, t, side="left")
        rejected_gen = cum_gen[below - 1] if below > 0 else 0
        rejected_fraud = cum_fraud[below - 1] if below > 0 else 0
        frrs[i] = 100.0 * rejected_gen / n_gen
        fars[i] = 100.0 * (n_fraud - rejected_fraud) / n_fraud
    diff = fars - frrs
    # first index where FAR <= FRR
    idx = int(np.argmax(diff <= 0))
    if diff[idx] == 0 or idx == 0:
        return float(fars[idx]), float(thresholds[idx])
    d0, d1 = diff[idx - 1], diff[idx]
    t_frac = d0 / (d0 - d1)
    eer = fars[idx - 1] + t_frac * (fars[idx] - fars[idx - 1])
    thr = thresholds[idx - 1] + t_frac * (thresholds[idx] - thresholds[idx - 1])
    return float(eer), float(thr)


def roc_auc(scores) -> float:
    """Area under the ROC curve via the rank-sum formulation."""
    vals = np.array([s for s, _ in scores], dtype=np.float64)
    labs = np.array([l for _, l in scores], dtype=np.int64)
    pos = vals[labs == 1]
    neg = vals[labs == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetric("need both classes for AUC")
    # average over ties
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (
        pos[:, None] == neg[None, :]
    ).sum()
    return float(wins / (len(pos) * len(neg)))
