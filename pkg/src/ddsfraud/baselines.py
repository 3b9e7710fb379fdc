"""Feature-only baselines: an MLP sharing the neural core with the graph
model, and a minimal gradient-boosted-trees classifier on logistic loss
(greedy exact splits, Newton leaf values) that doubles as a feature
encoder via per-tree leaf margins.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .metrics import average_precision


# ---------------------------------------------------------------------------
# MLP on raw features

@dataclass(frozen=True)
class MlpBaselineConfig:
    hidden: tuple[int, ...] = (32, 16)
    epochs: int = 80
    patience: int = 8
    lr: float = 0.01
    seed: int = 0
    pos_weight: Optional[float] = None


class MlpBaseline:
    def __init__(self, feature_dim: int, cfg: MlpBaselineConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.net = nn.Mlp(rng, [feature_dim, *cfg.hidden, 1])

    def fit(self, X: np.ndarray, y: np.ndarray,
            X_val: Optional[np.ndarray] = None, y_val: Optional[np.ndarray] = None) -> list[dict]:
        cfg = self.cfg
        n_pos = int((y == 1).sum())
        if n_pos == 0:
            raise nn.NnError("no positive labels in training data")
        pos_weight = cfg.pos_weight if cfg.pos_weight is not None else (len(y) - n_pos) / n_pos
        opt = nn.Adam(lr=cfg.lr)
        history = []
        best_state = {k: v.copy() for k, v in self.net.params.items()}
        best_ap, stale = -1.0, 0
        use_val = X_val is not None and y_val is not None and (np.asarray(y_val) == 1).any()
        for epoch in range(cfg.epochs):
            self.net.zero_grads()
            logits, cache = self.net.forward(X)
            loss, d = nn.bce_loss(logits[:, 0], y, pos_weight)
            self.net.backward(cache, d[:, None])
            opt.step(self.net.params, self.net.grads)
            row = {"epoch": epoch, "train_loss": loss}
            if use_val:
                val_ap = average_precision(self.predict(X_val), y_val)
                row["val_ap"] = val_ap
                if val_ap > best_ap:
                    best_ap, stale = val_ap, 0
                    best_state = {k: v.copy() for k, v in self.net.params.items()}
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        history.append(row)
                        break
            history.append(row)
        if use_val:
            for k, v in self.net.params.items():
                v[...] = best_state[k]
        return history

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits, _ = self.net.forward(X)
        return nn.sigmoid(logits[:, 0])


# ---------------------------------------------------------------------------
# gradient-boosted trees

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def predict_one(self, x: np.ndarray) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 40
    max_depth: int = 3
    learning_rate: float = 0.2
    min_leaf: int = 4


@dataclass
class GbdtModel:
    trees: list[TreeNode] = field(default_factory=list)
    learning_rate: float = 0.2
    base_score: float = 0.0   # prior log-odds

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * np.array([tree.predict_one(x) for x in X])
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return nn.sigmoid(self.predict_margin(X))


def _best_split(X: np.ndarray, g: np.ndarray, idx: np.ndarray, min_leaf: int):
    """Exact greedy variance-reduction split of the residuals g[idx]."""
    best = None   # (gain, feature, threshold)
    gs = g[idx]
    total, n = gs.sum(), len(idx)
    base = total * total / n
    for f in range(X.shape[1]):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted, gs_sorted = xs[order], gs[order]
        csum = np.cumsum(gs_sorted)
        for i in range(min_leaf - 1, n - min_leaf):
            if xs_sorted[i] == xs_sorted[i + 1]:
                continue
            n_l = i + 1
            s_l = csum[i]
            s_r = total - s_l
            gain = s_l * s_l / n_l + s_r * s_r / (n - n_l) - base
            if best is None or gain > best[0] + 1e-12:
                best = (gain, f, (xs_sorted[i] + xs_sorted[i + 1]) / 2.0)
    if best is None or best[0] <= 1e-12:
        return None
    return best


def _build_tree(X, g, h, idx, depth, cfg: GbdtConfig) -> TreeNode:
    node = TreeNode()
    if depth >= cfg.max_depth or len(idx) < 2 * cfg.min_leaf:
        node.value = _newton_leaf(g, h, idx)
        return node
    split = _best_split(X, g, idx, cfg.min_leaf)
    if split is None:
        node.value = _newton_leaf(g, h, idx)
        return node
    _, f, thr = split
    mask = X[idx, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _build_tree(X, g, h, idx[mask], depth + 1, cfg)
    node.right = _build_tree(X, g, h, idx[~mask], depth + 1, cfg)
    return node


def _newton_leaf(g, h, idx) -> float:
    return float(g[idx].sum() / (h[idx].sum() + 1e-12))


def gbdt_train(X: np.ndarray, y: np.ndarray, cfg: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """Boosting on logistic loss: each round fits a tree to the negative
    gradient (residual y - p), with Newton-step leaf values."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    model = GbdtModel(learning_rate=cfg.learning_rate,
                      base_score=float(np.log(p / (1 - p))))
    if len(np.unique(y)) < 2:
        warnings.warn("single-class training data: prior-only model")
        return model
    margin = np.full(len(y), model.base_score)
    idx_all = np.arange(len(y))
    for _ in range(cfg.n_trees):
        prob = nn.sigmoid(margin)
        g = y - prob            # negative gradient of logloss wrt margin
        h = prob * (1 - prob)
        tree = _build_tree(X, g, h, idx_all, 0, cfg)
        model.trees.append(tree)
        margin += cfg.learning_rate * np.array([tree.predict_one(x) for x in X])
    return model


def gbdt_encode(model: GbdtModel, X: np.ndarray, append_raw: bool = False) -> np.ndarray:
    """Per-tree leaf margin values as an encoded feature vector, optionally
    with the raw features appended."""
    X = np.atleast_2d(X)
    enc = np.zeros((len(X), len(model.trees)))
    for j, tree in enumerate(model.trees):
        enc[:, j] = [tree.predict_one(x) for x in X]
    if append_raw:
        return np.concatenate([X, enc], axis=1)
    return enc


def logloss(margins: np.ndarray, y: np.ndarray) -> float:
    z = np.asarray(margins, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float((y * nn.softplus(-z) + (1 - y) * nn.softplus(z)).mean())
