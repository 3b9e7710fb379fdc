"""Minimal neural core: message-passing layers over typed edge lists, an
MLP head, weighted binary cross-entropy, and Adam — all with hand-written
reverse-mode gradients on numpy arrays.

Layers are heterogeneous-friendly: the destination ("self") feature space
and each edge kind's source feature space may have different widths, which
is what lets the final aggregation step consume precomputed entity
embeddings while the head sees raw order features.
"""
from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np


class NnError(ValueError):
    pass


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NnError(f"non-finite values in {name}")
    return x


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-s, s, size=(d_in, d_out))


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# message-passing layers

class _GraphLayer:
    """Shared plumbing: parameter/grad dicts and shape bookkeeping.

    `nbr_dims` maps edge kind -> source feature width.  forward() takes the
    self features plus, per kind, (H_src, src_idx, dst_idx) where edges point
    src -> dst and dst indexes rows of the self matrix.
    """

    def __init__(self, rng: np.random.Generator, d_self: int, d_out: int,
                 nbr_dims: dict[str, int], activation: str = "relu"):
        self.d_self, self.d_out = d_self, d_out
        self.nbr_dims = dict(nbr_dims)
        self.activation = activation
        self.params: dict[str, np.ndarray] = {
            "W_self": glorot_uniform(rng, d_self, d_out),
            "b": np.zeros(d_out),
        }
        for kind, d_in in self.nbr_dims.items():
            self.params[f"W.{kind}"] = glorot_uniform(rng, d_in, d_out)
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _activate(self, pre: np.ndarray):
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        return pre

    def _activate_back(self, pre: np.ndarray, d_out: np.ndarray):
        if self.activation == "relu":
            return d_out * (pre > 0)
        return d_out


class GcnLayer(_GraphLayer):
    """h'_v = act(W_self h_v + sum_k W_k mean_{u in N_k(v)} h_u + b).

    A kind with no in-edges at v contributes zero.
    """

    def forward(self, h_self: np.ndarray, nbrs: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]):
        n = h_self.shape[0]
        pre = h_self @ self.params["W_self"] + self.params["b"]
        cache = {"h_self": h_self, "nbrs": nbrs, "means": {}}
        for kind, (h_src, src, dst) in nbrs.items():
            msum = np.zeros((n, self.nbr_dims[kind]))
            if len(src):
                np.add.at(msum, dst, h_src[src])
            indeg = np.zeros(n)
            if len(dst):
                np.add.at(indeg, dst, 1.0)
            denom = np.maximum(indeg, 1.0)[:, None]
            mean = msum / denom
            cache["means"][kind] = (mean, denom)
            pre += mean @ self.params[f"W.{kind}"]
        cache["pre"] = pre
        out = check_finite("gcn layer output", self._activate(pre))
        return out, cache

    def backward(self, cache, d_out: np.ndarray):
        d_pre = self._activate_back(cache["pre"], d_out)
        self.grads["W_self"] += cache["h_self"].T @ d_pre
        self.grads["b"] += d_pre.sum(axis=0)
        d_h_self = d_pre @ self.params["W_self"].T
        d_src_feats: dict[str, np.ndarray] = {}
        for kind, (h_src, src, dst) in cache["nbrs"].items():
            mean, denom = cache["means"][kind]
            W = self.params[f"W.{kind}"]
            self.grads[f"W.{kind}"] += mean.T @ d_pre
            d_mean = d_pre @ W.T
            d_msum = d_mean / denom
            dh = np.zeros_like(h_src)
            if len(src):
                np.add.at(dh, src, d_msum[dst])
            d_src_feats[kind] = dh
        return d_h_self, d_src_feats


class GatLayer(_GraphLayer):
    """Single-head attention per edge kind.

    Logit for edge u->v of kind k: leaky_relu(a_src_k . (W_k h_u)
    + a_dst_k . (W_self h_v)); softmax over v's in-neighbors of kind k,
    weighted sum of W_k h_u, then self term, bias, activation.
    """

    NEG_SLOPE = 0.2

    def __init__(self, rng, d_self, d_out, nbr_dims, activation="relu"):
        super().__init__(rng, d_self, d_out, nbr_dims, activation)
        for kind in self.nbr_dims:
            self.params[f"a_src.{kind}"] = rng.uniform(-0.1, 0.1, size=d_out)
            self.params[f"a_dst.{kind}"] = rng.uniform(-0.1, 0.1, size=d_out)

    def forward(self, h_self: np.ndarray, nbrs: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]):
        n = h_self.shape[0]
        sp = h_self @ self.params["W_self"]
        pre = sp + self.params["b"]
        cache = {"h_self": h_self, "sp": sp, "nbrs": nbrs, "kinds": {}}
        for kind, (h_src, src, dst) in nbrs.items():
            G = h_src @ self.params[f"W.{kind}"]
            alpha = logit_pre = None
            if len(src):
                s_src = G @ self.params[f"a_src.{kind}"]
                s_dst = sp @ self.params[f"a_dst.{kind}"]
                logit_pre = s_src[src] + s_dst[dst]
                logits = np.where(logit_pre > 0, logit_pre, self.NEG_SLOPE * logit_pre)
                alpha = _segment_softmax(logits, dst, n)
                np.add.at(pre, dst, alpha[:, None] * G[src])
            cache["kinds"][kind] = (G, alpha, logit_pre)
        cache["pre"] = pre
        out = check_finite("gat layer output", self._activate(pre))
        return out, cache

    def backward(self, cache, d_out: np.ndarray):
        h_self, sp = cache["h_self"], cache["sp"]
        n = h_self.shape[0]
        d_pre = self._activate_back(cache["pre"], d_out)
        self.grads["b"] += d_pre.sum(axis=0)
        d_sp = d_pre.copy()
        d_src_feats: dict[str, np.ndarray] = {}
        for kind, (h_src, src, dst) in cache["nbrs"].items():
            G, alpha, logit_pre = cache["kinds"][kind]
            dG = np.zeros_like(G)
            if len(src):
                a_src = self.params[f"a_src.{kind}"]
                a_dst = self.params[f"a_dst.{kind}"]
                # message = sum_e alpha_e G[src_e] into pre[dst_e]
                d_alpha = np.einsum("ij,ij->i", d_pre[dst], G[src])
                np.add.at(dG, src, alpha[:, None] * d_pre[dst])
                # softmax backward per destination segment
                seg = np.zeros(n)
                np.add.at(seg, dst, alpha * d_alpha)
                d_logits = alpha * (d_alpha - seg[dst])
                d_logit_pre = d_logits * np.where(logit_pre > 0, 1.0, self.NEG_SLOPE)
                # logit_pre = (G @ a_src)[src] + (sp @ a_dst)[dst]
                d_s_src = np.zeros(len(G))
                np.add.at(d_s_src, src, d_logit_pre)
                d_s_dst = np.zeros(n)
                np.add.at(d_s_dst, dst, d_logit_pre)
                dG += d_s_src[:, None] * a_src
                self.grads[f"a_src.{kind}"] += G.T @ d_s_src
                d_sp += d_s_dst[:, None] * a_dst
                self.grads[f"a_dst.{kind}"] += sp.T @ d_s_dst
            self.grads[f"W.{kind}"] += h_src.T @ dG
            d_src_feats[kind] = dG @ self.params[f"W.{kind}"].T
        self.grads["W_self"] += h_self.T @ d_sp
        d_h_self = d_sp @ self.params["W_self"].T
        return d_h_self, d_src_feats


def _segment_softmax(logits: np.ndarray, seg: np.ndarray, n_segments: int) -> np.ndarray:
    m = np.full(n_segments, -np.inf)
    np.maximum.at(m, seg, logits)
    ex = np.exp(logits - m[seg])
    z = np.zeros(n_segments)
    np.add.at(z, seg, ex)
    return ex / z[seg]


# ---------------------------------------------------------------------------
# MLP head

class Mlp:
    """Affine/ReLU stack; the last affine maps to dims[-1] with no activation."""

    def __init__(self, rng: np.random.Generator, dims: list[int]):
        if len(dims) < 2:
            raise NnError("mlp needs at least input and output dims")
        self.dims = list(dims)
        self.params: dict[str, np.ndarray] = {}
        for i in range(len(dims) - 1):
            self.params[f"W{i}"] = glorot_uniform(rng, dims[i], dims[i + 1])
            self.params[f"b{i}"] = np.zeros(dims[i + 1])
        self.grads: dict[str, np.ndarray] = {}

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray):
        acts = [x]
        pres = []
        h = x
        for i in range(self.n_layers):
            pre = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            pres.append(pre)
            h = np.maximum(pre, 0.0) if i < self.n_layers - 1 else pre
            acts.append(h)
        return check_finite("mlp output", h), (acts, pres)

    def backward(self, cache, d_out: np.ndarray) -> np.ndarray:
        acts, pres = cache
        d = d_out
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                d = d * (pres[i] > 0)
            self.grads[f"W{i}"] += acts[i].T @ d
            self.grads[f"b{i}"] += d.sum(axis=0)
            d = d @ self.params[f"W{i}"].T
        return d


# ---------------------------------------------------------------------------
# loss and optimizer

def bce_loss(logits: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0):
    """Mean weighted binary cross-entropy on logits; stable for large |z|.

    Returns (loss, d_loss/d_logits).
    """
    z = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(z) == 0:
        raise NnError("bce_loss on empty input")
    if len(z) != len(y):
        raise NnError("logits/labels length mismatch")
    terms = pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)
    loss = float(terms.mean())
    s = sigmoid(z)
    d = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / len(z)
    return loss, d


class Adam:
    """Standard bias-corrected Adam over a flat {name: array} parameter dict."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# gradient verification

def grad_check(loss_fn: Callable[[], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], step: float = 1e-6,
               rng: Optional[np.random.Generator] = None,
               n_probe: int = 12) -> float:
    """Max relative error of analytic vs central-difference gradients.

    `loss_fn` recomputes (loss, grads) from the current parameter values.
    Probes a random subset of coordinates per parameter to stay fast.
    """
    rng = rng or np.random.default_rng(0)
    _, grads = loss_fn()
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g_flat = grads[name].reshape(-1)
        idxs = range(len(flat)) if len(flat) <= n_probe else rng.choice(len(flat), n_probe, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = loss_fn()
            flat[i] = orig - step
            lm, _ = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            denom = max(abs(fd), abs(g_flat[i]), 1e-8)
            worst = max(worst, abs(fd - g_flat[i]) / denom)
    return worst
