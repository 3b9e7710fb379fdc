"""Two-stage lambda model over DDS graphs.

Stage 1 is every message-passing layer except the last, run over the
shadow-order / entity-snapshot subgraph (entities start from all-zero
features, shadow orders from their order's raw features).  Stage 2 is the
final aggregation layer, which reads *only* the entity -> effective-order
edges, plus an MLP head on concat(order features, aggregated entity
state).  Because the cut sits exactly at the effective entities, stage-1
outputs can be precomputed into a key-value store and stage 2 re-run at
checkout time from 1-hop lookups with bit-identical scores.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .dds import (DdsGraph, EFFECTIVE_TO_ORDER, ENTITY_TO_ENTITY,
                  ENTITY_TO_SHADOW, SHADOW_TO_ENTITY)
from .graph import StaticGraph
from .metrics import Split, average_precision
from .records import EntityKey, EntityType

_MAGIC = b"DDSM"
_FORMAT_VERSION = 1

_STAGE1_KINDS = (SHADOW_TO_ENTITY, ENTITY_TO_SHADOW, ENTITY_TO_ENTITY)
_EFF = "eff"


class LnnError(ValueError):
    pass


@dataclass(frozen=True)
class LnnConfig:
    feature_dim: int
    hidden_dim: int = 64
    n_layers: int = 2            # total aggregation layers; stage 1 gets n_layers - 1
    layer_kind: str = "gcn"      # "gcn" | "gat"
    mlp_hidden: tuple[int, ...] = (32,)
    history_window: Optional[int] = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 2:
            raise LnnError("need at least 2 layers (one per stage)")
        if self.layer_kind not in ("gcn", "gat"):
            raise LnnError(f"unknown layer kind {self.layer_kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    patience: int = 5
    lr: float = 0.01
    seed: int = 0
    batch_seed: int = 0
    pos_weight: Optional[float] = None   # None -> n_neg / n_pos on the training split

    def __post_init__(self):
        if self.patience < 1:
            raise LnnError("patience must be >= 1")


@dataclass
class EntityEmbedding:
    key: EntityKey
    vector: np.ndarray
    snapshot: int
    model_version: str


class LnnModel:
    def __init__(self, cfg: LnnConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        layer_cls = nn.GcnLayer if cfg.layer_kind == "gcn" else nn.GatLayer
        f, h = cfg.feature_dim, cfg.hidden_dim
        self.stage1_layers = []
        d_in = f
        for _ in range(cfg.n_layers - 1):
            kinds = {k: d_in for k in _STAGE1_KINDS}
            self.stage1_layers.append(layer_cls(rng, d_in, h, kinds))
            d_in = h
        self.stage2_layer = layer_cls(rng, f, h, {_EFF: h})
        self.head = nn.Mlp(rng, [f + h, *cfg.mlp_hidden, 1])

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.stage1_layers):
            for k, v in layer.params.items():
                out[f"s1.{i}.{k}"] = v
        for k, v in self.stage2_layer.params.items():
            out[f"s2.{k}"] = v
        for k, v in self.head.params.items():
            out[f"head.{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.stage1_layers):
            for k, v in layer.grads.items():
                out[f"s1.{i}.{k}"] = v
        for k, v in self.stage2_layer.grads.items():
            out[f"s2.{k}"] = v
        for k, v in self.head.grads.items():
            out[f"head.{k}"] = v
        return out

    def zero_grads(self):
        for layer in self.stage1_layers:
            layer.zero_grads()
        self.stage2_layer.zero_grads()
        self.head.zero_grads()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        if set(params) != set(state):
            raise LnnError("checkpoint parameter names do not match model")
        for k, v in params.items():
            v[...] = state[k]

    def version(self) -> str:
        """Checksum binding a store/score to the exact producing weights."""
        h = hashlib.sha256(json.dumps(asdict(self.cfg), sort_keys=True).encode())
        for name in sorted(self.params()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params()[name]).tobytes())
        return h.hexdigest()[:16]

    # -- forward passes -----------------------------------------------------

    def _stage1_inputs(self, dds: DdsGraph, entity_init: float = 0.0) -> np.ndarray:
        m, k = dds.n_orders, dds.n_entity_snapshots
        h0 = np.full((m + k, self.cfg.feature_dim), 0.0)
        if m:
            h0[:m] = dds.features
        if k and entity_init != 0.0:
            h0[m:] = entity_init
        return h0

    @staticmethod
    def _stage1_edges(dds: DdsGraph) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Edges in the unified stage-1 node space: shadows then entity snapshots."""
        m = dds.n_orders
        s2e_s, s2e_d = dds.edges[SHADOW_TO_ENTITY]
        e2s_s, e2s_d = dds.edges[ENTITY_TO_SHADOW]
        e2e_s, e2e_d = dds.edges[ENTITY_TO_ENTITY]
        return {
            SHADOW_TO_ENTITY: (s2e_s, s2e_d + m),
            ENTITY_TO_SHADOW: (e2s_s + m, e2s_d),
            ENTITY_TO_ENTITY: (e2e_s + m, e2e_d + m),
        }

    def stage1_forward(self, dds: DdsGraph, entity_init: float = 0.0):
        h = self._stage1_inputs(dds, entity_init)
        edges = self._stage1_edges(dds)
        caches = []
        for layer in self.stage1_layers:
            nbrs = {k: (h, s, d) for k, (s, d) in edges.items()}
            h, cache = layer.forward(h, nbrs)
            caches.append(cache)
        return h, caches

    def stage2_forward(self, dds: DdsGraph, h_entities: np.ndarray):
        src, dst = dds.edges[EFFECTIVE_TO_ORDER]
        out2, cache2 = self.stage2_layer.forward(dds.features, {_EFF: (h_entities, src, dst)})
        head_in = np.concatenate([dds.features, out2], axis=1)
        logits, cache_h = self.head.forward(head_in)
        return logits[:, 0], (cache2, cache_h, out2)

    def forward_full(self, dds: DdsGraph, order_ids: Optional[Sequence[int]] = None,
                     entity_init: float = 0.0) -> np.ndarray:
        """Monolithic scores in [0,1] for the given local orders (default all)."""
        h1, _ = self.stage1_forward(dds, entity_init)
        h_ent = h1[dds.n_orders:]
        logits, _ = self.stage2_forward(dds, h_ent)
        scores = nn.sigmoid(logits)
        if order_ids is not None:
            scores = scores[np.asarray(order_ids, dtype=np.int64)]
        return scores

    # -- training -----------------------------------------------------------

    def loss_and_backward(self, dds: DdsGraph, mask: np.ndarray, pos_weight: float) -> float:
        """Forward, masked BCE, full backward pass.  Gradients accumulate
        into the layers (call zero_grads first)."""
        h1, caches1 = self.stage1_forward(dds)
        m = dds.n_orders
        h_ent = h1[m:]
        logits, (cache2, cache_h, _) = self.stage2_forward(dds, h_ent)
        if not mask.any():
            raise LnnError("no labeled orders in training mask")
        labels = dds.labels[mask].astype(np.float64)
        loss, d_masked = nn.bce_loss(logits[mask], labels, pos_weight)

        d_logits = np.zeros_like(logits)
        d_logits[mask] = d_masked
        d_head_in = self.head.backward(cache_h, d_logits[:, None])
        f = self.cfg.feature_dim
        d_out2 = d_head_in[:, f:]
        _, d_src2 = self.stage2_layer.backward(cache2, d_out2)
        d_h = np.zeros_like(h1)
        d_h[m:] = d_src2[_EFF]
        for layer, cache in zip(reversed(self.stage1_layers), reversed(caches1)):
            d_self, d_src = layer.backward(cache, d_h)
            d_h = d_self
            for dk in d_src.values():
                d_h = d_h + dk
        return loss

    # -- lambda stage separation --------------------------------------------

    def infer_entity_embeddings(self, dds: DdsGraph, g: StaticGraph,
                                as_of: Optional[int] = None) -> list[EntityEmbedding]:
        """Stage-1 only: one embedding per entity, taken at its latest active
        snapshot <= as_of (default: latest overall).  Entities with no
        activity in range are absent."""
        h1, _ = self.stage1_forward(dds)
        h_ent = h1[dds.n_orders:]
        version = self.version()
        out = []
        for e, active in dds.entity_active.items():
            usable = [t for t in active if as_of is None or t <= as_of]
            if not usable:
                continue
            t = usable[-1]
            es = dds.entity_snap_id[(e, t)]
            out.append(EntityEmbedding(
                key=g.entity_keys[e], vector=h_ent[es].copy(),
                snapshot=t, model_version=version,
            ))
        return out

    def score_with_store(self, features: np.ndarray,
                         lookups: dict[EntityType, Optional[EntityEmbedding]]) -> float:
        """Stage-2 + head from precomputed entity embeddings only.

        Missing kinds are absent neighbors; with no lookups at all the
        order takes the cold path (zero aggregate).  A stale embedding
        (model_version mismatch) is an error, never a wrong score.
        """
        version = self.version()
        vectors = []
        for etype in sorted(lookups, key=lambda e: e.value):
            emb = lookups[etype]
            if emb is None:
                continue
            if emb.model_version != version:
                raise LnnError(
                    f"stale embedding for {etype.value}: store version "
                    f"{emb.model_version} != model {version}")
            vectors.append(np.asarray(emb.vector, dtype=np.float64))
        features = np.asarray(features, dtype=np.float64).reshape(1, -1)
        if features.shape[1] != self.cfg.feature_dim:
            raise LnnError("feature dim mismatch")
        if vectors:
            h_src = np.stack(vectors)
            src = np.arange(len(vectors), dtype=np.int64)
            dst = np.zeros(len(vectors), dtype=np.int64)
        else:
            h_src = np.zeros((0, self.cfg.hidden_dim))
            src = dst = np.zeros(0, dtype=np.int64)
        out2, _ = self.stage2_layer.forward(features, {_EFF: (h_src, src, dst)})
        head_in = np.concatenate([features, out2], axis=1)
        logits, _ = self.head.forward(head_in)
        return float(nn.sigmoid(logits)[0, 0])


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ap: float = float("nan")
    pos_weight: float = 1.0


def _split_mask(dds: DdsGraph, snapshots: frozenset[int]) -> np.ndarray:
    in_split = np.isin(dds.order_t, sorted(snapshots))
    return (dds.labels >= 0) & in_split


def evaluate(model: LnnModel, dds_list: Sequence[DdsGraph], snapshots: frozenset[int]):
    """Scores and labels for labeled orders in the given snapshots, across
    all partitions, in (partition, local order) order."""
    scores, labels = [], []
    for dds in dds_list:
        if dds.n_orders == 0:
            continue
        mask = _split_mask(dds, snapshots)
        if not mask.any():
            continue
        s = model.forward_full(dds)
        scores.append(s[mask])
        labels.append(dds.labels[mask])
    if not scores:
        return np.zeros(0), np.zeros(0, dtype=np.int8)
    return np.concatenate(scores), np.concatenate(labels)


def train(model: LnnModel, dds_list: Sequence[DdsGraph], split: Split,
          cfg: TrainConfig) -> TrainResult:
    """End-to-end training over community batches with early stopping on
    validation average precision; the best-validation weights win."""
    n_pos = n_neg = 0
    for dds in dds_list:
        mask = _split_mask(dds, split.train_snapshots)
        n_pos += int((dds.labels[mask] == 1).sum())
        n_neg += int((dds.labels[mask] == 0).sum())
    if n_pos == 0:
        raise LnnError("no positive labels in training split")
    pos_weight = cfg.pos_weight if cfg.pos_weight is not None else n_neg / n_pos

    opt = nn.Adam(lr=cfg.lr)
    result = TrainResult(pos_weight=pos_weight)
    best_state = model.state_dict()
    best_ap = -1.0
    stale = 0
    rng = np.random.default_rng(cfg.batch_seed)
    trainable = [dds for dds in dds_list
                 if _split_mask(dds, split.train_snapshots).any()]
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(trainable))
        epoch_loss = 0.0
        for bi in order:
            dds = trainable[bi]
            mask = _split_mask(dds, split.train_snapshots)
            model.zero_grads()
            epoch_loss += model.loss_and_backward(dds, mask, pos_weight)
            opt.step(model.params(), model.grads())
        val_scores, val_labels = evaluate(model, dds_list, split.val_snapshots)
        val_ap = average_precision(val_scores, val_labels) if (val_labels == 1).any() else 0.0
        result.history.append({"epoch": epoch, "train_loss": epoch_loss / max(len(trainable), 1),
                               "val_ap": val_ap})
        if val_ap > best_ap:
            best_ap = val_ap
            best_state = model.state_dict()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state(best_state)
    result.best_val_ap = best_ap
    return result


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: LnnModel, path: str | Path) -> None:
    cfg_json = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        params = model.params()
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            nb = name.encode()
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for s in arr.shape:
                fh.write(struct.pack("<Q", s))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> LnnModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise LnnError("bad checkpoint magic")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise LnnError(f"unsupported checkpoint format version {version}")
        (n_cfg,) = struct.unpack("<I", fh.read(4))
        cfg_dict = json.loads(fh.read(n_cfg))
        cfg_dict["mlp_hidden"] = tuple(cfg_dict["mlp_hidden"])
        cfg = LnnConfig(**cfg_dict)
        model = LnnModel(cfg)
        (n_params,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(n_params):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n_el = int(np.prod(shape)) if shape else 1
            state[name] = np.frombuffer(fh.read(8 * n_el), dtype="<f8").reshape(shape).copy()
        model.load_state(state)
    return model
