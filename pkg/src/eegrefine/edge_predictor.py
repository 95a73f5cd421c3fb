"""Learned edge predictor: patch-Transformer node embeddings, a two-layer MLP
scoring concatenated pairs, and a strict threshold to the initial graph."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import encoder as enc
from .exceptions import DataError, NotFittedError
from .graph import Graph, ProbGraph, threshold_edges
from .validation import check_unit_interval, check_windows

log = logging.getLogger(__name__)

_P_CLIP = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class MlpHead:
    w1: np.ndarray  # [hidden, 2d]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [hidden]
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = float(self.b2)
        hidden, two_d = self.w1.shape
        if two_d % 2 or self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ValueError("inconsistent MLP head shapes")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2)) or not np.isfinite(self.b2):
            raise ValueError("non-finite MLP head parameters")

    @property
    def embedding_dim(self) -> int:
        return self.w1.shape[1] // 2

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "MlpHead":
        b_in = 1.0 / np.sqrt(2 * d)
        b_hid = 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-b_in, b_in, (hidden, 2 * d)),
            rng.uniform(-b_in, b_in, hidden),
            rng.uniform(-b_hid, b_hid, hidden),
            float(rng.uniform(-b_hid, b_hid)),
        )

    @classmethod
    def zeros(cls, d: int, hidden: int) -> "MlpHead":
        return cls(np.zeros((hidden, 2 * d)), np.zeros(hidden), np.zeros(hidden), 0.0)

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Pre-sigmoid scores for concatenated pairs ``z`` of shape [..., 2d]."""
        return np.maximum(z @ self.w1.T + self.b1, 0.0) @ self.w2 + self.b2

    def to_dict(self) -> dict:
        return {"w1": self.w1.ravel().tolist(), "w1_shape": list(self.w1.shape),
                "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpHead":
        return cls(np.reshape(d["w1"], d["w1_shape"]), d["b1"], d["w2"], d["b2"])


def predict_edge_prob(h_i, h_j, head: MlpHead, symmetric: bool = True) -> float:
    """sigmoid(w2 . relu(w1 [h_i; h_j] + b1) + b2), averaged over both
    orientations unless ``symmetric`` is False."""
    h_i = np.asarray(h_i, dtype=float)
    h_j = np.asarray(h_j, dtype=float)
    d = head.embedding_dim
    if h_i.shape != (d,) or h_j.shape != (d,):
        raise ValueError(f"embeddings must have length {d}, got {h_i.shape} and {h_j.shape}")
    forward_p = float(sigmoid(head.logits(np.concatenate([h_i, h_j]))))
    if not symmetric:
        return forward_p
    backward_p = float(sigmoid(head.logits(np.concatenate([h_j, h_i]))))
    return 0.5 * (forward_p + backward_p)


def _pair_index(n: int):
    iu, ju = np.triu_indices(n, 1)
    return iu, ju


def pair_probabilities(emb: np.ndarray, head: MlpHead) -> np.ndarray:
    """Symmetric [W, n, n] probability matrices from [W, n, d] embeddings."""
    emb = np.asarray(emb, dtype=float)
    if emb.ndim == 2:
        emb = emb[None]
    W, n, d = emb.shape
    iu, ju = _pair_index(n)
    z_ij = np.concatenate([emb[:, iu], emb[:, ju]], axis=-1)
    z_ji = np.concatenate([emb[:, ju], emb[:, iu]], axis=-1)
    p = 0.5 * (sigmoid(head.logits(z_ij)) + sigmoid(head.logits(z_ji)))
    out = np.zeros((W, n, n))
    out[:, iu, ju] = p
    out[:, ju, iu] = p
    return out


def pair_loss_and_grads(emb: np.ndarray, targets: np.ndarray, head: MlpHead):
    """Mean BCE over all unordered pairs of all windows.

    ``emb`` is [W, n, d], ``targets`` is [W, n, n] in {0, 1}. Returns the
    loss, head gradients keyed like the ``MlpHead`` fields and dL/d(emb).
    """
    W, n, d = emb.shape
    iu, ju = _pair_index(n)
    y = targets[:, iu, ju]
    m = y.size
    grads_w1 = np.zeros_like(head.w1)
    grads_b1 = np.zeros_like(head.b1)
    grads_w2 = np.zeros_like(head.w2)
    grads_b2 = 0.0
    d_emb = np.zeros_like(emb)

    parts = []
    for first, second in ((iu, ju), (ju, iu)):
        z = np.concatenate([emb[:, first], emb[:, second]], axis=-1)
        pre = z @ head.w1.T + head.b1
        act = np.maximum(pre, 0.0)
        s = act @ head.w2 + head.b2
        parts.append((first, second, z, pre, act, sigmoid(s)))
    p = 0.5 * (parts[0][5] + parts[1][5])
    pc = np.clip(p, _P_CLIP, 1 - _P_CLIP)
    loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))
    dp = (pc - y) / (pc * (1 - pc)) / m
    dp = np.where((p > _P_CLIP) & (p < 1 - _P_CLIP), dp, 0.0)

    for first, second, z, pre, act, sig in parts:
        ds = 0.5 * dp * sig * (1 - sig)
        grads_b2 += float(ds.sum())
        grads_w2 += (act * ds[..., None]).reshape(-1, act.shape[-1]).sum(0)
        dpre = ds[..., None] * head.w2 * (pre > 0)
        grads_b1 += dpre.reshape(-1, dpre.shape[-1]).sum(0)
        grads_w1 += dpre.reshape(-1, dpre.shape[-1]).T @ z.reshape(-1, z.shape[-1])
        dz = dpre @ head.w1
        for w in range(W):
            np.add.at(d_emb[w], first, dz[w, :, :d])
            np.add.at(d_emb[w], second, dz[w, :, d:])
    head_grads = {"w1": grads_w1, "b1": grads_b1, "w2": grads_w2, "b2": grads_b2}
    return loss, head_grads, d_emb


def _as_targets(labels, n: int) -> np.ndarray:
    out = []
    for g in labels:
        a = g.binarize() if isinstance(g, Graph) else (np.asarray(g) > 0)
        a = np.asarray(a, dtype=float)
        if a.shape != (n, n):
            raise DataError(f"supervision graph shape {a.shape} != ({n}, {n})")
        out.append(a)
    return np.stack(out)


class TransformerEdgePredictor(BaseEstimator):
    """Stage-one graph builder.

    ``fit(windows, graphs)`` trains encoder and head by mini-batch gradient
    descent on the mean binary cross-entropy against supervision graphs;
    ``predict_proba`` returns one :class:`ProbGraph` per window and
    ``predict`` thresholds them with ``threshold`` (strict inequality).

    Inputs are divided by a global amplitude scale learned in ``fit``.
    """

    def __init__(
        self,
        patch_len=25,
        d_model=32,
        n_heads=4,
        n_layers=1,
        feedforward_dim=64,
        hidden_dim=32,
        threshold=0.5,
        learning_rate=0.05,
        momentum=0.9,
        n_epochs=40,
        batch_size=8,
        random_state=0,
        verbose=False,
    ):
        self.patch_len = patch_len
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.feedforward_dim = feedforward_dim
        self.hidden_dim = hidden_dim
        self.threshold = threshold
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.verbose = verbose

    @property
    def encoder_config(self) -> enc.EncoderConfig:
        return enc.EncoderConfig(
            self.patch_len, self.d_model, self.n_heads, self.n_layers,
            self.feedforward_dim, int(self.random_state),
        )

    def _check_fitted(self):
        if not hasattr(self, "head_"):
            raise NotFittedError("TransformerEdgePredictor is not fitted")

    def fit(self, windows, graphs):
        windows = check_windows(windows)
        targets = _as_targets(graphs, windows[0].n_channels)
        if len(targets) != len(windows):
            raise DataError(f"{len(targets)} supervision graphs for {len(windows)} windows")
        check_unit_interval(self.threshold)
        cfg = self.encoder_config
        rng = np.random.default_rng(self.random_state)
        params = enc.init_params(cfg, rng)
        head = MlpHead.init(cfg.d_model, self.hidden_dim, rng)
        data = np.stack([w.data for w in windows])
        scale = float(data.std())
        self.scale_ = scale if scale > 0 else 1.0

        vel = {k: np.zeros_like(v) for k, v in params.items()}
        hvel = [np.zeros_like(head.w1), np.zeros_like(head.b1), np.zeros_like(head.w2), 0.0]
        n_win, n_ch, _ = data.shape
        curve = []
        for epoch in range(self.n_epochs):
            order = rng.permutation(n_win)
            total = 0.0
            for start in range(0, n_win, self.batch_size):
                idx = np.sort(order[start:start + self.batch_size])
                x = data[idx].reshape(len(idx) * n_ch, -1) / self.scale_
                emb, cache = enc.forward(params, cfg, x, return_cache=True)
                loss, hg, d_emb = pair_loss_and_grads(
                    emb.reshape(len(idx), n_ch, -1), targets[idx], head
                )
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                grads = enc.backward(params, cfg, cache, d_emb.reshape(len(idx) * n_ch, -1))
                lr, mu = self.learning_rate, self.momentum
                for k in params:
                    vel[k] = mu * vel[k] - lr * grads[k]
                    params[k] = params[k] + vel[k]
                for k, key in enumerate(("w1", "b1", "w2", "b2")):
                    hvel[k] = mu * hvel[k] - lr * hg[key]
                head = MlpHead(head.w1 + hvel[0], head.b1 + hvel[1], head.w2 + hvel[2], head.b2 + hvel[3])
                total += loss * len(idx)
            curve.append(total / n_win)
            if self.verbose:
                log.info("epoch %d loss %.5f", epoch, curve[-1])
        self.encoder_params_ = params
        self.head_ = head
        self.loss_curve_ = curve
        self.n_channels_ = n_ch
        return self

    def embed(self, windows) -> np.ndarray:
        """[W, n_channels, d_model] node embeddings."""
        self._check_fitted()
        windows = check_windows(windows)
        cfg = self.encoder_config
        out = []
        for w in windows:
            out.append(enc.forward(self.encoder_params_, cfg, w.data / self.scale_))
        return np.stack(out)

    def predict_proba(self, windows) -> list[ProbGraph]:
        windows = check_windows(windows)
        probs = pair_probabilities(self.embed(windows), self.head_)
        return [ProbGraph(p, w.window_index, tuple(w.labels)) for p, w in zip(probs, windows)]

    def predict(self, windows) -> list[Graph]:
        return [threshold_edges(p, self.threshold) for p in self.predict_proba(windows)]

    def transform(self, windows) -> list[Graph]:
        return self.predict(windows)

    def to_dict(self) -> dict:
        """Checkpoint payload; encoder arrays are flattened row-major in
        ``param_names`` order."""
        self._check_fitted()
        cfg = self.encoder_config
        return {
            "format": "eegrefine.edge_predictor/1",
            "estimator_params": self.get_params(),
            "encoder_config": cfg.to_dict(),
            "seed": int(self.random_state),
            "scale": self.scale_,
            "n_channels": self.n_channels_,
            "param_order": enc.param_names(cfg),
            "encoder_params": {k: self.encoder_params_[k].ravel().tolist() for k in enc.param_names(cfg)},
            "head": self.head_.to_dict(),
            "loss_curve": list(self.loss_curve_),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerEdgePredictor":
        model = cls(**d["estimator_params"])
        cfg = model.encoder_config
        shapes = enc.param_shapes(cfg)
        model.encoder_params_ = {
            k: np.reshape(np.asarray(d["encoder_params"][k], dtype=float), shapes[k]) for k in enc.param_names(cfg)
        }
        model.head_ = MlpHead.from_dict(d["head"])
        model.scale_ = float(d["scale"])
        model.n_channels_ = int(d["n_channels"])
        model.loss_curve_ = list(d.get("loss_curve", []))
        return model

    @classmethod
    def load(cls, path) -> "TransformerEdgePredictor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_predictor(windows, labels, cfg: enc.EncoderConfig | None = None, **hyperparams):
    """Functional wrapper: returns ``(encoder_params, head, loss_curve)``."""
    cfg = cfg or enc.EncoderConfig()
    model = TransformerEdgePredictor(
        patch_len=cfg.patch_len, d_model=cfg.d_model, n_heads=cfg.n_heads,
        n_layers=cfg.n_layers, feedforward_dim=cfg.feedforward_dim,
        random_state=cfg.seed, **hyperparams,
    ).fit(windows, labels)
    return model.encoder_params_, model.head_, model.loss_curve_
