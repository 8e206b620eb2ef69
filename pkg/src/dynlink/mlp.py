"""Numpy multi-layer perceptron for pair classification.

Hidden blocks are ``affine -> batch norm -> PReLU -> dropout``; the head is
``affine -> [ReLU] -> sigmoid``. Hidden affines carry no bias because the
batch-norm shift takes that role.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"MLPC"
FORMAT_VERSION = 1
EPS = 1e-7


@dataclass(frozen=True)
class FitConfig:
    hidden: tuple[int, ...] = (256, 64)
    dropout: float = 0.3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.5
    patience_lr: int = 5
    patience_stop: int = 15
    batch_size: int = 256
    max_epochs: int = 200
    head_relu: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-7
    prelu_init: float = 0.25
    seed: int = 0


class MlpModel:
    def __init__(self, input_dim: int, hidden=(256, 64), dropout: float = 0.3, head_relu: bool = False,
                 seed: int = 0, bn_momentum: float = 0.1, bn_eps: float = 1e-7, prelu_init: float = 0.25):
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.head_relu = bool(head_relu)
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.training = False
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng([seed, 1])
        fan_in = self.input_dim
        for i, width in enumerate(self.hidden):
            self.params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
            self.params[f"gamma{i}"] = np.ones(width)
            self.params[f"beta{i}"] = np.zeros(width)
            self.params[f"alpha{i}"] = np.array([prelu_init])
            self.buffers[f"mean{i}"] = np.zeros(width)
            self.buffers[f"var{i}"] = np.ones(width)
            fan_in = width
        self.params["W_head"] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, 1))
        self.params["b_head"] = np.zeros(1)

    def train(self) -> "MlpModel":
        self.training = True
        return self

    def eval(self) -> "MlpModel":
        self.training = False
        return self

    def state_copy(self):
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.buffers.items()})

    def load_state(self, state) -> None:
        params, buffers = state
        self.params = {k: v.copy() for k, v in params.items()}
        self.buffers = {k: v.copy() for k, v in buffers.items()}

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected batch of width {self.input_dim}, got shape {X.shape}")
        return X

    def forward(self, X, cache: bool = False):
        """Probabilities for a batch; with ``cache=True`` also returns the backward cache."""
        X = self._check(X)
        if self.training and X.shape[0] < 2:
            raise ValueError("batch norm needs at least 2 samples in train mode")
        caches = []
        h = X
        for i in range(len(self.hidden)):
            z = h @ self.params[f"W{i}"]
            if self.training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                n = z.shape[0]
                m = self.bn_momentum
                self.buffers[f"mean{i}"] = (1 - m) * self.buffers[f"mean{i}"] + m * mu
                self.buffers[f"var{i}"] = (1 - m) * self.buffers[f"var{i}"] + m * var * n / (n - 1)
            else:
                mu = self.buffers[f"mean{i}"]
                var = self.buffers[f"var{i}"]
            inv_std = 1.0 / np.sqrt(var + self.bn_eps)
            xhat = (z - mu) * inv_std
            y = self.params[f"gamma{i}"] * xhat + self.params[f"beta{i}"]
            alpha = self.params[f"alpha{i}"][0]
            a = np.where(y > 0, y, alpha * y)
            mask = None
            if self.training and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (self._dropout_rng.random(a.shape) < keep) / keep
                a = a * mask
            caches.append((h, xhat, inv_std, y, mask))
            h = a
        logit = h @ self.params["W_head"] + self.params["b_head"]
        pre = np.maximum(logit, 0.0) if self.head_relu else logit
        prob = 0.5 * (1.0 + np.tanh(0.5 * pre[:, 0]))
        if cache:
            return prob, (caches, h, logit)
        return prob

    def backward(self, prob, y, cache) -> dict[str, np.ndarray]:
        """Gradients of the mean BCE loss (clamped probabilities) w.r.t. every parameter."""
        caches, h_last, logit = cache
        y = np.asarray(y, dtype=np.float64)
        n = y.shape[0]
        # dL/dpre for sigmoid + BCE, zeroed where the clamp is active.
        dpre = (prob - y) / n
        dpre = np.where((prob > EPS) & (prob < 1 - EPS), dpre, 0.0)
        dlogit = dpre[:, None]
        if self.head_relu:
            dlogit = dlogit * (logit > 0)
        grads = {
            "W_head": h_last.T @ dlogit,
            "b_head": dlogit.sum(axis=0),
        }
        dh = dlogit @ self.params["W_head"].T
        for i in reversed(range(len(self.hidden))):
            h_in, xhat, inv_std, yv, mask = caches[i]
            if mask is not None:
                dh = dh * mask
            alpha = self.params[f"alpha{i}"][0]
            grads[f"alpha{i}"] = np.array([np.sum(dh * np.where(yv > 0, 0.0, yv))])
            dy = dh * np.where(yv > 0, 1.0, alpha)
            grads[f"gamma{i}"] = np.sum(dy * xhat, axis=0)
            grads[f"beta{i}"] = dy.sum(axis=0)
            dxhat = dy * self.params[f"gamma{i}"]
            if self.training:
                m = dxhat.shape[0]
                dz = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
            else:
                dz = dxhat * inv_std
            grads[f"W{i}"] = h_in.T @ dz
            dh = dz @ self.params[f"W{i}"].T
        return grads


def bce_loss(y_hat, y) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    p = np.clip(y_hat, EPS, 1 - EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def forward(model: MlpModel, X):
    return model.forward(X)


def predict_proba(model: MlpModel, X, batch_size: int = 4096) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        X = model._check(X)
        out = [model.forward(X[i:i + batch_size]) for i in range(0, X.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0)
    finally:
        model.training = was_training


@dataclass
class TrainState:
    lr: float
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    best_val: float = float("inf")
    best_epoch: int = 0
    since_best: int = 0
    since_lr_event: int = 0
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def _adam(model: MlpModel, grads, state: TrainState, cfg: FitConfig) -> None:
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** state.step)
        vhat = v / (1 - b2 ** state.step)
        model.params[name] -= state.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def fit(model: MlpModel, train, val, cfg: FitConfig = FitConfig(), state: TrainState | None = None):
    """Mini-batch Adam with plateau LR decay and early stopping on validation loss.

    ``train`` and ``val`` are ``(X, y)`` pairs. Returns ``(model, history)``
    with the model holding the weights of the best validation epoch.
    """
    X, y = np.asarray(train[0], dtype=np.float64), np.asarray(train[1], dtype=np.float64)
    Xv, yv = np.asarray(val[0], dtype=np.float64), np.asarray(val[1], dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if state is None:
        state = TrainState(lr=cfg.learning_rate, seed=cfg.seed)
    rng = np.random.default_rng(state.seed)
    history: list[EpochRecord] = []
    best = model.state_copy()
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(X.shape[0])
        losses, sizes = [], []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            prob, cache = model.forward(X[idx], cache=True)
            grads = model.backward(prob, y[idx], cache)
            _adam(model, grads, state, cfg)
            losses.append(bce_loss(prob, y[idx]))
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes)) if losses else float("nan")
        val_loss = bce_loss(predict_proba(model, Xv), yv) if Xv.shape[0] else train_loss
        history.append(EpochRecord(epoch, train_loss, val_loss, state.lr))
        if val_loss < state.best_val:
            state.best_val = val_loss
            state.best_epoch = epoch
            state.since_best = 0
            state.since_lr_event = 0
            best = model.state_copy()
        else:
            state.since_best += 1
            state.since_lr_event += 1
            if state.since_lr_event >= cfg.patience_lr:
                state.lr *= cfg.lr_decay
                state.since_lr_event = 0
            if state.since_best >= cfg.patience_stop:
                logger.info("early stop at epoch %d (best %d)", epoch, state.best_epoch)
                break
    model.load_state(best)
    model.eval()
    return model, history


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


def save_model(model: MlpModel, path) -> None:
    meta = json.dumps({
        "input_dim": model.input_dim, "hidden": list(model.hidden), "dropout": model.dropout,
        "head_relu": model.head_relu, "bn_momentum": model.bn_momentum, "bn_eps": model.bn_eps,
    }, sort_keys=True).encode()
    arrays = {**{f"p:{k}": v for k, v in model.params.items()},
              **{f"b:{k}": v for k, v in model.buffers.items()}}
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MAGIC, FORMAT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_model(path) -> MlpModel:
    data = Path(path).read_bytes()
    magic, version, meta_len = struct.unpack_from("<4sII", data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a classifier checkpoint")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(data[off:off + meta_len])
    off += meta_len
    model = MlpModel(meta["input_dim"], meta["hidden"], meta["dropout"], meta["head_relu"],
                     bn_momentum=meta["bn_momentum"], bn_eps=meta["bn_eps"])
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, "<f8", size, off).reshape(shape).copy()
        off += 8 * size
        kind, key = name.split(":", 1)
        (model.params if kind == "p" else model.buffers)[key] = arr
    model.eval()
    return model


def config_dict(cfg: FitConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
