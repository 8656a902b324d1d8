"""Conv1D -> max-pool -> LSTM -> dense softmax classifier in plain numpy.

The encoded feature vector of a connection is read as a single-channel
sequence of length ``d``. Everything here works on batches with a leading
row axis; gradients are exact (BPTT through the LSTM, argmax routing through
the pooling layer).
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PROB_FLOOR = 1e-12
PARAM_NAMES = ("conv_w", "conv_b", "lstm_wx", "lstm_wh", "lstm_b", "dense_w", "dense_b")

CHECKPOINT_MAGIC = b"KDDNETCK"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class ColumnMismatchError(ValueError):
    """Model was trained on a different encoder column layout."""


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class HyperParams:
    conv_filters: int = 16
    conv_kernel: int = 3
    lstm_units: int = 32
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30

    def __post_init__(self):
        if not 4 <= self.conv_filters <= 128:
            raise ValueError(f"conv_filters {self.conv_filters} outside [4, 128]")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be a positive odd integer, got {self.conv_kernel}")
        if not 8 <= self.lstm_units <= 256:
            raise ValueError(f"lstm_units {self.lstm_units} outside [8, 256]")
        if not 1e-4 <= self.learning_rate <= 1e-1:
            raise ValueError(f"learning_rate {self.learning_rate} outside [1e-4, 1e-1]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        return cls(
            conv_filters=int(d.get("conv_filters", cls.conv_filters)),
            conv_kernel=int(d.get("conv_kernel", cls.conv_kernel)),
            lstm_units=int(d.get("lstm_units", cls.lstm_units)),
            learning_rate=float(d.get("learning_rate", cls.learning_rate)),
            batch_size=int(d.get("batch_size", cls.batch_size)),
            max_epochs=int(d.get("max_epochs", cls.max_epochs)),
        )


# --- layer primitives -------------------------------------------------------

def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def reshape_input(row, d: int | None = None) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeError(f"expected a 1-D feature vector, got shape {row.shape}")
    if d is not None and row.shape[0] != d:
        raise ShapeError(f"feature vector has length {row.shape[0]}, model expects {d}")
    return row.reshape(-1, 1)


def _windows(x: np.ndarray, kernel: int) -> np.ndarray:
    if x.shape[-1] != 1:
        raise ShapeError("conv1d expects single-channel sequences shaped (..., d, 1)")
    d = x.shape[-2]
    if kernel > d:
        raise ShapeError(f"kernel {kernel} longer than input length {d}")
    return sliding_window_view(x[..., 0], kernel, axis=-1)


def conv1d_forward(x, kernels, bias, activation: str | None = "relu") -> np.ndarray:
    """Valid 1-D convolution of a (..., d, 1) sequence; returns (..., d-k+1, filters)."""
    kernels = np.asarray(kernels, dtype=np.float64)
    z = _windows(np.asarray(x, dtype=np.float64), kernels.shape[1]) @ kernels.T + bias
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation is None:
        return z
    raise ValueError(f"unsupported activation {activation!r}")


def _pool(y: np.ndarray, width: int):
    L = y.shape[-2]
    T = -(-L // width)
    pad = T * width - L
    if pad:
        fill = np.full(y.shape[:-2] + (pad, y.shape[-1]), -np.inf, dtype=y.dtype)
        y = np.concatenate([y, fill], axis=-2)
    blocks = y.reshape(y.shape[:-2] + (T, width, y.shape[-1]))
    arg = blocks.argmax(axis=-2)
    return np.take_along_axis(blocks, arg[..., None, :], axis=-2)[..., 0, :], arg


def maxpool1d(y, width: int = 2) -> np.ndarray:
    """Non-overlapping max pooling along the time axis; a short last window is kept."""
    if width < 1:
        raise ValueError("pool width must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return _pool(y[:, None], width)[0][:, 0]
    return _pool(y, width)[0]


def lstm_forward(seq, wx, wh, b) -> np.ndarray:
    """Run the recurrence over (..., T, F) and return the final hidden state.

    Gate columns are ordered input, forget, cell candidate, output.
    """
    seq = np.asarray(seq, dtype=np.float64)
    H = wh.shape[0]
    xproj = seq @ wx + b
    h = np.zeros(seq.shape[:-2] + (H,))
    c = np.zeros_like(h)
    for t in range(seq.shape[-2]):
        a = xproj[..., t, :] + h @ wh
        i = sigmoid(a[..., :H])
        f = sigmoid(a[..., H:2 * H])
        g = np.tanh(a[..., 2 * H:3 * H])
        o = sigmoid(a[..., 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dense_softmax(h, w, b) -> np.ndarray:
    return softmax(np.asarray(h, dtype=np.float64) @ w + b)


def weighted_ce_loss(p, y, class_weights=None):
    """Mean weighted cross-entropy and its gradient with respect to the logits.

    ``y`` is a one-hot matrix (or a single one-hot vector). Each row's loss is
    ``-w[c] * log(max(p[c], 1e-12))`` for its true class ``c``; the returned
    gradient already includes the 1/batch factor of the mean.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p, y = p[None], y[None]
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ValueError("targets must be one-hot rows")
    k = p.shape[1]
    w = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    cls = y.argmax(axis=1)
    rw = w[cls]
    n = p.shape[0]
    pc = np.maximum(p[np.arange(n), cls], PROB_FLOOR)
    loss = float(np.mean(-rw * np.log(pc)))
    grad = rw[:, None] * (p - y) / n
    return loss, (grad[0] if single else grad)


def one_hot(y, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


# --- model ------------------------------------------------------------------

def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


@dataclass
class ConvLstmModel:
    params: dict[str, np.ndarray]
    input_length: int
    class_names: tuple[str, ...]
    pool: int = 2
    column_hash: str = ""

    @classmethod
    def initialize(cls, input_length: int, class_names: Sequence[str], filters: int,
                   kernel: int, units: int, seed: int = 0, pool: int = 2,
                   column_hash: str = "", dtype="float64") -> "ConvLstmModel":
        if kernel > input_length:
            raise ShapeError(f"kernel {kernel} longer than input length {input_length}")
        rng = np.random.default_rng(seed)
        k = len(class_names)
        lstm_b = np.zeros(4 * units)
        lstm_b[units:2 * units] = 1.0
        params = {
            "conv_w": _glorot(rng, (filters, kernel), kernel, kernel * filters),
            "conv_b": np.zeros(filters),
            "lstm_wx": _glorot(rng, (filters, 4 * units), filters, 4 * units),
            "lstm_wh": _glorot(rng, (units, 4 * units), units, 4 * units),
            "lstm_b": lstm_b,
            "dense_w": _glorot(rng, (units, k), units, k),
            "dense_b": np.zeros(k),
        }
        params = {name: p.astype(dtype) for name, p in params.items()}
        return cls(params, input_length, tuple(class_names), pool, column_hash)

    @classmethod
    def from_hyperparams(cls, input_length: int, class_names: Sequence[str], hp: HyperParams,
                         seed: int = 0, column_hash: str = "",
                         dtype="float64") -> "ConvLstmModel":
        return cls.initialize(input_length, class_names, hp.conv_filters, hp.conv_kernel,
                              hp.lstm_units, seed=seed, column_hash=column_hash, dtype=dtype)

    @property
    def dtype(self) -> np.dtype:
        return self.params["conv_w"].dtype

    @property
    def filters(self) -> int:
        return self.params["conv_w"].shape[0]

    @property
    def kernel(self) -> int:
        return self.params["conv_w"].shape[1]

    @property
    def units(self) -> int:
        return self.params["lstm_wh"].shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def copy(self) -> "ConvLstmModel":
        return copy.deepcopy(self)

    def check_width(self, X: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.input_length:
            raise ShapeError(f"rows have width {X.shape[-1]}, model expects {self.input_length}")


def forward(model: ConvLstmModel, X, keep_cache: bool = False):
    """Class probabilities for a (B, d) batch, plus the activations backward needs."""
    P = model.params
    dt = model.dtype
    X = np.asarray(X, dtype=dt)
    model.check_width(X)
    win = _windows(X[:, :, None], model.kernel)            # (B, L, k)
    z = win @ P["conv_w"].T + P["conv_b"]                  # (B, L, F)
    a = np.maximum(z, 0.0)
    seq, arg = _pool(a, model.pool)                         # (B, T, F)

    H = model.units
    B, T, _ = seq.shape
    xproj = seq @ P["lstm_wx"] + P["lstm_b"]
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    if keep_cache:
        hs = np.zeros((T + 1, B, H), dtype=dt)
        cs = np.zeros((T + 1, B, H), dtype=dt)
        gates = np.zeros((T, B, 4 * H), dtype=dt)
    for t in range(T):
        pre = xproj[:, t, :] + h @ P["lstm_wh"]
        i = sigmoid(pre[:, :H])
        f = sigmoid(pre[:, H:2 * H])
        g = np.tanh(pre[:, 2 * H:3 * H])
        o = sigmoid(pre[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        if keep_cache:
            gates[t] = np.concatenate([i, f, g, o], axis=1)
            hs[t + 1] = h
            cs[t + 1] = c
    probs = softmax((h @ P["dense_w"] + P["dense_b"]).astype(np.float64))
    if not keep_cache:
        return probs, None
    cache = {"win": win, "z": z, "arg": arg, "L": a.shape[1], "seq": seq,
             "hs": hs, "cs": cs, "gates": gates}
    return probs, cache


def backward(model: ConvLstmModel, X, y, class_weights=None):
    """Mean weighted cross-entropy over the batch and exact parameter gradients.

    ``y`` holds integer class indices. Returns ``(loss, grads)`` with ``grads``
    keyed like ``model.params``.
    """
    P = model.params
    probs, cache = forward(model, X, keep_cache=True)
    loss, dlogits = weighted_ce_loss(probs, one_hot(y, model.n_classes), class_weights)
    dt = model.dtype
    dlogits = dlogits.astype(dt, copy=False)

    H = model.units
    hs, cs, gates, seq = cache["hs"], cache["cs"], cache["gates"], cache["seq"]
    T = seq.shape[1]
    grads = {"dense_w": hs[T].T @ dlogits, "dense_b": dlogits.sum(axis=0)}

    dh = dlogits @ P["dense_w"].T
    dc = np.zeros_like(dh)
    dpre = np.zeros((T,) + dh.shape[:1] + (4 * H,), dtype=dt)
    wh_t = P["lstm_wh"].T
    for t in range(T - 1, -1, -1):
        i, f, g, o = (gates[t][:, j * H:(j + 1) * H] for j in range(4))
        tc = np.tanh(cs[t + 1])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dpre[t, :, :H] = dc * g * i * (1.0 - i)
        dpre[t, :, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dpre[t, :, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dpre[t, :, 3 * H:] = do * o * (1.0 - o)
        dc = dc * f
        dh = dpre[t] @ wh_t
    B, _, F = seq.shape
    dpre_bt = np.ascontiguousarray(dpre.transpose(1, 0, 2)).reshape(B * T, 4 * H)
    grads["lstm_wx"] = seq.reshape(B * T, F).T @ dpre_bt
    grads["lstm_wh"] = hs[:T].reshape(T * B, H).T @ dpre.reshape(T * B, 4 * H)
    grads["lstm_b"] = dpre_bt.sum(axis=0)
    dseq = (dpre_bt @ P["lstm_wx"].T).reshape(B, T, F)

    w = model.pool
    dblocks = np.zeros((B, T, w, F), dtype=dt)
    np.put_along_axis(dblocks, cache["arg"][:, :, None, :], dseq[:, :, None, :], axis=2)
    da = dblocks.reshape(B, T * w, F)[:, :cache["L"], :]
    dz = da * (cache["z"] > 0)
    L = cache["L"]
    grads["conv_w"] = dz.reshape(B * L, F).T @ cache["win"].reshape(B * L, model.kernel)
    grads["conv_b"] = dz.sum(axis=(0, 1))
    return loss, grads


# --- optimisation -----------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: Mapping, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc", "lr"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.lr)])
        return buf.getvalue()


def evaluate_loss(model: ConvLstmModel, X, y, class_weights=None, chunk: int = 512):
    """Weighted loss and accuracy over a dataset, computed in chunks."""
    total = 0.0
    correct = 0
    n = len(y)
    for s in range(0, n, chunk):
        probs, _ = forward(model, X[s:s + chunk])
        loss, _ = weighted_ce_loss(probs, one_hot(y[s:s + chunk], model.n_classes), class_weights)
        total += loss * len(probs)
        correct += int(np.sum(probs.argmax(axis=1) == y[s:s + chunk]))
    return total / n, correct / n


def train(model: ConvLstmModel, train_set, val_set, hp: HyperParams, class_weights=None,
          seed: int = 0, patience: int = 5, lr_patience: int = 3, lr_floor_div: float = 64.0,
          progress=None, weighted_validation: bool = False):
    """Mini-batch Adam training with early stopping and plateau LR halving.

    ``train_set`` and ``val_set`` are ``(X, y)`` pairs with integer labels.
    Validation loss drives both schedules; the best-validation parameters are
    restored before returning. Class weights shape the training loss only,
    unless ``weighted_validation`` is set: with a few rare-class rows in the
    validation split a weighted loss is dominated by them and stops training
    early. The model is updated in place and returned together with its
    :class:`TrainReport`.
    """
    Xtr, ytr = (np.asarray(a) for a in train_set)
    Xva, yva = (np.asarray(a) for a in val_set)
    if len(ytr) == 0 or len(yva) == 0:
        raise ValueError("training and validation sets must be non-empty")
    model.check_width(Xtr)
    model.check_width(Xva)
    rng = np.random.default_rng(seed)
    state = AdamState.zeros_like(model.params)
    lr0 = hp.learning_rate
    lr = lr0
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    report = TrainReport()
    since_best = 0
    plateau = 0
    n = len(ytr)
    for epoch in range(1, hp.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, hp.batch_size):
            idx = order[s:s + hp.batch_size]
            loss, grads = backward(model, Xtr[idx], ytr[idx], class_weights)
            adam_step(model.params, grads, state, lr)
            running += loss * len(idx)
        val_loss, val_acc = evaluate_loss(model, Xva, yva,
                                          class_weights if weighted_validation else None)
        report.epochs.append(EpochRecord(epoch, running / n, val_loss, val_acc, lr))
        if progress is not None:
            progress(report.epochs[-1])
        if not math.isfinite(val_loss):
            raise FloatingPointError(f"validation loss diverged at epoch {epoch}")
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in model.params.items()}
            report.best_epoch = epoch
            since_best = 0
            plateau = 0
            continue
        since_best += 1
        plateau += 1
        if since_best >= patience:
            report.stop_reason = "early_stop"
            break
        if plateau >= lr_patience:
            lr = max(lr / 2.0, lr0 / lr_floor_div)
            plateau = 0
    model.params = best_params
    return model, report


def predict_proba(model: ConvLstmModel, X, column_hash: str | None = None,
                  chunk: int = 256) -> np.ndarray:
    if column_hash is not None and model.column_hash and column_hash != model.column_hash:
        raise ColumnMismatchError("encoder column layout differs from the one the model was "
                                  "trained on")
    X = np.asarray(X, dtype=np.float64)
    model.check_width(X)
    out = [forward(model, X[s:s + chunk])[0] for s in range(0, X.shape[0], chunk)]
    if not out:
        return np.zeros((0, model.n_classes))
    return np.concatenate(out)


def predict(model: ConvLstmModel, X, column_hash: str | None = None) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return predict_proba(model, X, column_hash).argmax(axis=1)


# --- checkpoints ------------------------------------------------------------
# layout: magic | u32 version | u32 header length | JSON header | float64 payload | sha256

def save_checkpoint(model: ConvLstmModel, path: str | Path, extra: Mapping | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = {
        "input_length": model.input_length,
        "pool": model.pool,
        "class_names": list(model.class_names),
        "column_hash": model.column_hash,
        "dtype": str(model.dtype),
        "params": entries,
        "extra": dict(extra or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes + payload
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_checkpoint(path: str | Path) -> tuple[ConvLstmModel, dict]:
    data = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 8
    if len(data) < head + 32 or not data.startswith(CHECKPOINT_MAGIC):
        if data.startswith(CHECKPOINT_MAGIC[:len(data)]) and len(data) < head + 32:
            raise ChecksumError(f"{path}: checkpoint truncated")
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated checkpoint)")
    version, hlen = struct.unpack("<II", body[len(CHECKPOINT_MAGIC):head])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint format {version}, expected {CHECKPOINT_VERSION}")
    header = json.loads(body[head:head + hlen])
    payload = body[head + hlen:]
    params = {}
    for e in header["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        params[e["name"]] = arr.reshape(e["shape"]).astype(header.get("dtype", "float64"))
    model = ConvLstmModel(params, header["input_length"], tuple(header["class_names"]),
                          header["pool"], header["column_hash"])
    return model, header.get("extra", {})


def load_checkpoint(path: str | Path) -> ConvLstmModel:
    return read_checkpoint(path)[0]
