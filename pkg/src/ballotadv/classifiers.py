"""Two-class ballot classifiers with explicit forward and backward passes.

Both models map a flattened ``(n, 2000)`` batch of pixel intensities to
``(n, 2)`` logits.  The linear model uses the symmetric pair ``(-s, +s)``
with ``s = w.x + b``; the perceptron has one rectified hidden layer.
Predictions take the argmax of the logits with index 0 winning ties.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Union

import numpy as np

from . import rng as rngmod
from .data import MARK_TYPES, N_PIXELS, BubbleSet


class ModelFormatError(ValueError):
    pass


@dataclass
class LinearTwoLogit:
    weights: np.ndarray
    bias: float = 0.0
    kind = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)

    @property
    def input_dim(self) -> int:
        return self.weights.size

    def logits(self, x: np.ndarray) -> np.ndarray:
        s = x @ self.weights + self.bias
        return np.stack([-s, s], axis=-1)

    def backward(self, x, dlogits, params=True):
        """Gradients of ``sum(dlogits * logits)`` w.r.t. input and parameters."""
        ds = dlogits[:, 1] - dlogits[:, 0]
        dx = ds[:, None] * self.weights[None, :]
        if not params:
            return dx, None
        return dx, [x.T @ ds, np.array(ds.sum())]

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, np.array(self.bias)]

    def set_parameters(self, ps) -> None:
        self.weights = np.asarray(ps[0], dtype=np.float64)
        self.bias = float(ps[1])


@dataclass
class Mlp:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    kind = "mlp"

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(-1)
        h, d = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape != (2, h) or self.b2.shape != (2,):
            raise ValueError("inconsistent perceptron parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        a = x @ self.w1.T + self.b1
        return np.maximum(a, 0.0) @ self.w2.T + self.b2

    def backward(self, x, dlogits, params=True):
        a = x @ self.w1.T + self.b1
        h = np.maximum(a, 0.0)
        da = (dlogits @ self.w2) * (a > 0)
        dx = da @ self.w1
        if not params:
            return dx, None
        return dx, [da.T @ x, da.sum(0), dlogits.T @ h, dlogits.sum(0)]

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def set_parameters(self, ps) -> None:
        self.w1, self.b1, self.w2, self.b2 = (np.asarray(p, dtype=np.float64) for p in ps)


Model = Union[LinearTwoLogit, Mlp]


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1 or x.shape == (40, 50)
    xb = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if xb.shape[1] != model.input_dim:
        raise ValueError(f"input has {xb.shape[1]} features, model expects {model.input_dim}")
    return xb, single


def forward(model: Model, x) -> np.ndarray:
    """Logits for one image (any shape with 2000 entries) or a batch."""
    xb, single = _as_batch(model, x)
    z = model.logits(xb)
    return z[0] if single else z


def predict(model: Model, x) -> np.ndarray:
    z = forward(model, x)
    return (z[..., 1] > z[..., 0]).astype(np.int64)


# ---------------------------------------------------------------- losses

def _labels(labels, n):
    return np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))


def cross_entropy(logits, labels):
    """Per-sample softmax cross-entropy and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(labels, len(z))
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(z))
    loss = (m[:, 0] + np.log(se[:, 0])) - z[rows, y]
    grad = e / se
    grad[rows, y] -= 1.0
    return loss, grad


def dlr_binary(logits, labels):
    """Per-sample ``-(z_y - z_other)`` and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(labels, len(z))
    rows = np.arange(len(z))
    loss = -(z[rows, y] - z[rows, 1 - y])
    grad = np.zeros_like(z)
    grad[rows, y] = -1.0
    grad[rows, 1 - y] = 1.0
    return loss, grad


LOSSES = {"ce": cross_entropy, "dlr": dlr_binary}


def loss_cross_entropy(logits, label) -> float:
    return float(cross_entropy(logits, label)[0][0])


def loss_dlr_binary(logits, label) -> float:
    return float(dlr_binary(logits, label)[0][0])


def loss_and_input_grad(model: Model, x: np.ndarray, labels, loss_kind: str = "dlr"):
    """Per-sample loss and its gradient w.r.t. a ``(n, d)`` input batch."""
    z = model.logits(x)
    loss, dz = LOSSES[loss_kind](z, labels)
    dx, _ = model.backward(x, dz, params=False)
    return loss, dx


def grad_input(model: Model, image, label: int, loss_kind: str = "ce") -> np.ndarray:
    """Exact gradient of the loss w.r.t. the pixels, shaped like ``image``."""
    img = np.asarray(image, dtype=np.float64)
    xb, _ = _as_batch(model, img)
    _, dx = loss_and_input_grad(model, xb, [label], loss_kind)
    return dx[0].reshape(img.shape)


def grad_params(model: Model, x, labels, loss_kind: str = "ce", sample_weight=None):
    """Mean loss over a batch and its gradient w.r.t. each parameter array."""
    xb, _ = _as_batch(model, x)
    z = model.logits(xb)
    loss, dz = LOSSES[loss_kind](z, labels)
    w = np.ones(len(xb)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    w = w / w.sum()
    _, grads = model.backward(xb, dz * w[:, None])
    return float(np.dot(w, loss)), grads


# ---------------------------------------------------------------- scaling

@dataclass
class StandardScaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x) -> "StandardScaler":
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        if len(x) < 2:
            raise ValueError("need at least two samples to fit a scaler")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        # Constant features keep a unit divisor and map to zero on the fit data;
        # test by range since the mean of identical floats can round.
        const = np.ptp(x, axis=0) == 0
        scale = np.where(const, 1.0, std)
        mean = np.where(const, x[0], mean)
        return cls(mean, scale)

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.mean


def standardize_fit(x) -> StandardScaler:
    return StandardScaler.fit(x)


def standardize_apply(scaler: StandardScaler, x) -> np.ndarray:
    return scaler.apply(x)


def fold_scaler(model: Model, scaler: StandardScaler) -> Model:
    """Equivalent model on raw pixels for one trained on standardized inputs."""
    if isinstance(model, LinearTwoLogit):
        w = model.weights / scaler.scale
        return LinearTwoLogit(w, model.bias - float(w @ scaler.mean))
    w1 = model.w1 / scaler.scale[None, :]
    return Mlp(w1, model.b1 - w1 @ scaler.mean, model.w2.copy(), model.b2.copy())


# ---------------------------------------------------------------- init/train

def init_model(kind: str, seed: int, input_dim: int = N_PIXELS, hidden: int = 64) -> Model:
    """Fan-in scaled uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    g = rngmod.substream(seed, rngmod.INIT)
    if kind == "linear":
        lim = 1.0 / np.sqrt(input_dim)
        return LinearTwoLogit(g.uniform(-lim, lim, input_dim), float(g.uniform(-lim, lim)))
    if kind == "mlp":
        l1, l2 = 1.0 / np.sqrt(input_dim), 1.0 / np.sqrt(hidden)
        return Mlp(g.uniform(-l1, l1, (hidden, input_dim)), g.uniform(-l1, l1, hidden),
                   g.uniform(-l2, l2, (2, hidden)), g.uniform(-l2, l2, 2))
    raise ValueError(f"unknown model kind {kind!r}; expected 'linear' or 'mlp'")


@dataclass
class TrainConfig:
    lr: float = 0.005
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    standardize: bool = False
    hidden: int = 64
    balanced: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("lr, epochs, batch_size and hidden must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must be in [0, 1) and weight_decay >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    loss: float


def train(dataset: BubbleSet, model_kind: str, config: TrainConfig,
          val: BubbleSet | None = None) -> tuple[Model, list[EpochRecord]]:
    """Mini-batch momentum descent on the (optionally class-balanced) cross-entropy.

    If ``config.standardize`` is set the model is fit on z-scored features and
    the scaler is folded into its first layer before returning, so the result
    always consumes raw pixels.  ``val_acc`` is NaN when no validation set is
    supplied.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    y = dataset.labels
    counts = np.bincount(y, minlength=2)
    if np.count_nonzero(counts) < 2:
        raise ValueError("training set must contain both classes")
    x = dataset.x
    scaler = StandardScaler.fit(x) if config.standardize else None
    xt = scaler.apply(x) if scaler else x
    cw = (len(y) / (2.0 * counts)) if config.balanced else np.ones(2)

    model = init_model(model_kind, config.seed, x.shape[1], config.hidden)
    velocity = [np.zeros_like(p, dtype=np.float64) for p in model.parameters()]
    history = []
    n = len(y)
    for epoch in range(1, config.epochs + 1):
        order = rngmod.substream(config.seed, rngmod.SHUFFLE, epoch).permutation(n)
        total, weight = 0.0, 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            sw = cw[y[idx]]
            loss, grads = grad_params(model, xt[idx], y[idx], "ce", sw)
            total += loss * sw.sum()
            weight += sw.sum()
            params = model.parameters()
            new = []
            for p, g, v in zip(params, grads, velocity):
                g = g + config.weight_decay * p
                v *= config.momentum
                v += g
                new.append(p - config.lr * v)
            model.set_parameters(new)
        final = fold_scaler(model, scaler) if scaler else model
        train_acc = float(np.mean(predict(final, x) == y))
        val_acc = evaluate(final, val)[0] if val is not None and len(val) else float("nan")
        history.append(EpochRecord(epoch, train_acc, val_acc, total / weight))
    return (fold_scaler(model, scaler) if scaler else model), history


def evaluate(model: Model, dataset: BubbleSet) -> tuple[float, dict[str, float]]:
    """Overall accuracy and accuracy per mark type present in ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    correct = predict(model, dataset.x) == dataset.labels
    per = {}
    for mt in MARK_TYPES:
        sel = dataset.mark_types == mt
        if sel.any():
            per[mt] = float(correct[sel].mean())
    return float(correct.mean()), per


def per_type_table(model: Model, dataset: BubbleSet) -> list[dict]:
    """Rows of (mark_type, total, correct, accuracy) in mark-type order."""
    correct = predict(model, dataset.x) == dataset.labels
    rows = []
    for mt in MARK_TYPES:
        sel = dataset.mark_types == mt
        if sel.any():
            rows.append({"mark_type": mt, "total": int(sel.sum()),
                         "correct": int(correct[sel].sum()),
                         "accuracy": float(correct[sel].mean())})
    return rows


def write_history(path: str | os.PathLike, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_acc", "val_acc", "loss"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_acc:.6f}", f"{r.val_acc:.6f}", f"{r.loss:.8f}"])


# ---------------------------------------------------------------- serialization
#
# Little-endian layout:
#   0   8s  magic b"BALLOTNN"
#   8   u16 format version (1)
#   10  u8  kind tag (1 linear, 2 perceptron)
#   11  u8  reserved (0)
#   12  u32 input dimension
#   16  u32 hidden width (0 for the linear model)
#   20  u64 parameter count P
#   28  P x f64 parameters: linear w, b; perceptron w1 (row-major), b1, w2, b2

MAGIC = b"BALLOTNN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHBBIIQ")
_KIND_TAGS = {"linear": 1, "mlp": 2}


def model_to_bytes(model: Model) -> bytes:
    flat = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1) for p in model.parameters()])
    hidden = model.hidden if isinstance(model, Mlp) else 0
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, _KIND_TAGS[model.kind], 0,
                        model.input_dim, hidden, flat.size)
    return head + flat.astype("<f8").tobytes()


def model_from_bytes(blob: bytes, source: str = "<bytes>") -> Model:
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"{source}: truncated header")
    magic, version, tag, _, d, h, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{source}: unsupported format version {version}")
    body = blob[_HEADER.size:]
    if len(body) != 8 * count:
        raise ModelFormatError(f"{source}: expected {count} parameters, found {len(body) / 8:g}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if tag == 1:
        if count != d + 1:
            raise ModelFormatError(f"{source}: parameter count mismatch")
        return LinearTwoLogit(flat[:d].copy(), float(flat[d]))
    if tag == 2:
        if count != h * d + h + 2 * h + 2:
            raise ModelFormatError(f"{source}: parameter count mismatch")
        i = 0
        parts = []
        for shape in ((h, d), (h,), (2, h), (2,)):
            k = int(np.prod(shape))
            parts.append(flat[i:i + k].reshape(shape).copy())
            i += k
        return Mlp(*parts)
    raise ModelFormatError(f"{source}: unknown model kind tag {tag}")


def save_model(path: str | os.PathLike, model: Model) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), str(path))
