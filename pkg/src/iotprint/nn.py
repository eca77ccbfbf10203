"""Minimal dense neural network trained from scratch.

Architecture: 784 inputs -> H-unit ReLU layer -> X-unit output layer with
sigmoid (X = 1, binary schemes) or softmax (X > 1).  Loss is cross-entropy
(binary cross-entropy for the sigmoid head), optimized with Adam on
shuffled mini-batches.  Everything runs in 64-bit numpy so gradient checks
and retraining are reproducible bit-for-bit given a seed.

Epoch selection follows the probe-then-retrain protocol: train for the
configured maximum number of epochs, pick the epoch with the best
validation accuracy (ties: lower validation loss, then earlier epoch), and
retrain a fresh model for exactly that many epochs with the same seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadModelMagic,
    EmptyTrainingSet,
    IoFailure,
    ModelVersionMismatch,
    ShapeMismatch,
)
from .transform import IdxDataset, VECTOR_LEN

MODEL_MAGIC = b"IOTP"
MODEL_VERSION = 1

SIGMOID = "sigmoid"
SOFTMAX = "softmax"

PROB_CLIP = 1e-12   # keeps log() finite on saturated outputs
_EVAL_BATCH = 4096  # chunk size for full-set forward passes


@dataclass
class ModelParams:
    W1: np.ndarray              # (H, 784)
    b1: np.ndarray              # (H,)
    W2: np.ndarray              # (X, H)
    b2: np.ndarray              # (X,)
    output_kind: str            # "sigmoid" (X=1) or "softmax"

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def output_width(self) -> int:
        return self.W2.shape[0]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    hidden: int = 784
    init_stdev: float = 0.05

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs, batch_size and hidden must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.epsilon <= 0:
            raise ValueError("need 0 < beta1, beta2 < 1 and epsilon > 0")


@dataclass
class TrainHistory:
    val_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.val_accuracy)


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


_PARAM_FIELDS = ("W1", "b1", "W2", "b2")


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        zeros = lambda name: np.zeros_like(getattr(params, name))
        return cls(m=Gradients(*(zeros(f) for f in _PARAM_FIELDS)),
                   v=Gradients(*(zeros(f) for f in _PARAM_FIELDS)))


def init_params(hidden: int, output_width: int, seed: int,
                init_stdev: float = 0.05,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Weights ~ N(0, init_stdev^2), biases 0, sigmoid head iff X = 1."""
    if hidden < 1 or output_width < 1:
        raise ValueError("hidden and output_width must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    return ModelParams(
        W1=rng.normal(0.0, init_stdev, size=(hidden, VECTOR_LEN)),
        b1=np.zeros(hidden),
        W2=rng.normal(0.0, init_stdev, size=(output_width, hidden)),
        b2=np.zeros(output_width),
        output_kind=SIGMOID if output_width == 1 else SOFTMAX,
    )


def scale_images(images: np.ndarray) -> np.ndarray:
    """Bytes to [0, 1] floats (divide by 255, MNIST convention)."""
    return np.asarray(images, dtype=np.float64) / 255.0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def forward(params: ModelParams, batch: np.ndarray):
    """Returns (hidden activations B x H, output probabilities B x X)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.W1.shape[1]:
        raise ShapeMismatch(f"batch shape {batch.shape}, "
                            f"expected (B, {params.W1.shape[1]})")
    hidden = np.maximum(batch @ params.W1.T + params.b1, 0.0)
    logits = hidden @ params.W2.T + params.b2
    if params.output_kind == SIGMOID:
        output = _sigmoid(logits)
    else:
        output = _softmax(logits)
    return hidden, output


def loss(output: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy; binary cross-entropy for the one-unit head."""
    targets = np.asarray(targets)
    p = np.clip(output, PROB_CLIP, 1.0 - PROB_CLIP)
    if output.shape[1] == 1:
        y = targets.astype(np.float64).reshape(-1, 1)
        per_row = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        return float(per_row.mean())
    picked = p[np.arange(len(p)), targets.astype(np.intp)]
    return float(-np.log(picked).mean())


def _one_hot(targets: np.ndarray, width: int) -> np.ndarray:
    onehot = np.zeros((len(targets), width))
    onehot[np.arange(len(targets)), np.asarray(targets, dtype=np.intp)] = 1.0
    return onehot


def backward(params: ModelParams, batch: np.ndarray,
             targets: np.ndarray) -> Gradients:
    """Analytic gradients of the mean loss over the batch.

    Both heads reduce to the same fused output-gradient form
    (output - target) / B at the pre-activation, for softmax with
    categorical cross-entropy and for sigmoid with binary cross-entropy.
    ReLU uses subgradient 0 at exactly 0.
    """
    batch = np.asarray(batch, dtype=np.float64)
    hidden, output = forward(params, batch)
    n = len(batch)
    if params.output_kind == SIGMOID:
        y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    else:
        y = _one_hot(targets, params.output_width)
    d_logits = (output - y) / n
    g_W2 = d_logits.T @ hidden
    g_b2 = d_logits.sum(axis=0)
    d_hidden = (d_logits @ params.W2) * (hidden > 0.0)
    g_W1 = d_hidden.T @ batch
    g_b1 = d_hidden.sum(axis=0)
    return Gradients(W1=g_W1, b1=g_b1, W2=g_W2, b2=g_b2)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState,
              config: TrainConfig) -> None:
    """One in-place Adam update with bias correction; advances state.t."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for name in _PARAM_FIELDS:
        g = getattr(grads, name)
        m = b1 * getattr(state.m, name) + (1.0 - b1) * g
        v = b2 * getattr(state.v, name) + (1.0 - b2) * g * g
        setattr(state.m, name, m)
        setattr(state.v, name, v)
        m_hat = m / (1.0 - b1 ** state.t)
        v_hat = v / (1.0 - b2 ** state.t)
        update = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        setattr(params, name, getattr(params, name) - update)


def predicted_labels(probs: np.ndarray) -> np.ndarray:
    """Binary: 1 iff p >= 0.5.  Multiclass: argmax, lowest index on ties."""
    if probs.shape[1] == 1:
        return (probs[:, 0] >= 0.5).astype(np.intp)
    return np.argmax(probs, axis=1)


def _dataset_metrics(params: ModelParams, images: np.ndarray,
                     labels: np.ndarray) -> tuple[float, float]:
    """(accuracy, loss) over a full dataset, computed in chunks."""
    if len(images) == 0:
        return 0.0, 0.0
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(images), _EVAL_BATCH):
        chunk = slice(start, start + _EVAL_BATCH)
        _, output = forward(params, scale_images(images[chunk]))
        chunk_labels = labels[chunk]
        correct += int((predicted_labels(output) == chunk_labels).sum())
        loss_sum += loss(output, chunk_labels) * len(chunk_labels)
    return correct / len(images), loss_sum / len(images)


def train_datasets(train_set: IdxDataset, validation_set: IdxDataset,
                   output_width: int, config: TrainConfig
                   ) -> tuple[ModelParams, TrainHistory]:
    """Train on shuffled mini-batches; record validation metrics per epoch."""
    if len(train_set) == 0:
        raise EmptyTrainingSet("training set is empty")
    rng = np.random.default_rng(config.seed)
    params = init_params(config.hidden, output_width, config.seed,
                         config.init_stdev, rng=rng)
    state = AdamState.for_params(params)
    history = TrainHistory()
    images, labels = train_set.images, train_set.labels
    for _ in range(config.epochs):
        perm = rng.permutation(len(images))
        epoch_loss = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = scale_images(images[idx])
            batch_labels = labels[idx]
            _, output = forward(params, batch)
            epoch_loss += loss(output, batch_labels) * len(idx)
            grads = backward(params, batch, batch_labels)
            adam_step(params, grads, state, config)
        val_acc, val_loss = _dataset_metrics(params, validation_set.images,
                                             validation_set.labels)
        history.val_accuracy.append(val_acc)
        history.val_loss.append(val_loss)
        history.train_loss.append(epoch_loss / len(images))
    return params, history


def train(split_dataset, config: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Train for a labeled SplitDataset (uses its output width)."""
    return train_datasets(split_dataset.train, split_dataset.validation,
                          split_dataset.output_width, config)


def select_best_epoch(history: TrainHistory) -> int:
    """1-based epoch with max validation accuracy; ties broken by lower
    validation loss, then by the earlier epoch."""
    if not len(history):
        raise ValueError("empty history")
    ranked = sorted(
        range(len(history)),
        key=lambda i: (-history.val_accuracy[i], history.val_loss[i], i))
    return ranked[0] + 1


def train_best_epoch(split_dataset, config: TrainConfig):
    """Probe-then-retrain protocol.

    Returns (params, history, best_epoch, probe_history): `history` is the
    final model's history after retraining from scratch for `best_epoch`
    epochs with the same seed.
    """
    _, probe_history = train(split_dataset, config)
    best_epoch = select_best_epoch(probe_history)
    params, history = train(split_dataset, replace(config, epochs=best_epoch))
    return params, history, best_epoch, probe_history


def predict_batch(params: ModelParams, images: np.ndarray) -> np.ndarray:
    """Posterior probabilities for raw byte images, (N, X)."""
    _, output = forward(params, scale_images(np.atleast_2d(images)))
    return output


def predict(params: ModelParams, image: np.ndarray) -> np.ndarray:
    """Posterior probabilities for one 784-byte image, shape (X,)."""
    return predict_batch(params, np.asarray(image).reshape(1, -1))[0]


def save_model(params: ModelParams, path, meta: dict | None = None) -> Path:
    """Versioned binary container + JSON sidecar ("<path>.json") for metadata.

    Layout: magic "IOTP", u32 version, u32 H, u32 X, u8 output kind
    (0 = sigmoid, 1 = softmax), then little-endian float64 W1, b1, W2, b2.
    """
    path = Path(path)
    kind_code = 0 if params.output_kind == SIGMOID else 1
    try:
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<IIIB", MODEL_VERSION, params.hidden,
                                 params.output_width, kind_code))
            for name in _PARAM_FIELDS:
                fh.write(np.ascontiguousarray(
                    getattr(params, name), dtype="<f8").tobytes())
        if meta is not None:
            Path(str(path) + ".json").write_text(
                json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write model {path}: {exc}") from exc
    return path


def load_model(path) -> tuple[ModelParams, dict]:
    """Inverse of save_model; returns (params, metadata dict)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    if blob[:4] != MODEL_MAGIC:
        raise BadModelMagic(f"{path}: magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    version, hidden, width, kind_code = struct.unpack_from("<IIIB", blob, 4)
    if version != MODEL_VERSION:
        raise ModelVersionMismatch(f"{path}: format version {version}, "
                                   f"this build reads {MODEL_VERSION}")
    shapes = {"W1": (hidden, VECTOR_LEN), "b1": (hidden,),
              "W2": (width, hidden), "b2": (width,)}
    offset = 17
    arrays = {}
    for name in _PARAM_FIELDS:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=offset
        ).reshape(shapes[name]).astype(np.float64)
        offset += count * 8
    params = ModelParams(output_kind=SIGMOID if kind_code == 0 else SOFTMAX,
                         **arrays)
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return params, meta
