"""Two-layer ReLU/softmax network: evaluation, training, input gradients.

Conventions: ``w1`` has shape ``(d_in, d_hidden)`` and ``w2`` has shape
``(d_hidden, d_out)``, so a row vector ``x`` maps to ``relu(x @ w1 + b1) @ w2
+ b2``.  Every function accepting a single input vector also has a ``*_batch``
form taking a ``(n, d_in)`` array; the single-vector form is a thin wrapper so
both paths perform identical arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BadClassIndex,
    DimensionMismatch,
    EmptyDataset,
    NonFiniteInput,
)


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MlpNetwork:
    """Weights of a ``d_in -> d_hidden (ReLU) -> d_out (softmax)`` network.

    Arrays are copied on construction and made read-only.  Equality is
    bit-exact on every parameter.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        w1 = _frozen(self.w1, 2, "w1")
        b1 = _frozen(self.b1, 1, "b1")
        w2 = _frozen(self.w2, 2, "w2")
        b2 = _frozen(self.b2, 1, "b2")
        if w1.shape[0] < 1 or w1.shape[1] < 1 or w2.shape[1] < 1:
            raise DimensionMismatch("all layer widths must be positive")
        if b1.shape[0] != w1.shape[1]:
            raise DimensionMismatch(f"b1 has length {b1.shape[0]}, expected {w1.shape[1]}")
        if w2.shape[0] != w1.shape[1]:
            raise DimensionMismatch(f"w2 has {w2.shape[0]} rows, expected {w1.shape[1]}")
        if b2.shape[0] != w2.shape[1]:
            raise DimensionMismatch(f"b2 has length {b2.shape[0]}, expected {w2.shape[1]}")
        for name, arr in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
            object.__setattr__(self, name, arr)

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MlpNetwork):
            return NotImplemented
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.w1, other.w1), (self.b1, other.b1),
                         (self.w2, other.w2), (self.b2, other.b2))
        )

    __hash__ = None

    @classmethod
    def zeros(cls, d_in: int, d_hidden: int, d_out: int) -> "MlpNetwork":
        return cls(np.zeros((d_in, d_hidden)), np.zeros(d_hidden),
                   np.zeros((d_hidden, d_out)), np.zeros(d_out))

    @classmethod
    def initialize(cls, d_in: int, d_hidden: int, d_out: int, seed: int = 1,
                   rng: Optional[np.random.Generator] = None) -> "MlpNetwork":
        """Glorot-uniform weights, zero biases."""
        if rng is None:
            rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (d_in + d_hidden))
        lim2 = np.sqrt(6.0 / (d_hidden + d_out))
        w1 = rng.uniform(-lim1, lim1, size=(d_in, d_hidden))
        w2 = rng.uniform(-lim2, lim2, size=(d_hidden, d_out))
        return cls(w1, np.zeros(d_hidden), w2, np.zeros(d_out))


@dataclass(frozen=True)
class ForwardTrace:
    preact1: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class ActivationPattern:
    delta: np.ndarray  # bool, length d_hidden

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return np.array_equal(self.delta, other.delta)

    __hash__ = None

    @property
    def inactive_count(self) -> int:
        return int(np.count_nonzero(~self.delta))


@dataclass(frozen=True)
class GradientParts:
    """Pieces of the closed-form input gradient of one class probability.

    ``grad = prob_k * w1_masked @ (phi_k - gamma)`` where ``phi_k`` is the
    k-th column of ``w2`` and ``gamma = w2 @ probs``.
    """

    prob_k: float
    phi_k: np.ndarray
    gamma: np.ndarray
    w1_masked: np.ndarray = field(repr=False)


def _check_batch(network: MlpNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != network.d_in:
        raise DimensionMismatch(
            f"expected inputs of shape (n, {network.d_in}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains non-finite values")
    return x


def _check_single(network: MlpNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != network.d_in:
        raise DimensionMismatch(f"expected a vector of length {network.d_in}, got shape {x.shape}")
    return x[None, :]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-logit subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(network: MlpNetwork, x) -> ForwardTrace:
    x = _check_batch(network, x)
    preact1 = x @ network.w1 + network.b1
    hidden = np.maximum(preact1, 0.0)
    logits = hidden @ network.w2 + network.b2
    return ForwardTrace(preact1, hidden, logits, softmax(logits))


def forward(network: MlpNetwork, x) -> ForwardTrace:
    t = forward_batch(network, _check_single(network, x))
    return ForwardTrace(t.preact1[0], t.hidden[0], t.logits[0], t.probs[0])


def activation_pattern(network: MlpNetwork, x) -> ActivationPattern:
    """Which hidden units have strictly positive preactivation at ``x``."""
    return ActivationPattern(forward(network, x).preact1 > 0)


def _class_indices(network: MlpNetwork, k, n: int) -> np.ndarray:
    k = np.broadcast_to(np.asarray(k), (n,))
    if not np.issubdtype(k.dtype, np.integer):
        raise BadClassIndex(f"class index must be an integer, got {k.dtype}")
    if np.any((k < 0) | (k >= network.d_out)):
        raise BadClassIndex(f"class index out of range 0..{network.d_out - 1}")
    return k.astype(np.intp)


def prob_gradient_from_trace(network: MlpNetwork, trace: ForwardTrace, k) -> np.ndarray:
    """Input gradients of ``probs[:, k]`` given an already computed batch trace.

    ``k`` is a scalar or one class index per row.
    """
    probs = trace.probs
    n = probs.shape[0]
    k = _class_indices(network, k, n)
    rows = np.arange(n)
    gamma = probs @ network.w2.T                      # (n, d_hidden)
    phi = network.w2.T[k]                             # (n, d_hidden)
    h = probs[rows, k][:, None] * (phi - gamma)
    h = np.where(trace.preact1 > 0, h, 0.0)
    return h @ network.w1.T


def prob_gradient_batch(network: MlpNetwork, x, k) -> np.ndarray:
    return prob_gradient_from_trace(network, forward_batch(network, x), k)


def prob_gradient(network: MlpNetwork, x, k: int) -> np.ndarray:
    """Closed-form ``d probs[k] / d x`` at a single input ``x``."""
    return prob_gradient_batch(network, _check_single(network, x), k)[0]


def gradient_parts(network: MlpNetwork, x, k: int) -> GradientParts:
    t = forward(network, x)
    k = int(_class_indices(network, k, 1)[0])
    delta = t.preact1 > 0
    return GradientParts(
        prob_k=float(t.probs[k]),
        phi_k=network.w2[:, k].copy(),
        gamma=network.w2 @ t.probs,
        w1_masked=network.w1 * delta[None, :],
    )


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.1
    batch: int = 64
    seed: int = 1


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # confusion[true, predicted]


def predict(network: MlpNetwork, images) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(forward_batch(network, images).probs, axis=1)


def evaluate(network: MlpNetwork, dataset, chunk: int = 10000) -> EvalResult:
    """Accuracy and confusion counts of ``network`` on an ImageSet-like object."""
    images = np.asarray(dataset.images)
    labels = np.asarray(dataset.labels)
    if len(labels) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    if images.ndim != 2 or images.shape[1] != network.d_in:
        raise DimensionMismatch(f"images have shape {images.shape}, network expects {network.d_in}")
    if np.any((labels < 0) | (labels >= network.d_out)):
        raise DimensionMismatch("labels exceed the network's output classes")
    pred = np.concatenate([predict(network, images[i:i + chunk])
                           for i in range(0, len(labels), chunk)])
    confusion = np.zeros((network.d_out, network.d_out), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float(np.mean(pred == labels)), confusion)


def train(train_set, val_set, config: TrainConfig = TrainConfig(),
          d_hidden: int = 256, d_out: int = 10) -> tuple[MlpNetwork, list[dict]]:
    """Minibatch SGD on mean cross-entropy.

    The shuffle order and initial weights come from a single generator seeded
    with ``config.seed``, so equal inputs give bit-identical networks.

    Returns the trained network and a log with one entry per epoch (entry 0
    is the untrained initialization), each holding ``epoch``, ``train_acc``
    and ``val_acc``.
    """
    x = np.asarray(train_set.images, dtype=np.float64)
    y = np.asarray(train_set.labels, dtype=np.int64)
    if len(y) == 0:
        raise EmptyDataset("training set is empty")
    if x.ndim != 2 or x.shape[0] != len(y):
        raise DimensionMismatch(f"images {x.shape} and labels {y.shape} disagree")
    if val_set is not None and len(val_set.labels) == 0:
        raise EmptyDataset("validation set is empty")
    if np.any((y < 0) | (y >= d_out)):
        raise DimensionMismatch(f"labels must lie in 0..{d_out - 1}")

    rng = np.random.default_rng(config.seed)
    net = MlpNetwork.initialize(x.shape[1], d_hidden, d_out, rng=rng)
    w1, b1 = net.w1.copy(), net.b1.copy()
    w2, b2 = net.w2.copy(), net.b2.copy()

    def snapshot():
        return MlpNetwork(w1, b1, w2, b2)

    def log_entry(epoch):
        cur = snapshot()
        entry = {"epoch": epoch, "train_acc": evaluate(cur, train_set).accuracy}
        entry["val_acc"] = evaluate(cur, val_set).accuracy if val_set is not None else float("nan")
        return entry

    log = [log_entry(0)]
    eye = np.eye(d_out)
    n = len(y)
    for epoch in range(1, config.epochs + 1):
        # divergence is detected and reported below, so silence the float warnings
        with np.errstate(over="ignore", invalid="ignore"):
            order = rng.permutation(n)
            for start in range(0, n, config.batch):
                idx = order[start:start + config.batch]
                xb, yb = x[idx], y[idx]
                pre = xb @ w1 + b1
                hid = np.maximum(pre, 0.0)
                probs = softmax(hid @ w2 + b2)
                err = (probs - eye[yb]) / len(idx)
                gw2 = hid.T @ err
                gb2 = err.sum(axis=0)
                dh = (err @ w2.T) * (pre > 0)
                gw1 = xb.T @ dh
                gb1 = dh.sum(axis=0)
                w1 -= config.lr * gw1
                b1 -= config.lr * gb1
                w2 -= config.lr * gw2
                b2 -= config.lr * gb2
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise NonFiniteInput(f"training diverged in epoch {epoch}; lower the learning rate")
        with np.errstate(over="ignore", invalid="ignore"):
            log.append(log_entry(epoch))
    return snapshot(), log
