"""Two-layer sigmoid networks whose hidden units are the particles.

Neuron ``i`` is the row ``(w_i, a_i)`` with ``w_i`` the incoming weights and
``a_i`` the outgoing weights to each of the ``C`` outputs, so the network is

    F(z) = sum_i a_i * sigmoid(<w_i, z>)

Reductions over samples are done with stacked per-neuron products. Every
neuron then goes through the identical floating-point path, which keeps
duplicated neurons bitwise identical during training (BLAS GEMM edge kernels
do not guarantee that).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, PreconditionError
from .particles import ParticleCollection
from .rules import GradientOracle


def sigmoid(u):
    # tanh form cannot overflow for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


@dataclass(frozen=True)
class TwoLayerNet:
    input_dim: int
    output_dim: int
    neurons: ParticleCollection

    def __post_init__(self):
        if self.neurons.dim != self.input_dim + self.output_dim:
            raise DimensionError(
                f"neuron width {self.neurons.dim} != input_dim + output_dim = {self.input_dim + self.output_dim}"
            )

    @property
    def hidden(self) -> int:
        return self.neurons.count

    @property
    def w(self) -> np.ndarray:
        return self.neurons.data[:, : self.input_dim]

    @property
    def a(self) -> np.ndarray:
        return self.neurons.data[:, self.input_dim :]


def _preactivations(w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``(h, B)`` matrix of ``<w_i, z_s>``."""
    return (w[:, None, :] @ z.T)[:, 0, :]


def _forward_parts(w, a, z):
    s = sigmoid(_preactivations(w, z))
    out = s.T @ a
    return s, out


def forward(net: TwoLayerNet, z) -> np.ndarray:
    """Network output for one input (shape ``(C,)``) or a batch (shape ``(B, C)``)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.shape[1] != net.input_dim:
        raise DimensionError(f"input has dim {zb.shape[1]}, net expects {net.input_dim}")
    _, out = _forward_parts(net.w, net.a, zb)
    return out[0] if single else out


def _backward(s, a, z, d_out):
    """Per-neuron gradient rows given activations ``s`` (h, B) and ``dL/dF`` (B, C)."""
    g_a = (s[:, None, :] @ d_out)[:, 0, :]
    d_s = (a[:, None, :] @ d_out.T)[:, 0, :]
    d_h = d_s * s * (1.0 - s)
    g_w = (d_h[:, None, :] @ z)[:, 0, :]
    return np.hstack([g_w, g_a])


def _check_batch(net_in: int, net_out: int, inputs, targets):
    z = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if z.ndim != 2 or z.shape[0] == 0:
        raise PreconditionError("batch must be a non-empty (B, d) array")
    if z.shape[0] != y.shape[0]:
        raise DimensionError(f"{z.shape[0]} inputs but {y.shape[0]} targets")
    if z.shape[1] != net_in or y.shape[1] != net_out:
        raise DimensionError(f"batch shapes {z.shape}, {y.shape} do not match net ({net_in} -> {net_out})")
    return z, y


def mse_terms(neurons: np.ndarray, input_dim: int, z: np.ndarray, y: np.ndarray):
    w, a = neurons[:, :input_dim], neurons[:, input_dim:]
    s, out = _forward_parts(w, a, z)
    r = out - y
    b = z.shape[0]
    loss = float(np.sum(r * r) / b)
    grad = _backward(s, a, z, 2.0 * r / b)
    return loss, grad


def _log_softmax(logits):
    shift = logits - logits.max(axis=1, keepdims=True)
    return shift - np.log(np.sum(np.exp(shift), axis=1, keepdims=True))


def _check_one_hot(y):
    if y.shape[1] < 2:
        raise PreconditionError("cross-entropy needs at least two classes")
    if not (np.isin(y, (0.0, 1.0)).all() and np.array_equal(y.sum(axis=1), np.ones(y.shape[0]))):
        raise PreconditionError("targets are not one-hot rows")


def cross_entropy_terms(neurons: np.ndarray, input_dim: int, z: np.ndarray, y: np.ndarray):
    w, a = neurons[:, :input_dim], neurons[:, input_dim:]
    s, logits = _forward_parts(w, a, z)
    logp = _log_softmax(logits)
    b = z.shape[0]
    loss = float(-np.sum(y * logp) / b)
    grad = _backward(s, a, z, (np.exp(logp) - y) / b)
    return loss, grad


def mse_loss(net: TwoLayerNet, batch) -> tuple[float, ParticleCollection]:
    """Mean over the batch of ``||F(z) - y||^2`` and its per-neuron gradient."""
    z, y = _check_batch(net.input_dim, net.output_dim, *batch)
    loss, grad = mse_terms(net.neurons.data, net.input_dim, z, y)
    return loss, ParticleCollection(grad)


def cross_entropy_loss(net: TwoLayerNet, batch) -> tuple[float, ParticleCollection]:
    """Mean softmax cross-entropy of the logits ``F(z)`` against one-hot targets."""
    z, y = _check_batch(net.input_dim, net.output_dim, *batch)
    _check_one_hot(y)
    loss, grad = cross_entropy_terms(net.neurons.data, net.input_dim, z, y)
    return loss, ParticleCollection(grad)


def net_oracle(input_dim: int, output_dim: int, inputs, targets, loss: str = "mse") -> GradientOracle:
    """Gradient oracle over the neuron collection for a fixed batch."""
    z, y = _check_batch(input_dim, output_dim, inputs, targets)
    if loss == "mse":
        terms = mse_terms
    elif loss == "cross_entropy":
        _check_one_hot(y)
        terms = cross_entropy_terms
    else:
        raise PreconditionError(f"unknown loss {loss!r}")
    return GradientOracle(lambda x: terms(x, input_dim, z, y), input_dim + output_dim, name=f"{loss}-net")


def accuracy(net: TwoLayerNet, inputs, targets) -> float:
    out = forward(net, inputs)
    return float(np.mean(np.argmax(out, axis=1) == np.argmax(np.asarray(targets), axis=1)))


# -- data ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    train_fraction: float = 0.7

    def __post_init__(self):
        z = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if z.ndim != 2 or z.shape[0] < 1:
            raise PreconditionError("dataset needs at least one sample")
        if z.shape[0] != y.shape[0]:
            raise DimensionError(f"{z.shape[0]} inputs but {y.shape[0]} targets")
        object.__setattr__(self, "inputs", z)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_train(self) -> int:
        return max(1, int(round(self.train_fraction * len(self))))

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.n_train
        return self.inputs[:k], self.targets[:k]

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.n_train
        return self.inputs[k:], self.targets[k:]

    def to_csv(self, path) -> None:
        d, c = self.inputs.shape[1], self.targets.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{k}" for k in range(d)] + [f"y{k}" for k in range(c)])
            for zi, yi in zip(self.inputs, self.targets):
                w.writerow([format(v, ".17g") for v in np.concatenate([zi, yi])])

    @classmethod
    def from_csv(cls, path, train_fraction: float = 0.7) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        d = sum(1 for h in header if h.startswith("z"))
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r])
        return cls(arr[:, :d], arr[:, d:], train_fraction)


@dataclass(frozen=True, eq=False)
class TeacherSpec:
    """Frozen random teacher ``y = <a*, sigmoid(W* z)>``."""

    hidden_star: int
    a_star: np.ndarray
    w_star: np.ndarray
    seed: int | None = None

    @classmethod
    def sample(cls, hidden_star: int, d: int, seed: int) -> "TeacherSpec":
        rng = np.random.default_rng(seed)
        a = rng.normal(0.0, 1.0, size=hidden_star)
        w = rng.normal(0.0, 0.6, size=(hidden_star, d))
        return cls(hidden_star, a, w, seed)

    def __call__(self, z) -> np.ndarray:
        return sigmoid(np.asarray(z) @ self.w_star.T) @ self.a_star


def generate_teacher_dataset(spec: TeacherSpec, n: int = 5000, d: int | None = None, seed: int = 0, train_fraction: float = 0.7) -> Dataset:
    """Inputs ``z ~ N(0, 4)`` per coordinate, labels from the teacher."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    d = spec.w_star.shape[1] if d is None else d
    if d != spec.w_star.shape[1]:
        raise DimensionError(f"teacher has input dim {spec.w_star.shape[1]}, requested {d}")
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 2.0, size=(n, d))
    return Dataset(z, spec(z)[:, None], train_fraction)


def minibatches(dataset, batch_size: int, seed: int, epoch: int = 0) -> list[np.ndarray]:
    """Shuffled partition of ``range(n)`` for one epoch; the last batch may be short."""
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if batch_size < 1:
        raise PreconditionError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[k : k + batch_size] for k in range(0, n, batch_size)]


def batch_stream(n: int, batch_size: int, seed: int):
    """Endless sequence of minibatch index arrays, epoch after epoch."""
    epoch = 0
    while True:
        yield from minibatches(n, batch_size, seed, epoch)
        epoch += 1


# -- IDX (MNIST) -----------------------------------------------------------------

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass(frozen=True)
class IdxMeta:
    type_code: int
    dims: tuple
    magic: int = field(default=0)


def load_idx(path, scale: bool = True) -> tuple[np.ndarray, IdxMeta]:
    """Parse a big-endian IDX file.

    Returns the data as a ``(n, prod(dims[1:]))`` float matrix (rank-1 files
    give a length-``n`` vector). Unsigned-byte payloads are divided by 255
    when ``scale`` is true.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError("truncated IDX header", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"bad IDX magic {raw[:4].hex()}", offset=0)
    type_code, rank = raw[2], raw[3]
    if type_code not in _IDX_TYPES:
        raise FormatError(f"unsupported IDX element type 0x{type_code:02x}", offset=2)
    if rank < 1:
        raise FormatError("IDX rank must be >= 1", offset=3)
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise FormatError("truncated IDX dimension header", offset=len(raw))
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    dtype = _IDX_TYPES[type_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) < expected:
        raise FormatError(f"truncated IDX payload: expected {expected} bytes, found {len(payload)}", offset=len(raw))
    arr = np.frombuffer(payload[:expected], dtype=dtype).astype(np.float64)
    if scale and type_code == 0x08:
        arr = arr / 255.0
    if rank > 1:
        arr = arr.reshape(dims[0], -1)
    magic = struct.unpack(">I", raw[:4])[0]
    return arr, IdxMeta(type_code, tuple(dims), magic)


def one_hot(labels, classes: int = 10) -> np.ndarray:
    lab = np.asarray(labels).astype(np.int64)
    if lab.min() < 0 or lab.max() >= classes:
        raise PreconditionError(f"labels outside 0..{classes - 1}")
    out = np.zeros((lab.shape[0], classes))
    out[np.arange(lab.shape[0]), lab] = 1.0
    return out


def load_mnist(images_path, labels_path, limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    images, _ = load_idx(images_path)
    labels, _ = load_idx(labels_path, scale=False)
    if images.shape[0] != labels.shape[0]:
        raise DimensionError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, one_hot(labels)
