"""Small differentiable classifiers with hand-derived gradients.

Two model families: multinomial logistic regression and a fully-connected
ReLU network. Parameters live in a single flat float64 vector so that
broadcasting and relaying a model is a plain vector copy; the architecture
descriptor travels separately and never changes during a run. The analytic
gradients are validated against :func:`finite_diff_grad` in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

LOGREG = "logreg"
MLP = "mlp"

_SNAPSHOT_MAGIC = b"RFP1"
_KIND_CODES = {LOGREG: 0, MLP: 1}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor: fixes the flat parameter layout.

    The flat vector is the concatenation of per-layer blocks, one block per
    weight layer: first the weight matrix stored row-major with shape
    (fan_in, fan_out), then the bias of length fan_out. ``hidden_dims`` must
    be empty for logistic regression.
    """

    kind: str
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind == LOGREG and self.hidden_dims:
            raise ValueError("logreg takes no hidden layers")
        if self.kind == MLP and not self.hidden_dims:
            raise ValueError("mlp needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be positive")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per weight layer, input to output."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def num_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


@dataclass
class ModelParams:
    """A flat parameter vector bound to its architecture."""

    arch: ModelArch
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.arch.num_params,):
            raise ValueError(
                f"parameter vector has length {self.values.size}, "
                f"architecture requires {self.arch.num_params}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.values.copy())


@dataclass(frozen=True)
class Batch:
    """A labelled minibatch: features (B, d) and integer labels (B,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must match the feature row count")
        if self.features.shape[0] < 1:
            raise ValueError("batch must be nonempty")

    def __len__(self) -> int:
        return self.features.shape[0]


def init_params(arch: ModelArch, seed: int) -> ModelParams:
    """Deterministic init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    blocks = []
    for fan_in, fan_out in arch.layer_dims():
        scale = 1.0 / np.sqrt(fan_in)
        blocks.append(rng.uniform(-scale, scale, size=fan_in * fan_out))
        blocks.append(np.zeros(fan_out))
    return ModelParams(arch, np.concatenate(blocks))


def split_layers(arch: ModelArch, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (W, b) pairs."""
    layers = []
    offset = 0
    for fan_in, fan_out in arch.layer_dims():
        w = values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = values[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logits for a feature matrix; ReLU on hidden layers."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature matrix must be (rows, {params.arch.input_dim}), "
            f"got shape {features.shape}"
        )
    layers = split_layers(params.arch, params.values)
    a = features
    for w, b in layers[:-1]:
        a = np.maximum(a @ w + b, 0.0)
    w, b = layers[-1]
    return a @ w + b


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, stabilised with log-sum-exp."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    return float(np.mean(log_norm - shifted[rows, labels]))


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient.

    The gradient is taken w.r.t. the flat parameter vector and returned in
    the same layout. Raises FloatingPointError if the result is non-finite,
    which with log-sum-exp stabilisation only happens for non-finite inputs.
    """
    arch = params.arch
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError("labels out of range for the architecture")

    layers = split_layers(arch, params.values)
    activations = [np.asarray(batch.features, dtype=np.float64)]
    pre = []
    a = activations[0]
    if a.shape[1] != arch.input_dim:
        raise ValueError(f"feature width {a.shape[1]} != input_dim {arch.input_dim}")
    for w, b in layers[:-1]:
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    w, b = layers[-1]
    logits = a @ w + b

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(len(batch))
    loss = float(np.mean(np.log(exp.sum(axis=1)) - shifted[rows, labels]))

    # Backward pass; subgradient of ReLU at 0 is 0.
    delta = probs.copy()
    delta[rows, labels] -= 1.0
    delta /= len(batch)
    grad_blocks = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grad_w = activations[i].T @ delta
        grad_b = delta.sum(axis=0)
        grad_blocks[i] = (grad_w, grad_b)
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0.0)
    grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grad_blocks])

    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite loss or gradient")
    return loss, grad


def finite_diff_grad(params: ModelParams, batch: Batch, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the batch loss, coordinate by coordinate.

    Deliberately routed through forward() + cross_entropy() only, so it stays
    independent of the analytic backward pass it is used to check.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = params.values
    grad = np.empty_like(base)
    for j in range(base.size):
        bumped = base.copy()
        bumped[j] = base[j] + eps
        up = cross_entropy(forward(ModelParams(params.arch, bumped), batch.features), batch.labels)
        bumped[j] = base[j] - eps
        down = cross_entropy(forward(ModelParams(params.arch, bumped), batch.features), batch.labels)
        grad[j] = (up - down) / (2.0 * eps)
    return grad


def save_params(params: ModelParams, path) -> None:
    """Write a parameter snapshot.

    Byte layout (all integers little-endian):
      magic          4 bytes  b"RFP1"
      kind           u8       0 = logreg, 1 = mlp
      input_dim      u32
      num_classes    u32
      n_hidden       u32
      hidden_dims    u32 * n_hidden
      n_values       u64
      values         f64 * n_values (little-endian IEEE 754)
    """
    arch = params.arch
    header = _SNAPSHOT_MAGIC + struct.pack(
        "<BIII",
        _KIND_CODES[arch.kind],
        arch.input_dim,
        arch.num_classes,
        len(arch.hidden_dims),
    )
    header += struct.pack(f"<{len(arch.hidden_dims)}I", *arch.hidden_dims)
    header += struct.pack("<Q", params.values.size)
    payload = params.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {blob[:4]!r}")
    kind_code, input_dim, num_classes, n_hidden = struct.unpack_from("<BIII", blob, 4)
    offset = 4 + struct.calcsize("<BIII")
    hidden = struct.unpack_from(f"<{n_hidden}I", blob, offset)
    offset += 4 * n_hidden
    (n_values,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    arch = ModelArch(_KIND_NAMES[kind_code], input_dim, num_classes, tuple(hidden))
    if arch.num_params != n_values:
        raise ValueError(f"snapshot holds {n_values} values, architecture needs {arch.num_params}")
    values = np.frombuffer(blob, dtype="<f8", count=n_values, offset=offset).astype(np.float64)
    if blob[offset + 8 * n_values :]:
        raise ValueError("trailing bytes after parameter payload")
    return ModelParams(arch, values)
