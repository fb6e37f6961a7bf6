"""A small feed-forward classifier with manual backpropagation.

The network is a plain MLP: input -> hidden layers -> logits.  The
activation of the last hidden layer is the retrieval embedding; one
inverted-scaling dropout mask sits between it and the logits head, so
evaluation needs no rescale.  Everything is float64 and deterministic
given explicit seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, InvalidDimension, InvalidState

CHECKPOINT_MAGIC = b"MPNET001"


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


_ACTIVATION_CODES = {Activation.RELU: 0, Activation.TANH: 1}
_ACTIVATION_FROM_CODE = {code: act for act, code in _ACTIVATION_CODES.items()}


@dataclass
class ModelParams:
    """Weight matrices (fan_in x fan_out) and bias vectors per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidDimension("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.size:
                raise InvalidDimension(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise InvalidDimension(
                    f"layer {i}: fan-in {w.shape[0]} does not chain from previous "
                    f"fan-out {self.weights[i - 1].shape[1]}"
                )

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def embedding_dim(self) -> int:
        """Width of the penultimate layer (the retrieval embedding)."""
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptimizerState:
    """Velocity buffers for classical momentum SGD."""

    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    learning_rate: float
    momentum: float


@dataclass
class ForwardCache:
    """Intermediate activations kept for backprop; tied to one params object."""

    params: ModelParams
    inputs: np.ndarray
    pre_acts: list[np.ndarray]
    hidden_acts: list[np.ndarray]
    dropout_mask: np.ndarray | None
    dropped_embedding: np.ndarray
    logits: np.ndarray
    single: bool


def init_params(layer_sizes, seed, scale: float = 1.0,
                activation: Activation = Activation.RELU) -> ModelParams:
    """Seeded initialization: W ~ Normal(0, scale/sqrt(fan_in)), biases zero."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise InvalidDimension("need at least input and output widths")
    if any(s < 1 for s in sizes):
        raise InvalidDimension(f"layer sizes must be positive, got {sizes}")
    if scale < 0:
        raise InvalidConfig("scale must be >= 0")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = scale / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, activation)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward(params: ModelParams, features, dropout_rate: float = 0.0,
            dropout_seed=None, train_mode: bool = False):
    """Run the network on one sample (1-d) or a batch (2-d).

    Returns ``(logits, cache, embedding)``.  The embedding is the
    penultimate activation before dropout.  In train mode with a nonzero
    dropout rate an inverted-scaling mask is drawn from ``dropout_seed``;
    in eval mode dropout is the identity.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise InvalidDimension(
            f"features have width {x.shape[-1]}, network expects {params.layer_sizes[0]}"
        )
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidConfig("dropout_rate must be in [0, 1)")

    pre_acts = []
    hidden_acts = []
    a = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ w + b
        a = _activate(z, params.activation)
        pre_acts.append(z)
        hidden_acts.append(a)

    embedding = a  # input itself when there are no hidden layers
    mask = None
    dropped = embedding
    if train_mode and dropout_rate > 0.0:
        if dropout_seed is None:
            raise InvalidConfig("train-mode dropout needs an explicit dropout_seed")
        rng = np.random.default_rng(dropout_seed)
        keep = 1.0 - dropout_rate
        mask = (rng.random(embedding.shape) >= dropout_rate) / keep
        dropped = embedding * mask

    logits = dropped @ params.weights[-1] + params.biases[-1]
    cache = ForwardCache(params, x, pre_acts, hidden_acts, mask, dropped, logits, single)
    if single:
        return logits[0], cache, embedding[0]
    return logits, cache, embedding


def backward(params: ModelParams, cache: ForwardCache, grad_logits) -> ParamGrads:
    """Backpropagate d(loss)/d(logits) to parameter gradients.

    Gradients are summed over the batch; per-sample reduction weights
    belong in ``grad_logits``.  The cache must come from a forward pass
    on this exact params object.
    """
    if cache.params is not params:
        raise InvalidState("cache was built by a different (or updated) params object")
    g = np.asarray(grad_logits, dtype=np.float64)
    if cache.single:
        if g.ndim != 1:
            raise InvalidDimension("forward saw a single sample; grad_logits must be 1-d")
        g = g[np.newaxis, :]
    if g.shape != cache.logits.shape and g.shape != (cache.inputs.shape[0], cache.logits.shape[-1]):
        raise InvalidDimension(
            f"grad_logits shape {g.shape} does not match logits {cache.logits.shape}"
        )

    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)

    grad_w[-1] = cache.dropped_embedding.T @ g
    grad_b[-1] = g.sum(axis=0)
    delta = g @ params.weights[-1].T
    if cache.dropout_mask is not None:
        delta = delta * cache.dropout_mask

    for i in range(len(params.weights) - 2, -1, -1):
        delta = delta * _activation_grad(cache.pre_acts[i], cache.hidden_acts[i],
                                         params.activation)
        prev = cache.inputs if i == 0 else cache.hidden_acts[i - 1]
        grad_w[i] = prev.T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i].T

    return ParamGrads(grad_w, grad_b)


def init_optimizer(params: ModelParams, learning_rate: float, momentum: float) -> OptimizerState:
    if learning_rate <= 0:
        raise InvalidConfig("learning_rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise InvalidConfig("momentum must be in [0, 1)")
    return OptimizerState(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        learning_rate,
        momentum,
    )


def sgd_step(params: ModelParams, grads: ParamGrads, state: OptimizerState) -> ModelParams:
    """Classical momentum update: v <- m*v - lr*g; w <- w + v.

    Returns a fresh ModelParams (so stale forward caches are detectable);
    velocity buffers are updated in place.
    """
    if len(grads.weights) != len(params.weights):
        raise InvalidDimension("gradient layer count differs from params")
    new_w = []
    new_b = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if grads.weights[i].shape != w.shape or grads.biases[i].shape != b.shape:
            raise InvalidDimension(f"layer {i}: gradient shape mismatch")
        state.velocity_w[i] = state.momentum * state.velocity_w[i] \
            - state.learning_rate * grads.weights[i]
        state.velocity_b[i] = state.momentum * state.velocity_b[i] \
            - state.learning_rate * grads.biases[i]
        new_w.append(w + state.velocity_w[i])
        new_b.append(b + state.velocity_b[i])
    return ModelParams(new_w, new_b, params.activation)


def save_params(params: ModelParams, path) -> None:
    """Write a checkpoint: magic, activation, layer sizes, then row-major
    float64 little-endian weights and biases per layer."""
    sizes = params.layer_sizes
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<BI", _ACTIVATION_CODES[params.activation], len(sizes))
    blob += struct.pack(f"<{len(sizes)}I", *sizes)
    for w, b in zip(params.weights, params.biases):
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_params(path) -> ModelParams:
    """Load a checkpoint written by :func:`save_params`, bit-exactly."""
    blob = Path(path).read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InvalidState(f"{path}: not a model checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    act_code, n_sizes = struct.unpack_from("<BI", blob, offset)
    offset += struct.calcsize("<BI")
    if act_code not in _ACTIVATION_FROM_CODE:
        raise InvalidState(f"{path}: unknown activation code {act_code}")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    offset += struct.calcsize(f"<{n_sizes}I")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        weights.append(
            np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
            .reshape(fan_in, fan_out).copy()
        )
        offset += n * 8
        biases.append(np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset).copy())
        offset += fan_out * 8
    if offset != len(blob):
        raise InvalidState(f"{path}: {len(blob) - offset} trailing bytes")
    return ModelParams(weights, biases, _ACTIVATION_FROM_CODE[act_code])
