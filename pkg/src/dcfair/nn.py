"""Dense ReLU classifier with manual backpropagation and momentum SGD."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    vel_w: np.ndarray = field(default=None)
    vel_b: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.vel_w is None:
            self.vel_w = np.zeros_like(self.weights)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.biases)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape


@dataclass
class Mlp:
    layers: List[DenseLayer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError(
                    f"layer widths do not chain: {prev.shape} followed by {nxt.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def sizes(self) -> List[int]:
        return [self.input_dim] + [layer.shape[0] for layer in self.layers]

    def copy(self) -> "Mlp":
        return Mlp(
            [
                DenseLayer(l.weights.copy(), l.biases.copy(), l.vel_w.copy(), l.vel_b.copy())
                for l in self.layers
            ]
        )


def init_mlp(sizes: Sequence[int], seed: int = 0) -> Mlp:
    """Uniform Glorot initialisation; biases start at zero.

    ``sizes`` lists every width from input to output, e.g. ``[d, 128, 128, 128, 2]``.
    """
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {list(sizes)}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(W, np.zeros(fan_out)))
    return Mlp(layers)


@dataclass
class ForwardTrace:
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer; last is the logits
    probs: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: Mlp, X) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected input of shape (n, {model.input_dim}), got {X.shape}")
    inputs, pre = [], []
    h = X
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        inputs.append(h)
        z = h @ layer.weights.T + layer.biases
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return ForwardTrace(inputs, pre, softmax(pre[-1]))


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. softmax outputs to one w.r.t. the logits."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


def softmax_cross_entropy(probs: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, C = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.clip(picked, 1e-300, None))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def backward(model: Mlp, trace: ForwardTrace, grad_logits: np.ndarray):
    """Reverse-mode gradients as a list of ``(dW, db)`` pairs, one per layer.

    For a loss defined on the softmax outputs, convert first with
    :func:`softmax_backward`.
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise ValueError(f"gradient shape {g.shape} does not match logits {trace.logits.shape}")
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        grads[i] = (g.T @ trace.inputs[i], g.sum(axis=0))
        if i > 0:
            g = (g @ layer.weights) * (trace.pre[i - 1] > 0)
    return grads


def sgd_momentum_step(model: Mlp, grads, lr: float, momentum: float = 0.9) -> Mlp:
    """Classic momentum: ``v <- momentum * v + g``, ``theta <- theta - lr * v``."""
    for layer, (dW, db) in zip(model.layers, grads):
        layer.vel_w *= momentum
        layer.vel_w += dW
        layer.vel_b *= momentum
        layer.vel_b += db
        layer.weights -= lr * layer.vel_w
        layer.biases -= lr * layer.vel_b
    return model


def predict(model: Mlp, X) -> np.ndarray:
    return forward(model, X).probs.argmax(axis=1)


def save_checkpoint(model: Mlp, path, meta: dict | None = None) -> None:
    """Write an ``.npz`` checkpoint (see README for the layout)."""
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "sizes": np.array(model.sizes, dtype=np.int64),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for i, layer in enumerate(model.layers):
        arrays[f"W{i}"] = layer.weights
        arrays[f"b{i}"] = layer.biases
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Tuple[Mlp, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = data["sizes"].tolist()
        layers = []
        for i in range(len(sizes) - 1):
            W, b = data[f"W{i}"], data[f"b{i}"]
            if W.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} shape does not match recorded sizes {sizes}")
            layers.append(DenseLayer(W.copy(), b.copy()))
        meta = json.loads(str(data["meta"]))
    return Mlp(layers), meta
