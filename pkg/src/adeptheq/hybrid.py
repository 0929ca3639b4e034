"""The composed model ``FC4(PQC(CNN(x)))`` and its end-to-end gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import nn, quantum
from .errors import ConfigurationError, InputError

CLASSICAL = "classical"
QUANTUM = "quantum"
FINAL = "final_classifier"

EPS_NORM = 1e-12


@dataclass
class Layer:
    name: str
    tag: str
    tensors: dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "Layer":
        return Layer(self.name, self.tag, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in sorted(self.tensors)])


@dataclass
class LayeredParameters:
    """Ordered, named parameter groups; exactly one quantum and one final-classifier group."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        tags = [l.tag for l in self.layers]
        if self.layers and (tags.count(QUANTUM) != 1 or tags.count(FINAL) != 1):
            raise ConfigurationError(
                f"need exactly one quantum and one final_classifier layer, got tags {tags}"
            )

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def __contains__(self, name: str) -> bool:
        return any(l.name == name for l in self.layers)

    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    def tags(self) -> dict[str, str]:
        return {l.name: l.tag for l in self.layers}

    def sizes(self) -> dict[str, int]:
        return {l.name: l.size for l in self.layers}

    @property
    def num_params(self) -> int:
        return sum(l.size for l in self.layers)

    def copy(self) -> "LayeredParameters":
        return LayeredParameters([l.copy() for l in self.layers])

    def quantum_layer(self) -> Layer:
        return next(l for l in self.layers if l.tag == QUANTUM)

    def final_layer(self) -> Layer:
        return next(l for l in self.layers if l.tag == FINAL)

    def zeros_like(self) -> "LayeredParameters":
        return LayeredParameters(
            [Layer(l.name, l.tag, {k: np.zeros_like(v) for k, v in l.tensors.items()}) for l in self.layers]
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([l.tensors[k].ravel() for l in self.layers for k in sorted(l.tensors)])

    def assign_flat(self, vec: np.ndarray) -> "LayeredParameters":
        out = self.copy()
        pos = 0
        for l in out.layers:
            for k in sorted(l.tensors):
                t = l.tensors[k]
                l.tensors[k] = np.asarray(vec[pos : pos + t.size], dtype=np.float64).reshape(t.shape)
                pos += t.size
        return out


def fc4_to_vector(layer: Layer) -> np.ndarray:
    """Flatten the classifier head as ``W`` (row-major) followed by ``b``."""
    return np.concatenate([layer.tensors["weight"].ravel(), layer.tensors["bias"].ravel()])


def fc4_from_vector(vec: np.ndarray, n_classes: int, n_features: int) -> dict[str, np.ndarray]:
    n_w = n_classes * n_features
    return {
        "weight": np.asarray(vec[:n_w], dtype=np.float64).reshape(n_classes, n_features),
        "bias": np.asarray(vec[n_w : n_w + n_classes], dtype=np.float64),
    }


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int] = (3, 32, 32)
    n_classes: int = 10
    n_qubits: int = 4
    n_pqc_layers: int = 2
    block_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    pool_window: int = 2
    convs_per_block: int = 1
    hidden_units: tuple[int, ...] = (64,)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= quantum.MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in [1, {quantum.MAX_QUBITS}]")
        if self.n_classes < 2:
            raise ConfigurationError("n_classes must be at least 2")
        if self.n_pqc_layers < 1:
            raise ConfigurationError("n_pqc_layers must be positive")

    @property
    def cnn(self) -> nn.CNNSpec:
        return nn.CNNSpec(
            input_shape=tuple(self.input_shape),
            block_channels=tuple(self.block_channels),
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            pool_window=self.pool_window,
            convs_per_block=self.convs_per_block,
            hidden_units=tuple(self.hidden_units),
            output_dim=1 << self.n_qubits,
        )

    @property
    def schedule(self) -> quantum.CnotSchedule:
        return quantum.ring_schedule(self.n_qubits, self.n_pqc_layers)


def init_params(config: ModelConfig, rng: np.random.Generator) -> LayeredParameters:
    layers = [Layer(name, CLASSICAL, t) for name, t in nn.init_cnn(config.cnn, rng).items()]
    angles = rng.uniform(0.0, 2 * np.pi, size=(config.n_pqc_layers, config.n_qubits, 3))
    layers.append(Layer("pqc", QUANTUM, {"angles": angles}))
    n = config.n_qubits
    w = nn.glorot_uniform(rng, (config.n_classes, n), n, config.n_classes)
    layers.append(Layer("fc4", FINAL, {"weight": w, "bias": np.zeros(config.n_classes)}))
    return LayeredParameters(layers)


def normalize_bridge(v):
    """Project CNN features onto the unit sphere; returns ``(x_hat, norms)``."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norms, EPS_NORM), norms


def normalize_bridge_backward(grad_xhat, x_hat, norms):
    """Apply ``(I - x_hat x_hat^T) / ||v||`` (or ``I / eps`` below the floor)."""
    g = np.asarray(grad_xhat, dtype=np.float64)
    projected = g - x_hat * np.sum(g * x_hat, axis=-1, keepdims=True)
    floor = norms < EPS_NORM
    return np.where(floor, g / EPS_NORM, projected / np.maximum(norms, EPS_NORM))


@dataclass
class ForwardTrace:
    cnn_cache: list
    v: np.ndarray
    x_hat: np.ndarray
    norms: np.ndarray
    q_out: np.ndarray


def _cnn_params(params: LayeredParameters) -> dict[str, dict[str, np.ndarray]]:
    return {l.name: l.tensors for l in params if l.tag == CLASSICAL}


def forward(x, params: LayeredParameters, config: ModelConfig):
    """Logits for an image or batch of images; returns ``(logits, trace)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    v, cache = nn.cnn_forward(xb, _cnn_params(params), config.cnn)
    x_hat, norms = normalize_bridge(v)
    angles = params.quantum_layer().tensors["angles"]
    q_out = quantum.circuit_expectations(x_hat, angles, config.schedule)
    fc4 = params.final_layer().tensors
    logits = nn.dense_forward(q_out, fc4["weight"], fc4["bias"])
    trace = ForwardTrace(cache, v, x_hat, norms, q_out)
    return (logits[0] if single else logits), trace


def loss_and_grads(images, labels, params: LayeredParameters, config: ModelConfig,
                   skip: frozenset[str] | set[str] = frozenset()):
    """Mean cross-entropy over a batch and its gradient for every layer.

    Layers named in ``skip`` get zero gradients and, when no trainable layer
    sits upstream of them, the corresponding backward work is not done.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim == 3:
        images = images[None]
        labels = np.atleast_1d(labels)
    B = images.shape[0]
    if B == 0:
        raise InputError("loss_and_grads needs a non-empty batch")

    logits, tr = forward(images, params, config)
    losses, dlogits = nn.softmax_cross_entropy(logits, labels)
    # sequential summation in sample order keeps the mean reproducible
    loss = float(sum(losses.tolist()) / B)
    dlogits = dlogits / B

    grads = params.zeros_like()
    fc4 = params.final_layer()
    dz, gw, gb = nn.dense_backward(dlogits, tr.q_out, fc4.tensors["weight"])
    if fc4.name not in skip:
        grads[fc4.name].tensors["weight"] = gw
        grads[fc4.name].tensors["bias"] = gb

    q = params.quantum_layer()
    angles = q.tensors["angles"]
    if q.name not in skip:
        jac = quantum.parameter_shift_grad(tr.x_hat, angles, config.schedule)  # (B, L, n, 3, n)
        grads[q.name].tensors["angles"] = np.einsum("bi,blqki->lqk", dz, jac)

    cnn_trainable = [l.name for l in params if l.tag == CLASSICAL and l.name not in skip]
    if cnn_trainable:
        adj = quantum.input_adjoint_grad(tr.x_hat, angles, config.schedule)  # (B, n, 2^n)
        dxhat = np.einsum("bi,bij->bj", dz, adj)
        dv = normalize_bridge_backward(dxhat, tr.x_hat, tr.norms)
        cnn_grads = nn.cnn_backward(dv, tr.cnn_cache, _cnn_params(params), config.cnn)
        for name in cnn_trainable:
            grads[name].tensors.update(cnn_grads[name])
    return loss, grads


def predict(x, params: LayeredParameters, config: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Logits for a dataset, evaluated in chunks."""
    x = np.asarray(x, dtype=np.float64)
    out = [forward(x[i : i + batch_size], params, config)[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)
