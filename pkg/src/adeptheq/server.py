"""Server side: accuracy-tempered weights, hybrid plaintext/encrypted
aggregation, layer importance EMA and freezing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ckks
from .errors import ConfigurationError, InputError, ProtocolError
from .hybrid import FINAL, QUANTUM, Layer, LayeredParameters, fc4_from_vector


@dataclass(frozen=True)
class AggregationWeights:
    weights: np.ndarray
    tau: float


def compute_weights(privatized_accs, tau: float) -> AggregationWeights:
    """Max-shifted tempered softmax of the privatized accuracies."""
    if not tau > 0:
        raise ConfigurationError(f"softmax temperature must be positive, got {tau}")
    a = np.asarray(privatized_accs, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise InputError("need a non-empty list of accuracies")
    e = np.exp((a - a.max()) / tau)
    return AggregationWeights(e / e.sum(), float(tau))


def layer_importance(now, prev) -> float:
    """L2 norm of the change of one layer (all its tensors together)."""
    if isinstance(now, Layer):
        now, prev = now.flat(), prev.flat()
    now = np.asarray(now, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if now.shape != prev.shape:
        raise InputError(f"layer shape changed: {prev.shape} -> {now.shape}")
    return float(np.linalg.norm((now - prev).ravel()))


def update_ema(prev: float, score: float, alpha: float) -> float:
    return alpha * prev + (1 - alpha) * score


@dataclass
class FreezeState:
    """Per-layer EMA scores and freeze flags.

    Freezing is permanent: a frozen layer is never trained, transmitted or
    aggregated again, so its importance is zero from then on and nothing
    would ever lift its score back over the threshold.
    """

    threshold: float = 1e-3
    ema_alpha: float = 0.9
    scores: dict[str, float] = field(default_factory=dict)
    frozen: dict[str, bool] = field(default_factory=dict)

    def frozen_layers(self) -> list[str]:
        return [name for name, f in self.frozen.items() if f]

    def is_frozen(self, name: str) -> bool:
        return self.frozen.get(name, False)

    def observe(self, importance: dict[str, float]) -> None:
        """Fold one round of importance scores into the EMAs."""
        for name, s in importance.items():
            if name in self.scores:
                self.scores[name] = update_ema(self.scores[name], s, self.ema_alpha)
            else:
                self.scores[name] = s  # first observation seeds the average


def freeze_mask(state: FreezeState, layer_tags: dict[str, str]) -> FreezeState:
    """Freeze every non-quantum layer whose EMA score is strictly below the threshold."""
    missing = set(layer_tags) - set(state.scores)
    if missing:
        raise ProtocolError(f"no importance score for layers {sorted(missing)}")
    frozen = dict(state.frozen)
    for name, tag in layer_tags.items():
        if tag == QUANTUM:
            frozen[name] = False
        else:
            frozen[name] = frozen.get(name, False) or state.scores[name] < state.threshold
    return FreezeState(state.threshold, state.ema_alpha, dict(state.scores), frozen)


def aggregate(updates, weights: AggregationWeights, freeze: FreezeState,
              previous: LayeredParameters, he_keys: ckks.KeyPair | None = None,
              n_classes: int | None = None) -> LayeredParameters:
    """Weighted aggregation of parsed client updates into a new global model.

    Unfrozen classical and quantum layers are averaged in plaintext; the final
    classifier arrives as a ciphertext and is averaged homomorphically, then
    decrypted with the server key. Frozen layers are copied from ``previous``.
    ``updates`` are objects exposing ``layers`` (name -> tensors) and
    ``fc4_ciphertext``.
    """
    w = np.asarray(weights.weights, dtype=np.float64)
    if len(updates) != w.size:
        raise InputError(f"{len(updates)} updates but {w.size} weights")
    out = []
    for layer in previous:
        if freeze.is_frozen(layer.name):
            out.append(layer.copy())
            continue
        if layer.tag == FINAL:
            cts = []
            for u in updates:
                if u.fc4_ciphertext is None:
                    raise ProtocolError(f"client {u.client_id} sent no encrypted {layer.name}")
                cts.append(u.fc4_ciphertext)
            if he_keys is None:
                raise ProtocolError("encrypted layer present but server holds no key")
            summed = ckks.secure_weighted_sum(cts, w)
            n_feat = layer.tensors["weight"].shape[1]
            n_cls = layer.tensors["weight"].shape[0] if n_classes is None else n_classes
            vec = ckks.decrypt_vector(summed, he_keys.secret, n_cls * n_feat + n_cls)
            out.append(Layer(layer.name, layer.tag, fc4_from_vector(vec, n_cls, n_feat)))
            continue
        tensors = {}
        for key, ref in layer.tensors.items():
            acc = np.zeros_like(ref)
            for u, wi in zip(updates, w):
                try:
                    t = u.layers[layer.name][key]
                except KeyError:
                    raise ProtocolError(f"client {u.client_id} update lacks layer {layer.name}.{key}")
                if t.shape != ref.shape:
                    raise ProtocolError(
                        f"client {u.client_id} sent {layer.name}.{key} with shape {t.shape}, expected {ref.shape}"
                    )
                acc = acc + wi * t
            tensors[key] = acc
        out.append(Layer(layer.name, layer.tag, tensors))
    return LayeredParameters(out)
