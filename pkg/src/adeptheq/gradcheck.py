"""Finite-difference check of the hybrid model's hand-wired gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hybrid
from .hybrid import CLASSICAL, FINAL, QUANTUM

# a single 1-channel conv block keeps the check fast while crossing every kind of layer
REDUCED_MODEL = hybrid.ModelConfig(
    input_shape=(1, 8, 8), n_classes=3, block_channels=(1,), hidden_units=(), n_qubits=4, n_pqc_layers=2
)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    per_tag: dict[str, float]

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error <= tol


def _rel(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-7)


def check_gradients(model: hybrid.ModelConfig = REDUCED_MODEL, n_coords: int = 60, seed: int = 0,
                    batch: int = 2, h: float = 1e-5) -> GradCheckResult:
    """Compare backprop against central differences of the batch loss.

    Coordinates are drawn from every layer group (classical, quantum and the
    final classifier) in roughly equal shares.
    """
    rng = np.random.default_rng(seed)
    params = hybrid.init_params(model, rng)
    for layer in params:  # non-zero biases exercise every path
        for k, t in layer.tensors.items():
            layer.tensors[k] = t + 0.1 * rng.standard_normal(t.shape)
    x = rng.standard_normal((batch,) + tuple(model.input_shape))
    y = rng.integers(0, model.n_classes, size=batch)

    _, grads = hybrid.loss_and_grads(x, y, params, model)
    flat, gflat = params.flatten(), grads.flatten()

    owner = np.concatenate([np.full(l.size, l.tag, dtype=object) for l in params])
    groups = [np.flatnonzero(owner == tag) for tag in (CLASSICAL, QUANTUM, FINAL)]
    per_group = max(1, n_coords // 3)
    coords = np.concatenate([rng.choice(g, size=min(per_group, g.size), replace=False) for g in groups])

    per_tag: dict[str, float] = {}
    worst = 0.0
    for i in coords:
        e = np.zeros_like(flat)
        e[i] = h
        lp, _ = hybrid.loss_and_grads(x, y, params.assign_flat(flat + e), model)
        lm, _ = hybrid.loss_and_grads(x, y, params.assign_flat(flat - e), model)
        err = _rel(gflat[i], (lp - lm) / (2 * h))
        worst = max(worst, err)
        per_tag[owner[i]] = max(per_tag.get(owner[i], 0.0), err)
    return GradCheckResult(worst, len(coords), per_tag)
