"""Federation driver: partition, local training, privatize, encrypt, aggregate, evaluate."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import ckks, dp, hybrid, nn, server
from .config import FederationConfig
from .data import Dataset, load_cifar10, load_fashion_mnist, synthetic_split
from .errors import ConfigurationError, InputError, ProtocolError
from .hybrid import FINAL, LayeredParameters, ModelConfig

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ partitioning

def dirichlet_partition(labels, n_clients: int, alpha: float, rng: np.random.Generator,
                        min_size: int = 1, max_attempts: int = 1000) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet(alpha) proportions.

    Draws are repeated until every client holds ``min_size`` samples; if that
    never happens, the largest shards donate samples to the empty ones.
    """
    labels = np.asarray(labels)
    if n_clients < 1:
        raise ConfigurationError("n_clients must be >= 1")
    if not alpha > 0:
        raise ConfigurationError(f"Dirichlet alpha must be > 0, got {alpha}")
    if len(labels) < n_clients * min_size:
        raise ConfigurationError(
            f"{len(labels)} samples cannot give {n_clients} clients {min_size} sample(s) each"
        )
    classes = np.unique(labels)
    for _ in range(max_attempts):
        shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for k, part in enumerate(np.split(idx, cuts)):
                shards[k].append(part)
        parts = [np.sort(np.concatenate(s)) for s in shards]
        if min(len(p) for p in parts) >= min_size:
            return parts
    parts = [list(p) for p in parts]
    for p in parts:
        while len(p) < min_size:
            donor = max(parts, key=len)
            p.append(donor.pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def class_entropy(labels, n_classes: int) -> float:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(float)
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


# ------------------------------------------------------------------ wire format

_UPDATE_MAGIC = b"AHQU"
_UPDATE_VERSION = 1


@dataclass
class ClientUpdate:
    """What a client sends: unfrozen plaintext layers, the encrypted classifier,
    and its privatized accuracy. The raw accuracy has no field here."""

    client_id: int
    round: int
    layers: dict[str, dict[str, np.ndarray]]
    fc4_ciphertext: ckks.Ciphertext | None
    privatized_accuracy: dp.PrivatizedAccuracy
    m_val: int
    n_train: int

    def to_bytes(self) -> bytes:
        blobs = []
        layer_meta = []
        for name in sorted(self.layers):
            tmeta = []
            for key in sorted(self.layers[name]):
                arr = np.ascontiguousarray(self.layers[name][key], dtype="<f8")
                tmeta.append({"key": key, "shape": list(arr.shape)})
                blobs.append(arr.tobytes())
            layer_meta.append({"name": name, "tensors": tmeta})
        ct = b"" if self.fc4_ciphertext is None else ckks.serialize_ciphertext(self.fc4_ciphertext)
        header = json.dumps(
            {
                "client_id": self.client_id,
                "round": self.round,
                "privatized_accuracy": self.privatized_accuracy.value,
                "sensitivity": self.privatized_accuracy.sensitivity,
                "m_val": self.m_val,
                "n_train": self.n_train,
                "layers": layer_meta,
                "ciphertext_bytes": len(ct),
            },
            sort_keys=True,
        ).encode()
        return (_UPDATE_MAGIC + struct.pack("<II", _UPDATE_VERSION, len(header)) + header
                + b"".join(blobs) + ct)

    @classmethod
    def from_bytes(cls, data: bytes, he_params: ckks.HeParams) -> "ClientUpdate":
        if data[:4] != _UPDATE_MAGIC:
            raise ProtocolError("not a client update")
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != _UPDATE_VERSION:
            raise ProtocolError(f"unsupported update version {version}")
        pos = 12
        head = json.loads(data[pos : pos + hlen])
        pos += hlen
        layers = {}
        for lm in head["layers"]:
            tensors = {}
            for tm in lm["tensors"]:
                n = int(np.prod(tm["shape"], dtype=np.int64))
                tensors[tm["key"]] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(tm["shape"]).copy()
                pos += 8 * n
            layers[lm["name"]] = tensors
        ct = None
        if head["ciphertext_bytes"]:
            ct = ckks.deserialize_ciphertext(data[pos : pos + head["ciphertext_bytes"]], he_params)
        acc = dp.PrivatizedAccuracy(head["privatized_accuracy"], head["sensitivity"],
                                    head["client_id"], head["round"])
        return cls(head["client_id"], head["round"], layers, ct, acc, head["m_val"], head["n_train"])


# ------------------------------------------------------------------ client side

def evaluate_global(params: LayeredParameters, test: Dataset, model: ModelConfig,
                    batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy over ``test``."""
    if len(test) == 0:
        raise InputError("evaluation set is empty")
    logits = hybrid.predict(test.images, params, model, batch_size)
    losses, _ = nn.softmax_cross_entropy(logits, test.labels)
    correct = int((logits.argmax(axis=1) == test.labels).sum())
    return float(sum(losses.tolist()) / len(test)), correct / len(test)


def accuracy_count(params: LayeredParameters, ds: Dataset, model: ModelConfig) -> int:
    logits = hybrid.predict(ds.images, params, model)
    return int((logits.argmax(axis=1) == ds.labels).sum())


def split_train_val(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = min(int(round(val_fraction * n)), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def local_train(train: Dataset, val: Dataset, global_params: LayeredParameters, model: ModelConfig,
                config: FederationConfig, rng: np.random.Generator,
                frozen: frozenset[str] = frozenset()):
    """Adam mini-batch training from the global model.

    Returns ``(local_params, validation_accuracy, m_val, mean_train_loss)``.
    Frozen layers are neither updated nor (later) transmitted. With an empty
    validation split the training accuracy stands in, with ``m_val`` the
    training-set size.
    """
    params = global_params.copy()
    states = {
        (l.name, k): nn.AdamState.zeros_like(t)
        for l in params if l.name not in frozen for k, t in l.tensors.items()
    }
    losses = []
    n = len(train)
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = hybrid.loss_and_grads(train.images[idx], train.labels[idx], params, model, frozen)
            losses.append(loss)
            for (name, key), st in states.items():
                layer = params[name]
                layer.tensors[key], states[(name, key)] = nn.adam_step(
                    layer.tensors[key], grads[name].tensors[key], st, config.learning_rate
                )
    if len(val) == 0:
        log.warning("empty validation split; using training accuracy")
        val = train
    m = len(val)
    acc = accuracy_count(params, val, model) / m
    return params, acc, m, (float(np.mean(losses)) if losses else float("nan"))


# ------------------------------------------------------------------ round state

@dataclass
class RoundMetrics:
    round: int
    test_loss: float
    test_accuracy: float
    selected_clients: list[int]
    privatized_accuracies: list[float]
    weights: list[float]
    sample_weights: list[float]
    frozen_layers: list[str]
    params_per_client: int
    transmitted_params: int
    transmitted_bytes: int
    global_params: int
    epsilon_total: float
    mean_train_loss: float
    ema_scores: dict[str, float]
    duration_s: float


@dataclass
class Client:
    client_id: int
    train: Dataset
    val: Dataset


@dataclass
class FederationState:
    config: FederationConfig
    model: ModelConfig
    global_params: LayeredParameters
    freeze: server.FreezeState
    keys: ckks.KeyPair
    clients: list[Client]
    test: Dataset
    round: int = 0
    metrics: list[RoundMetrics] = field(default_factory=list)


def load_data(config: FederationConfig) -> tuple[Dataset, Dataset]:
    if config.dataset == "synthetic":
        rng = dp.stream_rng(config.seed, dp.STREAM_DATA)
        return synthetic_split(config.n_train, config.n_test, config.n_classes, rng,
                               config.image_size, config.channels, config.noise)
    if config.dataset == "cifar10":
        return load_cifar10(config.data_path, config.n_train or None, config.n_test or None)
    return load_fashion_mnist(config.data_path, config.n_train or None, config.n_test or None)


def init_state(config: FederationConfig, train: Dataset, test: Dataset) -> FederationState:
    config.validate()
    model = config.model_config(train.input_shape, train.n_classes)
    model.cnn.flat_dim()  # surfaces architecture errors before round 1
    parts = dirichlet_partition(train.labels, config.n_clients, config.dirichlet_alpha,
                                dp.stream_rng(config.seed, dp.STREAM_PARTITION), min_size=2)
    clients = []
    for cid, idx in enumerate(parts):
        tr, va = split_train_val(len(idx), config.val_fraction, dp.stream_rng(config.seed, dp.STREAM_SPLIT, cid))
        clients.append(Client(cid, train.subset(idx[tr]), train.subset(idx[va])))
    params = hybrid.init_params(model, dp.stream_rng(config.seed, dp.STREAM_INIT))
    keys = ckks.keygen(config.he_params(), dp.stream_rng(config.seed, dp.STREAM_HE))
    freeze = server.FreezeState(config.freeze_threshold, config.ema_alpha)
    return FederationState(config, model, params, freeze, keys, clients, test)


def client_round(client: Client, state: FederationState, t: int) -> tuple[bytes, float]:
    """Train one client and produce its serialized update (plus its mean loss)."""
    cfg = state.config
    frozen = frozenset(state.freeze.frozen_layers())
    local, acc, m, loss = local_train(client.train, client.val, state.global_params, state.model, cfg,
                                      dp.stream_rng(cfg.seed, dp.STREAM_TRAIN, client.client_id, t), frozen)
    priv = dp.privatize_accuracy(acc, m, cfg.epsilon, dp.stream_rng(cfg.seed, dp.STREAM_DP, client.client_id, t),
                                 client.client_id, t)
    layers = {}
    ct = None
    for layer in local:
        if layer.name in frozen:
            continue
        if layer.tag == FINAL:
            ct = ckks.encrypt_vector(hybrid.fc4_to_vector(layer), state.keys.public,
                                     dp.stream_rng(cfg.seed, dp.STREAM_HE, client.client_id, t))
        else:
            layers[layer.name] = layer.tensors
    update = ClientUpdate(client.client_id, t, layers, ct, priv, m, len(client.train))
    return update.to_bytes(), loss


def run_round(state: FederationState) -> tuple[FederationState, RoundMetrics]:
    start = time.perf_counter()
    cfg = state.config
    t = state.round + 1
    k = math.ceil(cfg.client_fraction * len(state.clients))
    chosen = dp.stream_rng(cfg.seed, dp.STREAM_SELECT, t).choice(len(state.clients), size=k, replace=False)
    selected = sorted(int(c) for c in chosen)

    frozen_now = state.freeze.frozen_layers()
    sizes = state.global_params.sizes()
    per_client = sum(s for name, s in sizes.items() if name not in frozen_now)

    blobs, losses = [], []
    for cid in selected:
        blob, loss = client_round(state.clients[cid], state, t)
        blobs.append(blob)
        losses.append(loss)

    # server side: only bytes cross the boundary
    he_params = cfg.he_params()
    updates = [ClientUpdate.from_bytes(b, he_params) for b in blobs]
    weights = server.compute_weights([u.privatized_accuracy.value for u in updates], cfg.tau)
    n_train = np.array([u.n_train for u in updates], dtype=np.float64)
    previous = state.global_params
    new_global = server.aggregate(updates, weights, state.freeze, previous, state.keys)

    importance = {l.name: server.layer_importance(new_global[l.name], previous[l.name]) for l in new_global}
    state.freeze.observe(importance)
    state.freeze = server.freeze_mask(state.freeze, new_global.tags())
    state.global_params = new_global
    state.round = t

    test_loss, test_acc = evaluate_global(new_global, state.test, state.model)
    metrics = RoundMetrics(
        round=t,
        test_loss=test_loss,
        test_accuracy=test_acc,
        selected_clients=selected,
        privatized_accuracies=[u.privatized_accuracy.value for u in updates],
        weights=[float(w) for w in weights.weights],
        sample_weights=[float(x) for x in n_train / n_train.sum()],
        frozen_layers=list(frozen_now),
        params_per_client=per_client,
        transmitted_params=per_client * len(selected),
        transmitted_bytes=sum(len(b) for b in blobs),
        global_params=new_global.num_params,
        epsilon_total=dp.compose_privacy(cfg.privacy_spec(rounds=t)),
        mean_train_loss=float(np.mean(losses)),
        ema_scores=dict(state.freeze.scores),
        duration_s=time.perf_counter() - start,
    )
    state.metrics.append(metrics)
    return state, metrics


def run_federation(config: FederationConfig, train: Dataset | None = None, test: Dataset | None = None,
                   on_round=None) -> list[RoundMetrics]:
    """Run ``config.rounds`` rounds; ``on_round(state, metrics)`` is called after each."""
    config.validate()
    if train is None or test is None:
        train, test = load_data(config)
    state = init_state(config, train, test)
    budget = dp.compose_privacy(config.privacy_spec())
    log.info("privacy: eps_total after %d rounds = %.4f (delta=%g)", config.rounds, budget, config.delta)
    for _ in range(config.rounds):
        state, m = run_round(state)
        if on_round is not None:
            on_round(state, m)
    return state.metrics
