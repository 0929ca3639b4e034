"""Run configuration: INI-style ``key = value`` sections merged over defaults."""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .ckks import HeParams
from .dp import PrivacySpec
from .errors import ConfigurationError
from .hybrid import ModelConfig


def _opt(default, section: str, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class FederationConfig:
    # [federation]
    n_clients: int = _opt(10, "federation")
    rounds: int = _opt(20, "federation")
    client_fraction: float = _opt(1.0, "federation")
    local_epochs: int = _opt(10, "federation")
    batch_size: int = _opt(32, "federation")
    learning_rate: float = _opt(1e-3, "federation")
    dirichlet_alpha: float = _opt(0.1, "federation")
    val_fraction: float = _opt(0.1, "federation")
    seed: int = _opt(0, "federation")
    # [aggregation]
    tau: float = _opt(0.5, "aggregation")
    ema_alpha: float = _opt(0.9, "aggregation")
    freeze_threshold: float = _opt(1e-3, "aggregation")
    # [privacy]
    epsilon: float = _opt(1.0, "privacy")
    delta: float = _opt(1e-5, "privacy")
    # [model]
    n_qubits: int = _opt(4, "model")
    n_pqc_layers: int = _opt(2, "model")
    conv_channels: tuple[int, ...] = _opt((16, 32, 64), "model")
    convs_per_block: int = _opt(1, "model")
    kernel_size: int = _opt(3, "model")
    stride: int = _opt(1, "model")
    padding: int = _opt(1, "model")
    pool_window: int = _opt(2, "model")
    hidden_units: tuple[int, ...] = _opt((64,), "model")
    pqc_input_dim: int = _opt(0, "model")  # 0: derive as 2**n_qubits
    # [he]
    ring_degree: int = _opt(4096, "he")
    moduli_bits: tuple[int, ...] = _opt((50, 40, 40, 50), "he")
    scale_bits: int = _opt(40, "he")
    # [data]
    dataset: str = _opt("synthetic", "data")
    data_path: str = _opt("", "data")
    n_train: int = _opt(5000, "data")
    n_test: int = _opt(1000, "data")
    n_classes: int = _opt(10, "data")
    image_size: int = _opt(32, "data")
    channels: int = _opt(3, "data")
    noise: float = _opt(0.3, "data")

    def problems(self) -> list[tuple[str, str]]:
        """``(field, message)`` for every violated constraint."""
        p = []

        def need(cond, name, msg):
            if not cond:
                p.append((name, msg))

        need(self.n_clients >= 1, "n_clients", "must be >= 1")
        need(self.rounds >= 1, "rounds", "must be >= 1")
        need(0 < self.client_fraction <= 1, "client_fraction", "must lie in (0, 1]")
        need(self.local_epochs >= 0, "local_epochs", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.learning_rate > 0, "learning_rate", "must be > 0")
        need(self.dirichlet_alpha > 0, "dirichlet_alpha", "must be > 0")
        need(0 <= self.val_fraction < 1, "val_fraction", "must lie in [0, 1)")
        need(self.seed >= 0, "seed", "must be a non-negative integer")
        need(self.tau > 0, "tau", "must be > 0")
        need(0 <= self.ema_alpha <= 1, "ema_alpha", "must lie in [0, 1]")
        need(self.freeze_threshold >= 0, "freeze_threshold", "must be >= 0")
        need(self.epsilon > 0, "epsilon", "must be > 0")
        need(0 < self.delta < 1, "delta", "must lie in (0, 1)")
        need(1 <= self.n_qubits <= 8, "n_qubits", "must lie in [1, 8]")
        need(self.n_pqc_layers >= 1, "n_pqc_layers", "must be >= 1")
        need(len(self.conv_channels) >= 1 and min(self.conv_channels) >= 1, "conv_channels",
             "needs at least one positive channel count")
        need(all(h >= 1 for h in self.hidden_units), "hidden_units", "must be positive")
        for name in ("convs_per_block", "kernel_size", "stride", "pool_window"):
            need(getattr(self, name) >= 1, name, "must be >= 1")
        need(self.padding >= 0, "padding", "must be >= 0")
        need(self.pqc_input_dim in (0, 1 << self.n_qubits), "pqc_input_dim",
             f"CNN head must produce 2**n_qubits = {1 << self.n_qubits} features")
        need(self.dataset in ("synthetic", "cifar10", "fashion_mnist"), "dataset",
             "must be synthetic, cifar10 or fashion_mnist")
        need(self.dataset == "synthetic" or self.data_path, "data_path", "required for file datasets")
        need(self.n_train >= 0 and self.n_test >= 0, "n_train", "sizes must be >= 0")
        need(self.n_classes >= 2, "n_classes", "must be >= 2")
        need(self.image_size >= 1 and self.channels >= 1, "image_size", "must be positive")
        try:
            self.he_params()
        except ConfigurationError as exc:
            p.append(("ring_degree", str(exc)))
        return p

    def validate(self) -> "FederationConfig":
        probs = self.problems()
        if probs:
            name, msg = probs[0]
            raise ConfigurationError(f"{name}: {msg}")
        return self

    def he_params(self) -> HeParams:
        return HeParams(self.ring_degree, tuple(self.moduli_bits), 2.0**self.scale_bits)

    def privacy_spec(self, rounds: int | None = None) -> PrivacySpec:
        return PrivacySpec(self.epsilon, self.delta, self.rounds if rounds is None else rounds)

    def model_config(self, input_shape, n_classes: int) -> ModelConfig:
        return ModelConfig(
            input_shape=tuple(input_shape),
            n_classes=n_classes,
            n_qubits=self.n_qubits,
            n_pqc_layers=self.n_pqc_layers,
            block_channels=tuple(self.conv_channels),
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            pool_window=self.pool_window,
            convs_per_block=self.convs_per_block,
            hidden_units=tuple(self.hidden_units),
        )

    def to_text(self) -> str:
        """Serialize every field; :func:`parse_config_text` reads it back to an equal config."""
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                s = ", ".join(str(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            sections.setdefault(f.metadata["section"], []).append(f"{f.name} = {s}")
        return "\n".join(f"[{sec}]\n" + "\n".join(lines) + "\n" for sec, lines in sections.items())


_FIELDS = {f.name: f for f in fields(FederationConfig)}
_DEFAULTS = FederationConfig()


def _convert(name: str, raw: str):
    default = getattr(_DEFAULTS, name)
    raw = raw.strip()
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        v = float(raw)
        if math.isnan(v):
            raise ValueError("NaN is not allowed")
        return v
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split()) if raw else ()
    return raw


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines = {}
    section = ""
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


def parse_config_text(text: str, source: str = "<config>") -> FederationConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    where = _line_numbers(text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            loc = f"{source}:{where.get((section, key), '?')}"
            f = _FIELDS.get(key)
            if f is None:
                raise ConfigurationError(f"{loc}: unknown key {key!r} in [{section}]")
            if f.metadata["section"] != section:
                raise ConfigurationError(
                    f"{loc}: key {key!r} belongs in [{f.metadata['section']}], not [{section}]"
                )
            try:
                values[key] = _convert(key, raw)
            except ValueError as exc:
                raise ConfigurationError(f"{loc}: {key} = {raw!r} has the wrong type ({exc})") from None
    cfg = dataclasses.replace(_DEFAULTS, **values)
    probs = cfg.problems()
    if probs:
        name, msg = probs[0]
        sec = _FIELDS[name].metadata["section"]
        loc = f"{source}:{where[(sec, name)]}" if (sec, name) in where else source
        raise ConfigurationError(f"{loc}: {name} {msg}")
    return cfg


def parse_config(path) -> FederationConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), str(path))
