"""Dynamic network surgery: prune and splice connections while training.

Each learnable layer carries a weight matrix ``W`` and a binary mask ``T``.
Every iteration runs forward/backward on ``W * T``, then per layer (with a
probability that decays over time) refreshes ``T`` from ``|W|`` using two
frozen thresholds, and finally applies the gradient step to all of ``W``,
pruned entries included.  Pruned weights that regrow past the upper
threshold are spliced back in.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, minibatches
from .errors import ConfigError, ShapeError
from .linalg import abs_stats
from .modelio import CompressionReport, compression_report
from .network import BatchActivations, Network, backward, forward
from .params import MaskedParams, ThresholdSpec

log = logging.getLogger(__name__)

__all__ = [
    "MaskedParams",
    "Phase",
    "SurgeryConfig",
    "ThresholdSpec",
    "TrainState",
    "TriggerSchedule",
    "apply_update",
    "compute_thresholds",
    "learning_rate",
    "run_surgery",
    "surgery_step",
    "train_reference",
    "trigger_probability",
    "update_mask",
]

LR_POLICIES = ("fixed", "step", "inv")


@dataclass(frozen=True)
class TriggerSchedule:
    """Mask-update probability ``(1 + gamma*iter) ** -power`` until ``stop_iter``, then 0."""

    gamma: float = 1e-4
    power: float = 1.0
    stop_iter: int = 2**62

    def __post_init__(self):
        if self.gamma < 0 or self.power < 0 or self.stop_iter < 0:
            raise ConfigError(f"trigger parameters must be non-negative: {self}")


@dataclass(frozen=True)
class Phase:
    """Layers whose masks are maintained for ``iters`` iterations; ``layers=None`` means all."""

    layers: tuple[str, ...] | None
    iters: int


@dataclass
class SurgeryConfig:
    base_lr: float = 0.01
    lr_policy: str = "fixed"
    lr_gamma: float = 0.0
    lr_power: float = 0.0
    lr_stepsize: int = 1
    max_iter: int = 0
    batch_size: int = 64
    trigger: TriggerSchedule = field(default_factory=TriggerSchedule)
    c: float = 0.0
    c_layers: dict[str, float] = field(default_factory=dict)
    band_lo: float = 0.9
    band_hi: float = 1.1
    phases: list[Phase] | None = None
    seed: int = 0
    # experiment plumbing used by the command line
    model: str = "lenet-300-100"
    xor_samples: int = 20000
    xor_noise: float = 0.15
    xor_seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.lr_policy not in LR_POLICIES:
            raise ConfigError(f"lr_policy must be one of {LR_POLICIES}, got {self.lr_policy!r}")
        if self.lr_policy == "step" and self.lr_stepsize < 1:
            raise ConfigError("lr_stepsize must be >= 1 for the step policy")
        if self.max_iter < 0 or self.batch_size < 1:
            raise ConfigError("max_iter must be >= 0 and batch_size >= 1")
        if self.band_lo > self.band_hi or self.band_lo < 0:
            raise ConfigError(f"need 0 <= band_lo <= band_hi, got {self.band_lo}, {self.band_hi}")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")
        if self.phases is not None and sum(p.iters for p in self.phases) != self.max_iter:
            raise ConfigError(
                f"phase budgets sum to {sum(p.iters for p in self.phases)}, max_iter is {self.max_iter}"
            )

    def c_for(self, layer: str) -> float:
        return self.c_layers.get(layer, self.c)

    def resolve_phases(self, layer_names) -> list[tuple[frozenset[int], int]]:
        """Map phases to learnable-layer indices; unknown layer names are rejected."""
        index = {name: i for i, name in enumerate(layer_names)}
        unknown = set(self.c_layers) - set(index)
        if unknown:
            raise ConfigError(f"threshold override for unknown layer(s): {sorted(unknown)}")
        phases = self.phases if self.phases is not None else [Phase(None, self.max_iter)]
        out = []
        for ph in phases:
            if ph.layers is None:
                out.append((frozenset(index.values()), ph.iters))
                continue
            missing = [n for n in ph.layers if n not in index]
            if missing:
                raise ConfigError(f"phase names unknown layer(s) {missing}; network has {list(index)}")
            out.append((frozenset(index[n] for n in ph.layers), ph.iters))
        return out


def learning_rate(cfg: SurgeryConfig, it: int) -> float:
    if cfg.lr_policy == "fixed":
        return cfg.base_lr
    if cfg.lr_policy == "step":
        return cfg.base_lr * cfg.lr_gamma ** (it // cfg.lr_stepsize)
    return cfg.base_lr * (1.0 + cfg.lr_gamma * it) ** (-cfg.lr_power)


@dataclass
class TrainState:
    iter: int
    lr: float
    rng: np.random.Generator
    phases: list[tuple[frozenset[int], int]] = field(default_factory=list)
    loss_history: collections.deque = field(default_factory=lambda: collections.deque(maxlen=100))

    @classmethod
    def start(cls, cfg: SurgeryConfig, net: Network) -> "TrainState":
        # trigger draws get their own stream so minibatch order never depends on them
        rng = np.random.default_rng([cfg.seed, 1])
        return cls(0, learning_rate(cfg, 0), rng, cfg.resolve_phases(net.layer_names))

    def current_phase(self) -> tuple[frozenset[int], int]:
        """Active layer set and the iteration count within the active phase."""
        start = 0
        for layers, iters in self.phases:
            if self.iter < start + iters:
                return layers, self.iter - start
            start += iters
        return frozenset(), self.iter - start


def compute_thresholds(w, c: float, band_lo: float = 0.9, band_hi: float = 1.1) -> ThresholdSpec:
    """Freeze a layer's prune/splice thresholds around ``mean|w| + c*std|w|``."""
    if band_lo > band_hi:
        raise ConfigError(f"band_lo {band_lo} exceeds band_hi {band_hi}")
    mean, std = abs_stats(w)
    t0 = mean + c * std
    a = max(0.0, band_lo * t0)
    b = max(a, band_hi * t0)
    return ThresholdSpec(c=c, band_lo=band_lo, band_hi=band_hi, a=a, b=b, frozen=True)


def update_mask(p: MaskedParams) -> MaskedParams:
    """Prune below ``a``, splice at or above ``b``, leave the band in between alone."""
    th = p.thresholds
    if not th.frozen:
        raise ConfigError("update_mask needs frozen thresholds")
    mag = np.abs(p.w)
    p.t = np.where(mag < th.a, 0.0, np.where(mag >= th.b, 1.0, p.t))
    return p


def trigger_probability(sched: TriggerSchedule, it: int) -> float:
    if it >= sched.stop_iter:
        return 0.0
    return float((1.0 + sched.gamma * it) ** (-sched.power))


def apply_update(p: MaskedParams, grad, beta: float) -> MaskedParams:
    """Gradient step on every weight, masked or not; the mask is left untouched."""
    if not beta > 0:
        raise ConfigError(f"learning rate must be positive, got {beta}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != p.w.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match weights {p.w.shape}")
    p.w -= beta * grad
    return p


def surgery_step(net: Network, cfg: SurgeryConfig, state: TrainState, batch, labels) -> BatchActivations:
    acts = forward(net, batch, labels)
    grads = backward(net, acts, labels)
    active, phase_iter = state.current_phase()
    prob = trigger_probability(cfg.trigger, phase_iter)
    for k, p in enumerate(net.params):
        if k in active and state.rng.random() < prob:
            if not p.thresholds.frozen:
                th = p.thresholds
                p.thresholds = compute_thresholds(p.w, th.c, th.band_lo, th.band_hi)
            update_mask(p)
        apply_update(p, grads[k].weight, state.lr)
        if net.biases[k] is not None:
            net.biases[k] -= state.lr * grads[k].bias
    state.iter += 1
    state.lr = learning_rate(cfg, state.iter)
    state.loss_history.append(acts.loss)
    return acts


def _check_data(net: Network, data: Dataset):
    if data.features.shape[1] != net.input_dim:
        raise ConfigError(f"data has {data.features.shape[1]} features, network expects {net.input_dim}")
    if data.n_classes > net.n_classes:
        raise ConfigError(f"data has {data.n_classes} classes, network predicts {net.n_classes}")


Callback = Callable[[Network, TrainState, BatchActivations], None]


def run_surgery(reference: Network, data: Dataset, cfg: SurgeryConfig,
                callback: Callback | None = None) -> tuple[Network, CompressionReport]:
    """Prune/splice a copy of ``reference`` for ``cfg.max_iter`` iterations.

    Masks start at all ones and thresholds are computed lazily, the first
    time a layer's mask update fires.  ``callback`` runs every
    ``cfg.log_interval`` iterations.
    """
    _check_data(reference, data)
    net = reference.copy()
    for name, p in zip(net.layer_names, net.params):
        p.t = np.ones_like(p.w)
        p.thresholds = ThresholdSpec(c=cfg.c_for(name), band_lo=cfg.band_lo, band_hi=cfg.band_hi)
    state = TrainState.start(cfg, net)
    batches = minibatches(data, cfg.batch_size, cfg.seed)
    while state.iter < cfg.max_iter:
        x, y = next(batches)
        acts = surgery_step(net, cfg, state, x, y)
        if callback is not None and state.iter % cfg.log_interval == 0:
            callback(net, state, acts)
    return net, compression_report(net)


def train_reference(net: Network, data: Dataset, cfg: SurgeryConfig,
                    callback: Callback | None = None) -> Network:
    """Plain minibatch SGD on a copy of ``net``; masks are never touched."""
    _check_data(net, data)
    net = net.copy()
    state = TrainState(0, learning_rate(cfg, 0), np.random.default_rng(cfg.seed))
    batches = minibatches(data, cfg.batch_size, cfg.seed)
    while state.iter < cfg.max_iter:
        x, y = next(batches)
        acts = forward(net, x, y)
        grads = backward(net, acts, y)
        for k, p in enumerate(net.params):
            p.w -= state.lr * grads[k].weight
            if net.biases[k] is not None:
                net.biases[k] -= state.lr * grads[k].bias
        state.iter += 1
        state.lr = learning_rate(cfg, state.iter)
        state.loss_history.append(acts.loss)
        if callback is not None and state.iter % cfg.log_interval == 0:
            callback(net, state, acts)
    return net


# -- config file ---------------------------------------------------------------

_FLOAT_KEYS = {"base_lr", "lr_gamma", "lr_power", "c", "band_lo", "band_hi", "xor_noise"}
_INT_KEYS = {"lr_stepsize", "max_iter", "batch_size", "seed", "xor_samples", "xor_seed", "log_interval"}
_TRIGGER_KEYS = {"trigger_gamma": "gamma", "trigger_power": "power", "trigger_stop_iter": "stop_iter"}
_STR_KEYS = {"lr_policy", "model", "phases"}


def parse_phases(text: str) -> list[Phase]:
    """``conv1+conv2:8000, fc1+fc2:8000``; the layer list ``all`` covers every layer."""
    phases = []
    for group in text.split(","):
        group = group.strip()
        if not group:
            continue
        names, sep, iters = group.rpartition(":")
        if not sep or not names.strip():
            raise ConfigError(f"phase {group!r} is not of the form layers:iters")
        try:
            n = int(iters)
        except ValueError:
            raise ConfigError(f"phase {group!r}: iteration budget {iters!r} is not an integer") from None
        layers = tuple(s.strip() for s in names.split("+") if s.strip())
        phases.append(Phase(None if layers == ("all",) else layers, n))
    if not phases:
        raise ConfigError("empty phases value")
    return phases


def parse_config(text: str, overrides: dict | None = None) -> SurgeryConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); unknown keys are errors."""
    values: dict = {}
    trigger: dict = {}
    c_layers: dict[str, float] = {}
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        items.append((lineno, key.strip(), value.strip()))
    for key, value in (overrides or {}).items():
        items.append((0, key, str(value)))
    for lineno, key, value in items:
        where = f"line {lineno}" if lineno else "override"
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _TRIGGER_KEYS:
                conv = int if key == "trigger_stop_iter" else float
                trigger[_TRIGGER_KEYS[key]] = conv(value)
            elif key == "phases":
                values["phases"] = parse_phases(value)
            elif key in _STR_KEYS:
                values[key] = value
            elif key.startswith("c.") and len(key) > 2:
                c_layers[key[2:]] = float(value)
            else:
                raise ConfigError(f"{where}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: bad value for {key!r}: {value!r}") from None
    if trigger:
        values["trigger"] = TriggerSchedule(**trigger)
    values["c_layers"] = c_layers
    return SurgeryConfig(**values)


def load_config(path, overrides: dict | None = None) -> SurgeryConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), overrides)

