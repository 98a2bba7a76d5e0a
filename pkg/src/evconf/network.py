"""Feed-forward classifier with manual backpropagation.

The network maps a pooled feature vector through fully connected layers.
Layers may be deterministic (weight matrix + bias) or Bayesian (per-weight
Gaussian posterior with mean mu and pre-softplus scale rho, sampled by the
reparameterisation trick).  Gradients are computed by hand and checked
against finite differences in the tests.  AdamW and the Noam learning-rate
schedule live here too, along with JSON checkpoint I/O.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ParseError
from .numeric import SeededStream

__all__ = [
    "LayerSpec",
    "FeedForwardNet",
    "Tape",
    "AdamWState",
    "ScheduleConfig",
    "adamw_step",
    "noam_lr",
    "softplus",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "exponential", "identity")

# exp() underflows to exactly 0.0 below roughly -745; clamping the
# pre-activation keeps exponential outputs strictly positive.
_EXP_FLOOR = -700.0

CHECKPOINT_FORMAT = "evconf-checkpoint"
CHECKPOINT_VERSION = 1


def softplus(x):
    # log(1 + e^x) computed stably on both tails; floored at the smallest
    # normal double so posterior scales stay strictly positive
    x = np.asarray(x, dtype=float)
    return np.maximum(np.logaddexp(0.0, x), np.finfo(float).tiny)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "identity"
    dropout_rate: float = 0.0
    bayesian: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ContractError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ContractError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")


class Tape:
    """Per-forward cache of inputs and masks, consumed once by backward."""

    __slots__ = ("owner", "version", "mode", "caches", "batched")

    def __init__(self, owner, version, mode, caches, batched):
        self.owner = owner
        self.version = version
        self.mode = mode
        self.caches = caches
        self.batched = batched


class FeedForwardNet:
    """Stack of fully connected layers over pooled feature vectors.

    ``params`` is a list with one dict per layer: keys ``w``/``b`` for
    deterministic layers, ``w_mu``/``w_rho``/``b_mu``/``b_rho`` for
    Bayesian ones.
    """

    def __init__(self, specs, params):
        specs = tuple(specs)
        if not specs:
            raise ContractError("network needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.output_dim != b.input_dim:
                raise ContractError(
                    f"layer chain mismatch: {a.output_dim} feeds {b.input_dim}"
                )
        for spec in specs[:-1]:
            if spec.activation == "exponential":
                raise ContractError("exponential activation is only valid on the final layer")
        if len(params) != len(specs):
            raise ContractError("one parameter dict required per layer")
        for spec, layer in zip(specs, params):
            keys = ("w_mu", "w_rho", "b_mu", "b_rho") if spec.bayesian else ("w", "b")
            if set(layer) != set(keys):
                raise ContractError(f"layer parameters must have keys {keys}")
            wkey = keys[0]
            if layer[wkey].shape != (spec.input_dim, spec.output_dim):
                raise ContractError("weight shape inconsistent with layer spec")
            for arr in layer.values():
                if not np.all(np.isfinite(arr)):
                    raise NumericError("non-finite network parameter")
        self.specs = specs
        self.params = [dict(layer) for layer in params]
        self._version = 0

    # -- construction ---------------------------------------------------

    @classmethod
    def initialise(cls, specs, stream: SeededStream) -> "FeedForwardNet":
        """He-initialised weights, zero biases; Bayesian layers get
        He-initialised means and rho ~ U(-4, -3)."""
        params = []
        for spec in specs:
            scale = np.sqrt(2.0 / spec.input_dim)
            shape = (spec.input_dim, spec.output_dim)
            if spec.bayesian:
                params.append(
                    {
                        "w_mu": stream.gen.standard_normal(shape) * scale,
                        "w_rho": stream.gen.uniform(-4.0, -3.0, size=shape),
                        "b_mu": np.zeros(spec.output_dim),
                        "b_rho": stream.gen.uniform(-4.0, -3.0, size=spec.output_dim),
                    }
                )
            else:
                params.append(
                    {
                        "w": stream.gen.standard_normal(shape) * scale,
                        "b": np.zeros(spec.output_dim),
                    }
                )
        return cls(specs, params)

    # -- shape helpers --------------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    @property
    def is_stochastic(self) -> bool:
        return any(s.bayesian or s.dropout_rate > 0.0 for s in self.specs)

    def parameters(self):
        """Yield (layer index, key, array) over every parameter tensor."""
        for i, layer in enumerate(self.params):
            for key in sorted(layer):
                yield i, key, layer[key]

    # -- forward / backward ----------------------------------------------

    def forward(self, x, mode: str = "eval", stream: SeededStream | None = None):
        """Run the network; returns (output, tape).

        ``mode="train"`` applies inverted dropout and samples Bayesian
        weights (a stream is then required when either is present).  In
        ``eval`` mode dropout is skipped; Bayesian layers sample weights
        when a stream is given and fall back to posterior means otherwise.
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"unknown mode {mode!r}")
        a = np.asarray(x, dtype=float)
        batched = a.ndim == 2
        if not batched:
            if a.ndim != 1:
                raise ContractError("input must be a vector or a batch of vectors")
            a = a[None, :]
        if a.shape[1] != self.input_dim:
            raise ContractError(
                f"input dimension {a.shape[1]} does not match network input {self.input_dim}"
            )

        caches = []
        for spec, layer in zip(self.specs, self.params):
            cache = {"x": a}
            if spec.bayesian:
                sample = stream is not None
                if mode == "train" and not sample:
                    raise ContractError("training a Bayesian layer requires a stream")
                if sample:
                    eps_w = stream.gen.standard_normal(layer["w_mu"].shape)
                    eps_b = stream.gen.standard_normal(layer["b_mu"].shape)
                else:
                    eps_w = np.zeros(layer["w_mu"].shape)
                    eps_b = np.zeros(layer["b_mu"].shape)
                w = layer["w_mu"] + softplus(layer["w_rho"]) * eps_w
                b = layer["b_mu"] + softplus(layer["b_rho"]) * eps_b
                cache["eps_w"], cache["eps_b"] = eps_w, eps_b
                cache["w"] = w
            else:
                w, b = layer["w"], layer["b"]
            z = a @ w + b

            if spec.activation == "relu":
                a = np.maximum(z, 0.0)
                cache["act_grad"] = (z > 0.0).astype(float)
            elif spec.activation == "exponential":
                with np.errstate(over="ignore"):
                    a = np.exp(np.maximum(z, _EXP_FLOOR))
                if not np.all(np.isfinite(a)):
                    raise NumericError("exponential activation overflowed")
                cache["act_grad"] = np.where(z > _EXP_FLOOR, a, 0.0)
            else:
                a = z
                cache["act_grad"] = None

            if spec.dropout_rate > 0.0 and mode == "train":
                if stream is None:
                    raise ContractError("dropout in train mode requires a stream")
                keep = 1.0 - spec.dropout_rate
                mask = (stream.gen.random(a.shape) < keep).astype(float) / keep
                a = a * mask
                cache["mask"] = mask
            else:
                cache["mask"] = None
            caches.append(cache)

        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite network output")
        out = a if batched else a[0]
        return out, Tape(self, self._version, mode, caches, batched)

    def backward(self, tape: Tape, output_grad):
        """Gradients of a scalar loss with respect to every parameter.

        ``output_grad`` is d(loss)/d(output) with the same shape the
        matching forward call returned.  Returns a list of dicts shaped
        like ``self.params``.
        """
        if tape.owner is not self or tape.version != self._version:
            raise ContractError("tape does not match the current network parameters")
        g = np.asarray(output_grad, dtype=float)
        if not tape.batched:
            g = g[None, :]
        batch = tape.caches[0]["x"].shape[0]
        if g.shape != (batch, self.output_dim):
            raise ContractError("output_grad shape does not match the forward output")

        grads = [None] * len(self.specs)
        for i in range(len(self.specs) - 1, -1, -1):
            spec, layer, cache = self.specs[i], self.params[i], tape.caches[i]
            if cache["mask"] is not None:
                g = g * cache["mask"]
            if cache["act_grad"] is not None:
                g = g * cache["act_grad"]
            x = cache["x"]
            gw = x.T @ g
            gb = g.sum(axis=0)
            if spec.bayesian:
                sw = _sigmoid(layer["w_rho"])
                sb = _sigmoid(layer["b_rho"])
                grads[i] = {
                    "w_mu": gw,
                    "w_rho": gw * cache["eps_w"] * sw,
                    "b_mu": gb,
                    "b_rho": gb * cache["eps_b"] * sb,
                }
                g = g @ cache["w"].T
            else:
                grads[i] = {"w": gw, "b": gb}
                g = g @ layer["w"].T
        return grads

    def zero_grads(self):
        """Gradient structure filled with zeros, for accumulation."""
        return [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.params]

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "specs": [
                {
                    "input_dim": s.input_dim,
                    "output_dim": s.output_dim,
                    "activation": s.activation,
                    "dropout_rate": s.dropout_rate,
                    "bayesian": s.bayesian,
                }
                for s in self.specs
            ],
            "params": [
                {k: layer[k].tolist() for k in sorted(layer)} for layer in self.params
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeedForwardNet":
        try:
            specs = [LayerSpec(**s) for s in payload["specs"]]
            params = [
                {k: np.asarray(v, dtype=float) for k, v in layer.items()}
                for layer in payload["params"]
            ]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed network payload: {exc}") from exc
        return cls(specs, params)


@dataclass
class ScheduleConfig:
    """Noam schedule: linear warmup to ``peak_lr``, then inverse-sqrt decay."""

    warmup_steps: int = 400
    peak_lr: float = 4.29e-5

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ContractError("warmup_steps must be >= 1")
        if not self.peak_lr > 0.0:
            raise ContractError("peak_lr must be positive")


def noam_lr(step: int, cfg: ScheduleConfig) -> float:
    if step < 1:
        raise ContractError("schedule step must be >= 1")
    return cfg.peak_lr * min(step / cfg.warmup_steps, (cfg.warmup_steps / step) ** 0.5)


class AdamWState:
    """Step counter plus first/second moment accumulators per parameter."""

    def __init__(self, net: FeedForwardNet, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if weight_decay < 0.0:
            raise ContractError("weight_decay must be non-negative")
        self.step = 0
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = net.zero_grads()
        self.v = net.zero_grads()


def adamw_step(net: FeedForwardNet, grads, state: AdamWState, lr: float):
    """One AdamW update in place; decoupled decay runs before the
    moment-based step.  Returns (net, state) for chaining."""
    if len(grads) != len(net.params):
        raise ContractError("gradient structure does not match the network")
    for layer in grads:
        for arr in layer.values():
            if not np.all(np.isfinite(arr)):
                raise NumericError("non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    decay = 1.0 - lr * state.weight_decay
    for i, key, p in net.parameters():
        g = grads[i][key]
        p *= decay
        m = state.m[i][key]
        v = state.v[i][key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    net._version += 1
    return net, state


def save_checkpoint(path, payload: dict) -> None:
    """Write a versioned JSON checkpoint; keys sorted so bytes are stable."""
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    doc.update(payload)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid checkpoint JSON: {exc}", line=exc.lineno) from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a checkpoint file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')!r}")
    return doc
