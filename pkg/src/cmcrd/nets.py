"""Feature-extractor networks, written functionally over named parameter dicts.

Two families:

* ``dnn`` — an MLP: input -> hidden widths -> feature layer (linear output),
  ReLU between layers, plus a linear classifier head on the features.
* ``dgcnn`` — a graph net over a (channels x bands) input layout: a learnable
  adjacency is rectified, symmetrically degree-normalized into a scaled graph
  operator, and Chebyshev polynomial filters of order K mix per-channel band
  features; the filtered node features are flattened through a dense stack to
  the feature layer, with the same linear classifier head.

Everything is float64 torch on CPU. Parameters live in plain ``dict[str,
Tensor]`` so training loops, checkpoints, and finite-difference checks all see
the same flat surface. Initialization is seeded through numpy, never torch RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import SchemaError, TrainingError
from .util import rng_from

torch.set_default_dtype(torch.float64)

Params = dict[str, torch.Tensor]

_DNN_HIDDEN_DEFAULT = (256, 128, 64, 64, 32)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; `hidden` means MLP widths for dnn, and
    (graph filter width, dense widths...) for dgcnn."""

    family: str
    input_dim: int
    num_classes: int
    feature_dim: int = 32
    hidden: tuple[int, ...] = _DNN_HIDDEN_DEFAULT
    channels: int = 0
    bands: int = 0
    cheb_order: int = 2
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.family not in ("dnn", "dgcnn"):
            raise SchemaError(f"unknown network family {self.family!r}")
        if self.input_dim < 1 or self.num_classes < 2 or self.feature_dim < 1:
            raise SchemaError("input_dim/feature_dim must be >= 1 and num_classes >= 2")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise SchemaError("hidden widths must be positive and non-empty")
        if self.l2 < 0:
            raise SchemaError("l2 must be non-negative")
        if self.family == "dgcnn":
            if self.channels < 1 or self.bands < 1:
                raise SchemaError("dgcnn needs positive channels and bands")
            if self.channels * self.bands != self.input_dim:
                raise SchemaError(
                    f"channels*bands = {self.channels * self.bands} != input_dim {self.input_dim}"
                )
            if self.cheb_order < 1:
                raise SchemaError("cheb_order must be >= 1")

    def dense_dims(self) -> list[int]:
        """Linear-layer widths of the extractor (input to feature layer)."""
        if self.family == "dnn":
            return [self.input_dim, *self.hidden, self.feature_dim]
        graph_out = self.hidden[0]
        return [self.channels * graph_out, *self.hidden[1:], self.feature_dim]


def param_count(spec: NetworkSpec) -> int:
    """Closed-form number of scalar parameters for a spec."""
    dims = spec.dense_dims()
    n = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    n += spec.feature_dim * spec.num_classes + spec.num_classes  # classifier head
    if spec.family == "dgcnn":
        n += spec.channels * spec.channels  # adjacency
        n += (spec.cheb_order + 1) * spec.bands * spec.hidden[0] + spec.hidden[0]
    return n


def init_params(spec: NetworkSpec, seed: int) -> Params:
    """Deterministic fan-in-scaled uniform init: W, b ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    The dgcnn adjacency starts as a small symmetric positive matrix so the
    rectifier is active (and differentiable) everywhere at step zero.
    """
    rng = rng_from(seed)
    params: dict[str, np.ndarray] = {}

    if spec.family == "dgcnn":
        raw = rng.uniform(0.005, 0.015, size=(spec.channels, spec.channels))
        params["adj"] = (raw + raw.T) / 2.0
        graph_out = spec.hidden[0]
        bound = 1.0 / math.sqrt(spec.bands)
        for k in range(spec.cheb_order + 1):
            params[f"cheb{k}.w"] = rng.uniform(-bound, bound, size=(spec.bands, graph_out))
        params["cheb.b"] = rng.uniform(-bound, bound, size=graph_out)

    dims = spec.dense_dims()
    for i in range(len(dims) - 1):
        bound = 1.0 / math.sqrt(dims[i])
        params[f"lin{i}.w"] = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i]))
        params[f"lin{i}.b"] = rng.uniform(-bound, bound, size=dims[i + 1])
    bound = 1.0 / math.sqrt(spec.feature_dim)
    params["head.w"] = rng.uniform(-bound, bound, size=(spec.num_classes, spec.feature_dim))
    params["head.b"] = rng.uniform(-bound, bound, size=spec.num_classes)

    return {k: torch.tensor(v, dtype=torch.float64) for k, v in params.items()}


@dataclass
class ForwardResult:
    features: torch.Tensor  # (B, feature_dim)
    logits: torch.Tensor  # (B, num_classes)
    probs: torch.Tensor  # softmax(logits), rows sum to 1
    hidden: tuple[torch.Tensor, ...] = ()  # post-activation extractor taps (+ features last)


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.tensor(np.asarray(x), dtype=torch.float64)


def _dense_stack(spec: NetworkSpec, params: Params, h: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    taps = []
    n_layers = len(spec.dense_dims()) - 1
    for i in range(n_layers):
        h = h @ params[f"lin{i}.w"].T + params[f"lin{i}.b"]
        if i < n_layers - 1:
            h = F.relu(h)
            taps.append(h)
    return h, taps


def forward(spec: NetworkSpec, params: Params, x, want_hidden: bool = False) -> ForwardResult:
    """Run the extractor + classifier head. `x` is (B, input_dim)."""
    h = as_tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise SchemaError(f"expected input (*, {spec.input_dim}), got {tuple(h.shape)}")
    taps: list[torch.Tensor] = []

    if spec.family == "dgcnn":
        b = h.shape[0]
        nodes = h.reshape(b, spec.channels, spec.bands)
        adj = F.relu(params["adj"])
        deg = adj.sum(dim=1)
        dinv = torch.rsqrt(deg + 1e-8)  # guard isolated channels
        op = -(dinv.unsqueeze(1) * adj * dinv.unsqueeze(0))  # scaled operator, lambda_max ~ 2
        t_prev2 = nodes
        t_prev1 = torch.einsum("ij,bjf->bif", op, nodes)
        acc = t_prev2 @ params["cheb0.w"] + t_prev1 @ params["cheb1.w"]
        for k in range(2, spec.cheb_order + 1):
            t_k = 2.0 * torch.einsum("ij,bjf->bif", op, t_prev1) - t_prev2
            acc = acc + t_k @ params[f"cheb{k}.w"]
            t_prev2, t_prev1 = t_prev1, t_k
        g = F.relu(acc + params["cheb.b"])
        h = g.reshape(b, spec.channels * spec.hidden[0])
        taps.append(h)

    features, dense_taps = _dense_stack(spec, params, h)
    taps.extend(dense_taps)
    taps.append(features)
    logits = features @ params["head.w"].T + params["head.b"]
    probs = F.softmax(logits, dim=-1)
    return ForwardResult(features=features, logits=logits, probs=probs,
                         hidden=tuple(taps) if want_hidden else ())


def backward(spec: NetworkSpec, params: Params, x,
             grad_features: torch.Tensor | None = None,
             grad_logits: torch.Tensor | None = None) -> Params:
    """Vector-Jacobian product: gradients of <grad_features, features> +
    <grad_logits, logits> with respect to every parameter."""
    if grad_features is None and grad_logits is None:
        raise ValueError("provide grad_features and/or grad_logits")
    live = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    out = forward(spec, live, x)
    total = out.logits.new_zeros(())
    if grad_features is not None:
        total = total + (out.features * as_tensor(grad_features)).sum()
    if grad_logits is not None:
        total = total + (out.logits * as_tensor(grad_logits)).sum()
    grads = torch.autograd.grad(total, list(live.values()), allow_unused=True)
    return {k: (g if g is not None else torch.zeros_like(p))
            for (k, p), g in zip(live.items(), grads)}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Hand-rolled first-order update rules over named parameter dicts.

    Weight decay is the classic form: `l2 * theta` is added to the gradient
    before the rule-specific update.
    """

    rule: str = "sgd"  # sgd | momentum | adam
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slots: dict[str, dict[str, torch.Tensor]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rule not in ("sgd", "momentum", "adam"):
            raise SchemaError(f"unknown optimizer rule {self.rule!r}")
        if self.lr <= 0:
            raise SchemaError("learning rate must be > 0")
        if self.weight_decay < 0:
            raise SchemaError("weight_decay must be >= 0")


def opt_step(state: OptimizerState, params: Params, grads: Params, where: str = "") -> Params:
    """Apply one update; returns fresh detached parameters. Raises TrainingError
    on any non-finite gradient (message names the parameter and `where`)."""
    new: Params = {}
    t = state.step_count + 1
    for name, p in params.items():
        g = grads[name]
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name!r}{' at ' + where if where else ''}")
        g = g.detach()
        if state.weight_decay:
            g = g + state.weight_decay * p.detach()
        if state.rule == "sgd":
            upd = state.lr * g
        elif state.rule == "momentum":
            slot = state.slots.setdefault(name, {"v": torch.zeros_like(p)})
            slot["v"] = state.momentum * slot["v"] + g
            upd = state.lr * slot["v"]
        else:  # adam
            slot = state.slots.setdefault(name, {"m": torch.zeros_like(p), "v": torch.zeros_like(p)})
            slot["m"] = state.beta1 * slot["m"] + (1 - state.beta1) * g
            slot["v"] = state.beta2 * slot["v"] + (1 - state.beta2) * g * g
            m_hat = slot["m"] / (1 - state.beta1**t)
            v_hat = slot["v"] / (1 - state.beta2**t)
            upd = state.lr * m_hat / (torch.sqrt(v_hat) + state.eps)
        new[name] = (p.detach() - upd).detach()
    state.step_count = t
    return new


def make_loss_closure(spec: NetworkSpec, x, fn: Callable[[ForwardResult], torch.Tensor]):
    """Utility for gradient checks: params dict -> scalar loss."""

    def closure(params: Params) -> torch.Tensor:
        return fn(forward(spec, params, x, want_hidden=True))

    return closure
