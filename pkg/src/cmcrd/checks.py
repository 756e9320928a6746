"""Gradient-verification utilities (central finite differences vs autograd).

These back the test suite's derivative checks but are ordinary library code:
`fd_grads` never touches autograd, so it is an independent route to the same
quantity that `autograd_grads` computes analytically.
"""

from __future__ import annotations

from typing import Callable

import torch

Params = dict[str, torch.Tensor]


def autograd_grads(loss_fn: Callable[[Params], torch.Tensor], params: Params) -> Params:
    live = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(live)
    grads = torch.autograd.grad(loss, list(live.values()), allow_unused=True)
    return {k: (g if g is not None else torch.zeros_like(v)).detach()
            for (k, v), g in zip(live.items(), grads)}


def fd_grads(loss_fn: Callable[[Params], torch.Tensor], params: Params, eps: float = 1e-4) -> Params:
    """Central differences, one scalar entry at a time, in float64."""
    base = {k: v.detach().clone() for k, v in params.items()}
    out: Params = {}
    for name, p in base.items():
        g = torch.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(loss_fn(base))
            flat[i] = orig - eps
            lo = float(loss_fn(base))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        out[name] = g
    return out


def max_rel_err(a: Params, b: Params) -> float:
    """max over all entries of |a-b| / max(1, |a|, |b|): relative error for
    large gradients, absolute error near zero."""
    worst = 0.0
    for name in a:
        x, y = a[name].reshape(-1), b[name].reshape(-1)
        denom = torch.maximum(torch.ones_like(x), torch.maximum(x.abs(), y.abs()))
        worst = max(worst, float(((x - y).abs() / denom).max())) if x.numel() else worst
    return worst
