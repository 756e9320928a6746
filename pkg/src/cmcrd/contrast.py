"""NCE critic and per-sample contrast terms shared by the distiller and the
teacher's embedding-map fit.

The critic

    k(t, s) = exp(u / tau) / (exp(u / tau) + N / M),   u = <t, s>,

estimates the posterior that an embedding pair with inner product u is a true
pair, given N negatives drawn from a bank of M slots. The per-sample contrast
term is

    L_i = log k(pos_i) + sum over N negatives of log(1 - k(neg)),

whose batch mean plus log(N) lower-bounds the mutual information between the
two embedded views.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import SchemaError
from .nets import as_tensor


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def _check_nm(tau: float, n_neg: int, m_total: int) -> None:
    if tau <= 0:
        raise SchemaError("tau must be > 0")
    if n_neg < 1 or m_total < 1:
        raise SchemaError("n_neg and m_total must be >= 1")


def critic_score(u: torch.Tensor, tau: float, n_neg: int, m_total: int) -> torch.Tensor:
    """Posterior that a pair with similarity u is a true pair: strictly in (0,1).

    Equal to sigmoid(u/tau - log(N/M)); at u = tau*log(N/M) — and in particular
    at u = 0 when N == M — the score is exactly 1/2.
    """
    _check_nm(tau, n_neg, m_total)
    z = as_tensor(u) / tau - math.log(n_neg / m_total)
    return torch.sigmoid(z)


def nce_log_terms(u: torch.Tensor, tau: float, n_neg: int, m_total: int
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    """(log k, log(1-k)) computed in log space; never forms k itself."""
    _check_nm(tau, n_neg, m_total)
    z = as_tensor(u) / tau - math.log(n_neg / m_total)
    return F.logsigmoid(z), F.logsigmoid(-z)


def contrast_terms(pos_u: torch.Tensor, neg_u: torch.Tensor, tau: float,
                   m_total: int) -> torch.Tensor:
    """Per-sample L_i = log k(pos_i) + sum_j log(1 - k(neg_ij)); always < 0.

    pos_u is (B,), neg_u is (B, N): N negatives per anchor.
    """
    pos_u = as_tensor(pos_u)
    neg_u = as_tensor(neg_u)
    if neg_u.ndim != 2 or neg_u.shape[0] != pos_u.shape[0]:
        raise SchemaError("neg_u must be (batch, n_negatives)")
    n_neg = neg_u.shape[1]
    log_k, _ = nce_log_terms(pos_u, tau, n_neg, m_total)
    _, log_1mk = nce_log_terms(neg_u, tau, n_neg, m_total)
    return log_k + log_1mk.sum(dim=1)


def contrast_objective(pos_u: torch.Tensor, neg_u: torch.Tensor, tau: float,
                       m_total: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batch-mean contrast objective, its mutual-information lower bound
    log(N) + L, and the per-sample terms."""
    per = contrast_terms(pos_u, neg_u, tau, m_total)
    mean = per.mean()
    bound = mean + math.log(neg_u.shape[1])
    return mean, bound, per
