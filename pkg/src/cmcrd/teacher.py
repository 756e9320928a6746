"""Teacher-side objective and training.

The teacher is an ordinary classifier on its own modality whose loss adds a
*class-confusion* penalty to cross-entropy: batch predictions are softened by
a temperature, certainty-weighted (low-entropy samples count more), and the
resulting class-by-class co-prediction matrix is row-normalized; the mean
off-diagonal mass is the penalty. Minimizing it discourages probability mass
shared between pairs of classes without forcing particular hard labels.

After training, the teacher is frozen. It also carries a linear projection
("embed") from its feature space to the shared contrastive space, fitted here
— after the classifier converges and on its frozen features — by a supervised
contrastive objective (same-class positives, different-class negatives, same
critic and temperature the distiller uses) and never touched again. Fitting
the map matters: under an untrained random projection, class directions in
the normalized embedding space can overlap so strongly that the distiller's
optimum is to repel everything, positives included. Any student run against
this teacher sees the same frozen embedding geometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .contrast import contrast_terms, l2_normalize
from .errors import SchemaError, TrainingError
from .nets import (ForwardResult, NetworkSpec, OptimizerState, Params, as_tensor,
                   forward, init_params, opt_step)
from .util import rng_from

log = logging.getLogger(__name__)

_EPS_ROW = 1e-12


def entropy(probs: torch.Tensor) -> torch.Tensor:
    """Per-row Shannon entropy in nats; rows must lie on the simplex (±1e-6).

    0*log(0) is taken as 0, so one-hot rows give exactly 0.
    """
    p = as_tensor(probs)
    with torch.no_grad():
        if (p < -1e-9).any():
            raise ValueError("entropy: negative probability component")
        if (p.sum(dim=-1) - 1.0).abs().max() > 1e-6:
            raise ValueError("entropy: rows must sum to 1 (±1e-6)")
    p = p.clamp_min(0.0)
    return -torch.special.xlogy(p, p).sum(dim=-1)


def mcc_weights(probs: torch.Tensor) -> torch.Tensor:
    """Certainty weights: w_i = n * (1 + exp(-H_i)) / sum_j (1 + exp(-H_j)).

    Sums to the batch size n; confident rows (low entropy) weigh more.
    """
    h = entropy(probs)
    raw = 1.0 + torch.exp(-h)
    return raw.shape[0] * raw / raw.sum()


@dataclass
class MccTerms:
    entropy: torch.Tensor  # (n,)
    weights: torch.Tensor  # (n,)
    confusion: torch.Tensor  # (c, c) weighted class co-prediction matrix
    normalized: torch.Tensor  # row-normalized confusion


def mcc_loss(probs: torch.Tensor) -> tuple[torch.Tensor, MccTerms]:
    """Mean off-diagonal mass of the row-normalized, certainty-weighted
    class co-prediction matrix. Ranges over [0, c-1] (in fact <= 1)."""
    p = as_tensor(probs)
    w = mcc_weights(p)
    h = entropy(p)
    confusion = p.T @ (w.unsqueeze(1) * p)
    rowsum = confusion.sum(dim=1, keepdim=True)
    c = p.shape[1]
    dead = rowsum.squeeze(1) <= _EPS_ROW
    if bool(dead.any()):
        log.warning("mcc_loss: %d class row(s) have zero mass; substituting uniform rows",
                    int(dead.sum()))
    normalized = torch.where(dead.unsqueeze(1), torch.full_like(confusion, 1.0 / c),
                             confusion / rowsum.clamp_min(_EPS_ROW))
    off = normalized.abs().sum() - normalized.abs().diagonal().sum()
    loss = off / c
    return loss, MccTerms(entropy=h, weights=w, confusion=confusion, normalized=normalized)


def teacher_loss(logits: torch.Tensor, labels: torch.Tensor, lambda1: float,
                 temperature: float = 2.0) -> tuple[torch.Tensor, dict]:
    """Cross-entropy on raw logits + lambda1 * confusion penalty on
    temperature-softened probabilities."""
    if temperature <= 0:
        raise SchemaError("temperature must be > 0")
    if lambda1 < 0:
        raise SchemaError("lambda1 must be >= 0")
    logits = as_tensor(logits)
    if not isinstance(labels, torch.Tensor):
        labels = torch.as_tensor(np.array(labels))
    ce = F.cross_entropy(logits, labels.to(torch.long))
    soft = F.softmax(logits / temperature, dim=-1)
    mcc, terms = mcc_loss(soft)
    return ce + lambda1 * mcc, {"ce": ce, "mcc": mcc, "terms": terms}


# ---------------------------------------------------------------------------
# frozen teacher + training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TeacherTrainConfig:
    lambda1: float = 0.1
    temperature: float = 2.0
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "sgd"  # sgd | momentum | adam
    opt_momentum: float = 0.9
    embed_dim: int = 128
    embed_fit_epochs: int = 30  # contrastive fit of the embedding map; 0 = keep init
    tau: float = 0.07  # critic temperature for the embedding fit
    n_negatives: int = 900  # negatives per anchor for the embedding fit (clamped)

    def __post_init__(self) -> None:
        if self.lambda1 < 0:
            raise SchemaError("lambda1 must be >= 0")
        if self.temperature <= 0:
            raise SchemaError("temperature must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise SchemaError("epochs, batch_size and embed_dim must be >= 1")
        if self.embed_fit_epochs < 0:
            raise SchemaError("embed_fit_epochs must be >= 0")
        if self.tau <= 0:
            raise SchemaError("tau must be > 0")
        if self.n_negatives < 1:
            raise SchemaError("n_negatives must be >= 1")


@dataclass
class TeacherModel:
    """Frozen classifier + fixed embedding map into the contrastive space."""

    spec: NetworkSpec
    params: Params
    embed_w: torch.Tensor  # (embed_dim, feature_dim)
    embed_b: torch.Tensor  # (embed_dim,)
    temperature: float
    lambda1: float
    seed: int
    train_accuracy: float = float("nan")
    dataset_fingerprint: str = ""

    def forward(self, x) -> ForwardResult:
        with torch.no_grad():
            return forward(self.spec, self.params, x)

    def embed(self, x) -> torch.Tensor:
        """Unit-norm embeddings of raw inputs (teacher modality)."""
        with torch.no_grad():
            feats = forward(self.spec, self.params, x).features
            e = feats @ self.embed_w.T + self.embed_b
            return e / e.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    def batch_weights(self, x) -> torch.Tensor:
        """Certainty weights of a batch under this teacher's softened predictions."""
        with torch.no_grad():
            out = self.forward(x)
            soft = F.softmax(out.logits / self.temperature, dim=-1)
            return mcc_weights(soft)


def init_embed(feature_dim: int, embed_dim: int, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Seeded linear map into the contrastive space (fan-in-scaled uniform)."""
    rng = rng_from(seed, 2)
    bound = 1.0 / np.sqrt(feature_dim)
    w = torch.tensor(rng.uniform(-bound, bound, size=(embed_dim, feature_dim)))
    b = torch.tensor(rng.uniform(-bound, bound, size=embed_dim))
    return w, b


def fit_embed(feats: torch.Tensor, y: np.ndarray, embed_w: torch.Tensor,
              embed_b: torch.Tensor, cfg: TeacherTrainConfig, seed: int,
              ) -> tuple[torch.Tensor, torch.Tensor]:
    """Fit the embedding map on frozen teacher features by supervised contrast.

    Each anchor's positive is a random same-class sample, its negatives are
    drawn without replacement from the different-class pool, and the per-pair
    scores go through the same critic (tau, N, M semantics) the distiller
    uses. This spreads class directions apart on the unit sphere so that
    "attract your own slot, repel different-class slots" is geometrically
    satisfiable downstream. Deterministic in seed; features never receive
    gradient. If some class has no different-class partner to sample, the map
    is returned unchanged.
    """
    feats = as_tensor(feats).detach()
    y = np.asarray(y, dtype=np.int64)
    m = feats.shape[0]
    classes = np.unique(y)
    members = {int(c): np.nonzero(y == c)[0] for c in classes}
    complements = {int(c): np.nonzero(y != c)[0] for c in classes}
    min_comp = min(v.shape[0] for v in complements.values())
    if min_comp < 1:
        log.warning("fit_embed: no different-class samples; keeping the initial map")
        return embed_w, embed_b
    n_neg = min(cfg.n_negatives, min_comp)

    w = embed_w.detach().clone()
    b = embed_b.detach().clone()
    opt = OptimizerState(rule=cfg.optimizer, lr=cfg.lr, weight_decay=0.0,
                         momentum=cfg.opt_momentum)
    rng = rng_from(seed, 5)
    for epoch in range(cfg.embed_fit_epochs):
        perm = rng.permutation(m)
        for b0 in range(0, m, cfg.batch_size):
            idx = perm[b0:b0 + cfg.batch_size]
            pos = np.empty(len(idx), dtype=np.int64)
            neg = np.empty((len(idx), n_neg), dtype=np.int64)
            for row, i in enumerate(idx):
                own = members[int(y[i])]
                pos[row] = i if own.shape[0] == 1 else rng.choice(own[own != i])
                neg[row] = rng.choice(complements[int(y[i])], size=n_neg, replace=False)
            live = {"w": w.detach().clone().requires_grad_(True),
                    "b": b.detach().clone().requires_grad_(True)}
            e_all = l2_normalize(feats @ live["w"].T + live["b"])
            u_pos = (e_all[idx] * e_all[pos]).sum(dim=-1)
            u_neg = torch.einsum("be,bne->bn", e_all[idx], e_all[neg])
            loss = -contrast_terms(u_pos, u_neg, cfg.tau, m).mean()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"embed fit: non-finite loss at epoch {epoch} batch {b0 // cfg.batch_size}")
            grads = torch.autograd.grad(loss, list(live.values()))
            stepped = opt_step(opt, {"w": w, "b": b}, dict(zip(live.keys(), grads)),
                               where=f"embed fit epoch {epoch} batch {b0 // cfg.batch_size}")
            w, b = stepped["w"], stepped["b"]
    return w.detach(), b.detach()


def train_teacher(x: np.ndarray, y: np.ndarray, spec: NetworkSpec,
                  cfg: TeacherTrainConfig, seed: int,
                  dataset_fingerprint: str = "") -> TeacherModel:
    """Mini-batch training of the teacher objective; deterministic in seed."""
    xt = as_tensor(x)
    yt = torch.as_tensor(np.array(y), dtype=torch.long)
    n = xt.shape[0]
    if n < 1:
        raise TrainingError("teacher: empty training set")

    params = init_params(spec, seed)
    opt = OptimizerState(rule=cfg.optimizer, lr=cfg.lr, weight_decay=spec.l2,
                         momentum=cfg.opt_momentum)
    order_rng = rng_from(seed, 1)

    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            idx = perm[b0:b0 + cfg.batch_size]
            live = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
            out = forward(spec, live, xt[idx])
            loss, _ = teacher_loss(out.logits, yt[idx], cfg.lambda1, cfg.temperature)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"teacher: non-finite loss at epoch {epoch} batch {b0 // cfg.batch_size}")
            grads = torch.autograd.grad(loss, list(live.values()))
            params = opt_step(opt, params, dict(zip(live.keys(), grads)),
                              where=f"teacher epoch {epoch} batch {b0 // cfg.batch_size}")

    with torch.no_grad():
        preds = forward(spec, params, xt).logits.argmax(dim=1)
        train_acc = float((preds == yt).double().mean())

    embed_w, embed_b = init_embed(spec.feature_dim, cfg.embed_dim, seed)
    if cfg.embed_fit_epochs > 0:
        with torch.no_grad():
            feats = forward(spec, params, xt).features
        embed_w, embed_b = fit_embed(feats, y, embed_w, embed_b, cfg, seed)
    frozen = {k: v.detach().clone() for k, v in params.items()}
    return TeacherModel(spec=spec, params=frozen, embed_w=embed_w, embed_b=embed_b,
                        temperature=cfg.temperature, lambda1=cfg.lambda1, seed=seed,
                        train_accuracy=train_acc, dataset_fingerprint=dataset_fingerprint)
