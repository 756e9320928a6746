"""Cross-modal contrastive representation distillation and baseline distillers.

A frozen teacher network on one modality guides a student on the other. Both
sides project their features through linear maps into a shared space (teacher
map fixed at teacher-training time, student map trained with the student);
embeddings are unit-normalized. A critic

    k(t, s) = exp(u / tau) / (exp(u / tau) + N / M),   u = <t, s>,

estimates the posterior that a (teacher, student) embedding pair came from the
same sample, given N negatives out of a bank of M slots. The per-sample
contrast term is

    L_i = log k(pos_i) + sum over N negatives of log(1 - k(neg)),

whose batch mean plus log(N) lower-bounds the cross-modal mutual information.
The distillation loss weights and splits these terms by teacher behavior:

* guidance split (US): samples the teacher classifies correctly form set P,
  the rest form set NBAR; the student is pulled to agree on P and pushed to
  disagree on NBAR;
* certainty weights (IEW): each sample's term is scaled by the teacher's
  batch certainty weight W_i (see teacher.mcc_weights).

Two algebraic forms are provided. With g_i = W_i * L_i / (tau * n):

    literal   = -log( |sum_P g_i| / |sum_NBAR g_i| )     (ratio of magnitudes)
    surrogate = -sum_P g_i + sum_NBAR g_i

Both sums are non-positive, so the literal ratio is well defined up to the
1e-12 epsilon guard; the 1/n normalization cancels in the ratio and makes the
surrogate with guidance and weighting disabled reduce exactly to
-contrast_objective / tau. When P or NBAR is empty the literal form falls back
to the surrogate term built from the non-empty set; fallbacks are counted in
the training trace.

Baseline distillers (used with the same frozen teacher, on batch features or
logits): KD (Hinton et al., 2015), FitNets hints (Romero et al., 2015), NST
(Huang & Wang, 2017), similarity-preserving SP (Tung & Mori, 2019), RKD (Park
et al., 2019), PKT (Passalis & Tefas, 2018), and plain CRD (Tian et al.,
2020) = the negated contrast objective without guidance or weighting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .contrast import (contrast_objective, contrast_terms, critic_score,
                       l2_normalize, nce_log_terms)
from .errors import SchemaError, SamplingError, TrainingError
from .nets import (NetworkSpec, OptimizerState, Params, as_tensor, forward,
                   init_params, opt_step)
from .teacher import TeacherModel, mcc_weights
from .util import rng_from

log = logging.getLogger(__name__)

METHODS = ("cmcrd", "crd", "kd", "fitnet", "nst", "sp", "rkd", "pkt", "none")

_EPS = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    method: str = "cmcrd"
    lambda2: float = 0.02
    tau: float = 0.07
    n_negatives: int = 900
    embed_dim: int = 128
    bank_momentum: float = 0.5
    us_enabled: bool = True
    iew_enabled: bool = True
    form: str = "literal"  # literal | surrogate
    kd_temperature: float = 4.0
    hint_layer: int = -1
    nst_kernel: str = "poly"  # poly | gaussian
    nst_bandwidth: float = 1.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise SchemaError(f"unknown distillation method {self.method!r}; one of {METHODS}")
        if self.tau <= 0:
            raise SchemaError("tau must be > 0")
        if self.n_negatives < 1:
            raise SchemaError("n_negatives must be >= 1")
        if self.embed_dim < 1:
            raise SchemaError("embed_dim must be >= 1")
        if not 0.0 <= self.bank_momentum < 1.0:
            raise SchemaError("bank_momentum must lie in [0, 1)")
        if self.form not in ("literal", "surrogate"):
            raise SchemaError(f"form must be 'literal' or 'surrogate', got {self.form!r}")
        if self.kd_temperature <= 0 or self.nst_bandwidth <= 0:
            raise SchemaError("kd_temperature and nst_bandwidth must be > 0")
        if self.nst_kernel not in ("poly", "gaussian"):
            raise SchemaError("nst_kernel must be 'poly' or 'gaussian'")
        if self.lambda2 < 0:
            raise SchemaError("lambda2 must be >= 0")


# ---------------------------------------------------------------------------
# memory bank
# ---------------------------------------------------------------------------


class MemoryBank:
    """Per-modality banks of unit-norm embeddings with per-slot class labels.

    Slot i corresponds to training-split sample i. Updates blend the stored
    vector with a fresh one (momentum * old + (1 - momentum) * new) and
    re-normalize. Negative draws return slots whose class differs from the
    anchor's, sampled without replacement.
    """

    def __init__(self, t_init: torch.Tensor, s_init: torch.Tensor,
                 labels: np.ndarray, momentum: float = 0.5) -> None:
        labels = np.asarray(labels, dtype=np.int64)
        t_init, s_init = as_tensor(t_init), as_tensor(s_init)
        if t_init.shape[0] != labels.shape[0] or s_init.shape[0] != labels.shape[0]:
            raise SchemaError("bank inits and labels must agree on slot count")
        if not 0.0 <= momentum < 1.0:
            raise SchemaError("bank momentum must lie in [0, 1)")
        self.momentum = float(momentum)
        self.labels = labels
        self.t_vectors = l2_normalize(t_init.detach().clone())
        self.s_vectors = l2_normalize(s_init.detach().clone())
        self._complement: dict[int, np.ndarray] = {}

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def complement(self, label: int) -> np.ndarray:
        """Slot indices whose class differs from `label` (cached)."""
        key = int(label)
        if key not in self._complement:
            self._complement[key] = np.nonzero(self.labels != key)[0]
        return self._complement[key]

    def min_complement(self) -> int:
        return min(self.complement(int(c)).shape[0] for c in np.unique(self.labels))

    def draw_negatives(self, anchor_labels: np.ndarray, n_neg: int,
                       rng: np.random.Generator) -> np.ndarray:
        """(B, n_neg) slot indices, all with class != the anchor's class."""
        out = np.empty((len(anchor_labels), n_neg), dtype=np.int64)
        for i, lab in enumerate(anchor_labels):
            pool = self.complement(int(lab))
            if pool.shape[0] < n_neg:
                raise SamplingError(
                    f"negative pool for class {int(lab)} has {pool.shape[0]} slots, "
                    f"need {n_neg}; use a smaller n_negatives")
            out[i] = rng.choice(pool, size=n_neg, replace=False)
        return out

    def update(self, slots: np.ndarray, t_new: torch.Tensor | None = None,
               s_new: torch.Tensor | None = None) -> None:
        idx = torch.as_tensor(np.asarray(slots, dtype=np.int64))
        m = self.momentum
        if t_new is not None:
            mixed = m * self.t_vectors[idx] + (1.0 - m) * t_new.detach()
            self.t_vectors[idx] = l2_normalize(mixed)
        if s_new is not None:
            mixed = m * self.s_vectors[idx] + (1.0 - m) * s_new.detach()
            self.s_vectors[idx] = l2_normalize(mixed)


def effective_negatives(bank: MemoryBank, requested: int) -> int:
    """Clamp the configured N to (smallest different-class pool - 1); warn on
    clamping, error if that leaves no room."""
    cap = bank.min_complement() - 1
    if cap < 1:
        raise SamplingError(
            f"negative pool too small (min different-class pool {bank.min_complement()}); "
            "use a smaller n_negatives or more data")
    if requested > cap:
        log.warning("n_negatives=%d exceeds pool; clamped to %d", requested, cap)
        return cap
    return requested


# ---------------------------------------------------------------------------
# guidance split + the distillation loss
# ---------------------------------------------------------------------------


@dataclass
class GuidanceSets:
    """Batch indices split by teacher correctness: P agrees with the label,
    NBAR is the complement. Always a partition of the batch."""

    positive: np.ndarray
    negative: np.ndarray


def build_guidance_sets(teacher_logits: torch.Tensor, labels: np.ndarray) -> GuidanceSets:
    logits = as_tensor(teacher_logits).detach().cpu().numpy()
    labels = np.asarray(labels)
    preds = np.argmax(logits, axis=1)  # ties -> lower class index
    agree = preds == labels
    return GuidanceSets(positive=np.nonzero(agree)[0], negative=np.nonzero(~agree)[0])


def cmcrd_loss(per_sample: torch.Tensor, weights: torch.Tensor | None,
               guidance: GuidanceSets | None, tau: float, form: str = "literal",
               us_enabled: bool = True, iew_enabled: bool = True,
               ) -> tuple[torch.Tensor, str | None]:
    """Guided, certainty-weighted contrastive distillation loss.

    Returns (loss, fallback) where fallback is None, "positive_empty" or
    "negative_empty" (a guidance set was empty this batch; for the literal
    form the loss then degrades to the surrogate term of the non-empty set).
    With us_enabled=False the loss is the surrogate positive term over the
    whole batch (no fallback accounting); with iew_enabled=False all weights
    are 1. Both forms are normalized by batch size, so the surrogate with
    both toggles off equals -mean(per_sample)/tau exactly.
    """
    if tau <= 0:
        raise SchemaError("tau must be > 0")
    if form not in ("literal", "surrogate"):
        raise SchemaError(f"unknown form {form!r}")
    per = as_tensor(per_sample)
    n = per.shape[0]
    if n == 0:
        raise SchemaError("empty batch")
    if iew_enabled:
        if weights is None:
            raise SchemaError("iew_enabled requires weights")
        w = as_tensor(weights).detach()
    else:
        w = torch.ones_like(per)
    g = per * w / (tau * n)  # each g_i <= 0

    if not us_enabled:
        return -g.sum(), None

    if guidance is None:
        raise SchemaError("us_enabled requires guidance sets")
    pos_idx = torch.as_tensor(guidance.positive, dtype=torch.long)
    neg_idx = torch.as_tensor(guidance.negative, dtype=torch.long)
    pos = g[pos_idx].sum()  # <= 0
    neg = g[neg_idx].sum()  # <= 0

    fallback: str | None = None
    if pos_idx.numel() == 0:
        fallback = "positive_empty"
    elif neg_idx.numel() == 0:
        fallback = "negative_empty"

    if form == "surrogate":
        return -pos + neg, fallback
    if fallback == "positive_empty":
        return neg, fallback
    if fallback == "negative_empty":
        return -pos, fallback
    # -log(|pos| / |neg|), epsilon-guarded; both magnitudes are -pos, -neg >= 0
    return torch.log((-neg).clamp_min(0) + _EPS) - torch.log((-pos).clamp_min(0) + _EPS), None


# ---------------------------------------------------------------------------
# baseline distillers
# ---------------------------------------------------------------------------


def kd_loss(teacher_logits: torch.Tensor, student_logits: torch.Tensor,
            temperature: float = 4.0) -> torch.Tensor:
    """Soft-target KL divergence scaled by T^2 (Hinton et al., 2015)."""
    if temperature <= 0:
        raise SchemaError("temperature must be > 0")
    t = as_tensor(teacher_logits).detach()
    s = as_tensor(student_logits)
    p_t = F.softmax(t / temperature, dim=-1)
    log_p_s = F.log_softmax(s / temperature, dim=-1)
    return F.kl_div(log_p_s, p_t, reduction="batchmean") * temperature * temperature


def fitnet_loss(teacher_hint: torch.Tensor, student_hint: torch.Tensor,
                regressor_w: torch.Tensor, regressor_b: torch.Tensor) -> torch.Tensor:
    """Hint regression MSE (Romero et al., 2015); the linear regressor maps the
    student hint into the teacher hint space and trains with the student."""
    mapped = as_tensor(student_hint) @ regressor_w.T + regressor_b
    return F.mse_loss(mapped, as_tensor(teacher_hint).detach())


def _mmd_sq(a: torch.Tensor, b: torch.Tensor, kernel: str, bandwidth: float) -> torch.Tensor:
    def gram(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if kernel == "poly":
            return (x @ y.T) ** 2
        d2 = torch.cdist(x, y) ** 2
        return torch.exp(-d2 / (2.0 * bandwidth * bandwidth))

    return gram(a, a).mean() + gram(b, b).mean() - 2.0 * gram(a, b).mean()


def nst_loss(teacher_feats: torch.Tensor, student_feats: torch.Tensor,
             kernel: str = "poly", bandwidth: float = 1.0) -> torch.Tensor:
    """Neuron-selectivity transfer: squared MMD between the two batches of
    L2-normalized activation patterns (Huang & Wang, 2017)."""
    if kernel not in ("poly", "gaussian"):
        raise SchemaError("kernel must be 'poly' or 'gaussian'")
    t = l2_normalize(as_tensor(teacher_feats).detach())
    s = l2_normalize(as_tensor(student_feats))
    return _mmd_sq(t, s, kernel, bandwidth)


def sp_loss(teacher_feats: torch.Tensor, student_feats: torch.Tensor) -> torch.Tensor:
    """Similarity-preserving loss: squared Frobenius distance between
    row-normalized batch Gram matrices, / B^2 (Tung & Mori, 2019)."""
    t = as_tensor(teacher_feats).detach()
    s = as_tensor(student_feats)
    g_t = l2_normalize(t @ t.T)
    g_s = l2_normalize(s @ s.T)
    b = t.shape[0]
    return ((g_t - g_s) ** 2).sum() / (b * b)


def _pairwise_dist(x: torch.Tensor) -> torch.Tensor:
    d2 = (x.unsqueeze(0) - x.unsqueeze(1)).pow(2).sum(-1)
    return d2.clamp_min(1e-12).sqrt()


def rkd_loss(teacher_feats: torch.Tensor, student_feats: torch.Tensor,
             distance_weight: float = 1.0, angle_weight: float = 2.0) -> torch.Tensor:
    """Relational KD (Park et al., 2019): Huber losses on mean-normalized
    pairwise distances and on triplet angle cosines, weighted 1:2."""
    t = as_tensor(teacher_feats).detach()
    s = as_tensor(student_feats)
    b = t.shape[0]
    off = ~torch.eye(b, dtype=torch.bool)

    d_t = _pairwise_dist(t)
    d_s = _pairwise_dist(s)
    mu_t = d_t[off].mean().clamp_min(1e-12)
    mu_s = d_s[off].mean().clamp_min(1e-12)
    dist_term = F.smooth_l1_loss(d_s[off] / mu_s, d_t[off] / mu_t)

    def angles(x: torch.Tensor) -> torch.Tensor:
        diff = x.unsqueeze(0) - x.unsqueeze(1)  # diff[j, i] = x_i - x_j
        e = diff / diff.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return torch.einsum("jid,jkd->jik", e, e)  # cos of angle at vertex j

    angle_term = F.smooth_l1_loss(angles(s), angles(t))
    return distance_weight * dist_term + angle_weight * angle_term


def pkt_loss(teacher_feats: torch.Tensor, student_feats: torch.Tensor) -> torch.Tensor:
    """Probabilistic knowledge transfer (Passalis & Tefas, 2018): KL between
    row-normalized cosine-similarity distributions."""
    t = l2_normalize(as_tensor(teacher_feats).detach())
    s = l2_normalize(as_tensor(student_feats))
    p_t = ((t @ t.T) + 1.0) / 2.0
    p_s = ((s @ s.T) + 1.0) / 2.0
    p_t = p_t / p_t.sum(dim=1, keepdim=True).clamp_min(_EPS)
    p_s = p_s / p_s.sum(dim=1, keepdim=True).clamp_min(_EPS)
    return (p_t * (torch.log(p_t + _EPS) - torch.log(p_s + _EPS))).sum(dim=1).mean()


def student_loss(ce: torch.Tensor, distill: torch.Tensor | None, lambda2: float) -> torch.Tensor:
    if distill is None:
        return ce
    return ce + lambda2 * distill


# ---------------------------------------------------------------------------
# student training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudentTrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "sgd"
    opt_momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise SchemaError("epochs and batch_size must be >= 1")


@dataclass
class StudentResult:
    params: Params  # student network parameters
    aux: Params  # trained side parameters (student embed map, hint regressor)
    trace: list[dict] = field(default_factory=list)


def _tap_width(spec: NetworkSpec, params: Params, hint_layer: int) -> int:
    probe = torch.zeros(1, spec.input_dim)
    taps = forward(spec, params, probe, want_hidden=True).hidden
    if not -len(taps) <= hint_layer < len(taps):
        raise SchemaError(f"hint_layer {hint_layer} out of range for {len(taps)} taps")
    return taps[hint_layer].shape[1]


def train_student(x_student: np.ndarray, x_teacher: np.ndarray, y: np.ndarray,
                  teacher: TeacherModel | None, spec: NetworkSpec, dcfg: DistillConfig,
                  tcfg: StudentTrainConfig, seed: int) -> StudentResult:
    """Train the student under CE + lambda2 * distillation; deterministic in seed.

    Invariant: method="none" and lambda2=0 take the identical code path (the
    distillation machinery — bank, negative draws, critic — is skipped
    entirely), so they consume the same RNG stream and produce bit-identical
    parameters.
    """
    xs = as_tensor(x_student)
    xt = as_tensor(x_teacher)
    yt = torch.as_tensor(np.array(y), dtype=torch.long)
    y_np = np.asarray(y, dtype=np.int64)
    n = xs.shape[0]
    if n < 1:
        raise TrainingError("student: empty training set")
    if xt.shape[0] != n or yt.shape[0] != n:
        raise SchemaError("student/teacher inputs and labels must align")

    distill_on = dcfg.method != "none" and dcfg.lambda2 != 0.0
    method = dcfg.method if distill_on else "none"
    if method != "none" and teacher is None:
        raise SchemaError(f"method {method!r} needs a trained teacher")

    params = init_params(spec, seed)
    aux: Params = {}
    bank: MemoryBank | None = None
    n_eff = 0

    if method in ("cmcrd", "crd"):
        erng = rng_from(seed, 3)
        bound = 1.0 / math.sqrt(spec.feature_dim)
        aux["s_embed.w"] = torch.tensor(
            erng.uniform(-bound, bound, size=(dcfg.embed_dim, spec.feature_dim)))
        aux["s_embed.b"] = torch.tensor(erng.uniform(-bound, bound, size=dcfg.embed_dim))
        if teacher.embed_w.shape[0] != dcfg.embed_dim:
            raise SchemaError(
                f"teacher embed dim {teacher.embed_w.shape[0]} != configured {dcfg.embed_dim}")
        with torch.no_grad():
            t_all = teacher.embed(xt)
            s_feats = forward(spec, params, xs).features
            s_all = l2_normalize(s_feats @ aux["s_embed.w"].T + aux["s_embed.b"])
        bank = MemoryBank(t_all, s_all, y_np, momentum=dcfg.bank_momentum)
        n_eff = effective_negatives(bank, dcfg.n_negatives)
    elif method == "fitnet":
        rrng = rng_from(seed, 4)
        s_w = _tap_width(spec, params, dcfg.hint_layer)
        t_w = _tap_width(teacher.spec, teacher.params, dcfg.hint_layer)
        bound = 1.0 / math.sqrt(s_w)
        aux["hint_reg.w"] = torch.tensor(rrng.uniform(-bound, bound, size=(t_w, s_w)))
        aux["hint_reg.b"] = torch.tensor(rrng.uniform(-bound, bound, size=t_w))

    opt = OptimizerState(rule=tcfg.optimizer, lr=tcfg.lr, weight_decay=spec.l2,
                         momentum=tcfg.opt_momentum)
    order_rng = rng_from(seed, 10)
    neg_rng = rng_from(seed, 11)
    trace: list[dict] = []

    for epoch in range(tcfg.epochs):
        perm = order_rng.permutation(n)
        ce_sum = 0.0
        distill_sum = 0.0
        n_batches = 0
        correct = 0
        fallbacks = {"positive_empty": 0, "negative_empty": 0}

        for b0 in range(0, n, tcfg.batch_size):
            idx = perm[b0:b0 + tcfg.batch_size]
            where = f"student epoch {epoch} batch {b0 // tcfg.batch_size}"
            trainable = {**params, **aux}
            live = {k: v.detach().clone().requires_grad_(True) for k, v in trainable.items()}
            want_hidden = method == "fitnet"
            out = forward(spec, {k: live[k] for k in params}, xs[idx], want_hidden=want_hidden)
            ce = F.cross_entropy(out.logits, yt[idx])

            dloss: torch.Tensor | None = None
            if method in ("cmcrd", "crd"):
                assert bank is not None
                with torch.no_grad():
                    t_out = teacher.forward(xt[idx])
                    t_emb = teacher.embed(xt[idx])
                s_emb = l2_normalize(out.features @ live["s_embed.w"].T + live["s_embed.b"])
                neg_slots = bank.draw_negatives(y_np[idx], n_eff, neg_rng)
                neg_vecs = bank.t_vectors[torch.as_tensor(neg_slots)]
                pos_u = (t_emb * s_emb).sum(dim=1)
                neg_u = (neg_vecs * s_emb.unsqueeze(1)).sum(dim=2)
                mean_l, _, per = contrast_objective(pos_u, neg_u, dcfg.tau, bank.size)
                if method == "crd":
                    dloss = -mean_l
                else:
                    weights = None
                    if dcfg.iew_enabled:
                        soft = F.softmax(t_out.logits / teacher.temperature, dim=-1)
                        weights = mcc_weights(soft)
                    guidance = build_guidance_sets(t_out.logits, y_np[idx]) \
                        if dcfg.us_enabled else None
                    dloss, fb = cmcrd_loss(per, weights, guidance, dcfg.tau, dcfg.form,
                                           us_enabled=dcfg.us_enabled,
                                           iew_enabled=dcfg.iew_enabled)
                    if fb is not None:
                        fallbacks[fb] += 1
                bank.update(idx, t_emb, s_emb)
            elif method == "kd":
                with torch.no_grad():
                    t_logits = teacher.forward(xt[idx]).logits
                dloss = kd_loss(t_logits, out.logits, dcfg.kd_temperature)
            elif method == "fitnet":
                with torch.no_grad():
                    t_taps = forward(teacher.spec, teacher.params, xt[idx],
                                     want_hidden=True).hidden
                dloss = fitnet_loss(t_taps[dcfg.hint_layer], out.hidden[dcfg.hint_layer],
                                    live["hint_reg.w"], live["hint_reg.b"])
            elif method in ("nst", "sp", "rkd", "pkt"):
                with torch.no_grad():
                    t_feats = teacher.forward(xt[idx]).features
                if method == "nst":
                    dloss = nst_loss(t_feats, out.features, dcfg.nst_kernel, dcfg.nst_bandwidth)
                elif method == "sp":
                    dloss = sp_loss(t_feats, out.features)
                elif method == "rkd":
                    dloss = rkd_loss(t_feats, out.features)
                else:
                    dloss = pkt_loss(t_feats, out.features)

            total = student_loss(ce, dloss, dcfg.lambda2)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss at {where}")
            grads = torch.autograd.grad(total, list(live.values()), allow_unused=True)
            grad_map = {k: (g if g is not None else torch.zeros_like(live[k]))
                        for k, g in zip(live.keys(), grads)}
            stepped = opt_step(opt, trainable, grad_map, where=where)
            params = {k: stepped[k] for k in params}
            aux = {k: stepped[k] for k in aux}

            ce_sum += float(ce.detach())
            distill_sum += float(dloss.detach()) if dloss is not None else 0.0
            n_batches += 1
            correct += int((out.logits.detach().argmax(dim=1) == yt[idx]).sum())

        trace.append({
            "epoch": epoch,
            "ce_loss": ce_sum / n_batches,
            "distill_loss": distill_sum / n_batches,
            "fallback_counts": dict(fallbacks),
            "train_acc": correct / n,
        })

    return StudentResult(params=params, aux=aux, trace=trace)
