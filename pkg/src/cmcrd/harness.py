"""Experiment harness: protocols end-to-end, fusion, statistics, reporting.

A "run" is one (dataset, protocol, direction, method, seed): every fold of the
protocol is trained and evaluated, and the per-fold accuracies are aggregated
into a RunResult. Teachers are cached by (protocol, direction, seed, fold,
teacher-config) so several student methods can share the same frozen teacher
within a process. Folds can be dispatched to worker processes; per-fold seeds
are derived from (seed, fold), so results do not depend on scheduling.

Result files: one RunResult per line of JSONL (sorted keys), a summary CSV
(rows = methods, one column per dataset/arch/protocol/direction group,
cells = mean±std in percent over all folds and seeds), and a timing CSV.
Everything except the two wall-clock fields is bit-deterministic for a fixed
config and seed.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import stats as sps

from .config import ExperimentConfig
from .data import (Dataset, Fold, FoldData, SplitPlan, make_cross_subject_splits,
                   make_within_subject_splits, normalize_features)
from .distill import DistillConfig, StudentTrainConfig, train_student
from .errors import ConfigError, ProtocolError
from .nets import NetworkSpec, Params, forward
from .teacher import TeacherModel, train_teacher
from .util import canonical_json, derive_seed, fmt9

RESULT_TIMING_FIELDS = ("train_seconds", "test_seconds")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_probs(spec: NetworkSpec, params: Params, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return forward(spec, params, x).probs.cpu().numpy()


def accuracy_from_probs(probs: np.ndarray, y: np.ndarray,
                        groups: np.ndarray | None = None,
                        vote: str = "sample") -> float:
    """Sample-level accuracy, or per-trial majority vote when vote="trial"
    (prediction ties and vote ties both resolve toward the lower class index)."""
    y = np.asarray(y)
    preds = np.argmax(probs, axis=1)
    if vote == "sample":
        return float((preds == y).mean())
    if vote != "trial":
        raise ConfigError(f"vote must be 'sample' or 'trial', got {vote!r}")
    if groups is None:
        raise ConfigError("trial voting needs group ids")
    correct = 0
    uniq = np.unique(groups)
    c = probs.shape[1]
    for g in uniq:
        mask = groups == g
        counts = np.bincount(preds[mask], minlength=c)
        if np.argmax(counts) == y[mask][0]:
            correct += 1
    return correct / len(uniq)


def evaluate(spec: NetworkSpec, params: Params, x: np.ndarray, y: np.ndarray,
             groups: np.ndarray | None = None, vote: str = "sample") -> float:
    return accuracy_from_probs(predict_probs(spec, params, x), y, groups, vote)


# ---------------------------------------------------------------------------
# run results
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    dataset: str
    protocol: str
    method: str
    direction: str
    arch: str
    seed: int
    fold_accuracies: tuple[float, ...]
    mean_accuracy: float
    std_accuracy: float  # population std (ddof=0) over folds
    config_hash: str
    train_seconds: float
    test_seconds: float
    fallback_totals: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, *, fold_accuracies, **kw) -> "RunResult":
        accs = tuple(float(a) for a in fold_accuracies)
        return cls(fold_accuracies=accs, mean_accuracy=float(np.mean(accs)),
                   std_accuracy=float(np.std(accs)), **kw)

    def to_json_dict(self) -> dict:
        d = dict(self.__dict__)
        d["fold_accuracies"] = list(self.fold_accuracies)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunResult":
        d = dict(d)
        d["fold_accuracies"] = tuple(d["fold_accuracies"])
        return cls(**d)


def make_splits(ds: Dataset, cfg: ExperimentConfig, seed: int) -> SplitPlan:
    if cfg.protocol == "within":
        return make_within_subject_splits(ds, train_trials=cfg.train_trials)
    return make_cross_subject_splits(ds, val_fraction=cfg.val_fraction, seed=seed)


# ---------------------------------------------------------------------------
# per-fold work
# ---------------------------------------------------------------------------


@dataclass
class FoldOutcome:
    fold_id: int
    accuracy: float
    train_seconds: float
    test_seconds: float
    fallbacks: dict[str, int]
    trace: list[dict]
    teacher: TeacherModel | None  # returned only when trained here (for caching)


def _teacher_key(cfg: ExperimentConfig, seed: int, fold_id: int, lambda1: float) -> str:
    parts = dict(protocol=cfg.protocol, direction=cfg.direction, arch=cfg.arch,
                 seed=seed, fold=fold_id, lambda1=lambda1,
                 temperature=cfg.mcc_temperature, epochs=cfg.teacher_epochs,
                 embed_fit=cfg.embed_fit_epochs, tau=cfg.tau, n_neg=cfg.n_negatives,
                 lr=cfg.lr, batch=cfg.batch_size, optimizer=cfg.optimizer,
                 l2=cfg.l2, embed=cfg.embed_dim, feature=cfg.feature_dim,
                 hidden=list(cfg.dnn_hidden if cfg.arch == "dnn" else cfg.dgcnn_hidden),
                 train_trials=cfg.train_trials, val_fraction=cfg.val_fraction)
    return canonical_json(parts)


def run_fold(ds: Dataset, cfg: ExperimentConfig, fold: Fold, seed: int, method: str,
             lambda1: float, dcfg: DistillConfig,
             teacher: TeacherModel | None = None) -> FoldOutcome:
    """Train (teacher if needed, then student) and evaluate one fold."""
    torch.set_num_threads(1)
    fd = normalize_features(ds, fold)
    y = fd.y_train

    if method == "fusion":
        t0 = time.perf_counter()
        stu_cfg = cfg.student_train_config()
        none_cfg = cfg.distill_config(method="none")
        specs = {}
        results = {}
        for tag, modality in ((31, "eeg"), (32, "em")):
            spec = cfg.network_spec(fd.train_x(modality).shape[1], ds.num_classes)
            out = train_student(fd.train_x(modality), fd.train_x(modality), y,
                                None, spec, none_cfg, stu_cfg,
                                seed=derive_seed(seed, fold.fold_id, tag))
            specs[modality], results[modality] = spec, out
        train_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        probs = (predict_probs(specs["eeg"], results["eeg"].params, fd.eeg_test)
                 + predict_probs(specs["em"], results["em"].params, fd.em_test)) / 2.0
        acc = accuracy_from_probs(probs, fd.y_test, fd.test_group, cfg.vote)
        test_s = time.perf_counter() - t0
        return FoldOutcome(fold.fold_id, acc, train_s, test_s, {},
                           results["eeg"].trace, None)

    stu_mod = cfg.student_modality()
    tea_mod = cfg.teacher_modality()
    s_spec = cfg.network_spec(fd.train_x(stu_mod).shape[1], ds.num_classes)

    train_s = 0.0
    if method != "none" and teacher is None:
        t_spec = cfg.network_spec(fd.train_x(tea_mod).shape[1], ds.num_classes)
        t0 = time.perf_counter()
        teacher = train_teacher(fd.train_x(tea_mod), y, t_spec,
                                cfg.teacher_train_config(lambda1=lambda1),
                                seed=derive_seed(seed, fold.fold_id, 1))
        train_s += time.perf_counter() - t0
        trained_teacher = teacher
    else:
        trained_teacher = None

    t0 = time.perf_counter()
    student = train_student(fd.train_x(stu_mod), fd.train_x(tea_mod), y,
                            teacher if method != "none" else None,
                            s_spec, dcfg, cfg.student_train_config(),
                            seed=derive_seed(seed, fold.fold_id, 2))
    train_s += time.perf_counter() - t0

    t0 = time.perf_counter()
    acc = evaluate(s_spec, student.params, fd.test_x(stu_mod), fd.y_test,
                   fd.test_group, cfg.vote)
    test_s = time.perf_counter() - t0

    fallbacks = {"positive_empty": 0, "negative_empty": 0}
    for rec in student.trace:
        for k, v in rec["fallback_counts"].items():
            fallbacks[k] += v
    return FoldOutcome(fold.fold_id, acc, train_s, test_s, fallbacks,
                       student.trace, trained_teacher)


def _pool_task(payload: tuple) -> FoldOutcome:
    ds, cfg_dict, fold, seed, method, lambda1, dcfg, teacher = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_fold(ds, cfg, fold, seed, method, lambda1, dcfg, teacher)


def run_protocol(ds: Dataset, cfg: ExperimentConfig, seed: int,
                 method: str | None = None, lambda1: float | None = None,
                 us: bool | None = None, iew: bool | None = None,
                 teacher_cache: dict[str, TeacherModel] | None = None,
                 extra: dict | None = None,
                 ) -> tuple[RunResult, dict[int, list[dict]]]:
    """All folds of one protocol for one seed; returns the aggregate result and
    the per-fold training traces."""
    method = method if method is not None else cfg.method
    lam1 = cfg.lambda1 if lambda1 is None else lambda1
    dcfg = cfg.distill_config(method=method, us=us, iew=iew)
    plan = make_splits(ds, cfg, seed)
    if not plan.folds:
        raise ProtocolError("no folds")

    cached: dict[int, TeacherModel | None] = {}
    if teacher_cache is not None and method not in ("none", "fusion"):
        for fold in plan.folds:
            cached[fold.fold_id] = teacher_cache.get(_teacher_key(cfg, seed, fold.fold_id, lam1))
    else:
        cached = {fold.fold_id: None for fold in plan.folds}

    outcomes: list[FoldOutcome] = []
    if cfg.jobs > 1 and len(plan.folds) > 1:
        payloads = [(ds, cfg.to_dict(), fold, seed, method, lam1, dcfg,
                     cached.get(fold.fold_id)) for fold in plan.folds]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_pool_task, payloads))
    else:
        for fold in plan.folds:
            outcomes.append(run_fold(ds, cfg, fold, seed, method, lam1, dcfg,
                                     cached.get(fold.fold_id)))

    outcomes.sort(key=lambda o: o.fold_id)
    if teacher_cache is not None:
        for o in outcomes:
            if o.teacher is not None:
                teacher_cache[_teacher_key(cfg, seed, o.fold_id, lam1)] = o.teacher

    fallbacks: dict[str, int] = {}
    for o in outcomes:
        for k, v in o.fallbacks.items():
            fallbacks[k] = fallbacks.get(k, 0) + v

    result = RunResult.build(
        dataset=ds.name, protocol=cfg.protocol, method=method, direction=cfg.direction,
        arch=cfg.arch, seed=seed, fold_accuracies=[o.accuracy for o in outcomes],
        config_hash=cfg.hash(), train_seconds=sum(o.train_seconds for o in outcomes),
        test_seconds=sum(o.test_seconds for o in outcomes),
        fallback_totals=fallbacks, extra=dict(extra or {}))
    traces = {o.fold_id: o.trace for o in outcomes}
    return result, traces


def run_experiment(ds: Dataset, cfg: ExperimentConfig,
                   ) -> tuple[list[RunResult], dict[str, list[dict]]]:
    """Every (method, seed) combination of the config, sharing teachers."""
    teacher_cache: dict[str, TeacherModel] = {}
    results: list[RunResult] = []
    traces: dict[str, list[dict]] = {}
    for seed in cfg.seeds:
        for method in cfg.methods():
            res, tr = run_protocol(ds, cfg, seed, method=method,
                                   teacher_cache=teacher_cache)
            results.append(res)
            for fold_id, t in tr.items():
                traces[f"{method}_seed{seed}_fold{fold_id}"] = t
    return results, traces


# ---------------------------------------------------------------------------
# decision fusion
# ---------------------------------------------------------------------------


def decision_fusion_eval(ds: Dataset, cfg: ExperimentConfig, seed: int,
                         ) -> tuple[RunResult, dict[int, list[dict]]]:
    """Two unimodal CE models; class probabilities averaged with equal weights
    at test time (ties toward the lower class index)."""
    return run_protocol(ds, cfg, seed, method="fusion")


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

ABLATION_CELLS: tuple[tuple[bool, bool, bool], ...] = tuple(
    itertools.product((False, True), repeat=3))  # (mcc, us, iew), (F,F,F) first


def run_ablation_grid(ds: Dataset, cfg: ExperimentConfig, seed: int,
                      teacher_cache: dict[str, TeacherModel] | None = None,
                      collect_errors: list[str] | None = None) -> list[RunResult]:
    """All 2^3 combinations of (confusion-trained teacher, guidance split,
    certainty weights), identically seeded so every cell sees the same data
    stream. Cells with both student toggles off run the plain contrastive
    baseline; the all-off cell is therefore exactly CRD with a plain teacher.

    With `collect_errors` given, a failing cell is recorded there and the
    remaining cells still run; otherwise the first failure raises.
    """
    if teacher_cache is None:
        teacher_cache = {}
    out: list[RunResult] = []
    for mcc, us, iew in ABLATION_CELLS:
        method = "cmcrd" if (us or iew) else "crd"
        try:
            res, _ = run_protocol(ds, cfg, seed, method=method,
                                  lambda1=cfg.lambda1 if mcc else 0.0,
                                  us=us, iew=iew, teacher_cache=teacher_cache,
                                  extra={"mcc": mcc, "us": us, "iew": iew})
        except Exception as e:
            if collect_errors is None:
                raise
            collect_errors.append(f"mcc={mcc} us={us} iew={iew} seed={seed}: {e}")
            continue
        out.append(res)
    return out


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class TTestResult:
    statistic: float
    p_value: float
    degenerate: bool  # all differences zero (p=1) or zero-variance nonzero (p=0)


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test with explicit degenerate handling."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    if np.all(d == 0.0):
        return TTestResult(statistic=0.0, p_value=1.0, degenerate=True)
    if np.std(d) == 0.0:
        return TTestResult(statistic=float(np.sign(d[0]) * np.inf), p_value=0.0,
                           degenerate=True)
    t, p = sps.ttest_rel(a, b)
    return TTestResult(statistic=float(t), p_value=float(p), degenerate=False)


def bh_adjust(pvals) -> np.ndarray:
    """Benjamini–Hochberg step-up adjusted p-values, clipped to 1."""
    p = np.asarray(pvals, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("pvals must be a non-empty vector")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.minimum(adj, 1.0)
    out = np.empty(m)
    out[order] = adj
    return out


@dataclass
class ComparisonRow:
    method: str
    mean_diff: float  # baseline - other, in accuracy
    statistic: float
    p_value: float
    p_adjusted: float
    degenerate: bool


def compare_to_baseline(baseline: RunResult | np.ndarray,
                        others: list[tuple[str, RunResult | np.ndarray]],
                        ) -> list[ComparisonRow]:
    """Paired t-tests of the baseline's fold accuracies against each other
    method's, with one joint BH adjustment across the family."""

    def accs(r) -> np.ndarray:
        return np.asarray(r.fold_accuracies if isinstance(r, RunResult) else r,
                          dtype=np.float64)

    base = accs(baseline)
    tests = []
    for name, other in others:
        o = accs(other)
        if o.shape != base.shape:
            raise ValueError(
                f"fold count mismatch: baseline has {base.shape[0]}, {name} has {o.shape[0]}")
        tests.append((name, float(np.mean(base - o)), paired_ttest(base, o)))
    adjusted = bh_adjust([t.p_value for (_, _, t) in tests])
    return [ComparisonRow(method=name, mean_diff=diff, statistic=t.statistic,
                          p_value=t.p_value, p_adjusted=float(adj), degenerate=t.degenerate)
            for (name, diff, t), adj in zip(tests, adjusted)]


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def write_results_jsonl(results: list[RunResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in results:
            f.write(json.dumps(r.to_json_dict(), sort_keys=True))
            f.write("\n")
    return path


def read_results_jsonl(path: str | Path) -> list[RunResult]:
    path = Path(path)
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(RunResult.from_json_dict(json.loads(line)))
    return out


def _group_label(r: RunResult) -> str:
    return f"{r.dataset}/{r.arch}/{r.protocol}/{r.direction}"


def summary_table(results: list[RunResult]) -> tuple[list[str], list[list[str]]]:
    """Rows = methods, one column per dataset/arch/protocol/direction group,
    cells = mean±std (percent) pooled over every fold of every seed."""
    columns: list[str] = []
    methods: list[str] = []
    pools: dict[tuple[str, str], list[float]] = {}
    for r in results:
        col = _group_label(r)
        if col not in columns:
            columns.append(col)
        if r.method not in methods:
            methods.append(r.method)
        pools.setdefault((r.method, col), []).extend(r.fold_accuracies)
    header = ["method"] + columns
    rows = []
    for m in methods:
        row = [m]
        for col in columns:
            accs = pools.get((m, col))
            if accs is None:
                row.append("")
            else:
                row.append(f"{100 * np.mean(accs):.2f}+-{100 * np.std(accs):.2f}")
        rows.append(row)
    return header, rows


def write_summary_csv(results: list[RunResult], path: str | Path) -> Path:
    header, rows = summary_table(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    return path


def timing_report(results: list[RunResult]) -> list[dict]:
    return [{"method": r.method, "protocol": r.protocol, "direction": r.direction,
             "arch": r.arch, "seed": r.seed, "folds": len(r.fold_accuracies),
             "train_seconds": r.train_seconds, "test_seconds": r.test_seconds}
            for r in results]


def write_timing_csv(results: list[RunResult], path: str | Path) -> Path:
    rows = timing_report(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["method", "protocol", "direction", "arch", "seed", "folds",
            "train_seconds", "test_seconds"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(str(row[c]) for c in cols) + "\n")
    return path


def export_features(spec: NetworkSpec, params: Params, x: np.ndarray,
                    sample_ids: np.ndarray, subjects: np.ndarray, labels: np.ndarray,
                    path: str | Path) -> Path:
    """Deterministic CSV of extractor features: sample_id, subject, label, f0..."""
    with torch.no_grad():
        feats = forward(spec, params, x).features.cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("sample_id,subject,label," + ",".join(f"f{i}" for i in range(feats.shape[1])) + "\n")
        for sid, subj, lab, row in zip(sample_ids, subjects, labels, feats):
            f.write(f"{int(sid)},{int(subj)},{int(lab)}," + ",".join(fmt9(v) for v in row) + "\n")
    return path
