"""Paired two-modality datasets: in-memory model, synthesis, disk layout, splits.

A dataset is a set of recording sessions. Each session belongs to one subject
and contains a fixed number of trials; each trial has one class label and a
block of time-aligned samples in two feature spaces ("eeg" and "em" — EEG
differential-entropy style features and eye-movement style features). The two
modalities are paired sample-for-sample within every trial.

Disk layout (one directory per dataset):

    manifest.json                   geometry + per-session file table
    eeg_<subject>_<session>.csv     one row per sample, %.9g floats, no header
    em_<subject>_<session>.csv      same row count/order as the eeg file
    labels_<subject>_<session>.csv  header trial_id,label,sample_count

Sample order everywhere is session-major (manifest order), then trial order,
then row order within the trial. Flat sample indices used by splits refer to
this order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import LoadError, PairingError, ProtocolError, SchemaError
from .util import fmt9, rng_from, sha256_hex

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "cmcrd-dataset"
DATASET_VERSION = 1

# Within-subject protocol: how many leading trials of each session are used
# for training, keyed by number of classes (remaining trials are the test set).
TRAIN_TRIALS_BY_CLASSES = {3: 9, 4: 16, 5: 10}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64) if a.dtype.kind == "f" else np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trial:
    """One stimulus presentation: a label and paired sample blocks."""

    trial_id: int
    label: int
    eeg: np.ndarray  # (n_samples, eeg_dim) float64
    em: np.ndarray  # (n_samples, em_dim) float64


@dataclass(frozen=True)
class SessionRecord:
    subject_id: int
    session_id: int
    trials: tuple[Trial, ...]


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable paired-modality dataset."""

    name: str
    num_classes: int
    eeg_dim: int
    em_dim: int
    trials_per_session: int
    sessions: tuple[SessionRecord, ...]

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise SchemaError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.sessions:
            raise SchemaError("dataset has no sessions")
        seen: set[tuple[int, int]] = set()
        for sess in self.sessions:
            key = (sess.subject_id, sess.session_id)
            if key in seen:
                raise SchemaError(f"duplicate session: subject {key[0]} session {key[1]}")
            seen.add(key)
            if len(sess.trials) != self.trials_per_session:
                raise SchemaError(
                    f"subject {sess.subject_id} session {sess.session_id}: expected "
                    f"{self.trials_per_session} trials, found {len(sess.trials)}"
                )
            for pos, trial in enumerate(sess.trials):
                if trial.trial_id != pos:
                    raise SchemaError(
                        f"subject {sess.subject_id} session {sess.session_id}: trial ids "
                        f"must be 0..{self.trials_per_session - 1} in order, found "
                        f"{trial.trial_id} at position {pos}"
                    )
                if not 0 <= trial.label < self.num_classes:
                    raise SchemaError(
                        f"subject {sess.subject_id} session {sess.session_id} trial "
                        f"{trial.trial_id}: label {trial.label} outside [0, {self.num_classes})"
                    )
                if trial.eeg.ndim != 2 or trial.em.ndim != 2:
                    raise SchemaError("trial feature blocks must be 2-d arrays")
                if trial.eeg.shape[0] != trial.em.shape[0]:
                    raise PairingError(
                        f"subject {sess.subject_id} session {sess.session_id} trial "
                        f"{trial.trial_id}: eeg has {trial.eeg.shape[0]} samples, "
                        f"em has {trial.em.shape[0]}"
                    )
                if trial.eeg.shape[0] < 1:
                    raise SchemaError(
                        f"subject {sess.subject_id} session {sess.session_id} trial "
                        f"{trial.trial_id}: empty sample block"
                    )
                if trial.eeg.shape[1] != self.eeg_dim:
                    raise SchemaError(
                        f"subject {sess.subject_id} session {sess.session_id} trial "
                        f"{trial.trial_id}: eeg width {trial.eeg.shape[1]} != {self.eeg_dim}"
                    )
                if trial.em.shape[1] != self.em_dim:
                    raise SchemaError(
                        f"subject {sess.subject_id} session {sess.session_id} trial "
                        f"{trial.trial_id}: em width {trial.em.shape[1]} != {self.em_dim}"
                    )

    # ---- flat views (sample-major, session order) ----

    @cached_property
    def _flat(self) -> dict[str, np.ndarray]:
        eeg, em, labels, subj, sess_ids, trial_ids, group = [], [], [], [], [], [], []
        gid = 0
        for sess in self.sessions:
            for trial in sess.trials:
                n = trial.eeg.shape[0]
                eeg.append(trial.eeg)
                em.append(trial.em)
                labels.append(np.full(n, trial.label, dtype=np.int64))
                subj.append(np.full(n, sess.subject_id, dtype=np.int64))
                sess_ids.append(np.full(n, sess.session_id, dtype=np.int64))
                trial_ids.append(np.full(n, trial.trial_id, dtype=np.int64))
                group.append(np.full(n, gid, dtype=np.int64))
                gid += 1
        return {
            "eeg": _readonly(np.concatenate(eeg)),
            "em": _readonly(np.concatenate(em)),
            "labels": _readonly(np.concatenate(labels)),
            "subject": _readonly(np.concatenate(subj)),
            "session": _readonly(np.concatenate(sess_ids)),
            "trial": _readonly(np.concatenate(trial_ids)),
            "group": _readonly(np.concatenate(group)),
        }

    @property
    def eeg(self) -> np.ndarray:
        return self._flat["eeg"]

    @property
    def em(self) -> np.ndarray:
        return self._flat["em"]

    @property
    def labels(self) -> np.ndarray:
        return self._flat["labels"]

    @property
    def sample_subject(self) -> np.ndarray:
        return self._flat["subject"]

    @property
    def sample_session(self) -> np.ndarray:
        return self._flat["session"]

    @property
    def sample_trial(self) -> np.ndarray:
        return self._flat["trial"]

    @property
    def sample_group(self) -> np.ndarray:
        """Distinct integer per (subject, session, trial); used for trial voting."""
        return self._flat["group"]

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @cached_property
    def subject_ids(self) -> tuple[int, ...]:
        out: list[int] = []
        for sess in self.sessions:
            if sess.subject_id not in out:
                out.append(sess.subject_id)
        return tuple(out)

    def modality(self, name: str) -> np.ndarray:
        if name not in ("eeg", "em"):
            raise ValueError(f"unknown modality {name!r}")
        return self._flat[name]

    def fingerprint(self) -> str:
        """sha256 over geometry and raw sample bytes; identifies dataset content."""
        h = [
            self.name.encode(),
            np.int64([self.num_classes, self.eeg_dim, self.em_dim, self.trials_per_session]).tobytes(),
            self.sample_subject.tobytes(),
            self.sample_session.tobytes(),
            self.sample_trial.tobytes(),
            self.labels.tobytes(),
            self.eeg.tobytes(),
            self.em.tobytes(),
        ]
        return sha256_hex(b"".join(h))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Geometry and distribution knobs for the synthetic paired-modality generator.

    Generative story: each class has a latent centroid. For sample i of a
    trial with label y, a latent z_i = centroid[y] + u_i is drawn; the
    eeg-side observation mixes z_i while the em-side observation mixes
    rho*u_i + (1-rho)*u'_i around the same centroid (u'_i independent), so
    `cross_modal_coupling` = rho controls how much per-sample information the
    two views share beyond the label. Each subject adds a fixed random offset
    per modality; i.i.d. Gaussian sensor noise is added on top.
    """

    num_subjects: int = 20
    sessions_per_subject: int = 3
    trials_per_session: int = 15
    samples_per_trial: int = 10
    num_classes: int = 5
    eeg_dim: int = 310
    em_dim: int = 33
    latent_dim: int = 16
    cross_modal_coupling: float = 0.8
    class_separation: float = 3.0
    subject_shift_scale: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self) -> None:
        if self.num_subjects < 1:
            raise SchemaError("num_subjects must be >= 1")
        if self.num_classes < 2:
            raise SchemaError("num_classes must be >= 2")
        if not 0.0 <= self.cross_modal_coupling <= 1.0:
            raise SchemaError("cross_modal_coupling must lie in [0, 1]")
        for fld in ("sessions_per_subject", "trials_per_session", "samples_per_trial",
                    "eeg_dim", "em_dim", "latent_dim"):
            if getattr(self, fld) < 1:
                raise SchemaError(f"{fld} must be >= 1")
        if self.class_separation < 0 or self.noise_scale < 0 or self.subject_shift_scale < 0:
            raise SchemaError("scales must be non-negative")
        if self.seed < 0:
            raise SchemaError("seed must be non-negative")


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Draw a dataset from the generative model in SynthSpec; deterministic in seed."""
    rng = rng_from(spec.seed)
    c, L = spec.num_classes, spec.latent_dim
    rho = spec.cross_modal_coupling

    centroids = rng.standard_normal((c, L))
    # Rescale so the mean pairwise centroid distance equals class_separation.
    diffs = centroids[:, None, :] - centroids[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    mean_dist = dist[np.triu_indices(c, k=1)].mean()
    if mean_dist > 0:
        centroids = centroids * (spec.class_separation / mean_dist)

    mix_eeg = rng.standard_normal((spec.eeg_dim, L)) / np.sqrt(L)
    mix_em = rng.standard_normal((spec.em_dim, L)) / np.sqrt(L)

    sessions: list[SessionRecord] = []
    for subj in range(1, spec.num_subjects + 1):
        off_eeg = rng.standard_normal(spec.eeg_dim) * spec.subject_shift_scale
        off_em = rng.standard_normal(spec.em_dim) * spec.subject_shift_scale
        for sess in range(1, spec.sessions_per_subject + 1):
            trials: list[Trial] = []
            for t in range(spec.trials_per_session):
                label = t % c
                n = spec.samples_per_trial
                u = rng.standard_normal((n, L))
                u2 = rng.standard_normal((n, L))
                z_eeg = centroids[label] + u
                z_em = centroids[label] + rho * u + (1.0 - rho) * u2
                eeg = z_eeg @ mix_eeg.T + off_eeg + spec.noise_scale * rng.standard_normal((n, spec.eeg_dim))
                em = z_em @ mix_em.T + off_em + spec.noise_scale * rng.standard_normal((n, spec.em_dim))
                trials.append(Trial(trial_id=t, label=label, eeg=_readonly(eeg), em=_readonly(em)))
            sessions.append(SessionRecord(subject_id=subj, session_id=sess, trials=tuple(trials)))

    return Dataset(
        name=spec.name,
        num_classes=c,
        eeg_dim=spec.eeg_dim,
        em_dim=spec.em_dim,
        trials_per_session=spec.trials_per_session,
        sessions=tuple(sessions),
    )


# Ready-made geometries. The *-like presets mirror the three public corpora
# this pipeline targets (subject/session/trial counts and feature widths);
# "bench" is a desk-scale benchmark that a laptop can sweep in minutes. Its
# modality widths are deliberately lopsided (narrow noisy student view, wide
# teacher view) so the teacher generalizes well and distillation has real
# headroom — the regime the method is built for.
SYNTH_PRESETS: dict[str, dict] = {
    "seed-like": dict(num_subjects=15, sessions_per_subject=3, trials_per_session=15,
                      samples_per_trial=10, num_classes=3, eeg_dim=310, em_dim=33,
                      name="seed-like"),
    "seediv-like": dict(num_subjects=15, sessions_per_subject=3, trials_per_session=24,
                        samples_per_trial=10, num_classes=4, eeg_dim=310, em_dim=31,
                        name="seediv-like"),
    "seedv-like": dict(num_subjects=20, sessions_per_subject=3, trials_per_session=15,
                       samples_per_trial=10, num_classes=5, eeg_dim=310, em_dim=33,
                       name="seedv-like"),
    "bench": dict(num_subjects=5, sessions_per_subject=2, trials_per_session=15,
                  samples_per_trial=8, num_classes=5, eeg_dim=9, em_dim=48,
                  latent_dim=8, cross_modal_coupling=0.8, class_separation=6.0,
                  subject_shift_scale=1.0, noise_scale=2.0, name="bench"),
}


def preset_spec(name: str, seed: int = 0, **overrides) -> SynthSpec:
    if name not in SYNTH_PRESETS:
        raise SchemaError(f"unknown preset {name!r}; choose from {sorted(SYNTH_PRESETS)}")
    kwargs = dict(SYNTH_PRESETS[name])
    kwargs.update(overrides)
    kwargs["seed"] = seed
    return SynthSpec(**kwargs)


# ---------------------------------------------------------------------------
# disk round trip
# ---------------------------------------------------------------------------


def _write_matrix_csv(path: Path, mat: np.ndarray) -> None:
    with open(path, "w") as f:
        for row in mat:
            f.write(",".join(fmt9(v) for v in row))
            f.write("\n")


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write the manifest + per-session CSV layout; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for sess in ds.sessions:
        tag = f"{sess.subject_id}_{sess.session_id}"
        names = {"eeg": f"eeg_{tag}.csv", "em": f"em_{tag}.csv", "labels": f"labels_{tag}.csv"}
        _write_matrix_csv(out / names["eeg"], np.concatenate([t.eeg for t in sess.trials]))
        _write_matrix_csv(out / names["em"], np.concatenate([t.em for t in sess.trials]))
        with open(out / names["labels"], "w") as f:
            f.write("trial_id,label,sample_count\n")
            for t in sess.trials:
                f.write(f"{t.trial_id},{t.label},{t.eeg.shape[0]}\n")
        entries.append({"subject": sess.subject_id, "session": sess.session_id, **names})
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "name": ds.name,
        "num_classes": ds.num_classes,
        "eeg_dim": ds.eeg_dim,
        "em_dim": ds.em_dim,
        "trials_per_session": ds.trials_per_session,
        "sessions": entries,
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return out


_MANIFEST_KEYS = {"format", "version", "name", "num_classes", "eeg_dim", "em_dim",
                  "trials_per_session", "sessions"}


def _load_matrix(path: Path, what: str) -> np.ndarray:
    if not path.is_file():
        raise LoadError(f"missing {what} file: {path}")
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise SchemaError(f"{path}: cannot parse as numeric CSV ({e})") from e
    return mat


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory; raises LoadError/SchemaError/PairingError."""
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise LoadError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{mpath}: invalid JSON ({e})") from e
    unknown = set(manifest) - _MANIFEST_KEYS
    if unknown:
        raise SchemaError(f"{mpath}: unknown manifest keys {sorted(unknown)}")
    missing = _MANIFEST_KEYS - set(manifest)
    if missing:
        raise SchemaError(f"{mpath}: missing manifest keys {sorted(missing)}")
    if manifest["format"] != DATASET_FORMAT or manifest["version"] != DATASET_VERSION:
        raise SchemaError(
            f"{mpath}: unsupported format {manifest['format']!r} v{manifest['version']}"
        )

    sessions: list[SessionRecord] = []
    for entry in manifest["sessions"]:
        subj, sess_id = int(entry["subject"]), int(entry["session"])
        where = f"subject {subj} session {sess_id}"
        lpath = root / entry["labels"]
        if not lpath.is_file():
            raise LoadError(f"missing labels file for {where}: {lpath}")
        rows = lpath.read_text().strip().splitlines()
        if not rows or rows[0].strip() != "trial_id,label,sample_count":
            raise SchemaError(f"{lpath}: expected header 'trial_id,label,sample_count'")
        table = []
        for ln in rows[1:]:
            parts = ln.strip().split(",")
            if len(parts) != 3:
                raise SchemaError(f"{lpath}: bad row {ln!r}")
            try:
                table.append(tuple(int(p) for p in parts))
            except ValueError as e:
                raise SchemaError(f"{lpath}: bad row {ln!r} ({e})") from e
        eeg = _load_matrix(root / entry["eeg"], f"eeg ({where})")
        em = _load_matrix(root / entry["em"], f"em ({where})")
        counts = [n for (_, _, n) in table]
        for tid, _, n in table:
            if n < 1:
                raise SchemaError(f"{lpath}: trial {tid} has sample_count {n}")
        total = sum(counts)
        if eeg.shape[0] != em.shape[0] or eeg.shape[0] != total:
            # blame the first trial whose block cannot be filled from both files
            cum = 0
            bad = table[-1][0]
            for tid, _, n in table:
                cum += n
                if cum > min(eeg.shape[0], em.shape[0]):
                    bad = tid
                    break
            raise PairingError(
                f"{where} trial {bad}: labels promise {total} samples, "
                f"eeg file has {eeg.shape[0]}, em file has {em.shape[0]}"
            )
        trials = []
        start = 0
        for tid, label, n in table:
            trials.append(Trial(trial_id=tid, label=label,
                                eeg=_readonly(eeg[start:start + n]),
                                em=_readonly(em[start:start + n])))
            start += n
        sessions.append(SessionRecord(subject_id=subj, session_id=sess_id, trials=tuple(trials)))

    return Dataset(
        name=manifest["name"],
        num_classes=int(manifest["num_classes"]),
        eeg_dim=int(manifest["eeg_dim"]),
        em_dim=int(manifest["em_dim"]),
        trials_per_session=int(manifest["trials_per_session"]),
        sessions=tuple(sessions),
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    fold_id: int
    subject_id: int  # within: the subject being trained; cross: the held-out subject
    train: np.ndarray
    test: np.ndarray
    val: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class SplitPlan:
    protocol: str  # "within" | "cross"
    folds: tuple[Fold, ...]


def make_within_subject_splits(ds: Dataset, train_trials: int | None = None) -> SplitPlan:
    """One fold per subject; the first `train_trials` trials of *every* session
    train, the remaining trials test. Default trial budget follows the class
    count (3 -> 9, 4 -> 16, 5 -> 10)."""
    k = train_trials if train_trials is not None else TRAIN_TRIALS_BY_CLASSES.get(ds.num_classes)
    if k is None:
        raise ProtocolError(
            f"no default train-trial count for {ds.num_classes} classes; pass train_trials"
        )
    if not 1 <= k < ds.trials_per_session:
        raise ProtocolError(
            f"train_trials={k} must lie in [1, {ds.trials_per_session - 1}] "
            f"(need at least one test trial)"
        )
    subj = ds.sample_subject
    trial = ds.sample_trial
    folds = []
    for i, sid in enumerate(ds.subject_ids):
        mine = subj == sid
        train = np.nonzero(mine & (trial < k))[0]
        test = np.nonzero(mine & (trial >= k))[0]
        folds.append(Fold(fold_id=i, subject_id=sid,
                          train=_readonly(train.astype(np.int64)),
                          test=_readonly(test.astype(np.int64))))
    return SplitPlan(protocol="within", folds=tuple(folds))


def make_cross_subject_splits(ds: Dataset, val_fraction: float = 0.1, seed: int = 0) -> SplitPlan:
    """Leave-one-subject-out: fold f tests on subject f; the pooled remaining
    subjects are split sample-level into train/validation with a seeded shuffle."""
    if len(ds.subject_ids) < 2:
        raise ProtocolError("cross-subject protocol needs at least 2 subjects")
    if not 0.0 <= val_fraction <= 0.5:
        raise ProtocolError(f"val_fraction={val_fraction} outside [0, 0.5]")
    subj = ds.sample_subject
    folds = []
    for i, sid in enumerate(ds.subject_ids):
        test = np.nonzero(subj == sid)[0]
        pool = np.nonzero(subj != sid)[0]
        perm = rng_from(seed, i).permutation(pool.shape[0])
        n_val = int(round(val_fraction * pool.shape[0]))
        val = np.sort(pool[perm[:n_val]])
        train = np.sort(pool[perm[n_val:]])
        folds.append(Fold(fold_id=i, subject_id=sid,
                          train=_readonly(train.astype(np.int64)),
                          test=_readonly(test.astype(np.int64)),
                          val=_readonly(val.astype(np.int64))))
    return SplitPlan(protocol="cross", folds=tuple(folds))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalityStats:
    """Per-feature mean/std fit on the training split only.

    Zero-variance guard: columns whose training std is < 1e-12 are centered
    but not scaled (divisor forced to 1), so constant training columns map to
    exactly 0 on the training split.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        safe = np.where(self.std < 1e-12, 1.0, self.std)
        return (x - self.mean) / safe


def fit_stats(x_train: np.ndarray) -> ModalityStats:
    return ModalityStats(mean=_readonly(x_train.mean(axis=0)),
                         std=_readonly(x_train.std(axis=0, ddof=0)))


@dataclass(frozen=True)
class FoldData:
    """Fold-local arrays, normalized with training-split statistics."""

    fold: Fold
    num_classes: int
    eeg_train: np.ndarray
    em_train: np.ndarray
    y_train: np.ndarray
    eeg_val: np.ndarray
    em_val: np.ndarray
    y_val: np.ndarray
    eeg_test: np.ndarray
    em_test: np.ndarray
    y_test: np.ndarray
    test_group: np.ndarray  # trial identity per test sample, for trial voting
    stats_eeg: ModalityStats
    stats_em: ModalityStats

    def train_x(self, modality: str) -> np.ndarray:
        return self.eeg_train if modality == "eeg" else self.em_train

    def val_x(self, modality: str) -> np.ndarray:
        return self.eeg_val if modality == "eeg" else self.em_val

    def test_x(self, modality: str) -> np.ndarray:
        return self.eeg_test if modality == "eeg" else self.em_test


def normalize_features(ds: Dataset, fold: Fold) -> FoldData:
    """Assemble normalized train/val/test arrays for one fold.

    Statistics come from the training split alone — the test fold never
    touches them (checked by the leakage canary in the test suite).
    """
    stats_eeg = fit_stats(ds.eeg[fold.train])
    stats_em = fit_stats(ds.em[fold.train])

    def take(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            _readonly(stats_eeg.transform(ds.eeg[idx])),
            _readonly(stats_em.transform(ds.em[idx])),
            _readonly(ds.labels[idx]),
        )

    eeg_tr, em_tr, y_tr = take(fold.train)
    eeg_va, em_va, y_va = take(fold.val)
    eeg_te, em_te, y_te = take(fold.test)
    return FoldData(
        fold=fold,
        num_classes=ds.num_classes,
        eeg_train=eeg_tr, em_train=em_tr, y_train=y_tr,
        eeg_val=eeg_va, em_val=em_va, y_val=y_va,
        eeg_test=eeg_te, em_test=em_te, y_test=y_te,
        test_group=_readonly(ds.sample_group[fold.test]),
        stats_eeg=stats_eeg, stats_em=stats_em,
    )
