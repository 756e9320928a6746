"""Checkpoint serialization: parameter dicts and frozen teachers.

Parameter checkpoint = a single JSON container keyed by parameter name, each
entry carrying the shape and the row-major (C-order) flat values. Floats are
written with `repr` precision so load(save(p)) is bit-exact. The format is
versioned; loaders reject unknown versions.

A teacher checkpoint is a parameter checkpoint (net parameters plus the fixed
`embed.w`/`embed.b` projection) next to a JSON sidecar recording the training
provenance: lambda1, softening temperature, seed, and dataset fingerprint.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import LoadError, SchemaError
from .nets import NetworkSpec, Params
from .teacher import TeacherModel

PARAMS_FORMAT = "cmcrd-params"
PARAMS_VERSION = 1
TEACHER_FORMAT = "cmcrd-teacher"
TEACHER_VERSION = 1


def save_params(params: Params, path: str | Path) -> Path:
    path = Path(path)
    arrays = {}
    for name, t in params.items():
        a = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        arrays[name] = {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}
    blob = {"format": PARAMS_FORMAT, "version": PARAMS_VERSION, "arrays": arrays}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(blob, f, sort_keys=True)
        f.write("\n")
    return path


def load_params(path: str | Path) -> Params:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing checkpoint: {path}")
    try:
        blob = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    if blob.get("format") != PARAMS_FORMAT or blob.get("version") != PARAMS_VERSION:
        raise SchemaError(f"{path}: not a {PARAMS_FORMAT} v{PARAMS_VERSION} checkpoint")
    out: Params = {}
    for name, entry in blob["arrays"].items():
        a = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = torch.tensor(a, dtype=torch.float64)
    return out


def save_teacher(teacher: TeacherModel, prefix: str | Path) -> tuple[Path, Path]:
    """Writes <prefix>.params.json and <prefix>.json; returns both paths."""
    prefix = Path(prefix)
    all_params = dict(teacher.params)
    all_params["embed.w"] = teacher.embed_w
    all_params["embed.b"] = teacher.embed_b
    ppath = save_params(all_params, prefix.with_suffix(".params.json"))
    sidecar = {
        "format": TEACHER_FORMAT,
        "version": TEACHER_VERSION,
        "lambda1": teacher.lambda1,
        "temperature": teacher.temperature,
        "seed": teacher.seed,
        "dataset_fingerprint": teacher.dataset_fingerprint,
        "train_accuracy": teacher.train_accuracy,
        "spec": asdict(teacher.spec),
        "params_file": ppath.name,
    }
    spath = prefix.with_suffix(".json")
    with open(spath, "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=1)
        f.write("\n")
    return ppath, spath


def load_teacher(prefix: str | Path) -> TeacherModel:
    prefix = Path(prefix)
    spath = prefix.with_suffix(".json")
    if not spath.is_file():
        raise LoadError(f"missing teacher sidecar: {spath}")
    sidecar = json.loads(spath.read_text())
    if sidecar.get("format") != TEACHER_FORMAT or sidecar.get("version") != TEACHER_VERSION:
        raise SchemaError(f"{spath}: not a {TEACHER_FORMAT} v{TEACHER_VERSION} sidecar")
    spec_d = dict(sidecar["spec"])
    spec_d["hidden"] = tuple(spec_d["hidden"])
    spec = NetworkSpec(**spec_d)
    params = load_params(spath.parent / sidecar["params_file"])
    embed_w = params.pop("embed.w")
    embed_b = params.pop("embed.b")
    return TeacherModel(spec=spec, params=params, embed_w=embed_w, embed_b=embed_b,
                        temperature=float(sidecar["temperature"]),
                        lambda1=float(sidecar["lambda1"]), seed=int(sidecar["seed"]),
                        train_accuracy=float(sidecar["train_accuracy"]),
                        dataset_fingerprint=sidecar["dataset_fingerprint"])
