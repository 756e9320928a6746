"""Command-line interface.

Subcommands:

* generate — synthesize a paired-modality dataset directory from a preset
* run      — train/evaluate one or more methods under a protocol
* ablate   — the 2^3 toggle grid (confusion teacher / guidance / weighting)
* compare  — paired t-tests with BH adjustment between methods in a results file

Exit codes: 0 success; 1 runtime failure (training diverged, sampling
impossible); 2 usage or configuration errors (bad flags, unknown config keys,
missing or malformed dataset). Output directory precedence: --out flag, then
config out_dir, then $CMCRD_OUT_DIR, then ./cmcrd-out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, config_keys_with_defaults
from .data import SYNTH_PRESETS, generate_synthetic, preset_spec, save_dataset
from .errors import CmcrdError, ConfigError, DataError, ProtocolError
from .harness import (compare_to_baseline, read_results_jsonl, run_ablation_grid,
                      run_experiment, summary_table, write_results_jsonl,
                      write_summary_csv, write_timing_csv)

OUT_ENV = "CMCRD_OUT_DIR"
_USAGE_ERRORS = (ConfigError, DataError, ProtocolError)


def _config_epilog() -> str:
    lines = ["configuration keys (JSON config file and/or flags; defaults shown):"]
    for key, default in config_keys_with_defaults():
        lines.append(f"  {key} = {default}")
    return "\n".join(lines)


def _add_config_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("--config", help="JSON file with configuration keys")
    p.add_argument("--dataset", help="dataset directory or synthetic preset name")
    if with_method:
        p.add_argument("--method", help="method, or comma list sharing teachers "
                                        "(cmcrd,crd,kd,fitnet,nst,sp,rkd,pkt,none,fusion)")
    p.add_argument("--protocol", choices=("within", "cross"))
    p.add_argument("--direction", choices=("em2eeg", "eeg2em"))
    p.add_argument("--arch", choices=("dnn", "dgcnn"))
    p.add_argument("--seeds", help="comma-separated non-negative integers")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel fold workers")


def _build_config(args: argparse.Namespace, with_method: bool = True) -> ExperimentConfig:
    base = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    over: dict = {}
    if args.dataset:
        over["dataset"] = args.dataset
    if with_method and args.method:
        parts = [m.strip() for m in args.method.split(",") if m.strip()]
        if not parts:
            raise ConfigError("--method given but empty")
        over["method"] = parts[0]
        over["method_list"] = parts[1:]
    if args.protocol:
        over["protocol"] = args.protocol
    if args.direction:
        over["direction"] = args.direction
    if args.arch:
        over["arch"] = args.arch
    if args.seeds:
        try:
            over["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"--seeds must be comma-separated integers: {e}") from e
    if args.out:
        over["out_dir"] = args.out
    if args.jobs is not None:
        over["jobs"] = args.jobs
    return base.replaced(**over) if over else base


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.out_dir or os.environ.get(OUT_ENV) or "cmcrd-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_traces(traces: dict[str, list[dict]], out: Path) -> None:
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for name, recs in sorted(traces.items()):
        with open(tdir / f"{name}.jsonl", "w") as f:
            for rec in recs:
                f.write(json.dumps(rec, sort_keys=True))
                f.write("\n")


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    """Record the result-determining config (execution-only keys dropped, so
    reruns of the same experiment write identical files) and its hash."""
    with open(out / "config.json", "w") as f:
        json.dump({"config": cfg.portable_dict(), "config_hash": cfg.hash()}, f,
                  sort_keys=True, indent=1)
        f.write("\n")


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    overrides = {}
    for flag, key in (("subjects", "num_subjects"), ("sessions", "sessions_per_subject"),
                      ("trials", "trials_per_session"), ("samples_per_trial", "samples_per_trial"),
                      ("classes", "num_classes"), ("eeg_dim", "eeg_dim"), ("em_dim", "em_dim"),
                      ("coupling", "cross_modal_coupling"), ("separation", "class_separation"),
                      ("subject_shift", "subject_shift_scale"), ("noise", "noise_scale")):
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    spec = preset_spec(args.preset, seed=args.seed, **overrides)
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise ConfigError("generate needs --out (or $CMCRD_OUT_DIR)")
    path = save_dataset(generate_synthetic(spec), out)
    print(f"wrote dataset '{spec.name}' to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out = _out_dir(cfg)
    ds = cfg.resolve_dataset()
    results, traces = run_experiment(ds, cfg)
    write_results_jsonl(results, out / "results.jsonl")
    write_summary_csv(results, out / "summary.csv")
    write_timing_csv(results, out / "timing.csv")
    _write_traces(traces, out)
    _write_config(cfg, out)
    header, rows = summary_table(results)
    _print_table(header, rows)
    print(f"results under {out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _build_config(args, with_method=False)
    out = _out_dir(cfg)
    ds = cfg.resolve_dataset()
    teacher_cache: dict = {}
    results = []
    failures: list[str] = []
    for seed in cfg.seeds:
        results.extend(run_ablation_grid(ds, cfg, seed, teacher_cache=teacher_cache,
                                         collect_errors=failures))
    if results:
        write_results_jsonl(results, out / "ablation.jsonl")
        _write_ablation_csv(results, out / "ablation_summary.csv")
        write_timing_csv(results, out / "ablation_timing.csv")
        _write_config(cfg, out)
        _print_ablation(results)
        print(f"results under {out}")
    for msg in failures:
        print(f"ablation cell failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


def _cell_key(r) -> tuple[bool, bool, bool]:
    return (bool(r.extra["mcc"]), bool(r.extra["us"]), bool(r.extra["iew"]))


def _write_ablation_csv(results, path: Path) -> None:
    import numpy as np
    pools: dict[tuple[bool, bool, bool], list[float]] = {}
    for r in results:
        pools.setdefault(_cell_key(r), []).extend(r.fold_accuracies)
    with open(path, "w") as f:
        f.write("mcc,us,iew,mean_accuracy,std_accuracy,folds\n")
        for key in sorted(pools):
            accs = pools[key]
            f.write(f"{int(key[0])},{int(key[1])},{int(key[2])},"
                    f"{np.mean(accs):.6f},{np.std(accs):.6f},{len(accs)}\n")


def _print_ablation(results) -> None:
    import numpy as np
    pools: dict[tuple[bool, bool, bool], list[float]] = {}
    for r in results:
        pools.setdefault(_cell_key(r), []).extend(r.fold_accuracies)
    header = ["mcc", "us", "iew", "accuracy"]
    rows = []
    for key in sorted(pools):
        accs = pools[key]
        rows.append([("y" if k else "n") for k in key]
                    + [f"{100 * np.mean(accs):.2f}+-{100 * np.std(accs):.2f}"])
    _print_table(header, rows)


def cmd_compare(args: argparse.Namespace) -> int:
    results = read_results_jsonl(args.results)
    if not results:
        raise ConfigError(f"no results in {args.results}")
    groups: dict[str, dict[str, list]] = {}
    for r in results:
        label = f"{r.dataset}/{r.arch}/{r.protocol}/{r.direction}"
        groups.setdefault(label, {}).setdefault(r.method, []).append(r)
    header = ["group", "method", "mean_diff", "t", "p", "p_adj", "degenerate"]
    rows: list[list[str]] = []
    for label, by_method in sorted(groups.items()):
        if args.baseline not in by_method:
            raise ConfigError(f"baseline method {args.baseline!r} absent from group {label}")

        def pooled(rs) -> list[float]:
            accs: list[float] = []
            for r in sorted(rs, key=lambda r: r.seed):
                accs.extend(r.fold_accuracies)
            return accs

        base = pooled(by_method[args.baseline])
        others = [(m, pooled(rs)) for m, rs in sorted(by_method.items())
                  if m != args.baseline]
        if not others:
            continue
        try:
            comparison = compare_to_baseline(base, others)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        for row in comparison:
            rows.append([label, row.method, f"{row.mean_diff:+.4f}", f"{row.statistic:.4f}",
                         f"{row.p_value:.6g}", f"{row.p_adjusted:.6g}", str(row.degenerate)])
    _print_table(header, rows)
    if args.out:
        outp = Path(args.out)
        outp.mkdir(parents=True, exist_ok=True)
        with open(outp / "stats.csv", "w") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(row) + "\n")
        print(f"stats under {outp}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmcrd",
        description="Cross-modal contrastive representation distillation experiments",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a dataset directory",
                       description="Synthesize a paired-modality dataset from a preset.")
    g.add_argument("--preset", default="bench", choices=sorted(SYNTH_PRESETS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="target directory (or $CMCRD_OUT_DIR)")
    g.add_argument("--subjects", type=int)
    g.add_argument("--sessions", type=int)
    g.add_argument("--trials", type=int)
    g.add_argument("--samples-per-trial", dest="samples_per_trial", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--eeg-dim", dest="eeg_dim", type=int)
    g.add_argument("--em-dim", dest="em_dim", type=int)
    g.add_argument("--coupling", type=float)
    g.add_argument("--separation", type=float)
    g.add_argument("--subject-shift", dest="subject_shift", type=float)
    g.add_argument("--noise", type=float)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="train and evaluate methods",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="run the 2^3 component toggle grid",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_config_flags(a, with_method=False)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("compare", help="paired t-tests against a baseline method")
    c.add_argument("results", help="results.jsonl produced by `cmcrd run`")
    c.add_argument("--baseline", default="cmcrd")
    c.add_argument("--out", help="directory for stats.csv")
    c.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CmcrdError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
