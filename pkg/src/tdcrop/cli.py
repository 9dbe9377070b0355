"""Command-line entry point: ``tdcrop`` exposes the full pipeline — solve a
single design, generate datasets, train and evaluate surrogates, run the
convergence/dropout/OOD studies, and benchmark inference.

Conventions shared by all subcommands: configuration comes from a JSON file
(``--config``) with flag overrides on top; every run echoes its effective
config and a manifest (config hash, seeds, versions — no timestamps, so
reruns are byte-identical) into the output directory; exit code 0 means
success, 1 a runtime/model failure, and 2 a usage or config error. Study
cells are cached under ``$TDCROP_CACHE``.
"""

import argparse
import hashlib
import json
import os
import sys

from .errors import ConfigError, InputDomainError, TdcropError

SIMULATE_HEADER = (
    "s,rx,ry,rz,R11,R12,R13,R21,R22,R23,R31,R32,R33,"
    "t1x,t1y,t1z,t2x,t2y,t2z,t3x,t3y,t3z,t4x,t4y,t4z"
)
BENCH_HEADER = "model,workload,seconds,hardware"

_ARCHS = ("deeponet", "deeponet_pose", "fno", "fno_pose")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------
def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed):
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}", pointer=f"/{key}")


def _get(cfg: dict, key: str, types, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required key {key!r}", pointer=f"/{key}")
        return default
    value = cfg[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ConfigError(
            f"key {key!r} must be {getattr(types, '__name__', types)}, "
            f"got {type(value).__name__}",
            pointer=f"/{key}",
        )
    return value


def _ensure_out(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(payload: dict, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


def _write_run_artifacts(out: str, command: str, cfg: dict, seeds) -> None:
    """Effective-config echo plus a provenance manifest (hash, seeds,
    versions; deliberately no timestamps)."""
    import platform

    import numpy as np

    from . import __version__

    canon = json.dumps(cfg, sort_keys=True)
    _write_json(cfg, os.path.join(out, "config.json"))
    _write_json(
        {
            "command": command,
            "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
            "seeds": list(seeds),
            "versions": {
                "tdcrop": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
        },
        os.path.join(out, "manifest.json"),
    )


def _parse_four(text: str, flag: str):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{flag} must be four comma-separated numbers") from exc
    if len(values) != 4:
        raise ConfigError(f"{flag} must have exactly four values, got {len(values)}")
    return values


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    from .rodmodel import DesignVector, solve_equilibrium
    from .errors import NonconvergenceError

    out = _ensure_out(args)
    if args.design:
        doc = _load_config(args.design)
        _check_keys(doc, {
            "tendon_offsets", "tendon_pitches", "tendon_tensions",
            "backbone_radius", "backbone_length", "youngs_modulus",
        })
        try:
            design = DesignVector(
                tendon_offsets=_get(doc, "tendon_offsets", list, required=True),
                tendon_pitches=_get(doc, "tendon_pitches", list, required=True),
                tendon_tensions=_get(doc, "tendon_tensions", list, required=True),
                backbone_radius=_get(doc, "backbone_radius", float, required=True),
                backbone_length=_get(doc, "backbone_length", float, required=True),
                youngs_modulus=_get(doc, "youngs_modulus", float, required=True),
            )
        except InputDomainError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        missing = [flag for flag, val in (
            ("--tensions", args.tensions), ("--offsets", args.offsets),
            ("--pitches", args.pitches), ("--radius", args.radius),
            ("--length", args.length), ("--modulus", args.modulus),
        ) if val is None]
        if missing:
            raise ConfigError(
                f"design requires --design FILE or all inline flags; "
                f"missing {', '.join(missing)}"
            )
        design = DesignVector(
            tendon_offsets=_parse_four(args.offsets, "--offsets"),
            tendon_pitches=_parse_four(args.pitches, "--pitches"),
            tendon_tensions=_parse_four(args.tensions, "--tensions"),
            backbone_radius=args.radius,
            backbone_length=args.length,
            youngs_modulus=args.modulus,
        )

    try:
        cfg = solve_equilibrium(design, steps=args.steps)
    except (NonconvergenceError, TdcropError) as exc:
        _write_json(
            {"error": type(exc).__name__, "message": str(exc),
             "best_residual": getattr(exc, "best_residual", None)},
            os.path.join(out, "failure.json"),
        )
        print(f"tdcrop simulate: {exc}", file=sys.stderr)
        return 1

    lines = [SIMULATE_HEADER]
    n = cfg.arclengths.size
    for k in range(n):
        cells = [repr(float(cfg.arclengths[k]))]
        cells += [repr(float(v)) for v in cfg.backbone[k]]
        cells += [repr(float(v)) for v in cfg.frames[k].ravel()]
        for i in range(4):
            cells += [repr(float(v)) for v in cfg.tendon_curves[i, k]]
        lines.append(",".join(cells))
    with open(os.path.join(out, "equilibrium.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json(
        {
            "residual_norm": cfg.residual_norm,
            "iterations": cfg.iterations,
            "homotopy_used": cfg.homotopy_used,
            "steps": args.steps,
            "grid_points": int(n),
        },
        os.path.join(out, "equilibrium.json"),
    )
    effective = {
        "tendon_offsets": [float(v) for v in design.tendon_offsets],
        "tendon_pitches": [float(v) for v in design.tendon_pitches],
        "tendon_tensions": [float(v) for v in design.tendon_tensions],
        "backbone_radius": float(design.backbone_radius),
        "backbone_length": float(design.backbone_length),
        "youngs_modulus": float(design.youngs_modulus),
        "steps": args.steps,
    }
    _write_run_artifacts(out, "simulate", effective, [])
    return 0


def cmd_gen_data(args) -> int:
    from .dataset import (
        DEFAULT_NORMALIZATION, DEFAULT_RANGES, NormalizationSpec,
        ParameterRanges, generate_dataset, save_dataset, split_dataset,
    )

    cfg = _load_config(args.config)
    _check_keys(cfg, {"n_samples", "seed", "filename", "steps",
                      "max_failure_fraction", "ranges", "normalization",
                      "test_fraction", "split_seed"})
    n_samples = _get(cfg, "n_samples", int, required=True)
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1", pointer="/n_samples")
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    ranges = DEFAULT_RANGES
    if "ranges" in cfg:
        try:
            ranges = ParameterRanges.from_dict(_get(cfg, "ranges", dict))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad ranges: {exc}", pointer="/ranges") from exc
    normalization = DEFAULT_NORMALIZATION
    if "normalization" in cfg:
        try:
            normalization = NormalizationSpec.from_dict(
                _get(cfg, "normalization", dict)
            )
        except (TypeError, KeyError, InputDomainError) as exc:
            raise ConfigError(f"bad normalization: {exc}",
                              pointer="/normalization") from exc
    out = _ensure_out(args)
    ds = generate_dataset(
        n_samples, seed,
        ranges=ranges,
        normalization=normalization,
        steps=_get(cfg, "steps", int, 41),
        max_failure_fraction=_get(cfg, "max_failure_fraction", float, 0.05),
    )
    if "test_fraction" in cfg:
        ds = split_dataset(ds, _get(cfg, "test_fraction", float),
                           seed=_get(cfg, "split_seed", int, 0))
    path = os.path.join(out, _get(cfg, "filename", str, "dataset.tdcrds"))
    save_dataset(ds, path)
    effective = dict(cfg, n_samples=n_samples, seed=seed, filename=os.path.basename(path))
    _write_run_artifacts(out, "gen-data", effective, [seed])
    print(path)
    return 0


def _schedule_from(cfg: dict):
    from .training import LrSchedule

    doc = _get(cfg, "schedule", dict, None)
    if doc is None:
        return LrSchedule()
    _check_keys(doc, {"initial", "warmup_fraction", "peak", "end", "cycles",
                      "gamma", "horizon"})
    base = LrSchedule()
    return LrSchedule(
        initial=_get(doc, "initial", float, base.initial),
        warmup_fraction=_get(doc, "warmup_fraction", float, base.warmup_fraction),
        peak=_get(doc, "peak", float, base.peak),
        end=_get(doc, "end", float, base.end),
        cycles=_get(doc, "cycles", int, base.cycles),
        gamma=_get(doc, "gamma", float, base.gamma),
        horizon=_get(doc, "horizon", int, base.horizon),
    )


def cmd_train(args) -> int:
    from .dataset import load_dataset
    from .neuralops import init_model
    from .training import (
        TrainConfig, default_window, save_checkpoint, train, write_records,
    )

    cfg = _load_config(args.config)
    _check_keys(cfg, {"architecture", "dataset", "max_epochs", "batch_size",
                      "seed", "window", "threshold", "dropout_q", "schedule",
                      "resume_from", "checkpoint_cadence", "filename"})
    arch = _get(cfg, "architecture", str, required=True)
    if arch not in _ARCHS:
        raise ConfigError(f"architecture must be one of {_ARCHS}",
                          pointer="/architecture")
    ds = load_dataset(_get(cfg, "dataset", str, required=True))
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    out = _ensure_out(args)
    ckpt_path = os.path.join(out, _get(cfg, "filename", str, "checkpoint.ckpt"))
    tc = TrainConfig(
        max_epochs=_get(cfg, "max_epochs", int, required=True),
        batch_size=_get(cfg, "batch_size", int, 256),
        window=_get(cfg, "window", int, default_window(arch)),
        threshold=_get(cfg, "threshold", float, 1e-3),
        seed=seed,
        dropout_q=_get(cfg, "dropout_q", float, 0.0),
        checkpoint_path=ckpt_path,
        checkpoint_cadence=_get(cfg, "checkpoint_cadence", int, 0),
        schedule=_schedule_from(cfg),
    )
    resume = _get(cfg, "resume_from", str, None)
    model = None if resume else init_model(arch, seed=seed)
    result = train(model, ds, tc, resume_from=resume)
    write_records(result.records, os.path.join(out, "records.csv"))
    if result.checkpoint_path is None:
        save_checkpoint(ckpt_path, result.model, epoch=result.stopped_epoch,
                        seed=seed)
    effective = dict(cfg, architecture=arch, seed=seed)
    _write_run_artifacts(out, "train", effective, [seed])
    print(json.dumps({
        "checkpoint": ckpt_path,
        "stopped_epoch": result.stopped_epoch,
        "reason": result.reason,
        "final_rel_l2": result.records[-1].rel_l2 if result.records else None,
    }, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .dataset import load_dataset, split_dataset
    from .eval import evaluate_model
    from .training import load_checkpoint

    cfg = _load_config(args.config)
    _check_keys(cfg, {"checkpoints", "checkpoint", "dataset", "subset",
                      "architecture", "test_fraction", "split_seed"})
    paths = _get(cfg, "checkpoints", list, None)
    single = _get(cfg, "checkpoint", str, None)
    if paths is None and single is None:
        raise ConfigError("need 'checkpoints' (list) or 'checkpoint' (path)",
                          pointer="/checkpoints")
    paths = list(paths or []) + ([single] if single else [])
    expect = _get(cfg, "architecture", str, None)
    if expect is not None and expect not in _ARCHS:
        raise ConfigError(f"architecture must be one of {_ARCHS}",
                          pointer="/architecture")
    models = [load_checkpoint(p, expect_kind=expect)[0] for p in paths]
    ds = load_dataset(_get(cfg, "dataset", str, required=True))
    subset = _get(cfg, "subset", str, "test")
    if subset == "none":
        subset = None
    if subset is not None and ds.split is None:
        ds = split_dataset(ds, _get(cfg, "test_fraction", float, 0.2),
                           seed=_get(cfg, "split_seed", int, 0))
    report = evaluate_model(models, ds, subset=subset)
    out = _ensure_out(args)
    payload = {
        "model": report.model,
        "per_seed_errors": list(report.per_seed_errors),
        "mean_error": report.mean_error,
        "accuracy_pct": report.accuracy_pct,
        "seed_count": report.seed_count,
    }
    _write_json(payload, os.path.join(out, "eval.json"))
    _write_run_artifacts(out, "eval", cfg, [])
    print(json.dumps(payload, sort_keys=True))
    return 0


def _study_config(cfg: dict):
    from .dataset import load_dataset
    from .eval import ALL_ARCHITECTURES, StudyConfig

    archs = _get(cfg, "architectures", list, list(ALL_ARCHITECTURES))
    for i, a in enumerate(archs):
        if a not in _ARCHS:
            raise ConfigError(f"unknown architecture {a!r}",
                              pointer=f"/architectures/{i}")
    return StudyConfig(
        master=load_dataset(_get(cfg, "dataset", str, required=True)),
        seeds=tuple(_get(cfg, "seeds", list, [0, 1, 2])),
        architectures=tuple(archs),
        batch_size=_get(cfg, "batch_size", int, 256),
        deeponet_epochs=_get(cfg, "deeponet_epochs", int, 2000),
        fno_epochs=_get(cfg, "fno_epochs", int, 1000),
        cache_dir=_get(cfg, "cache_dir", str, None),
        split_seed=_get(cfg, "split_seed", int, 0),
        test_fraction=_get(cfg, "test_fraction", float, 0.2),
    )


def cmd_study(args) -> int:
    from .eval import (
        convergence_study, dropout_study, ood_study, write_study_rows,
        write_study_summary,
    )

    cfg = _load_config(args.config)
    _check_keys(cfg, {"dataset", "seeds", "architectures", "batch_size",
                      "deeponet_epochs", "fno_epochs", "cache_dir",
                      "split_seed", "test_fraction", "n_list", "q_list",
                      "count_per_bin", "ood_seed", "n"})
    study_cfg = _study_config(cfg)
    if args.kind == "convergence":
        rows = convergence_study(_get(cfg, "n_list", list, [100, 500, 2000]),
                                 study_cfg)
    elif args.kind == "dropout":
        rows = dropout_study(_get(cfg, "q_list", list, [0.0, 0.1, 0.2, 0.3]),
                             study_cfg, n=_get(cfg, "n", int, None))
    else:
        rows = ood_study(
            study_cfg,
            count_per_bin=_get(cfg, "count_per_bin", int, 1000),
            seed=_get(cfg, "ood_seed", int, 7),
            n=_get(cfg, "n", int, None),
        )
    out = _ensure_out(args)
    write_study_rows(rows, os.path.join(out, f"{args.kind}.csv"))
    write_study_summary(rows, os.path.join(out, f"{args.kind}_summary.json"))
    _write_run_artifacts(out, f"study {args.kind}", cfg, list(study_cfg.seeds))
    print(os.path.join(out, f"{args.kind}.csv"))
    return 0


def cmd_bench(args) -> int:
    from .eval import ALL_ARCHITECTURES, timing_bench

    cfg = _load_config(args.config)
    _check_keys(cfg, {"kinds", "workloads", "repeats", "warmups", "seed"})
    kinds = _get(cfg, "kinds", list, list(ALL_ARCHITECTURES))
    for i, k in enumerate(kinds):
        if k not in _ARCHS:
            raise ConfigError(f"unknown architecture {k!r}", pointer=f"/kinds/{i}")
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    rows = timing_bench(
        kinds=tuple(kinds),
        workloads=tuple(_get(cfg, "workloads", list, [1, 1000, 80000])),
        repeats=_get(cfg, "repeats", int, 5),
        warmups=_get(cfg, "warmups", int, 2),
        seed=seed,
    )
    out = _ensure_out(args)
    lines = [BENCH_HEADER]
    for r in rows:
        lines.append(f'{r.model},{r.workload},{r.seconds!r},"{r.hardware}"')
    with open(os.path.join(out, "bench.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_run_artifacts(out, "bench", cfg, [seed])
    print(os.path.join(out, "bench.csv"))
    return 0


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON config file")
    parent.add_argument("--seed", type=int, help="override the config seed")
    parent.add_argument("--out", help="output directory (default: cwd)")
    parent.add_argument("--threads", type=int,
                        help="BLAS/OpenMP thread cap (default: all cores)")

    parser = argparse.ArgumentParser(
        prog="tdcrop",
        description="Tendon-driven continuum-robot statics and neural-operator "
                    "surrogates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[parent],
                       help="solve one design and write its equilibrium")
    p.add_argument("--design", help="JSON file with the design fields")
    p.add_argument("--tensions", help="four comma-separated tendon tensions [N]")
    p.add_argument("--offsets", help="four comma-separated tendon offsets [m]")
    p.add_argument("--pitches", help="four comma-separated helix pitches [rad/m]")
    p.add_argument("--radius", type=float, help="backbone radius [m]")
    p.add_argument("--length", type=float, help="backbone length [m]")
    p.add_argument("--modulus", type=float, help="Young's modulus [Pa]")
    p.add_argument("--steps", type=int, default=41,
                   help="integration steps (default 41; use 2048 for goldens)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", parents=[parent],
                       help="sample designs, solve them, write a dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[parent],
                       help="train a surrogate on a dataset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[parent],
                       help="evaluate checkpoints on a dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("study", parents=[parent],
                       help="run a convergence/dropout/OOD study")
    p.add_argument("kind", choices=("convergence", "dropout", "ood"))
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("bench", parents=[parent],
                       help="benchmark batch inference")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            print("tdcrop: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" at {exc.pointer}" if getattr(exc, "pointer", "") else ""
        print(f"tdcrop: config error{where}: {exc}", file=sys.stderr)
        return 2
    except TdcropError as exc:
        print(f"tdcrop: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tdcrop: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
