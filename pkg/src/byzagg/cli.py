"""Command-line entry point: ``byzagg run | sweep | accept``.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import parse_suite, run_criterion
from .attacks import ATTACK_KINDS, AttackSpec
from .core import TASK_KINDS
from .estimators import EstimatorConfig
from .estimators.config import KINDS
from .fl_sim import SCHEDULES, SWEEP_AXES, ExperimentConfig, plateau, simulate, with_axis

CSV_HEADER = (
    "run_id", "round", "estimator", "attack", "epsilon", "m", "n", "d", "H", "k",
    "param_err", "agg_err", "loss", "grad_norm", "converged", "elapsed_ms", "seed",
)
REQUIRED = {"experiment": ("m", "n", "d", "T")}

# (section, key) -> default text; "auto" means derived at run time
DEFAULTS = {
    "experiment": {
        "m": "", "n": "", "d": "", "T": "",
        "epsilon": "0.0", "H": "1", "k": "auto", "delta": "0.1", "schedule": "auto",
        "seed": "0", "task": "mean-estimation", "sigma": "1.0", "sigma_h": "auto",
        "radius": "auto", "estimator_epsilon": "auto", "record_timing": "false",
    },
    "estimator": {
        "kind": "mean", "eta": "0.5", "threshold": "auto", "xi": "auto",
        "interval_size": "auto", "max_iter": "auto", "beta": "auto", "f": "auto",
        "inner": "auto", "k": "auto", "bucket_rule": "theorem", "eig_tol": "1e-06",
        "eig_max_iter": "200", "gm_tol": "1e-10", "prefilter_c0": "4.0",
        "C1": "2.0", "C2": "2.0", "C3": "2.0", "C4": "2.0", "C_bucket": "4.0",
    },
    "attack": {
        "kind": "none", "scale": "5.0", "margin": "0.1", "boost": "auto",
        "target": "zeros", "flip_prob": "1.0", "per_round": "false",
    },
    "secure": {
        "enabled": "false", "clip": "auto", "levels": "65536",
        "modulus": str((1 << 61) - 1), "stochastic_rounding": "false",
    },
}


class ConfigError(ValueError):
    pass


def defaults_text() -> str:
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {value if value else '<required>'}")
        lines.append("")
    return "\n".join(lines)


def _auto(text):
    return text.strip().lower() in ("auto", "none", "")


def _int(text):
    return None if _auto(text) else int(text)


def _float(text):
    return None if _auto(text) else float(text)


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def snapshot_config(text: str) -> dict:
    """Parse config text into ``{section: {key: value}}`` with every default filled in."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    snap = {section: dict(keys) for section, keys in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            snap[section][key] = value.strip()
    for section, keys in REQUIRED.items():
        for key in keys:
            if not snap[section][key]:
                raise ConfigError(f"missing required key '{key}' in [{section}]")
    return snap


def build_config(snap: dict, seed: int | None = None) -> ExperimentConfig:
    """Turn a snapshot into an :class:`ExperimentConfig`; any bad value is a :class:`ConfigError`."""
    ex, es, at, se = snap["experiment"], snap["estimator"], snap["attack"], snap["secure"]
    current = None
    try:
        current = "[experiment] task"
        if ex["task"] not in TASK_KINDS:
            raise ValueError(f"expected one of {TASK_KINDS}")
        current = "[experiment] schedule"
        if ex["schedule"] not in SCHEDULES:
            raise ValueError(f"expected one of {SCHEDULES}")
        current = "[estimator] kind"
        if es["kind"] not in KINDS:
            raise ValueError(f"expected one of {KINDS}")
        current = "[attack] kind"
        if at["kind"] not in ATTACK_KINDS:
            raise ValueError(f"expected one of {ATTACK_KINDS}")
        current = "[estimator]"
        constants = {name: float(es[name]) for name in ("C1", "C2", "C3", "C4", "C_bucket")}
        estimator = EstimatorConfig(
            kind=es["kind"], eta=float(es["eta"]),
            threshold=None if _auto(es["threshold"]) else es["threshold"],
            xi=_float(es["xi"]), interval_size=_int(es["interval_size"]),
            max_iter=_int(es["max_iter"]), beta=_float(es["beta"]), f=_int(es["f"]),
            inner=None if _auto(es["inner"]) else es["inner"], k=_int(es["k"]),
            bucket_rule=es["bucket_rule"], constants=constants, eig_tol=float(es["eig_tol"]),
            eig_max_iter=int(es["eig_max_iter"]), gm_tol=float(es["gm_tol"]),
            prefilter_c0=float(es["prefilter_c0"]),
        )
        current = "[experiment] d"
        d = int(ex["d"])
        current = "[attack] target"
        target = None
        if at["kind"] == "mra":
            if at["target"].strip().lower() == "zeros":
                target = np.zeros(d)
            else:
                target = np.array([float(v) for v in at["target"].split(",")])
                if target.shape != (d,):
                    raise ValueError(f"expected {d} comma-separated values")
        current = "[attack]"
        attack = AttackSpec(
            kind=at["kind"], scale=float(at["scale"]), margin=float(at["margin"]),
            boost=_float(at["boost"]), target=target, flip_prob=float(at["flip_prob"]),
            per_round=_bool(at["per_round"]),
        )
        current = "[experiment]"
        cfg = ExperimentConfig(
            m=int(ex["m"]), n=int(ex["n"]), d=d, epsilon=float(ex["epsilon"]), H=int(ex["H"]),
            k=_int(ex["k"]), T=int(ex["T"]), delta=float(ex["delta"]), schedule=ex["schedule"],
            estimator=estimator, estimator_epsilon=_float(ex["estimator_epsilon"]), attack=attack,
            secure=_bool(se["enabled"]), secure_clip=_float(se["clip"]), secure_levels=int(se["levels"]),
            secure_modulus=int(se["modulus"]), stochastic_rounding=_bool(se["stochastic_rounding"]),
            task=ex["task"], sigma=float(ex["sigma"]), sigma_h=_float(ex["sigma_h"]),
            radius=_float(ex["radius"]), seed=int(ex["seed"]), record_timing=_bool(ex["record_timing"]),
        )
        cfg.estimator_config()  # validates the estimator against epsilon
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{current}: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def run_id(snap: dict, seed: int) -> str:
    payload = json.dumps({"config": snap, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def estimator_label(cfg: ExperimentConfig) -> str:
    est = cfg.estimator
    if est.kind in ("bucketing", "bulyan"):
        return f"{est.kind}/{est.inner_kind}"
    return est.kind


def metrics_csv(records, cfg: ExperimentConfig, rid: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    k = cfg.bucket_count()
    for rec in records:
        writer.writerow([_fmt(v) for v in (
            rid, rec.round, estimator_label(cfg), cfg.attack.kind, cfg.epsilon, cfg.m, cfg.n, cfg.d,
            cfg.H, k, rec.param_err, rec.agg_err, rec.loss, rec.grad_norm, rec.converged,
            rec.elapsed_ms, cfg.seed,
        )])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def execute_run(snap: dict, seed: int, out_dir: Path, axis=None, value=None) -> dict:
    """Run one experiment and write ``<out_dir>/<run-id>/{metrics.csv,manifest.json}``."""
    cfg = build_config(snap, seed)
    if axis is not None:
        cfg = with_axis(cfg, axis, value)
        snap = json.loads(json.dumps(snap))
        snap["experiment"][axis] = str(value)
    rid = run_id(snap, seed)
    result = simulate(cfg)
    run_dir = out_dir / rid
    atomic_write(run_dir / "metrics.csv", metrics_csv(result.records, cfg, rid))
    manifest = {
        "run_id": rid,
        "seed": seed,
        "config": snap,
        "artifacts": {"metrics": "metrics.csv", "manifest": "manifest.json"},
        "rounds": len(result.records),
        "plateau_param_err": plateau(result.records) if result.records else None,
        "version": __version__,
    }
    atomic_write(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _load(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return snapshot_config(text)


def default_out(out: str | None) -> Path:
    return Path(out or os.environ.get("BYZAGG_OUT") or "out")


def cmd_run(args) -> int:
    try:
        snap = _load(args.config)
        seed = args.seed if args.seed is not None else int(snap["experiment"]["seed"])
        build_config(snap, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = execute_run(snap, seed, default_out(args.out))
    except Exception as exc:  # noqa: BLE001 - reported as exit code 3
        print(f"run failed: {exc!r}", file=sys.stderr)
        return 3
    print(default_out(args.out) / manifest["run_id"] / "metrics.csv")
    return 0


def _parse_values(axis: str, text: str) -> list:
    parts = [p.strip() for p in (text or "").split(",") if p.strip()]
    if not parts:
        raise ConfigError("--values is empty")
    conv = float if axis == "epsilon" else int
    try:
        return [conv(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad --values entry: {exc}") from exc


def _sweep_job(job):
    snap, seed, out_dir, axis, value = job
    return execute_run(snap, seed, Path(out_dir), axis, value)


def cmd_sweep(args) -> int:
    try:
        snap = _load(args.config)
        if args.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown axis {args.axis!r}; expected one of {SWEEP_AXES}")
        values = _parse_values(args.axis, args.values)
        if args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        base_seed = int(snap["experiment"]["seed"])
        for v in values:
            with_axis(build_config(snap, base_seed), args.axis, v)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    sweep_key = json.dumps({"config": snap, "axis": args.axis, "values": values, "seeds": args.seeds},
                           sort_keys=True)
    sweep_dir = default_out(args.out) / ("sweep-" + hashlib.sha256(sweep_key.encode()).hexdigest()[:16])
    jobs = [(snap, base_seed + s, str(sweep_dir), args.axis, v) for v in values for s in range(args.seeds)]
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                manifests = list(pool.map(_sweep_job, jobs))
        else:
            manifests = [_sweep_job(j) for j in jobs]
    except Exception as exc:  # noqa: BLE001
        print(f"sweep failed: {exc!r}", file=sys.stderr)
        return 3
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "value", "seeds", "plateau_median", "plateau_min", "plateau_max", "run_ids"])
    for i, v in enumerate(values):
        chunk = manifests[i * args.seeds : (i + 1) * args.seeds]
        plateaus = [m["plateau_param_err"] for m in chunk if m["plateau_param_err"] is not None]
        stats = (np.median(plateaus), min(plateaus), max(plateaus)) if plateaus else ("", "", "")
        writer.writerow([args.axis, _fmt(v), args.seeds, *[_fmt(s) for s in stats],
                         ";".join(m["run_id"] for m in chunk)])
    atomic_write(sweep_dir / "sweep.csv", buf.getvalue())
    print(sweep_dir / "sweep.csv")
    return 0


def cmd_accept(args) -> int:
    try:
        ids = parse_suite(args.suite)
    except KeyError as exc:
        print(f"unknown criterion: {exc.args[0]}", file=sys.stderr)
        return 2
    all_ok = True
    for cid in ids:
        res = run_criterion(cid)
        print(res.line(), flush=True)
        all_ok &= res.passed
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzagg", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print every config key with its default")
    parser.add_argument("--version", action="version", version=f"byzagg {__version__}")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (default: $BYZAGG_OUT or ./out)")
    run.add_argument("--seed", type=int, default=None, help="overrides [experiment] seed")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a grid over one axis and several seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--seeds", type=int, default=10)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default=None)
    sweep.set_defaults(func=cmd_sweep)

    accept = sub.add_parser("accept", help="run acceptance criteria")
    accept.add_argument("--suite", default="all", help="comma-separated ids such as A1,A4, or 'all'")
    accept.set_defaults(func=cmd_accept)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.print_defaults:
        print(defaults_text(), end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
