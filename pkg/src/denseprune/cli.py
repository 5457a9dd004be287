"""Command-line entry point: ``denseprune <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
The default output directory is ``$DENSEPRUNE_OUT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from denseprune import __version__
from denseprune.config import (
    ConfigError,
    ExperimentConfig,
    build_dataset,
    from_mapping,
    load_config,
    parse_yaml,
    set_dotted,
)
from denseprune.data import DataError
from denseprune.io import ModelFormatError, atomic_write, load_model, read_json, save_model, write_json
from denseprune.refine import ExperimentRecord, evaluate, scratch_control, select_epsilon, sweep

logger = logging.getLogger("denseprune")

CSV_HEADER = [
    "epsilon", "stage_or", "stage_pwr", "stage_pr", "params_original", "params_pruned",
    "reduction_percent", "layers_original", "layers_pruned", "seed",
]
MANIFEST = "manifest.json"
RECORD = "record.json"


class InputError(Exception):
    """Missing or unusable input artifact (exit code 2)."""


# --- helpers ---------------------------------------------------------------------


def _model_name(fmt: str, stem: str) -> str:
    return f"{stem}.json" if fmt == "text" else f"{stem}.dpnn"


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _widths(arch) -> str:
    return "-".join(str(w) for w in [arch[0][0]] + [a[1] for a in arch])


def sweep_rows(records) -> list:
    rows = []
    for r in records:
        rows.append([
            repr(float(r.epsilon)), repr(r.stage("OR")), repr(r.stage("PWR")), repr(r.stage("PR")),
            str(r.params_original), str(r.params_pruned), repr(float(r.reduction_percent)),
            _widths(r.architecture_original), _widths(r.architecture_pruned), str(r.seed),
        ])
    return rows


def sweep_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(sweep_rows(records))
    return buf.getvalue()


def summary_table(record: ExperimentRecord) -> str:
    m = record.primary_metric
    lines = [f"epsilon={record.epsilon!r} seed={record.seed} metric={m}",
             f"{'stage':<6}{m:>12}{'params':>10}  layers"]
    for stage, params, arch in (
        ("OR", record.params_original, record.architecture_original),
        ("PWR", record.params_pruned, record.architecture_pruned),
        ("PR", record.params_pruned, record.architecture_pruned),
    ):
        lines.append(f"{stage:<6}{record.stage(stage):>12.6g}{params:>10}  {_widths(arch)}")
    lines.append(f"reduction {record.reduction_percent:.2f}%")
    if record.degenerate:
        lines.append("WARNING: degenerate pruning (every hidden layer collapsed)")
    return "\n".join(lines)


def _manifest(cfg: ExperimentConfig, dataset, command: str, artifacts: dict) -> dict:
    return {
        "tool": "denseprune",
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.raw,
        "dataset_fingerprint": dataset.fingerprint(),
        "artifacts": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in artifacts.items()},
    }


def _load_from_manifest(path: Path):
    try:
        man = read_json(path)
    except FileNotFoundError as exc:
        raise InputError(f"manifest not found: {path}") from exc
    cfg = from_mapping(man["config"])
    dataset = build_dataset(cfg)
    if dataset.fingerprint() != man["dataset_fingerprint"]:
        raise InputError("dataset content differs from the manifest fingerprint")
    return man, cfg, dataset


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_yaml(value)
    return out


def _resolve_cfg(args) -> ExperimentConfig:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "manifest", None):
        man = read_json(args.manifest)
        raw = man["config"]
        for k, v in overrides.items():
            set_dotted(raw, k, v)
        return from_mapping(raw)
    if not args.config:
        raise ConfigError("config", "a config file (or --manifest) is required")
    return load_config(args.config, overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _resolve_cfg(args)
    if args.manifest:
        _, _, dataset = _load_from_manifest(Path(args.manifest))
        man_model = read_json(args.manifest)["artifacts"].get("input_model")
        if man_model and not args.model:
            args.model = man_model["path"]
    else:
        dataset = build_dataset(cfg)
    out = _out_dir(args, cfg)
    explicit = cfg.raw.get("refine", {}).get("epsilon") is not None
    net = load_model(args.model) if args.model else None
    if net is not None and net.input_dim != dataset.input_dim:
        raise InputError(f"model expects {net.input_dim} features, data has {dataset.input_dim}")

    if explicit or len(cfg.epsilons) == 1:
        eps = cfg.refine.epsilon
        general, results = sweep(dataset, cfg.refine, [eps], net=net)
        refined, record = results[0]
    else:
        general, results = sweep(dataset, cfg.refine, cfg.epsilons, net=net)
        chosen = select_epsilon([r for _, r in results], cfg.min_reduction, cfg.max_preserved)
        if chosen is None:
            print("no epsilon met the compression constraint; keeping the best-scoring one", file=sys.stderr)
            chosen = select_epsilon([r for _, r in results])
        refined, record = next(p for p in results if p[1] is chosen)

    artifacts = {
        "model": save_model(refined, out / _model_name(cfg.model_format, "refined"), cfg.model_format),
        "general_model": save_model(general, out / _model_name(cfg.model_format, "general"), cfg.model_format),
        "record": write_json(out / RECORD, record.to_dict()),
    }
    if args.model:
        artifacts["input_model"] = Path(args.model).resolve()
    if len(results) > 1:
        artifacts["candidates"] = write_json(out / "candidates.json", [r.to_dict() for _, r in results])
    write_json(out / MANIFEST, _manifest(cfg, dataset, "run", artifacts))
    print(summary_table(record))
    print(f"artifacts written to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_cfg(args)
    if args.manifest:
        _, _, dataset = _load_from_manifest(Path(args.manifest))
    else:
        dataset = build_dataset(cfg)
    epsilons = cfg.epsilons
    if args.eps:
        try:
            epsilons = tuple(float(e) for e in args.eps.split(","))
        except ValueError as exc:
            raise ConfigError("--eps", f"not a comma-separated list of numbers: {args.eps!r}") from exc
    if not epsilons or any(not e > 0 for e in epsilons):
        raise ConfigError("--eps", "every epsilon must be > 0")
    out = _out_dir(args, cfg)
    general, results = sweep(dataset, cfg.refine, epsilons, jobs=args.jobs)
    records = [r for _, r in results]
    table = sweep_csv(records)
    artifacts = {
        "sweep_csv": atomic_write(out / "sweep.csv", table),
        "records": write_json(out / "records.json", [r.to_dict() for r in records]),
        "general_model": save_model(general, out / _model_name(cfg.model_format, "general"), cfg.model_format),
    }
    raw = dict(cfg.raw)
    raw["sweep"] = dict(raw.get("sweep") or {}, epsilons=list(epsilons))
    write_json(out / MANIFEST, _manifest(from_mapping(raw), dataset, "sweep", artifacts))
    print(table, end="")
    return 0


def cmd_control(args) -> int:
    record_path = Path(args.record)
    if not record_path.is_file():
        raise InputError(f"record not found: {record_path}")
    record = ExperimentRecord.from_dict(read_json(record_path))
    manifest = Path(args.manifest) if args.manifest else record_path.parent / MANIFEST
    if not manifest.is_file():
        raise InputError(f"manifest not found: {manifest}")
    _, cfg, dataset = _load_from_manifest(manifest)
    result = scratch_control(record, dataset, cfg.train)
    m = result["primary_metric"]
    print(f"{'model':<10}{m:>12}{'params':>10}")
    print(f"{'refined':<10}{result['refined'][m]:>12.6g}{record.params_pruned:>10}")
    print(f"{'scratch':<10}{result['scratch'][m]:>12.6g}{result['params']:>10}")
    if args.out:
        write_json(Path(args.out), result)
    return 0


def cmd_eval(args) -> int:
    net = load_model(args.model)
    if args.manifest:
        _, cfg, dataset = _load_from_manifest(Path(args.manifest))
    else:
        cfg = _resolve_cfg(args)
        dataset = build_dataset(cfg)
    if args.split not in dataset.splits:
        raise InputError(f"dataset has no {args.split!r} split")
    if net.input_dim != dataset.input_dim:
        raise InputError(f"model expects {net.input_dim} features, data has {dataset.input_dim}")
    metrics = evaluate(net, *dataset.subset(args.split))
    for key in sorted(metrics):
        if isinstance(metrics[key], float):
            print(f"{key} {metrics[key]!r}")
    return 0


def cmd_inspect(args) -> int:
    net = load_model(args.model)
    print(f"task {net.task.kind} outputs {net.task.n_outputs}")
    print(f"{'layer':<7}{'in':>6}{'out':>6}  {'activation':<10}{'params':>10}")
    for i, layer in enumerate(net.layers):
        print(f"{i:<7}{layer.in_dim:>6}{layer.out_dim:>6}  {layer.activation:<10}{layer.n_params:>10}")
    print(f"widths {'-'.join(map(str, net.widths))} total {net.n_params}")
    return 0


def cmd_convert(args) -> int:
    net = load_model(args.src)
    save_model(net, args.dst, args.format)
    print(f"wrote {args.dst}")
    return 0


# --- parser ------------------------------------------------------------------------


def _add_config_args(p, manifest_ok=True):
    p.add_argument("config", nargs="?", help="YAML/JSON experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted)")
    p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    if manifest_ok:
        p.add_argument("--manifest", help="re-execute from a run manifest instead of a config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denseprune", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"denseprune {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train, prune and retrain; write model, record and manifest")
    _add_config_args(p)
    p.add_argument("--model", help="prune this trained model instead of training a new one")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one record per epsilon from a single trained model")
    _add_config_args(p)
    p.add_argument("--eps", help="comma-separated epsilons (overrides sweep.epsilons)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("control", help="train the refined topology from scratch and compare")
    p.add_argument("record", help="record.json written by run")
    p.add_argument("--manifest", help="manifest (default: next to the record)")
    p.add_argument("--out", help="write the comparison as JSON")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("eval", help="score a saved model on a dataset split")
    p.add_argument("model")
    _add_config_args(p)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-layer widths and parameter counts")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("convert", aliases=["save"], help="re-encode a model file (binary <-> text)")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--format", choices=("binary", "text"), default=None,
                   help="default: text for .json destinations, binary otherwise")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run" and args.manifest and args.config:
            raise ConfigError("config", "give either a config file or --manifest, not both")
        return args.func(args)
    except (ConfigError, DataError, InputError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level report
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
