"""Command-line entry point.

Subcommands: gen-synth, ingest, run, sweep, report. Experiments are driven
by one YAML config file; flags only override seeds and paths. Exit codes:
0 success, 2 config or argument error (the message names the offending
key), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import backbone as bb
from . import orchestrator as orch
from .alignment import AlignmentConfig
from .features import DatasetManifest, l2_normalize_rows, load_features, save_features
from .metrics import BaselineCurve, CostModel, TimeModel, al_time, emit_report
from .proxy import ProxyTrainConfig

OUTPUT_DIR_ENV = "ASVP_OUTPUT_DIR"


class CliConfigError(Exception):
    """Bad config file content; message names the offending key."""


_SECTION_TYPES = {
    "synth": bb.SynthSpec,
    "alignment": AlignmentConfig,
    "proxy": ProxyTrainConfig,
    "ft": bb.TrainSchedule,
    "lpft": bb.TrainSchedule,
    "pretrain": bb.PretrainConfig,
    "cost": CostModel,
    "time": TimeModel,
}

_TOP_KEYS = {
    "mode", "strategy", "standard_method", "iterations", "batch", "init",
    "seeds", "dataset", "alignment", "proxy", "ft", "lpft", "pretrain",
    "cost", "time", "baseline", "region_tau", "track_regions",
    "normalize_features", "eval_fraction", "replacement",
}


def _build_section(name: str, cls, raw: dict, **fixed):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(fixed)
    for key in raw:
        if key not in allowed:
            raise CliConfigError(f"unknown key '{name}.{key}'")
    return cls(**raw, **fixed)


def _check_keys(name: str, raw: dict, allowed: set[str]) -> None:
    for key in raw:
        if key not in allowed:
            raise CliConfigError(f"unknown key '{name}.{key}'" if name else f"unknown key '{key}'")


def load_config(path: str | Path, seed_overrides: dict[str, int] | None = None) -> dict:
    """Parse and validate the YAML experiment config into typed pieces."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise CliConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliConfigError("config root must be a mapping")
    _check_keys("", raw, _TOP_KEYS)

    seeds_raw = dict(raw.get("seeds", {}))
    _check_keys("seeds", seeds_raw, {"pool", "model", "strategy"})
    if seed_overrides:
        seeds_raw.update({k: v for k, v in seed_overrides.items() if v is not None})
    seeds = orch.Seeds(**{k: int(v) for k, v in seeds_raw.items()})

    dataset = raw.get("dataset", {})
    _check_keys("dataset", dataset, {"synthetic", "manifest"})
    if ("synthetic" in dataset) == ("manifest" in dataset):
        raise CliConfigError("dataset must set exactly one of 'dataset.synthetic' or 'dataset.manifest'")
    synth = None
    manifest_path = None
    if "synthetic" in dataset:
        synth = _build_section("dataset.synthetic", bb.SynthSpec, dataset["synthetic"] or {})
    else:
        manifest_path = str(dataset["manifest"])

    mode = str(raw.get("mode", "asvp")).lower()
    strategy = str(raw.get("strategy", "margin")).lower()

    kwargs = {}
    for key, attr in [("alignment", "alignment"), ("proxy", "proxy"), ("pretrain", "pretrain")]:
        if key in raw:
            kwargs[attr] = _build_section(key, _SECTION_TYPES[key], raw[key] or {})
    if "ft" in raw:
        kwargs["ft"] = _build_section("ft", bb.TrainSchedule, raw["ft"] or {}, kind="ft")
    if "lpft" in raw:
        kwargs["lpft"] = _build_section("lpft", bb.TrainSchedule, raw["lpft"] or {}, kind="lpft")

    config = orch.RunConfig(
        mode=mode,
        strategy=strategy,
        standard_method=str(raw.get("standard_method", "ft")).lower(),
        n_iters=int(raw.get("iterations", 10)),
        batch_k=int(raw.get("batch", 100)),
        init_size=int(raw.get("init", 100)),
        seeds=seeds,
        synth=synth,
        manifest_path=manifest_path,
        region_tau=float(raw.get("region_tau", 0.9)),
        track_regions=bool(raw.get("track_regions", True)),
        normalize_features=bool(raw.get("normalize_features", True)),
        eval_fraction=float(raw.get("eval_fraction", 0.2)),
        **kwargs,
    )
    try:
        config.validate()
    except orch.ConfigError as exc:
        raise CliConfigError(str(exc)) from exc

    cost = _build_section("cost", CostModel, raw.get("cost") or {})
    time_model = _build_section("time", TimeModel, raw.get("time") or {})

    baseline = raw.get("baseline", {"auto": True})
    _check_keys("baseline", baseline, {"auto", "points", "csv"})
    if sum(k in baseline for k in ("auto", "points", "csv")) != 1:
        raise CliConfigError("baseline must set exactly one of 'baseline.auto', "
                             "'baseline.points', 'baseline.csv'")

    replacement = raw.get("replacement")
    if replacement is not None:
        _check_keys("replacement", replacement, {"fraction", "source"})

    return {"run": config, "cost": cost, "time": time_model,
            "baseline": baseline, "replacement": replacement}


def echo_config(parsed: dict, out_dir: Path) -> None:
    """Write back the effective config so the run can be reproduced from it."""
    cfg = parsed["run"]
    doc = {
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "standard_method": cfg.standard_method,
        "iterations": cfg.n_iters,
        "batch": cfg.batch_k,
        "init": cfg.init_size,
        "seeds": cfg.seeds.as_dict(),
        "dataset": ({"synthetic": dataclasses.asdict(cfg.synth)} if cfg.synth is not None
                    else {"manifest": cfg.manifest_path}),
        "alignment": dataclasses.asdict(cfg.alignment),
        "proxy": dataclasses.asdict(cfg.proxy),
        "ft": {k: v for k, v in dataclasses.asdict(cfg.ft).items() if k != "kind"},
        "lpft": {k: v for k, v in dataclasses.asdict(cfg.lpft).items() if k != "kind"},
        "pretrain": dataclasses.asdict(cfg.pretrain),
        "cost": dataclasses.asdict(parsed["cost"]),
        "time": dataclasses.asdict(parsed["time"]),
        "baseline": parsed["baseline"],
        "region_tau": cfg.region_tau,
        "track_regions": cfg.track_regions,
        "normalize_features": cfg.normalize_features,
        "eval_fraction": cfg.eval_fraction,
    }
    if parsed.get("replacement"):
        doc["replacement"] = parsed["replacement"]
    (out_dir / "config.echo.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def resolve_baseline(parsed: dict) -> BaselineCurve:
    spec = parsed["baseline"]
    try:
        if "points" in spec:
            return BaselineCurve.from_points([(float(n), float(a)) for n, a in spec["points"]])
        if "csv" in spec:
            rows = []
            for line in Path(spec["csv"]).read_text().splitlines()[1:]:
                parts = line.split(",")
                rows.append((float(parts[0]), float(parts[1])))
            return BaselineCurve.from_points(rows)
    except (ValueError, TypeError) as exc:
        raise CliConfigError(f"bad 'baseline' specification: {exc}") from exc
    _, curve = orch.run_random_baseline(parsed["run"])
    return curve


def _out_dir(args) -> Path:
    base = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "runs"
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_synth(args) -> int:
    parsed = load_config(args.config, _seed_overrides(args))
    cfg = parsed["run"]
    if cfg.synth is None:
        raise CliConfigError("gen-synth requires 'dataset.synthetic'")
    out = _out_dir(args)
    X, y_fine, _ = bb.gen_synth(cfg.synth)
    net = bb.pretrain(cfg.synth, cfg.synth.seed, cfg.pretrain)
    feats = bb.extract_features(net, X)
    feat_path = out / "features.alfv1"
    save_features(feats, feat_path)
    manifest = DatasetManifest(
        ids=[f"synth-{i:06d}" for i in range(cfg.synth.n)],
        labels=[int(v) for v in y_fine],
        num_classes=cfg.synth.c_fine,
        feature_path=feat_path.name,
        provenance=f"synthetic benchmark ({net.tag})",
        feature_version=0,
    )
    manifest.validate()
    manifest.save(out / "manifest.json")
    print(f"wrote {feat_path} ({feats.n}x{feats.d}) and {out / 'manifest.json'}")
    return 0


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    manifest = DatasetManifest.load(args.manifest)
    feat_path = Path(args.features) if args.features else Path(args.manifest).parent / manifest.feature_path
    matrix = load_features(feat_path, manifest)
    if not matrix.normalized:
        matrix = l2_normalize_rows(matrix)
    matrix.validate()
    out_feat = out / "features.alfv1"
    save_features(matrix, out_feat)
    manifest = replace(manifest, feature_path=out_feat.name)
    manifest.save(out / "manifest.json")
    print(f"ingested {matrix.n} samples, dim {matrix.d}, "
          f"{manifest.num_classes} classes -> {out_feat}")
    return 0


def cmd_run(args) -> int:
    parsed = load_config(args.config, _seed_overrides(args))
    out = _out_dir(args)
    echo_config(parsed, out)
    cfg = parsed["run"]
    replacement = parsed.get("replacement")
    if replacement:
        ledger = orch.run_replacement(cfg, fraction=float(replacement.get("fraction", 0.2)),
                                      source=str(replacement.get("source", "b2")))
    else:
        ledger = orch.run(cfg)
    curve = resolve_baseline(parsed)
    (out / "ledger.json").write_text(ledger.to_json())
    tm = replace(parsed["time"], n_al=cfg.n_iters)
    emit_report(ledger, curve, parsed["cost"], tm, out)
    print(f"run complete: mode={ledger.mode} strategy={ledger.strategy} "
          f"final_accuracy={ledger.final_accuracy:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    parsed = load_config(args.config, _seed_overrides(args))
    cfg = parsed["run"]
    out = _out_dir(args)
    echo_config(parsed, out)
    values = [int(v) for v in args.values.split(",")]
    curve = resolve_baseline(parsed)
    rows = []
    for value in values:
        if args.axis == "update_position":
            positions = [cfg.init_size + t * cfg.batch_k for t in range(1, cfg.n_iters + 1)]
            if value not in positions:
                raise CliConfigError(
                    f"update_position {value} is not reachable; grid is {positions}")
            sub = replace(cfg, mode="asvp",
                          alignment=replace(cfg.alignment, forced_update_at=value))
        else:
            total = cfg.batch_k * cfg.n_iters
            if total % value != 0:
                raise CliConfigError(
                    f"n_iterations {value} does not divide the selection total {total}")
            sub = replace(cfg, n_iters=value, batch_k=total // value)
        sub_dir = out / f"{args.axis}-{value}"
        sub_dir.mkdir(parents=True, exist_ok=True)
        ledger = orch.run(sub)
        (sub_dir / "ledger.json").write_text(ledger.to_json())
        tm = replace(parsed["time"], n_al=sub.n_iters)
        csv_path, json_path = emit_report(ledger, curve, parsed["cost"], tm, sub_dir)
        summary = json.loads(json_path.read_text())
        rows.append({"value": value, "avg_saving_ratio": summary["avg_saving_ratio"],
                     "final_accuracy": ledger.final_accuracy,
                     "al_time_hours": summary["al_time_hours"]})
    table = out / "sweep.csv"
    with open(table, "w") as fh:
        fh.write(f"{args.axis},avg_saving_ratio,final_accuracy,al_time_hours\n")
        for row in rows:
            fh.write(f"{row['value']},{row['avg_saving_ratio']!r},"
                     f"{row['final_accuracy']!r},{row['al_time_hours']!r}\n")
    print(f"sweep complete: {len(rows)} rows -> {table}")
    return 0


def cmd_report(args) -> int:
    parsed = load_config(args.config, _seed_overrides(args))
    out = _out_dir(args)
    ledger = orch.RunLedger.from_json(Path(args.ledger).read_text())
    curve = resolve_baseline(parsed)
    tm = replace(parsed["time"], n_al=len(ledger.records))
    csv_path, json_path = emit_report(ledger, curve, parsed["cost"], tm, out)
    print(f"report written: {csv_path} {json_path}")
    return 0


def _seed_overrides(args) -> dict[str, int]:
    return {"pool": args.pool_seed, "model": args.model_seed, "strategy": args.strategy_seed}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asvp",
                                     description="proxy-based active learning engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True, help="YAML experiment config")
        p.add_argument("-o", "--output-dir", default=None,
                       help=f"output directory (default ${OUTPUT_DIR_ENV} or ./runs)")
        p.add_argument("--pool-seed", type=int, default=None)
        p.add_argument("--model-seed", type=int, default=None)
        p.add_argument("--strategy-seed", type=int, default=None)

    p = sub.add_parser("gen-synth", help="generate benchmark features + manifest")
    common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("ingest", help="validate and normalize exported features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", default=None, help="defaults to manifest's feature_path")
    p.add_argument("-o", "--output-dir", default=None)
    p.add_argument("--pool-seed", type=int, default=None)
    p.add_argument("--model-seed", type=int, default=None)
    p.add_argument("--strategy-seed", type=int, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="execute one experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep update positions or iteration counts")
    common(p)
    p.add_argument("--axis", choices=["update_position", "n_iterations"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-emit CSV/JSON from a stored ledger")
    common(p)
    p.add_argument("--ledger", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def parse_and_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CliConfigError, orch.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
