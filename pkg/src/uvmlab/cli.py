"""Command-line entry point: ``uvmlab {gen-trace,train,simulate,compare,report}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import experiment as ex
from . import synth, trace
from .config import ExperimentConfig, derive_seed, dump_config, load_config
from .model import checkpoint
from .sim import bandwidth_csv, window_bandwidth


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _finite(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def _config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "quantize", None):
        overrides["model.quant"] = args.quantize
    return load_config(args.config, overrides).validate()


def cmd_gen_trace(cfg: ExperimentConfig, out_path: Path | None = None) -> Path:
    spec = cfg.trace.synthetic(derive_seed(cfg.seed, "trace"))
    records = synth.generate(spec)
    return _write(out_path or cfg.out_dir / "trace.csv", trace.dumps(records))


def cmd_train(cfg: ExperimentConfig) -> ex.TrainResult:
    result = ex.train_from_config(cfg, ex.training_trace(cfg))
    checkpoint.save(result.model, _write(cfg.checkpoint_path, ""))
    _write(cfg.out_dir / "history.csv", ex.history_csv(result.history))
    info = {
        "attention": result.attention.value,
        "convergence": result.convergence,
        "num_classes": result.model.config.num_classes,
        "parameter_count": result.model.parameter_count(),
        "parameter_bytes": result.model.parameter_bytes(),
        "train_windows": len(result.train_set),
        "val_windows": len(result.val_set),
        **{k: _finite(v) for k, v in result.scores.items()},
    }
    _write(cfg.out_dir / "train.json", json.dumps(info, indent=2) + "\n")
    _write(cfg.out_dir / "config.txt", dump_config(cfg))
    return result


def cmd_simulate(cfg: ExperimentConfig, checkpoint_path: Path | None = None) -> list[ex.SimRun]:
    model = None
    quality = None
    records = ex.simulation_trace(cfg)
    if "predictor" in cfg.sim.policies:
        path = checkpoint_path or cfg.checkpoint_path
        if not Path(path).is_file():
            raise FileNotFoundError(f"checkpoint {path} not found; run 'uvmlab train' first")
        model = checkpoint.load(path)
        quality = ex.model_scores(model, records, cfg)
    runs = ex.simulate_policies(
        records, cfg.sim.policies, cfg.timing, cfg.sim.latencies, model, cfg.cluster_key, model_quality=quality
    )
    for run in runs:
        doc = run.report.to_dict()
        doc["metrics"] = {k: _finite(v) for k, v in run.scores.items()}
        _write(cfg.out_dir / f"report_{run.stem}.json", json.dumps(doc, indent=2) + "\n")
        series = window_bandwidth(run.report, core_clock_hz=cfg.timing.core_clock_hz)
        _write(cfg.out_dir / f"bandwidth_{run.stem}.csv", bandwidth_csv(series))
    _write(cfg.out_dir / "summary.csv", ex.summary_csv(runs))
    return runs


def cmd_compare(paths: list[str], out: Path | None = None) -> str:
    reports = []
    for p in paths:
        with open(p) as fh:
            try:
                reports.append((Path(p).stem, json.load(fh)))
            except json.JSONDecodeError as e:
                raise ValueError(f"{p}: not a JSON report ({e.msg})") from None
    table = ex.compare_reports(reports)
    if out is not None:
        _write(out / "compare.csv", table)
    return table


def cmd_report(cfg: ExperimentConfig) -> str:
    if not cfg.trace.path:
        cmd_gen_trace(cfg)
    cmd_train(cfg)
    runs = cmd_simulate(cfg)
    return ex.summary_csv(runs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key; repeatable")

    p = argparse.ArgumentParser(prog="uvmlab", description="Learned UVM page-prefetching laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-trace", parents=[common], help="write a synthetic trace CSV")
    g.add_argument("--output", help="trace path (default OUT/trace.csv)")
    t = sub.add_parser("train", parents=[common], help="train a delta classifier and write a checkpoint")
    t.add_argument("--quantize", choices=["none", "clamp", "clamp4"])
    s = sub.add_parser("simulate", parents=[common], help="replay the trace under each policy")
    s.add_argument("--checkpoint", help="model checkpoint (default OUT/model.ckpt)")
    c = sub.add_parser("compare", parents=[common], help="normalize reports against the first one")
    c.add_argument("reports", nargs="+")
    r = sub.add_parser("report", parents=[common], help="gen-trace, train and simulate in one go")
    r.add_argument("--quantize", choices=["none", "clamp", "clamp4"])
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            print(cmd_compare(args.reports, Path(args.out) if args.out else None), end="")
            return 0
        cfg = _config(args)
        if args.command == "gen-trace":
            print(cmd_gen_trace(cfg, Path(args.output) if args.output else None))
        elif args.command == "train":
            res = cmd_train(cfg)
            last = res.history[-1]
            print(f"attention={res.attention.value} epochs={last.epoch} val_top1={last.val_top1:.4f} "
                  f"checkpoint={cfg.checkpoint_path}")
        elif args.command == "simulate":
            runs = cmd_simulate(cfg, Path(args.checkpoint) if args.checkpoint else None)
            print(ex.summary_csv(runs), end="")
        elif args.command == "report":
            print(cmd_report(cfg), end="")
    except (ValueError, OSError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
