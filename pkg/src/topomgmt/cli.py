"""Command-line entry point: ``topomgmt {simulate,train-eval,cost,serve,predict}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from . import cost as C
from . import dataset as D
from . import models as M
from . import pipeline as P
from . import service as S
from . import sim
from . import topology as T

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("topomgmt")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_yaml(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {p}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise CliError(EXIT_CONFIG, f"{p}: invalid YAML ({exc})") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"{p}: top level must be a mapping")
    return doc


def write_manifest(path: Path, command: str, seed: int | None, config: dict, inputs: Sequence[Path],
                   outputs: Sequence[Path], timings: dict[str, float]) -> None:
    """Record what ran. The digest covers the effective config and every input file."""
    h = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode())
    for p in inputs:
        h.update(_sha256(p).encode())
    doc = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "config_digest": h.hexdigest(),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        "timings": timings,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    doc = _load_yaml(args.config)
    if args.scenario:
        doc["scenario"] = args.scenario.upper()
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = sim.config_from_dict(doc)
    except (sim.SimConfigError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid simulation config: {exc}") from None
    out = Path(args.out or f"scenario_{cfg.scenario.lower()}.csv")
    t0 = time.perf_counter()
    try:
        ds = sim.run_scenario(cfg)
    except sim.SimConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid simulation config: {exc}") from None
    elapsed = time.perf_counter() - t0
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        D.write_csv(ds, out)
    except OSError as exc:
        raise CliError(EXIT_RUNTIME, f"cannot write {out}: {exc.strerror}") from None
    inputs = [Path(args.config)] if args.config else []
    manifest = out.with_name(out.name + ".manifest.json")
    write_manifest(manifest, "simulate", cfg.seed, {"scenario": cfg.scenario, "config_digest": cfg.digest()},
                   inputs, [out, D.provenance_path(out)], {"simulate_s": elapsed})
    print(f"wrote {len(ds)} scenario-{cfg.scenario} rows to {out}")
    return EXIT_OK


def _pipeline_options(doc: dict) -> dict:
    unknown = set(doc) - {"kinds", "grid", "test_fraction", "window", "timing_reps", "spaces"}
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown pipeline config keys {sorted(unknown)}")
    opts: dict[str, Any] = {}
    if "kinds" in doc:
        kinds = [str(k) for k in doc["kinds"]]
        bad = [k for k in kinds if k not in M.KINDS]
        if bad:
            raise CliError(EXIT_CONFIG, f"unknown model kinds {bad}")
        opts["kinds"] = kinds
    if "grid" in doc:
        opts["grid"] = bool(doc["grid"])
    if "test_fraction" in doc:
        opts["test_fraction"] = float(doc["test_fraction"])
    if "window" in doc:
        w, h = doc["window"]
        opts["window"] = (int(w), int(h))
    if "timing_reps" in doc:
        opts["timing_reps"] = int(doc["timing_reps"])
    if "spaces" in doc:
        try:
            opts["spaces"] = {k: [M.hyper_from_dict(k, c) for c in v] for k, v in doc["spaces"].items()}
        except (M.ModelError, TypeError) as exc:
            raise CliError(EXIT_CONFIG, f"bad hyperparameter space: {exc}") from None
    return opts


def cmd_train_eval(args) -> int:
    opts = _pipeline_options(_load_yaml(args.config))
    data_path = Path(args.dataset)
    try:
        ds = D.read_csv(data_path, args.scenario)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read dataset {data_path}: {exc.strerror}") from None
    except D.DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out or f"run_{ds.scenario.lower()}")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        result = P.run_pipeline(ds, ds.scenario, args.top_n, seed=seed, **opts)
    except (D.DatasetError, P.PipelineError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except M.ModelError as exc:
        raise CliError(EXIT_RUNTIME, f"training failed: {exc}") from None
    elapsed = time.perf_counter() - t0
    written = P.save_model_set(result, out)
    report = out / "report.json"
    report.write_text(json.dumps(P.result_to_dict(result), indent=1, sort_keys=True) + "\n", encoding="utf-8",
                      newline="\n")
    table = out / "table.csv"
    P.write_table_csv(result.reports.values(), table)
    written += [report, table]
    config = {"scenario": ds.scenario, "top_n": args.top_n,
              **{k: (v if k != "spaces" else {kk: [M.hyper_to_dict(c) for c in vv] for kk, vv in v.items()})
                 for k, v in opts.items()}}
    write_manifest(out / "manifest.json", "train-eval", seed, config, [data_path], written,
                   {"pipeline_s": elapsed})
    print(P.format_table(result.reports.values()))
    print("top-N: " + ", ".join(r.model_id for r in result.top.reports))
    if args.verbose:
        names = D.LABEL_NAMES[ds.scenario]
        for kind, rep in result.reports.items():
            print(f"\nconfusion ({kind}), rows = true label")
            for name, row in zip(names, rep.confusion):
                cells = "   absent" if row is None else " ".join(f"{v:6.3f}" for v in row)
                print(f"  {name:<9} {cells}")
    return EXIT_OK


def _parse_range(text: str) -> list[float]:
    try:
        if ":" in text:
            parts = [float(v) for v in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1.0
            if step <= 0:
                raise ValueError("step must be > 0")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(n, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"bad range {text!r}: {exc}") from None


def _timings_from_report(path: Path) -> dict[str, tuple[float, float]]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return {k: (float(r["training_time_s"]), float(r["inference_time_us"])) for k, r in doc["reports"].items()}
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot take timings from {path}: {exc}") from None


def cmd_cost(args) -> int:
    doc = _load_yaml(args.config)
    timings = _timings_from_report(Path(args.report)) if args.report else None
    try:
        cfg = C.cost_config_from_dict(doc, timings)
    except (C.CostError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid cost params: {exc}") from None
    xs = _parse_range(args.range)
    if not xs:
        raise CliError(EXIT_CONFIG, "empty sweep range")
    out = Path(args.out or "cost")
    out.mkdir(parents=True, exist_ok=True)
    axes = C.AXES if args.axis == "both" else (args.axis,)
    written = []
    labels = {"monitored_elements": ("monitoring cost vs monitored elements", "monitored elements"),
              "inference_pods": ("ML cost vs inference pods", "inference pods")}
    for axis in axes:
        try:
            rows = C.sweep(axis, xs, cfg)
        except C.UnstableQueueError as exc:
            raise CliError(EXIT_CONFIG, f"unstable queue in {axis} sweep: {exc}") from None
        except C.CostError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        title, xlabel = labels[axis]
        csv_path, svg_path = out / f"{axis}.csv", out / f"{axis}.svg"
        C.write_sweep(rows, csv_path, svg_path, title=title, xlabel=xlabel)
        written += [csv_path, svg_path]
        for name, s in C.summarize(rows).items():
            print(f"{axis:<19} {name:<7} first={s.intercept:12.2f} slope={s.slope:10.3f}")
    inputs = [Path(p) for p in (args.config, args.report) if p]
    write_manifest(out / "manifest.json", "cost", None, {"axes": list(axes), "range": xs}, inputs, written, {})
    return EXIT_OK


def cmd_serve(args) -> int:
    if not args.config:
        raise CliError(EXIT_CONFIG, "serve needs --config")
    try:
        cfg = S.load_service_config(args.config)
    except (OSError, S.ServiceError, yaml.YAMLError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid service config: {exc}") from None
    if not cfg.model_dirs:
        raise CliError(EXIT_RUNTIME, "not ready: no model directory configured")
    try:
        svc = S.service_from_config(cfg)
    except T.TopologyError as exc:
        raise CliError(EXIT_CONFIG, f"invalid topology: {exc}") from None
    except (S.ServiceError, P.PipelineError, M.ModelError) as exc:
        raise CliError(EXIT_RUNTIME, f"not ready: {exc}") from None
    import uvicorn

    uvicorn.run(S.create_app(svc), host=args.host or cfg.host, port=args.port or cfg.port,
                log_level="info" if args.verbose else "warning")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        ms = P.load_model_set(args.models)
    except (P.PipelineError, M.ModelError) as exc:
        raise CliError(EXIT_RUNTIME, f"missing or unreadable models: {exc}") from None
    try:
        ds = D.read_csv(args.samples, ms.scenario)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read samples {args.samples}: {exc.strerror}") from None
    except D.DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    w, h = ms.window
    try:
        wd = D.window(ds, w, h)
    except D.DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    for i, x in enumerate(wd.X):
        detail = P.vote_detail(ms.top, x)
        if args.verbose:
            votes = " ".join(f"{m}={v}" for m, _, v in detail.votes)
            print(f"{ds.steps[i + w - 1 + h]} {detail.label} {votes}")
        else:
            print(detail.label)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--scenario", type=str.lower, choices=("a", "b"))
    common.add_argument("--top-n", type=int, default=3, dest="top_n")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="topomgmt", description="topology-change simulation, prediction and cost")
    p.add_argument("--version", action="version", version=f"topomgmt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a labeled dataset CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train-eval", parents=[common], help="grid search, train, evaluate, pick Top-N")
    s.add_argument("dataset")
    s.set_defaults(func=cmd_train_eval)

    s = sub.add_parser("cost", parents=[common], help="monitoring and ML cost sweeps (CSV + SVG)")
    s.add_argument("--axis", choices=(*C.AXES, "both"), default="both")
    s.add_argument("--range", default="1:20", help="start:stop[:step] or comma list")
    s.add_argument("--report", help="report.json whose timings set the ML service rates")
    s.set_defaults(func=cmd_cost)

    s = sub.add_parser("serve", parents=[common], help="run the topology API")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("predict", parents=[common], help="vote on every row of a sample CSV")
    s.add_argument("models", help="model directory (with topn.json)")
    s.add_argument("samples", help="dataset CSV")
    s.set_defaults(func=cmd_predict)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.top_n < 1:
        print("error: --top-n must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # anything unexpected is a runtime failure, not a traceback
        log.debug("unhandled", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
