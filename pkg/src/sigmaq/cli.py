"""Command-line runner: ``sigmaq run <config>``, ``sigmaq list``, ``sigmaq suite <smoke|full>``.

Exit status: 0 all tests passed, 1 some test failed, 2 invalid configuration,
3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import inspect
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any

import numpy as np
import yaml

from . import __version__
from . import backend
from .core import MCEstimate, default_threads
from .experiments import REGISTRY, InvalidFunctionalError, Report

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

TOP_KEYS = {"experiment", "master_seed", "seed", "n_paths", "grid", "ci_level", "out_dir", "threads", "params"}


class ConfigError(ValueError):
    """Schema violation, carrying the source line when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class RunConfig:
    experiment: str
    params: dict[str, Any]
    master_seed: int = 42
    ci_level: float = 0.99
    out_dir: str = "reports"
    threads: int | None = None
    raw: dict[str, Any] = field(default_factory=dict)

    def echo(self) -> dict[str, Any]:
        return {"experiment": self.experiment, "master_seed": self.master_seed,
                "ci_level": self.ci_level, "params": _jsonable(self.params)}


# --------------------------------------------------------------------------- config parsing


def _line_map(node: yaml.Node, prefix: tuple = (), out: dict | None = None) -> dict[tuple, int]:
    """1-based source line of every mapping key, keyed by its path."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[prefix + (i,)] = v.start_mark.line + 1
            _line_map(v, prefix + (i,), out)
    return out


def _number(value: Any, name: str, line: int | None, source: str, *, positive: bool = False,
            integer: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}", line, source)
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite", line, source)
    if integer and int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}", line, source)
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}", line, source)
    return int(value) if integer else float(value)


def _check_numbers(obj: Any, path: tuple, lines: dict, source: str) -> None:
    """Every numeric leaf of the params tree must be finite; grid-like names positive."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_numbers(v, path + (k,), lines, source)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_numbers(v, path + (i,), lines, source)
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        name = path[-1] if path and isinstance(path[-1], str) else ".".join(map(str, path))
        line = lines.get(path) or lines.get(path[:-1])
        positive = name in {"dt", "T", "t_end", "eps", "K", "n_paths", "x0", "coarse", "rate",
                            "amplitude", "length", "height"}
        _number(obj, ".".join(map(str, path)), line, source, positive=positive,
                integer=name == "n_paths")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1, source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    lines = _line_map(node)
    line = lambda *p: lines.get(p)  # noqa: E731
    for key in data:
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}; allowed: {sorted(TOP_KEYS)}", line(key), source)
    name = data.get("experiment")
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; see `sigmaq list`", line("experiment") or 1, source)
    exp = REGISTRY[name]
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping", line("params"), source)
    params = dict(params)
    accepted = set(inspect.signature(exp.run).parameters) - {"seed", "threads"}

    grid = data.get("grid") or {}
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a mapping with t_end and/or dt", line("grid"), source)
    for k, v in grid.items():
        if k not in ("t_end", "dt"):
            raise ConfigError(f"unknown grid key {k!r}", line("grid", k), source)
        val = _number(v, f"grid.{k}", line("grid", k), source, positive=True)
        target = k if k in accepted else ("T" if k == "t_end" and "T" in accepted else None)
        if target is None:
            raise ConfigError(f"{name} takes no grid.{k}", line("grid", k), source)
        params[target] = val
        lines[("params", target)] = line("grid", k)
    if "n_paths" in data:
        params["n_paths"] = data["n_paths"]
        lines[("params", "n_paths")] = line("n_paths")

    for k in params:
        if k not in accepted:
            where = line("params", k) or line("grid") or line("n_paths")
            raise ConfigError(f"{name} has no parameter {k!r}; accepted: {sorted(accepted)}", where, source)
    _check_numbers(params, ("params",), lines, source)

    seed_key = "master_seed" if "master_seed" in data else "seed"
    seed = _number(data.get(seed_key, 42), seed_key, line(seed_key), source, integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("master_seed must lie in [0, 2**64)", line(seed_key), source)
    ci = _number(data.get("ci_level", 0.99), "ci_level", line("ci_level"), source)
    if not 0 < ci < 1:
        raise ConfigError(f"ci_level must lie in (0, 1), got {ci}", line("ci_level"), source)
    threads = data.get("threads")
    if threads is not None:
        threads = _number(threads, "threads", line("threads"), source, positive=True, integer=True)
    out_dir = str(data.get("out_dir", "reports"))
    return RunConfig(name, params, seed, ci, out_dir, threads, data)


def load_config(path: str) -> RunConfig:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)


# --------------------------------------------------------------------------- reports


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, MCEstimate):
        return obj.to_dict()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def _test_record(t, ci_level: float) -> dict[str, Any]:
    rec = t.to_dict()
    for side, est in (("lhs", t.lhs), ("rhs", t.rhs)):
        e = MCEstimate(est.mean, est.std_error, est.n_samples, ci_level)
        rec[f"{side}_ci"] = list(e.ci)
    return _jsonable(rec)


def build_report(cfg: RunConfig, rep: Report, wall: float) -> dict[str, Any]:
    return {
        "experiment": cfg.experiment,
        "passed": rep.passed,
        "n_tests": len(rep.tests),
        "n_failed": sum(not t.passed for t in rep.tests),
        "config": cfg.echo(),
        "tests": [_test_record(t, cfg.ci_level) for t in rep.tests],
        "values": _jsonable(rep.values),
        "wall_clock_s": wall,
        "version": __version__,
        "backend": backend.BACKEND,
        "python": platform.python_version(),
        "rng": {"generator": "philox4x64-10", "master_seed": cfg.master_seed,
                "streams": "one per path, index = path number"},
    }


def write_outputs(cfg: RunConfig, rep: Report, report: dict[str, Any], out_dir: str,
                  stem: str | None = None) -> list[FsPath]:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or cfg.experiment
    written = [out / f"{stem}.json"]
    written[0].write_text(json.dumps(report, indent=2, sort_keys=False) + "\n")
    for curve, rows in rep.curves.items():
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in curve).strip("_")
        p = out / f"{stem}__{safe}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value", "se"])
            w.writerows([[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in rows])
        written.append(p)
    return written


def execute(cfg: RunConfig, out_dir: str | None = None, threads: int | None = None,
            quiet: bool = False, stem: str | None = None) -> tuple[int, dict[str, Any] | None]:
    exp = REGISTRY[cfg.experiment]
    nthreads = threads or cfg.threads or default_threads()
    t0 = time.perf_counter()
    try:
        rep = exp.run(**cfg.params, seed=cfg.master_seed, threads=nthreads)
    except (ValueError, TypeError, InvalidFunctionalError) as exc:
        print(f"error: {cfg.experiment}: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except Exception as exc:  # noqa: BLE001
        print(f"error: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, None
    wall = time.perf_counter() - t0
    report = build_report(cfg, rep, wall)
    try:
        write_outputs(cfg, rep, report, out_dir or cfg.out_dir, stem)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, report
    if not quiet:
        print(f"== {cfg.experiment} ({wall:.1f}s)")
        for t in rep.tests:
            print("  " + t.line())
    return (EXIT_OK if rep.passed else EXIT_FAILED), report


# --------------------------------------------------------------------------- commands


def cmd_run(args: argparse.Namespace) -> int:
    path = args.config_opt or args.config
    if path is None:
        print("error: run needs a config file", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.master_seed = args.seed
    code, _ = execute(cfg, args.out_dir, args.threads)
    return code


def cmd_list(args: argparse.Namespace) -> int:
    width = max(map(len, REGISTRY))
    for name in sorted(REGISTRY):
        e = REGISTRY[name]
        print(f"{name:<{width}}  {e.description}  [{e.anchor}]")
    return EXIT_OK


def cmd_suite(args: argparse.Namespace) -> int:
    if args.level not in ("smoke", "full"):
        print(f"error: unknown suite level {args.level!r}; expected smoke or full", file=sys.stderr)
        return EXIT_CONFIG
    seed = 42 if args.seed is None else args.seed
    out_dir = args.out_dir or f"reports/{args.level}"
    worst, n_tests, n_failed = EXIT_OK, 0, 0
    summary = []
    for name in sorted(REGISTRY):
        e = REGISTRY[name]
        params = dict(e.smoke if args.level == "smoke" else e.full)
        cfg = RunConfig(name, params, seed, out_dir=out_dir)
        code, report = execute(cfg, out_dir, args.threads)
        if report is not None:
            n_tests += report["n_tests"]
            n_failed += report["n_failed"]
            summary.append({"experiment": name, "exit": code, "n_tests": report["n_tests"],
                            "n_failed": report["n_failed"], "wall_clock_s": report["wall_clock_s"]})
        else:
            summary.append({"experiment": name, "exit": code})
        worst = max(worst, code)
    FsPath(out_dir, "suite.json").write_text(json.dumps(
        {"level": args.level, "master_seed": seed, "n_tests": n_tests, "n_failed": n_failed,
         "experiments": summary}, indent=2) + "\n")
    print(f"suite {args.level}: {n_tests - n_failed}/{n_tests} tests passed")
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigmaq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--out-dir", default=None, help="directory for JSON reports and CSV curves")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads; results do not depend on it (default: $SIGMAQ_THREADS or 1)")

    r = sub.add_parser("run", help="run one experiment from a YAML config")
    r.add_argument("config", nargs="?", default=None)
    r.add_argument("--config", dest="config_opt", default=None)
    common(r)
    r.set_defaults(func=cmd_run)
    lst = sub.add_parser("list", help="list registered experiments")
    lst.set_defaults(func=cmd_list)
    s = sub.add_parser("suite", help="run every experiment at smoke or full settings")
    s.add_argument("level")
    common(s)
    s.set_defaults(func=cmd_suite)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
