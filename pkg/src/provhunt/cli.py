"""Operator command surface: ingest, hunt, gen, oracle, sweep.

Every invocation writes exactly one run manifest next to its primary output
and exits 0 (ok / no alarm), 1 (error), or 2 (hunt raised an alarm).
Defaults for --cthr/--tau/--max-iters/--seed can come from PROVHUNT_*
environment variables.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

from . import __version__
from .align import SearchConfig, hunt
from .ingest import ingest_path
from .oracle import brute_force_best_alignment, threshold_sweep
from .prov import merge_builders
from .query import builtin_query_names, load_builtin_query, load_query_file
from .report import build_report, write_report_files
from .snapshot import load_snapshot, save_snapshot
from .synth import generate, event_line, load_spec

ENV_PREFIX = "PROVHUNT_"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALARM = 2


def _env(name: str, cast, fallback):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except (TypeError, ValueError):
        return fallback


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ManifestWriter:
    """Collects the run manifest and writes it exactly once."""

    def __init__(self, command: str):
        self.data = {
            "tool": {"name": "provhunt", "version": __version__},
            "command": command,
            "config": {},
            "inputs": {},
            "result": {},
            "timing": {},
        }
        self._t0 = time.monotonic()
        self.path: Path | None = None

    def add_input(self, path):
        p = Path(path)
        try:
            self.data["inputs"][str(p)] = _sha256(p)
        except OSError:
            self.data["inputs"][str(p)] = None

    def finish(self, status: int):
        self.data["timing"]["total_seconds"] = round(time.monotonic() - self._t0, 6)
        self.data["result"].setdefault("exit_code", status)
        text = json.dumps(self.data, indent=2, sort_keys=True) + "\n"
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(text, "utf-8")
                return
            except OSError:
                pass
        sys.stderr.write(text)


def _search_config(args) -> SearchConfig:
    tau = Fraction(args.tau) if args.tau is not None else None
    return SearchConfig(
        cthr=args.cthr,
        tau=tau,
        max_iterations=args.max_iters,
        rng_seed=args.seed,
        stop_on_first_alarm=not getattr(args, "all_iters", False),
    )


def _load_query(ref: str):
    p = Path(ref)
    if p.exists():
        return load_query_file(p)
    return load_builtin_query(ref)


def _add_search_flags(sp):
    sp.add_argument("--cthr", type=int, default=_env("CTHR", int, 3),
                    help="compromise bound (default 3)")
    sp.add_argument("--tau", default=_env("TAU", str, None),
                    help="alarm threshold, e.g. 1/3 (default 1/cthr)")
    sp.add_argument("--max-iters", type=int, default=_env("MAX_ITERS", int, 20),
                    help="seed iterations budget (default 20)")
    sp.add_argument("--seed", type=int, default=_env("SEED", int, 0),
                    help="RNG seed for deterministic tie-breaks")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="provhunt",
        description="Hunt attack-behavior query graphs inside audit provenance graphs.")
    ap.add_argument("--version", action="version", version=f"provhunt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="parse NDJSON audit events into a snapshot")
    sp.add_argument("--events", nargs="+", required=True,
                    help="NDJSON event file(s); gzip accepted; multiple files "
                         "must come from disjoint hosts")
    sp.add_argument("--out", required=True, help="snapshot output path")
    sp.add_argument("--on-error", choices=("abort", "skip"), default="abort")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("hunt", help="align a query graph against a snapshot")
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--query", required=True,
                    help=f"query JSON path or built-in name ({', '.join(builtin_query_names())})")
    _add_search_flags(sp)
    sp.add_argument("--all-iters", action="store_true",
                    help="run the full iteration budget instead of stopping at "
                         "the first alarm")
    sp.add_argument("--report", required=True, help="report JSON output path")
    sp.set_defaults(func=cmd_hunt)

    sp = sub.add_parser("gen", help="generate a synthetic scenario")
    sp.add_argument("--spec", required=True, help="scenario spec JSON")
    sp.add_argument("--events-out", required=True)
    sp.add_argument("--truth-out", required=True)
    sp.add_argument("--seed", type=int, default=None,
                    help="override the spec's benign rng_seed")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("oracle", help="brute-force optimum vs. the greedy hunt")
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--query", required=True)
    _add_search_flags(sp)
    sp.add_argument("--cap", type=int, default=1_000_000,
                    help="assignment enumeration budget")
    sp.add_argument("--out", required=True, help="comparison JSON output path")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("sweep", help="F-score threshold sweep over score files")
    sp.add_argument("--attack", required=True,
                    help="JSON array of attack-scenario scores")
    sp.add_argument("--benign", required=True,
                    help="JSON array of benign-scenario scores")
    sp.add_argument("--step", default="1/100", help="grid step (default 1/100)")
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.set_defaults(func=cmd_sweep)

    return ap


def cmd_ingest(args, manifest: ManifestWriter) -> int:
    manifest.path = Path(args.out + ".manifest.json")
    builders = []
    stats_all = []
    t0 = time.monotonic()
    for path in args.events:
        manifest.add_input(path)
        builder, stats = ingest_path(path, on_error=args.on_error)
        builders.append(builder)
        stats_all.append(stats.as_dict())
    builder = builders[0] if len(builders) == 1 else merge_builders(builders)
    graph = builder.freeze()
    manifest.data["timing"]["ingest_seconds"] = round(time.monotonic() - t0, 6)
    digest = save_snapshot(graph, args.out, stats=graph.stats())
    manifest.data["config"] = {"on_error": args.on_error}
    manifest.data["result"] = {
        "snapshot": args.out,
        "snapshot_sha256": digest,
        "graph": graph.stats(),
        "per_input": stats_all,
    }
    print(json.dumps(graph.stats(), sort_keys=True))
    return EXIT_OK


def cmd_hunt(args, manifest: ManifestWriter) -> int:
    manifest.path = Path(args.report + ".manifest.json")
    manifest.add_input(args.snapshot)
    cfg = _search_config(args)
    manifest.data["config"] = {
        "cthr": cfg.cthr, "tau": str(cfg.threshold),
        "max_iterations": cfg.max_iterations, "rng_seed": cfg.rng_seed,
        "stop_on_first_alarm": cfg.stop_on_first_alarm,
    }
    t0 = time.monotonic()
    graph = load_snapshot(args.snapshot)
    manifest.data["timing"]["load_seconds"] = round(time.monotonic() - t0, 6)
    query_path = Path(args.query)
    if query_path.exists():
        manifest.add_input(query_path)
    q = _load_query(args.query)

    t0 = time.monotonic()
    result = hunt(q, graph, cfg)
    manifest.data["timing"]["search_seconds"] = round(time.monotonic() - t0, 6)

    report = build_report(result, q, graph, cfg, query_name=q.name or args.query)
    write_report_files(report, args.report)
    manifest.data["result"] = {
        "alarm": result.alarm,
        "score": str(result.score),
        "iterations": len(result.iterations),
        "report": args.report,
    }
    print(f"score={result.score} alarm={'yes' if result.alarm else 'no'} "
          f"iterations={len(result.iterations)}")
    return EXIT_ALARM if result.alarm else EXIT_OK


def cmd_gen(args, manifest: ManifestWriter) -> int:
    manifest.path = Path(args.events_out + ".manifest.json")
    manifest.add_input(args.spec)
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec.benign.rng_seed = args.seed
    t0 = time.monotonic()
    events, truth = generate(spec)
    with open(args.events_out, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(event_line(ev) + "\n")
    Path(args.truth_out).write_text(
        json.dumps(truth.as_dict(), indent=2, sort_keys=True) + "\n", "utf-8")
    manifest.data["timing"]["generate_seconds"] = round(time.monotonic() - t0, 6)
    manifest.data["config"] = {"rng_seed": spec.benign.rng_seed}
    manifest.data["result"] = {
        "events": len(events),
        "events_out": args.events_out,
        "truth_out": args.truth_out,
        "planted": bool(truth.assignment),
    }
    print(f"events={len(events)} planted={bool(truth.assignment)}")
    return EXIT_OK


def cmd_oracle(args, manifest: ManifestWriter) -> int:
    manifest.path = Path(args.out + ".manifest.json")
    manifest.add_input(args.snapshot)
    cfg = _search_config(args)
    graph = load_snapshot(args.snapshot)
    q = _load_query(args.query)
    t0 = time.monotonic()
    hunt_result = hunt(q, graph, cfg)
    oracle_result = brute_force_best_alignment(q, graph, cfg, cap=args.cap)
    manifest.data["timing"]["search_seconds"] = round(time.monotonic() - t0, 6)
    payload = {
        "hunt_score": str(hunt_result.score),
        "oracle_score": str(oracle_result.best.score),
        "n_assignments": oracle_result.n_assignments,
        "greedy_is_optimal": hunt_result.score == oracle_result.best.score,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                              "utf-8")
    manifest.data["config"] = {"cthr": cfg.cthr, "cap": args.cap,
                               "rng_seed": cfg.rng_seed}
    manifest.data["result"] = payload
    print(f"hunt={payload['hunt_score']} oracle={payload['oracle_score']}")
    return EXIT_OK


def _load_scores(path) -> list:
    data = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of scores")
    return data


def cmd_sweep(args, manifest: ManifestWriter) -> int:
    manifest.path = Path(args.out + ".manifest.json")
    manifest.add_input(args.attack)
    manifest.add_input(args.benign)
    attack = _load_scores(args.attack)
    benign = _load_scores(args.benign)
    result = threshold_sweep(attack, benign, step=Fraction(args.step))
    lines = ["threshold,precision,recall,f1"]
    for row in result.rows:
        lines.append(f"{float(row.threshold):.6f},{float(row.precision):.6f},"
                     f"{float(row.recall):.6f},{float(row.f1):.6f}")
    Path(args.out).write_text("\n".join(lines) + "\n", "utf-8")
    manifest.data["config"] = {"step": args.step}
    manifest.data["result"] = {
        "max_f1": str(result.max_f1),
        "interval": [str(result.interval[0]), str(result.interval[1])],
        "midpoint": str(result.midpoint),
        "csv": args.out,
    }
    print(f"max_f1={result.max_f1} interval=[{result.interval[0]}, "
          f"{result.interval[1]}] midpoint={result.midpoint}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = ManifestWriter(args.command)
    try:
        status = args.func(args, manifest)
    except Exception as exc:  # total exit-code contract: errors land on 1
        manifest.data["result"] = {"error": str(exc), "exit_code": EXIT_ERROR}
        manifest.finish(EXIT_ERROR)
        sys.stderr.write(f"provhunt {args.command}: error: {exc}\n")
        return EXIT_ERROR
    manifest.finish(status)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
