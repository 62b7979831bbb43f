"""Command-line entry point: run scenarios, render tables, benchmark HE primitives."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESET_TABLES, ScenarioConfig, dump_preset, load_config, parse_config, preset_config
from .errors import ConfigError, ProtocolError
from .fedsim import CORRECTIONS, report_json, run_experiment
from .he import make_backend
from .he.params import default_params, toy_params

log = logging.getLogger("flicker")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3

HEBENCH_OPS = ("encrypt", "decrypt", "add_plain", "mul_plain", "rotate")


def _setup_logging() -> None:
    level = os.environ.get("FLICKER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _resolve_config(args) -> ScenarioConfig:
    if args.config and args.preset:
        raise ConfigError("give either a config file or --preset, not both")
    if args.preset:
        raw = preset_config(args.preset)
    elif args.config:
        return _override(load_config(args.config), args)
    else:
        raise ConfigError("a config file or --preset is required")
    return _override(parse_config(raw), args)


def _override(cfg: ScenarioConfig, args) -> ScenarioConfig:
    raw = dict(cfg.raw)
    if args.backend:
        raw["backend"] = args.backend
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    return parse_config(raw)


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    if args.dump_config:
        sys.stdout.write(json.dumps(cfg.raw, indent=2) + "\n")
        return EXIT_OK
    corrections = CORRECTIONS if args.correction == "all" else (args.correction,)
    out_root = Path(cfg.output_dir)
    for correction in corrections:
        started = datetime.now(timezone.utc)
        t0 = time.perf_counter()
        result = run_experiment(cfg.scenario(cfg.seed), correction, seed=cfg.seed)
        elapsed = time.perf_counter() - t0
        out = out_root / correction
        meta = {"scenario": cfg.name, "correction": correction, "seed": cfg.seed, "backend": cfg.backend}
        _write(out / "report.json", report_json(result))
        _write(out / "curve.csv", result.curve_csv())
        if result.outcome is not None:
            trace = result.outcome.trace
            _write(out / "trace.jsonl", trace.to_jsonl(meta))
            _write(out / "protocol_summary.csv", trace.summary_csv(len(cfg.distribution[0])))
        else:
            _write(out / "trace.jsonl", json.dumps({"schema": "flicker-trace/1", **meta, "events": 0}, sort_keys=True) + "\n")
        _write(
            out / "metadata.json",
            json.dumps(
                {"started_utc": started.isoformat(), "wall_seconds": round(elapsed, 3), "version": __version__},
                indent=2,
            )
            + "\n",
        )
        line = (
            f"{cfg.name} {correction}: GI {result.gi_before:.4f} -> {result.gi_after:.4f}, "
            f"accuracy {result.final_accuracy:.2f}, normalized {result.final_normalized:.2f}"
        )
        if result.protocol is not None:
            p = result.protocol
            line += f", ops {p['op_budget_total']} (budget ok: {p['op_budget_ok']})"
        print(line)
    return EXIT_OK


def _fmt(x) -> str:
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def render_tables(root: Path) -> str:
    reports = sorted(root.rglob("report.json"))
    if not reports:
        raise ConfigError(f"no report.json files under {root}")
    blocks = []
    for path in reports:
        r = json.loads(path.read_text(encoding="utf-8"))
        L = len(r["per_class"])
        rel = path.parent.relative_to(root).as_posix() or "."
        lines = [f"== {rel} (correction: {r['correction']}) =="]
        header = ["client"] + [f"class {j}" for j in range(L)] + ["LI"]
        rows = []
        for i, ld in enumerate(r["distribution"], start=1):
            li = min(ld) / max(ld) if max(ld) else 0.0
            rows.append([f"Cl-{i}"] + [str(c) for c in ld] + [f"{li:.4f}"])
        for metric in ("precision", "recall", "f1"):
            rows.append([metric] + [_fmt(m[metric]) for m in r["per_class"]] + [""])
        widths = [max(len(x) for x in col) for col in zip(header, *rows)]
        for row in [header] + rows:
            lines.append("  ".join(x.rjust(w) for x, w in zip(row, widths)))
        lines.append(f"global imbalance: {_fmt(r['global_imbalance'])}")
        lines.append(f"final accuracy: {_fmt(r['final_accuracy'])}")
        lines.append(f"normalized accuracy: {_fmt(r['final_normalized_accuracy'])}")
        lines.append(f"samples added: {r['samples_added']}  removed: {r['samples_removed']}")
        if "protocol" in r:
            p = r["protocol"]
            lines.append(f"protocol ops: {p['op_budget_total']}  within budget: {p['op_budget_ok']}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def cmd_tables(args) -> int:
    sys.stdout.write(render_tables(Path(args.dir)))
    return EXIT_OK


def hebench(profile: str, backend: str, repeat: int, seed: int = 0) -> list[dict]:
    params = default_params() if profile == "default" else toy_params()
    kinds = ("ckks", "mock") if backend == "both" else (backend,)
    rows = []
    rng = np.random.default_rng(seed)
    for kind in kinds:
        be = make_backend(kind, params, seed=seed)
        keys = be.keygen(seed, rotation_steps=[1])
        values = rng.uniform(-1, 1, 4)
        ct = be.encrypt(keys.public_key, values)
        ops = {
            "encrypt": lambda: be.encrypt(keys.public_key, values),
            "decrypt": lambda: be.decrypt(keys.secret_key, ct),
            "add_plain": lambda: be.add_plain(ct, values),
            "mul_plain": lambda: be.mul_plain(ct, values),
            "rotate": lambda: be.rotate(ct, 1, keys.galois_keys),
        }
        for name in HEBENCH_OPS:
            ops[name]()  # warm-up
            t0 = time.perf_counter()
            for _ in range(repeat):
                ops[name]()
            rows.append(
                {
                    "backend": kind,
                    "ring_degree": params.ring_degree,
                    "op": name,
                    "repeats": repeat,
                    "mean_ms": (time.perf_counter() - t0) / repeat * 1e3,
                }
            )
    return rows


def cmd_hebench(args) -> int:
    if args.repeat < 1:
        raise ConfigError("--repeat must be positive")
    rows = hebench(args.profile, args.backend, args.repeat)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "mean_ms": f"{r['mean_ms']:.4f}"})
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_preset(args) -> int:
    sys.stdout.write(dump_preset(args.name))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flicker", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario with one (or all) corrections")
    run.add_argument("config", nargs="?", help="scenario config JSON")
    run.add_argument("--preset", choices=sorted(PRESET_TABLES), help="use a built-in scenario")
    run.add_argument("--correction", choices=CORRECTIONS + ("all",), default="flicker")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--backend", choices=("ckks", "mock"), default=None)
    run.add_argument("--out", default=None, help="output directory (default from config)")
    run.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    run.set_defaults(func=cmd_run)

    tables = sub.add_parser("tables", help="render plain-text tables from report.json files")
    tables.add_argument("dir")
    tables.set_defaults(func=cmd_tables)

    bench = sub.add_parser("hebench", help="time the HE primitives")
    bench.add_argument("--profile", choices=("default", "toy"), default="default")
    bench.add_argument("--backend", choices=("ckks", "mock", "both"), default="ckks")
    bench.add_argument("--repeat", type=int, default=5)
    bench.set_defaults(func=cmd_hebench)

    preset = sub.add_parser("preset", help="print a built-in scenario config")
    preset.add_argument("name", choices=sorted(PRESET_TABLES))
    preset.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"flicker: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"flicker: protocol integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
