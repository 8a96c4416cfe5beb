"""Command line entry point.

    kgdiag run <config> [--output DIR] [--stage NAME ...]
    kgdiag validate <config>
    kgdiag presets
    kgdiag report <bundle.json>

Exit codes: 0 when every stage passes, 1 when any stage fails or errors,
2 for configuration (or unreadable bundle) errors. The propagator cache
directory is taken from ``$KGDIAG_CACHE_DIR`` when set.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .cache import CACHE_ENV
from .config import ConfigError, load_config
from .geometry import PRESET_DEFAULTS, PRESETS
from .pipeline import BUNDLE_SCHEMA, STAGES, run_pipeline, write_outputs

__all__ = ["main", "build_parser"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgdiag", description="Diagonalization, scattering and propagator diagnostics "
                                "for Klein-Gordon fields on a periodic grid.",
                                epilog=f"Propagator cache directory: ${CACHE_ENV}.")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run the staged pipeline and write the bundle, CSVs and plot script")
    r.add_argument("config", type=Path)
    r.add_argument("--output", type=Path, default=None, help="override [output] directory")
    r.add_argument("--stage", action="append", choices=[s[0] for s in STAGES], default=None,
                   help="run only this stage and its prerequisites (repeatable)")
    r.add_argument("--quiet", action="store_true", help="print the verdict line only")
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config", type=Path)
    sub.add_parser("presets", help="list scenario presets and default parameters")
    rep = sub.add_parser("report", help="summarize a diagnostics bundle")
    rep.add_argument("bundle", type=Path)
    rep.add_argument("--all", action="store_true", help="list passing checks too")
    return p


def _print_problems(exc: ConfigError) -> None:
    print("configuration error:", file=sys.stderr)
    for msg in exc.problems:
        print(f"  - {msg}", file=sys.stderr)


def _fmt(value) -> str:
    return f"{value:.3g}" if isinstance(value, float) else str(value)


def _print_stages(stages: list[dict], show_all: bool) -> None:
    for st in stages:
        line = f"{st['status'].upper():7s} {st['name']:16s} {st['timing_s']:8.1f} s"
        if st.get("error"):
            line += f"  {st['error']}"
        print(line)
        for c in st["checks"]:
            if c["passed"] is False or show_all:
                mark = {True: "ok", False: "FAIL", None: "info"}[c["passed"]]
                tol = "" if c["relation"] == "info" else f" {c['relation']} {_fmt(c['tolerance'])}"
                print(f"    {mark:4s} {c['invariant']}: {_fmt(c['value'])}{tol}")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _print_problems(exc)
        return EXIT_CONFIG
    if args.output is not None:
        cfg = replace(cfg, output_dir=str(args.output))
    bundle = run_pipeline(cfg, stages=args.stage)
    files = write_outputs(bundle, cfg.output_dir)
    d = bundle.as_dict()
    if not args.quiet:
        _print_stages(d["stages"], show_all=False)
        print(f"wrote {', '.join(sorted(files.values()))} to {cfg.output_dir}")
    print(f"verdict: {bundle.verdict}")
    return EXIT_PASS if bundle.verdict == "pass" else EXIT_FAIL


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _print_problems(exc)
        return EXIT_CONFIG
    print(f"valid: scenario={cfg.scenario} N={cfg.n_points} T={cfg.horizon:g} dt={cfg.time_step:g} "
          f"p={cfg.riccati_order} hash={cfg.config_hash()[:12]}")
    return EXIT_PASS


def cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(f"{name:10s} {PRESETS[name][1]}")
    print("defaults: " + ", ".join(f"{k}={v:g}" for k, v in PRESET_DEFAULTS.items()))
    return EXIT_PASS


def cmd_report(args) -> int:
    try:
        d = json.loads(Path(args.bundle).read_text())
        if d.get("schema") != BUNDLE_SCHEMA:
            raise ValueError(f"not a diagnostics bundle (schema {d.get('schema')!r})")
        stages = d["stages"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read bundle {args.bundle}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = d.get("config", {})
    print(f"bundle {args.bundle}: schema {d['schema']} v{d.get('schema_version')}, scenario {cfg.get('scenario')}, "
          f"N={cfg.get('n_points')}, hash {str(d.get('config_hash'))[:12]}")
    _print_stages(stages, show_all=args.all)
    print(f"verdict: {d.get('verdict')}")
    return EXIT_PASS if d.get("verdict") == "pass" else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "validate": cmd_validate, "presets": cmd_presets, "report": cmd_report}[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
