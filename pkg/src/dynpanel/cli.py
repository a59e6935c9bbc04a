"""Command-line front end: ``dynpanel {simulate,estimate,avar,mc}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or input.
Every command writes its outputs and a ``manifest.json`` under --output-dir.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .asymptotics import avar_compare, reports_to_csv
from .config import SCHEMA_VERSION, ConfigError, load_avar, load_mc, load_simulate
from .dgp import difference_panel, read_panel_csv, simulate, write_panel_csv
from .estimators import (
    SELECTION_RULES,
    SearchConfig,
    estimate_mile,
    estimate_mile_conditional,
    lancaster_roots,
)
from .montecarlo import McAbort, run, run_local_shift

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class InputError(ValueError):
    """Bad user input detected after config parsing (exit code 2)."""


def write_manifest(args, command: str, config_path: Optional[str], master_seed: Optional[int]) -> Path:
    out = Path(args.output_dir)
    manifest = {
        "command": command,
        "config_path": config_path,
        "output_dir": str(args.output_dir),
        "versions": {"tool": __version__, "config_schema": SCHEMA_VERSION},
        "master_seed": master_seed,
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return p


def _table(headers: list[str], rows: list[list[Any]]) -> str:
    def cell(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.6g}"
        return str(v)

    body = [[cell(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(headers)]
    line = lambda r: "  ".join(s.rjust(w) for s, w in zip(r, widths))
    return "\n".join([line(headers), line(["-" * w for w in widths])] + [line(r) for r in body]) + "\n"


def _csv(headers: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for r in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _emit(args, headers, rows, payload: dict) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif args.format == "csv":
        sys.stdout.write(_csv(headers, rows))
    else:
        sys.stdout.write(_table(headers, rows))


# -- commands ---------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, name = load_simulate(args.config, args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, meta_path = write_panel_csv(simulate(cfg), out / name)
    man = write_manifest(args, "simulate", args.config, cfg.seed)
    for p in (csv_path, meta_path, man):
        print(p)
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        data = read_panel_csv(args.dataset)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    chosen = [n for n in ("mile", "lancaster", "conditional") if getattr(args, n)]
    if not chosen:
        chosen = ["mile", "lancaster"] + ([] if data.zero_initial else ["conditional"])
    try:
        cfg = SearchConfig(rho_bounds=(args.rho_min, args.rho_max), grid_points=args.grid_points,
                           dj_interval=args.dj_interval)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    base = data if data.zero_initial else difference_panel(data)
    results = {}
    notes = []
    if not data.zero_initial and ({"mile", "lancaster"} & set(chosen)):
        notes.append("first column is nonzero: mile and lancaster run on data differenced on y1")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for name in chosen:
            if name == "mile":
                results["mile"] = estimate_mile(base, cfg)
            elif name == "lancaster":
                for rule in args.lancaster_rule or ["min-abs-sml"]:
                    key = "lancaster" if not args.lancaster_rule or len(args.lancaster_rule) == 1 else f"lancaster({rule})"
                    results[key] = lancaster_roots(base, cfg, rule)
            else:
                if data.zero_initial:
                    raise InputError(
                        "--conditional needs a nonzero first column y1; this dataset has y1 = 0, "
                        "so run --mile instead"
                    )
                results["conditional"] = estimate_mile_conditional(data, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for n in notes:
        print(f"note: {n}", file=sys.stderr)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "dataset": str(args.dataset),
        "search": {"rho_bounds": list(cfg.rho_bounds), "grid_points": cfg.grid_points,
                   "dj_interval": cfg.dj_interval},
        "N": data.N,
        "T": data.T,
        "differenced": not data.zero_initial,
        "results": {k: r.to_dict() for k, r in results.items()},
    }
    headers = ["estimator", "rho_hat", "sigma2_hat", "converged", "reliable", "n_local_maxima"]
    rows = [
        [k, r.theta_hat.rho, r.theta_hat.sigma2, r.converged, r.reliable,
         "" if r.n_local_maxima is None else r.n_local_maxima]
        for k, r in results.items()
    ]
    (out / "estimates.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "estimates.csv").write_text(_csv(headers, rows))
    (out / "estimates.txt").write_text(_table(headers, rows))
    write_manifest(args, "estimate", str(args.dataset), None)
    _emit(args, headers, rows, payload)
    return EXIT_OK


def cmd_avar(args) -> int:
    points = load_avar(args.config)
    reports = []
    for kw in points:
        try:
            reports.append(avar_compare(**kw))
        except ValueError as exc:
            raise InputError(f"{args.config}: invalid parameter point (T={kw['T']}): {exc}") from None
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"reports": [r.to_dict() for r in reports]}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    (out / "avar.json").write_text(text)
    table_csv = reports_to_csv(reports)
    (out / "avar.csv").write_text(table_csv)
    write_manifest(args, "avar", args.config, None)
    if args.format == "json":
        sys.stdout.write(text)
    elif args.format == "csv":
        sys.stdout.write(table_csv)
    else:
        headers = ["point", "T", "rho", "estimator", "avar_rho", "avar_sigma2", "conditional_gain", "flags"]
        rows = []
        for i, r in enumerate(reports):
            for est in r.avar_rho:
                rows.append([i, r.T, r.theta_star_diff.rho, est, r.avar_rho[est], r.avar_sigma2[est],
                             r.conditional_gain_case or "", ";".join(r.singular_flags)])
        sys.stdout.write(_table(headers, rows))
    return EXIT_OK


def _ratio_rows(summary) -> tuple[list[str], list[list[Any]]]:
    headers = ["estimator", "n_ok", "failed", "bias_rho", "var_rho", "theory_rho", "ratio_rho",
               "var_sigma2", "theory_sigma2", "ratio_sigma2"]
    rows = []
    for name, s in summary.estimators.items():
        th = s.theory_avar
        rat = s.ratio
        nan = float("nan")
        rows.append([
            name, s.n_ok, s.n_failed, float(s.mean_bias[0]),
            float(s.empirical_var_scaled[0, 0]), nan if th is None else float(th[0, 0]),
            nan if rat is None else float(rat[0, 0]),
            float(s.empirical_var_scaled[1, 1]), nan if th is None else float(th[1, 1]),
            nan if rat is None else float(rat[1, 1]),
        ])
    return headers, rows


def cmd_mc(args) -> int:
    cfg, h = load_mc(args.config, args.seed)
    try:
        summary = run(cfg, args.threads) if h is None else run_local_shift(cfg, h, args.threads)
    except McAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        for reason, n in exc.reasons.items():
            print(f"  {n:6d}  {reason}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = summary.to_json()
    (out / "mc_summary.json").write_text(text)
    headers, rows = _ratio_rows(summary)
    (out / "mc_table.csv").write_text(_csv(headers, rows))
    (out / "mc_table.txt").write_text(_table(headers, rows))
    if summary.per_replication:
        (out / "mc_replications.csv").write_text(summary.long_csv())
    write_manifest(args, "mc", args.config, cfg.dgp.seed)
    if args.format == "json":
        sys.stdout.write(text)
    else:
        _emit(args, headers, rows, {})
    return EXIT_OK


# -- entry point --------------------------------------------------------------------------


def _common(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; the subcommand copy uses SUPPRESS so it never overwrites earlier values."""
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(None), help="override the config's master seed")
    common.add_argument("--threads", type=int, default=d(os.cpu_count() or 1),
                        help="worker processes for mc (default: all cores)")
    common.add_argument("--output-dir", default=d("."), help="directory for outputs and manifest.json")
    common.add_argument("--format", choices=("text", "csv", "json"), default=d("text"),
                        help="what to print on stdout")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    p = argparse.ArgumentParser(prog="dynpanel", description=__doc__.splitlines()[0], parents=[_common(suppress=False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a panel from a DGP config")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="run estimators on a panel CSV")
    e.add_argument("dataset")
    e.add_argument("--mile", action="store_true")
    e.add_argument("--lancaster", action="store_true")
    e.add_argument("--conditional", action="store_true")
    e.add_argument("--lancaster-rule", action="append", choices=SELECTION_RULES,
                   help="root selection rule; repeat to run several")
    e.add_argument("--rho-min", type=float, default=SearchConfig.rho_bounds[0])
    e.add_argument("--rho-max", type=float, default=SearchConfig.rho_bounds[1])
    e.add_argument("--grid-points", type=int, default=SearchConfig.grid_points)
    e.add_argument("--dj-interval", type=float, default=None,
                   help="half-width of the window around the within estimate (dhaene-jochmans rule)")
    e.set_defaults(func=cmd_estimate)

    a = sub.add_parser("avar", parents=[common], help="evaluate asymptotic variances at a point or grid")
    a.add_argument("config")
    a.set_defaults(func=cmd_avar)

    m = sub.add_parser("mc", parents=[common], help="run a Monte Carlo study")
    m.add_argument("config")
    m.set_defaults(func=cmd_mc)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be a 64-bit unsigned integer")
    if getattr(args, "lancaster_rule", None):
        args.lancaster = True
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
