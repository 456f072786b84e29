"""Command-line entry point: ``simulate``, ``geometry`` and ``complexity``.

Exit codes: 0 on success, 2 on a configuration error, 3 on a numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .beamforming import PrecoderError, restricted_size, search_complexity
from .config import ConfigError, ScenarioConfig, load_config, load_preset
from .evaluation import geometry_report, run_variant_sweeps
from .geometry import DomainError
from .localization import EstimationError

log = logging.getLogger("risthz")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_HEADER = ("power_dbm", "mean_sum_rate_bpshz", "ci95")
COMPLEXITY_HEADER = ("n", "exhaustive", "td", "psd", "pba")


def format_number(x) -> str:
    """Shortest round-trippable text for a number."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_number(v) for v in r])
    return buf.getvalue()


def read_csv(text: str):
    """Parse CSV written by :func:`write_csv` back into (header, rows)."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    rows = [tuple(int(v) if v.lstrip("-").isdigit() else float(v) for v in r) for r in reader]
    return header, rows


def _resolve_config(source: str) -> ScenarioConfig:
    path = Path(source)
    if path.exists():
        return load_config(path)
    if path.suffix or "/" in source:
        raise ConfigError(f"config file {source} not found")
    return load_preset(source)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_simulate(config: ScenarioConfig, out_dir: Path, workers: int = 1) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _utc_now()
    t0 = time.perf_counter()
    sweeps = run_variant_sweeps(config, workers=workers)
    files = {}
    for variant, result in sweeps.items():
        name = f"{variant}.csv"
        (out_dir / name).write_text(write_csv(SWEEP_HEADER, result.rows()))
        files[variant] = {"file": name, "degraded_trials": result.degraded}
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "trials": config.trials,
        "version": __version__,
        "started": started,
        "finished": _utc_now(),
        "elapsed_s": round(time.perf_counter() - t0, 3),
        "outputs": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d sweep(s) to %s", len(sweeps), out_dir)
    return EXIT_OK


def cmd_geometry(config: ScenarioConfig, stream=None) -> int:
    stream = stream or sys.stdout
    rep = geometry_report(config)
    p = lambda *a: print(*a, file=stream)
    p(f"scenario            {config.name or '-'}")
    p(f"wavelength          {rep['wavelength_m']:.6g} m")
    p(f"BS-RIS distance d1  {rep['d1_m']:.6g} m")
    p(f"q                   {rep['q']}")
    p(f"alpha_op (sub-RIS)  {rep['alpha_op_m']:.6g} m")
    p(f"chi_op (BS)         {rep['chi_op_m']:.6g} m")
    p(f"field boundary D    {rep['field_boundary_m']:.6g} m")
    p(f"orthogonality resid {rep['orthogonality_residual']:.3e} (alpha = {rep['alpha_m']:.6g} m)")
    p("user  d2_m      region  cascade_near  cascade_far")
    for u in rep["users"]:
        p(f"{u['user']:<5d} {u['d2_m']:<9.4f} {u['region']:<7s} "
          f"{u['cascade_near']:<13.4e} {u['cascade_far']:.4e}")
    return EXIT_OK


def complexity_rows(ns: Sequence[int], resolution_deg: float = 0.5, error_radius: float = 0.1,
                    distance: float = 3.0) -> List[tuple]:
    size = restricted_size(math.radians(resolution_deg), error_radius, distance)
    pba = search_complexity("pba", 1, (size, size))
    return [(n, search_complexity("exhaustive", n), search_complexity("td", n),
             search_complexity("psd", n), pba) for n in ns]


def cmd_complexity(ns: Sequence[int], stream=None, **kwargs) -> int:
    (stream or sys.stdout).write(write_csv(COMPLEXITY_HEADER, complexity_rows(ns, **kwargs)))
    return EXIT_OK


def _int_list(text: str) -> List[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risthz", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo sum-rate sweep for every enabled variant")
    s.add_argument("--config", required=True, help="YAML scenario file or preset name")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--seed", type=int, help="override the master seed")
    s.add_argument("--trials", type=int, help="override the trial count")
    s.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")

    g = sub.add_parser("geometry", help="spacing rules, field regions, orthogonality check")
    g.add_argument("--config", required=True, help="YAML scenario file or preset name")

    c = sub.add_parser("complexity", help="beam-search operation counts as CSV")
    c.add_argument("--n", required=True, type=_int_list, help="comma-separated N values")
    c.add_argument("--resolution-deg", type=float, default=0.5)
    c.add_argument("--error-radius", type=float, default=0.1)
    c.add_argument("--distance", type=float, default=3.0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "complexity":
            return cmd_complexity(args.n, resolution_deg=args.resolution_deg,
                                  error_radius=args.error_radius, distance=args.distance)
        config = _resolve_config(args.config)
        if args.command == "geometry":
            return cmd_geometry(config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.trials is not None:
            changes["trials"] = args.trials
        if changes:
            config = config.replace(**changes).validate()
        return cmd_simulate(config, args.out, max(1, args.workers))
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PrecoderError, EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
