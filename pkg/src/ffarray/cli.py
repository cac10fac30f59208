"""Command-line front end.

Subcommands: ``geometry``, ``delta``, ``noise-sample``, ``calibrate``, ``sweep``
and ``report``.  Exit codes are 0 on success, 1 on usage errors and 2 on
runtime or model errors.  The output directory defaults to ``ffarray_out``,
can be set by ``FFARRAY_OUTPUT_DIR``, a config file's ``output_dir``, or
``--out`` (highest precedence).

Files written by ``sweep``:

``results_<geometry>.csv``
    one row per (configuration, gate, α); columns
    ``config,gate,alpha_V_per_m,mean_infidelity,std_error,n_instances``.
``curves_<geometry>_<gate>.dat``
    whitespace columns ``alpha_V_per_m`` then ``<config>_mean <config>_err``
    for each configuration.
``summary_<gate>.dat``
    columns ``alpha_V_per_m parallelism`` then one mean per geometry
    (``nan`` where a geometry has no configuration at that level).
``manifest.json``
    plan echo, fingerprint, versions, wall time, worst unitarity error.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .experiments import (
    PLAN_KEYS,
    ExperimentError,
    ExperimentPlan,
    ResultTable,
    calibrate_plan,
    parallelism_summary,
    plan_from_mapping,
    profile_plan,
    read_csv,
    run_plan,
)
from .fidelity import FidelityError, delta_metric, delta_terms
from .kvfile import KVError, atomic_write_text, format_kv, parse_kv
from .model import (
    PARAM_FILE_KEYS,
    GeometryKind,
    InteractionRule,
    ModelError,
    OpKind,
    build_geometry,
    enumerate_configurations,
    geometry_to_text,
    parse_kind,
    parse_label,
)
from .noise import NoiseError, NoiseSpec, synthesize
from .propagation import PropagationError
from .pulses import CalibrationError, CalibrationResult, GateId, PulseError, parse_gate

ENV_OUTPUT = "FFARRAY_OUTPUT_DIR"
DEFAULT_OUTPUT = "ffarray_out"
CACHE_NAME = "calibration.txt"
CACHE_FORMAT = 1

RUNTIME_ERRORS = (ModelError, ExperimentError, CalibrationError, PulseError, NoiseError, KVError,
                  PropagationError, FidelityError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    plan: ExperimentPlan
    output_dir: Path
    formats: tuple[str, ...] = ("csv", "dat")
    workers: int | None = None
    calibrations: dict = field(default_factory=dict)


RUN_KEYS = {"profile", "output_dir", "formats", "workers", "params_file"}
FORMATS = ("csv", "dat")


def load_run_config(path: str | None, fast: bool = False, output: str | None = None) -> RunConfig:
    """Read a ``key = value`` config.  Unknown keys or missing files are usage errors."""
    mapping: dict[str, str] = {}
    base_dir = Path(".")
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        mapping = parse_kv(p.read_text())
        base_dir = p.parent
    unknown = set(mapping) - PLAN_KEYS - RUN_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    profile = "fast" if fast else mapping.pop("profile", "default")
    if fast:
        mapping.pop("profile", None)
    try:
        plan = profile_plan(profile)
    except ExperimentError as exc:
        raise UsageError(str(exc)) from None
    if "params_file" in mapping:
        pf = base_dir / mapping.pop("params_file")
        if not pf.is_file():
            raise UsageError(f"params_file not found: {pf}")
        params_kv = parse_kv(pf.read_text())
        bad = set(params_kv) - set(PARAM_FILE_KEYS)
        if bad:
            raise UsageError(f"unknown parameter keys in {pf}: {', '.join(sorted(bad))}")
        # explicit entries in the config still win
        mapping = {**params_kv, **mapping}
    formats = tuple(f.strip() for f in mapping.pop("formats", "csv,dat").split(",") if f.strip())
    if not formats or any(f not in FORMATS for f in formats):
        raise UsageError(f"formats must be a subset of {FORMATS}")
    workers = mapping.pop("workers", None)
    try:
        workers = int(workers) if workers is not None else None
    except ValueError:
        raise UsageError(f"workers must be an integer, got {workers!r}") from None
    cfg_out = mapping.pop("output_dir", None)
    out = output or os.environ.get(ENV_OUTPUT) or cfg_out or DEFAULT_OUTPUT
    try:
        plan = plan_from_mapping(mapping, plan)
    except (ExperimentError, ModelError, PulseError, NoiseError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return RunConfig(plan, Path(out), formats, workers)


# ---------------------------------------------------------------------------
# calibration cache


def _cache_key(plan: ExperimentPlan) -> str:
    m = plan.to_mapping()
    keep = {k: m[k] for k in sorted(m) if k in PARAM_FILE_KEYS or k in (
        "dt_s", "r0_m", "dEz_idle_V_per_m", "rz_level_V_per_m", "Eac_rx_V_per_m", "ramp_fraction")}
    return hashlib.sha256((f"ffarray {__version__}\n" + format_kv(keep)).encode()).hexdigest()[:16]


_CAL_FIELDS = ("duration", "amplitude", "level", "phase", "virtual_z", "residual", "f_ref", "f_logical",
               "seed_duration")


def calibration_to_text(plan: ExperimentPlan, cals: dict[str, CalibrationResult]) -> str:
    m = {"format_version": str(CACHE_FORMAT), "ffarray_version": __version__, "key": _cache_key(plan)}
    for gate, c in cals.items():
        for name in _CAL_FIELDS:
            m[f"{gate}.{name}"] = repr(float(getattr(c, name)))
    return "# ffarray calibration cache\n" + format_kv(m)


def calibration_from_text(text: str, plan: ExperimentPlan) -> dict[str, CalibrationResult]:
    """Parse a cache; raises ``KVError`` if it is corrupt or stale."""
    kv = parse_kv(text)
    if kv.get("format_version") != str(CACHE_FORMAT) or kv.get("key") != _cache_key(plan):
        raise KVError("calibration cache is stale or from another format")
    out = {}
    gates = sorted({k.split(".", 1)[0] for k in kv if "." in k})
    for gate in gates:
        try:
            vals = {name: float(kv[f"{gate}.{name}"]) for name in _CAL_FIELDS}
            gid = parse_gate(gate)
        except (KeyError, ValueError, PulseError) as exc:
            raise KVError(f"calibration cache entry for {gate} is corrupt: {exc}") from None
        if not all(math.isfinite(v) for v in vals.values()) or not vals["duration"] > 0:
            raise KVError(f"calibration cache entry for {gate} is corrupt")
        out[gid.value] = CalibrationResult(gate_id=gid, settings=plan.settings, **vals)
    return out


def obtain_calibrations(plan: ExperimentPlan, out_dir: Path, gates: Sequence[str] | None = None,
                        log=print) -> dict[str, CalibrationResult]:
    """Read the cache in ``out_dir`` and calibrate whatever is missing or corrupt."""
    gates = list(gates or plan.gates)
    path = out_dir / CACHE_NAME
    cached: dict[str, CalibrationResult] = {}
    if path.exists():
        try:
            cached = calibration_from_text(path.read_text(), plan)
        except (KVError, OSError, UnicodeDecodeError) as exc:
            log(f"warning: ignoring calibration cache ({exc}); recalibrating", file=sys.stderr)
            cached = {}
    missing = [g for g in gates if g not in cached]
    if missing:
        fresh = calibrate_plan(replace(plan, gates=tuple(missing)))
        cached.update(fresh)
        atomic_write_text(path, calibration_to_text(plan, cached))
    return {g: cached[g] for g in gates}


# ---------------------------------------------------------------------------
# output files


def curves_text(table: ResultTable, geometry: str, gate: str) -> str | None:
    recs = [r for r in table.for_geometry(geometry) if r.gate == gate]
    if not recs:
        return None
    configs = list(dict.fromkeys(r.config for r in recs))
    alphas = sorted({r.alpha for r in recs})
    by = {(r.config, r.alpha): r for r in recs}
    header = "# alpha_V_per_m " + " ".join(f"{c}_mean {c}_err" for c in configs)
    rows = [header]
    for a in alphas:
        cols = [f"{a:.6g}"]
        for c in configs:
            r = by.get((c, a))
            cols += [f"{r.mean_infidelity:.10e}", f"{r.std_error:.10e}"] if r else ["nan", "nan"]
        rows.append(" ".join(cols))
    return "\n".join(rows) + "\n"


def summary_text(table: ResultTable, gate: str) -> str | None:
    summary = parallelism_summary(table)
    geos = table.geometries()
    keys = sorted({(a, p) for (g, gt, a), d in summary.items() if gt == gate for p in d})
    if not keys:
        return None
    rows = ["# alpha_V_per_m parallelism " + " ".join(geos)]
    for a, p in keys:
        vals = []
        for geo in geos:
            v = summary.get((geo, gate, a), {}).get(p)
            vals.append("nan" if v is None else f"{v:.10e}")
        rows.append(f"{a:.6g} {p} " + " ".join(vals))
    return "\n".join(rows) + "\n"


def read_columns(text: str) -> tuple[list[str], np.ndarray]:
    """Column names and data of a ``.dat`` file."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise KVError("data file lacks a header line")
    names = lines[0].lstrip("#").split()
    data = np.loadtxt(lines[1:], ndmin=2)
    if data.shape[1] != len(names):
        raise KVError("column count does not match header")
    return names, data


def write_outputs(table: ResultTable, out_dir: Path, formats: Sequence[str]) -> list[Path]:
    written = []
    plan_gates = list(dict.fromkeys(r.record.gate for r in table.records))
    for geo in table.geometries():
        if "csv" in formats:
            p = out_dir / f"results_{geo}.csv"
            atomic_write_text(p, table.csv_text(geo))
            written.append(p)
        if "dat" in formats:
            for gate in plan_gates:
                text = curves_text(table, geo, gate)
                if text:
                    p = out_dir / f"curves_{geo}_{gate}.dat"
                    atomic_write_text(p, text)
                    written.append(p)
    if "dat" in formats:
        for gate in plan_gates:
            text = summary_text(table, gate)
            if text:
                p = out_dir / f"summary_{gate}.dat"
                atomic_write_text(p, text)
                written.append(p)
    p = out_dir / "manifest.json"
    atomic_write_text(p, table.manifest_text())
    written.append(p)
    return written


# ---------------------------------------------------------------------------
# subcommands


def cmd_geometry(args) -> int:
    geo = build_geometry(args.geometry, args.r0_nm * 1e-9, args.rule)
    sys.stdout.write(geometry_to_text(geo))
    for op, levels in ((OpKind.ONE_QUBIT, (1, 2, 3, 4)), (OpKind.TWO_QUBIT, (1, 2))):
        for p in levels:
            labels = [c.label for c in enumerate_configurations(geo, op, p)]
            print(f"# {op.value} x{p}: {' '.join(labels) if labels else '(none)'}")
    return 0


def cmd_delta(args) -> int:
    geo = build_geometry(args.geometry, args.r0_nm * 1e-9)
    print(f"delta_{geo.kind.value} = {delta_metric(geo):.3f} r0^-3")
    for i, j, term in delta_terms(geo):
        print(f"  ({i},{j})  r = {geo.distance(i, j) / geo.r0:.4f} r0  term = {term:.4f}")
    if geo.kind is GeometryKind.STA:
        print("note: brute-force sum over all six pairs (three at r0, three at sqrt(3) r0); "
              "the sometimes quoted 3.51 is not reproduced by this sum")
    return 0


def cmd_noise_sample(args) -> int:
    spec = NoiseSpec(args.alpha, args.f_min, args.f_max, args.components, args.seed, args.semantics)
    trace = synthesize(spec, args.duration_ns * 1e-9, args.dt_ps * 1e-12, (args.qubit, args.instance))
    text = trace.to_text()
    if args.output:
        atomic_write_text(args.output, text)
        print(f"wrote {len(trace.samples)} samples to {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def _gate_list(raw: Sequence[str] | None) -> list[str] | None:
    if not raw:
        return None
    try:
        gates = [parse_gate(g).value for g in raw]
    except PulseError as exc:
        raise UsageError(str(exc)) from None
    if GateId.IDLE.value in gates:
        raise UsageError("Idle needs no calibration")
    return gates


def cmd_calibrate(args) -> int:
    cfg = load_run_config(args.config, output=args.out)
    gates = _gate_list(args.gate) or list(cfg.plan.gates)
    cals = obtain_calibrations(cfg.plan, cfg.output_dir, gates)
    for g, c in cals.items():
        print(f"{g:10s} duration = {c.duration * 1e9:.4f} ns  residual = {c.residual:.2e}")
    print(f"cache: {cfg.output_dir / CACHE_NAME}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, fast=args.fast, output=args.out)
    plan = cfg.plan
    over = {}
    if args.geometry:
        over["geometries"] = tuple(parse_kind(g).value for g in args.geometry)
    if args.gate:
        over["gates"] = tuple(_gate_list(args.gate))
    if args.alpha:
        over["alphas"] = tuple(args.alpha)
    if args.instances is not None:
        over["n_instances"] = args.instances
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        try:
            plan = replace(plan, **over)
        except (ExperimentError, ModelError, PulseError) as exc:
            raise UsageError(str(exc)) from None
    workers = args.workers if args.workers is not None else cfg.workers
    if workers is not None and workers < 1:
        raise UsageError("--workers must be >= 1")
    cals = obtain_calibrations(plan, cfg.output_dir)

    def progress(done, total):
        if not args.quiet:
            print(f"\r{done}/{total} cells", end="" if done < total else "\n", file=sys.stderr, flush=True)

    table = run_plan(plan, workers=workers, keep_going=args.keep_going, calibrations=cals, progress=progress)
    written = write_outputs(table, cfg.output_dir, cfg.formats)
    print(f"fingerprint {table.fingerprint}; {len(table.records)} records; "
          f"max unitarity error {table.manifest['max_unitarity_error']:.1e}")
    for p in written:
        print(f"wrote {p}")
    if table.errors:
        for e in table.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT)
    files = sorted(out_dir.glob("results_*.csv"))
    if not files:
        raise ExperimentError(f"no results_*.csv files in {out_dir}")
    means: dict = {}
    for f in files:
        geo = f.stem.split("_", 1)[1]
        for r in read_csv(f.read_text()):
            op = OpKind.TWO_QUBIT if r.gate == GateId.SQRT_ISWAP.value else OpKind.ONE_QUBIT
            par = parse_label(r.config, op).parallelism
            means.setdefault((r.gate, r.alpha), {}).setdefault((geo, par), []).append(r.mean_infidelity)
            if args.alpha is None or r.alpha == args.alpha:
                if args.verbose:
                    print(f"{geo:4s} {r.config:7s} {r.gate:10s} alpha={r.alpha:6.4g}  "
                          f"{r.mean_infidelity:.3e} +- {r.std_error:.1e}  (n={r.n_instances})")
    geos = [f.stem.split("_", 1)[1] for f in files]
    print("mean infidelity by parallelism")
    for (gate, alpha), d in sorted(means.items()):
        if args.alpha is not None and alpha != args.alpha:
            continue
        print(f"{gate} alpha={alpha:g}")
        for par in sorted({p for _, p in d}):
            vals = [np.mean(d[(g, par)]) if (g, par) in d else float("nan") for g in geos]
            print(f"  x{par}  " + "  ".join(f"{g}={v:.3e}" for g, v in zip(geos, vals)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ffarray", description="Flip-flop qubit array noise simulator.")
    parser.add_argument("--version", action="version", version=f"ffarray {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def kind(text):
        try:
            return parse_kind(text)
        except ModelError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    p = sub.add_parser("geometry", help="print positions and configuration representatives")
    p.add_argument("--geometry", type=kind, required=True)
    p.add_argument("--r0-nm", type=float, default=360.0)
    p.add_argument("--rule", choices=[r.value for r in InteractionRule])
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("delta", help="interaction density and per-pair terms")
    p.add_argument("--geometry", type=kind, required=True)
    p.add_argument("--r0-nm", type=float, default=360.0)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("noise-sample", help="write one synthesized noise trace")
    p.add_argument("--alpha", type=float, required=True, help="noise amplitude in V/m")
    p.add_argument("--duration-ns", type=float, default=100.0)
    p.add_argument("--dt-ps", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--qubit", type=int, default=0, help="stream index of the qubit (0-based)")
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--f-min", type=float, default=50e3)
    p.add_argument("--f-max", type=float, default=22e9)
    p.add_argument("--components", type=int, default=1000)
    p.add_argument("--semantics", choices=["rms", "psd_prefactor"], default="rms")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_noise_sample)

    p = sub.add_parser("calibrate", help="calibrate gates and update the cache")
    p.add_argument("--config")
    p.add_argument("--gate", action="append", help="restrict to a gate (repeatable)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep and write tables")
    p.add_argument("--config")
    p.add_argument("--fast", action="store_true", help="20 instances on a 5-point alpha grid")
    p.add_argument("--workers", type=int)
    p.add_argument("--keep-going", action="store_true")
    p.add_argument("--out")
    p.add_argument("--geometry", action="append", type=kind)
    p.add_argument("--gate", action="append")
    p.add_argument("--alpha", action="append", type=float)
    p.add_argument("--instances", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize result tables in an output directory")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ffarray: error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"ffarray: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"ffarray: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
