"""Monte Carlo sweeps over geometries, configurations, gates and noise amplitudes.

Noise realisations are keyed by ``(master seed, qubit, instance)`` only.  Every
cell therefore sees the same per-qubit noise histories (scaled by α), which
makes comparisons between cells paired, and adding or removing cells never
changes the numbers of the others.  Results are reduced in a fixed order, so
tables do not depend on the number of worker processes.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
import platform
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .fidelity import CSV_HEADER, FidelityRecord, aggregate, entanglement_fidelity, target_unitary
from .kvfile import format_kv
from .model import (
    PARAM_FILE_KEYS,
    ArrayGeometry,
    Configuration,
    GeometryKind,
    OpKind,
    PhysicalParams,
    build_geometry,
    enumerate_configurations,
    params_from_mapping,
    parse_kind,
    parse_label,
)
from .noise import ALPHA_SEMANTICS, NoiseSpec, make_process
from .propagation import TimeGrid, propagate, unitarity_error
from .pulses import (
    DEFAULT_DT,
    CalibrationResult,
    Calibrator,
    ControlSettings,
    GateId,
    parse_gate,
    schedule_parallel,
    schedule_sqrt_iswap,
)

UNITARITY_TOL = 1e-9


class ExperimentError(RuntimeError):
    pass


class CellError(ExperimentError):
    """A cell failed; ``cell`` identifies it as ``geometry/config/gate``."""

    def __init__(self, cell: str, message: str):
        super().__init__(f"{cell}: {message}")
        self.cell = cell


def _op_kind(gate: GateId) -> OpKind:
    return OpKind.TWO_QUBIT if gate is GateId.SQRT_ISWAP else OpKind.ONE_QUBIT


_LEVELS = {OpKind.ONE_QUBIT: (1, 2, 3, 4), OpKind.TWO_QUBIT: (1, 2)}


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything that determines a sweep's numbers."""

    geometries: tuple[str, ...] = ("LA", "SA", "STA")
    gates: tuple[str, ...] = ("Rz", "Rx", "SqrtISwap")
    parallelism: tuple[int, ...] = (1, 2, 3, 4)
    alphas: tuple[float, ...] = tuple(float(a) for a in range(0, 101, 10))
    n_instances: int = 100
    seed: int = 0
    dt: float = DEFAULT_DT
    r0: float = 360e-9
    params: PhysicalParams = field(default_factory=PhysicalParams)
    settings: ControlSettings = field(default_factory=ControlSettings)
    f_min: float = 50e3
    f_max: float = 22e9
    n_components: int = 1000
    alpha_semantics: str = "rms"

    def __post_init__(self):
        object.__setattr__(self, "geometries", tuple(parse_kind(g).value for g in self.geometries))
        object.__setattr__(self, "gates", tuple(parse_gate(g).value for g in self.gates))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "parallelism", tuple(int(p) for p in self.parallelism))
        if not self.geometries or not self.gates or not self.alphas or not self.parallelism:
            raise ExperimentError("plan needs at least one geometry, gate, parallelism level and alpha")
        if any(parse_gate(g) is GateId.IDLE for g in self.gates):
            raise ExperimentError("Idle is not a swept gate")
        if any(a < 0 or not np.isfinite(a) for a in self.alphas):
            raise ExperimentError("alpha grid must be finite and non-negative")
        if list(self.alphas) != sorted(self.alphas) or len(set(self.alphas)) != len(self.alphas):
            raise ExperimentError("alpha grid must be strictly increasing")
        if any(p not in (1, 2, 3, 4) for p in self.parallelism):
            raise ExperimentError("parallelism levels must lie in 1..4")
        if int(self.n_instances) != self.n_instances or self.n_instances < 1:
            raise ExperimentError("n_instances must be an integer >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ExperimentError("seed must be a non-negative integer")
        if not self.dt > 0:
            raise ExperimentError("dt must be positive")
        if self.alpha_semantics not in ALPHA_SEMANTICS:
            raise ExperimentError(f"alpha_semantics must be one of {ALPHA_SEMANTICS}")
        # bias levels are stored explicitly (V/m) so the plan text pins them
        object.__setattr__(self, "settings", replace(self.settings.resolved(self.params), dt=self.dt))
        # validates the band eagerly
        self.noise_spec(0.0)

    def noise_spec(self, alpha: float) -> NoiseSpec:
        return NoiseSpec(alpha, self.f_min, self.f_max, self.n_components, self.seed, self.alpha_semantics)

    def cells(self) -> list[tuple[str, str, Configuration]]:
        """``(geometry, gate, configuration)`` in canonical order."""
        out = []
        for kind in self.geometries:
            geo = build_geometry(kind, self.r0)
            for gate in self.gates:
                op = _op_kind(parse_gate(gate))
                for level in self.parallelism:
                    if level in _LEVELS[op]:
                        out.extend((kind, gate, c) for c in enumerate_configurations(geo, op, level))
        return out

    def to_mapping(self) -> dict[str, str]:
        s = self.settings
        m = {
            "geometries": ",".join(self.geometries),
            "gates": ",".join(self.gates),
            "parallelism": ",".join(str(p) for p in self.parallelism),
            "alpha_V_per_m": ",".join(repr(a) for a in self.alphas),
            "n_instances": str(self.n_instances),
            "seed": str(self.seed),
            "dt_s": repr(self.dt),
            "r0_m": repr(self.r0),
            "f_min_Hz": repr(self.f_min),
            "f_max_Hz": repr(self.f_max),
            "n_components": str(self.n_components),
            "alpha_semantics": self.alpha_semantics,
            "dEz_idle_V_per_m": repr(s.dEz_idle),
            "rz_level_V_per_m": repr(s.rz_level),
            "Eac_rx_V_per_m": repr(s.Eac_rx),
            "ramp_fraction": repr(s.ramp_fraction),
        }
        for key, (name, mult) in PARAM_FILE_KEYS.items():
            m[key] = repr(getattr(self.params, name) / mult)
        return m

    def to_text(self) -> str:
        return format_kv(self.to_mapping())

    def fingerprint(self) -> str:
        payload = f"ffarray {__version__}\n" + self.to_text()
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


PLAN_KEYS = {
    "geometries", "gates", "parallelism", "alpha_V_per_m", "n_instances", "seed", "dt_s", "r0_m",
    "f_min_Hz", "f_max_Hz", "n_components", "alpha_semantics", "dEz_idle_V_per_m", "rz_level_V_per_m",
    "Eac_rx_V_per_m", "ramp_fraction", *PARAM_FILE_KEYS,
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def plan_from_mapping(mapping: Mapping[str, str], base: ExperimentPlan | None = None) -> ExperimentPlan:
    """Apply unit-suffixed overrides to ``base``; unknown keys raise ``ExperimentError``."""
    base = base or ExperimentPlan()
    unknown = set(mapping) - PLAN_KEYS
    if unknown:
        raise ExperimentError(f"unknown plan keys: {', '.join(sorted(unknown))}")
    m = dict(mapping)
    try:
        params = params_from_mapping({k: m[k] for k in PARAM_FILE_KEYS if k in m}, base.params)
        settings = base.settings
        for key, name in (("dEz_idle_V_per_m", "dEz_idle"), ("rz_level_V_per_m", "rz_level"),
                          ("Eac_rx_V_per_m", "Eac_rx"), ("ramp_fraction", "ramp_fraction")):
            if key in m:
                settings = replace(settings, **{name: float(m[key])})
        kw = dict(params=params, settings=settings)
        if "geometries" in m:
            kw["geometries"] = tuple(x.strip() for x in m["geometries"].split(",") if x.strip())
        if "gates" in m:
            kw["gates"] = tuple(x.strip() for x in m["gates"].split(",") if x.strip())
        if "parallelism" in m:
            kw["parallelism"] = tuple(int(x) for x in m["parallelism"].split(",") if x.strip())
        if "alpha_V_per_m" in m:
            kw["alphas"] = _floats(m["alpha_V_per_m"])
        for key, name in (("n_instances", "n_instances"), ("seed", "seed"), ("n_components", "n_components")):
            if key in m:
                kw[name] = int(m[key])
        for key, name, mult in (("dt_s", "dt", 1.0), ("r0_m", "r0", 1.0),
                                ("f_min_Hz", "f_min", 1.0), ("f_max_Hz", "f_max", 1.0)):
            if key in m:
                kw[name] = float(m[key]) * mult
        if "alpha_semantics" in m:
            kw["alpha_semantics"] = m["alpha_semantics"]
        return replace(base, **kw)
    except ExperimentError:
        raise
    except (ValueError, TypeError) as exc:
        raise ExperimentError(f"invalid plan value: {exc}") from None


PROFILES = {
    "fast": dict(n_instances=20, alphas=(0.0, 25.0, 50.0, 75.0, 100.0)),
    "default": dict(n_instances=100, alphas=tuple(float(a) for a in range(0, 101, 10))),
}


def profile_plan(name: str = "default", **overrides) -> ExperimentPlan:
    if name not in PROFILES:
        raise ExperimentError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return ExperimentPlan(**{**PROFILES[name], **overrides})


# ---------------------------------------------------------------------------
# cells


def calibrate_plan(plan: ExperimentPlan) -> dict[str, CalibrationResult]:
    cal = Calibrator(plan.params, plan.settings, plan.r0)
    return {g: cal.calibrate(g) for g in plan.gates}


def cell_schedule(geometry: ArrayGeometry, configuration: Configuration, gate, cal: CalibrationResult):
    gate = parse_gate(gate)
    if gate is GateId.SQRT_ISWAP:
        if configuration.op_kind is not OpKind.TWO_QUBIT:
            raise ExperimentError(f"√iSWAP needs a two-qubit configuration, got {configuration.label}")
        return schedule_sqrt_iswap(cal, configuration.operated, geometry.n, geometry)
    if configuration.op_kind is not OpKind.ONE_QUBIT:
        raise ExperimentError(f"{gate.value} needs a one-qubit configuration, got {configuration.label}")
    return schedule_parallel({q: cal for q in configuration.operated_qubits}, geometry.n)


def cell_samples(
    geometry: ArrayGeometry,
    configuration: Configuration,
    gate,
    alpha: float,
    n_instances: int,
    cal: CalibrationResult,
    noise_template: NoiseSpec,
    params: PhysicalParams,
    dt: float = DEFAULT_DT,
) -> tuple[np.ndarray, float]:
    """Per-instance infidelities and the worst unitarity error."""
    sched = cell_schedule(geometry, configuration, gate, cal)
    target = target_unitary(configuration, gate, geometry.n)
    grid = TimeGrid(0.0, sched.duration, dt)
    spec = noise_template.with_alpha(alpha)
    worst = 0.0

    def one(noise):
        nonlocal worst
        u = propagate(geometry, sched, noise, grid, params)
        err = unitarity_error(u)
        worst = max(worst, err)
        if err > UNITARITY_TOL:
            raise ExperimentError(f"unitarity error {err:.2e} exceeds {UNITARITY_TOL:g}")
        return 1.0 - entanglement_fidelity(u, target)

    if spec.rms == 0:
        # every instance is the same noiseless run
        return np.full(n_instances, one(None)), worst
    grid.check(spec)
    out = np.empty(n_instances)
    for k in range(n_instances):
        noise = [make_process(spec, (q, k)) for q in range(geometry.n)]
        out[k] = one(noise)
    return out, worst


def run_cell(
    geometry: ArrayGeometry,
    configuration: Configuration,
    gate_id,
    alpha: float,
    n_instances: int,
    seed: int,
    calibration: CalibrationResult | None = None,
    params: PhysicalParams | None = None,
    dt: float = DEFAULT_DT,
    noise_template: NoiseSpec | None = None,
) -> FidelityRecord:
    """Mean infidelity of one cell over ``n_instances`` noise realisations."""
    params = params or PhysicalParams()
    gate = parse_gate(gate_id)
    if calibration is None:
        calibration = Calibrator(params, ControlSettings(dt=dt), geometry.r0).calibrate(gate)
    template = replace(noise_template or NoiseSpec(), seed=int(seed))
    samples, _ = cell_samples(geometry, configuration, gate, alpha, n_instances, calibration, template, params, dt)
    return aggregate(1.0 - samples, configuration.label, gate.value, alpha)


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class CellRecord:
    geometry: str
    parallelism: int
    record: FidelityRecord


@dataclass
class ResultTable:
    records: list[CellRecord]
    fingerprint: str
    manifest: dict
    samples: dict = field(default_factory=dict, repr=False)
    errors: list[str] = field(default_factory=list)

    def geometries(self) -> list[str]:
        return list(dict.fromkeys(r.geometry for r in self.records))

    def for_geometry(self, geometry: str) -> list[FidelityRecord]:
        return [r.record for r in self.records if r.geometry == geometry]

    def csv_text(self, geometry: str) -> str:
        rows = [CSV_HEADER] + [r.to_csv_row() for r in self.for_geometry(geometry)]
        return "\n".join(rows) + "\n"

    def lookup(self, geometry: str, config: str, gate: str, alpha: float) -> FidelityRecord:
        for r in self.records:
            rec = r.record
            if r.geometry == geometry and rec.config == config and rec.gate == gate and rec.alpha == alpha:
                return rec
        raise KeyError((geometry, config, gate, alpha))

    def manifest_text(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True) + "\n"


def read_csv(text: str) -> list[FidelityRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ExperimentError("not a result table: header mismatch")
    return [FidelityRecord.from_csv_row(ln) for ln in lines[1:]]


# worker state, set once per process
_STATE: dict = {}


def _init_worker(plan: ExperimentPlan, cals: dict[str, CalibrationResult]):
    _STATE["plan"] = plan
    _STATE["cals"] = cals


def _run_task(task):
    kind, gate, label = task
    plan: ExperimentPlan = _STATE["plan"]
    cal = _STATE["cals"][gate]
    geo = build_geometry(kind, plan.r0)
    config = parse_label(label, _op_kind(parse_gate(gate)), geo.n)
    template = plan.noise_spec(0.0)
    out = []
    worst = 0.0
    try:
        for alpha in plan.alphas:
            samples, err = cell_samples(geo, config, gate, alpha, plan.n_instances, cal, template, plan.params, plan.dt)
            worst = max(worst, err)
            out.append(samples)
    except Exception as exc:  # reported with cell identification by the caller
        return task, None, worst, f"{type(exc).__name__}: {exc}"
    return task, out, worst, None


def run_plan(
    plan: ExperimentPlan,
    workers: int | None = None,
    keep_going: bool = False,
    calibrations: Mapping[str, CalibrationResult] | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> ResultTable:
    """Run every cell of ``plan``; records come out in canonical cell order."""
    start = time.time()
    cals = dict(calibrations) if calibrations is not None else calibrate_plan(plan)
    missing = [g for g in plan.gates if g not in cals]
    if missing:
        raise ExperimentError(f"missing calibrations for {missing}")
    cells = plan.cells()
    tasks = [(kind, gate, c.label) for kind, gate, c in cells]
    levels = {(kind, gate, c.label): c.parallelism for kind, gate, c in cells}
    workers = max(1, int(workers or os.cpu_count() or 1))
    results = {}
    if workers == 1 or len(tasks) <= 1:
        _init_worker(plan, cals)
        iterator = map(_run_task, tasks)
        pool = None
    else:
        ctx = multiprocessing.get_context("fork" if "fork" in multiprocessing.get_all_start_methods() else "spawn")
        pool = ctx.Pool(min(workers, len(tasks)), initializer=_init_worker, initargs=(plan, cals))
        iterator = pool.imap(_run_task, tasks)
    try:
        for i, (task, samples, worst, error) in enumerate(iterator):
            results[task] = (samples, worst, error)
            if error is not None and not keep_going:
                raise CellError("/".join(task), error)
            if progress is not None:
                progress(i + 1, len(tasks))
    finally:
        if pool is not None:
            pool.terminate()
            pool.join()

    records, store, errors = [], {}, []
    worst = 0.0
    for task in tasks:
        samples, w, error = results[task]
        worst = max(worst, w)
        if error is not None:
            errors.append(f"{'/'.join(task)}: {error}")
            continue
        kind, gate, label = task
        for alpha, s in zip(plan.alphas, samples):
            rec = aggregate(1.0 - s, label, gate, alpha)
            records.append(CellRecord(kind, levels[task], rec))
            store[(kind, label, gate, alpha)] = s
    manifest = {
        "plan": plan.to_mapping(),
        "fingerprint": plan.fingerprint(),
        "versions": {
            "ffarray": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "n_cells": len(tasks),
        "n_records": len(records),
        "workers": workers,
        "wall_time_s": round(time.time() - start, 3),
        "max_unitarity_error": worst,
        "calibration": {g: {"duration_s": c.duration, "residual": c.residual} for g, c in cals.items()},
        "errors": errors,
    }
    return ResultTable(records, plan.fingerprint(), manifest, store, errors)


def parallelism_summary(table: ResultTable) -> dict[tuple[str, str, float], dict[int, float]]:
    """Unweighted mean over configurations for each (geometry, gate, α) and parallelism."""
    acc: dict[tuple[str, str, float], dict[int, list[float]]] = {}
    for r in table.records:
        key = (r.geometry, r.record.gate, r.record.alpha)
        acc.setdefault(key, {}).setdefault(r.parallelism, []).append(r.record.mean_infidelity)
    return {k: {p: float(np.mean(v)) for p, v in sorted(d.items())} for k, d in acc.items()}
