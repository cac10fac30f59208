"""Control schedules for Rz(−π/2), Rx(−π/2), √iSWAP and idle, and their calibration.

Every qubit rests at the idle bias ``dEz_idle`` (donor side of the ionization
point by default).  The logical frame of all qubits rotates at the idle
splitting, so an idle qubit is the identity.  Gates:

* ``Rz``  -- DC excursion to ``rz_level``; the extra precession relative to
  the idle frame is tuned to −1/4 cycle (3/4 cycle when the excursion raises
  the frequency), i.e. Rz(−π/2) up to global phase.
* ``Rx``  -- DC excursion to the ionization point (ΔE_z = 0) and a resonant
  flat-top AC burst at the isolated-qubit EDSR frequency.
* ``SqrtISwap`` -- both qubits moved to ΔE_z = 0, where the exchange is
  strongest, for a calibrated interaction time.

DC excursions and the AC envelope use raised-cosine edges of
``ramp_fraction`` of the gate duration.  Deterministic ramp phases of Rx
and √iSWAP are removed by virtual Z rotations stored in the channel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .hamiltonian import (
    Couplings,
    dipole_coupling,
    ff_splitting,
    field_per_vt,
    rabi_rate,
)
from .model import PhysicalParams

DEFAULT_DT = 10e-12


class GateId(str, enum.Enum):
    RZ = "Rz"
    RX = "Rx"
    SQRT_ISWAP = "SqrtISwap"
    IDLE = "Idle"


def parse_gate(gate) -> GateId:
    if isinstance(gate, GateId):
        return gate
    aliases = {"rz": GateId.RZ, "rx": GateId.RX, "sqrtiswap": GateId.SQRT_ISWAP,
               "sqrt_iswap": GateId.SQRT_ISWAP, "siswap": GateId.SQRT_ISWAP, "idle": GateId.IDLE}
    try:
        return aliases[str(gate).lower()]
    except KeyError:
        raise PulseError(f"unknown gate {gate!r}") from None


class PulseError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


# default biases in units of the field at which ε_o equals Vt
IDLE_VT = -1.5
RZ_LEVEL_VT = 1.2


@dataclass(frozen=True)
class ControlSettings:
    """Operating points and shapes shared by all schedules (fields in V/m, times in s).

    ``dEz_idle`` and ``rz_level`` default to :data:`IDLE_VT` and
    :data:`RZ_LEVEL_VT` times :func:`field_per_vt` when left as ``None``.
    """

    dEz_idle: float | None = None
    rz_level: float | None = None
    Eac_rx: float = 5500.0
    ramp_fraction: float = 0.05
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.Eac_rx > 0:
            raise PulseError("Eac_rx must be positive")
        if not 0 <= self.ramp_fraction < 0.5:
            raise PulseError("ramp_fraction must lie in [0, 0.5)")
        if not self.dt > 0:
            raise PulseError("dt must be positive")

    def resolved(self, params: PhysicalParams) -> "ControlSettings":
        vt_field = field_per_vt(params)
        idle = IDLE_VT * vt_field if self.dEz_idle is None else self.dEz_idle
        rz = RZ_LEVEL_VT * vt_field if self.rz_level is None else self.rz_level
        return replace(self, dEz_idle=float(idle), rz_level=float(rz))


@dataclass(frozen=True)
class FlatTop:
    """``amplitude`` between ``t_on`` and ``t_off`` with raised-cosine edges of ``rise``."""

    t_on: float
    t_off: float
    rise: float
    amplitude: float

    def __post_init__(self):
        if self.t_off < self.t_on or self.rise < 0 or 2 * self.rise > self.t_off - self.t_on + 1e-18:
            raise PulseError(f"inconsistent flat-top timing {self}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        if self.amplitude == 0 or self.t_off == self.t_on:
            return out
        if self.rise == 0:
            out[(t >= self.t_on) & (t < self.t_off)] = 1.0
        else:
            up = (t - self.t_on) / self.rise
            down = (self.t_off - t) / self.rise
            s = np.minimum(np.clip(up, 0, 1), np.clip(down, 0, 1))
            out = 0.5 * (1 - np.cos(np.pi * s))
        return self.amplitude * out

    def shifted(self, dt: float) -> "FlatTop":
        return replace(self, t_on=self.t_on + dt, t_off=self.t_off + dt)

    def corners(self) -> tuple[float, ...]:
        """Times where the envelope is not smooth."""
        if self.amplitude == 0 or self.t_off == self.t_on:
            return ()
        if self.rise == 0:
            return (self.t_on, self.t_off)
        return (self.t_on, self.t_on + self.rise, self.t_off - self.rise, self.t_off)


@dataclass(frozen=True)
class Burst:
    """AC envelope (V/m) with its carrier phase (rad)."""

    envelope: FlatTop
    phase: float = 0.0

    def shifted(self, dt: float, dphase: float = 0.0) -> "Burst":
        return Burst(self.envelope.shifted(dt), self.phase + dphase)


@dataclass(frozen=True)
class Channel:
    """Controls of one qubit: ΔE_z(t) = base + Σ dc pulses, E_ac(t) = Σ bursts.

    ``virtual_z`` (cycles) is a frame update applied after the schedule:
    ``exp(−iπ·virtual_z·σz)``. Bursts must not overlap in time.
    """

    dc_base: float
    dc: tuple[FlatTop, ...] = ()
    ac: tuple[Burst, ...] = ()
    f_drive: float = 0.0
    virtual_z: float = 0.0

    def dEz(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.dc_base))
        for p in self.dc:
            out = out + p(t)
        return out

    def drive(self, t) -> tuple[np.ndarray, np.ndarray]:
        """``(E_ac(t), phase(t))``."""
        t = np.asarray(t, dtype=float)
        amp = np.zeros(t.shape)
        phase = np.zeros(t.shape)
        for b in self.ac:
            e = b.envelope(t)
            amp = amp + e
            phase = np.where(e != 0, b.phase, phase)
        return amp, phase

    def Eac(self, t) -> np.ndarray:
        return self.drive(t)[0]

    @property
    def driven(self) -> bool:
        return any(b.envelope.amplitude != 0 for b in self.ac)

    def corners(self) -> tuple[float, ...]:
        return tuple(t for p in self.dc for t in p.corners()) + tuple(
            t for b in self.ac for t in b.envelope.corners())

    def then(self, other: "Channel", offset: float, frame_phase: float = 0.0) -> "Channel":
        """Append ``other`` (starting at local time 0) after ``offset`` seconds.

        The frame update of ``self`` is carried into the phases of the later
        bursts, so the composite equals applying the two gates in turn.
        ``frame_phase`` (rad) is added to those phases as well; schedules use
        it to keep the bursts referenced to the logical frame.
        """
        if other.dc_base != self.dc_base:
            raise PulseError("sequenced channels must share the rest bias")
        if other.driven and self.driven and other.f_drive != self.f_drive:
            raise PulseError("sequenced drives must share one carrier frequency")
        dphase = -2 * np.pi * self.virtual_z + frame_phase
        return Channel(
            self.dc_base,
            self.dc + tuple(p.shifted(offset) for p in other.dc),
            self.ac + tuple(b.shifted(offset, dphase) for b in other.ac),
            other.f_drive if other.driven else self.f_drive,
            self.virtual_z + other.virtual_z,
        )


@dataclass(frozen=True)
class PulseSchedule:
    """Per-qubit channels (1-based qubit order) over ``[0, duration]``.

    ``f_ref`` is the rotating frame used for integration (the isolated-qubit
    EDSR frequency); ``f_logical`` is the frame in which gates are defined
    (the idle splitting).
    """

    duration: float
    channels: tuple[Channel, ...]
    gate_id: GateId
    f_ref: float
    f_logical: float

    def __post_init__(self):
        if self.duration < 0 or (self.duration == 0 and self.gate_id is not GateId.IDLE):
            raise PulseError("schedule duration must be positive (idle may be zero)")

    @property
    def n(self) -> int:
        return len(self.channels)

    def controls(self, t):
        """``(dEz, Eac)`` sampled at ``t``, each of shape ``(n, len(t))``."""
        t = np.asarray(t, dtype=float)
        dEz = np.stack([c.dEz(t) for c in self.channels])
        Eac = np.stack([c.Eac(t) for c in self.channels])
        return dEz, Eac

    def drives(self, t):
        """``(Eac, phase)`` sampled at ``t``, each of shape ``(n, len(t))``."""
        pairs = [c.drive(t) for c in self.channels]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    @property
    def f_drive(self) -> np.ndarray:
        return np.array([c.f_drive if c.driven else self.f_ref for c in self.channels])

    @property
    def virtual_z(self) -> np.ndarray:
        return np.array([c.virtual_z for c in self.channels])

    @property
    def driven(self) -> bool:
        return any(c.driven for c in self.channels)

    def breakpoints(self) -> np.ndarray:
        """Sorted distinct envelope corners strictly inside ``(0, duration)``."""
        pts = sorted({t for c in self.channels for t in c.corners() if 0 < t < self.duration})
        return np.array(pts, dtype=float)

    def padded(self, duration: float) -> "PulseSchedule":
        """Extend with idle time at the end (channels keep their rest values)."""
        if duration < self.duration:
            raise PulseError("cannot pad to a shorter duration")
        return replace(self, duration=float(duration))

    def then(self, other: "PulseSchedule") -> "PulseSchedule":
        if other.n != self.n or other.f_ref != self.f_ref or other.f_logical != self.f_logical:
            raise PulseError("schedules act on different arrays or frames")
        # the logical frame drifts against the integration frame by (f_ref − f_logical) per second
        drift = -2 * np.pi * (self.f_ref - self.f_logical) * self.duration
        chans = tuple(a.then(b, self.duration, drift) for a, b in zip(self.channels, other.channels))
        gate = self.gate_id if self.gate_id == other.gate_id else GateId.IDLE
        return PulseSchedule(self.duration + other.duration, chans, gate, self.f_ref, self.f_logical)

    def to_text(self, sample_rate: float) -> str:
        """Columns ``t``, then ``dEz_q``, ``Eac_q`` per qubit, sampled at ``sample_rate`` Hz."""
        n = max(2, int(math.floor(self.duration * sample_rate)) + 1)
        t = np.linspace(0.0, self.duration, n)
        dEz, Eac = self.controls(t)
        header = ["t_s"]
        for q in range(1, self.n + 1):
            header += [f"dEz{q}_V_per_m", f"Eac{q}_V_per_m"]
        lines = [
            f"# gate={self.gate_id.value} duration_s={self.duration!r} f_ref_Hz={self.f_ref!r} "
            f"f_logical_Hz={self.f_logical!r}",
            "# " + " ".join(header),
        ]
        for k in range(n):
            row = [t[k]]
            for q in range(self.n):
                row += [dEz[q, k], Eac[q, k]]
            lines.append(" ".join(f"{v:.12e}" for v in row))
        return "\n".join(lines) + "\n"


def read_schedule_text(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse :meth:`PulseSchedule.to_text` back into ``(t, dEz, Eac)``."""
    data = np.loadtxt(text.splitlines(), ndmin=2)
    t = data[:, 0]
    dEz = data[:, 1::2].T
    Eac = data[:, 2::2].T
    return t, dEz, Eac


@dataclass(frozen=True)
class CalibrationResult:
    gate_id: GateId
    duration: float
    amplitude: float
    level: float
    phase: float
    virtual_z: float
    residual: float
    f_ref: float
    f_logical: float
    settings: ControlSettings = field(compare=False)
    seed_duration: float = 0.0


# ---------------------------------------------------------------------------
# single-gate channel templates (local time starting at 0)


def idle_channel(settings: ControlSettings) -> Channel:
    return Channel(dc_base=settings.dEz_idle)


def _dc_excursion(settings: ControlSettings, duration: float, level: float) -> FlatTop:
    return FlatTop(0.0, duration, settings.ramp_fraction * duration, level - settings.dEz_idle)


def rz_channel(settings: ControlSettings, duration: float) -> Channel:
    return Channel(settings.dEz_idle, dc=(_dc_excursion(settings, duration, settings.rz_level),))


def rx_channel(settings: ControlSettings, duration: float, f_drive: float, phase=0.0, vz=0.0,
               amplitude: float | None = None) -> Channel:
    r = settings.ramp_fraction * duration
    amp = settings.Eac_rx if amplitude is None else amplitude
    burst = Burst(FlatTop(r, duration - r, r, amp), phase)
    return Channel(settings.dEz_idle, dc=(_dc_excursion(settings, duration, 0.0),), ac=(burst,),
                   f_drive=f_drive, virtual_z=vz)


def swap_channel(settings: ControlSettings, duration: float, vz=0.0) -> Channel:
    return Channel(settings.dEz_idle, dc=(_dc_excursion(settings, duration, 0.0),), virtual_z=vz)


# ---------------------------------------------------------------------------
# ideal gates (qubit-ordered matrices)

RZ_TARGET = np.diag([np.exp(1j * np.pi / 4), np.exp(-1j * np.pi / 4)])
RX_TARGET = np.array([[1, 1j], [1j, 1]], dtype=complex) / np.sqrt(2)
SQRT_ISWAP_TARGET = np.array(
    [[1, 0, 0, 0], [0, 1 / np.sqrt(2), 1j / np.sqrt(2), 0], [0, 1j / np.sqrt(2), 1 / np.sqrt(2), 0], [0, 0, 0, 1]],
    dtype=complex,
)


def ideal_gate(gate) -> np.ndarray:
    gate = parse_gate(gate)
    return {GateId.RZ: RZ_TARGET, GateId.RX: RX_TARGET, GateId.SQRT_ISWAP: SQRT_ISWAP_TARGET,
            GateId.IDLE: np.eye(2, dtype=complex)}[gate]


def _fidelity(u, target):
    d = u.shape[0]
    return min(1.0, float(abs(np.trace(target.conj().T @ u)) ** 2 / d**2))


def zc(x):
    """``exp(−iπ x σz)`` for a phase ``x`` in cycles."""
    return np.diag([np.exp(-1j * np.pi * x), np.exp(1j * np.pi * x)])


# ---------------------------------------------------------------------------
# calibration


class Calibrator:
    """Calibrates gates on an isolated qubit (or r0 pair) at zero noise.

    Results are cached per gate; once written a cache entry is only read.
    """

    def __init__(self, params: PhysicalParams | None = None, settings: ControlSettings | None = None,
                 r0: float = 360e-9, tol: float = 1e-10):
        self.params = params or PhysicalParams()
        self.settings = (settings or ControlSettings()).resolved(self.params)
        self.r0 = r0
        self.tol = tol
        self.f_ref = float(ff_splitting(0.0, self.params))
        self.f_logical = float(ff_splitting(self.settings.dEz_idle, self.params))
        self._cache: dict[GateId, CalibrationResult] = {}

    # -- isolated propagation -------------------------------------------------
    def _propagate(self, channels: Sequence[Channel], duration: float, couplings: Couplings):
        from .propagation import propagate_channels

        sched = PulseSchedule(duration, tuple(channels), GateId.IDLE, self.f_ref, self.f_logical)
        return propagate_channels(sched, couplings, self.params, dt=self.settings.dt)

    def _pair_couplings(self) -> Couplings:
        return Couplings(((1, 2),), (self.r0,))

    # -- per gate ----------------------------------------------------------------
    def _golden(self, objective, seed: float, gate: GateId, lo=0.5, hi=2.0):
        grid = np.linspace(lo * seed, hi * seed, 31)
        vals = [objective(x) for x in grid]
        k = int(np.argmin(vals))
        if k == 0 or k == len(grid) - 1:
            raise CalibrationError(f"{gate.value}: could not bracket a minimum around {seed!r} s")
        res = optimize.minimize_scalar(objective, bracket=(grid[k - 1], grid[k], grid[k + 1]),
                                       method="golden", tol=self.tol)
        if not getattr(res, "success", True):
            raise CalibrationError(f"{gate.value}: golden-section search failed")
        return float(res.x)

    def _calibrate_rz(self) -> CalibrationResult:
        s = self.settings
        detuning = float(ff_splitting(s.rz_level, self.params)) - self.f_logical
        if detuning == 0:
            raise CalibrationError("Rz excursion level equals the idle bias")
        # Rz(−π/2) is 3/4 cycle above the idle frequency or 1/4 cycle below it
        seed = 0.75 / detuning if detuning > 0 else 0.25 / -detuning

        def infidelity(T):
            u = self._propagate([rz_channel(s, T)], T, Couplings.none())
            return 1.0 - _fidelity(u, RZ_TARGET)

        T = self._golden(infidelity, seed, GateId.RZ, lo=0.6, hi=1.8)
        return CalibrationResult(GateId.RZ, T, 0.0, s.rz_level, 0.0, 0.0, infidelity(T),
                                 self.f_ref, self.f_logical, s, seed)

    def _rx_euler(self, T):
        s = self.settings
        u = self._propagate([rx_channel(s, T, self.f_ref)], T, Couplings.none())
        u = u / np.sqrt(np.linalg.det(u))
        a, b = u[0, 0], u[0, 1]
        theta = 2 * math.atan2(abs(b), abs(a))
        # u = zc(c) · exp(−iθσx/2) · zc(b)
        s_plus = -np.angle(a) / np.pi
        s_minus = (-np.angle(b) - np.pi / 2) / np.pi
        return theta, 0.5 * (s_plus - s_minus), 0.5 * (s_plus + s_minus)

    def _calibrate_rx(self) -> CalibrationResult:
        s = self.settings
        omega = float(rabi_rate(0.0, s.Eac_rx, self.params))
        if omega <= 0:
            raise CalibrationError("Rx drive amplitude must be positive")
        seed = 1.0 / (4.0 * omega)

        def infidelity_theta(T):
            theta, _, _ = self._rx_euler(T)
            return 1.0 - math.cos((theta - math.pi / 2) / 2) ** 2

        T = self._golden(infidelity_theta, seed, GateId.RX, lo=0.8, hi=2.0)
        _, zb, zc_ = self._rx_euler(T)
        phase = float(np.mod(2 * np.pi * (zb + 0.5), 2 * np.pi))
        vz = float(-(zb + zc_))
        chan = rx_channel(s, T, self.f_ref, phase=phase, vz=vz)
        u = self._propagate([chan], T, Couplings.none())
        u = zc(vz) @ u
        residual = 1.0 - _fidelity(u, RX_TARGET)
        return CalibrationResult(GateId.RX, T, s.Eac_rx, 0.0, phase, vz, residual,
                                 self.f_ref, self.f_logical, s, seed)

    def _swap_unitary(self, T):
        s = self.settings
        u = self._propagate([swap_channel(s, T), swap_channel(s, T)], T, self._pair_couplings())
        a = (np.angle(u[3, 3]) - np.angle(u[0, 0])) / (4 * np.pi)
        vz = -a
        corr = np.kron(zc(vz), zc(vz))
        return corr @ u, vz

    def _calibrate_swap(self) -> CalibrationResult:
        g = float(dipole_coupling(0.0, 0.0, self.r0, self.params))
        seed = 1.0 / (8.0 * g)

        def infidelity(T):
            u, _ = self._swap_unitary(T)
            return 1.0 - _fidelity(u, SQRT_ISWAP_TARGET)

        T = self._golden(infidelity, seed, GateId.SQRT_ISWAP, lo=0.8, hi=1.6)
        u, vz = self._swap_unitary(T)
        residual = 1.0 - _fidelity(u, SQRT_ISWAP_TARGET)
        return CalibrationResult(GateId.SQRT_ISWAP, T, 0.0, 0.0, 0.0, float(vz), residual,
                                 self.f_ref, self.f_logical, self.settings, seed)

    def calibrate(self, gate) -> CalibrationResult:
        gate = parse_gate(gate)
        if gate in self._cache:
            return self._cache[gate]
        if gate is GateId.RZ:
            res = self._calibrate_rz()
        elif gate is GateId.RX:
            res = self._calibrate_rx()
        elif gate is GateId.SQRT_ISWAP:
            res = self._calibrate_swap()
        else:
            raise PulseError("idle needs no calibration")
        self._cache[gate] = res
        return res

    def load(self, result: CalibrationResult) -> None:
        self._cache.setdefault(result.gate_id, result)

    @property
    def results(self) -> Mapping[GateId, CalibrationResult]:
        return dict(self._cache)


def calibrate(gate, params: PhysicalParams | None = None, settings: ControlSettings | None = None,
              r0: float = 360e-9) -> CalibrationResult:
    return Calibrator(params, settings, r0).calibrate(gate)


# ---------------------------------------------------------------------------
# array schedules


def _require(cal: CalibrationResult | None, gate: GateId) -> CalibrationResult:
    if cal is None or cal.gate_id is not gate:
        raise PulseError(f"{gate.value} requested without a matching calibration")
    return cal


def gate_channel(cal: CalibrationResult) -> Channel:
    s = cal.settings
    if cal.gate_id is GateId.RZ:
        return rz_channel(s, cal.duration)
    if cal.gate_id is GateId.RX:
        return rx_channel(s, cal.duration, cal.f_ref, phase=cal.phase, vz=cal.virtual_z, amplitude=cal.amplitude)
    if cal.gate_id is GateId.SQRT_ISWAP:
        return swap_channel(s, cal.duration, vz=cal.virtual_z)
    raise PulseError("no channel for idle")


def schedule_idle(cal_or_settings, n: int, duration: float, f_ref: float, f_logical: float) -> PulseSchedule:
    settings = cal_or_settings.settings if isinstance(cal_or_settings, CalibrationResult) else cal_or_settings
    return PulseSchedule(duration, tuple(idle_channel(settings) for _ in range(n)), GateId.IDLE, f_ref, f_logical)


def schedule_parallel(targets: Mapping[int, CalibrationResult], n: int = 4) -> PulseSchedule:
    """Merge single-qubit gate channels; untouched qubits idle.

    All parallel gates start together; the schedule lasts as long as the
    longest gate, shorter channels simply rest at the idle bias afterwards.
    """
    if not targets:
        raise PulseError("no operated qubits")
    cals = list(targets.values())
    f_ref, f_logical = cals[0].f_ref, cals[0].f_logical
    settings = cals[0].settings
    chans = []
    for q in range(1, n + 1):
        chans.append(gate_channel(targets[q]) if q in targets else idle_channel(settings))
    duration = max(c.duration for c in cals)
    gates = {c.gate_id for c in cals}
    gate = gates.pop() if len(gates) == 1 else GateId.IDLE
    return PulseSchedule(duration, tuple(chans), gate, f_ref, f_logical)


def schedule_rz(cal: CalibrationResult, qubits: Sequence[int] = (1,), n: int = 4) -> PulseSchedule:
    cal = _require(cal, GateId.RZ)
    return schedule_parallel({q: cal for q in qubits}, n)


def schedule_rx(cal: CalibrationResult, qubits: Sequence[int] = (1,), n: int = 4) -> PulseSchedule:
    cal = _require(cal, GateId.RX)
    return schedule_parallel({q: cal for q in qubits}, n)


def schedule_sqrt_iswap(cal: CalibrationResult, pairs: Sequence[tuple[int, int]] = ((1, 2),), n: int = 4,
                        geometry=None) -> PulseSchedule:
    cal = _require(cal, GateId.SQRT_ISWAP)
    if geometry is not None:
        for i, j in pairs:
            if not geometry.is_r0_pair(i, j):
                raise PulseError(f"pair ({i},{j}) is not at distance r0")
    return schedule_parallel({q: cal for pair in pairs for q in pair}, n)
