"""1/f charge-noise synthesis on the DC field difference ΔE_z.

A realisation is a sum of ``n_components`` sinusoids at log-spaced
frequencies with independent uniform phases.  Equal weight per logarithmic
band gives a power spectral density proportional to 1/f between ``f_min``
and ``f_max``.  Amplitudes are deterministic, so only the phases are random
and the variance of every realisation is exactly the target.

Streams are keyed by an integer tuple (typically ``(qubit, instance)``)
through :class:`numpy.random.SeedSequence`, so traces do not depend on the
order in which they are generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import signal

ALPHA_SEMANTICS = ("rms", "psd_prefactor")

# grid rows evaluated per block in the fast uniform-grid path
_BLOCK = 256


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Band-limited 1/f noise on ΔE_z.

    ``alpha`` is in V/m.  With ``alpha_semantics="rms"`` it is the standard
    deviation of the process; with ``"psd_prefactor"`` the one-sided density
    is ``alpha**2 / f`` ((V/m)^2/Hz).
    """

    alpha: float = 0.0
    f_min: float = 50e3
    f_max: float = 22e9
    n_components: int = 1000
    seed: int = 0
    alpha_semantics: str = "rms"

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise NoiseError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not 0 < self.f_min < self.f_max:
            raise NoiseError(f"need 0 < f_min < f_max, got {self.f_min!r}, {self.f_max!r}")
        if int(self.n_components) != self.n_components or self.n_components < 2:
            raise NoiseError("n_components must be an integer >= 2")
        if self.alpha_semantics not in ALPHA_SEMANTICS:
            raise NoiseError(f"alpha_semantics must be one of {ALPHA_SEMANTICS}")

    @property
    def rms(self) -> float:
        if self.alpha_semantics == "rms":
            return self.alpha
        return self.alpha * math.sqrt(math.log(self.f_max / self.f_min))

    def with_alpha(self, alpha: float) -> "NoiseSpec":
        return NoiseSpec(alpha, self.f_min, self.f_max, self.n_components, self.seed, self.alpha_semantics)


@lru_cache(maxsize=32)
def _band(f_min: float, f_max: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Line frequencies (log-band centres) and normalised weights w_k / W."""
    edges = np.log(f_min) + np.log(f_max / f_min) * np.arange(n + 1) / n
    freqs = np.exp(0.5 * (edges[:-1] + edges[1:]))
    w = np.diff(edges)
    freqs.setflags(write=False)
    weights = w / w.sum()
    weights.setflags(write=False)
    return freqs, weights


def stream_rng(seed: int, stream_id: Sequence[int]) -> np.random.Generator:
    key = tuple(int(s) for s in stream_id)
    if any(s < 0 for s in key):
        raise NoiseError(f"stream ids must be non-negative, got {key}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass(frozen=True)
class NoiseProcess:
    """A fixed sum of sinusoids, evaluable at arbitrary times."""

    freqs: np.ndarray
    amps: np.ndarray
    phases: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not np.any(self.amps)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        out = np.zeros(flat.shape)
        if not self.is_zero:
            for start in range(0, flat.size, 1024):
                chunk = flat[start:start + 1024]
                arg = 2 * np.pi * np.outer(chunk, self.freqs) + self.phases
                out[start:start + 1024] = np.cos(arg) @ self.amps
        return out.reshape(t.shape)

    def on_grid(self, t0: float, dt: float, n: int) -> np.ndarray:
        """Samples at ``t0 + k*dt``, ``k = 0..n-1``."""
        if self.is_zero:
            return np.zeros(n)
        return evaluate_grid([self], t0, dt, n)[0]


@lru_cache(maxsize=8)
def _power_table(freqs_key: bytes, dt: float, block: int) -> np.ndarray:
    freqs = np.frombuffer(freqs_key)
    return np.exp(2j * np.pi * np.outer(np.arange(block) * dt, freqs))


def evaluate_grid(processes: Sequence[NoiseProcess], t0: float, dt: float, n: int) -> np.ndarray:
    """Evaluate processes sharing one frequency set on a uniform grid.

    Returns an array of shape ``(len(processes), n)``. Each block of grid
    points is one complex matrix product against a cached table of
    ``exp(2πi f m dt)``.
    """
    if not processes:
        return np.zeros((0, n))
    freqs = processes[0].freqs
    for p in processes[1:]:
        if p.freqs is not freqs and not np.array_equal(p.freqs, freqs):
            raise NoiseError("evaluate_grid needs processes with identical frequencies")
    z = np.stack([p.amps * np.exp(1j * p.phases) for p in processes], axis=1)
    table = _power_table(np.ascontiguousarray(freqs, dtype=float).tobytes(), float(dt), _BLOCK)
    out = np.empty((len(processes), n))
    for start in range(0, n, _BLOCK):
        m = min(_BLOCK, n - start)
        offset = np.exp(2j * np.pi * freqs * (t0 + start * dt))[:, None]
        out[:, start:start + m] = (table[:m] @ (z * offset)).real.T
    return out


def make_process(spec: NoiseSpec, stream_id: Sequence[int]) -> NoiseProcess:
    freqs, weights = _band(float(spec.f_min), float(spec.f_max), int(spec.n_components))
    phases = stream_rng(spec.seed, stream_id).uniform(0.0, 2 * np.pi, size=freqs.size)
    amps = spec.rms * np.sqrt(2.0 * weights)
    return NoiseProcess(freqs, amps, phases)


@dataclass(frozen=True)
class NoiseTrace:
    """Uniformly sampled ΔE_z perturbation in V/m, starting at ``t0``."""

    dt: float
    samples: np.ndarray
    t0: float = 0.0
    process: NoiseProcess | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.samples) < 2:
            raise NoiseError("a trace needs at least two samples")
        if not np.all(np.isfinite(self.samples)):
            raise NoiseError("trace contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.dt * (len(self.samples) - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    def to_text(self) -> str:
        """Two columns: time in seconds, ΔE_z in V/m."""
        rows = ["# t_seconds dEz_V_per_m"]
        rows += [f"{t:.12e} {x:.12e}" for t, x in zip(self.times, self.samples)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseTrace":
        data = np.loadtxt(text.splitlines(), ndmin=2)
        t, x = data[:, 0], data[:, 1]
        return cls(dt=float(t[1] - t[0]), samples=x, t0=float(t[0]))


def _check_grid(spec: NoiseSpec, duration: float, dt: float) -> int:
    if not dt > 0:
        raise NoiseError("dt must be positive")
    if dt > 1.0 / (2.0 * spec.f_max) * (1 + 1e-12):
        raise NoiseError(f"dt={dt!r} s cannot resolve f_max={spec.f_max!r} Hz (need dt <= 1/(2 f_max))")
    if not duration > 0 or duration < dt * (1 - 1e-12):
        raise NoiseError("duration must be positive and at least one time step")
    return int(math.floor(duration / dt * (1 + 1e-12))) + 1


def synthesize(spec: NoiseSpec, duration: float, dt: float, stream_id: Sequence[int]) -> NoiseTrace:
    """Sample one noise realisation on ``0, dt, ..., <= duration``."""
    n = _check_grid(spec, duration, dt)
    process = make_process(spec, stream_id)
    return NoiseTrace(dt=dt, samples=process.on_grid(0.0, dt, n), process=process)


def synthesize_many(spec: NoiseSpec, duration: float, dt: float, stream_ids) -> list[NoiseTrace]:
    n = _check_grid(spec, duration, dt)
    procs = [make_process(spec, sid) for sid in stream_ids]
    if spec.rms == 0:
        data = np.zeros((len(procs), n))
    else:
        data = evaluate_grid(procs, 0.0, dt, n)
    return [NoiseTrace(dt=dt, samples=row, process=p) for row, p in zip(data, procs)]


def psd_estimate(trace: NoiseTrace | np.ndarray, dt: float | None = None, window: str = "boxcar"):
    """One-sided periodogram ``(frequencies, density)`` of a trace (mean removed).

    With the default rectangular window ``sum(density) * df`` equals the
    sample variance.
    """
    if isinstance(trace, NoiseTrace):
        x, dt = np.asarray(trace.samples), trace.dt
    else:
        x = np.asarray(trace, dtype=float)
        if dt is None:
            raise NoiseError("dt is required for raw sample arrays")
    if x.shape[-1] < 16:
        raise NoiseError("need at least 16 samples for a periodogram")
    return signal.periodogram(x, fs=1.0 / dt, window=window, detrend="constant", scaling="density", axis=-1)


def spectral_slope(freqs, power, f_lo: float, f_hi: float, n_bins: int = 40) -> float:
    """Least-squares log-log slope of ``power`` over ``[f_lo, f_hi]``.

    The periodogram is first averaged in log-spaced bins so every decade
    carries equal weight in the fit.
    """
    freqs = np.asarray(freqs)
    power = np.asarray(power)
    edges = np.geomspace(f_lo, f_hi, n_bins + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (freqs >= lo) & (freqs < hi)
        if sel.any():
            mean = power[sel].mean()
            if mean > 0:
                xs.append(0.5 * (np.log10(lo) + np.log10(hi)))
                ys.append(np.log10(mean))
    if len(xs) < 3:
        raise NoiseError("too few populated frequency bins for a slope fit")
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)
