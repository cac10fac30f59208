"""Time evolution of the array under a schedule plus noise.

The default integrator is the fourth-order commutator-free Magnus scheme with
two exponentials per step, built from H at the two Gauss-Legendre nodes
``t_k + (1/2 ∓ √3/6) h``.  ``method="midpoint"`` uses the second-order single
exponential ``exp(−2πi H(t_k + h/2) h)``.  Exponentials are exact (batched
eigendecomposition of the Hermitian generators).  Without AC drive the
Hamiltonian conserves the number of excitations, and exponentials are taken
block by block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .hamiltonian import Couplings, coefficients, matrices_from_coefficients
from .model import ArrayGeometry, PhysicalParams
from .noise import NoiseProcess, NoiseSpec, evaluate_grid
from .pulses import DEFAULT_DT, PulseSchedule, zc

CHUNK = 2048
METHODS = ("cf4", "midpoint")

_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_CF4_A1 = (3 - 2 * math.sqrt(3)) / 12
_CF4_A2 = (3 + 2 * math.sqrt(3)) / 12


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """``n`` equal steps covering ``[t0, t1]`` with step at most ``dt``."""

    t0: float
    t1: float
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise PropagationError("time grid needs t1 > t0")
        if not self.dt > 0:
            raise PropagationError("time step must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil((self.t1 - self.t0) / self.dt * (1 - 1e-12)))

    @property
    def step(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def midpoints(self) -> np.ndarray:
        return self.t0 + self.step * (np.arange(self.n_steps) + 0.5)

    def check(self, noise: NoiseSpec | None = None, max_frequency: float | None = None) -> None:
        """Raise if the step is too coarse for the noise band or the dynamics."""
        if noise is not None and noise.rms > 0 and self.step > 1.0 / (4.0 * noise.f_max) * (1 + 1e-9):
            raise PropagationError(f"step {self.step:.3e} s exceeds 1/(4 f_max) for the noise band")
        if max_frequency is not None and max_frequency > 0 and self.step > 1.0 / (50.0 * max_frequency):
            raise PropagationError(f"step {self.step:.3e} s too coarse for {max_frequency:.3e} Hz dynamics")


def unitarity_error(u: np.ndarray) -> float:
    return float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """``steps[-1] @ ... @ steps[0]`` by pairwise reduction."""
    u = steps
    while len(u) > 1:
        carry = None
        if len(u) % 2:
            carry, u = u[-1:], u[:-1]
        u = u[1::2] @ u[0::2]
        if carry is not None:
            u = np.concatenate([u, carry])
    return u[0]


@lru_cache(maxsize=8)
def _sectors(n: int) -> tuple[np.ndarray, ...]:
    counts = np.array([bin(k).count("1") for k in range(2**n)])
    return tuple(np.flatnonzero(counts == c) for c in range(n + 1))


def _expm_hermitian(h: np.ndarray, step: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-2j * np.pi * step * w)[:, None, :]) @ v.conj().transpose(0, 2, 1)


def _chunk_unitary(h: np.ndarray, step: float, block_diagonal: bool) -> np.ndarray:
    """Ordered product of ``exp(−2πi h[k] step)`` over the leading axis."""
    dim = h.shape[-1]
    if not block_diagonal:
        return ordered_product(_expm_hermitian(h, step))
    out = np.zeros((dim, dim), dtype=complex)
    for idx in _sectors(int(round(math.log2(dim)))):
        if idx.size == 1:
            k = idx[0]
            out[k, k] = np.exp(-2j * np.pi * step * h[:, k, k].real.sum())
        else:
            sub = h[:, idx[:, None], idx[None, :]]
            out[np.ix_(idx, idx)] = ordered_product(_expm_hermitian(sub, step))
    return out


def _couplings(target) -> Couplings:
    if isinstance(target, Couplings):
        return target
    if isinstance(target, ArrayGeometry):
        return Couplings.from_geometry(target)
    raise TypeError("expected an ArrayGeometry or Couplings")


def _noise_samples(noise, n_qubits: int, grid: TimeGrid, node: float = 0.5) -> np.ndarray:
    """Noise at ``t_k + node * step`` for every step."""
    out = np.zeros((n_qubits, grid.n_steps))
    if noise is None:
        return out
    procs = list(noise)
    if len(procs) != n_qubits:
        raise PropagationError(f"expected {n_qubits} noise processes, got {len(procs)}")
    live = [(q, getattr(p, "process", p)) for q, p in enumerate(procs)]
    live = [(q, p) for q, p in live if p is not None and not p.is_zero]
    if live:
        vals = evaluate_grid([p for _, p in live], grid.t0 + node * grid.step, grid.step, grid.n_steps)
        for row, (q, _) in zip(vals, live):
            out[q] = row
    return out


def frame_correction(schedule: PulseSchedule, t0: float, t1: float, virtual_z: bool = True):
    """Per-qubit factors taking the rotating-frame evolution to the logical frame."""
    shift = schedule.f_ref - schedule.f_logical
    post = [zc(shift * t1) for _ in range(schedule.n)]
    pre = [zc(-shift * t0) for _ in range(schedule.n)]
    if virtual_z:
        post = [zc(v) @ m for v, m in zip(schedule.virtual_z, post)]
    return _kron_all(post), _kron_all(pre)


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _evolve(grid: TimeGrid, schedule: PulseSchedule, couplings: Couplings, params: PhysicalParams,
            noise, nodes) -> np.ndarray:
    n = schedule.n
    noise_v = [_noise_samples(noise, n, grid, c) for c in nodes]
    f_drive = schedule.f_drive
    u = np.eye(2**n, dtype=complex)
    base = grid.t0 + grid.step * np.arange(grid.n_steps)
    step = grid.step
    for start in range(0, grid.n_steps, CHUNK):
        hs, block = [], True
        for c, nv in zip(nodes, noise_v):
            t = base[start:start + CHUNK] + c * step
            dEz, _ = schedule.controls(t)
            Eac, phase = schedule.drives(t)
            dEz = dEz + nv[:, start:start + CHUNK]
            coeffs = coefficients(n, couplings, params, t, dEz, Eac, f_drive, phase, schedule.f_ref)
            hs.append(matrices_from_coefficients(n, couplings, coeffs))
            block = block and not np.any(coeffs[:, n:3 * n])
        if len(hs) == 1:
            u = _chunk_unitary(hs[0], step, block) @ u
            continue
        h1, h2 = hs
        # per step exp(−2πi(a2 h1 + a1 h2) step) acts first, then exp(−2πi(a1 h1 + a2 h2) step)
        gens = np.empty((2 * len(h1),) + h1.shape[1:], dtype=complex)
        gens[0::2] = _CF4_A2 * h1 + _CF4_A1 * h2
        gens[1::2] = _CF4_A1 * h1 + _CF4_A2 * h2
        u = _chunk_unitary(gens, step, block) @ u
    return u


def propagate(
    target,
    schedule: PulseSchedule,
    noise: Sequence[NoiseProcess] | None = None,
    grid: TimeGrid | None = None,
    params: PhysicalParams | None = None,
    frame: str = "logical",
    virtual_z: bool = True,
    method: str = "cf4",
) -> np.ndarray:
    """Unitary of ``schedule`` under ``noise`` (one process per qubit, or ``None``).

    ``target`` is an :class:`ArrayGeometry` or explicit :class:`Couplings`.
    With ``frame="logical"`` the result is expressed in the idle-qubit frame
    with the schedule's virtual Z updates applied; ``frame="rotating"``
    returns the raw evolution in the integration frame.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    params = params or PhysicalParams()
    couplings = _couplings(target)
    n = schedule.n
    grid = grid or TimeGrid(0.0, schedule.duration)
    if grid.t0 < -1e-18 or grid.t1 > schedule.duration * (1 + 1e-12) + 1e-18:
        # past the end every channel rests at idle; only allow what the schedule covers
        raise PropagationError("time grid extends beyond the schedule")
    for p in noise or ():
        proc = getattr(p, "process", p)
        if proc is None:
            raise PropagationError("noise traces must carry their sinusoid process")
    nodes = (0.5,) if method == "midpoint" else _GAUSS
    # steps never straddle an envelope corner, where the controls lose smoothness
    tol = 1e-6 * grid.dt
    edges = [grid.t0]
    for t in schedule.breakpoints():
        if edges[-1] + tol < t < grid.t1 - tol:
            edges.append(float(t))
    edges.append(grid.t1)
    u = np.eye(2**n, dtype=complex)
    for t0, t1 in zip(edges, edges[1:]):
        seg = TimeGrid(t0, t1, grid.dt)
        u = _evolve(seg, schedule, couplings, params, noise, nodes) @ u
    if frame == "rotating":
        return u
    if frame != "logical":
        raise ValueError(f"unknown frame {frame!r}")
    post, pre = frame_correction(schedule, grid.t0, grid.t1, virtual_z)
    return post @ u @ pre


def propagate_channels(schedule: PulseSchedule, couplings: Couplings, params: PhysicalParams,
                       dt: float = DEFAULT_DT) -> np.ndarray:
    """Noise-free logical-frame unitary without virtual Z (used by calibration)."""
    return propagate(couplings, schedule, None, TimeGrid(0.0, schedule.duration, dt), params,
                     frame="logical", virtual_z=False)


def convergence_check(target, schedule: PulseSchedule, noise=None, dt: float = DEFAULT_DT,
                      params: PhysicalParams | None = None) -> float:
    """Max-norm difference between runs with step ``dt`` and ``dt/2``."""
    u1 = propagate(target, schedule, noise, TimeGrid(0.0, schedule.duration, dt), params)
    u2 = propagate(target, schedule, noise, TimeGrid(0.0, schedule.duration, dt / 2), params)
    return float(np.abs(u1 - u2).max())


def unitary_to_text(u: np.ndarray) -> str:
    """Row-major ``re im`` pairs, one matrix row per line."""
    lines = [f"# dim={u.shape[0]} row-major re im pairs"]
    for row in u:
        lines.append(" ".join(f"{z.real:.17e} {z.imag:.17e}" for z in row))
    return "\n".join(lines) + "\n"


def unitary_from_text(text: str) -> np.ndarray:
    data = np.loadtxt(text.splitlines(), ndmin=2)
    return data[:, 0::2] + 1j * data[:, 1::2]
