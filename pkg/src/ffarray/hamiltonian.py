"""Effective two-level flip-flop qubit model and the array Hamiltonian.

All energies are frequencies in Hz (energy / h). Each qubit contributes::

    ½ [ε_ff(ΔE_z + n(t)) − f_ref] σz + ½ Ω_R [cos(2π δ t + φ) σx + sin(2π δ t + φ) σy]

in a frame rotating at ``f_ref`` common to all qubits (``δ = f_drive − f_ref``),
and every interacting pair adds the XY exchange ``−g_ij (σ+σ− + σ−σ+)``.
Exchange commutes with a common frame rotation, so it is frame independent.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import constants

from .model import ArrayGeometry, PhysicalParams, pair_list

E_CHARGE = constants.e
PLANCK = constants.h
EPS0 = constants.epsilon_0

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_SP = np.array([[0, 1], [0, 0]], dtype=complex)


class HamiltonianError(ValueError):
    pass


def field_per_vt(params: PhysicalParams) -> float:
    """ΔE_z (V/m) at which the orbital detuning equals the tunnel coupling."""
    return params.Vt * PLANCK / (E_CHARGE * params.d)


def orbital_detuning(dEz, params: PhysicalParams):
    """ε_o = e d ΔE_z / h in Hz."""
    return E_CHARGE * params.d * np.asarray(dEz, dtype=float) / PLANCK


def _orbital_energy(eps_o, params):
    return np.hypot(eps_o, params.Vt)


def donor_weight(dEz, params: PhysicalParams):
    """Probability of the electron sitting at the donor, ½(1 − ε_o/E_orb)."""
    eps_o = orbital_detuning(dEz, params)
    return 0.5 * (1.0 - eps_o / _orbital_energy(eps_o, params))


def ff_splitting(dEz, params: PhysicalParams):
    """Flip-flop transition frequency in Hz.

    ``(γe + γn) B0 + A p_d / 2``; decreasing in ΔE_z, from ``+ A/2`` deep on
    the donor side to ``+ 0`` at the interface.
    """
    return (params.gamma_e + params.gamma_n) * params.B0 + 0.5 * params.A * donor_weight(dEz, params)


def ff_sensitivity(dEz, params: PhysicalParams):
    """dε_ff/dΔE_z in Hz per V/m (analytic)."""
    eps_o = orbital_detuning(dEz, params)
    e_orb = _orbital_energy(eps_o, params)
    return -0.25 * params.A * (E_CHARGE * params.d / PLANCK) * params.Vt**2 / e_orb**3


def rabi_rate(dEz, Eac, params: PhysicalParams):
    """EDSR Rabi frequency in Hz; maximal at the ionization point."""
    Eac = np.asarray(Eac, dtype=float)
    if np.any(Eac < 0):
        raise HamiltonianError("Eac must be non-negative")
    eps_o = orbital_detuning(dEz, params)
    e_orb = _orbital_energy(eps_o, params)
    return 0.25 * params.A * (E_CHARGE * params.d * Eac / PLANCK) * params.Vt**2 / e_orb**3


def mixing_factor(dEz, params: PhysicalParams):
    """Charge admixture χ of the flip-flop states, in (0, 1)."""
    eps_o = orbital_detuning(dEz, params)
    e_orb = _orbital_energy(eps_o, params)
    return (params.Vt / e_orb) * params.A / (2.0 * ff_splitting(dEz, params))


def dipole_prefactor(r, params: PhysicalParams):
    """Bare dipole-dipole energy e²d²/(16π ε0 εr h r³) in Hz."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise HamiltonianError("inter-qubit distance must be positive")
    return (E_CHARGE * params.d) ** 2 / (16 * np.pi * EPS0 * params.eps_r * PLANCK * r**3)


def dipole_coupling(dEz_i, dEz_j, r_ij, params: PhysicalParams):
    """Exchange strength g_ij in Hz for qubits biased at ``dEz_i``, ``dEz_j``."""
    return (
        params.g_scale
        * dipole_prefactor(r_ij, params)
        * mixing_factor(dEz_i, params)
        * mixing_factor(dEz_j, params)
    )


@dataclass(frozen=True)
class QubitBias:
    dEz: float = 0.0
    Eac: float = 0.0
    f_drive: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.Eac < 0:
            raise HamiltonianError("Eac must be non-negative")


class TimeDependence(str, enum.Enum):
    STATIC = "static"
    CARRIER = "carrier-modulated"
    NOISE = "noise-modulated"


@dataclass(frozen=True)
class HamiltonianTerm:
    matrix: np.ndarray
    time_dependence: TimeDependence

    def hermiticity_error(self) -> float:
        scale = max(np.abs(self.matrix).max(), 1e-300)
        return float(np.abs(self.matrix - self.matrix.conj().T).max() / scale)


def embed(op: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Single-qubit operator on ``qubit`` (1-based, qubit 1 leftmost)."""
    mats = [np.eye(2, dtype=complex)] * n
    mats[qubit - 1] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def exchange_operator(i: int, j: int, n: int) -> np.ndarray:
    """σ+ⁱσ−ʲ + σ−ⁱσ+ʲ."""
    a = embed(_SP, i, n) @ embed(_SP.conj().T, j, n)
    return a + a.conj().T


@lru_cache(maxsize=16)
def operator_basis(n: int, pairs: tuple[tuple[int, int], ...]):
    """Stacked operators: Z_1..Z_n, X_1..X_n, Y_1..Y_n, then one exchange per pair."""
    ops = [embed(_SZ, q, n) for q in range(1, n + 1)]
    ops += [embed(_SX, q, n) for q in range(1, n + 1)]
    ops += [embed(_SY, q, n) for q in range(1, n + 1)]
    ops += [exchange_operator(i, j, n) for i, j in pairs]
    basis = np.stack(ops).reshape(len(ops), -1)
    basis.setflags(write=False)
    return basis


@dataclass(frozen=True)
class Couplings:
    """Interacting pairs ``(i, j)`` (1-based) and their distances in m."""

    pairs: tuple[tuple[int, int], ...]
    distances: tuple[float, ...]

    @classmethod
    def from_geometry(cls, geometry: ArrayGeometry) -> "Couplings":
        plist = pair_list(geometry)
        return cls(tuple((i, j) for i, j, _ in plist), tuple(r for _, _, r in plist))

    @classmethod
    def none(cls) -> "Couplings":
        return cls((), ())


def coefficients(
    n: int,
    couplings: Couplings,
    params: PhysicalParams,
    t: np.ndarray,
    dEz: np.ndarray,
    Eac: np.ndarray,
    f_drive: np.ndarray,
    phase: np.ndarray,
    f_ref: float,
) -> np.ndarray:
    """Coefficients of :func:`operator_basis` at times ``t``; shape ``(len(t), 3n + pairs)``.

    ``dEz``, ``Eac`` (and optionally ``phase``) have shape ``(n, len(t))``;
    ``dEz`` already includes noise.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, 3 * n + len(couplings.pairs)))
    out[:, :n] = 0.5 * (ff_splitting(dEz, params) - f_ref).T
    omega = 0.5 * rabi_rate(dEz, Eac, params)
    phase = np.asarray(phase, dtype=float)
    if phase.ndim == 1:
        phase = phase[:, None]
    carrier = 2 * np.pi * np.outer(np.asarray(f_drive) - f_ref, t) + phase
    out[:, n:2 * n] = (omega * np.cos(carrier)).T
    out[:, 2 * n:3 * n] = (omega * np.sin(carrier)).T
    for k, ((i, j), r) in enumerate(zip(couplings.pairs, couplings.distances)):
        out[:, 3 * n + k] = -dipole_coupling(dEz[i - 1], dEz[j - 1], r, params)
    return out


def matrices_from_coefficients(n: int, couplings: Couplings, coeffs: np.ndarray) -> np.ndarray:
    basis = operator_basis(n, couplings.pairs)
    dim = 2**n
    return (coeffs.astype(complex) @ basis).reshape(-1, dim, dim)


def assemble(
    geometry: ArrayGeometry,
    biases: Sequence[QubitBias],
    noise: Sequence[float] | None,
    t: float,
    f_ref: float,
    params: PhysicalParams | None = None,
    couplings: Couplings | None = None,
) -> HamiltonianTerm:
    """Array Hamiltonian at one instant.

    ``noise`` holds the per-qubit ΔE_z perturbation at ``t`` (V/m), or ``None``.
    """
    params = params or PhysicalParams()
    n = geometry.n
    if len(biases) != n:
        raise HamiltonianError(f"expected {n} biases, got {len(biases)}")
    noise_v = np.zeros(n) if noise is None else np.asarray(noise, dtype=float)
    if noise_v.shape != (n,):
        raise HamiltonianError(f"expected {n} noise values, got shape {noise_v.shape}")
    couplings = couplings or Couplings.from_geometry(geometry)
    dEz = np.array([[b.dEz] for b in biases]) + noise_v[:, None]
    Eac = np.array([[b.Eac] for b in biases])
    f_drive = np.array([b.f_drive if b.Eac > 0 else f_ref for b in biases])
    phase = np.array([b.phase for b in biases])
    coeffs = coefficients(n, couplings, params, np.array([t]), dEz, Eac, f_drive, phase, f_ref)
    matrix = matrices_from_coefficients(n, couplings, coeffs)[0]
    if np.any(noise_v):
        kind = TimeDependence.NOISE
    elif np.any(Eac) and np.any(f_drive != f_ref):
        kind = TimeDependence.CARRIER
    else:
        kind = TimeDependence.STATIC
    term = HamiltonianTerm(matrix, kind)
    if term.hermiticity_error() > 1e-12:
        raise HamiltonianError("assembled Hamiltonian is not Hermitian")
    return term


def pairs_for(n: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(1, n + 1), 2))
