"""Entanglement fidelity, ideal targets for configurations, and the δ density metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ArrayGeometry, Configuration, OpKind
from .pulses import GateId, ideal_gate, parse_gate

CSV_HEADER = "config,gate,alpha_V_per_m,mean_infidelity,std_error,n_instances"


class FidelityError(ValueError):
    pass


def entanglement_fidelity(u_actual: np.ndarray, u_target: np.ndarray) -> float:
    """``|Tr(U_target† U_actual)|² / d²``, clipped to [0, 1]."""
    u_actual = np.asarray(u_actual)
    u_target = np.asarray(u_target)
    if u_actual.shape != u_target.shape or u_actual.ndim != 2 or u_actual.shape[0] != u_actual.shape[1]:
        raise FidelityError(f"dimension mismatch: {u_actual.shape} vs {u_target.shape}")
    d = u_actual.shape[0]
    # vdot conjugates its first argument, giving Tr(A† B) without a matrix product
    overlap = np.vdot(u_target, u_actual)
    return float(min(1.0, abs(overlap) ** 2 / d**2))


def _swap_on(i: int, j: int, n: int) -> np.ndarray:
    """√iSWAP acting on qubits ``i`` and ``j`` (1-based) of ``n``."""
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    gate = ideal_gate(GateId.SQRT_ISWAP)
    bi, bj = n - i, n - j
    for k in range(dim):
        a, b = (k >> bi) & 1, (k >> bj) & 1
        rest = k & ~((1 << bi) | (1 << bj))
        col = 2 * a + b
        for row in range(4):
            amp = gate[row, col]
            if amp != 0:
                m = rest | ((row >> 1) << bi) | ((row & 1) << bj)
                out[m, k] += amp
    return out


def target_unitary(configuration: Configuration, gate_id, n: int | None = None) -> np.ndarray:
    """Ideal gate on every operated target, identity on idle qubits."""
    gate = parse_gate(gate_id)
    n = n or len(configuration.operated_qubits) + len(configuration.idle)
    if configuration.op_kind is OpKind.ONE_QUBIT:
        if gate is GateId.SQRT_ISWAP:
            raise FidelityError("√iSWAP needs a two-qubit configuration")
        ops = set(configuration.operated_qubits)
        g = ideal_gate(gate)
        out = np.ones((1, 1), dtype=complex)
        for q in range(1, n + 1):
            out = np.kron(out, g if q in ops else np.eye(2))
        return out
    if gate is not GateId.SQRT_ISWAP:
        raise FidelityError(f"{gate.value} is a one-qubit gate; configuration {configuration.label} is two-qubit")
    out = np.eye(2**n, dtype=complex)
    for i, j in configuration.operated:
        out = _swap_on(i, j, n) @ out
    return out


def delta_metric(geometry: ArrayGeometry) -> float:
    """Σ_{i<j} (r0 / r_ij)³ over all pairs, i.e. δ in units of r0⁻³."""
    return sum(term for _, _, term in delta_terms(geometry))


def delta_terms(geometry: ArrayGeometry) -> list[tuple[int, int, float]]:
    n = geometry.n
    return [
        (i, j, (geometry.r0 / geometry.distance(i, j)) ** 3)
        for i in range(1, n + 1)
        for j in range(i + 1, n + 1)
    ]


@dataclass(frozen=True)
class FidelityRecord:
    config: str
    gate: str
    alpha: float
    mean_infidelity: float
    std_error: float
    n_instances: int

    def __post_init__(self):
        if not 0.0 <= self.mean_infidelity <= 1.0:
            raise FidelityError(f"mean infidelity {self.mean_infidelity!r} outside [0, 1]")
        if self.std_error < 0 or self.n_instances < 1:
            raise FidelityError("std_error must be >= 0 and n_instances >= 1")

    def to_csv_row(self) -> str:
        return (f"{self.config},{self.gate},{self.alpha:.6g},{self.mean_infidelity:.10e},"
                f"{self.std_error:.10e},{self.n_instances}")

    @classmethod
    def from_csv_row(cls, row: str) -> "FidelityRecord":
        parts = row.strip().split(",")
        if len(parts) != 6:
            raise FidelityError(f"expected 6 CSV fields, got {len(parts)}: {row!r}")
        return cls(parts[0], parts[1], float(parts[2]), float(parts[3]), float(parts[4]), int(parts[5]))


def aggregate(fidelities: Sequence[float], config: str = "", gate: str = "", alpha: float = 0.0) -> FidelityRecord:
    """Mean infidelity and its standard error (sample std / √n; zero for n = 1)."""
    f = np.asarray(fidelities, dtype=float)
    if f.size == 0:
        raise FidelityError("cannot aggregate an empty list")
    infid = np.clip(1.0 - f, 0.0, 1.0)
    mean = float(infid.mean())
    se = float(infid.std(ddof=1) / math.sqrt(f.size)) if f.size > 1 else 0.0
    return FidelityRecord(config, str(gate), float(alpha), mean, se, int(f.size))
