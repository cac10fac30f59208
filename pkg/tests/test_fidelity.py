import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from ffarray.fidelity import (
    CSV_HEADER,
    FidelityError,
    FidelityRecord,
    aggregate,
    delta_metric,
    delta_terms,
    entanglement_fidelity,
    target_unitary,
)
from ffarray.model import OpKind, build_geometry, parse_label
from ffarray.pulses import RX_TARGET, RZ_TARGET, SQRT_ISWAP_TARGET


def test_identity_and_orthogonal():
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    assert entanglement_fidelity(np.eye(2), np.eye(2)) == 1.0
    assert entanglement_fidelity(x, np.eye(2)) == pytest.approx(0.0)


@pytest.mark.parametrize("theta", [0.1, 0.7, 2.0])
def test_z_rotation_error(theta):
    rz = np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    assert entanglement_fidelity(rz, np.eye(2)) == pytest.approx(math.cos(theta / 2) ** 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), phase=st.floats(0, 2 * math.pi))
def test_random_unitaries(seed, phase):
    u = unitary_group.rvs(4, random_state=seed)
    v = unitary_group.rvs(4, random_state=seed + 1)
    f = entanglement_fidelity(u, v)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx(entanglement_fidelity(v, u))
    assert entanglement_fidelity(np.exp(1j * phase) * u, u) == pytest.approx(1.0)


def test_dimension_mismatch():
    with pytest.raises(FidelityError):
        entanglement_fidelity(np.eye(2), np.eye(4))


def test_targets():
    t = target_unitary(parse_label("c13"), "Rx")
    assert np.allclose(t, np.kron(np.kron(RX_TARGET, np.eye(2)), np.kron(RX_TARGET, np.eye(2))))
    assert np.allclose(target_unitary(parse_label("c2"), "Rz"),
                       np.kron(np.kron(np.eye(2), RZ_TARGET), np.eye(4)))
    pair = target_unitary(parse_label("c12-34"), "SqrtISwap")
    assert np.allclose(pair, np.kron(SQRT_ISWAP_TARGET, SQRT_ISWAP_TARGET))
    # non-adjacent embedding: permute qubits 2 and 3 of the adjacent gate
    perm = [int(f"{k:04b}"[0] + f"{k:04b}"[2] + f"{k:04b}"[1] + f"{k:04b}"[3], 2) for k in range(16)]
    adj = target_unitary(parse_label("c12", OpKind.TWO_QUBIT), "SqrtISwap")
    far = target_unitary(parse_label("c13", OpKind.TWO_QUBIT), "SqrtISwap")
    assert np.allclose(far, adj[np.ix_(perm, perm)])
    with pytest.raises(FidelityError):
        target_unitary(parse_label("c1"), "SqrtISwap")
    with pytest.raises(FidelityError):
        target_unitary(parse_label("c12", OpKind.TWO_QUBIT), "Rx")


def test_delta_values():
    assert delta_metric(build_geometry("LA")) == pytest.approx(3 + 2 / 8 + 1 / 27)
    assert delta_metric(build_geometry("SA")) == pytest.approx(4 + 2 / 2**1.5)
    assert delta_metric(build_geometry("STA")) == pytest.approx(3 + 3 / 3**1.5)
    assert len(delta_terms(build_geometry("LA", 1e-6))) == 6


def test_record_round_trip():
    r = FidelityRecord("c12-34", "SqrtISwap", 50.0, 0.25, 1e-3, 20)
    assert FidelityRecord.from_csv_row(r.to_csv_row()) == r
    assert len(CSV_HEADER.split(",")) == len(r.to_csv_row().split(","))
    with pytest.raises(FidelityError):
        FidelityRecord("c1", "Rz", 0.0, 1.5, 0.0, 1)
    with pytest.raises(FidelityError):
        FidelityRecord.from_csv_row("c1,Rz,0")


def test_aggregate():
    rec = aggregate([0.9, 0.7], "c1", "Rz", 10.0)
    assert rec.mean_infidelity == pytest.approx(0.2)
    assert rec.std_error == pytest.approx(np.std([0.1, 0.3], ddof=1) / math.sqrt(2))
    assert aggregate([1.0 + 1e-15]).mean_infidelity == 0.0
    assert aggregate([0.5]).std_error == 0.0
    with pytest.raises(FidelityError):
        aggregate([])
