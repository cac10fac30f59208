import numpy as np
import pytest

from ffarray.hamiltonian import (
    Couplings,
    HamiltonianError,
    QubitBias,
    TimeDependence,
    assemble,
    dipole_coupling,
    dipole_prefactor,
    donor_weight,
    embed,
    exchange_operator,
    ff_sensitivity,
    ff_splitting,
    field_per_vt,
    mixing_factor,
    rabi_rate,
)
from ffarray.model import PhysicalParams, build_geometry

# hand-evaluated with CODATA constants for the default parameters  [DERIVED]
FIELD_PER_VT = 3032.8229777441634  # V/m
F_IONIZATION = 11_224_142_000.0  # Hz, (γe+γn)B0 + A/4
F_IDLE_M15 = 11_248_479_471.109383  # Hz at ΔEz = -1.5 Vt
DIPOLE_360NM = 35_878_586.66  # Hz, bare e²d²/(16π ε0 εr h r³)
G_360NM_UNSCALED = 974.632  # Hz at the ionization point with g_scale = 1
RABI_5500 = 5.834910289806167e17 / 11e9  # Hz at the ionization point


def test_frozen_oracles(params):
    p1 = PhysicalParams(g_scale=1.0)
    assert field_per_vt(params) == pytest.approx(FIELD_PER_VT, rel=1e-12)
    assert ff_splitting(0.0, params) == pytest.approx(F_IONIZATION, rel=1e-14)
    assert ff_splitting(-1.5 * FIELD_PER_VT, params) == pytest.approx(F_IDLE_M15, rel=1e-12)
    assert dipole_prefactor(360e-9, params) == pytest.approx(DIPOLE_360NM, rel=1e-8)
    assert dipole_coupling(0.0, 0.0, 360e-9, p1) == pytest.approx(G_360NM_UNSCALED, rel=1e-5)
    assert rabi_rate(0.0, 5500.0, params) == pytest.approx(RABI_5500, rel=1e-12)


def test_donor_weight_limits(params):
    v = field_per_vt(params)
    assert donor_weight(0.0, params) == pytest.approx(0.5)
    assert donor_weight(-1e3 * v, params) == pytest.approx(1.0, abs=1e-6)
    assert donor_weight(1e3 * v, params) == pytest.approx(0.0, abs=1e-6)


def test_sensitivity_matches_finite_difference(params):
    v = field_per_vt(params)
    for x in (-2 * v, -0.3 * v, 0.0, 1.1 * v):
        h = 1e-3 * v
        fd = (ff_splitting(x + h, params) - ff_splitting(x - h, params)) / (2 * h)
        assert ff_sensitivity(x, params) == pytest.approx(fd, rel=1e-6)


def test_rabi_peaks_at_ionization(params):
    x = np.linspace(-3, 3, 61) * field_per_vt(params)
    r = rabi_rate(x, 1000.0, params)
    assert np.argmax(r) == 30
    with pytest.raises(HamiltonianError):
        rabi_rate(0.0, -1.0, params)


def test_mixing_factor_range(params):
    x = np.linspace(-5, 5, 41) * field_per_vt(params)
    chi = mixing_factor(x, params)
    assert np.all((chi > 0) & (chi < 1))


def test_coupling_scales_as_inverse_cube(params):
    assert dipole_coupling(0, 0, 360e-9, params) / dipole_coupling(0, 0, 720e-9, params) == pytest.approx(8.0)
    with pytest.raises(HamiltonianError):
        dipole_prefactor(0.0, params)


def test_embed_puts_qubit_one_leftmost():
    z = np.diag([1.0, -1.0])
    assert np.allclose(embed(z, 1, 2), np.kron(z, np.eye(2)))
    assert np.allclose(embed(z, 2, 2), np.kron(np.eye(2), z))


def test_exchange_operator_elements():
    op = exchange_operator(1, 2, 2)
    expect = np.zeros((4, 4))
    expect[1, 2] = expect[2, 1] = 1.0
    assert np.allclose(op, expect)


def test_assemble_hermitian_and_kind(params, geometries):
    geo = geometries["STA"]
    b = [QubitBias(dEz=-1000.0 * q) for q in range(4)]
    term = assemble(geo, b, None, 0.0, F_IONIZATION, params)
    assert term.time_dependence is TimeDependence.STATIC
    assert term.hermiticity_error() < 1e-12
    noisy = assemble(geo, b, [1.0, 0, 0, 0], 0.0, F_IONIZATION, params)
    assert noisy.time_dependence is TimeDependence.NOISE
    driven = [QubitBias(Eac=100.0, f_drive=F_IONIZATION + 1e6)] + b[1:]
    assert assemble(geo, driven, None, 1e-9, F_IONIZATION, params).time_dependence is TimeDependence.CARRIER
    with pytest.raises(HamiltonianError):
        assemble(geo, b[:3], None, 0.0, F_IONIZATION, params)


def test_single_qubit_diagonal(params):
    geo = build_geometry("LA")
    b = [QubitBias(dEz=0.0)] * 4
    h = assemble(geo, b, None, 0.0, 0.0, params, couplings=Couplings.none()).matrix
    # all qubits up: 4 × ½ ε
    assert h[0, 0].real == pytest.approx(2 * F_IONIZATION)
    assert np.count_nonzero(np.abs(h - np.diag(np.diag(h))) > 0) == 0


def test_idle_bias_suppresses_coupling(params, cals):
    idle = cals["Rz"].settings.dEz_idle
    operated = dipole_coupling(0.0, 0.0, 360e-9, params)
    assert dipole_coupling(idle, 0.0, 360e-9, params) < operated
    assert dipole_coupling(idle, idle, 360e-9, params) < operated
