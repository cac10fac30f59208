import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from ffarray.hamiltonian import Couplings, QubitBias, assemble, dipole_coupling, ff_splitting
from ffarray.model import build_geometry
from ffarray.noise import NoiseSpec, make_process
from ffarray.propagation import (
    PropagationError,
    TimeGrid,
    _chunk_unitary,
    convergence_check,
    ordered_product,
    propagate,
    unitarity_error,
    unitary_from_text,
    unitary_to_text,
)
from ffarray.pulses import schedule_idle, schedule_parallel, schedule_rx, schedule_sqrt_iswap


def noise(alpha, k=0, n=4):
    return [make_process(NoiseSpec(alpha), (q, k)) for q in range(n)]


def test_time_grid():
    g = TimeGrid(0.0, 1e-9, 3e-12)
    assert g.n_steps == 334 and g.step <= 3e-12
    assert TimeGrid(0.0, 1e-9, 1e-11).n_steps == 100
    with pytest.raises(PropagationError):
        TimeGrid(1.0, 1.0)
    with pytest.raises(PropagationError):
        TimeGrid(0.0, 1e-9, 20e-12).check(NoiseSpec(1.0))


def test_ordered_product_order():
    rng = np.random.default_rng(0)
    mats = rng.normal(size=(7, 3, 3))
    ref = np.eye(3)
    for m in mats:
        ref = m @ ref
    assert np.allclose(ordered_product(mats), ref)


def test_block_path_matches_dense():
    rng = np.random.default_rng(1)
    from ffarray.hamiltonian import matrices_from_coefficients
    geo = build_geometry("SA")
    c = Couplings.from_geometry(geo)
    coeffs = np.zeros((5, 12 + len(c.pairs)))
    coeffs[:, :4] = rng.normal(size=(5, 4)) * 1e7
    coeffs[:, 12:] = rng.normal(size=(5, len(c.pairs))) * 1e6
    h = matrices_from_coefficients(4, c, coeffs)
    assert np.allclose(_chunk_unitary(h, 1e-9, True), _chunk_unitary(h, 1e-9, False), atol=1e-12)


def test_unitarity_under_noise(cals, geometries):
    s = schedule_parallel({q: cals["Rx"] for q in (1, 2, 3, 4)})
    u = propagate(geometries["SA"], s, noise(100.0))
    assert unitarity_error(u) <= 1e-9


def test_idle_logical_frame_is_identity(cals):
    c = cals["Rz"]
    s = schedule_idle(c, 4, 20e-9, c.f_ref, c.f_logical)
    u = propagate(Couplings.none(), s)
    assert np.abs(u - np.eye(16)).max() < 1e-10


def test_composition(cals, geometries):
    s = schedule_parallel({1: cals["Rx"], 2: cals["Rz"]})
    nz = noise(50.0, 3)
    T, t1 = s.duration, 0.37 * s.duration
    full = propagate(geometries["STA"], s, nz, TimeGrid(0, T), frame="rotating")
    a = propagate(geometries["STA"], s, nz, TimeGrid(0, t1), frame="rotating")
    b = propagate(geometries["STA"], s, nz, TimeGrid(t1, T), frame="rotating")
    assert np.abs(full - b @ a).max() < 1e-9


def test_matches_adaptive_ode_solver(cals, params):
    # independent oracle: Schrödinger equation with a general-purpose solver
    s = schedule_rx(cals["Rx"], (1,), 1)
    c = Couplings.none()
    dummy = build_geometry("LA")

    def h(t):
        ch = s.channels[0]
        e, ph = ch.drive(np.array([t]))
        bias = QubitBias(float(ch.dEz(np.array([t]))[0]), float(e[0]), s.f_drive[0], float(ph[0]))
        idle = QubitBias(0.0)
        m = assemble(dummy, [bias, idle, idle, idle], None, t, s.f_ref, params, c).matrix
        return m[::8, ::8]  # qubit 1 block with the others in |0>, minus their constant energy

    def rhs(t, y):
        hm = h(t)
        hm = hm - np.trace(hm) / 2 * np.eye(2)
        return (-2j * np.pi * hm @ y.reshape(2, 2)).ravel()

    sol = solve_ivp(rhs, (0, s.duration), np.eye(2, dtype=complex).ravel(), method="DOP853",
                    rtol=1e-11, atol=1e-12)
    ref = sol.y[:, -1].reshape(2, 2)
    u = propagate(c, s, frame="rotating")
    u = u / np.sqrt(np.linalg.det(u))
    ref = ref / np.sqrt(np.linalg.det(ref))
    assert min(np.abs(u - ref).max(), np.abs(u + ref).max()) < 1e-7


def test_static_exchange_matches_expm(cals, params):
    c = cals["SqrtISwap"]
    s = schedule_idle(c, 2, 40e-9, c.f_ref, c.f_logical)
    couplings = Couplings(((1, 2),), (360e-9,))
    u = propagate(couplings, s, frame="rotating")
    idle = c.settings.dEz_idle
    dz = 0.5 * (ff_splitting(idle, params) - c.f_ref)
    g = dipole_coupling(idle, idle, 360e-9, params)
    z = np.diag([1.0, -1.0])
    hm = dz * (np.kron(z, np.eye(2)) + np.kron(np.eye(2), z))
    hm[1, 2] = hm[2, 1] = -g
    assert np.abs(u - expm(-2j * np.pi * hm * 40e-9)).max() < 1e-9


@pytest.mark.parametrize("gate", ["Rz", "Rx", "SqrtISwap"])
def test_self_convergence(cals, geometries, gate):
    geo = geometries["SA"]
    if gate == "SqrtISwap":
        s = schedule_sqrt_iswap(cals[gate], ((1, 2),), 4, geo)
    else:
        s = schedule_parallel({1: cals[gate], 3: cals[gate]})
    assert convergence_check(geo, s, noise(100.0), 10e-12) <= 1e-8


def test_coarse_step_is_worse(cals, geometries):
    geo = geometries["LA"]
    s = schedule_parallel({1: cals["Rx"], 2: cals["Rx"]})
    ref = propagate(geo, s, grid=TimeGrid(0, s.duration, 2.5e-12))
    for method in ("cf4", "midpoint"):
        fine = np.abs(propagate(geo, s, grid=TimeGrid(0, s.duration, 10e-12), method=method) - ref).max()
        coarse = np.abs(propagate(geo, s, grid=TimeGrid(0, s.duration, 80e-12), method=method) - ref).max()
        assert coarse > 10 * fine


def test_grid_must_lie_within_schedule(cals):
    s = schedule_rx(cals["Rx"], (1,), 1)
    with pytest.raises(PropagationError):
        propagate(Couplings.none(), s, grid=TimeGrid(0, 2 * s.duration))
    with pytest.raises(PropagationError):
        propagate(Couplings.none(), s, noise(1.0, n=2))
    with pytest.raises(ValueError):
        propagate(Couplings.none(), s, method="rk4")


def test_unitary_text_round_trip(cals):
    u = propagate(Couplings.none(), schedule_rx(cals["Rx"], (1, 2), 2))
    assert np.array_equal(unitary_from_text(unitary_to_text(u)), u)
