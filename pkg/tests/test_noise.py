import math

import numpy as np
import pytest

from ffarray.noise import (
    NoiseError,
    NoiseSpec,
    NoiseTrace,
    evaluate_grid,
    make_process,
    psd_estimate,
    spectral_slope,
    stream_rng,
    synthesize,
    synthesize_many,
)


def test_zero_alpha_gives_zero_trace():
    tr = synthesize(NoiseSpec(0.0), 10e-9, 10e-12, (0, 0))
    assert not np.any(tr.samples)
    assert make_process(NoiseSpec(0.0), (1, 2)).is_zero


def test_streams_are_deterministic_and_distinct():
    spec = NoiseSpec(50.0, seed=3)
    a = synthesize(spec, 5e-9, 10e-12, (0, 1)).samples
    b = synthesize(spec, 5e-9, 10e-12, (0, 1)).samples
    c = synthesize(spec, 5e-9, 10e-12, (1, 1)).samples
    d = synthesize(NoiseSpec(50.0, seed=4), 5e-9, 10e-12, (0, 1)).samples
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_alpha_only_scales_amplitudes():
    p25 = make_process(NoiseSpec(25.0, seed=1), (2, 7))
    p100 = make_process(NoiseSpec(100.0, seed=1), (2, 7))
    assert np.array_equal(p25.phases, p100.phases)
    assert np.allclose(4 * p25.amps, p100.amps)


def test_rms_matches_alpha_exactly_in_expectation():
    p = make_process(NoiseSpec(40.0), (0, 0))
    assert math.sqrt(0.5 * np.sum(p.amps**2)) == pytest.approx(40.0, rel=1e-12)


def test_psd_prefactor_semantics():
    spec = NoiseSpec(2.0, f_min=1e3, f_max=1e9, alpha_semantics="psd_prefactor")
    # ∫ a²/f df over the band
    assert spec.rms**2 == pytest.approx(4.0 * math.log(1e6))
    with pytest.raises(NoiseError):
        NoiseSpec(1.0, alpha_semantics="amplitude")


def test_grid_evaluation_matches_direct_sum():
    p = make_process(NoiseSpec(10.0, n_components=64), (0, 3))
    t0, dt, n = 3e-9, 7e-12, 700
    direct = p.evaluate(t0 + dt * np.arange(n))
    assert np.allclose(evaluate_grid([p], t0, dt, n)[0], direct, atol=1e-9)


def test_synthesize_many_matches_single():
    spec = NoiseSpec(30.0)
    many = synthesize_many(spec, 2e-9, 10e-12, [(0, 0), (1, 0)])
    one = synthesize(spec, 2e-9, 10e-12, (1, 0))
    assert np.allclose(many[1].samples, one.samples, atol=1e-10)


@pytest.mark.parametrize("kw", [dict(alpha=-1), dict(f_min=0), dict(f_min=5.0, f_max=1.0),
                                dict(n_components=1), dict(alpha=float("nan"))])
def test_spec_validation(kw):
    with pytest.raises(NoiseError):
        NoiseSpec(**{"alpha": 1.0, **kw})


def test_dt_must_resolve_band():
    with pytest.raises(NoiseError):
        synthesize(NoiseSpec(1.0), 1e-9, 30e-12, (0, 0))


def test_trace_text_round_trip():
    tr = synthesize(NoiseSpec(5.0), 1e-10, 10e-12, (0, 0))
    back = NoiseTrace.from_text(tr.to_text())
    assert back.dt == pytest.approx(tr.dt)
    assert np.allclose(back.samples, tr.samples, rtol=1e-11)


def test_periodogram_parseval():
    x = stream_rng(0, (9,)).normal(size=4096)
    f, p = psd_estimate(x, 1e-3)
    assert np.sum(p) * (f[1] - f[0]) == pytest.approx(np.var(x), rel=1e-9)


def test_slope_of_known_power_law():
    f = np.logspace(3, 9, 2000)
    assert spectral_slope(f, 5.0 / f, 1e4, 1e8) == pytest.approx(-1.0, abs=1e-3)
    assert spectral_slope(f, f**-2, 1e4, 1e8) == pytest.approx(-2.0, abs=1e-2)
