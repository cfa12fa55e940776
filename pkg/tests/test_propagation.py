import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import j1

from afcsim.errors import AnalysisError, ConfigurationError, DomainError
from afcsim.propagation import (analytic_efficiency, echo_windows, interference_trace,
                                make_transfer_function, max_forward_efficiency, optimal_finesse, propagate,
                                simulate_echo)
from afcsim.pulses import TimeGrid, gaussian_pulse, supergaussian_pulse
from afcsim.spectral import CombParams, FrequencyGrid, MaterialParams, SpectralProfile, build_comb, build_pit

GRID = FrequencyGrid()
MAT = MaterialParams()
TG = TimeGrid.for_echo(200.0, 1.2)


def eq2(alphaL, F):
    # independent evaluation of the closed form
    return (1.0 - math.exp(-alphaL / F)) ** 2 * math.exp(-7.0 / F**2)


def storage_pulse(grid=TG):
    return gaussian_pulse(grid, 200.0, 0.1)


def fig3_profile(gamma=0.3, grid=GRID):
    return build_comb(CombParams(1.2, gamma, 6.0), MAT, grid)


# --- transfer function -----------------------------------------------------------------------------------

def test_empty_pit_is_identity():
    pit = build_pit(MAT, GRID)
    tf = make_transfer_function(pit, dt=TG.dt)
    np.testing.assert_allclose(tf.amplitude_response, 1.0, atol=1e-12)
    pulse = storage_pulse()
    out = propagate(pulse, tf)
    np.testing.assert_allclose(out.envelope, pulse.envelope, atol=1e-12)


def test_beer_lambert_uniform_depth():
    flat = SpectralProfile(GRID, np.full(GRID.n_points, 6.0))
    tf = make_transfer_function(flat, dt=TG.dt)
    pulse = storage_pulse()
    out = propagate(pulse, tf)
    assert out.photon_number / pulse.photon_number == pytest.approx(math.exp(-6.0), rel=1e-9)


def test_lorentzian_line_matches_causal_oscillator():
    nu = GRID.frequencies
    gamma, depth = 0.2, 0.5
    hw = gamma / 2.0
    prof = SpectralProfile(GRID, depth * hw**2 / (nu**2 + hw**2))
    dt = 6.25
    tf = make_transfer_function(prof, dt=dt)
    assert tf.precursor_fraction() < 1e-6
    # single damped oscillator: t(f) = exp(-(d/2) * hw / (hw + i f))
    f = tf.grid.frequencies
    exact = np.exp(-(depth / 2.0) * hw / (hw + 1j * f))
    assert np.max(np.abs(tf.amplitude_response - exact)) < 1e-3
    # whose ringdown for t > 0 is -exp(-a t) sqrt(c a / t) J1(2 sqrt(c a t)), a = 2 pi hw, c = d/2
    t, h = tf.impulse_response()
    pos = t > 0
    tu = t[pos] * 1e-3
    a, c = 2.0 * math.pi * hw, depth / 2.0
    ring = -np.exp(-a * tu) * np.sqrt(c * a / tu) * j1(2.0 * np.sqrt(c * a * tu)) * dt * 1e-3
    assert np.max(np.abs(h[pos] - ring)) < 1e-2 * np.max(np.abs(ring))


def test_transfer_function_is_passive_and_causal():
    tf = make_transfer_function(fig3_profile(), dt=TG.dt)
    assert np.all(np.abs(tf.amplitude_response) <= 1.0 + 1e-12)
    assert tf.precursor_fraction() < 1e-6


def test_dispersion_off_is_magnitude_only():
    prof = fig3_profile()
    a = make_transfer_function(prof, dt=TG.dt)
    b = make_transfer_function(prof, dt=TG.dt, dispersion=False)
    np.testing.assert_allclose(np.abs(a.amplitude_response), np.abs(b.amplitude_response), atol=1e-9)
    assert np.all(b.amplitude_response.imag == 0)


def test_hard_edged_teeth_stay_causal():
    prof = build_comb(CombParams(1.0, 0.2, 8.0, peak_shape="square"), MaterialParams(probe_window_offset=None),
                      GRID)
    assert make_transfer_function(prof).precursor_fraction() < 1e-6


def test_narrow_fft_band_rejected():
    with pytest.raises(ConfigurationError, match="4x the comb extent"):
        make_transfer_function(fig3_profile(), dt=200.0)


def test_step_mismatch_rejected():
    tf = make_transfer_function(fig3_profile(), dt=TG.dt)
    with pytest.raises(ConfigurationError):
        propagate(gaussian_pulse(TimeGrid.from_step(-600, 1600, 2.5), 200.0, 0.1), tf)


# --- echoes ----------------------------------------------------------------------------------------------

def test_windows():
    trans, echo = echo_windows(storage_pulse(), 1.2)
    assert trans == pytest.approx((-416.6667, 416.6667), rel=1e-6)
    assert echo == pytest.approx((416.6667, 1250.0), rel=1e-6)
    trans, _ = echo_windows(storage_pulse(), 5.0)
    assert trans == pytest.approx((-100.0, 100.0))


def test_empty_pit_has_no_echo():
    empty = SpectralProfile(GRID, np.zeros(GRID.n_points), comb=CombParams(1.2, 0.3, 6.0))
    pulse = storage_pulse()
    res = simulate_echo(empty, pulse)
    np.testing.assert_allclose(res.output_pulse.envelope, pulse.envelope, atol=1e-12)
    assert res.transmitted_fraction == pytest.approx(1.0, abs=1e-6)
    # nothing is re-emitted; all that remains is the input's own tail beyond the window edge
    tail = pulse.energy_between(*res.echo_window) / pulse.photon_number
    assert res.efficiency == pytest.approx(tail, rel=1e-9)
    assert res.efficiency < 1e-6


def test_fig3_echo():
    res = simulate_echo(fig3_profile(), storage_pulse())
    assert 0.25 <= res.efficiency <= 0.40
    # the comb's slow group delay pulls the echo ahead of 1/delta = 833 ns
    assert 700.0 <= res.echo_time <= 840.0
    assert res.efficiency + res.transmitted_fraction <= 1.0 + 1e-9


def test_fig3_finesse_6_in_band():
    res = simulate_echo(fig3_profile(gamma=0.2), storage_pulse())
    assert 0.25 <= res.efficiency <= 0.40


def test_decoherence_factor():
    prof = fig3_profile()
    a = simulate_echo(prof, storage_pulse())
    b = simulate_echo(prof, storage_pulse(), t2_us=100.0)
    assert b.decoherence_factor == pytest.approx(math.exp(-2 * (1 / 1.2) / 100.0))
    assert b.efficiency == pytest.approx(a.efficiency * b.decoherence_factor)


def test_single_tooth_gives_no_echo():
    # one absorber gives a free-induction tail but no rephasing: the trace decays through the echo window
    prof = build_comb(CombParams(1.2, 0.3, 6.0, n_peaks=1), MAT, GRID)
    res = simulate_echo(prof, storage_pulse())
    t = res.output_pulse.times
    inside = (t >= res.echo_window[0]) & (t <= res.echo_window[1])
    assert np.all(np.diff(res.output_pulse.intensity[inside]) <= 0)
    assert res.echo_time - res.echo_window[0] <= TG.dt
    comb = simulate_echo(fig3_profile(), storage_pulse())
    assert comb.echo_time - comb.echo_window[0] > 200.0


def test_grid_refinement_converges():
    a = simulate_echo(fig3_profile(), storage_pulse()).efficiency
    fine_tg = TG.refined(2)
    b = simulate_echo(fig3_profile(grid=GRID.refined(2)), gaussian_pulse(fine_tg, 200.0, 0.1)).efficiency
    assert abs(a - b) < 1e-4


def test_overlapping_windows_rejected():
    tg = TimeGrid.for_echo(800.0, 1.2)
    with pytest.raises(AnalysisError, match="overlap"):
        simulate_echo(fig3_profile(), gaussian_pulse(tg, 800.0, 0.1))


def test_zero_energy_input_rejected():
    with pytest.raises(AnalysisError):
        simulate_echo(fig3_profile(), gaussian_pulse(TG, 200.0, 0.0))


def test_profile_without_comb_rejected():
    with pytest.raises(ConfigurationError):
        simulate_echo(build_pit(MAT, GRID), storage_pulse())


@settings(max_examples=25, deadline=None)
@given(alphaL=st.floats(0.5, 15.0), F=st.floats(2.0, 10.0), fwhm=st.floats(120.0, 300.0))
def test_echo_energy_is_passive(alphaL, F, fwhm):
    prof = build_comb(CombParams(1.2, 1.2 / F, alphaL), MAT, GRID)
    tg = TimeGrid.for_echo(fwhm, 1.2)
    pulse = gaussian_pulse(tg, fwhm, 0.1)
    try:
        res = simulate_echo(prof, pulse)
    except AnalysisError:
        return
    assert res.output_pulse.photon_number <= pulse.photon_number * (1 + 1e-9)
    assert res.efficiency + res.transmitted_fraction <= 1.0 + 1e-9


# --- closed form -----------------------------------------------------------------------------------------

@pytest.mark.parametrize("alphaL,F,expected", [(6.0, 4.0, 0.390), (6.0, 6.0, 0.3290)])
def test_analytic_values(alphaL, F, expected):
    assert analytic_efficiency(alphaL, F) == pytest.approx(eq2(alphaL, F), abs=1e-12)
    assert round(analytic_efficiency(alphaL, F), len(str(expected)) - 2) == expected


def test_analytic_hand_value():
    # (1 - e^-1.5)^2 e^-7/16 = 0.776870^2 * 0.645649
    assert analytic_efficiency(6.0, 4.0) == pytest.approx(0.3896662, abs=1e-7)


def test_analytic_limits():
    assert analytic_efficiency(0.0, 4.0) == 0.0
    assert analytic_efficiency(1e6, 4.0) == pytest.approx(math.exp(-7 / 16), rel=1e-12)


def test_analytic_vectorised():
    out = analytic_efficiency([2.0, 6.0], [4.0, 6.0])
    np.testing.assert_allclose(out, [eq2(2, 4), eq2(6, 6)])


@pytest.mark.parametrize("alphaL,F", [(-1.0, 4.0), (6.0, 0.5), (float("nan"), 4.0)])
def test_analytic_domain(alphaL, F):
    with pytest.raises(DomainError):
        analytic_efficiency(alphaL, F)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.0, 50.0), da=st.floats(1e-3, 10.0), F=st.floats(1.0, 100.0))
def test_analytic_monotone_in_depth(a, da, F):
    assert analytic_efficiency(a + da, F) >= analytic_efficiency(a, F)
    assert analytic_efficiency(a, F) <= math.exp(-7.0 / F**2) + 1e-15


def test_optimal_finesse_first_order_condition():
    opt = optimal_finesse(6.0)
    h = 1e-4
    slope = (analytic_efficiency(6.0, opt.F_opt + h) - analytic_efficiency(6.0, opt.F_opt - h)) / (2 * h)
    assert abs(slope) < 1e-6
    assert opt.eta_opt == pytest.approx(analytic_efficiency(6.0, opt.F_opt))


def test_optimal_finesse_monotone_in_depth():
    values = [optimal_finesse(a).F_opt for a in np.linspace(1.0, 20.0, 20)]
    assert np.all(np.diff(values) >= -1e-6)


def test_optimal_finesse_domain():
    with pytest.raises(DomainError):
        optimal_finesse(0.0)


def test_numeric_finesse_optimum():
    builder = lambda F: build_comb(CombParams(1.2, 1.2 / F, 6.0), MAT, GRID)  # noqa: E731
    opt = optimal_finesse(6.0, builder, storage_pulse(), numeric_bounds=(2.5, 8.0))
    assert 2.5 < opt.F_numeric < 8.0
    assert opt.eta_numeric >= simulate_echo(builder(4.0), storage_pulse()).efficiency - 1e-6


def test_numeric_optimum_needs_pulse():
    with pytest.raises(ConfigurationError):
        optimal_finesse(6.0, lambda F: fig3_profile())


# --- forward cap -----------------------------------------------------------------------------------------

def _cap_builder(F):
    m = MaterialParams(probe_window_offset=None)

    def build(alphaL):
        return build_comb(CombParams(0.5, 0.5 / F, alphaL, n_peaks=10), m, FrequencyGrid(n_points=2**15))
    return build


def test_low_finesse_cap_is_lower():
    tg = TimeGrid.for_echo(400.0, 0.5)
    pulse = gaussian_pulse(tg, 400.0, 0.1)
    low = max_forward_efficiency(_cap_builder(4.0), np.linspace(1.0, 13.0, 13), pulse)
    high = max_forward_efficiency(_cap_builder(40.0), np.linspace(20.0, 140.0, 13), pulse)
    assert low.eta_max < high.eta_max
    assert 0.52 <= high.eta_max <= 0.56


def test_cap_needs_bracket():
    tg = TimeGrid.for_echo(400.0, 0.5)
    pulse = gaussian_pulse(tg, 400.0, 0.1)
    with pytest.raises(AnalysisError, match="range edge"):
        max_forward_efficiency(_cap_builder(40.0), [10.0, 20.0, 30.0], pulse)
    with pytest.raises(AnalysisError):
        max_forward_efficiency(_cap_builder(40.0), [10.0, 20.0], pulse)


# --- interference ----------------------------------------------------------------------------------------

def test_interference_trace_inverts_with_pi():
    tg = TimeGrid.from_step(-1500.0, 3000.0, 1.0)
    echo = supergaussian_pulse(tg, 840.0, 7, 0.1, 0.0, 0.0, 1000.0)
    p0 = supergaussian_pulse(tg, 840.0, 7, 0.1, 2.3, 0.0, 1000.0)
    p1 = supergaussian_pulse(tg, 840.0, 7, 0.1, 2.3, math.pi, 1000.0)
    a, b = interference_trace(echo, p0), interference_trace(echo, p1)
    mean = echo.intensity + p0.intensity
    np.testing.assert_allclose(a - mean, -(b - mean), atol=1e-15)


def test_interference_needs_shared_grid():
    a = gaussian_pulse(TimeGrid.from_step(-1000, 1000, 1.0), 200.0, 0.1)
    b = gaussian_pulse(TimeGrid.from_step(-1000, 1000, 2.0), 200.0, 0.1)
    with pytest.raises(ConfigurationError):
        interference_trace(a, b)
