import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afcsim.errors import ConfigurationError, DomainError
from afcsim.pulses import (TimeGrid, comb_preparation_schedule, gaussian_pulse, instantaneous_frequency,
                           measure_fwhm, sechyp_pulse, supergaussian_pulse)

GRID = TimeGrid.from_step(-2000.0, 2000.0, 1.0)


def test_from_step_contains_zero():
    g = TimeGrid.from_step(-601.0, 1599.0, 6.25)
    assert g.dt == pytest.approx(6.25)
    assert np.min(np.abs(g.times)) < 1e-9


def test_gaussian_normalisation_and_width():
    p = gaussian_pulse(GRID, 200.0, 0.1)
    assert p.photon_number == pytest.approx(0.1, rel=1e-12)
    assert abs(p.measured_fwhm() - 200.0) <= 2 * GRID.dt


def test_transform_limited_bandwidth():
    # intensity time-bandwidth product 2 ln2 / pi of a Gaussian
    long_grid = TimeGrid.from_step(-20000.0, 20000.0, 1.0)
    freqs, spec = gaussian_pulse(long_grid, 200.0, 0.1).spectrum()
    expected = 2 * math.log(2) / math.pi / 200.0 * 1e3
    assert measure_fwhm(freqs, spec) == pytest.approx(expected, rel=5e-3)


def test_zero_photons_is_zero_envelope():
    assert np.all(gaussian_pulse(GRID, 420.0, 0.0).envelope == 0)


def test_negative_photons_rejected():
    with pytest.raises(DomainError):
        gaussian_pulse(GRID, 200.0, -1.0)


def test_truncated_pulse_rejected():
    with pytest.raises(ConfigurationError, match="truncated"):
        gaussian_pulse(TimeGrid.from_step(-200.0, 200.0, 1.0), 200.0, 0.1)


def test_coarse_step_rejected():
    with pytest.raises(ConfigurationError):
        gaussian_pulse(TimeGrid.from_step(-1000.0, 1000.0, 60.0), 200.0, 0.1)


def test_supergaussian_order_one_is_gaussian():
    a = supergaussian_pulse(GRID, 300.0, 1, 0.5, 2.3, 0.4)
    b = gaussian_pulse(GRID, 300.0, 0.5, 2.3, 0.4)
    assert np.max(np.abs(a.envelope - b.envelope)) < 1e-12


def test_probe_shape():
    g = TimeGrid.from_step(-1500.0, 3000.0, 1.0)
    p = supergaussian_pulse(g, 840.0, 7, 0.1, carrier_detuning=2.3, center_ns=1000.0)
    assert abs(p.measured_fwhm() - 840.0) <= 2 * g.dt
    inst = instantaneous_frequency(p)
    core = np.abs(p.times - 1000.0) < 300
    np.testing.assert_allclose(inst[core], 2.3, atol=1e-6)


def test_pi_phase_flips_sign():
    a = supergaussian_pulse(GRID, 840.0, 7, 0.1, 2.3, 0.0)
    b = supergaussian_pulse(GRID, 840.0, 7, 0.1, 2.3, math.pi)
    np.testing.assert_allclose(b.envelope, -a.envelope, atol=1e-15)


@pytest.mark.parametrize("n", [0, 2.5])
def test_supergaussian_order_validated(n):
    with pytest.raises(DomainError):
        supergaussian_pulse(GRID, 300.0, n, 0.1)


def test_sechyp_unchirped_is_real_sech():
    g = TimeGrid.from_step(-3000.0, 3000.0, 1.0)
    p = sechyp_pulse(g, 0.0, 5.0, 0.0, 1.0)
    assert np.max(np.abs(p.envelope.imag)) < 1e-15
    ref = 1.0 / np.cosh(5.0 * g.times * 1e-3)
    np.testing.assert_allclose(p.envelope.real / p.envelope.real.max(), ref, atol=1e-12)
    assert np.max(np.abs(instantaneous_frequency(p))) < 1e-9


def test_sechyp_chirp_excursion():
    g = TimeGrid.from_step(-3000.0, 3000.0, 1.0)
    beta, mu = 5.0, 4.0
    inst = instantaneous_frequency(sechyp_pulse(g, 0.0, beta, mu, 1.0))
    assert np.max(np.abs(inst)) == pytest.approx(mu * beta / (2 * math.pi), rel=1e-6)


@pytest.mark.parametrize("beta,mu", [(0.0, 1.0), (-1.0, 1.0), (5.0, -1.0)])
def test_sechyp_validation(beta, mu):
    with pytest.raises(DomainError):
        sechyp_pulse(TimeGrid.from_step(-3000.0, 3000.0, 1.0), 0.0, beta, mu, 1.0)


def test_preparation_schedule_steps_by_delta():
    g = TimeGrid.from_step(-3000.0, 3000.0, 1.0)
    pulses = comb_preparation_schedule([-1.2, 0.0, 1.2], g, 5.0, 0.0)
    centres = [float(np.median(instantaneous_frequency(p)[np.abs(g.times) < 200])) for p in pulses]
    assert np.diff(centres) == pytest.approx([1.2, 1.2], abs=1e-6)


def test_csv_roundtrip(tmp_path):
    p = gaussian_pulse(GRID, 200.0, 0.1, carrier_detuning=1.0)
    data = np.loadtxt(p.to_csv(tmp_path / "p.csv"), delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1] + 1j * data[:, 2], p.envelope, atol=1e-11)


@settings(max_examples=50, deadline=None)
@given(fwhm=st.floats(50.0, 800.0), n=st.integers(1, 8), n_bar=st.one_of(st.just(0.0), st.floats(1e-6, 5.0)),
       det=st.floats(-3.0, 3.0), phase=st.floats(-math.pi, math.pi))
def test_pulse_invariants(fwhm, n, n_bar, det, phase):
    p = supergaussian_pulse(GRID, fwhm, n, n_bar, det, phase)
    assert p.photon_number == pytest.approx(n_bar, rel=1e-9, abs=1e-15)
    if n_bar > 0:
        assert abs(p.measured_fwhm() - fwhm) <= 2 * GRID.dt
