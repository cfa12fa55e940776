"""Linear forward propagation of weak pulses through a spectral profile.

The medium acts as a filter ``t(f) = exp(-alphaL(f)/2 + i*phi(f))``.  The
phase ``phi`` is the Kramers-Kronig partner of the absorption, built with
the folded-cepstrum (minimum-phase) construction: the inverse FFT of
``log|t|`` is folded onto non-negative times and transformed back.  The
resulting impulse response vanishes before t = 0 up to aliasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AnalysisError, ConfigurationError, DomainError
from .pulses import Pulse
from .spectral import FrequencyGrid, SpectralProfile

# Input energy allowed outside the transmitted window before the windows count as overlapping.
WINDOW_LEAK_LIMIT = 1e-2
# Wrapped (pre-t=0) impulse-response energy tolerated before the default FFT length is doubled.
PRECURSOR_TOLERANCE = 1e-7
MAX_FFT_DOUBLINGS = 4


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Field transmission sampled on FFT frequencies (ascending order in ``grid``)."""

    grid: FrequencyGrid
    amplitude_response: np.ndarray
    dt: float  # ns, sample step of the paired time axis
    dispersion: bool = True

    @property
    def n_fft(self) -> int:
        return self.grid.n_points

    def _fft_order(self) -> np.ndarray:
        return np.fft.ifftshift(self.amplitude_response)

    def impulse_response(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (t in ns, h) with t running from -T/2 to T/2."""
        h = np.fft.ifft(self._fft_order())
        t = (np.arange(self.n_fft) - self.n_fft // 2) * self.dt
        return t, np.fft.fftshift(h)

    def precursor_fraction(self) -> float:
        """Share of impulse-response energy at t < 0."""
        t, h = self.impulse_response()
        e = np.abs(h) ** 2
        return float(e[t < 0].sum() / e.sum())


@dataclass(frozen=True)
class EchoResult:
    output_pulse: Pulse
    echo_time: float  # ns
    echo_window: Tuple[float, float]
    transmitted_window: Tuple[float, float]
    efficiency: float
    transmitted_fraction: float
    decoherence_factor: float = 1.0


def _next_pow2(x: float) -> int:
    return 1 << max(4, math.ceil(math.log2(max(x, 1.0))))


def _structure_extent(profile: SpectralProfile) -> float:
    """Width of the comb teeth, or of the region where alpha_L departs from its far-field values."""
    if profile.comb is not None and profile.comb_centers.size:
        c = profile.comb_centers
        return float(c.max() - c.min() + 3.0 * profile.comb.gamma_fwhm)
    a = profile.alpha_L
    far = np.linspace(a[0], a[-1], a.size)
    dev = np.nonzero(np.abs(a - far) > 1e-9 * max(a.max(), 1e-300))[0]
    if dev.size == 0:
        return 0.0
    nu = profile.frequencies
    return float(nu[dev[-1]] - nu[dev[0]])


def make_transfer_function(profile: SpectralProfile, dt: Optional[float] = None,
                           n_fft: Optional[int] = None, dispersion: bool = True) -> TransferFunction:
    """Build the causal field transmission of ``profile``.

    Parameters
    ----------
    profile:
        Optical depth versus detuning.
    dt:
        Time step (ns) of the pulses that will be propagated.  Defaults to
        ``1/(4*span)`` so the FFT bandwidth is four times the profile span.
    n_fft:
        FFT length; defaults to the smallest power of two whose frequency
        spacing is no coarser than the profile resolution, doubled (up to
        ``MAX_FFT_DOUBLINGS`` times) while the wrapped precursor energy
        exceeds ``PRECURSOR_TOLERANCE``.  Hard-edged teeth have slowly
        decaying responses that need the longer transform.
    dispersion:
        If False the phase is dropped (pure absorption filter, not causal).
    """
    span = profile.grid.span
    if dt is None:
        dt = 1000.0 / (4.0 * span)
    if n_fft is None:
        n_fft = _next_pow2(1000.0 / (dt * profile.grid.resolution))
        tf = _transfer_function(profile, dt, n_fft, dispersion)
        for _ in range(MAX_FFT_DOUBLINGS if dispersion else 0):
            if tf.precursor_fraction() <= PRECURSOR_TOLERANCE:
                break
            tf = _transfer_function(profile, dt, 2 * tf.n_fft, dispersion)
        return tf
    return _transfer_function(profile, dt, n_fft, dispersion)


def _transfer_function(profile: SpectralProfile, dt: float, n_fft: int, dispersion: bool) -> TransferFunction:
    fft_span = 1000.0 / dt
    extent = _structure_extent(profile)
    if fft_span < 4.0 * extent:
        raise ConfigurationError(
            f"FFT bandwidth {fft_span:.4g} MHz is below 4x the comb extent {extent:.4g} MHz"
        )
    freqs = np.fft.fftfreq(n_fft, dt) * 1e3
    log_mag = -0.5 * profile.sample(freqs)
    if dispersion:
        ceps = np.fft.ifft(log_mag)
        half = n_fft // 2
        folded = np.zeros_like(ceps)
        folded[0] = ceps[0]
        folded[1:half] = 2.0 * ceps[1:half]
        folded[half] = ceps[half]
        response = np.exp(np.fft.fft(folded))
    else:
        response = np.exp(log_mag).astype(complex)
    df = 1000.0 / (n_fft * dt)
    grid = FrequencyGrid.fft_native(n_fft, df)
    return TransferFunction(grid, np.fft.fftshift(response), dt, dispersion)


def propagate(pulse: Pulse, tf: TransferFunction) -> Pulse:
    """Filter ``pulse`` through ``tf``; the result lives on the input's time grid."""
    n = pulse.grid.n_points
    if abs(pulse.grid.dt - tf.dt) > 1e-9 * tf.dt:
        raise ConfigurationError(f"pulse step {pulse.grid.dt} ns does not match transfer-function step {tf.dt} ns")
    if n > tf.n_fft:
        raise ConfigurationError(f"pulse has {n} samples but the transfer function only {tf.n_fft}")
    padded = np.zeros(tf.n_fft, dtype=complex)
    padded[:n] = pulse.envelope
    out = np.fft.ifft(np.fft.fft(padded) * tf._fft_order())[:n]
    return pulse.with_envelope(out)


def echo_windows(pulse: Pulse, delta: float) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """(transmitted, echo) windows of half-width ``min(1/(2*delta), 3*fwhm)``."""
    period = 1000.0 / delta
    fwhm = pulse.shape_meta.fwhm_ns or pulse.measured_fwhm()
    hw = min(period / 2.0, 3.0 * fwhm)
    c = pulse.shape_meta.center_ns
    return (c - hw, c + hw), (c + period - hw, c + period + hw)


def echo_efficiency(input_pulse: Pulse, output: Pulse, delta: float,
                    t2_us: Optional[float] = None) -> EchoResult:
    """Echo energy over total input energy, plus the directly transmitted share.

    ``t2_us`` applies the optical-coherence decay ``exp(-2*t_echo/T2)`` to the
    echo energy; None disables it.
    """
    if not delta > 0:
        raise DomainError("comb spacing must be > 0")
    e_in = input_pulse.photon_number
    if e_in <= 0:
        raise AnalysisError("input pulse carries no energy")
    trans_win, echo_win = echo_windows(input_pulse, delta)
    leak = 1.0 - input_pulse.energy_between(*trans_win) / e_in
    if leak > WINDOW_LEAK_LIMIT:
        raise AnalysisError(
            f"{leak:.2%} of the input lies outside its +/-{(trans_win[1] - trans_win[0]) / 2:.4g} ns window; "
            "transmitted and echo windows overlap (pulse too long for this comb spacing)"
        )
    if output.grid.t_end < echo_win[1] or output.grid.t_start > trans_win[0]:
        raise ConfigurationError(f"output grid does not cover the echo window {echo_win} ns")

    period_us = 1.0 / delta
    decay = math.exp(-2.0 * period_us / t2_us) if t2_us else 1.0
    t = output.times
    in_echo = (t >= echo_win[0]) & (t <= echo_win[1])
    echo_time = float(t[in_echo][np.argmax(output.intensity[in_echo])])
    eff = output.energy_between(*echo_win) / e_in * decay
    trans = output.energy_between(*trans_win) / e_in
    return EchoResult(output, echo_time, echo_win, trans_win, eff, trans, decay)


def simulate_echo(profile: SpectralProfile, pulse: Pulse, t2_us: Optional[float] = None,
                  dispersion: bool = True) -> EchoResult:
    """Convenience wrapper: transfer function, propagation and echo analysis."""
    if profile.comb is None:
        raise ConfigurationError("profile carries no comb parameters (needed for the echo delay)")
    tf = make_transfer_function(profile, dt=pulse.grid.dt, dispersion=dispersion)
    return echo_efficiency(pulse, propagate(pulse, tf), profile.comb.delta, t2_us)


def analytic_efficiency(alphaL, F):
    """Closed-form AFC storage efficiency ``(1 - exp(-alphaL/F))**2 * exp(-7/F**2)``."""
    a = np.asarray(alphaL, dtype=float)
    f = np.asarray(F, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise DomainError("alphaL must be >= 0")
    if np.any(f < 1) or np.any(np.isnan(f)):
        raise DomainError("finesse must be >= 1")
    eta = (1.0 - np.exp(-a / f)) ** 2 * np.exp(-7.0 / f**2)
    return float(eta) if eta.ndim == 0 else eta


@dataclass(frozen=True)
class FinesseOptimum:
    F_opt: float
    eta_opt: float
    F_numeric: Optional[float] = None
    eta_numeric: Optional[float] = None


def optimal_finesse(alphaL: float, profile_builder: Optional[Callable[[float], SpectralProfile]] = None,
                    pulse: Optional[Pulse] = None, numeric_bounds: Tuple[float, float] = (1.5, 20.0),
                    t2_us: Optional[float] = None) -> FinesseOptimum:
    """Finesse maximising the closed-form efficiency on [1, 100].

    If ``profile_builder`` (finesse -> profile) and ``pulse`` are given, the
    optimum of the propagated efficiency within ``numeric_bounds`` is also
    located.
    """
    if not alphaL > 0:
        raise DomainError("alphaL must be > 0")
    res = minimize_scalar(lambda F: -analytic_efficiency(alphaL, F), bounds=(1.0, 100.0),
                          method="bounded", options={"xatol": 1e-10, "maxiter": 500})
    F_opt = float(res.x)
    out = FinesseOptimum(F_opt, analytic_efficiency(alphaL, F_opt))
    if profile_builder is None:
        return out
    if pulse is None:
        raise ConfigurationError("a pulse is required for the propagated optimum")

    def neg(F):
        return -simulate_echo(profile_builder(F), pulse, t2_us).efficiency

    num = minimize_scalar(neg, bounds=numeric_bounds, method="bounded", options={"xatol": 1e-3})
    return FinesseOptimum(F_opt, out.eta_opt, float(num.x), float(-num.fun))


@dataclass(frozen=True)
class ForwardCap:
    eta_max: float
    alphaL_at_max: float
    effective_depth_at_max: Optional[float]
    alphaL: np.ndarray
    eta: np.ndarray


def max_forward_efficiency(profile_builder: Callable[[float], SpectralProfile], alphaL_range: Sequence[float],
                           pulse: Pulse, t2_us: Optional[float] = None) -> ForwardCap:
    """Sweep the tooth depth, then refine the peak of the propagated efficiency.

    ``t2_us`` defaults to None so the cap reflects re-absorption only.
    """
    grid = np.asarray(sorted(alphaL_range), dtype=float)
    if grid.size < 3:
        raise AnalysisError("need at least three sweep points to bracket a maximum")
    etas = np.array([simulate_echo(profile_builder(a), pulse, t2_us).efficiency for a in grid])
    k = int(np.argmax(etas))
    if k == 0 or k == grid.size - 1:
        raise AnalysisError(
            f"sweep maximum sits at the range edge alphaL = {grid[k]:g}; widen alphaL_range"
        )
    res = minimize_scalar(lambda a: -simulate_echo(profile_builder(a), pulse, t2_us).efficiency,
                          bounds=(grid[k - 1], grid[k + 1]), method="bounded", options={"xatol": 1e-3})
    a_best, eta_best = float(res.x), float(-res.fun)
    if eta_best < etas[k]:
        a_best, eta_best = float(grid[k]), float(etas[k])
    comb = profile_builder(a_best).comb
    d_eff = comb.effective_depth if comb is not None else None
    return ForwardCap(eta_best, a_best, d_eff, grid, etas)


def interference_trace(echo: Pulse, probe: Pulse) -> np.ndarray:
    """Detected intensity ``|E_echo + E_probe|^2`` on the shared time grid."""
    if echo.grid != probe.grid:
        raise ConfigurationError("echo and probe must share a time grid")
    return np.abs(echo.envelope + probe.envelope) ** 2
