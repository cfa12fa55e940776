"""Time-domain pulse envelopes (Gaussian, super-Gaussian, complex hyperbolic secant).

Envelopes are complex amplitudes in sqrt(photons/ns), normalised so that
``sum(|E|^2) * dt`` equals the mean photon number.  Carrier detunings are in
MHz relative to the comb centre and are applied as ``exp(+2j*pi*f*t)``,
which puts them at positive frequency under numpy's FFT sign convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, DomainError

LN2 = math.log(2.0)
# Intensity level (relative to peak) that must still lie inside the grid: exp(-4.5) is 3 sigma of a Gaussian.
_EDGE_LEVEL = 4.5


@dataclass(frozen=True)
class TimeGrid:
    t_start: float  # ns
    t_end: float  # ns
    n_points: int

    def __post_init__(self):
        if self.n_points < 2 or not self.t_end > self.t_start:
            raise ConfigurationError(f"invalid time grid [{self.t_start}, {self.t_end}] with {self.n_points} points")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / (self.n_points - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_points)

    @classmethod
    def from_step(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        """Grid with step ``dt`` that contains t = 0 as a sample when 0 lies in range."""
        k0 = math.floor(t_start / dt + 1e-9)
        k1 = math.ceil(t_end / dt - 1e-9)
        return cls(k0 * dt, k1 * dt, k1 - k0 + 1)

    @classmethod
    def for_echo(cls, fwhm_ns: float, delta_mhz: float, freq_span_mhz: float = 40.0,
                 dt: Optional[float] = None) -> "TimeGrid":
        """Window holding the input pulse and the first two echoes.

        Covers ``[-3*fwhm, max(2.5/delta, 1/delta + 3*fwhm)]``; the default
        step is ``1/(4*freq_span)``.
        """
        if dt is None:
            dt = 1000.0 / (4.0 * freq_span_mhz)
        period = 1000.0 / delta_mhz
        return cls.from_step(-3.0 * fwhm_ns, max(2.5 * period, period + 3.0 * fwhm_ns), dt)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, factor * (self.n_points - 1) + 1)


@dataclass(frozen=True)
class ShapeMeta:
    shape: str
    fwhm_ns: Optional[float] = None
    supergauss_n: Optional[int] = None
    phase_offset: float = 0.0
    center_ns: float = 0.0
    beta: Optional[float] = None  # sechyp, 1/us
    mu: Optional[float] = None  # sechyp chirp


@dataclass(frozen=True, eq=False)
class Pulse:
    grid: TimeGrid
    envelope: np.ndarray
    carrier_detuning: float = 0.0
    shape_meta: ShapeMeta = field(default_factory=lambda: ShapeMeta("arbitrary"))

    def __post_init__(self):
        env = np.array(self.envelope, dtype=complex)
        if env.shape != (self.grid.n_points,):
            raise ConfigurationError("envelope length does not match the time grid")
        env.setflags(write=False)
        object.__setattr__(self, "envelope", env)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.envelope) ** 2

    @property
    def photon_number(self) -> float:
        return float(np.sum(self.intensity) * self.grid.dt)

    def energy_between(self, t0: float, t1: float) -> float:
        t = self.times
        mask = (t >= t0) & (t <= t1)
        return float(np.sum(self.intensity[mask]) * self.grid.dt)

    def measured_fwhm(self) -> float:
        return measure_fwhm(self.times, self.intensity)

    def with_envelope(self, envelope, **meta_changes) -> "Pulse":
        meta = replace(self.shape_meta, **meta_changes) if meta_changes else self.shape_meta
        return Pulse(self.grid, envelope, self.carrier_detuning, meta)

    def spectrum(self):
        """Return (frequencies in MHz, |E(f)|^2) on the pulse's own grid, fft-shifted."""
        n = self.grid.n_points
        freqs = np.fft.fftshift(np.fft.fftfreq(n, self.grid.dt)) * 1e3
        spec = np.abs(np.fft.fftshift(np.fft.fft(self.envelope))) ** 2
        return freqs, spec

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([self.times, self.envelope.real, self.envelope.imag])
        np.savetxt(path, data, delimiter=",", header="t_ns,re,im", comments="", fmt="%.10g")
        return path


def measure_fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum between the outermost half-maximum crossings."""
    y = np.asarray(y, dtype=float)
    peak = y.max()
    if peak <= 0:
        return 0.0
    above = np.nonzero(y >= peak / 2.0)[0]
    i0, i1 = above[0], above[-1]
    half = peak / 2.0

    def cross(a, b):
        if y[b] == y[a]:
            return x[a]
        return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a])

    left = cross(i0 - 1, i0) if i0 > 0 else x[0]
    right = cross(i1, i1 + 1) if i1 < len(y) - 1 else x[-1]
    return float(right - left)


def _finish(grid, amplitude, n_bar, carrier_detuning, phase, meta) -> Pulse:
    if n_bar < 0:
        raise DomainError(f"mean photon number must be >= 0, got {n_bar}")
    raw = np.sum(np.abs(amplitude) ** 2) * grid.dt
    scale = math.sqrt(n_bar / raw) if n_bar > 0 else 0.0
    carrier = np.exp(1j * (2.0 * math.pi * carrier_detuning * grid.times * 1e-3 + phase))
    return Pulse(grid, scale * amplitude * carrier, carrier_detuning, meta)


def _check_fits(grid: TimeGrid, center: float, half_extent: float, fwhm: float):
    if center - half_extent < grid.t_start or center + half_extent > grid.t_end:
        raise ConfigurationError(
            f"pulse centred at {center} ns with half-extent {half_extent:.4g} ns is truncated by "
            f"the grid [{grid.t_start}, {grid.t_end}] ns"
        )
    if grid.dt > fwhm / 4.0:
        raise ConfigurationError(f"time step {grid.dt:.4g} ns too coarse for a {fwhm} ns pulse")


def gaussian_pulse(grid: TimeGrid, fwhm_ns: float, n_bar: float, carrier_detuning: float = 0.0,
                   phase: float = 0.0, center_ns: float = 0.0) -> Pulse:
    """Transform-limited Gaussian with intensity FWHM ``fwhm_ns``."""
    return supergaussian_pulse(grid, fwhm_ns, 1, n_bar, carrier_detuning, phase, center_ns)


def supergaussian_pulse(grid: TimeGrid, fwhm_ns: float, n: int, n_bar: float,
                        carrier_detuning: float = 0.0, phase: float = 0.0,
                        center_ns: float = 0.0) -> Pulse:
    """Super-Gaussian of order ``n``: intensity ``exp(-ln2 * (2(t-t0)/fwhm)^(2n))``.

    The intensity FWHM equals ``fwhm_ns`` exactly for every order; ``n = 1``
    is the ordinary Gaussian.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"super-Gaussian order must be an integer >= 1, got {n}")
    if not fwhm_ns > 0:
        raise DomainError(f"fwhm must be > 0, got {fwhm_ns}")
    n = int(n)
    half_extent = 0.5 * fwhm_ns * (_EDGE_LEVEL / LN2) ** (1.0 / (2 * n))
    _check_fits(grid, center_ns, half_extent, fwhm_ns)
    u = 2.0 * (grid.times - center_ns) / fwhm_ns
    amplitude = np.exp(-0.5 * LN2 * u ** (2 * n))
    shape = "gaussian" if n == 1 else "supergaussian"
    meta = ShapeMeta(shape, fwhm_ns=fwhm_ns, supergauss_n=n, phase_offset=phase, center_ns=center_ns)
    return _finish(grid, amplitude, n_bar, carrier_detuning, phase, meta)


def sechyp_pulse(grid: TimeGrid, center_freq: float, beta: float, mu: float, n_bar: float,
                 center_ns: float = 0.0) -> Pulse:
    """Complex hyperbolic secant ``sech(beta*t)^(1 + i*mu)``.

    ``beta`` is in 1/us and ``mu`` is dimensionless; the instantaneous
    frequency sweeps ``-mu*beta/(2*pi)*tanh(beta*t)`` MHz around
    ``center_freq``.  Only the envelope is produced (no population dynamics).
    """
    if not beta > 0:
        raise DomainError(f"sechyp width parameter beta must be > 0, got {beta}")
    if mu < 0:
        raise DomainError(f"sechyp chirp mu must be >= 0, got {mu}")
    fwhm_ns = 2.0 * math.acosh(math.sqrt(2.0)) / beta * 1e3
    half_extent = math.acosh(math.exp(_EDGE_LEVEL / 2.0)) / beta * 1e3
    _check_fits(grid, center_ns, half_extent, fwhm_ns)
    bt = beta * (grid.times - center_ns) * 1e-3
    # log(sech x) written to stay finite for large |x|
    log_sech = -np.abs(bt) - np.log1p(np.exp(-2.0 * np.abs(bt))) + LN2
    amplitude = np.exp((1.0 + 1j * mu) * log_sech)
    meta = ShapeMeta("sechyp", fwhm_ns=fwhm_ns, center_ns=center_ns, beta=beta, mu=mu)
    return _finish(grid, amplitude, n_bar, center_freq, 0.0, meta)


def instantaneous_frequency(pulse: Pulse) -> np.ndarray:
    """d(phase)/dt / 2pi in MHz (central differences)."""
    phase = np.unwrap(np.angle(pulse.envelope))
    return np.gradient(phase, pulse.grid.dt) / (2.0 * math.pi) * 1e3


def comb_preparation_schedule(centers_mhz, grid: TimeGrid, beta: float, mu: float,
                              n_bar: float = 1.0) -> List[Pulse]:
    """One sechyp burn pulse per comb tooth, stepping the centre frequency tooth by tooth."""
    return [sechyp_pulse(grid, float(c), beta, mu, n_bar) for c in centers_mhz]
