"""Discrete-ion model of the collective AFC state.

After absorption the ensemble holds ``sum_j c_j exp(i(2*pi*delta_j*t - k*z_j)) |..e_j..>``.
In the forward direction the emitted field picks up ``exp(+i*k*z_j)``, so the
spatial phase cancels and the collective emission is set by the detunings
alone.  Two oracles are built on this picture:

* :func:`ensemble_echo` - the rephasing trace ``|sum_j c_j e^{i 2 pi delta_j t}|^2``;
* :func:`ensemble_propagate` - forward propagation through the ions slice by
  slice in z, using their free-induction response directly in the time
  domain (no Hilbert transform, no FFT).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .pulses import Pulse
from .spectral import SpectralProfile

_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class IonEnsemble:
    detunings: np.ndarray  # MHz
    positions: np.ndarray  # fraction of crystal length, [0, 1)
    weights: np.ndarray  # complex c_j, sum |c_j|^2 = 1
    wavenumber: float = 0.0  # spatial phase per crystal length (rad)
    seed: Optional[int] = None

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        if d.size == 0:
            raise DomainError("ensemble is empty")
        z = np.asarray(self.positions, dtype=float)
        c = np.asarray(self.weights, dtype=complex)
        if not (d.shape == z.shape == c.shape):
            raise ConfigurationError("detunings, positions and weights must have equal length")
        norm = math.sqrt(float(np.sum(np.abs(c) ** 2)))
        if norm == 0:
            raise DomainError("ensemble weights are all zero")
        object.__setattr__(self, "detunings", d)
        object.__setattr__(self, "positions", z)
        object.__setattr__(self, "weights", c / norm)

    def __len__(self):
        return self.detunings.size


def sample_ensemble(profile: SpectralProfile, n_ions: int, seed: int = 0,
                    wavenumber: float = 2.0 * math.pi * 1e4) -> IonEnsemble:
    """Draw ``n_ions`` detunings with density proportional to ``profile.alpha_L`` (rejection sampling).

    Positions are uniform along the crystal and all ions carry equal weight
    ``exp(-i*k*z_j)/sqrt(N)``.
    """
    if n_ions < 1:
        raise DomainError("need at least one ion")
    peak = float(profile.alpha_L.max())
    if peak <= 0:
        raise DomainError("profile has no absorption to sample from")
    rng = np.random.default_rng(seed)
    nu = profile.frequencies
    lo, hi = nu[0], nu[-1]
    # acceptance rate is mean/peak of the profile
    rate = max(float(profile.alpha_L.mean()) / peak, 1e-4)
    accepted = []
    have = 0
    while have < n_ions:
        batch = int(1.2 * (n_ions - have) / rate) + 64
        x = rng.uniform(lo, hi, batch)
        keep = x[rng.uniform(0.0, peak, batch) < profile.sample(x)]
        accepted.append(keep)
        have += keep.size
    det = np.concatenate(accepted)[:n_ions]
    z = rng.uniform(0.0, 1.0, n_ions)
    c = np.exp(-1j * wavenumber * z) / math.sqrt(n_ions)
    return IonEnsemble(det, z, c, wavenumber, seed)


def discrete_comb_ensemble(delta: float, m_values, wavenumber: float = 0.0) -> IonEnsemble:
    """Idealised comb: one ion per tooth at ``m * delta``, equal weights, z = 0."""
    m = np.asarray(m_values, dtype=float)
    n = m.size
    return IonEnsemble(m * delta, np.zeros(n), np.full(n, 1.0 / math.sqrt(max(n, 1)), dtype=complex), wavenumber)


def excite(ensemble: IonEnsemble, pulse: Pulse) -> IonEnsemble:
    """Weight each ion by the pulse's spectral amplitude at its detuning."""
    t_us = pulse.times * 1e-3
    amp = np.empty(len(ensemble), dtype=complex)
    for s in range(0, len(ensemble), _CHUNK):
        d = ensemble.detunings[s:s + _CHUNK]
        amp[s:s + _CHUNK] = np.exp(-2j * math.pi * np.outer(d, t_us)) @ pulse.envelope
    return IonEnsemble(ensemble.detunings, ensemble.positions, ensemble.weights * amp,
                       ensemble.wavenumber, ensemble.seed)


def _forward_sum(ensemble: IonEnsemble, times_ns: np.ndarray, weights: np.ndarray) -> np.ndarray:
    t_us = np.asarray(times_ns, dtype=float) * 1e-3
    total = np.zeros(t_us.size, dtype=complex)
    for s in range(0, len(ensemble), _CHUNK):
        d = ensemble.detunings[s:s + _CHUNK]
        total += weights[s:s + _CHUNK] @ np.exp(2j * math.pi * np.outer(d, t_us))
    return total


def ensemble_echo(ensemble: IonEnsemble, times_ns) -> np.ndarray:
    """Forward collective emission ``|sum_j c_j e^{ikz_j} e^{2 pi i delta_j t}|^2``.

    Normalised by ``(sum_j |c_j|)^2`` so that an ensemble with all phases
    aligned gives exactly 1.
    """
    w = ensemble.weights * np.exp(1j * ensemble.wavenumber * ensemble.positions)
    field = _forward_sum(ensemble, times_ns, w)
    return np.abs(field) ** 2 / float(np.sum(np.abs(w))) ** 2


def ensemble_propagate(ensemble: IonEnsemble, pulse: Pulse, integrated_depth: float,
                       n_slices: int = 200) -> Pulse:
    """Forward-propagate ``pulse`` through the ions, slice by slice along z.

    Each ion contributes the causal free-induction response
    ``D |c_j|^2 exp(2 pi i delta_j t)`` (t >= 0), where ``D`` is the
    frequency-integrated optical depth (MHz).  Within a slice the field update
    ``E -> E - R*E + R*(R*E)/2`` is applied with a trapezoidal causal
    convolution on the pulse's own time grid.
    """
    if integrated_depth < 0:
        raise DomainError("integrated depth must be >= 0")
    n = pulse.grid.n_points
    dt_us = pulse.grid.dt * 1e-3
    lags = np.arange(n) * pulse.grid.dt
    trap = np.ones(n)
    trap[0] = 0.5
    edges = np.linspace(0.0, 1.0, n_slices + 1)
    slot = np.clip(np.searchsorted(edges, ensemble.positions, side="right") - 1, 0, n_slices - 1)
    strength = integrated_depth * np.abs(ensemble.weights) ** 2

    field = np.array(pulse.envelope, dtype=complex)
    for k in range(n_slices):
        members = np.nonzero(slot == k)[0]
        if members.size == 0:
            continue
        sub = IonEnsemble(ensemble.detunings[members], ensemble.positions[members],
                          np.ones(members.size, dtype=complex))
        kernel = _forward_sum(sub, lags, strength[members].astype(complex)) * trap * dt_us
        once = np.convolve(kernel, field)[:n]
        twice = np.convolve(kernel, once)[:n]
        field = field - once + 0.5 * twice
    return pulse.with_envelope(field)
