"""Spectral absorption structures: inhomogeneous line, spectral pit and AFC comb.

Units: detunings and widths in MHz, optical depth (alpha*L) dimensionless.
All profiles are centred on the storage-pulse carrier (0 MHz detuning).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ConstraintError, DomainError

PEAK_SHAPES = ("gaussian", "lorentzian", "square")

# Mean optical depth of one comb period, in units of alphaL/F.
_SHAPE_AREA = {
    "gaussian": math.sqrt(math.pi / (4.0 * math.log(2.0))),
    "lorentzian": math.pi / 2.0,
    "square": 1.0,
}

PIT_EDGE_MHZ = 1.0
PROBE_WINDOW_MHZ = 1.0
# Optical depth above the pit floor still counted as "transparent".
TRANSPARENT_OD = 0.01


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform detuning axis, ``n_points`` samples spanning ``span`` MHz."""

    center_detuning: float = 0.0
    span: float = 40.0
    n_points: int = 2**14

    def __post_init__(self):
        if not self.span > 0:
            raise ConfigurationError(f"frequency grid span must be > 0, got {self.span}")
        if self.n_points < 16:
            raise ConfigurationError(f"frequency grid needs >= 16 points, got {self.n_points}")

    @property
    def resolution(self) -> float:
        return self.span / (self.n_points - 1)

    @property
    def frequencies(self) -> np.ndarray:
        half = self.span / 2.0
        return self.center_detuning + np.linspace(-half, half, self.n_points)

    @classmethod
    def fft_native(cls, n_points: int, spacing: float) -> "FrequencyGrid":
        """Grid matching ``fftshift(fftfreq(n_points)) * n_points * spacing``."""
        return cls(center_detuning=-spacing / 2.0 if n_points % 2 == 0 else 0.0,
                   span=(n_points - 1) * spacing, n_points=n_points)

    def refined(self, factor: int = 2) -> "FrequencyGrid":
        return FrequencyGrid(self.center_detuning, self.span, factor * (self.n_points - 1) + 1)


@dataclass(frozen=True)
class MaterialParams:
    """Host crystal and preparation limits (Pr:YSO defaults).

    ``inhomogeneous_alphaL`` is the optical depth of the unpumped line at
    line centre.  It defaults to 0, which makes the emptied pit an exactly
    lossless, dispersion-free reference path.  Set ``probe_window_offset``
    to None to drop the transparent-window requirement.
    """

    inhomogeneous_fwhm: float = 5000.0
    pit_width: float = 18.0
    excited_splitting_limit: float = 4.6
    optical_T2: float = 100.0  # us
    probe_window_offset: Optional[float] = 2.3
    inhomogeneous_alphaL: float = 0.0

    def __post_init__(self):
        if not self.optical_T2 > 0:
            raise ConfigurationError("optical_T2 must be > 0")
        if self.pit_width < 0 or self.inhomogeneous_fwhm <= 0:
            raise ConfigurationError("pit_width must be >= 0 and inhomogeneous_fwhm > 0")
        if self.pit_width >= self.inhomogeneous_fwhm:
            raise ConfigurationError("pit must be much narrower than the inhomogeneous line")
        if self.inhomogeneous_alphaL < 0:
            raise ConfigurationError("inhomogeneous_alphaL must be >= 0")


@dataclass(frozen=True)
class CombParams:
    """Atomic frequency comb: spacing ``delta``, tooth FWHM ``gamma_fwhm``, tooth depth ``alphaL``.

    ``n_peaks=None`` means "fill the pit": the largest tooth count allowed by
    the material (see :func:`resolve_n_peaks`).
    """

    delta: float
    gamma_fwhm: float
    alphaL: float
    n_peaks: Optional[int] = None
    peak_shape: str = "gaussian"
    background_alphaL: float = 0.0

    def __post_init__(self):
        if self.peak_shape not in PEAK_SHAPES:
            raise ConfigurationError(f"peak_shape must be one of {PEAK_SHAPES}, got {self.peak_shape!r}")
        if not self.delta > 0:
            raise ConstraintError(f"comb spacing must be > 0, got {self.delta}")
        if not self.gamma_fwhm > 0:
            raise DomainError(f"gamma_fwhm must be > 0, got {self.gamma_fwhm}")
        if self.alphaL < 0 or self.background_alphaL < 0:
            raise ConstraintError("alphaL and background_alphaL must be >= 0")
        if self.n_peaks is not None and self.n_peaks < 1:
            raise ConstraintError(f"n_peaks must be >= 1, got {self.n_peaks}")

    @property
    def finesse(self) -> float:
        return finesse(self)

    @property
    def effective_depth(self) -> float:
        """Optical depth averaged over one comb period."""
        return self.alphaL * _SHAPE_AREA[self.peak_shape] / self.finesse


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    grid: FrequencyGrid
    alpha_L: np.ndarray
    comb: Optional[CombParams] = None
    material: Optional[MaterialParams] = None
    comb_centers: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        alpha = np.array(self.alpha_L, dtype=float)
        if alpha.shape != (self.grid.n_points,):
            raise ConfigurationError("alpha_L length does not match the frequency grid")
        if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
            raise DomainError("optical depth must be finite and non-negative")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha_L", alpha)

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.frequencies

    def sample(self, freqs) -> np.ndarray:
        """Linear interpolation; values beyond the grid hold the edge values."""
        return np.interp(freqs, self.frequencies, self.alpha_L)

    def integrated_depth(self) -> float:
        """Integral of alpha_L over detuning (MHz)."""
        return float(np.trapezoid(self.alpha_L, self.frequencies))

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([self.frequencies, self.alpha_L])
        np.savetxt(path, data, delimiter=",", header="detuning_MHz,alphaL", comments="", fmt="%.10g")
        return path


def finesse(params: CombParams) -> float:
    if params.gamma_fwhm == 0:
        raise DomainError("finesse undefined for zero peak width")
    return params.delta / params.gamma_fwhm


def _inhomogeneous_line(material: MaterialParams, nu: np.ndarray) -> np.ndarray:
    return material.inhomogeneous_alphaL * np.exp(-4.0 * math.log(2.0) * (nu / material.inhomogeneous_fwhm) ** 2)


def build_pit(material: MaterialParams, grid: FrequencyGrid, floor: float = 0.0) -> SpectralProfile:
    """Empty a ``pit_width`` region around zero detuning down to ``floor``.

    The pit walls rise to the inhomogeneous line through a raised-cosine band
    of :data:`PIT_EDGE_MHZ` placed outside ``|nu| = pit_width/2``.
    """
    width = material.pit_width
    if floor < 0:
        raise ConstraintError("pit floor must be >= 0")
    if width > grid.span:
        raise ConfigurationError(f"pit width {width} MHz exceeds grid span {grid.span} MHz")
    if width > 0 and grid.resolution > width / 32.0:
        raise ConfigurationError(
            f"grid resolution {grid.resolution:.4g} MHz too coarse for a {width} MHz pit (need <= {width / 32:.4g})"
        )
    nu = grid.frequencies
    line = _inhomogeneous_line(material, nu)
    if width == 0:
        return SpectralProfile(grid, np.maximum(line, floor), material=material)

    x = np.clip((np.abs(nu) - width / 2.0) / PIT_EDGE_MHZ, 0.0, 1.0)
    edge = 0.5 * (1.0 - np.cos(np.pi * x))
    alpha = floor + (np.maximum(line, floor) - floor) * edge
    return SpectralProfile(grid, alpha, material=material)


def _tooth(shape: str, x: np.ndarray, gamma: float) -> np.ndarray:
    """Unit-height tooth of FWHM ``gamma`` evaluated at offsets ``x``."""
    if shape == "gaussian":
        return np.exp(-4.0 * math.log(2.0) * (x / gamma) ** 2)
    if shape == "lorentzian":
        hw = gamma / 2.0
        return hw**2 / (x**2 + hw**2)
    return (np.abs(x) <= gamma / 2.0).astype(float)


def _comb_fits(delta, gamma, n, material) -> Optional[str]:
    """Return a description of the first violated inequality, or None."""
    extent = delta * (n - 1)
    if extent >= material.excited_splitting_limit:
        return (f"delta*(N-1) = {extent:g} MHz >= excited_splitting_limit "
                f"{material.excited_splitting_limit:g} MHz")
    if extent + 3.0 * gamma > material.pit_width:
        return f"delta*(N-1) + 3*gamma = {extent + 3 * gamma:g} MHz > pit_width {material.pit_width:g} MHz"
    offset = material.probe_window_offset
    if offset is not None:
        # outermost tooth edge (1.5 FWHM) must stay clear of the probe window
        reach = extent / 2.0 + 1.5 * gamma
        if reach > abs(offset) - PROBE_WINDOW_MHZ / 2.0 - 1e-9:
            return (f"comb half-extent {reach:g} MHz reaches the probe window "
                    f"{abs(offset):g} +/- {PROBE_WINDOW_MHZ / 2:g} MHz")
    return None


def resolve_n_peaks(params: CombParams, material: MaterialParams) -> int:
    """Tooth count: ``params.n_peaks`` if set, otherwise the largest count that fits."""
    if params.n_peaks is not None:
        return params.n_peaks
    n = 1
    while _comb_fits(params.delta, params.gamma_fwhm, n + 1, material) is None:
        n += 1
    return n


def build_comb(params: CombParams, material: MaterialParams, grid: FrequencyGrid) -> SpectralProfile:
    """Paint ``N`` teeth of depth ``alphaL`` and spacing ``delta`` inside the pit.

    Tooth amplitudes are solved so that the total optical depth at every tooth
    centre equals ``alphaL`` (overlapping Lorentzian wings would otherwise
    raise the maxima).

    Raises
    ------
    ConstraintError
        If the comb violates ``delta*(N-1) < excited_splitting_limit``, does not
        fit in the pit, or covers the probe window.
    ConfigurationError
        If the grid does not resolve the teeth (resolution > gamma/8).
    """
    if params.finesse <= 1.0:
        raise ConstraintError(f"finesse delta/gamma = {params.finesse:g} must exceed 1")
    n = resolve_n_peaks(params, material)
    problem = _comb_fits(params.delta, params.gamma_fwhm, n, material)
    if problem is not None:
        raise ConstraintError(problem)
    if grid.resolution > params.gamma_fwhm / 8.0:
        raise ConfigurationError(
            f"grid resolution {grid.resolution:.4g} MHz exceeds gamma/8 = {params.gamma_fwhm / 8:.4g} MHz"
        )

    pit = build_pit(material, grid, floor=params.background_alphaL)
    nu = grid.frequencies
    centers = (np.arange(n) - (n - 1) / 2.0) * params.delta
    base = np.interp(centers, nu, pit.alpha_L)
    coupling = _tooth(params.peak_shape, centers[:, None] - centers[None, :], params.gamma_fwhm)
    amps = np.linalg.solve(coupling, np.maximum(params.alphaL - base, 0.0))
    amps = np.maximum(amps, 0.0)

    teeth = np.zeros_like(nu)
    for c, a in zip(centers, amps):
        teeth += a * _tooth(params.peak_shape, nu - c, params.gamma_fwhm)
    return SpectralProfile(grid, pit.alpha_L + teeth, comb=params, material=material, comb_centers=centers)


def probe_window_is_clear(profile: SpectralProfile, offset: float, width: float = PROBE_WINDOW_MHZ) -> bool:
    """True if the optical depth within ``offset +/- width/2`` stays at the pit floor."""
    nu = profile.frequencies
    floor = profile.comb.background_alphaL if profile.comb is not None else 0.0
    inside = np.abs(nu - offset) <= width / 2.0
    if not np.any(inside):
        raise ConfigurationError(f"probe window at {offset} MHz lies outside the frequency grid")
    return float(profile.alpha_L[inside].max()) <= floor + TRANSPARENT_OD
