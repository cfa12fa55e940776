"""Photon-counting model of the detection chain and the fits used on its histograms.

Counts per bin are Poisson with mean
``shots * n_bar * pinhole * QE * (trace integral over the bin) + dark``, where
``dark = dark_rate * shots * bin_width``.  All fits are weighted least
squares: Gaussian fits maximise the Poisson likelihood through deviance
residuals, beat fits iterate Poisson weights from the fitted model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from .errors import AnalysisError, ConfigurationError, DomainError, FitError

FOUR_LN2 = 4.0 * math.log(2.0)
# integral of exp(-4 ln2 t^2/w^2) dt is w * GAUSS_AREA
GAUSS_AREA = math.sqrt(math.pi / FOUR_LN2)
MIN_FIT_BINS = 8


@dataclass(frozen=True)
class DetectorParams:
    quantum_efficiency: float = 0.075
    pinhole_efficiency: float = 0.35
    gate_ns: float = 102.4
    dark_rate: float = 150.0  # counts/s
    shots: int = 2000
    rep_rate: float = 3.0  # kHz
    bin_ns: float = 25.6
    seed: int = 0

    def __post_init__(self):
        for name in ("quantum_efficiency", "pinhole_efficiency"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.gate_ns < 100.0:
            raise ConfigurationError(f"gate_ns must be >= 100, got {self.gate_ns}")
        if self.dark_rate < 0:
            raise ConfigurationError("dark_rate must be >= 0")
        if self.shots < 0 or int(self.shots) != self.shots:
            raise ConfigurationError(f"shots must be a non-negative integer, got {self.shots}")
        if not self.rep_rate > 0:
            raise ConfigurationError("rep_rate must be > 0")
        if not self.bin_ns > 0:
            raise ConfigurationError("bin_ns must be > 0")

    @property
    def detection_efficiency(self) -> float:
        return self.quantum_efficiency * self.pinhole_efficiency

    @property
    def dark_per_bin(self) -> float:
        """Expected dark counts per histogram bin, summed over all shots."""
        return self.dark_rate * self.shots * self.bin_ns * 1e-9

    @property
    def acquisition_time_s(self) -> float:
        return self.shots / (self.rep_rate * 1e3)


@dataclass(frozen=True, eq=False)
class CountHistogram:
    bin_edges: np.ndarray  # ns
    counts: np.ndarray
    shots: int
    params: DetectorParams = field(default_factory=DetectorParams)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or edges.size != counts.size + 1:
            raise ConfigurationError("need exactly one more bin edge than counts")
        if np.any(np.diff(edges) <= 0):
            raise ConfigurationError("bin edges must increase")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise DomainError("counts must be non-negative integers")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(np.mean(np.diff(self.bin_edges)))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def select(self, window: Optional[Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
        """(bin centres, counts) for bins whose centre lies inside ``window``."""
        c = self.centers
        if window is None:
            return c, self.counts.astype(float)
        mask = (c >= window[0]) & (c <= window[1])
        return c[mask], self.counts[mask].astype(float)

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([self.bin_edges[:-1], self.counts])
        np.savetxt(path, data, delimiter=",", header="bin_start_ns,count", comments="", fmt=["%.6f", "%d"])
        return path

    @classmethod
    def from_csv(cls, path, shots: Optional[int] = None,
                 params: Optional[DetectorParams] = None) -> "CountHistogram":
        """Read a ``bin_start_ns,count`` file; the last bin gets the median width."""
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read histogram {path}: {exc}") from exc
        if data.shape[0] < 2 or data.shape[1] != 2:
            raise ConfigurationError(f"{path}: expected two columns and at least two bins")
        starts = data[:, 0]
        width = float(np.median(np.diff(starts)))
        params = params or DetectorParams(bin_ns=width)
        return cls(np.append(starts, starts[-1] + width), data[:, 1],
                   params.shots if shots is None else shots, params)


def expected_counts(times, intensity, params: DetectorParams, n_bar: float = 1.0,
                    t_range: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-bin Poisson means and the bin edges.

    ``intensity`` (photons/ns on the increasing ``times`` grid) integrates to
    the number of photons per shot for unit ``n_bar``; bins outside the
    trace receive dark counts only.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if t.shape != y.shape or t.size < 2:
        raise ConfigurationError("times and intensity must be equal-length arrays")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise DomainError("intensity trace must be finite and non-negative")
    if n_bar < 0:
        raise DomainError("n_bar must be >= 0")
    if np.any(np.diff(t) <= 0):
        raise ConfigurationError("times must increase")
    lo, hi = t_range if t_range is not None else (t[0], t[-1])
    n_bins = int(math.floor((hi - lo) / params.bin_ns + 1e-9))
    if n_bins < 1:
        raise ConfigurationError("time range shorter than one bin")
    edges = lo + params.bin_ns * np.arange(n_bins + 1)
    # bin integrals from the interpolated running (trapezoidal) integral of the trace
    running = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])
    photons = np.diff(np.interp(edges, t, running))
    lam = params.shots * n_bar * params.detection_efficiency * photons + params.dark_per_bin
    return lam, edges


def simulate_counts(times, intensity, params: DetectorParams, n_bar: float = 1.0,
                    t_range: Optional[Tuple[float, float]] = None, stream: int = 0) -> CountHistogram:
    """Seeded Poisson draw of the detection histogram for ``params.shots`` repetitions.

    The generator is keyed on ``(params.seed, stream)`` so that histograms of
    one run (reference, echo, beat) draw from independent reproducible streams.
    """
    lam, edges = expected_counts(times, intensity, params, n_bar, t_range)
    rng = np.random.default_rng([params.seed, stream])
    return CountHistogram(edges, rng.poisson(lam), params.shots, params)


@dataclass(frozen=True)
class FitResult:
    amplitude: float  # counts per bin at the peak
    center_ns: float
    fwhm_ns: float
    offset: float  # counts per bin
    residual_norm: float  # sqrt(chi^2)
    covariance: np.ndarray  # over (amplitude, center, fwhm, offset); fixed parameters have zero rows
    bin_ns: float
    n_bins: int
    success: bool = True
    message: str = ""

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def area(self) -> float:
        """Gaussian counts above the offset, summed over all bins."""
        return self.amplitude * self.fwhm_ns * GAUSS_AREA / self.bin_ns

    @property
    def area_stderr(self) -> float:
        grad = np.array([self.fwhm_ns, 0.0, self.amplitude, 0.0]) * GAUSS_AREA / self.bin_ns
        return float(math.sqrt(max(grad @ self.covariance @ grad, 0.0)))

    def as_dict(self) -> dict:
        err = self.stderr
        return {
            "amplitude": self.amplitude, "amplitude_err": float(err[0]),
            "center_ns": self.center_ns, "center_err": float(err[1]),
            "fwhm_ns": self.fwhm_ns, "fwhm_err": float(err[2]),
            "offset": self.offset, "offset_err": float(err[3]),
            "area": self.area, "area_err": self.area_stderr,
            "residual_norm": self.residual_norm, "n_bins": self.n_bins,
            "success": self.success,
        }


def gaussian_model(t, amplitude, center, fwhm, offset):
    return amplitude * np.exp(-FOUR_LN2 * (t - center) ** 2 / fwhm**2) + offset


def _deviance_residuals(m, y):
    m = np.maximum(m, 1e-300)
    ylog = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / m), 0.0)
    return np.sign(m - y) * np.sqrt(np.maximum(2.0 * (m - y + ylog), 0.0))


def fit_gaussian_counts(t, y, bin_ns: float, fwhm_ns: Optional[float] = None,
                        max_nfev: int = 2000) -> FitResult:
    """Poisson maximum-likelihood Gaussian-plus-offset fit to per-bin counts.

    The likelihood is maximised as a least-squares problem on the signed
    deviance residuals; the covariance is the inverse Fisher information
    ``sum_i grad m_i grad m_i^T / m_i`` at the optimum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < MIN_FIT_BINS:
        raise AnalysisError(f"fit window holds {t.size} bins, need at least {MIN_FIT_BINS}")
    if np.any(y < 0):
        raise DomainError("counts must be non-negative")
    if y.sum() == 0:
        raise FitError("histogram window contains no counts")
    span = t[-1] - t[0]
    b = float(bin_ns)

    # moments of the counts above the lowest quartile as the starting point
    floor = float(np.percentile(y, 25))
    w = np.clip(y - floor, 0.0, None)
    if w.sum() == 0:
        w = y
    mu = float(np.sum(w * t) / w.sum())
    var = float(np.sum(w * (t - mu) ** 2) / w.sum())
    width0 = float(np.clip(math.sqrt(var) * math.sqrt(2 * FOUR_LN2), 2 * b, span))
    amp0 = max(float(y.max()) - floor, 1e-3)

    if fwhm_ns is not None and not fwhm_ns > 0:
        raise DomainError("fwhm must be > 0")
    free = [0, 1, 2, 3] if fwhm_ns is None else [0, 1, 3]
    p0_all = np.array([amp0, mu, width0 if fwhm_ns is None else float(fwhm_ns), max(floor, 1e-3)])
    lower_all = np.array([0.0, t[0], b / 4.0, 0.0])
    upper_all = np.array([np.inf, t[-1], 4.0 * span, np.inf])
    lo, hi = lower_all[free], upper_all[free]
    p0 = np.clip(p0_all[free], lo, hi)
    p0 = np.where(p0 >= hi, np.nextafter(hi, -np.inf), p0)

    def expand(p):
        full = p0_all.copy()
        full[free] = p
        return full

    def resid(p):
        return _deviance_residuals(gaussian_model(t, *expand(p)), y)

    res = least_squares(resid, p0, bounds=(lo, hi), xtol=1e-10, ftol=1e-10,
                        gtol=1e-10, max_nfev=max_nfev)
    a, c, fw, off = expand(res.x)
    g = np.exp(-FOUR_LN2 * (t - c) ** 2 / fw**2)
    m = np.maximum(a * g + off, 1e-12)
    grad = np.stack([g, a * g * 2 * FOUR_LN2 * (t - c) / fw**2,
                     a * g * 2 * FOUR_LN2 * (t - c) ** 2 / fw**3, np.ones_like(t)])[free]
    info = (grad / m) @ grad.T
    cov = np.zeros((4, 4))
    try:
        cov[np.ix_(free, free)] = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov[np.ix_(free, free)] = np.linalg.pinv(info)
    result = FitResult(float(a), float(c), float(fw), float(off), float(np.linalg.norm(res.fun)), cov,
                       b, int(t.size), bool(res.success), res.message)
    if res.status <= 0:
        raise FitError(f"Gaussian fit did not converge: {res.message}", best=result)
    return result


def fit_gaussian(hist: CountHistogram, window: Optional[Tuple[float, float]] = None,
                 fwhm_ns: Optional[float] = None, max_nfev: int = 2000) -> FitResult:
    """Fit ``A*exp(-4 ln2 (t-t0)^2/w^2) + offset`` to the counts inside ``window``.

    Parameters
    ----------
    hist:
        Count histogram.
    window:
        (start, stop) in ns; None uses every bin.
    fwhm_ns:
        If given, the width is held fixed at this value.
    max_nfev:
        Evaluation budget; running out raises :class:`FitError` with the
        last iterate attached.
    """
    t, y = hist.select(window)
    return fit_gaussian_counts(t, y, hist.bin_width, fwhm_ns, max_nfev)


@dataclass(frozen=True)
class EfficiencyEstimate:
    eta: float
    stderr: float
    reference: FitResult
    echo: FitResult


def efficiency_from_histograms(reference: CountHistogram, echo: CountHistogram,
                               reference_window: Optional[Tuple[float, float]] = None,
                               echo_window: Optional[Tuple[float, float]] = None,
                               shared_width: bool = True) -> EfficiencyEstimate:
    """Ratio of the fitted Gaussian areas (offset excluded) of echo and reference.

    With ``shared_width`` the echo is fitted with the reference's width, since
    the echo repeats the input's temporal shape.  The standard error
    propagates both area uncertainties.
    """
    if abs(reference.bin_width - echo.bin_width) > 1e-9 * reference.bin_width:
        raise ConfigurationError("reference and echo histograms must share their binning")
    ref = fit_gaussian(reference, reference_window)
    a_ref, s_ref = ref.area, ref.area_stderr
    if a_ref <= 2.0 * s_ref:
        raise AnalysisError(f"reference area {a_ref:.4g} is consistent with zero (stderr {s_ref:.3g})")
    ech = fit_gaussian(echo, echo_window, fwhm_ns=ref.fwhm_ns if shared_width else None)
    scale = reference.shots / echo.shots if echo.shots else 1.0
    a_echo = ech.area * scale
    s_echo = ech.area_stderr * scale
    eta = a_echo / a_ref
    stderr = math.hypot(s_echo / a_ref, eta * s_ref / a_ref)
    return EfficiencyEstimate(float(eta), float(stderr), ref, ech)


@dataclass(frozen=True)
class VisibilityResult:
    V: float
    stderr: float
    frequency_mhz: float
    period_ns: float
    phase: float  # rad, beat phase at the window centre
    phase_stderr: float
    peak_time_ns: float  # where V is read off
    residual_norm: float


def _beat_design(t, tc, mean_basis, amp_basis, bin_ns, f, phi):
    # averaging cos over a bin of width b multiplies it by sinc(f b)
    blur = np.sinc(f * 1e-3 * bin_ns) if bin_ns else 1.0
    carrier = blur * np.cos(2.0 * math.pi * f * 1e-3 * (t - tc) + phi)
    return np.hstack([mean_basis, amp_basis * carrier[:, None]])


def fit_beat(times, values, window: Tuple[float, float], sigma=None, noise_level: float = 0.0,
             bin_ns: float = 0.0, poly_degree: int = 2, components=None) -> VisibilityResult:
    """Fit ``A(t) + B(t) cos(2 pi f (t - tc) + phi) + noise`` over ``window``.

    Parameters
    ----------
    times, values:
        Trace samples (or bin centres and counts).
    window:
        (start, stop) in ns; must hold at least two beat periods.
    sigma:
        Per-sample standard deviations; None fits with unit weights and
        scales the covariance by the residual variance; ``"poisson"`` treats
        the values as counts and iterates the weights from the fitted model.
    noise_level:
        Fixed background removed before the visibility is read off.
    bin_ns:
        Bin width, if the values are bin integrals (the fringe is then
        corrected for bin averaging).
    poly_degree:
        Degree of the polynomial envelopes ``A`` and ``B`` when no components
        are given.
    components:
        Optional intensities ``(I1, I2)`` of the two interfering fields on the
        same samples.  The envelopes then become ``A = a*(I1 + I2)`` and
        ``B = 2*c*sqrt(I1*I2)``, which avoids the polynomial approximation.

    Notes
    -----
    ``tc`` is the window centre.  With components ``V = |B|/A`` is taken
    where ``|B|`` peaks, which is ``(I_max - I_min)/(I_max + I_min)`` of the
    local fringe; with polynomial envelopes it is ``|sum B| / sum A`` over the
    window, equal to the fringe visibility when the ratio is constant.  The
    envelope coefficients enter linearly and are solved exactly for every
    trial ``(f, phi)`` (variable projection).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    mask = (t >= window[0]) & (t <= window[1])
    t, y = t[mask], y[mask]
    if components is None:
        n_poly = poly_degree + 1
    else:
        i1, i2 = (np.asarray(c, dtype=float) for c in components)
        if i1.shape != mask.shape or i2.shape != mask.shape:
            raise ConfigurationError("components must be sampled like the trace")
        i1, i2 = i1[mask], i2[mask]
        n_poly = 1
    n_par = 2 * n_poly + 2
    if t.size < 3 * n_par:
        raise AnalysisError(f"beat window holds only {t.size} samples for {n_par} parameters")
    poisson = isinstance(sigma, str)
    if poisson and sigma != "poisson":
        raise ConfigurationError(f"sigma must be an array, None or 'poisson', got {sigma!r}")
    if sigma is None:
        sig = np.ones_like(y)
    elif poisson:
        sig = np.sqrt(np.maximum(y, 1.0))
    else:
        sig = np.asarray(sigma, dtype=float)[mask]
    tc = 0.5 * (t[0] + t[-1])
    scale = max(0.5 * (t[-1] - t[0]), 1e-12)
    u = (t - tc) / scale
    signal = y - noise_level
    if np.all(signal <= 0):
        raise AnalysisError("no signal above the noise level in the beat window")
    if components is None:
        mean_basis = np.vander(u, n_poly, increasing=True)
        amp_basis = mean_basis
    else:
        mean_basis = (i1 + i2)[:, None]
        amp_basis = 2.0 * np.sqrt(i1 * i2)[:, None]

    # frequency guess from the periodogram of the trace minus its mean envelope
    if components is None:
        detr = signal - np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyfit(u, signal, poly_degree))
    else:
        detr = signal - mean_basis @ np.linalg.lstsq(mean_basis, signal, rcond=None)[0]
    step = float(np.median(np.diff(t)))
    n_fft = 8 * int(2 ** math.ceil(math.log2(t.size)))
    freqs = np.fft.rfftfreq(n_fft, step) * 1e3
    power = np.abs(np.fft.rfft(detr, n_fft)) ** 2
    # each sample stands for one step of the trace
    length = t[-1] - t[0] + step
    valid = freqs >= 1e3 / length
    if not np.any(valid) or power[valid].max() <= 0:
        raise AnalysisError("no beat found in the window")
    f0 = float(freqs[valid][np.argmax(power[valid])])
    zc = np.sum(detr * np.exp(-2j * math.pi * f0 * 1e-3 * (t - tc)))
    phi0 = float(np.angle(zc))

    def solve(f, phi):
        design = _beat_design(t, tc, mean_basis, amp_basis, bin_ns, f, phi)
        coef, *_ = np.linalg.lstsq(design / sig[:, None], signal / sig, rcond=None)
        return design, coef

    def resid(q):
        design, coef = solve(*q)
        return (design @ coef - signal) / sig

    q = np.array([f0, phi0])
    # Poisson weights are iterated from the fitted model (maximum likelihood at the fixed point)
    for _ in range(4 if poisson else 1):
        res = least_squares(resid, q, bounds=([0.5 * f0, -np.inf], [1.5 * f0, np.inf]),
                            x_scale=[0.01 * f0, 0.1], xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
        if res.status <= 0:
            raise FitError(f"beat fit did not converge: {res.message}", best=res.x)
        q = res.x
        if poisson:
            design, coef = solve(*q)
            sig = np.sqrt(np.maximum(design @ coef + noise_level, 0.25))
    f, phi = (float(v) for v in q)
    design, coef = solve(f, phi)

    # full Jacobian over (A, B, f, phi) for the covariance
    w = 2.0 * math.pi * 1e-3 * (t - tc)
    blur = np.sinc(f * 1e-3 * bin_ns) if bin_ns else 1.0
    sin_term = blur * np.sin(w * f + phi)
    d_blur = 0.0
    if bin_ns:
        x = f * 1e-3 * bin_ns
        d_blur = (math.cos(math.pi * x) - np.sinc(x)) / x * 1e-3 * bin_ns if x else 0.0
    b_poly = amp_basis @ coef[n_poly:]
    d_f = -b_poly * sin_term * w + b_poly * d_blur * np.cos(w * f + phi)
    d_phi = -b_poly * sin_term
    jac = np.column_stack([design, d_f, d_phi]) / sig[:, None]
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    fun = (design @ coef - signal) / sig
    if sigma is None:
        # unit weights: scale by the residual variance
        cov = cov * float(np.sum(fun**2)) / max(t.size - n_par, 1)

    if components is None:
        # fringe-weighted over the window: a noisy maximum would bias V upwards
        t_star = tc
        mean_at = amp_at = mean_basis.sum(axis=0)
    else:
        k = int(np.argmax(amp_basis[:, 0]))
        t_star = t[k]
        mean_at, amp_at = mean_basis[k], amp_basis[k]
    a_star = float(mean_at @ coef[:n_poly])
    b_star = float(amp_at @ coef[n_poly:])
    if a_star <= 0:
        raise AnalysisError("fitted mean intensity is not positive where the beat peaks")
    V = abs(b_star) / a_star
    grad = np.zeros(n_par)
    grad[:n_poly] = -V / a_star * mean_at
    grad[n_poly:2 * n_poly] = math.copysign(1.0, b_star) / a_star * amp_at
    v_err = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    phase = float(math.remainder(phi + (math.pi if b_star < 0 else 0.0), 2.0 * math.pi))
    perr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    # resolvable: even the upper end of the fitted frequency gives fewer than two periods
    if (f + 3.0 * perr[-2]) * length * 1e-3 < 2.0:
        raise AnalysisError(f"beat of {f:.4g} MHz gives fewer than 2 periods in a {length:.4g} ns window")
    return VisibilityResult(float(V), v_err, f, 1e3 / f, phase, float(perr[-1]), float(t_star),
                            float(np.linalg.norm(fun)))


def visibility(hist: CountHistogram, beat_window: Tuple[float, float],
               noise_level: Optional[float] = None, poly_degree: int = 2, components=None) -> VisibilityResult:
    """Visibility of the beat in ``hist`` after removing the noise level.

    ``noise_level`` (counts per bin) defaults to the expected dark counts of
    the histogram's detector.
    """
    noise = hist.params.dark_per_bin if noise_level is None else float(noise_level)
    t, y = hist.select(None)
    return fit_beat(t, y, beat_window, sigma="poisson", noise_level=noise,
                    bin_ns=hist.bin_width, poly_degree=poly_degree, components=components)


def detector_report(params: DetectorParams) -> dict:
    return asdict(params)
