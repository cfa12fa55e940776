"""Scenario files: INI sections describing material, comb, pulses, detector and grids.

Every section is optional and falls back to the library defaults.  Values
``none``/``auto`` map to None; sweep axes accept ``start:stop:num`` (linspace)
or comma-separated lists.  Pulse centres accept the keyword ``echo`` for 1/delta.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .detection import DetectorParams
from .errors import AFCError, ConfigurationError, ConstraintError
from .propagation import WINDOW_LEAK_LIMIT, echo_windows
from .pulses import Pulse, TimeGrid, gaussian_pulse, sechyp_pulse, supergaussian_pulse
from .spectral import (CombParams, FrequencyGrid, MaterialParams, SpectralProfile, build_comb, build_pit,
                       probe_window_is_clear)

SWEEP_AXES = ("alphaL", "F", "delta", "gamma")
PRESETS = ("fig3", "fig3-gamma200", "empty-pit", "fig4", "forward-cap", "interference-ideal",
           "interference-mismatched")
_NONE = ("none", "auto", "")


@dataclass(frozen=True)
class PulseSpec:
    shape: str = "gaussian"
    fwhm_ns: float = 200.0
    n_bar: float = 0.1
    carrier_detuning: float = 0.0
    phase: float = 0.0
    center_ns: float = 0.0
    supergauss_n: int = 1
    beta: float = 0.0  # sechyp only, 1/us
    mu: float = 0.0

    def build(self, grid: TimeGrid, n_bar: Optional[float] = None, phase: Optional[float] = None) -> Pulse:
        nb = self.n_bar if n_bar is None else n_bar
        ph = self.phase if phase is None else phase
        if self.shape == "gaussian":
            return gaussian_pulse(grid, self.fwhm_ns, nb, self.carrier_detuning, ph, self.center_ns)
        if self.shape == "supergaussian":
            return supergaussian_pulse(grid, self.fwhm_ns, self.supergauss_n, nb, self.carrier_detuning, ph,
                                       self.center_ns)
        if self.shape == "sechyp":
            return sechyp_pulse(grid, self.carrier_detuning, self.beta, self.mu, nb, self.center_ns)
        raise ConfigurationError(f"unknown pulse shape {self.shape!r}")


@dataclass(frozen=True)
class InterferenceSpec:
    source: str = "propagated"  # or "synthetic": two undistorted copies of the probe shape
    intensity_ratio: float = 1.0  # synthetic only: I_probe / I_echo
    beat_window: Optional[Tuple[float, float]] = None
    envelope: str = "components"  # or "polynomial"
    poly_degree: int = 2


@dataclass(frozen=True)
class Scenario:
    name: str
    material: MaterialParams
    comb: CombParams
    storage_pulse: PulseSpec
    freq_grid: FrequencyGrid
    time_grid: TimeGrid
    detector: DetectorParams
    probe_pulse: Optional[PulseSpec] = None
    interference: Optional[InterferenceSpec] = None
    sweep: Tuple[Tuple[str, Tuple[float, ...]], ...] = ()
    decoherence: bool = True
    inject_eta: Optional[float] = None
    seed: int = 0
    outputs: str = "runs"
    source: str = "<defaults>"

    @property
    def t2_us(self) -> Optional[float]:
        return self.material.optical_T2 if self.decoherence else None

    def profile(self) -> SpectralProfile:
        return build_comb(self.comb, self.material, self.freq_grid)

    def reference_profile(self) -> SpectralProfile:
        """The emptied pit without teeth (the lossless reference path)."""
        return replace(build_pit(self.material, self.freq_grid, self.comb.background_alphaL), comb=self.comb)

    def storage(self) -> Pulse:
        return self.storage_pulse.build(self.time_grid)

    def probe(self, phase: Optional[float] = None) -> Pulse:
        if self.probe_pulse is None:
            raise ConfigurationError(f"{self.source}: scenario has no [probe_pulse] section")
        return self.probe_pulse.build(self.time_grid, phase=phase)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, detector=replace(self.detector, seed=seed))

    def validate(self) -> "Scenario":
        """Run the cross-module checks: comb fits, pulses fit, windows do not overlap."""
        try:
            profile = self.profile()
            pulse = self.storage()
            trans, _ = echo_windows(pulse, self.comb.delta)
            leak = 1.0 - pulse.energy_between(*trans) / pulse.photon_number if pulse.photon_number > 0 else 0.0
            if leak > WINDOW_LEAK_LIMIT:
                raise ConfigurationError(
                    f"storage pulse spills {leak:.2%} outside its window; echo and transmitted windows overlap"
                )
            if self.probe_pulse is not None:
                self.probe()
                offset = self.probe_pulse.carrier_detuning
                if not probe_window_is_clear(profile, offset):
                    raise ConstraintError(f"no transparent window at the probe offset {offset} MHz")
        except AFCError as exc:
            raise type(exc)(f"{self.source}: {exc}") from exc
        return self

    def to_dict(self) -> dict:
        d = {
            "name": self.name, "source": self.source, "seed": self.seed, "decoherence": self.decoherence,
            "inject_eta": self.inject_eta, "outputs": self.outputs,
            "material": asdict(self.material), "comb": asdict(self.comb),
            "storage_pulse": asdict(self.storage_pulse),
            "probe_pulse": asdict(self.probe_pulse) if self.probe_pulse else None,
            "interference": asdict(self.interference) if self.interference else None,
            "detector": asdict(self.detector),
            "freq_grid": asdict(self.freq_grid), "time_grid": asdict(self.time_grid),
            "sweep": {k: list(v) for k, v in self.sweep},
        }
        return d


def _value(raw: str):
    s = raw.strip()
    if s.lower() in _NONE:
        return None
    if s.lower() in ("true", "yes", "on"):
        return True
    if s.lower() in ("false", "no", "off"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_axis(raw: str) -> Tuple[float, ...]:
    """``start:stop:num`` (inclusive linspace) or ``a, b, c``."""
    s = raw.strip()
    if not s:
        raise ConfigurationError("empty sweep axis")
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"axis {raw!r} must be start:stop:num")
        lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
        if num < 1:
            raise ConfigurationError(f"axis {raw!r} has no points")
        return tuple(float(x) for x in np.linspace(lo, hi, num))
    vals = tuple(float(x) for x in s.split(",") if x.strip())
    if not vals:
        raise ConfigurationError("empty sweep axis")
    return vals


def _section(cp, name, cls, source, aliases: Dict[str, str] = None) -> dict:
    if not cp.has_section(name):
        return {}
    known = {f.name.lower(): f.name for f in fields(cls)}
    known.update(aliases or {})
    out = {}
    for raw_key, raw in cp.items(name):
        key = known.get(raw_key.lower())
        if key is None:
            raise ConfigurationError(f"{source}: unknown key [{name}] {raw_key}")
        out[key] = _value(raw)
    return out


def _make(cls, kwargs, source, section):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{source}: [{section}] {exc}") from exc
    except AFCError as exc:
        raise type(exc)(f"{source}: [{section}] {exc}") from exc


def _pulse_spec(cp, name, delta, source) -> Optional[PulseSpec]:
    if not cp.has_section(name):
        return None
    kw = {}
    known = {f.name for f in fields(PulseSpec)}
    for key, raw in cp.items(name):
        if key not in known:
            raise ConfigurationError(f"{source}: unknown key [{name}] {key}")
        if key == "center_ns" and raw.strip().lower() == "echo":
            kw[key] = 1000.0 / delta
        else:
            kw[key] = _value(raw)
    return _make(PulseSpec, kw, source, name)


def _pair(raw, source, key) -> Tuple[float, float]:
    parts = [p for p in str(raw).replace(",", ":").split(":") if p.strip()]
    if len(parts) != 2:
        raise ConfigurationError(f"{source}: {key} must be start:stop")
    return float(parts[0]), float(parts[1])


def scenario_from_parser(cp: configparser.ConfigParser, source: str) -> Scenario:
    allowed = {"scenario", "material", "comb", "storage_pulse", "probe_pulse", "detector", "grids", "sweep",
               "interference"}
    for sec in cp.sections():
        if sec not in allowed:
            raise ConfigurationError(f"{source}: unknown section [{sec}]")

    scen = {k: _value(v) for k, v in cp.items("scenario")} if cp.has_section("scenario") else {}
    for key in scen:
        if key not in ("name", "seed", "decoherence", "inject_eta", "outputs"):
            raise ConfigurationError(f"{source}: unknown key [scenario] {key}")

    material = _make(MaterialParams, _section(cp, "material", MaterialParams, source), source, "material")
    comb_kw = _section(cp, "comb", CombParams, source, aliases={"gamma": "gamma_fwhm"})
    if "delta" not in comb_kw or "gamma_fwhm" not in comb_kw or "alphaL" not in comb_kw:
        raise ConfigurationError(f"{source}: [comb] needs delta, gamma_fwhm and alphaL")
    comb = _make(CombParams, comb_kw, source, "comb")
    storage = _pulse_spec(cp, "storage_pulse", comb.delta, source) or PulseSpec()
    probe = _pulse_spec(cp, "probe_pulse", comb.delta, source)

    g = {k: _value(v) for k, v in cp.items("grids")} if cp.has_section("grids") else {}
    for key in g:
        if key not in ("freq_span", "freq_points", "freq_center", "dt_ns", "t_start", "t_end"):
            raise ConfigurationError(f"{source}: unknown key [grids] {key}")
    fgrid = _make(FrequencyGrid, {"center_detuning": g.get("freq_center") or 0.0,
                                  "span": g.get("freq_span") or 40.0,
                                  "n_points": g.get("freq_points") or 2**14}, source, "grids")
    dt = g.get("dt_ns") or 1000.0 / (4.0 * fgrid.span)
    default_t = TimeGrid.for_echo(storage.fwhm_ns, comb.delta, fgrid.span, dt)
    t_start = g.get("t_start")
    t_end = g.get("t_end")
    tgrid = _make(TimeGrid.from_step, {"t_start": default_t.t_start if t_start is None else t_start,
                                       "t_end": default_t.t_end if t_end is None else t_end, "dt": dt},
                  source, "grids")

    det_kw = _section(cp, "detector", DetectorParams, source)
    seed = int(scen.get("seed") or 0)
    det_kw.setdefault("seed", seed)
    detector = _make(DetectorParams, det_kw, source, "detector")

    sweep = []
    if cp.has_section("sweep"):
        for key, raw in cp.items("sweep"):
            name = {"alphal": "alphaL", "f": "F"}.get(key, key)
            if name not in SWEEP_AXES:
                raise ConfigurationError(f"{source}: sweep axis {key!r} not in {SWEEP_AXES}")
            try:
                sweep.append((name, parse_axis(raw)))
            except ConfigurationError as exc:
                raise ConfigurationError(f"{source}: [sweep] {key}: {exc}") from exc
        if len(sweep) > 2:
            raise ConfigurationError(f"{source}: at most two sweep axes")

    interference = None
    if cp.has_section("interference"):
        ik = {k: _value(v) for k, v in cp.items("interference")}
        for key in ik:
            if key not in ("source", "intensity_ratio", "beat_window", "envelope", "poly_degree"):
                raise ConfigurationError(f"{source}: unknown key [interference] {key}")
        if ik.get("beat_window") is not None:
            ik["beat_window"] = _pair(cp.get("interference", "beat_window"), source, "beat_window")
        interference = _make(InterferenceSpec, ik, source, "interference")
        if interference.source not in ("propagated", "synthetic"):
            raise ConfigurationError(f"{source}: [interference] source must be propagated or synthetic")
        if interference.envelope not in ("components", "polynomial"):
            raise ConfigurationError(f"{source}: [interference] envelope must be components or polynomial")

    inject = scen.get("inject_eta")
    if inject is not None and not 0.0 <= float(inject) <= 1.0:
        raise ConfigurationError(f"{source}: inject_eta must lie in [0, 1]")
    return Scenario(
        name=str(scen.get("name") or Path(source).stem), material=material, comb=comb, storage_pulse=storage,
        freq_grid=fgrid, time_grid=tgrid, detector=detector, probe_pulse=probe, interference=interference,
        sweep=tuple(sweep), decoherence=scen.get("decoherence", True) is not False,
        inject_eta=None if inject is None else float(inject), seed=seed,
        outputs=str(scen.get("outputs") or "runs"), source=source,
    )


def load_scenario(path=None, preset: Optional[str] = None, validate: bool = True) -> Scenario:
    """Read a scenario from ``path`` or a bundled preset (exactly one of them)."""
    if (path is None) == (preset is None):
        raise ConfigurationError("give exactly one of a config path or a preset name")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        text = resources.files("afcsim").joinpath("presets", f"{preset}.ini").read_text()
        source = f"preset:{preset}"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        source = str(path)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    scenario = scenario_from_parser(cp, source)
    return scenario.validate() if validate else scenario


def axis_point(scenario: Scenario, values: Dict[str, float]) -> Scenario:
    """Scenario with sweep-axis values applied (F keeps delta and moves gamma)."""
    comb = scenario.comb
    for name, v in values.items():
        if name == "alphaL":
            comb = replace(comb, alphaL=v)
        elif name == "delta":
            comb = replace(comb, delta=v)
        elif name == "gamma":
            comb = replace(comb, gamma_fwhm=v)
    if "F" in values:
        comb = replace(comb, gamma_fwhm=comb.delta / values["F"])
    s = replace(scenario, comb=comb)
    if "delta" in values and scenario.storage_pulse is not None:
        period = 1000.0 / comb.delta
        s = replace(s, time_grid=TimeGrid.from_step(
            scenario.time_grid.t_start, max(scenario.time_grid.t_end, period + 3.0 * s.storage_pulse.fwhm_ns),
            scenario.time_grid.dt))
    return s


def echo_period_ns(scenario: Scenario) -> float:
    return 1000.0 / scenario.comb.delta


