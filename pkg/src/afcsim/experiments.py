"""Named experiments driven by a :class:`~afcsim.scenario.Scenario`.

Each ``run_*`` function returns a JSON-ready report and, if ``run_dir`` is
given, writes its CSV tables there.  Outputs depend only on the scenario and
its seed, so re-running reproduces every CSV byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detection import (CountHistogram, efficiency_from_histograms, expected_counts, fit_beat, fit_gaussian,
                        simulate_counts, visibility)
from .errors import AFCError, AnalysisError, ConfigurationError, ConstraintError
from .propagation import (analytic_efficiency, echo_windows, make_transfer_function, max_forward_efficiency,
                          propagate, simulate_echo)
from .pulses import Pulse
from .scenario import Scenario, axis_point
from .spectral import probe_window_is_clear

SWEEP_COLUMNS = ("alphaL", "F", "delta", "gamma", "n_peaks", "eta_numeric", "eta_analytic", "echo_time_ns",
                 "status")
# Half-width of the default beat window around the echo time.
BEAT_HALF_WINDOW_NS = 450.0


def make_run_dir(base, scenario_name: str, command: str) -> Path:
    """Create ``base/<scenario>-<command>-<UTC timestamp>`` (suffixed if taken)."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    root = Path(base)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{scenario_name}-{command}-{stamp}"
    k = 1
    while path.exists():
        path = root / f"{scenario_name}-{command}-{stamp}-{k}"
        k += 1
    path.mkdir()
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def finalize_run(run_dir: Path, command: str, report: dict) -> Path:
    """Write report.json and a manifest listing every file with its SHA-256.

    The manifest carries no timestamp (the folder name does), so reruns with
    the same seed reproduce it byte for byte.
    """
    write_json(run_dir / "report.json", report)
    files = []
    for f in sorted(run_dir.iterdir()):
        if f.name == "manifest.json":
            continue
        files.append({"file": f.name, "sha256": hashlib.sha256(f.read_bytes()).hexdigest()})
    manifest = {"command": command, "scenario": report.get("scenario", {}).get("name"), "files": files}
    return write_json(run_dir / "manifest.json", manifest)


def _write_columns(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    data = np.column_stack(columns)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.10g")
    return path


def _base_report(command: str, scenario: Scenario) -> dict:
    return {"command": command, "scenario": scenario.to_dict()}


# --- efficiency -----------------------------------------------------------------------------------------

def forward_theory(scenario: Scenario) -> float:
    """Forward re-emission estimate from the mean optical depth: d^2 e^-d times the tooth-shape dephasing."""
    comb = scenario.comb
    d = comb.effective_depth
    f = comb.finesse
    if comb.peak_shape == "gaussian":
        dephase = math.exp(-math.pi**2 / (2.0 * math.log(2.0) * f**2))
    elif comb.peak_shape == "lorentzian":
        dephase = math.exp(-2.0 * math.pi / f)
    else:
        dephase = np.sinc(1.0 / f) ** 2
    decay = math.exp(-2.0 / (comb.delta * scenario.t2_us)) if scenario.t2_us else 1.0
    return float(d**2 * math.exp(-d) * dephase * decay)


def run_efficiency(scenario: Scenario, run_dir: Optional[Path] = None) -> dict:
    """Propagate the storage pulse through the empty pit and through the comb."""
    profile = scenario.profile()
    pulse = scenario.storage()
    ref_out = propagate(pulse, make_transfer_function(scenario.reference_profile(), dt=pulse.grid.dt))
    result = simulate_echo(profile, pulse, scenario.t2_us)
    ref_energy = ref_out.energy_between(*result.transmitted_window)
    echo_energy = result.output_pulse.energy_between(*result.echo_window) * result.decoherence_factor
    comb = scenario.comb
    report = _base_report("efficiency", scenario)
    report["results"] = {
        "eta_numeric": result.efficiency,
        "eta_vs_reference": echo_energy / ref_energy if ref_energy > 0 else float("nan"),
        "eta_analytic": analytic_efficiency(comb.alphaL, comb.finesse),
        "eta_forward_theory": forward_theory(scenario),
        "transmitted_fraction": result.transmitted_fraction,
        "reference_transmission": ref_energy / pulse.photon_number,
        "echo_time_ns": result.echo_time,
        "echo_period_ns": 1000.0 / comb.delta,
        "echo_window_ns": result.echo_window,
        "transmitted_window_ns": result.transmitted_window,
        "decoherence_factor": result.decoherence_factor,
        "finesse": comb.finesse,
        "effective_depth": comb.effective_depth,
        "n_peaks": int(profile.comb_centers.size),
        "input_photons": pulse.photon_number,
    }
    if run_dir is not None:
        profile.to_csv(run_dir / "profile.csv")
        _write_columns(run_dir / "traces.csv",
                       ("t_ns", "input_photons_per_ns", "reference_photons_per_ns", "output_photons_per_ns"),
                       (pulse.times, pulse.intensity, ref_out.intensity, result.output_pulse.intensity))
        finalize_run(run_dir, "efficiency", report)
    return report


# --- sweep ----------------------------------------------------------------------------------------------

def _sweep_point(args) -> dict:
    scenario, values = args
    row = {k: float("nan") for k in SWEEP_COLUMNS}
    row.update(values)
    s = None
    try:
        s = axis_point(scenario, values)
        comb = s.comb
        row.update(alphaL=comb.alphaL, F=comb.finesse, delta=comb.delta, gamma=comb.gamma_fwhm)
        row["eta_analytic"] = analytic_efficiency(comb.alphaL, comb.finesse)
        profile = s.profile()
        row["n_peaks"] = int(profile.comb_centers.size)
        res = simulate_echo(profile, s.storage(), s.t2_us)
        row.update(eta_numeric=res.efficiency, echo_time_ns=res.echo_time, status="ok")
    except AFCError as exc:
        row["status"] = f"invalid: {exc}"
    return row


def sweep_points(scenario: Scenario) -> List[Dict[str, float]]:
    if not scenario.sweep:
        raise ConfigurationError(f"{scenario.source}: no sweep axis given")
    names = [n for n, _ in scenario.sweep]
    if len(set(names)) != len(names):
        raise ConfigurationError("sweep axes must be distinct")
    for name, vals in scenario.sweep:
        if not vals:
            raise ConfigurationError(f"sweep axis {name} is empty")
    return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in scenario.sweep))]


def run_sweep(scenario: Scenario, run_dir: Optional[Path] = None, workers: int = 1) -> dict:
    """Numeric and closed-form efficiency over one or two axes.

    Rows failing a validity check (window overlap, comb constraints) are kept
    and flagged in the ``status`` column.  Summary rows carry the best numeric
    point and, for a lone ``alphaL`` axis, the refined forward maximum.
    """
    points = sweep_points(scenario)
    jobs = [(scenario, p) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    names = [n for n, _ in scenario.sweep]
    rows.sort(key=lambda r: tuple(r[n] for n in names))

    valid = [r for r in rows if r["status"] == "ok"]
    summary = []
    if valid:
        best = max(valid, key=lambda r: r["eta_numeric"])
        summary.append(dict(best, status="max_numeric"))
    if names == ["alphaL"] and len(valid) >= 3:
        try:
            pulse = scenario.storage()
            cap = max_forward_efficiency(lambda a: axis_point(scenario, {"alphaL": a}).profile(),
                                         [r["alphaL"] for r in valid], pulse, scenario.t2_us)
            refined = {k: float("nan") for k in SWEEP_COLUMNS}
            comb = replace(scenario.comb, alphaL=cap.alphaL_at_max)
            refined.update(alphaL=cap.alphaL_at_max, F=comb.finesse, delta=comb.delta, gamma=comb.gamma_fwhm,
                           eta_numeric=cap.eta_max, eta_analytic=analytic_efficiency(comb.alphaL, comb.finesse),
                           status="max_forward_refined")
            summary.append(refined)
        except AnalysisError as exc:
            summary.append(dict({k: float("nan") for k in SWEEP_COLUMNS}, status=f"max_forward_refined: {exc}"))

    report = _base_report("sweep", scenario)
    report["results"] = {
        "n_points": len(rows), "n_valid": len(valid), "n_invalid": len(rows) - len(valid),
        "summary": summary,
    }
    if run_dir is not None:
        write_sweep_csv(run_dir / "sweep.csv", rows + summary)
        finalize_run(run_dir, "sweep", report)
    report["rows"] = rows
    return report


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def write_sweep_csv(path: Path, rows: List[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in SWEEP_COLUMNS])
    return path


# --- interference ---------------------------------------------------------------------------------------

def interference_fields(scenario: Scenario, phase: float) -> Tuple[Pulse, Pulse]:
    """(echo-side field, probe field) on the scenario time grid for the given probe phase."""
    spec = scenario.interference
    if spec is None or scenario.probe_pulse is None:
        raise ConfigurationError(f"{scenario.source}: interference needs [probe_pulse] and [interference]")
    if spec.source == "synthetic":
        probe = scenario.probe_pulse
        echo = replace(probe, carrier_detuning=0.0, phase=0.0).build(scenario.time_grid)
        if spec.intensity_ratio < 0:
            raise ConfigurationError("intensity_ratio must be >= 0")
        other = probe.build(scenario.time_grid, n_bar=probe.n_bar * spec.intensity_ratio, phase=phase)
        return echo, other
    profile = scenario.profile()
    offset = scenario.probe_pulse.carrier_detuning
    if not probe_window_is_clear(profile, offset):
        raise ConstraintError(f"{scenario.source}: no transparent window at the probe offset {offset} MHz")
    tf = make_transfer_function(profile, dt=scenario.time_grid.dt)
    return propagate(scenario.storage(), tf), propagate(scenario.probe(phase), tf)


def beat_window(scenario: Scenario) -> Tuple[float, float]:
    spec = scenario.interference
    if spec is not None and spec.beat_window is not None:
        return spec.beat_window
    c = 1000.0 / scenario.comb.delta
    return c - BEAT_HALF_WINDOW_NS, c + BEAT_HALF_WINDOW_NS


def run_interference(scenario: Scenario, run_dir: Optional[Path] = None) -> dict:
    """Echo and probe beat traces for probe phases 0 and pi, with fitted visibilities."""
    window = beat_window(scenario)
    spec = scenario.interference
    traces = {}
    fits = {}
    for label, phase in (("0", 0.0), ("pi", math.pi)):
        echo, probe = interference_fields(scenario, phase)
        trace = np.abs(echo.envelope + probe.envelope) ** 2
        traces[label] = trace
        comps = (echo.intensity, probe.intensity) if spec.envelope == "components" else None
        fits[label] = fit_beat(echo.times, trace, window, poly_degree=spec.poly_degree, components=comps)
    dphi = abs(math.remainder(fits["pi"].phase - fits["0"].phase, 2.0 * math.pi))
    results = {
        "beat_window_ns": window,
        "offset_mhz": scenario.probe_pulse.carrier_detuning,
        "expected_period_ns": 1000.0 / abs(scenario.probe_pulse.carrier_detuning),
        "phase_difference_rad": dphi,
    }
    for label, f in fits.items():
        results[f"visibility_{label}"] = f.V
        results[f"visibility_{label}_err"] = f.stderr
        results[f"period_{label}_ns"] = f.period_ns
        results[f"phase_{label}_rad"] = f.phase
    if spec.source == "synthetic":
        r = spec.intensity_ratio
        results["visibility_expected"] = 2.0 * math.sqrt(r) / (1.0 + r)
    report = _base_report("interference", scenario)
    report["results"] = results
    if run_dir is not None:
        _write_columns(run_dir / "interference.csv", ("t_ns", "intensity_phase0_per_ns", "intensity_phasepi_per_ns"),
                       (scenario.time_grid.times, traces["0"], traces["pi"]))
        finalize_run(run_dir, "interference", report)
    return report


# --- counts ---------------------------------------------------------------------------------------------

def counting_traces(scenario: Scenario) -> Tuple[Pulse, np.ndarray, float, Tuple, Tuple]:
    """Reference output, echo-run intensity, its true efficiency, and the (reference, echo) windows."""
    pulse = scenario.storage()
    ref_out = propagate(pulse, make_transfer_function(scenario.reference_profile(), dt=pulse.grid.dt))
    trans_win, echo_win = echo_windows(pulse, scenario.comb.delta)
    period = 1000.0 / scenario.comb.delta
    if scenario.inject_eta is not None:
        t = pulse.times
        echo = scenario.inject_eta * np.interp(t - period, t, ref_out.intensity, left=0.0, right=0.0)
        ref_energy = ref_out.energy_between(*trans_win)
        true_eta = float(np.sum(echo) * pulse.grid.dt / ref_energy)
    else:
        res = simulate_echo(scenario.profile(), pulse, scenario.t2_us)
        echo = res.output_pulse.intensity.copy()
        in_echo = (pulse.times >= echo_win[0]) & (pulse.times <= echo_win[1])
        echo[in_echo] *= res.decoherence_factor
        true_eta = res.efficiency
    return ref_out, echo, true_eta, trans_win, echo_win


def run_counts(scenario: Scenario, run_dir: Optional[Path] = None) -> dict:
    """Simulated reference and echo histograms and the fitted area-ratio efficiency.

    Histograms are written before the analysis, so a run whose statistics
    cannot support a fit still leaves its data behind (and a report carrying
    the error) before the :class:`AnalysisError` propagates.
    """
    det = scenario.detector
    if det.shots == 0:
        raise AnalysisError("shots = 0: no data to analyse")
    ref_out, echo, true_eta, trans_win, echo_win = counting_traces(scenario)
    t = ref_out.times
    span = (scenario.time_grid.t_start, scenario.time_grid.t_end)
    hists = {"reference_hist.csv": simulate_counts(t, ref_out.intensity, det, 1.0, span, stream=0),
             "echo_hist.csv": simulate_counts(t, echo, det, 1.0, span, stream=1)}
    spec = scenario.interference
    if spec is not None and scenario.probe_pulse is not None:
        e, p = interference_fields(scenario, 0.0)
        trace = np.abs(e.envelope + p.envelope) ** 2
        hists["beat_hist.csv"] = simulate_counts(t, trace, det, 1.0, span, stream=2)
    if run_dir is not None:
        for name, h in hists.items():
            h.to_csv(run_dir / name)

    n_bar = scenario.storage_pulse.n_bar
    results = {
        "eta_true": true_eta, "eta_injected": scenario.inject_eta,
        "expected_lossless_counts": det.shots * n_bar * det.detection_efficiency,
        "reference_counts": hists["reference_hist.csv"].total, "echo_counts": hists["echo_hist.csv"].total,
        "dark_counts_per_bin": det.dark_per_bin,
    }
    report = _base_report("counts", scenario)
    report["results"] = results
    try:
        est = efficiency_from_histograms(hists["reference_hist.csv"], hists["echo_hist.csv"], trans_win, echo_win)
        results.update(eta=est.eta, eta_stderr=est.stderr, reference_fit=est.reference.as_dict(),
                       echo_fit=est.echo.as_dict())
        if "beat_hist.csv" in hists:
            comps = None
            if spec.envelope == "components":
                dark_free = replace(det, dark_rate=0.0)
                comps = tuple(expected_counts(t, c, dark_free, 1.0, span)[0] for c in (e.intensity, p.intensity))
            vis = visibility(hists["beat_hist.csv"], beat_window(scenario), poly_degree=spec.poly_degree,
                             components=comps)
            results.update(visibility=vis.V, visibility_err=vis.stderr, beat_period_ns=vis.period_ns)
    except AnalysisError as exc:
        results["analysis_error"] = str(exc)
        if run_dir is not None:
            finalize_run(run_dir, "counts", report)
        raise
    if run_dir is not None:
        finalize_run(run_dir, "counts", report)
    return report


# --- fit (external data) --------------------------------------------------------------------------------

def run_fit(histogram: Optional[str] = None, window=None, reference: Optional[str] = None,
            echo: Optional[str] = None, reference_window=None, echo_window=None, beat_window_ns=None,
            noise_level: Optional[float] = None, run_dir: Optional[Path] = None) -> dict:
    """Analyse externally supplied ``bin_start_ns,count`` histograms."""
    results: Dict[str, object] = {}
    if reference is not None or echo is not None:
        if reference is None or echo is None:
            raise ConfigurationError("--reference and --echo must be given together")
        est = efficiency_from_histograms(CountHistogram.from_csv(reference), CountHistogram.from_csv(echo),
                                         reference_window, echo_window)
        results.update(eta=est.eta, eta_stderr=est.stderr,
                       **{f"reference_{k}": v for k, v in est.reference.as_dict().items()},
                       **{f"echo_{k}": v for k, v in est.echo.as_dict().items()})
    if histogram is not None:
        hist = CountHistogram.from_csv(histogram)
        if beat_window_ns is not None:
            vis = visibility(hist, beat_window_ns, noise_level=0.0 if noise_level is None else noise_level)
            results.update(visibility=vis.V, visibility_err=vis.stderr, beat_period_ns=vis.period_ns,
                           beat_phase_rad=vis.phase)
        else:
            results.update(fit_gaussian(hist, window).as_dict())
    if not results:
        raise ConfigurationError("fit needs --histogram or --reference/--echo")
    report = {"command": "fit", "inputs": {"histogram": histogram, "reference": reference, "echo": echo,
                                           "window": window, "reference_window": reference_window,
                                           "echo_window": echo_window, "beat_window": beat_window_ns,
                                           "noise_level": noise_level},
              "results": results}
    if run_dir is not None:
        finalize_run(run_dir, "fit", report)
    return report


def flat_items(d: dict, prefix: str = ""):
    """Yield ``key = value`` pairs of a nested report."""
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from flat_items(v, key + ".")
        else:
            yield key, v

