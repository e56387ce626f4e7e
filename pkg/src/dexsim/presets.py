"""Built-in experiment presets.

Each preset builds its pulse sequences, runs the simulation pipeline
(ensemble -> detector -> correlator -> fit, or an exact piecewise-constant
master-equation propagation where noise would only obscure the result),
and writes ``<name>_data.csv``, ``<name>_fit.json`` and ``<name>_meta.json``
plus the generated ``.dexseq`` files for provenance.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import __version__
from .analysis import (
    FitError,
    lm_fit,
    model_library,
    saturation_curves,
    saturation_summary,
)
from .dynamics import lindblad_superoperator, run_ensemble
from .photonics import (
    DetectorModel,
    apply_detector,
    g2_circular,
    polarization_project,
    pulsed_coincidence_bars,
)
from .physics import (
    DIM,
    HBAR,
    BasisState,
    EmissionLine,
    JONES_H,
    JONES_SIGMA_MINUS,
    JONES_SIGMA_PLUS,
    SystemParams,
    collapse_channels,
    default_params,
    ket,
)
from .pulses import (
    Pulse,
    PulseSequence,
    PulseShape,
    Transition,
    drive_hamiltonian,
    sech_duration_for_bandwidth,
)
from . import seqlang

CSV_SCHEMA_VERSION = 1

PRESET_NAMES = (
    "fig-saturation",
    "fig-rabi",
    "fig-lifetime",
    "fig-coherence-cw",
    "fig-coherence-pulsed",
    "fig-control",
)

# control-laser spectral width (ueV) shared by the picosecond presets
CONTROL_SIGMA = 100.0

_POL_LABELS = {
    "H": JONES_H,
    "sigma+": JONES_SIGMA_PLUS,
    "sigma-": JONES_SIGMA_MINUS,
}


@dataclass
class PresetConfig:
    out_dir: Path
    seed: int = 42
    trajectories: int | None = None   # None = preset default
    tol: float = 1e-8
    emit: tuple[str, ...] = ("csv", "json")
    workers: int = 1

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)


def _pol_label(jones) -> str:
    for label, vec in _POL_LABELS.items():
        if np.allclose(jones, vec):
            return label
    raise ValueError(f"no label for Jones vector {jones}")


def _pulse_doc(p: Pulse) -> tuple[str, dict]:
    kv = {
        "t0": p.t0, "duration": p.duration,
        "shape": p.shape.value, "transition": p.transition.value,
        "polarization": _pol_label(p.polarization),
    }
    if p.shape is PulseShape.CW:
        kv["power"] = p.peak_rabi
    else:
        kv["area"] = p.area
    if p.detuning != 0.0:
        kv["detuning"] = p.detuning
    if p.shape in (PulseShape.SECH, PulseShape.GAUSSIAN) and p.bandwidth_sigma:
        kv["bandwidth"] = p.bandwidth_sigma
    return p.name, kv


def write_sequence_file(path: Path, seq: PulseSequence, seed: int,
                        trajectories: int) -> None:
    doc = seqlang.SeqDocument()
    doc.globals["t_end"] = seq.t_end
    if seq.rep_period > 0.0:
        doc.globals["rep_period"] = seq.rep_period
    doc.globals["seed"] = seed
    doc.globals["trajectories"] = trajectories
    doc.pulses = [_pulse_doc(p) for p in seq.pulses]
    path.write_text(seqlang.serialize(doc))


def _write_meta(cfg: PresetConfig, name: str, params: SystemParams,
                extra: dict, t_start: float) -> None:
    meta = {
        "preset": name,
        "seed": cfg.seed,
        "trajectories": cfg.trajectories,
        "workers": cfg.workers,
        "tol": cfg.tol,
        "params": asdict(params),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "package_version": __version__,
        "wall_time_s": round(time.time() - t_start, 3),
    }
    meta.update(extra)
    for key, value in meta.items():
        if isinstance(value, float) and math.isinf(value):
            meta[key] = "inf"
    if isinstance(meta["params"].get("t_larmor_xx"), float) and math.isinf(
            meta["params"]["t_larmor_xx"]):
        meta["params"]["t_larmor_xx"] = "inf"
    with open(cfg.out_dir / f"{name}_meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, default=str)


def _write_fit(cfg: PresetConfig, name: str, payload: dict) -> None:
    if "json" in cfg.emit:
        with open(cfg.out_dir / f"{name}_fit.json", "w") as fh:
            json.dump(payload, fh, indent=1, default=float)


def emission_lag(params: SystemParams) -> float:
    """Mean biexciton residence time: the delay between absorption and click."""
    return 1.0 / (1.0 / params.tau_xx_ss + 1.0 / params.tau_xx_sp)


# ---------------------------------------------------------------------------
# fig-saturation
# ---------------------------------------------------------------------------

def fig_saturation(cfg: PresetConfig) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    powers = np.logspace(-6.5, 2.0, 400)
    i_de, i_be = saturation_curves(powers, params)
    summary = saturation_summary(powers, i_de, i_be)
    if "csv" in cfg.emit:
        np.savetxt(cfg.out_dir / "fig-saturation_data.csv",
                   np.column_stack([powers, i_de, i_be]), delimiter=",",
                   header="power_ns^-1,intensity_de,intensity_be", comments="",
                   fmt="%.10g")
    _write_fit(cfg, "fig-saturation", summary)
    (cfg.out_dir / "sequences").mkdir(exist_ok=True)
    (cfg.out_dir / "sequences" / "fig-saturation.dexseq").write_text(
        "# cw saturation rate model; no pulse sequence is involved\n"
        "format = 1\n")
    _write_meta(cfg, "fig-saturation", params,
                {"power_grid": [float(powers[0]), float(powers[-1]), len(powers)]}, t0)
    return summary


# ---------------------------------------------------------------------------
# fig-rabi: exact piecewise-constant propagation with photon counting
# ---------------------------------------------------------------------------

def _segment_propagators(seq: PulseSequence, params: SystemParams, cache: dict):
    """(U, J) per piecewise-constant segment of one repetition period.

    U propagates vec(rho); J = integral of exp(D s) ds over the segment
    (Van Loan block), so emitted photons per line follow from J.
    """
    channels = collapse_channels(params)
    edges = {0.0, seq.period}
    for p in seq.pulses:
        for e in p.window:
            if 0.0 < e < seq.period:
                edges.add(e)
    edges = sorted(edges)
    out = []
    n2 = DIM * DIM
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a < 1e-12:
            continue
        h = drive_hamiltonian(seq, params, 0.5 * (a + b))
        key = (h.tobytes(), round(b - a, 12))
        if key not in cache:
            d = lindblad_superoperator(h, channels)
            m = np.zeros((2 * n2, 2 * n2), dtype=complex)
            m[:n2, :n2] = d
            m[:n2, n2:] = np.eye(n2)
            em = scipy.linalg.expm(m * (b - a))
            cache[key] = (em[:n2, :n2], em[:n2, n2:])
        out.append(cache[key])
    return out


def _xx_weight(params: SystemParams) -> np.ndarray:
    w = np.zeros((DIM, DIM), dtype=complex)
    for ch in collapse_channels(params):
        if ch.emission is not None and ch.emission.line in (
                EmissionLine.XX_SS_1278, EmissionLine.XX_SP_1294):
            op = ch.operator
            w += ch.rate * (op.conj().T @ op)
    return w.T.reshape(-1)


def rabi_emission_curve(
    areas: np.ndarray,
    params: SystemParams,
    rep_period: float,
    n_periods: int,
    probe_area: float = math.pi,
) -> np.ndarray:
    """XX photons emitted during the last repetition period, per pump area.

    rep_period = 0 runs a single reset period (no carryover); otherwise the
    state carries over between the 1/rep_period repetitions, so the residual
    population left from earlier periods degrades the oscillation contrast.
    """
    w_xx = _xx_weight(params)
    cache: dict = {}
    vals = []
    for theta in areas:
        seq = build_rabi_sequence(theta, rep_period, probe_area)
        segs = _segment_propagators(seq, params, cache)
        rho = np.outer(ket(BasisState.VAC), ket(BasisState.VAC)).reshape(-1)
        periods = 1 if rep_period == 0.0 else n_periods
        for _ in range(periods):
            photons = 0.0
            for u, j in segs:
                photons += float(np.real(w_xx @ (j @ rho)))
                rho = u @ rho
        vals.append(photons)
    return np.array(vals)


def build_rabi_sequence(theta: float, rep_period: float,
                        probe_area: float = math.pi) -> PulseSequence:
    pump = Pulse("pump", 1.0, 60.0, PulseShape.SQUARE, Transition.VAC_DE,
                 JONES_H, area=theta)
    probe = Pulse("probe", 63.0, 0.5, PulseShape.SQUARE, Transition.DE_XX,
                  JONES_SIGMA_PLUS, area=probe_area)
    return PulseSequence(pulses=(pump, probe), rep_period=rep_period, t_end=72.0)


def _first_extremum(x: np.ndarray, y: np.ndarray, lo: float, hi: float,
                    kind: str) -> float:
    """Quadratic-interpolated extremum location within [lo, hi]."""
    sel = (x >= lo) & (x <= hi)
    xs, ys = x[sel], y[sel]
    i = int(np.argmax(ys) if kind == "max" else np.argmin(ys))
    if i == 0 or i == len(xs) - 1:
        return float(xs[i])
    y0, y1, y2 = ys[i - 1], ys[i], ys[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom == 0.0:
        return float(xs[i])
    shift = 0.5 * (y0 - y2) / denom
    return float(xs[i] + shift * (xs[i + 1] - xs[i]))


def fig_rabi(cfg: PresetConfig, n_areas: int = 33) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    areas = np.linspace(0.0, 4.0 * math.pi, n_areas)
    curve_reset = rabi_emission_curve(areas, params, 0.0, 1)
    curve_slow = rabi_emission_curve(areas, params, 3000.0, 4)
    curve_1mhz = rabi_emission_curve(areas, params, 1000.0, 4)

    theta_max = _first_extremum(areas, curve_reset, 0.3 * math.pi, 1.8 * math.pi, "max")
    theta_min = _first_extremum(areas, curve_reset, 1.2 * math.pi, 2.8 * math.pi, "min")

    def contrast(c):
        """Visibility of the first oscillation: peak near pi vs dip near 2pi."""
        sel_max = (areas >= 0.3 * math.pi) & (areas <= 1.8 * math.pi)
        sel_min = (areas >= 1.2 * math.pi) & (areas <= 2.8 * math.pi)
        hi, lo = float(c[sel_max].max()), float(c[sel_min].min())
        return (hi - lo) / (hi + lo)

    power = (areas / math.pi) ** 2
    fit = lm_fit(model_library()["rabi_curve"], power[1:], curve_reset[1:],
                 np.maximum(0.02 * curve_reset.max(), 1e-6), np.array(
                     [float(curve_reset.max()), 1.0, 25.0]))
    result = {
        "theta_first_max": theta_max,
        "theta_first_min": theta_min,
        "theta_max_over_pi": theta_max / math.pi,
        "theta_min_over_pi": theta_min / math.pi,
        "contrast_reset": contrast(curve_reset),
        "contrast_rep3000": contrast(curve_slow),
        "contrast_rep1000": contrast(curve_1mhz),
        "rabi_fit": fit.to_dict(),
    }
    if "csv" in cfg.emit:
        np.savetxt(cfg.out_dir / "fig-rabi_data.csv",
                   np.column_stack([areas, power, curve_reset, curve_slow, curve_1mhz]),
                   delimiter=",",
                   header="pump_area_rad,pump_power_rel,xx_photons_reset,"
                          "xx_photons_rep3000ns,xx_photons_rep1000ns",
                   comments="", fmt="%.10g")
    _write_fit(cfg, "fig-rabi", result)
    seq_dir = cfg.out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)
    write_sequence_file(seq_dir / "fig-rabi_pi.dexseq",
                        build_rabi_sequence(math.pi, 1000.0), cfg.seed, 0)
    _write_meta(cfg, "fig-rabi", params,
                {"method": "piecewise-constant superoperator exponentials",
                 "areas": [0.0, 4.0 * math.pi, n_areas]}, t0)
    return result


# ---------------------------------------------------------------------------
# fig-lifetime
# ---------------------------------------------------------------------------

LIFETIME_DELAYS = (10.0, 50.0, 150.0, 400.0, 1000.0, 1500.0, 2200.0, 3500.0)


def build_lifetime_sequence(delay: float) -> PulseSequence:
    pump = Pulse("pump", 1.0, 60.0, PulseShape.SQUARE, Transition.VAC_DE,
                 JONES_H, area=math.pi)
    t_probe = 61.0 + delay
    probe = Pulse("probe", t_probe, 0.5, PulseShape.SQUARE, Transition.DE_XX,
                  JONES_SIGMA_PLUS, area=math.pi)
    return PulseSequence(pulses=(pump, probe), t_end=t_probe + 8.0)


def fig_lifetime(cfg: PresetConfig, delays=LIFETIME_DELAYS) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    n = cfg.trajectories or 6000
    seq_dir = cfg.out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)

    rows = []
    for i, delay in enumerate(delays):
        seq = build_lifetime_sequence(delay)
        write_sequence_file(seq_dir / f"fig-lifetime_{int(delay):05d}ns.dexseq",
                            seq, cfg.seed + i, n)
        ens = run_ensemble(seq, params, n, cfg.seed + i, workers=cfg.workers)
        t_probe = 61.0 + delay
        xx = (np.isin(ens.stream.line, (int(EmissionLine.XX_SS_1278),
                                        int(EmissionLine.XX_SP_1294)))
              & (ens.stream.t >= t_probe))
        counts = int(np.count_nonzero(xx))
        p = counts / n
        err = math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)
        rows.append((delay, p, err, n))

    rows = np.array(rows)
    fit = lm_fit(model_library()["exp_decay"], rows[:, 0], rows[:, 1], rows[:, 2],
                 np.array([rows[0, 1], 1000.0]))
    tau, tau_err = fit.params[1], fit.errors()[1]
    result = {"tau_ns": float(tau), "tau_err_ns": float(tau_err),
              "fit": fit.to_dict(), "delays": list(delays), "trajectories": n}
    if "csv" in cfg.emit:
        np.savetxt(cfg.out_dir / "fig-lifetime_data.csv", rows, delimiter=",",
                   header="delay_ns,xx_signal,signal_err,trajectories",
                   comments="", fmt="%.10g")
    _write_fit(cfg, "fig-lifetime", result)
    _write_meta(cfg, "fig-lifetime", params, {"delays": list(delays)}, t0)
    return result


# ---------------------------------------------------------------------------
# fig-coherence-cw
# ---------------------------------------------------------------------------

def build_coherence_cw_sequence(probe_rabi_uev: float = 0.45,
                                probe_len: float = 180.0) -> PulseSequence:
    pump = Pulse("pump", 1.0, 60.0, PulseShape.SQUARE, Transition.VAC_DE,
                 JONES_H, area=math.pi)
    probe = Pulse("probe", 62.0, probe_len, PulseShape.CW, Transition.DE_XX,
                  JONES_H, peak_rabi=probe_rabi_uev / HBAR)
    return PulseSequence(pulses=(pump, probe), t_end=62.0 + probe_len + 2.0)


def fig_coherence_cw(cfg: PresetConfig, probe_rabi_uev: float = 0.45) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    n = cfg.trajectories or 6000
    seq = build_coherence_cw_sequence(probe_rabi_uev)
    seq_dir = cfg.out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)
    write_sequence_file(seq_dir / "fig-coherence-cw.dexseq", seq, cfg.seed, n)

    ens = run_ensemble(seq, params, n, cfg.seed, workers=cfg.workers)
    st = apply_detector(ens.stream, DetectorModel(params.irf_fwhm, 1.0, cfg.seed + 1))
    st = polarization_project(st, "circular", cfg.seed + 2)
    corr = g2_circular(st, binwidth=0.2, window=30.0)

    ok = (corr.co_counts + corr.cross_counts) > 20
    fit = lm_fit(model_library()["decaying_sinusoid"],
                 corr.bin_centers[ok], corr.dcp[ok], corr.dcp_err[ok],
                 np.array([0.5, 3.1, 1.0, 20.0]), max_iter=400)
    peak_dcp = float(np.nanmax(np.abs(corr.dcp[ok]))) if ok.any() else float("nan")
    result = {
        "period_ns": float(fit.params[1]),
        "period_err_ns": float(fit.errors()[1]),
        "envelope_ns": float(fit.params[3]),
        "p0": float(fit.params[0]),
        "peak_abs_dcp": peak_dcp,
        "pairs": int((corr.co_counts + corr.cross_counts).sum()),
        "fit": fit.to_dict(),
        "probe_rabi_uev": probe_rabi_uev,
    }
    if "csv" in cfg.emit:
        corr.to_csv(cfg.out_dir / "fig-coherence-cw_data.csv")
    if "json" in cfg.emit:
        corr.to_json(cfg.out_dir / "fig-coherence-cw_corr.json")
    _write_fit(cfg, "fig-coherence-cw", result)
    _write_meta(cfg, "fig-coherence-cw", params,
                {"trajectories_used": n, "probe_rabi_uev": probe_rabi_uev}, t0)
    return result


# ---------------------------------------------------------------------------
# fig-coherence-pulsed
# ---------------------------------------------------------------------------

def pulsed_probe_period(params: SystemParams) -> float:
    """Probe repetition matched to a three-pulse beat with the precession.

    The nominal-76 MHz probe period is chosen as (4 + 1/3) precession
    periods, so co/cross polarization maxima recur every third pulse.
    """
    return params.t_larmor_de * 13.0 / 3.0


def build_coherence_pulsed_sequence(params: SystemParams, n_pulses: int = 40,
                                    probe_area: float = 0.12 * math.pi) -> PulseSequence:
    period = pulsed_probe_period(params)
    dur = sech_duration_for_bandwidth(CONTROL_SIGMA)
    pulses = [Pulse("pump", 1.0, 60.0, PulseShape.SQUARE, Transition.VAC_DE,
                    JONES_H, area=math.pi)]
    for k in range(n_pulses):
        pulses.append(Pulse(f"probe{k:02d}", 62.0 + k * period, dur,
                            PulseShape.SECH, Transition.DE_XX, JONES_H,
                            area=probe_area, bandwidth_sigma=CONTROL_SIGMA))
    return PulseSequence(pulses=tuple(pulses),
                         t_end=62.0 + n_pulses * period + 3.0)


def fig_coherence_pulsed(cfg: PresetConfig, n_pulses: int = 40,
                         probe_area: float = 0.12 * math.pi) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    n = cfg.trajectories or 40000
    period = pulsed_probe_period(params)
    seq = build_coherence_pulsed_sequence(params, n_pulses, probe_area)
    seq_dir = cfg.out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)
    write_sequence_file(seq_dir / "fig-coherence-pulsed.dexseq", seq, cfg.seed, n)

    ens = run_ensemble(seq, params, n, cfg.seed, workers=cfg.workers)
    st = apply_detector(ens.stream, DetectorModel(params.irf_fwhm, 1.0, cfg.seed + 1))
    st = polarization_project(st, "circular", cfg.seed + 2)
    bars = pulsed_coincidence_bars(st, period, max_index=n_pulses - 1)

    total = bars.co_counts + bars.cross_counts
    # local maxima among indices with usable statistics
    maxima = []
    for m in range(1, n_pulses - 1):
        if total[m] < 40:
            continue
        left = bars.dcp[m - 1] if total[m - 1] > 0 else -np.inf
        right = bars.dcp[m + 1] if total[m + 1] > 0 else -np.inf
        if bars.dcp[m] > left and bars.dcp[m] > right:
            maxima.append(m)

    idx = np.arange(3, n_pulses - 1, 3)
    good = total[idx] > 40
    fit = lm_fit(model_library()["exp_decay"], idx[good] * period,
                 bars.dcp[idx][good], bars.dcp_err[idx][good],
                 np.array([0.8, 90.0]))
    result = {
        "probe_period_ns": period,
        "dcp_maxima_indices": maxima,
        "envelope_ns": float(fit.params[1]),
        "envelope_err_ns": float(fit.errors()[1]),
        "fit": fit.to_dict(),
        "same_pulse_pairs": int(total[0]),
        "trajectories": n,
    }
    if "csv" in cfg.emit:
        bars.to_csv(cfg.out_dir / "fig-coherence-pulsed_data.csv")
    _write_fit(cfg, "fig-coherence-pulsed", result)
    _write_meta(cfg, "fig-coherence-pulsed", params,
                {"n_pulses": n_pulses, "probe_area_rad": probe_area,
                 "probe_period_ns": period}, t0)
    return result


# ---------------------------------------------------------------------------
# fig-control
# ---------------------------------------------------------------------------

CONTROL_DETUNING_RATIOS = (-2.0, -1.0, -0.7, 0.0, 0.7, 1.0, 2.0)


def build_control_sequence(detuning: float, control_pol, probe_pol,
                           probe_rabi_uev: float = 0.4,
                           probe_len: float = 36.0) -> PulseSequence:
    dur = sech_duration_for_bandwidth(CONTROL_SIGMA)
    pump = Pulse("pump", 1.0, 60.0, PulseShape.SQUARE, Transition.VAC_DE,
                 JONES_H, area=math.pi)
    control = Pulse("control", 62.0, dur, PulseShape.SECH, Transition.DE_XX,
                    control_pol, area=2.0 * math.pi, detuning=detuning,
                    bandwidth_sigma=CONTROL_SIGMA)
    probe = Pulse("probe", 62.3, probe_len, PulseShape.CW, Transition.DE_XX,
                  probe_pol, peak_rabi=probe_rabi_uev / HBAR)
    return PulseSequence(pulses=(pump, control, probe),
                         t_end=62.3 + probe_len + 2.0)


def _control_histogram(cfg: PresetConfig, params: SystemParams, detuning: float,
                       control_pol, probe_pol, n: int, seed: int,
                       edges: np.ndarray) -> np.ndarray:
    seq = build_control_sequence(detuning, control_pol, probe_pol)
    ens = run_ensemble(seq, params, n, seed, workers=cfg.workers)
    st = apply_detector(ens.stream, DetectorModel(params.irf_fwhm, 1.0, seed + 7))
    sel = st.filter_line(EmissionLine.XX_SS_1278)
    t_rel = sel.t - emission_lag(params) - 62.0
    hist, _ = np.histogram(t_rel, edges)
    return hist


def control_dcp_trace(cfg: PresetConfig, params: SystemParams, detuning: float,
                      control_pol, n: int, seed: int,
                      binwidth: float = 0.25, t_max: float = 34.0):
    """DCP(t) after the control: co-circular run minus cross-circular run.

    The probe and analyzer flip together between the two runs, as in a
    polarization-memory measurement; times are referenced to the control
    pulse centre and corrected for the mean biexciton emission lag.
    """
    edges = np.arange(0.4, t_max, binwidth)
    co = _control_histogram(cfg, params, detuning, control_pol,
                            JONES_SIGMA_PLUS, n, seed, edges)
    cross = _control_histogram(cfg, params, detuning, control_pol,
                               JONES_SIGMA_MINUS, n, seed + 1, edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    tot = co + cross
    dcp = np.where(tot > 0, (co - cross) / np.maximum(tot, 1), np.nan)
    err = np.where(tot > 0,
                   2.0 * np.sqrt(np.maximum(co * cross, 0.25)) / np.maximum(tot, 1) ** 1.5,
                   np.nan)
    return centers, dcp, err, tot


def _linear_amplitude(centers, dcp, err, tot, period, t_pd):
    g = np.sin(2.0 * np.pi * centers / period) * np.exp(-centers / t_pd)
    ok = (tot > 10) & np.isfinite(dcp)
    w = 1.0 / err[ok] ** 2
    denom = float(np.sum(w * g[ok] ** 2))
    amp = float(np.sum(w * dcp[ok] * g[ok]) / denom)
    amp_err = float(1.0 / math.sqrt(denom))
    return amp, amp_err


def fig_control(cfg: PresetConfig,
                ratios=CONTROL_DETUNING_RATIOS) -> dict:
    t0 = time.time()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    params = default_params()
    n = cfg.trajectories or 12000
    models = model_library()
    seq_dir = cfg.out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)

    traces = {}
    for i, r in enumerate(ratios):
        det = r * CONTROL_SIGMA
        write_sequence_file(
            seq_dir / f"fig-control_ds{r:+.1f}.dexseq",
            build_control_sequence(det, JONES_SIGMA_PLUS, JONES_SIGMA_PLUS),
            cfg.seed + 10 * i, n)
        traces[r] = control_dcp_trace(cfg, params, det, JONES_SIGMA_PLUS,
                                      n, cfg.seed + 10 * i)

    # reference run pins the precession period and polarization decay time
    centers, dcp, err, tot = traces[1.0]
    ok = (tot > 10) & np.isfinite(dcp)
    ref = lm_fit(models["decaying_sinusoid"], centers[ok], dcp[ok], err[ok],
                 np.array([0.8, params.t_larmor_de, 0.0, 12.0]),
                 fixed=np.array([False, False, True, False]), max_iter=400)
    period, t_pd = float(ref.params[1]), float(ref.params[3])

    amplitudes = {}
    for r in ratios:
        c, d, e, t = traces[r]
        amplitudes[r] = _linear_amplitude(c, d, e, t, period, t_pd)

    rr = np.array(ratios)
    p0 = np.array([amplitudes[r][0] for r in ratios])
    p0_err = np.array([amplitudes[r][1] for r in ratios])
    norm_fit = lm_fit(models["detuning_curve"], rr * CONTROL_SIGMA, p0, p0_err,
                      np.array([max(abs(p0).max(), 1e-6), CONTROL_SIGMA]),
                      fixed=np.array([False, True]))
    p0_max = float(norm_fit.params[0])
    law = np.sin(np.pi - 2.0 * np.arctan(rr))
    normalized = p0 / p0_max
    rms = float(np.sqrt(np.mean((normalized - law) ** 2)))

    # free-phase fits at +-0.7 sigma pin the first-maximum delay
    first_max = {}
    for r in (0.7, -0.7):
        c, d, e, t = traces[r]
        ok = (t > 10) & np.isfinite(d)
        fit = lm_fit(models["decaying_sinusoid"], c[ok], d[ok], e[ok],
                     np.array([0.5 * np.sign(math.sin(math.pi - 2 * math.atan(r))),
                               period, 0.0, t_pd]),
                     fixed=np.array([False, True, False, True]), max_iter=400)
        amp, phase = float(fit.params[0]), float(fit.params[2])
        if amp < 0:
            amp, phase = -amp, phase + math.pi
        t_first = ((math.pi / 2.0 - phase) % (2.0 * math.pi)) * period / (2.0 * math.pi)
        first_max[r] = t_first

    # null check: H-polarized control at +0.7 sigma
    write_sequence_file(
        seq_dir / "fig-control_null_H.dexseq",
        build_control_sequence(0.7 * CONTROL_SIGMA, JONES_H, JONES_SIGMA_PLUS),
        cfg.seed + 900, n)
    cN, dN, eN, tN = control_dcp_trace(cfg, params, 0.7 * CONTROL_SIGMA, JONES_H,
                                       n, cfg.seed + 900)
    null_amp, null_err = _linear_amplitude(cN, dN, eN, tN, period, t_pd)

    result = {
        "period_ns": period,
        "t_pd_ns": t_pd,
        "detuning_ratios": list(ratios),
        "p0": p0.tolist(),
        "p0_err": p0_err.tolist(),
        "p0_normalized": normalized.tolist(),
        "law": law.tolist(),
        "rms_vs_law": rms,
        "p0_max": p0_max,
        "first_max_ns_plus07": first_max[0.7],
        "first_max_ns_minus07": first_max[-0.7],
        "null_p0_normalized": null_amp / p0_max,
        "null_p0_err_normalized": null_err / abs(p0_max),
        "reference_fit": ref.to_dict(),
    }
    if "csv" in cfg.emit:
        cols = [centers]
        headers = ["t_ns"]
        for r in ratios:
            cols.extend([traces[r][1], traces[r][2]])
            headers.extend([f"dcp_ds{r:+.1f}", f"dcp_err_ds{r:+.1f}"])
        cols.extend([dN, eN])
        headers.extend(["dcp_null_H", "dcp_err_null_H"])
        np.savetxt(cfg.out_dir / "fig-control_data.csv", np.column_stack(cols),
                   delimiter=",", header=",".join(headers), comments="", fmt="%.10g")
    _write_fit(cfg, "fig-control", result)
    _write_meta(cfg, "fig-control", params,
                {"trajectories_per_run": n, "sigma_uev": CONTROL_SIGMA}, t0)
    return result


PRESETS = {
    "fig-saturation": fig_saturation,
    "fig-rabi": fig_rabi,
    "fig-lifetime": fig_lifetime,
    "fig-coherence-cw": fig_coherence_cw,
    "fig-coherence-pulsed": fig_coherence_pulsed,
    "fig-control": fig_control,
}


def run_preset(name: str, cfg: PresetConfig) -> dict:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return PRESETS[name](cfg)
