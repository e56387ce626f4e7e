"""Detector model and photon-correlation analysis.

Click streams are stored column-wise (numpy arrays) like raw time-tagger
dumps: arrival time, emission line, Jones vector, trajectory id, pulse index
and, after a polarization analyzer has been applied, a discrete outcome.
One trajectory plays the role of one experimental realization, so all
coincidence counting pairs clicks within the same trajectory only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .physics import (
    EmissionLine,
    JONES_H,
    JONES_SIGMA_MINUS,
    JONES_SIGMA_PLUS,
    JONES_V,
)

GAUSS_FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

BASIS_VECTORS = {
    "circular": (JONES_SIGMA_PLUS, JONES_SIGMA_MINUS),
    "rectilinear": (JONES_H, JONES_V),
}
OUTCOME_LABELS = {
    "circular": ("sigma+", "sigma-"),
    "rectilinear": ("H", "V"),
}

CLICKS_CSV_COLUMNS = (
    "t_ns", "line", "pol_h_re", "pol_h_im", "pol_v_re", "pol_v_im",
    "traj_id", "pulse_index", "outcome",
)
CORRELATION_CSV_COLUMNS = ("bin_center_ns", "co", "cross", "dcp", "dcp_err")


@dataclass
class ClickStream:
    """Ordered photon-detection records; sorted by (traj_id, t)."""

    t: np.ndarray            # float64, ns
    line: np.ndarray         # int8, EmissionLine values
    pol: np.ndarray          # complex128, (N, 2) Jones vectors
    traj_id: np.ndarray      # int64
    pulse_index: np.ndarray  # int32
    t_total: float
    outcome: np.ndarray = field(default=None)  # int8; -1 until projected
    basis: str | None = None

    def __post_init__(self):
        n = len(self.t)
        if self.outcome is None:
            self.outcome = np.full(n, -1, dtype=np.int8)
        order = np.lexsort((self.t, self.traj_id))
        if not np.array_equal(order, np.arange(n)):
            self._reorder(order)

    def _reorder(self, order):
        self.t = self.t[order]
        self.line = self.line[order]
        self.pol = self.pol[order]
        self.traj_id = self.traj_id[order]
        self.pulse_index = self.pulse_index[order]
        self.outcome = self.outcome[order]

    @classmethod
    def empty(cls, t_total: float = 0.0) -> "ClickStream":
        return cls(
            t=np.empty(0), line=np.empty(0, dtype=np.int8),
            pol=np.empty((0, 2), dtype=complex),
            traj_id=np.empty(0, dtype=np.int64),
            pulse_index=np.empty(0, dtype=np.int32),
            t_total=t_total,
        )

    def __len__(self) -> int:
        return len(self.t)

    def select(self, mask: np.ndarray) -> "ClickStream":
        return ClickStream(
            t=self.t[mask], line=self.line[mask], pol=self.pol[mask],
            traj_id=self.traj_id[mask], pulse_index=self.pulse_index[mask],
            t_total=self.t_total, outcome=self.outcome[mask], basis=self.basis,
        )

    def filter_line(self, line: EmissionLine) -> "ClickStream":
        return self.select(self.line == int(line))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(CLICKS_CSV_COLUMNS) + "\n")
            for i in range(len(self)):
                fh.write(
                    f"{self.t[i]:.10g},{EmissionLine(int(self.line[i])).name},"
                    f"{self.pol[i, 0].real:.10g},{self.pol[i, 0].imag:.10g},"
                    f"{self.pol[i, 1].real:.10g},{self.pol[i, 1].imag:.10g},"
                    f"{self.traj_id[i]},{self.pulse_index[i]},{self.outcome[i]}\n")


@dataclass(frozen=True)
class DetectorModel:
    irf_fwhm: float = 0.45
    efficiency: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.irf_fwhm < 0.0:
            raise ValueError("irf_fwhm must be nonnegative")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")


def apply_detector(stream: ClickStream, det: DetectorModel) -> ClickStream:
    """Efficiency thinning plus Gaussian timing jitter (sigma = FWHM/2.355).

    Records jittered outside the acquisition window [0, t_total] are dropped.
    Deterministic given det.rng_seed.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(det.rng_seed)))
    n = len(stream)
    keep = rng.random(n) < det.efficiency if det.efficiency < 1.0 else np.ones(n, bool)
    out = stream.select(keep)
    if det.irf_fwhm > 0.0 and len(out):
        sigma = det.irf_fwhm / GAUSS_FWHM_TO_SIGMA
        out.t = out.t + rng.normal(0.0, sigma, size=len(out))
        inside = (out.t >= 0.0) & (out.t <= out.t_total)
        out = out.select(inside)
        out._reorder(np.lexsort((out.t, out.traj_id)))
    return out


def polarization_project(stream: ClickStream, basis: str, rng_seed: int) -> ClickStream:
    """Assign each record a discrete analyzer outcome by Born sampling.

    ``basis`` is "circular" (sigma+/sigma-) or "rectilinear" (H/V); outcome 0
    refers to the first basis vector.  Deterministic given rng_seed.
    """
    if basis not in BASIS_VECTORS:
        raise ValueError(f"unknown basis {basis!r}")
    b0 = np.asarray(BASIS_VECTORS[basis][0])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(rng_seed)))
    p0 = np.abs(stream.pol @ b0.conj()) ** 2
    outcome = (rng.random(len(stream)) >= p0).astype(np.int8)
    out = replace(stream, outcome=outcome, basis=basis,
                  t=stream.t.copy(), line=stream.line.copy(), pol=stream.pol.copy(),
                  traj_id=stream.traj_id.copy(), pulse_index=stream.pulse_index.copy())
    return out


@dataclass
class CorrelationResult:
    bin_edges: np.ndarray
    co_counts: np.ndarray
    cross_counts: np.ndarray
    dcp: np.ndarray
    dcp_err: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def to_csv(self, path) -> None:
        header = ",".join(CORRELATION_CSV_COLUMNS)
        data = np.column_stack([
            self.bin_centers, self.co_counts, self.cross_counts, self.dcp, self.dcp_err])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "bin_edges_ns": self.bin_edges.tolist(),
                "co": self.co_counts.astype(int).tolist(),
                "cross": self.cross_counts.astype(int).tolist(),
                "dcp": [None if not np.isfinite(v) else v for v in self.dcp],
                "dcp_err": [None if not np.isfinite(v) else v for v in self.dcp_err],
            }, fh, indent=1)


def _dcp_with_err(co: np.ndarray, cross: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = co + cross
    dcp = np.full(co.shape, np.nan)
    err = np.full(co.shape, np.nan)
    ok = n > 0
    dcp[ok] = (co[ok] - cross[ok]) / n[ok]
    # binomial error on (co - cross)/n; floored at one count to keep fits sane
    err[ok] = 2.0 * np.sqrt(np.maximum(co[ok] * cross[ok], 0.25)) / n[ok] ** 1.5
    return dcp, err


def _same_traj_pairs(stream: ClickStream, window: float | None):
    """Yield (dt, same_outcome) arrays for ordered same-trajectory pairs."""
    t, tid, outc = stream.t, stream.traj_id, stream.outcome
    boundaries = np.flatnonzero(np.diff(tid)) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [len(t)]])
    for a, b in zip(starts, stops):
        tt = t[a:b]
        oo = outc[a:b]
        for i in range(b - a - 1):
            hi = b - a if window is None else int(
                np.searchsorted(tt, tt[i] + window, side="right"))
            if hi <= i + 1:
                continue
            dt = tt[i + 1:hi] - tt[i]
            pos = dt > 0.0
            if not pos.any():
                continue
            yield dt[pos], oo[i + 1:hi][pos] == oo[i]


def g2_circular(
    stream: ClickStream,
    binwidth: float = 0.2,
    window: float = 30.0,
    line: EmissionLine = EmissionLine.XX_SS_1278,
) -> CorrelationResult:
    """Polarization-resolved intensity autocorrelation of one emission line.

    Every ordered pair of same-trajectory clicks with 0 < dt <= window
    increments the co (same analyzer outcome) or cross histogram at dt.
    """
    if stream.basis != "circular":
        raise ValueError("stream must be polarization-projected in the circular basis")
    sel = stream.filter_line(line)
    nbins = max(int(math.ceil(window / binwidth)), 1)
    edges = binwidth * np.arange(nbins + 1)
    co = np.zeros(nbins)
    cross = np.zeros(nbins)
    for dt, same in _same_traj_pairs(sel, window):
        bins = np.minimum((dt / binwidth).astype(int), nbins - 1)
        np.add.at(co, bins[same], 1)
        np.add.at(cross, bins[~same], 1)
    dcp, err = _dcp_with_err(co, cross)
    return CorrelationResult(edges, co, cross, dcp, err)


@dataclass
class PulsedBars:
    """Coincidences integrated per pulse-separation index."""

    indices: np.ndarray
    co_counts: np.ndarray
    cross_counts: np.ndarray
    dcp: np.ndarray
    dcp_err: np.ndarray

    def to_csv(self, path) -> None:
        header = "pulse_index,co,cross,dcp,dcp_err"
        data = np.column_stack([
            self.indices, self.co_counts, self.cross_counts, self.dcp, self.dcp_err])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")


def pulsed_coincidence_bars(
    stream: ClickStream,
    rep_period: float,
    line: EmissionLine = EmissionLine.XX_SS_1278,
    max_index: int | None = None,
) -> PulsedBars:
    """Pair counts binned by integer pulse separation round(dt / rep_period)."""
    if rep_period <= 0.0:
        raise ValueError("rep_period must be positive")
    if stream.basis is None:
        raise ValueError("stream must be polarization-projected first")
    sel = stream.filter_line(line)
    if max_index is None:
        max_index = int(math.ceil(sel.t_total / rep_period)) if len(sel) else 0
    co = np.zeros(max_index + 1)
    cross = np.zeros(max_index + 1)
    for dt, same in _same_traj_pairs(sel, None):
        m = np.rint(dt / rep_period).astype(int)
        ok = m <= max_index
        np.add.at(co, m[ok & same], 1)
        np.add.at(cross, m[ok & ~same], 1)
    dcp, err = _dcp_with_err(co, cross)
    return PulsedBars(np.arange(max_index + 1), co, cross, dcp, err)
