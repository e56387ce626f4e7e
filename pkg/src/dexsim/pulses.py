"""Pulse shapes, sequences, selection rules and the driven Hamiltonian.

Conventions
-----------
* ``envelope`` returns the instantaneous Rabi frequency Omega(t) in rad/ns;
  the drive contributes (hbar*Omega/2)*(C + C^dag) to the Hamiltonian, so the
  time integral of Omega is the rotation angle ("area") of a resonant pulse.
* For SQUARE and CW pulses ``t0`` is the window start and ``duration`` the
  gate length.  For GAUSSIAN and SECH pulses ``t0`` is the envelope centre,
  ``duration`` the full width at half maximum of Omega(t), and the support is
  truncated to exactly zero outside t0 +- 10*duration.
* ``detuning`` > 0 places the drive carrier *below* the targeted transition:
  in the pulse frame the upper manifold is shifted up by +detuning.  With this
  sign a detuned 2pi sech pulse imprints the phase pi - 2*arctan(detuning /
  bandwidth_sigma) on the coupled spin component, which is what makes a
  positively detuned circular control advance the precession by a quarter
  period rather than three quarters.
* ``bandwidth_sigma`` is the sech spectral-width parameter sigma = hbar/tau_s
  of the envelope Omega = Omega0*sech(t/tau_s).  The envelope power spectrum
  is sech^2(pi*omega*tau_s/2) whose FWHM is about 1.12*sigma, so sigma is the
  quoted "spectral width" of the control laser up to that shape factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .physics import (
    DE_MANIFOLD,
    DIM,
    HBAR,
    XX_MANIFOLD,
    BasisState,
    SystemParams,
    projector,
    static_hamiltonian,
)

# sech(x) = 1/2 at x = arccosh(2); amplitude FWHM of sech(t/tau) = this * tau.
SECH_FWHM_FACTOR = 2.0 * math.acosh(2.0)
# Power-spectrum FWHM of a Gaussian amplitude envelope with FWHM d is this*hbar/d.
GAUSSIAN_TBW_FACTOR = 4.0 * math.log(2.0) * math.sqrt(2.0)


class PulseShape(Enum):
    SQUARE = "square"
    GAUSSIAN = "gaussian"
    SECH = "sech"
    CW = "cw"


class Transition(Enum):
    VAC_DE = "VAC_DE"  # pump line, 1.2834 eV
    DE_XX = "DE_XX"    # biexciton line, 1.294 eV


SHAPED = (PulseShape.GAUSSIAN, PulseShape.SECH)


def sech_time_constant(bandwidth_sigma: float) -> float:
    """Sech time constant tau_s (ns) for a spectral width sigma (ueV)."""
    return HBAR / bandwidth_sigma


def sech_duration_for_bandwidth(bandwidth_sigma: float) -> float:
    """Envelope FWHM (ns) of a sech pulse with the given spectral width (ueV)."""
    return SECH_FWHM_FACTOR * HBAR / bandwidth_sigma


def sech_bandwidth_for_duration(duration: float) -> float:
    """Inverse of sech_duration_for_bandwidth."""
    return SECH_FWHM_FACTOR * HBAR / duration


def gaussian_bandwidth_for_duration(duration: float) -> float:
    """Power-spectrum FWHM (ueV) of a Gaussian envelope with FWHM duration (ns)."""
    return GAUSSIAN_TBW_FACTOR * HBAR / duration


def sech_rotation_angle(detuning: float, bandwidth_sigma: float) -> float:
    """Bloch rotation angle of a detuned 2pi sech pulse about its polarization axis.

    Exact two-level result for Omega(t) = (2/tau_s)*sech(t/tau_s) with the
    upper level at +detuning: the returning amplitude acquires the phase
    pi - 2*arctan(detuning/sigma), sigma = hbar/tau_s.
    """
    if not bandwidth_sigma > 0.0:
        raise ValueError("bandwidth_sigma must be positive")
    return math.pi - 2.0 * math.atan(detuning / bandwidth_sigma)


@dataclass(frozen=True)
class Pulse:
    name: str
    t0: float
    duration: float
    shape: PulseShape
    transition: Transition
    polarization: tuple[complex, complex]
    area: float | None = None        # rad, finite pulses
    peak_rabi: float | None = None   # rad/ns, CW only
    detuning: float = 0.0            # ueV, carrier offset from the transition
    bandwidth_sigma: float | None = None  # ueV, shaped pulses

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValueError(f"pulse {self.name}: duration must be positive")
        if self.shape is PulseShape.CW:
            if self.peak_rabi is None or self.area is not None:
                raise ValueError(f"pulse {self.name}: CW pulses take peak_rabi, not area")
        else:
            if self.area is None or self.peak_rabi is not None:
                raise ValueError(f"pulse {self.name}: finite pulses take area, not peak_rabi")
        if self.shape in SHAPED:
            bw = self.bandwidth_sigma
            if bw is None:
                if self.shape is PulseShape.SECH:
                    bw = sech_bandwidth_for_duration(self.duration)
                else:
                    bw = gaussian_bandwidth_for_duration(self.duration)
                object.__setattr__(self, "bandwidth_sigma", bw)
            if not bw > 0.0:
                raise ValueError(f"pulse {self.name}: bandwidth_sigma must be positive")
        pol = tuple(complex(c) for c in self.polarization)
        norm = math.sqrt(abs(pol[0]) ** 2 + abs(pol[1]) ** 2)
        if not math.isclose(norm, 1.0, rel_tol=1e-9):
            raise ValueError(f"pulse {self.name}: polarization must be a unit Jones vector")
        object.__setattr__(self, "polarization", pol)

    @property
    def window(self) -> tuple[float, float]:
        """Support of the envelope (exactly zero outside)."""
        if self.shape in SHAPED:
            return (self.t0 - 10.0 * self.duration, self.t0 + 10.0 * self.duration)
        return (self.t0, self.t0 + self.duration)


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...]
    rep_period: float = 0.0  # 0 = single shot
    t_end: float = 0.0

    def __post_init__(self):
        pulses = tuple(sorted(self.pulses, key=lambda p: p.t0))
        object.__setattr__(self, "pulses", pulses)
        last = max((p.t0 + p.duration for p in pulses), default=0.0)
        t_end = self.t_end if self.t_end > 0.0 else last
        if t_end < last:
            raise ValueError(f"t_end={t_end} ends before the last pulse ({last})")
        object.__setattr__(self, "t_end", float(t_end))
        if self.rep_period != 0.0 and self.rep_period < t_end:
            raise ValueError("rep_period must be 0 or >= t_end")

    @property
    def period(self) -> float:
        return self.rep_period if self.rep_period > 0.0 else self.t_end


def envelope(pulse: Pulse, t: float) -> float:
    """Instantaneous Rabi frequency Omega(t) in rad/ns."""
    if not math.isfinite(t):
        raise ValueError("envelope time must be finite")
    lo, hi = pulse.window
    if t < lo or t > hi:
        return 0.0
    if pulse.shape is PulseShape.SQUARE:
        return pulse.area / pulse.duration
    if pulse.shape is PulseShape.CW:
        return pulse.peak_rabi
    if pulse.shape is PulseShape.GAUSSIAN:
        # integral of exp(-4 ln2 x^2/d^2) is (d/2) sqrt(pi/ln2)
        omega0 = pulse.area / ((pulse.duration / 2.0) * math.sqrt(math.pi / math.log(2.0)))
        x = (t - pulse.t0) / pulse.duration
        return omega0 * math.exp(-4.0 * math.log(2.0) * x * x)
    # SECH: integral of Omega0 sech(t/tau) is pi*Omega0*tau
    tau = pulse.duration / SECH_FWHM_FACTOR
    omega0 = pulse.area / (math.pi * tau)
    return omega0 / math.cosh((t - pulse.t0) / tau)


def coupling_operator(transition: Transition, polarization: tuple[complex, complex]) -> np.ndarray:
    """Raising operator C selected by transition and polarization.

    VAC_DE: only the H component couples, VAC <-> |a|, with full amplitude.
    DE_XX:  the sigma+ component couples |+2> <-> |+3>, sigma- couples
            |-2> <-> |-3>; H drives both with amplitude 1/sqrt(2).
    """
    ph, pv = polarization
    c = np.zeros((DIM, DIM), dtype=complex)
    if transition is Transition.VAC_DE:
        c[BasisState.DE_P2, BasisState.VAC] = ph / math.sqrt(2.0)
        c[BasisState.DE_M2, BasisState.VAC] = -ph / math.sqrt(2.0)
    else:
        p_plus = (ph - 1.0j * pv) / math.sqrt(2.0)
        p_minus = (ph + 1.0j * pv) / math.sqrt(2.0)
        c[BasisState.XX_P3, BasisState.DE_P2] = p_plus
        c[BasisState.XX_M3, BasisState.DE_M2] = p_minus
    return c


class FrameError(ValueError):
    """Overlapping pulses on one transition with incompatible rotating frames."""


_P_DE = projector(DE_MANIFOLD)
_P_XX = projector(XX_MANIFOLD)


class HamiltonianPlan:
    """Precompiled time-dependent Hamiltonian H(t) for one pulse sequence.

    Each pulse carries its own rotating frame: while it is active its
    detuning appears as +detuning on the upper manifold of its transition.
    VAC_DE frames are referenced to the optically active eigenstate |a|, so
    a resonant pump adds (delta_de/2 + detuning) on the DE manifold; DE_XX
    frames ride on top of that DE shift.  Overlapping same-transition pulses
    must agree on the detuning (their drives then add coherently); otherwise
    the frame is ill-defined and FrameError is raised.
    """

    def __init__(self, seq: PulseSequence, params: SystemParams):
        self.seq = seq
        self.params = params
        self.h0 = static_hamiltonian(params)
        self._drives = [
            (p, coupling_operator(p.transition, p.polarization)) for p in seq.pulses
        ]
        self._couplings = [(c + c.conj().T) / 2.0 for _, c in self._drives]

    def fold(self, t: float) -> float:
        if self.seq.rep_period > 0.0:
            return t - math.floor(t / self.seq.rep_period) * self.seq.rep_period
        return t

    def active(self, t: float) -> list[int]:
        tt = self.fold(t)
        out = []
        for i, (p, _) in enumerate(self._drives):
            lo, hi = p.window
            if lo <= tt <= hi:
                out.append(i)
        return out

    def _frame_terms(self, idxs: list[int]) -> tuple[float, float, bool]:
        """(DE manifold shift, XX manifold shift, any DE_XX active)."""
        det_vacde, det_dexx = None, None
        for i in idxs:
            p = self._drives[i][0]
            if p.transition is Transition.VAC_DE:
                if det_vacde is not None and det_vacde != p.detuning:
                    raise FrameError(
                        "overlapping VAC_DE pulses with different detunings are unsupported")
                det_vacde = p.detuning
            else:
                if det_dexx is not None and det_dexx != p.detuning:
                    raise FrameError(
                        "overlapping DE_XX pulses with different detunings are unsupported")
                det_dexx = p.detuning
        shift_de = 0.0
        if det_vacde is not None:
            shift_de = self.params.delta_de / 2.0 + det_vacde
        shift_xx = shift_de + (det_dexx if det_dexx is not None else 0.0)
        return shift_de, shift_xx, det_dexx is not None

    def __call__(self, t: float) -> np.ndarray:
        """H(t) in ueV, Hermitian."""
        tt = self.fold(t)
        idxs = self.active(tt)
        h = self.h0.copy()
        if not idxs:
            return h
        shift_de, shift_xx, xx_driven = self._frame_terms(idxs)
        if shift_de != 0.0:
            h += shift_de * _P_DE
        if xx_driven and shift_xx != 0.0:
            h += shift_xx * _P_XX
        for i in idxs:
            p = self._drives[i][0]
            om = envelope(p, tt)
            if om != 0.0:
                h += (HBAR * om) * self._couplings[i]
        return h

    def segment_parts(self, idxs: list[int]) -> tuple[np.ndarray, list[tuple[Pulse, np.ndarray]]]:
        """Constant part and drive terms of H for a fixed active-pulse set.

        For times where exactly the pulses in ``idxs`` are active,
        H(t) = base + sum_j hbar*Omega_j(t)*coupling_j.
        """
        base = self.h0.copy()
        if idxs:
            shift_de, shift_xx, xx_driven = self._frame_terms(idxs)
            if shift_de != 0.0:
                base += shift_de * _P_DE
            if xx_driven and shift_xx != 0.0:
                base += shift_xx * _P_XX
        return base, [(self._drives[i][0], self._couplings[i]) for i in idxs]

    def validate(self) -> None:
        """Reject same-transition overlaps with incompatible frames up front."""
        pulses = self.seq.pulses
        for i, a in enumerate(pulses):
            for b in pulses[i + 1:]:
                if a.transition is not b.transition:
                    continue
                lo_a, hi_a = a.window
                lo_b, hi_b = b.window
                if lo_b < hi_a and lo_a < hi_b and a.detuning != b.detuning:
                    raise FrameError(
                        f"pulses {a.name!r} and {b.name!r} overlap on "
                        f"{a.transition.value} with different detunings")


def drive_hamiltonian(seq: PulseSequence, params: SystemParams, t: float) -> np.ndarray:
    """Full Hamiltonian H(t) = static + drives + frame terms, in ueV."""
    return HamiltonianPlan(seq, params)(t)
