"""Time evolution: master equation, quantum trajectories, and an exact oracle.

Three independent routes compute the same physics:

* ``evolve_lindblad`` integrates the master equation with an adaptive
  Runge-Kutta stepper (densities, Bloch vector, emission fluxes).
* ``run_trajectory`` / ``run_ensemble`` unravel the master equation into
  Monte-Carlo wave-function trajectories producing photon click records.
* ``propagate_oracle`` exponentiates the full 49x49 superoperator for
  piecewise-constant Hamiltonians; slow, used as a test reference.

Trajectory speed comes from compiling a pulse sequence into segments in which
the effective non-Hermitian Hamiltonian is constant (propagated by cached
eigendecomposition, exact) or smoothly shaped (propagated by cached numeric
interval propagators); jumps are located by bisection on the monotone norm.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import integrate
from .integrate import IntegrationError
from .photonics import ClickStream
from .physics import (
    DIM,
    HBAR,
    BasisState,
    CollapseChannel,
    EmissionLine,
    SystemParams,
    collapse_channels,
    ket,
)
from .pulses import SHAPED, HamiltonianPlan, PulseSequence

JUMP_TIME_RESOLUTION = 1e-4  # ns
_STIFF_POP_EPS = 1e-6


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# states and traces
# ---------------------------------------------------------------------------

@dataclass
class QuantumState:
    rho: np.ndarray
    t: float = 0.0

    @classmethod
    def from_ket(cls, psi: np.ndarray | BasisState, t: float = 0.0) -> "QuantumState":
        if isinstance(psi, BasisState):
            psi = ket(psi)
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), t)

    def validate(self, herm_tol=1e-9, trace_tol=1e-7, eig_tol=1e-7) -> None:
        r = self.rho
        if np.max(np.abs(r - r.conj().T)) > herm_tol:
            raise SimulationError(f"state at t={self.t} lost Hermiticity")
        tr = float(np.real(np.trace(r)))
        if abs(tr - 1.0) > trace_tol:
            raise SimulationError(f"state at t={self.t} lost trace: {tr}")
        if np.min(np.linalg.eigvalsh((r + r.conj().T) / 2.0)) < -eig_tol:
            raise SimulationError(f"state at t={self.t} lost positivity")

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho))

    def bloch_de(self) -> np.ndarray:
        """DE qubit Bloch vector (x, y, z) in the {|+2>, |-2>} basis."""
        return _bloch_from_coherence(
            self.rho[BasisState.DE_P2, BasisState.DE_M2],
            self.populations()[BasisState.DE_P2],
            self.populations()[BasisState.DE_M2],
        )


def _bloch_from_coherence(rho_pm: complex, pop_p: float, pop_m: float) -> np.ndarray:
    return np.array([2.0 * rho_pm.real, -2.0 * rho_pm.imag, pop_p - pop_m])


TRACE_CSV_COLUMNS = (
    "t_ns", "pop_vac", "pop_p2", "pop_m2", "pop_p2x", "pop_m2x",
    "pop_p3", "pop_m3", "bloch_x", "bloch_y", "bloch_z",
)


@dataclass
class ObservableTrace:
    """Uniformly sampled populations, DE Bloch vector and emission fluxes."""

    times: np.ndarray                 # (N,)
    populations: np.ndarray           # (N, 7)
    bloch: np.ndarray                 # (N, 3)
    emission: np.ndarray | None = None  # (N, 3) photon flux per line, ns^-1
    emitted_total: np.ndarray | None = None  # (3,) integrated photons per line

    def to_csv(self, path) -> None:
        header = ",".join(TRACE_CSV_COLUMNS)
        data = np.column_stack([self.times, self.populations, self.bloch])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")


# ---------------------------------------------------------------------------
# master equation
# ---------------------------------------------------------------------------

class _LindbladRHS:
    """Precompiled right-hand side of the master equation plus flux cumulants."""

    def __init__(self, seq: PulseSequence, params: SystemParams):
        self.plan = HamiltonianPlan(seq, params)
        self.plan.validate()
        self.channels = collapse_channels(params)
        self.l_scaled = np.stack(
            [np.sqrt(ch.rate) * ch.operator for ch in self.channels])
        self.l_conj = self.l_scaled.conj()
        self.a_total = np.einsum("kji,kjl->il", self.l_conj, self.l_scaled)
        self.a_line = np.zeros((len(EmissionLine), DIM, DIM), dtype=complex)
        for ch in self.channels:
            if ch.emission is not None:
                op = ch.operator
                self.a_line[ch.emission.line] += ch.rate * (op.conj().T @ op)

    def flux(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kij,ji->k", self.a_line, rho))

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        rho = y[:DIM * DIM].reshape(DIM, DIM)
        h = self.plan(t)
        drho = (-1j / HBAR) * (h @ rho - rho @ h)
        drho += np.einsum("kij,jl,kml->im", self.l_scaled, rho, self.l_conj)
        a = self.a_total
        drho -= 0.5 * (a @ rho + rho @ a)
        out = np.empty_like(y)
        out[:DIM * DIM] = drho.reshape(-1)
        out[DIM * DIM:] = self.flux(rho)
        return out


def _window_breakpoints(seq: PulseSequence, t0: float, t1: float) -> list[float]:
    period = seq.rep_period
    edges = []
    for p in seq.pulses:
        edges.extend(p.window)
    if period > 0.0:
        out = []
        p_lo = int(math.floor(t0 / period))
        p_hi = int(math.ceil(t1 / period)) + 1
        for k in range(p_lo, p_hi):
            out.extend(e + k * period for e in edges)
            out.append(k * period)
        return [e for e in out if t0 < e < t1]
    return [e for e in edges if t0 < e < t1]


def evolve_lindblad(
    state: QuantumState,
    seq: PulseSequence,
    params: SystemParams,
    t1: float,
    tol: float = 1e-8,
    sample_dt: float | None = 0.05,
) -> tuple[QuantumState, ObservableTrace | None]:
    """Integrate d(rho)/dt = -(i/hbar)[H(t), rho] + dissipator up to t1.

    Returns the final state and, when ``sample_dt`` is set, a trace of
    populations, DE Bloch vector and per-line emission flux on a uniform
    grid.  State invariants (trace, Hermiticity, positivity) are checked at
    every sample and at the endpoint.
    """
    if not t1 > state.t:
        raise ValueError("t1 must exceed state.t")
    rhs = _LindbladRHS(seq, params)
    y0 = np.concatenate([state.rho.reshape(-1), np.zeros(3, dtype=complex)])

    shaped_windows = [p.window for p in seq.pulses if p.shape in SHAPED]
    shaped_cap = min((w[1] - w[0] for w in shaped_windows), default=math.inf) / 8.0
    period = seq.rep_period

    def max_step(t, y):
        pops = np.real(y[:DIM * DIM].reshape(DIM, DIM).diagonal())
        cap = math.inf
        if pops[3:].max() > _STIFF_POP_EPS:
            cap = params.tau_hh / 5.0
        tt = t - math.floor(t / period) * period if period > 0.0 else t
        for lo, hi in shaped_windows:
            if lo - 1e-12 <= tt <= hi + 1e-12:
                cap = min(cap, shaped_cap)
                break
        return cap

    samples: list[tuple[float, np.ndarray]] = []
    sample_times = None
    if sample_dt is not None:
        n = int(math.floor((t1 - state.t) / sample_dt + 1e-9))
        sample_times = state.t + sample_dt * np.arange(1, n + 1)
        sample_times = sample_times[sample_times <= t1 + 1e-12]

    def on_sample(ts, ys):
        samples.append((ts, ys.copy()))

    y1 = integrate.solve(
        rhs, state.t, y0, t1,
        rtol=tol, atol=tol * 1e-2,
        max_step=max_step,
        breakpoints=_window_breakpoints(seq, state.t, t1),
        sample_times=sample_times,
        on_sample=on_sample if sample_times is not None else None,
    )

    rho1 = y1[:DIM * DIM].reshape(DIM, DIM)
    rho1 = (rho1 + rho1.conj().T) / 2.0
    final = QuantumState(rho1, t1)
    final.validate()

    trace = None
    if sample_dt is not None:
        rows = [(state.t, y0)] + samples
        times = np.array([r[0] for r in rows])
        pops = np.empty((len(rows), DIM))
        bloch = np.empty((len(rows), 3))
        emission = np.empty((len(rows), 3))
        for i, (ts, ys) in enumerate(rows):
            rho = ys[:DIM * DIM].reshape(DIM, DIM)
            QuantumState((rho + rho.conj().T) / 2.0, ts).validate()
            pops[i] = np.real(np.diag(rho))
            bloch[i] = _bloch_from_coherence(
                rho[BasisState.DE_P2, BasisState.DE_M2], pops[i, 1], pops[i, 2])
            emission[i] = rhs.flux(rho)
        trace = ObservableTrace(times, pops, bloch, emission,
                                emitted_total=np.real(y1[DIM * DIM:]))
    return final, trace


# ---------------------------------------------------------------------------
# superoperator oracle
# ---------------------------------------------------------------------------

def lindblad_superoperator(h: np.ndarray, channels: Sequence[CollapseChannel]) -> np.ndarray:
    """49x49 generator acting on row-major vec(rho)."""
    eye = np.eye(DIM)
    sup = (-1j / HBAR) * (np.kron(h, eye) - np.kron(eye, h.T))
    for ch in channels:
        l = ch.operator
        ldl = l.conj().T @ l
        sup += ch.rate * (np.kron(l, l.conj())
                          - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T)))
    return sup


def propagate_oracle(
    state: QuantumState,
    h: np.ndarray,
    channels: Sequence[CollapseChannel],
    dt: float,
) -> QuantumState:
    """Exact propagation under a constant Hamiltonian via expm of the superoperator."""
    if dt == 0.0:
        return QuantumState(state.rho.copy(), state.t)
    u = scipy.linalg.expm(lindblad_superoperator(h, channels) * dt)
    rho = (u @ state.rho.reshape(-1)).reshape(DIM, DIM)
    return QuantumState(rho, state.t + dt)


# ---------------------------------------------------------------------------
# trajectory compilation
# ---------------------------------------------------------------------------

class _SegmentH:
    """H_eff(t) = base + sum_j hbar*Omega_j(t)*coupling_j for one segment."""

    def __init__(self, base: np.ndarray, drives, h_anti: np.ndarray):
        self.base = base + h_anti
        self.drives = drives  # [(Pulse, symmetrized coupling)]

    def __call__(self, t: float) -> np.ndarray:
        from .pulses import envelope
        h = self.base
        for pulse, coupling in self.drives:
            om = envelope(pulse, t)
            if om != 0.0:
                h = h + (HBAR * om) * coupling
        return h


@dataclass
class _ConstSegment:
    t0: float
    t1: float
    w: np.ndarray      # eigenvalues of H_eff (ueV)
    v: np.ndarray
    vinv: np.ndarray

    def coeffs(self, psi: np.ndarray) -> np.ndarray:
        return self.vinv @ psi

    def from_coeffs(self, c: np.ndarray, dt: float) -> np.ndarray:
        return self.v @ (np.exp(self.w * (-1j * dt / HBAR)) * c)


@dataclass
class _ShapedSegment:
    t0: float
    t1: float
    edges: np.ndarray      # (n+1,) relative to t0
    props: np.ndarray      # (n, 7, 7) interval propagators
    total: np.ndarray      # (7, 7)
    hfast: _SegmentH
    h_sub: float           # RK4 substep honouring the fastest local timescale


class _TrajectoryPlan:
    """Sequence compiled to per-period segments of the non-Hermitian H_eff."""

    def __init__(self, seq: PulseSequence, params: SystemParams):
        self.seq = seq
        self.params = params
        self.hplan = HamiltonianPlan(seq, params)
        self.hplan.validate()
        self.channels = collapse_channels(params)
        self.rates = np.array([ch.rate for ch in self.channels])
        self.l_ops = np.stack([ch.operator for ch in self.channels])
        a_total = np.einsum("kji,kjl->il", self.l_ops.conj() * self.rates[:, None, None],
                            self.l_ops)
        self.h_anti = -0.5j * HBAR * a_total
        self.period = seq.period
        # pulse attribution for clicks: window start -> pulse index
        starts = np.array([p.window[0] for p in seq.pulses])
        order = np.argsort(starts, kind="stable")
        self.win_starts = starts[order]
        self.win_index = np.asarray(order, dtype=np.int32)
        self._shape_cache: dict = {}
        self.segments = self._build_segments()

    def heff(self, t: float) -> np.ndarray:
        return self.hplan(t) + self.h_anti

    def _active_pulses(self, t: float) -> list[int]:
        out = []
        for i, p in enumerate(self.seq.pulses):
            lo, hi = p.window
            if lo <= t <= hi:
                out.append(i)
        return out

    def _build_segments(self):
        edges = {0.0, self.period}
        for p in self.seq.pulses:
            for e in p.window:
                if 0.0 < e < self.period:
                    edges.add(e)
        edges = sorted(edges)
        segments = []
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a < 1e-12:
                continue
            mid = 0.5 * (a + b)
            idxs = self._active_pulses(mid)
            shaped = any(self.seq.pulses[i].shape in SHAPED for i in idxs)
            if shaped:
                segments.append(self._compile_shaped(a, b, idxs))
            else:
                segments.append(self._compile_const(a, b, idxs))
        return segments

    def _compile_const(self, a: float, b: float, idxs: list[int]):
        h = self.heff(0.5 * (a + b))
        w, v = np.linalg.eig(h)
        try:
            vinv = np.linalg.inv(v)
            if np.linalg.cond(v) > 1e10:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            return self._compile_shaped(a, b, idxs)
        return _ConstSegment(a, b, w, v, vinv)

    def _shape_signature(self, a: float, b: float, idxs: list[int]):
        sig = [round(b - a, 12)]
        for i in idxs:
            p = self.seq.pulses[i]
            sig.append((p.shape, p.transition, p.polarization, p.area, p.peak_rabi,
                        p.duration, p.detuning, round(p.t0 - a, 12)))
        return tuple(sig)

    def _compile_shaped(self, a: float, b: float, idxs: list[int], nsub: int = 16):
        sig = self._shape_signature(a, b, idxs)
        cached = self._shape_cache.get(sig)
        if cached is not None:
            seg = cached
            return _ShapedSegment(a, b, seg.edges, seg.props, seg.total,
                                  self._segment_h(a, idxs), seg.h_sub)
        hfast = self._segment_h(a, idxs)
        edges_abs = np.linspace(a, b, nsub + 1)
        hmax = max(np.linalg.norm(hfast(t)) for t in np.linspace(a, b, 65))
        h_sub = HBAR / (10.0 * hmax) if hmax > 0 else (b - a)

        def mat_rhs(t, y):
            return ((-1j / HBAR) * hfast(t) @ y.reshape(DIM, DIM)).reshape(-1)

        eye = np.eye(DIM, dtype=complex).reshape(-1)
        props = np.empty((nsub, DIM, DIM), dtype=complex)
        for k in range(nsub):
            props[k] = integrate.solve(
                mat_rhs, edges_abs[k], eye, edges_abs[k + 1],
                rtol=1e-10, atol=1e-12,
                max_step=(b - a) / (4 * nsub),
            ).reshape(DIM, DIM)
        total = np.eye(DIM, dtype=complex)
        for k in range(nsub):
            total = props[k] @ total
        seg = _ShapedSegment(a, b, edges_abs - a, props, total, hfast, h_sub)
        self._shape_cache[sig] = seg
        return seg

    def _segment_h(self, a: float, idxs: list[int]) -> _SegmentH:
        base, drives = self.hplan.segment_parts(idxs)
        return _SegmentH(base, drives, self.h_anti)

    def pulse_index_for(self, t_in_period: float) -> int:
        i = int(np.searchsorted(self.win_starts, t_in_period + 1e-12) - 1)
        return int(self.win_index[i]) if i >= 0 else -1


@lru_cache(maxsize=16)
def _compiled_plan(seq: PulseSequence, params: SystemParams) -> _TrajectoryPlan:
    return _TrajectoryPlan(seq, params)


# ---------------------------------------------------------------------------
# single trajectory
# ---------------------------------------------------------------------------

class Click(NamedTuple):
    t: float
    line: EmissionLine
    polarization: tuple[complex, complex]
    pulse_index: int


@dataclass
class TrajectoryResult:
    clicks: list[Click]
    final_state: np.ndarray
    rng_seed: int
    samples: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None  # (t, pops, coh12)


def trajectory_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Deterministic, order-independent per-trajectory seed derivation."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))


def _norm2(psi: np.ndarray) -> float:
    return float(np.real(psi.conj() @ psi))


class _Walker:
    """Carries one wavefunction through the compiled segment list.

    Between jumps the unnormalized wavefunction evolves under the segment
    propagators; a jump fires when its squared norm crosses the current
    uniform threshold, located by bisection to JUMP_TIME_RESOLUTION.
    """

    def __init__(self, plan: _TrajectoryPlan, rng: np.random.Generator,
                 sample_times: np.ndarray | None):
        self.plan = plan
        self.rng = rng
        self.clicks: list[Click] = []
        self.sample_times = sample_times
        self.sample_pops: list[np.ndarray] = []
        self.sample_coh: list[complex] = []
        self._i_sample = 0
        self.threshold = self._draw()

    def _draw(self) -> float:
        return max(self.rng.random(), 1e-300)

    def _samples_pending(self, t_limit: float) -> bool:
        st = self.sample_times
        return (st is not None and self._i_sample < len(st)
                and st[self._i_sample] <= t_limit + 1e-12)

    def _record_samples_upto(self, t_limit: float, state_at):
        st = self.sample_times
        if st is None:
            return
        while self._i_sample < len(st) and st[self._i_sample] <= t_limit + 1e-12:
            psi = state_at(st[self._i_sample])
            n2 = _norm2(psi)
            self.sample_pops.append(np.abs(psi) ** 2 / n2)
            self.sample_coh.append(psi[1] * np.conj(psi[2]) / n2)
            self._i_sample += 1

    def _jump(self, psi: np.ndarray, t_abs: float, t_in_period: float) -> np.ndarray:
        amps = self.plan.l_ops @ psi
        weights = self.plan.rates * np.real(np.einsum("ki,ki->k", amps.conj(), amps))
        total = weights.sum()
        if not total > 0.0:
            raise SimulationError(f"jump with no open channel at t={t_abs}")
        k = int(np.searchsorted(np.cumsum(weights) / total, self.rng.random()))
        k = min(k, len(weights) - 1)
        ch = self.plan.channels[k]
        if ch.emission is not None:
            self.clicks.append(Click(
                t_abs, ch.emission.line, ch.emission.polarization,
                self.plan.pulse_index_for(t_in_period)))
        psi = amps[k]
        psi = psi / math.sqrt(_norm2(psi))
        self.threshold = self._draw()
        return psi

    # -- constant segments ----------------------------------------------------

    def _walk_const(self, seg: _ConstSegment, psi, t_cursor, offset):
        t_end = seg.t1 + offset
        while True:
            c = seg.coeffs(psi)

            def state_at(ts):
                return seg.from_coeffs(c, ts - t_cursor)

            psi_end = seg.from_coeffs(c, t_end - t_cursor)
            if _norm2(psi_end) >= self.threshold:
                self._record_samples_upto(t_end, state_at)
                return psi_end, t_end
            lo, hi = 0.0, t_end - t_cursor
            while hi - lo > JUMP_TIME_RESOLUTION:
                mid = 0.5 * (lo + hi)
                if _norm2(seg.from_coeffs(c, mid)) >= self.threshold:
                    lo = mid
                else:
                    hi = mid
            t_jump = t_cursor + 0.5 * (lo + hi)
            self._record_samples_upto(t_jump, state_at)
            psi = seg.from_coeffs(c, t_jump - t_cursor)
            psi = self._jump(psi, t_jump, t_jump - offset)
            t_cursor = t_jump

    # -- shaped segments --------------------------------------------------

    def _rk_step(self, hfast, t, psi, h):
        def rhs(tt, y):
            return (-1j / HBAR) * (hfast(tt) @ y)
        k1 = rhs(t, psi)
        k2 = rhs(t + h / 2, psi + h / 2 * k1)
        k3 = rhs(t + h / 2, psi + h / 2 * k2)
        k4 = rhs(t + h, psi + h * k3)
        return psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    def _step_to(self, seg: _ShapedSegment, t_from, psi, t_to, offset):
        """March psi from t_from to t_to (inside seg) with fixed RK4 substeps.

        Returns (psi_at_t_to, None) or, when the norm threshold is crossed on
        the way, (psi_just_before, crossing_time)."""
        n = max(2, int(math.ceil((t_to - t_from) / seg.h_sub)))
        h = (t_to - t_from) / n
        t, cur = t_from, psi
        hfast = lambda tt: seg.hfast(tt - offset)
        for _ in range(n):
            nxt = self._rk_step(hfast, t, cur, h)
            if _norm2(nxt) < self.threshold:
                lo, hi = 0.0, h
                while hi - lo > JUMP_TIME_RESOLUTION:
                    mid = 0.5 * (lo + hi)
                    if _norm2(self._rk_step(hfast, t, cur, mid)) >= self.threshold:
                        lo = mid
                    else:
                        hi = mid
                tj = t + 0.5 * (lo + hi)
                return self._rk_step(hfast, t, cur, tj - t), tj
            t += h
            cur = nxt
        return cur, None

    def _walk_shaped(self, seg: _ShapedSegment, psi, t_cursor, offset):
        edges = seg.edges + seg.t0 + offset
        t_end = edges[-1]
        # common case: no jump and no samples anywhere in the window
        if t_cursor <= edges[0] + 1e-13 and not self._samples_pending(t_end):
            psi_end = seg.total @ psi
            if _norm2(psi_end) >= self.threshold:
                return psi_end, t_end
        k = int(np.searchsorted(edges, t_cursor + 1e-13) - 1)
        k = max(k, 0)
        psi_k, t_k = psi, t_cursor
        while k < len(seg.props):
            t_next = edges[k + 1]
            sampling = self._samples_pending(t_next)
            if t_k <= edges[k] + 1e-13 and not sampling:
                psi_next = seg.props[k] @ psi_k
                crossed = _norm2(psi_next) < self.threshold
                if not crossed:
                    psi_k, t_k = psi_next, t_next
                    k += 1
                    continue
            if sampling:
                st = self.sample_times
                while (self._i_sample < len(st)
                       and st[self._i_sample] <= t_next + 1e-12):
                    ts = st[self._i_sample]
                    psi_s, tj = self._step_to(seg, t_k, psi_k, ts, offset)
                    if tj is not None:
                        psi_k = self._jump(psi_s, tj, tj - offset)
                        t_k = tj
                        continue
                    n2 = _norm2(psi_s)
                    self.sample_pops.append(np.abs(psi_s) ** 2 / n2)
                    self.sample_coh.append(psi_s[1] * np.conj(psi_s[2]) / n2)
                    self._i_sample += 1
                    psi_k, t_k = psi_s, ts
            psi_next, tj = self._step_to(seg, t_k, psi_k, t_next, offset)
            if tj is None:
                psi_k, t_k = psi_next, t_next
                k += 1
            else:
                psi_k = self._jump(psi_next, tj, tj - offset)
                t_k = tj
        return psi_k, t_end


def run_trajectory(
    seq: PulseSequence,
    params: SystemParams,
    seed: int | np.random.SeedSequence,
    periods: int = 1,
    reset_each_period: bool = False,
    initial: np.ndarray | BasisState | None = None,
    sample_times: np.ndarray | None = None,
) -> TrajectoryResult:
    """One Monte-Carlo wave-function realization of the sequence.

    Deterministic non-Hermitian evolution with norm-threshold jump sampling;
    every radiative jump appends a click tagged with the channel's line and
    polarization.  All randomness comes from the generator seeded by
    ``seed``, so results are bit-reproducible.  With ``periods`` > 1 the
    sequence repeats and the state carries over from period to period unless
    ``reset_each_period`` is set.
    """
    plan = _compiled_plan(seq, params)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(ss))
    rng_id = int(ss.generate_state(1, np.uint64)[0])

    if initial is None:
        initial = BasisState.VAC
    psi0 = ket(initial) if isinstance(initial, BasisState) else np.asarray(initial, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)

    walker = _Walker(plan, rng, np.asarray(sample_times, dtype=float)
                     if sample_times is not None else None)
    psi = psi0.copy()
    t = 0.0
    for p in range(periods):
        offset = p * plan.period
        if reset_each_period and p > 0:
            psi = psi0.copy()
            walker.threshold = walker._draw()
        else:
            n2 = _norm2(psi)
            if n2 < 1e-280:
                raise SimulationError("wavefunction norm underflow")
        for seg in plan.segments:
            if isinstance(seg, _ConstSegment):
                psi, t = walker._walk_const(seg, psi, offset + seg.t0, offset)
            else:
                psi, t = walker._walk_shaped(seg, psi, offset + seg.t0, offset)

    psi_final = psi / math.sqrt(_norm2(psi))
    samples = None
    if sample_times is not None:
        samples = (
            np.asarray(sample_times, dtype=float),
            np.array(walker.sample_pops),
            np.array(walker.sample_coh),
        )
    return TrajectoryResult(walker.clicks, psi_final, rng_id, samples)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleTrace:
    times: np.ndarray
    populations: np.ndarray   # (N, 7) trajectory-averaged
    bloch: np.ndarray         # (N, 3)
    n: int


@dataclass
class EnsembleResult:
    stream: ClickStream
    trace: EnsembleTrace | None
    n: int
    base_seed: int


def _run_chunk(args):
    (seq, params, base_seed, indices, periods, reset, initial, sample_times) = args
    out = []
    for i in indices:
        res = run_trajectory(seq, params, trajectory_seed(base_seed, i),
                             periods=periods, reset_each_period=reset,
                             initial=initial, sample_times=sample_times)
        out.append((i, res))
    return out


def run_ensemble(
    seq: PulseSequence,
    params: SystemParams,
    n: int,
    base_seed: int,
    periods: int = 1,
    reset_each_period: bool = False,
    initial: np.ndarray | BasisState | None = None,
    sample_dt: float | None = None,
    workers: int = 1,
) -> EnsembleResult:
    """n independent trajectories with seeds split deterministically from base_seed.

    The merged click stream and averaged trace are invariant to the worker
    count and execution order: trajectory i always uses the counter-based
    stream derived as SeedSequence(base_seed, spawn_key=(i,)).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t_total = periods * seq.period
    sample_times = None
    if sample_dt is not None:
        m = int(math.floor(t_total / sample_dt + 1e-9))
        sample_times = sample_dt * np.arange(0, m + 1)
        sample_times = sample_times[sample_times <= t_total]

    results: list[TrajectoryResult | None] = [None] * n
    if workers <= 1:
        for i in range(n):
            results[i] = run_trajectory(seq, params, trajectory_seed(base_seed, i),
                                        periods=periods, reset_each_period=reset_each_period,
                                        initial=initial, sample_times=sample_times)
    else:
        chunks = [list(range(w, n, workers)) for w in range(workers)]
        args = [(seq, params, base_seed, c, periods, reset_each_period, initial, sample_times)
                for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk_out in pool.map(_run_chunk, args):
                for i, res in chunk_out:
                    results[i] = res

    t_parts, line_parts, pol_parts, tid_parts, pidx_parts = [], [], [], [], []
    pop_sum = coh_sum = None
    for i, res in enumerate(results):
        if res.clicks:
            t_parts.append(np.array([c.t for c in res.clicks]))
            line_parts.append(np.array([int(c.line) for c in res.clicks], dtype=np.int8))
            pol_parts.append(np.array([c.polarization for c in res.clicks], dtype=complex))
            tid_parts.append(np.full(len(res.clicks), i, dtype=np.int64))
            pidx_parts.append(np.array([c.pulse_index for c in res.clicks], dtype=np.int32))
        if sample_times is not None:
            if pop_sum is None:
                pop_sum = res.samples[1].astype(float)
                coh_sum = res.samples[2].astype(complex)
            else:
                pop_sum += res.samples[1]
                coh_sum += res.samples[2]

    if t_parts:
        stream = ClickStream(
            t=np.concatenate(t_parts),
            line=np.concatenate(line_parts),
            pol=np.concatenate(pol_parts),
            traj_id=np.concatenate(tid_parts),
            pulse_index=np.concatenate(pidx_parts),
            t_total=t_total,
        )
    else:
        stream = ClickStream.empty(t_total)

    trace = None
    if sample_times is not None:
        pops = pop_sum / n
        coh = coh_sum / n
        bloch = np.column_stack([2 * coh.real, -2 * coh.imag, pops[:, 1] - pops[:, 2]])
        trace = EnsembleTrace(sample_times, pops, bloch, n)
    return EnsembleResult(stream, trace, n, base_seed)
