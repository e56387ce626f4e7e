"""Adaptive Dormand-Prince RK5(4) integrator with dense output.

Small, self-contained stepper used for master-equation integration and for
building numerical propagators across shaped pulse windows.  Works on flat
complex state vectors; step endpoints never cross a supplied breakpoint, so
piecewise-defined right-hand sides are integrated exactly piecewise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class IntegrationError(RuntimeError):
    pass


_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# error estimate coefficients (5th minus 4th order), incl. the FSAL stage
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# dense-output interpolation matrix (quartic in theta)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _rms_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def solve(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    t1: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_step: float | Callable[[float, np.ndarray], float] = np.inf,
    breakpoints: Sequence[float] = (),
    sample_times: Sequence[float] | None = None,
    on_sample: Callable[[float, np.ndarray], None] | None = None,
    first_step: float | None = None,
) -> np.ndarray:
    """Integrate y' = f(t, y) from t0 to t1 (t1 > t0) and return y(t1).

    ``sample_times`` must be sorted and inside (t0, t1]; each is delivered to
    ``on_sample`` using 4th-order dense interpolation of the accepted steps.
    ``max_step`` may be a callable evaluated at the start of every step.
    """
    y = np.asarray(y0, dtype=complex).copy()
    t = float(t0)
    span = t1 - t0
    if span <= 0.0:
        raise ValueError("t1 must exceed t0")

    brk = np.asarray(sorted(b for b in breakpoints if t0 < b < t1), dtype=float)
    samples = np.asarray(sample_times if sample_times is not None else (), dtype=float)
    i_sample = 0

    fy = f(t, y)
    if first_step is None:
        scale = atol + rtol * _rms_norm(y)
        d1 = _rms_norm(fy)
        h = min(span / 50.0, 0.1 * scale / d1 if d1 > 0 else span / 50.0)
        h = max(h, 1e-9 * span)
    else:
        h = float(first_step)

    k = np.empty((7,) + y.shape, dtype=complex)
    while t < t1 - 1e-14 * span:
        hmax = max_step(t, y) if callable(max_step) else max_step
        h = min(h, hmax, t1 - t)
        # do not step across a breakpoint
        j = np.searchsorted(brk, t + 1e-14 * span)
        if j < len(brk):
            h = min(h, brk[j] - t)
        if h < 1e-13 * span:
            raise IntegrationError(f"step size underflow at t={t}")

        k[0] = fy
        for s in range(1, 6):
            dy = h * np.tensordot(_A[s], k[:s], axes=(0, 0))
            k[s] = f(t + _C[s] * h, y + dy)
        y_new = y + h * np.tensordot(_B, k[:6], axes=(0, 0))
        k[6] = f(t + h, y_new)
        err = h * np.tensordot(_E, k, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms_norm(err / scale)

        if err_norm <= 1.0:
            # deliver dense samples inside (t, t+h]
            if on_sample is not None:
                while i_sample < len(samples) and samples[i_sample] <= t + h + 1e-14 * span:
                    ts = samples[i_sample]
                    theta = (ts - t) / h
                    q = np.array([theta, theta**2, theta**3, theta**4])
                    y_s = y + h * np.tensordot(_P @ q, k, axes=(0, 0))
                    on_sample(ts, y_s)
                    i_sample += 1
            t += h
            y = y_new
            fy = k[6]
            factor = _MAX_FACTOR if err_norm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            h *= max(factor, 1.0e-2)
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
    return y


def rk4_fixed(f, t0, y0, t1, n_steps):
    """Plain fixed-step RK4; used for short refinement segments."""
    y = np.asarray(y0, dtype=complex).copy()
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y
