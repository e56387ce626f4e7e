"""Nonlinear least-squares fitting and the model library.

``lm_fit`` is a damped Gauss-Newton (Levenberg-Marquardt) minimizer of
chi2 = sum(((y - f(p, t)) / sigma)^2).  Models carry analytic Jacobians;
central finite differences are used when a model does not.  Parameters can
be frozen with a ``fixed`` mask, mpfit-style.

Also houses the classical three-level rate model reproducing how the slow
line saturates three orders of magnitude below the fast one in power and
sits three orders of magnitude below it in intensity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .physics import SystemParams


class FitError(RuntimeError):
    pass


@dataclass
class ModelSpec:
    name: str
    arity: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    param_names: tuple[str, ...] = ()


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    iterations: int
    converged: bool
    param_names: tuple[str, ...] = ()

    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_dict(self) -> dict:
        return {
            "params": self.params.tolist(),
            "param_names": list(self.param_names),
            "errors": self.errors().tolist(),
            "covariance": self.covariance.tolist(),
            "chi2": self.chi2,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def numeric_jacobian(model: ModelSpec, p: np.ndarray, t: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    jac = np.empty((len(t), len(p)))
    for j in range(len(p)):
        h = 1e-6 * max(abs(p[j]), 1e-3)
        pp = p.copy(); pp[j] += h
        pm = p.copy(); pm[j] -= h
        jac[:, j] = (model.eval(pp, t) - model.eval(pm, t)) / (2.0 * h)
    return jac


def lm_fit(
    model: ModelSpec,
    t: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray | float,
    init: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200,
    fixed: np.ndarray | None = None,
) -> FitResult:
    """Local weighted least-squares minimizer.

    Accepted steps never increase chi2.  Convergence requires both the
    relative chi2 decrease and the gradient norm to drop below ``tol``;
    hitting max_iter returns converged=False.  Normal equations that stay
    singular at maximal damping raise FitError.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(init, dtype=float).copy()
    if np.isscalar(sigma):
        sigma = np.full_like(y, float(sigma))
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0):
        raise ValueError("all sigma must be positive")
    if len(t) < model.arity:
        raise ValueError("need at least as many points as parameters")
    if len(p) != model.arity:
        raise ValueError(f"model {model.name} expects {model.arity} parameters")
    free = np.ones(model.arity, dtype=bool) if fixed is None else ~np.asarray(fixed, bool)
    if not free.any():
        raise ValueError("at least one parameter must be free")

    w = 1.0 / sigma

    def chi2_of(params):
        r = (y - model.eval(params, t)) * w
        return float(r @ r), r

    chi2, resid = chi2_of(p)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = model.jacobian(p, t) if model.jacobian is not None else numeric_jacobian(model, p, t)
        jw = jac[:, free] * w[:, None]
        g = jw.T @ resid                      # gradient of chi2/2 wrt free params
        jtj = jw.T @ jw
        grad_ok = np.max(np.abs(g)) < tol * (1.0 + chi2)

        step_taken = False
        while lam < 1e12:
            a = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-300))
            try:
                delta = np.linalg.solve(a, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_try = p.copy()
            p_try[free] += delta
            chi2_try, resid_try = chi2_of(p_try)
            if np.isfinite(chi2_try) and chi2_try <= chi2:
                rel_drop = (chi2 - chi2_try) / max(chi2, 1e-300)
                p, chi2, resid = p_try, chi2_try, resid_try
                lam = max(lam / 10.0, 1e-12)
                step_taken = True
                if rel_drop < tol and grad_ok:
                    converged = True
                break
            lam *= 10.0
        if not step_taken:
            if grad_ok:
                converged = True
                break
            raise FitError(
                f"model {model.name}: singular or non-improving normal equations "
                f"beyond damping recovery (chi2={chi2:.4g})")
        if converged:
            break

    jac = model.jacobian(p, t) if model.jacobian is not None else numeric_jacobian(model, p, t)
    jw = jac[:, free] * w[:, None]
    cov = np.zeros((model.arity, model.arity))
    try:
        cov_free = np.linalg.inv(jw.T @ jw)
        cov[np.ix_(free, free)] = cov_free
    except np.linalg.LinAlgError:
        cov[:] = np.nan
    return FitResult(p, cov, chi2, it, converged, model.param_names)


# ---------------------------------------------------------------------------
# model library
# ---------------------------------------------------------------------------

def _exp_decay(p, t):
    a, tau = p
    return a * np.exp(-t / tau)


def _exp_decay_jac(p, t):
    a, tau = p
    e = np.exp(-t / tau)
    return np.column_stack([e, a * e * t / tau**2])


def _decaying_sinusoid(p, t):
    p0, period, phi, tpd = p
    return p0 * np.sin(2.0 * np.pi * t / period + phi) * np.exp(-t / tpd)


def _decaying_sinusoid_jac(p, t):
    p0, period, phi, tpd = p
    arg = 2.0 * np.pi * t / period + phi
    e = np.exp(-t / tpd)
    s, c = np.sin(arg), np.cos(arg)
    return np.column_stack([
        s * e,
        -p0 * c * e * 2.0 * np.pi * t / period**2,
        p0 * c * e,
        p0 * s * e * t / tpd**2,
    ])


def _rabi_curve(p, power):
    imax, p_pi, theta_d = p
    theta = np.pi * np.sqrt(np.asarray(power, float) / p_pi)
    return imax * np.sin(theta / 2.0) ** 2 * np.exp(-theta / theta_d)


def _rabi_curve_jac(p, power):
    imax, p_pi, theta_d = p
    power = np.asarray(power, float)
    theta = np.pi * np.sqrt(power / p_pi)
    s = np.sin(theta / 2.0)
    c = np.cos(theta / 2.0)
    e = np.exp(-theta / theta_d)
    base = s**2 * e
    # d(model)/d(theta), then theta' wrt p_pi = -theta/(2 p_pi)
    dmodel_dtheta = imax * e * (s * c - s**2 / theta_d)
    return np.column_stack([
        base,
        dmodel_dtheta * (-theta / (2.0 * p_pi)),
        imax * base * theta / theta_d**2,
    ])


def _detuning_curve(p, delta):
    p0max, sigma = p
    return p0max * np.sin(np.pi - 2.0 * np.arctan(np.asarray(delta, float) / sigma))


def _detuning_curve_jac(p, delta):
    p0max, sigma = p
    delta = np.asarray(delta, float)
    x = delta / sigma
    inner = np.pi - 2.0 * np.arctan(x)
    dinner_dsigma = 2.0 * delta / (sigma**2 * (1.0 + x**2))
    return np.column_stack([
        np.sin(inner),
        p0max * np.cos(inner) * dinner_dsigma,
    ])


def model_library() -> dict[str, ModelSpec]:
    return {
        "exp_decay": ModelSpec(
            "exp_decay", 2, _exp_decay, _exp_decay_jac, ("amplitude", "tau")),
        "decaying_sinusoid": ModelSpec(
            "decaying_sinusoid", 4, _decaying_sinusoid, _decaying_sinusoid_jac,
            ("p0", "period", "phase", "t_pd")),
        "rabi_curve": ModelSpec(
            "rabi_curve", 3, _rabi_curve, _rabi_curve_jac,
            ("i_max", "p_pi", "theta_d")),
        "detuning_curve": ModelSpec(
            "detuning_curve", 2, _detuning_curve, _detuning_curve_jac,
            ("p0_max", "sigma")),
    }


# ---------------------------------------------------------------------------
# cw saturation rate model
# ---------------------------------------------------------------------------

def saturation_curves(
    power_grid: np.ndarray,
    params: SystemParams,
    capture_coeff: float = 1.0,
    conversion_factor: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Steady-state emission of the slow (DE) and fast (BE) lines vs power.

    Three effective states {empty, BE, DE} share the dot.  Pair capture at
    G = capture_coeff * P fills BE and DE from empty at G/2 each; each line
    empties radiatively at 1/tau.  An occupied exciton is converted (not
    emitted) by any further carrier capture; electrons and holes each arrive
    at rate G, hence the default conversion rate 2G.  Emitted intensity is
    occupancy/tau.  Returns (intensity_de, intensity_be) in photons/ns.
    """
    g = capture_coeff * np.asarray(power_grid, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("powers must be nonnegative")
    kill = conversion_factor * g
    den_de = 1.0 / params.tau_de + kill
    den_be = 1.0 / params.tau_be + kill
    vac = 1.0 / (1.0 + (g / 2.0) / den_be + (g / 2.0) / den_de)
    occ_de = (g / 2.0) * vac / den_de
    occ_be = (g / 2.0) * vac / den_be
    return occ_de / params.tau_de, occ_be / params.tau_be


def half_saturation_power(powers: np.ndarray, intensity: np.ndarray) -> float:
    """Power at which a line first reaches half of its peak intensity.

    Log-interpolated on the rising edge; the standard knee marker for
    saturation curves on a log power axis.
    """
    peak = float(np.max(intensity))
    if peak <= 0.0:
        raise ValueError("intensity has no positive values")
    i = int(np.argmax(intensity >= 0.5 * peak))
    if i == 0:
        return float(powers[0])
    f = (0.5 * peak - intensity[i - 1]) / (intensity[i] - intensity[i - 1])
    return float(powers[i - 1] * (powers[i] / powers[i - 1]) ** f)


def saturation_summary(
    powers: np.ndarray, i_de: np.ndarray, i_be: np.ndarray
) -> dict[str, float]:
    p_de = half_saturation_power(powers, i_de)
    p_be = half_saturation_power(powers, i_be)
    return {
        "de_sat_power": p_de,
        "be_sat_power": p_be,
        "sat_power_ratio": p_de / p_be,
        "de_peak_power": float(powers[int(np.argmax(i_de))]),
        "de_peak_intensity": float(np.max(i_de)),
        "be_plateau_intensity": float(np.max(i_be)),
        "peak_intensity_ratio": float(np.max(i_de) / np.max(i_be)),
    }


# ---------------------------------------------------------------------------
# csv helpers for the fit CLI
# ---------------------------------------------------------------------------

def load_fit_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read (t, y[, sigma]) columns; sigma defaults to 1 when absent."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None:
        raw = np.atleast_2d(np.genfromtxt(path, delimiter=","))
        cols = [raw[:, i] for i in range(raw.shape[1])]
    else:
        cols = [data[name] for name in data.dtype.names]
    if len(cols) < 2:
        raise ValueError("fit data needs at least two columns (t, y)")
    t, y = np.atleast_1d(cols[0]), np.atleast_1d(cols[1])
    sigma = np.atleast_1d(cols[2]) if len(cols) > 2 else np.ones_like(y)
    return t, y, sigma
