"""Level scheme, physical constants, static Hamiltonian and decay channels.

The simulated system is a quantum-dot dark exciton (DE) coupled optically to
a spin-blockaded biexciton (XX).  Seven levels are tracked:

    index 0  VAC     empty dot (crystal ground state)
    index 1  DE_P2   dark exciton |+2>, hole in its ground level
    index 2  DE_M2   dark exciton |-2>, hole in its ground level
    index 3  DEX_P2  dark exciton |+2*>, hole in its first excited level
    index 4  DEX_M2  dark exciton |-2*>
    index 5  XX_P3   spin-blockaded biexciton |+3>
    index 6  XX_M3   spin-blockaded biexciton |-3>

Energies are expressed in ueV and times in ns throughout; no other unit
system appears internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

# Planck constant in ueV*ns.
H_PLANCK = 4.135667
HBAR = H_PLANCK / (2.0 * math.pi)

DIM = 7


class BasisState(IntEnum):
    VAC = 0
    DE_P2 = 1
    DE_M2 = 2
    DEX_P2 = 3
    DEX_M2 = 4
    XX_P3 = 5
    XX_M3 = 6


class EmissionLine(IntEnum):
    """Radiative lines, labelled by their photon energy in meV."""

    XX_SS_1278 = 0  # biexciton -> excited-hole DE (ground-level e-h pair recombines)
    XX_SP_1294 = 1  # biexciton -> ground DE (excited-hole e-h pair recombines)
    DE_1283 = 2     # dark exciton -> vacuum


# Jones vectors in the rectilinear (H, V) basis.
JONES_H = (1.0 + 0.0j, 0.0 + 0.0j)
JONES_V = (0.0 + 0.0j, 1.0 + 0.0j)
JONES_SIGMA_PLUS = (1.0 / math.sqrt(2.0) + 0.0j, 1.0j / math.sqrt(2.0))
JONES_SIGMA_MINUS = (1.0 / math.sqrt(2.0) + 0.0j, -1.0j / math.sqrt(2.0))


def ket(state: BasisState | int) -> np.ndarray:
    v = np.zeros(DIM, dtype=complex)
    v[int(state)] = 1.0
    return v


def ket_a() -> np.ndarray:
    """Optically active DE eigenstate |a> = (|+2> - |-2>)/sqrt(2), the lower one."""
    return (ket(BasisState.DE_P2) - ket(BasisState.DE_M2)) / math.sqrt(2.0)


def ket_s() -> np.ndarray:
    """Optically inactive DE eigenstate |s> = (|+2> + |-2>)/sqrt(2), the upper one."""
    return (ket(BasisState.DE_P2) + ket(BasisState.DE_M2)) / math.sqrt(2.0)


@dataclass(frozen=True)
class SystemParams:
    """All measured rates and instrument constants in one validated record.

    Times in ns, energies in ueV.  ``delta_de`` is derived from the measured
    precession period and must not be set directly.
    """

    tau_de: float = 1100.0        # DE radiative lifetime
    tau_be: float = 0.47          # bright-exciton lifetime (reference only)
    t_larmor_de: float = 3.09     # DE precession period
    tau_xx_ss: float = 0.30       # biexciton ss recombination time
    tau_xx_sp: float = 6.0        # biexciton sp recombination time
    tau_hh: float = 0.02          # excited-hole relaxation time
    t_larmor_xx: float = math.inf # biexciton precession period (>=5 ns bound)
    t2_star: float = 100.0        # DE pure-dephasing time
    irf_fwhm: float = 0.45        # detector response FWHM
    efficiency: float = 1.0 / 700.0  # overall photon harvesting efficiency
    h_planck: float = H_PLANCK
    delta_de: float = field(init=False)

    def __post_init__(self):
        for name in ("tau_de", "tau_be", "tau_xx_ss", "tau_xx_sp", "tau_hh"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        for name in ("t_larmor_de", "t_larmor_xx", "t2_star"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.irf_fwhm < 0.0:
            raise ValueError("irf_fwhm must be nonnegative")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        object.__setattr__(self, "delta_de", self.h_planck / self.t_larmor_de)

    @property
    def delta_xx(self) -> float:
        """XX eigenstate splitting in ueV (zero for the default infinite period)."""
        return 0.0 if math.isinf(self.t_larmor_xx) else self.h_planck / self.t_larmor_xx

    def with_overrides(self, **kwargs) -> "SystemParams":
        return replace(self, **kwargs)


def default_params() -> SystemParams:
    """Measured-rate defaults; see SystemParams for units."""
    return SystemParams()


@dataclass
class EmissionTag:
    line: EmissionLine
    polarization: tuple[complex, complex]


@dataclass
class CollapseChannel:
    """One Lindblad jump channel: d(rho) gets rate*(L rho L+ - {L+L, rho}/2)."""

    name: str
    operator: np.ndarray          # 7x7 complex
    rate: float                   # ns^-1
    emission: EmissionTag | None = None

    @property
    def radiative(self) -> bool:
        return self.emission is not None


def _jump(dst: BasisState, src: BasisState) -> np.ndarray:
    m = np.zeros((DIM, DIM), dtype=complex)
    m[int(dst), int(src)] = 1.0
    return m


def collapse_channels(params: SystemParams) -> list[CollapseChannel]:
    """The eight decay/relaxation channels of the DE-biexciton system.

    Spin is preserved everywhere: |+3> only ever reaches |+2*>/|+2>, never the
    opposite DE spin state, which is what blocks cross-circular absorption.
    The DE radiative channel drains only the |a> superposition (its single
    H-polarized mode); |s> is optically inactive.  The dephasing channel is
    diagonal (+1/-1) in the DE *eigenbasis* {|s>, |a>}, i.e. it scrambles the
    precession phase at 1/t2_star without mixing the eigenstate populations,
    so the measured population lifetime stays tau_de.
    """
    de_rad = np.zeros((DIM, DIM), dtype=complex)
    de_rad[BasisState.VAC, BasisState.DE_P2] = 1.0 / math.sqrt(2.0)
    de_rad[BasisState.VAC, BasisState.DE_M2] = -1.0 / math.sqrt(2.0)

    dephase = np.zeros((DIM, DIM), dtype=complex)
    dephase[BasisState.DE_P2, BasisState.DE_M2] = 1.0
    dephase[BasisState.DE_M2, BasisState.DE_P2] = 1.0

    g_ss = 1.0 / params.tau_xx_ss
    g_sp = 1.0 / params.tau_xx_sp
    g_hh = 1.0 / params.tau_hh
    g_de = 1.0 / params.tau_de
    g_phi = 0.0 if math.isinf(params.t2_star) else 1.0 / (2.0 * params.t2_star)

    return [
        CollapseChannel("xx_ss_plus", _jump(BasisState.DEX_P2, BasisState.XX_P3), g_ss,
                        EmissionTag(EmissionLine.XX_SS_1278, JONES_SIGMA_PLUS)),
        CollapseChannel("xx_ss_minus", _jump(BasisState.DEX_M2, BasisState.XX_M3), g_ss,
                        EmissionTag(EmissionLine.XX_SS_1278, JONES_SIGMA_MINUS)),
        CollapseChannel("xx_sp_plus", _jump(BasisState.DE_P2, BasisState.XX_P3), g_sp,
                        EmissionTag(EmissionLine.XX_SP_1294, JONES_SIGMA_PLUS)),
        CollapseChannel("xx_sp_minus", _jump(BasisState.DE_M2, BasisState.XX_M3), g_sp,
                        EmissionTag(EmissionLine.XX_SP_1294, JONES_SIGMA_MINUS)),
        CollapseChannel("hole_relax_plus", _jump(BasisState.DE_P2, BasisState.DEX_P2), g_hh),
        CollapseChannel("hole_relax_minus", _jump(BasisState.DE_M2, BasisState.DEX_M2), g_hh),
        CollapseChannel("de_radiative", de_rad, g_de,
                        EmissionTag(EmissionLine.DE_1283, JONES_H)),
        CollapseChannel("de_dephasing", dephase, g_phi),
    ]


def static_hamiltonian(params: SystemParams) -> np.ndarray:
    """Rotating-frame Hamiltonian of the undriven system, in ueV.

    The DE fine structure is written in the {|+2>, |-2>} basis as an
    off-diagonal coupling (delta/2)*sigma_x, which puts the antisymmetric
    eigenstate |a> at -delta/2 (the lower level) and |s> at +delta/2.  The
    excited-hole pair |+-2*> is treated as degenerate; the XX doublet gets the
    mirrored structure with its own (default zero) splitting.
    """
    h = np.zeros((DIM, DIM), dtype=complex)
    half = 0.0 if math.isinf(params.t_larmor_de) else params.delta_de / 2.0
    h[BasisState.DE_P2, BasisState.DE_M2] = half
    h[BasisState.DE_M2, BasisState.DE_P2] = half
    half_xx = params.delta_xx / 2.0
    h[BasisState.XX_P3, BasisState.XX_M3] = half_xx
    h[BasisState.XX_M3, BasisState.XX_P3] = half_xx
    return h


def projector(states: tuple[BasisState, ...]) -> np.ndarray:
    p = np.zeros((DIM, DIM), dtype=complex)
    for s in states:
        p[int(s), int(s)] = 1.0
    return p


DE_MANIFOLD = (BasisState.DE_P2, BasisState.DE_M2)
XX_MANIFOLD = (BasisState.XX_P3, BasisState.XX_M3)
