"""Quantum-dot dark-exciton qubit simulator.

Deterministic optical writing of the dark-exciton spin, picosecond coherent
control through the biexciton ladder, and polarization-resolved
photon-correlation readout, with analysis tooling to recover lifetimes,
precession periods and control curves from the simulated click streams.
"""

from .physics import (
    BasisState,
    CollapseChannel,
    EmissionLine,
    SystemParams,
    collapse_channels,
    default_params,
    static_hamiltonian,
)
from .pulses import (
    Pulse,
    PulseSequence,
    PulseShape,
    Transition,
    drive_hamiltonian,
    envelope,
    sech_rotation_angle,
)
from .dynamics import (
    EnsembleResult,
    ObservableTrace,
    QuantumState,
    TrajectoryResult,
    evolve_lindblad,
    propagate_oracle,
    run_ensemble,
    run_trajectory,
)
from .photonics import (
    ClickStream,
    CorrelationResult,
    DetectorModel,
    apply_detector,
    g2_circular,
    polarization_project,
    pulsed_coincidence_bars,
)
from .analysis import FitResult, ModelSpec, lm_fit, model_library, saturation_curves
from .seqlang import ParseError, SeqDocument, parse, serialize

__version__ = "0.1.0"
