"""Quantum state transfer through XX spin networks with weakly coupled terminals.

Single-excitation simulator: exact spectral dynamics, effective-Hamiltonian
reductions (resonant three-level and Schrieffer-Wolff second order),
automatic transfer calibration, multiuser frequency routing, and Bell/W
entanglement protocols.
"""

from .dynamics import Trajectory, basis_state, evolve, peak_transfer, trajectory, transfer_fidelity
from .effective import (
    EffectiveHamiltonian,
    SWGenerator,
    effective_multiuser,
    effective_nonresonant,
    effective_resonant,
    effective_resonant_multiuser,
    sw_condition_residual,
    sw_generator,
    transfer_time_estimate,
)
from .errors import (
    CalibrationError,
    ConstructionError,
    DegenerateModeError,
    NoChannelError,
    NotCalibratedError,
    NotResonantError,
    PlanningError,
    ResonantCollisionError,
    SpectralError,
    SpinNetError,
    WeakCouplingWarning,
)
from .network import (
    SpinNetwork,
    SystemSpec,
    Terminal,
    chain,
    cycle,
    from_edge_list,
    full_hamiltonian,
    is_connected,
)
from .protocol import (
    CalibrationResult,
    ChannelReport,
    ChannelWitness,
    EntanglementReport,
    FrequencyPlan,
    bell_protocol,
    calibrate_nonresonant,
    calibrate_resonant,
    channel_exists,
    frequency_plan,
    route,
    w_nonresonant_protocol,
    w_resonant_protocol,
)
from .spectral import (
    CouplingProfile,
    PerronReport,
    SpectralDecomposition,
    chain_spectrum_closed_form,
    coupling_profile,
    cycle_spectrum_closed_form,
    degeneracy_class_of,
    eigendecompose,
    perron_check,
)

__version__ = "0.1.0"
