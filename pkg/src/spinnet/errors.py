"""Exception hierarchy.

Everything raised by the library derives from :class:`SpinNetError`, so
callers (and the CLI exit-code contract) can distinguish physics-level
failures from ordinary Python errors.
"""


class SpinNetError(Exception):
    """Base class for construction- and physics-level failures."""


class ConstructionError(SpinNetError, ValueError):
    """Invalid network, terminal, or system specification."""


class SpectralError(SpinNetError):
    """Eigensolver contract violations: non-Hermitian input, convergence
    failure, or a value that matches no eigenvalue."""


class DegenerateModeError(SpinNetError):
    """A resonant construction was requested on a degenerate eigenvalue.

    The projected model is then larger than the three-level chain and no
    choice of couplings restores a perfect-transfer form, so the library
    refuses rather than silently degrading.
    """


class NotResonantError(SpinNetError):
    """Terminal fields do not sit on the requested eigenvalue."""


class ResonantCollisionError(SpinNetError):
    """A terminal field lies within the detuning floor of an eigenvalue,
    so the non-resonant (second-order) construction is invalid."""


class NotCalibratedError(SpinNetError):
    """An operation that requires a calibrated system was handed one
    whose effective model is visibly asymmetric."""


class NoChannelError(SpinNetError):
    """No usable communication channel: a required mode overlap or the
    effective coupling between the terminals vanishes."""


class CalibrationError(SpinNetError):
    """Calibration failed (root not bracketed, no admissible rescale)."""


class PlanningError(SpinNetError):
    """Frequency planning is infeasible under the given constraints."""


class WeakCouplingWarning(UserWarning):
    """A terminal coupling exceeds the weak-coupling threshold; the
    perturbative effective model may be inaccurate."""
