"""Exact unitary evolution in the single-excitation subspace.

Evolution goes through the spectral decomposition,
``psi(t) = V exp(-i L t) V^dagger psi(0)``, which is exact to solver
precision at any ``t`` and reuses one decomposition for a whole
trajectory.  Decompositions are cached on the matrix content, so repeated
calls with the same Hamiltonian are cheap; the cache is read-mostly and
safe for concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import SpinNetError
from .network import SystemSpec, full_hamiltonian
from .spectral import HERMITICITY_TOL, SpectralError

__all__ = [
    "Trajectory",
    "basis_state",
    "evolve",
    "trajectory",
    "transfer_fidelity",
    "peak_transfer",
]

NORM_TOL = 1e-10


@lru_cache(maxsize=128)
def _cached_eigh(buffer: bytes, n: int, dtype: str):
    a = np.frombuffer(buffer, dtype=np.dtype(dtype)).reshape(n, n)
    asym = float(np.max(np.abs(a - a.conj().T)))
    if asym > HERMITICITY_TOL:
        raise SpectralError(f"matrix is not Hermitian: max |A - A^dagger| = {asym:.3e}")
    w, v = np.linalg.eigh(a)
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def _propagator_parts(h: np.ndarray):
    h = np.ascontiguousarray(h)
    return _cached_eigh(h.tobytes(), h.shape[0], h.dtype.str)


def _as_matrix(system) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(system, SystemSpec):
        return full_hamiltonian(system), system.basis_labels()
    h = np.asarray(system)
    return h, tuple(f"b{k}" for k in range(h.shape[0]))


def basis_state(spec: SystemSpec, label: str) -> np.ndarray:
    """Unit vector for one basis label (terminal label or ``node<k>``)."""
    labels = spec.basis_labels()
    try:
        idx = labels.index(label)
    except ValueError:
        raise SpinNetError(f"unknown basis label {label!r}") from None
    psi = np.zeros(spec.dimension, dtype=complex)
    psi[idx] = 1.0
    return psi


def evolve(h: np.ndarray, psi0: np.ndarray, t: float) -> np.ndarray:
    """State at time ``t`` under the Hermitian matrix ``h``.

    ``psi0`` must be normalized within 1e-10.  The result is exact spectral
    evolution; the norm is preserved to solver precision at any ``t``.
    """
    h = np.asarray(h)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (h.shape[0],):
        raise SpinNetError(
            f"state dimension {psi0.shape} does not match matrix dimension {h.shape}"
        )
    norm = float(np.linalg.norm(psi0))
    if abs(norm - 1.0) > NORM_TOL:
        raise SpinNetError(f"initial state is not normalized: |psi| = {norm!r}")
    w, v = _propagator_parts(h)
    return v @ (np.exp(-1j * w * t) * (v.conj().T @ psi0))


@dataclass(frozen=True)
class Trajectory:
    """Time grid with state vectors and per-basis-state populations.

    ``states[k]`` is the state at ``time_grid[k]``; ``populations`` holds
    the squared moduli.  Every state has unit norm within 1e-10 (checked).
    """

    time_grid: np.ndarray
    states: np.ndarray
    populations: np.ndarray
    basis_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        sums = self.populations.sum(axis=1)
        drift = float(np.max(np.abs(sums - 1.0)))
        if drift > NORM_TOL:
            raise SpinNetError(f"trajectory norm drift {drift:.3e} exceeds {NORM_TOL:.0e}")
        for arr in (self.time_grid, self.states, self.populations):
            arr.setflags(write=False)

    def column(self, label: str) -> int:
        try:
            return self.basis_labels.index(label)
        except ValueError:
            raise SpinNetError(f"unknown basis label {label!r}") from None

    def population(self, label: str) -> np.ndarray:
        """Occupation probability of one basis state over the grid."""
        return self.populations[:, self.column(label)]

    def peak(self, label: str) -> tuple[float, float]:
        """Grid time and value of the maximum population of one state."""
        p = self.population(label)
        k = int(np.argmax(p))
        return float(self.time_grid[k]), float(p[k])


def trajectory(system, psi0, t_max: float, n_points: int) -> Trajectory:
    """Evolve ``psi0`` on a uniform grid ``[0, t_max]`` including endpoints.

    ``system`` may be a :class:`SystemSpec` or a Hermitian matrix; ``psi0``
    may be a state vector or, for a spec, a basis label.
    """
    if n_points < 2:
        raise SpinNetError(f"n_points must be >= 2, got {n_points}")
    if not t_max > 0:
        raise SpinNetError(f"t_max must be positive, got {t_max}")
    h, labels = _as_matrix(system)
    if isinstance(psi0, str):
        if not isinstance(system, SystemSpec):
            raise SpinNetError("label initial states require a SystemSpec")
        psi0 = basis_state(system, psi0)
    psi0 = np.asarray(psi0, dtype=complex)
    norm = float(np.linalg.norm(psi0))
    if abs(norm - 1.0) > NORM_TOL:
        raise SpinNetError(f"initial state is not normalized: |psi| = {norm!r}")
    w, v = _propagator_parts(h)
    times = np.linspace(0.0, t_max, n_points)
    weights = v.conj().T @ psi0
    phases = np.exp(-1j * np.outer(w, times))
    states = (v @ (phases * weights[:, np.newaxis])).T
    return Trajectory(
        time_grid=times,
        states=states,
        populations=np.abs(states) ** 2,
        basis_labels=labels,
    )


def transfer_fidelity(spec: SystemSpec, source: str, dest: str, t: float) -> float:
    """Single-excitation transfer probability ``|<dest| U(t) |source>|^2``."""
    i = spec.terminal_index(source)
    j = spec.terminal_index(dest)
    w, v = _propagator_parts(full_hamiltonian(spec))
    amplitude = np.sum(v[j, :] * np.conj(v[i, :]) * np.exp(-1j * w * t))
    return float(abs(amplitude) ** 2)


def _transfer_probabilities(h: np.ndarray, i: int, j: int, times: np.ndarray) -> np.ndarray:
    w, v = _propagator_parts(h)
    weights = v[j, :] * np.conj(v[i, :])
    amps = np.exp(-1j * np.outer(times, w)) @ weights
    return np.abs(amps) ** 2


def peak_transfer(
    system, source, dest, t_max: float, coarse_points: int = 2000
) -> tuple[float, float]:
    """Time and value of the maximum transfer probability on ``[0, t_max]``.

    A coarse scan brackets the best sample, then golden-section refinement
    narrows the peak to ``1e-6 * t_max``.  Transfer peaks at weak coupling
    are broad, so the coarse grid cannot miss the global lobe.

    ``system`` may be a :class:`SystemSpec` with terminal labels or a
    Hermitian matrix with integer basis indices.
    """
    if not t_max > 0:
        raise SpinNetError(f"t_max must be positive, got {t_max}")
    if isinstance(system, SystemSpec):
        h = full_hamiltonian(system)
        i = system.terminal_index(source)
        j = system.terminal_index(dest)
    else:
        h = np.asarray(system)
        i, j = int(source), int(dest)
    times = np.linspace(0.0, t_max, coarse_points)
    probs = _transfer_probabilities(h, i, j, times)
    best = int(np.argmax(probs))
    lo = times[max(best - 1, 0)]
    hi = times[min(best + 1, len(times) - 1)]
    t_best, p_best = float(times[best]), float(probs[best])

    def negated(t: float) -> float:
        return -_transfer_probabilities(h, i, j, np.array([t]))[0]

    result = None
    if lo < times[best] < hi:
        try:
            # golden's xtol is relative to x; aim for 1e-6 * t_max absolute.
            result = optimize.minimize_scalar(
                negated, bracket=(lo, times[best], hi), method="golden",
                options={"xtol": 1e-6 * t_max / max(t_best, 1e-9 * t_max)},
            )
        except (ValueError, RuntimeError):
            result = None
    if result is None or not getattr(result, "success", True):
        result = optimize.minimize_scalar(
            negated, bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-6 * t_max},
        )
    t_ref = float(np.clip(result.x, 0.0, t_max))
    p_ref = -float(negated(t_ref))
    if p_ref >= p_best:
        return t_ref, p_ref
    return t_best, p_best
