"""Effective Hamiltonians for weakly coupled terminal spins.

Writing the full Hamiltonian as ``H = H0 + V`` with ``H0`` diagonal in the
terminal states and network eigenmodes, two reductions cover the useful
regimes:

* **Resonant**: both terminal fields sit exactly on a simple network
  eigenvalue ``lam``.  To first order in the couplings the dynamics lives
  in the three-level chain ``s -- lam -- d`` with hops ``c_s g_s`` and
  ``c_d g_d`` (``c`` the terminal coupling, ``g`` the mode amplitude at the
  attachment node).

* **Non-resonant**: the fields are detuned from the whole spectrum.  A
  Schrieffer-Wolff rotation ``exp(iS)`` with generator coefficients chosen
  so that ``V + i[S, H0] = 0`` removes the first-order coupling; the
  element-wise solution is ``s = i g / (lam - omega)``.  The residual
  second-order block on the terminals is ``(i/2)[S, V]`` projected, i.e.

  - diagonal:  ``omega_a - |c_a|^2 sum_lam |g_a|^2 / (lam - omega_a)``
  - off-diagonal (a, b):
    ``-(1/2) c_a c_b* sum_lam g_a g_b* (1/(lam - omega_a) + 1/(lam - omega_b))``

  The one-half factor comes from combining ``i[S,V]`` with
  ``(i^2/2)[S,[S,H0]] = -(i/2)[S,V]`` and is required for the predicted
  Rabi period to match exact dynamics (see the two-terminal single-node
  model in the tests, which is solvable in closed form).

Degenerate eigenvalues are rejected in the resonant constructions: the
projected model is then larger than 3x3 and no coupling choice restores a
perfect-transfer form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateModeError,
    NoChannelError,
    NotCalibratedError,
    NotResonantError,
    ResonantCollisionError,
    WeakCouplingWarning,
)
from .network import SystemSpec
from .spectral import SpectralDecomposition, degeneracy_class_of, eigendecompose

__all__ = [
    "EffectiveHamiltonian",
    "SWGenerator",
    "effective_resonant",
    "effective_nonresonant",
    "effective_multiuser",
    "effective_resonant_multiuser",
    "sw_generator",
    "sw_condition_residual",
    "transfer_time_estimate",
    "DETUNING_FLOOR",
    "WEAK_COUPLING_FACTOR",
]

DETUNING_FLOOR = 1e-6
WEAK_COUPLING_FACTOR = 0.2
RESONANCE_TOL = 1e-9


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Small dense Hermitian matrix plus basis labels and validity metadata.

    ``order_in_epsilon`` is 1 for resonant (first-order) models and 2 for
    non-resonant (second-order) ones.  ``resonance_mode`` is the ascending
    eigenvalue index of the resonant mode, or ``None``.
    """

    matrix: np.ndarray
    basis_labels: tuple[str, ...]
    regime: str
    order_in_epsilon: int
    resonance_mode: int | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix)
        if m.shape != (len(self.basis_labels), len(self.basis_labels)):
            raise ValueError("matrix dimension must match the number of basis labels")
        asym = float(np.max(np.abs(m - m.conj().T)))
        if asym > 1e-12:
            raise ValueError(f"effective Hamiltonian not Hermitian: {asym:.3e}")
        m.setflags(write=False)

    def off_diagonal_magnitudes(self) -> tuple[float, ...]:
        """Moduli of the independent off-diagonal entries, row-major."""
        n = self.matrix.shape[0]
        return tuple(
            float(abs(self.matrix[i, j])) for i in range(n) for j in range(i + 1, n)
        )

    def beta(self, epsilon: float) -> float:
        """Off-diagonal scale divided by ``epsilon`` (resonant convention)."""
        return max(self.off_diagonal_magnitudes()) / epsilon

    def beta_prime(self, epsilon: float) -> float:
        """Off-diagonal scale divided by ``epsilon**2`` (non-resonant convention)."""
        return max(self.off_diagonal_magnitudes()) / epsilon**2


@dataclass(frozen=True)
class SWGenerator:
    """Coefficients ``s[a, k]`` of the Schrieffer-Wolff generator.

    The generator is ``S = sum_{a,k} (c_a s[a,k] |a><k| + h.c.)`` with
    ``c_a`` the terminal coupling; the defining property is
    ``V + i[S, H0] = 0``, checked by :func:`sw_condition_residual`.
    """

    coefficients: np.ndarray
    terminal_labels: tuple[str, ...]
    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        self.coefficients.setflags(write=False)
        self.eigenvalues.setflags(write=False)


def _mode_data(spec: SystemSpec, decomposition: SpectralDecomposition | None):
    """Decomposition of the network block plus per-terminal mode amplitudes."""
    decomp = decomposition if decomposition is not None else eigendecompose(
        spec.network.adjacency_matrix()
    )
    if decomp.source_dimension != spec.network.node_count:
        raise ValueError("decomposition does not match the network dimension")
    g = np.array([decomp.eigenvectors[t.attach_node - 1, :] for t in spec.terminals])
    c = np.array([t.coupling for t in spec.terminals])
    omega = np.array([t.field for t in spec.terminals])
    return decomp, g, c, omega


def _require_detuned(spec: SystemSpec, decomp: SpectralDecomposition, floor: float) -> None:
    for t in spec.terminals:
        gaps = np.abs(decomp.eigenvalues - t.field)
        k = int(np.argmin(gaps))
        if gaps[k] <= floor:
            raise ResonantCollisionError(
                f"terminal {t.label!r} field {t.field!r} is within {floor:.1e} of "
                f"eigenvalue {decomp.eigenvalues[k]!r} (mode {k}); "
                "the non-resonant construction is invalid"
            )


def _resolve_simple_mode(
    decomp: SpectralDecomposition, mode_value: float
) -> tuple[int, float]:
    cls = degeneracy_class_of(decomp, mode_value)
    if len(cls) > 1:
        raise DegenerateModeError(
            f"eigenvalue {decomp.eigenvalues[cls[0]]!r} is {len(cls)}-fold degenerate; "
            "resonant transfer through a degenerate mode cannot be made perfect"
        )
    idx = cls[0]
    return idx, float(decomp.eigenvalues[idx])


def _adjacent_gap(decomp: SpectralDecomposition, index: int) -> float:
    """Distance from eigenvalue ``index`` to its nearest distinct neighbor."""
    w = decomp.eigenvalues
    others = np.delete(w, index)
    if others.size == 0:
        return np.inf
    return float(np.min(np.abs(others - w[index])))


def _warn_if_strong(couplings, gap: float, context: str) -> None:
    threshold = WEAK_COUPLING_FACTOR * gap
    worst = max(abs(c) for c in couplings)
    if worst > threshold:
        warnings.warn(
            f"{context}: coupling magnitude {worst:.3e} exceeds the weak-coupling "
            f"threshold {threshold:.3e} (0.2 x relevant spectral gap); "
            "the effective model may be inaccurate",
            WeakCouplingWarning,
            stacklevel=3,
        )


def effective_resonant(
    spec: SystemSpec,
    mode_value: float,
    *,
    decomposition: SpectralDecomposition | None = None,
) -> EffectiveHamiltonian:
    """First-order three-level model ``{s, mode, d}`` at a simple eigenvalue.

    Both terminal fields must equal the eigenvalue within ``1e-9``.  The
    matrix has the common eigenvalue on the diagonal, ``c_s g_s`` on the
    s-mode bond and ``c_d g_d`` on the mode-d bond, and no direct s-d entry.
    """
    if spec.terminal_count != 2:
        raise ValueError(f"resonant model needs exactly 2 terminals, got {spec.terminal_count}")
    decomp, g, c, omega = _mode_data(spec, decomposition)
    idx, lam = _resolve_simple_mode(decomp, mode_value)
    for t in spec.terminals:
        if abs(t.field - lam) > RESONANCE_TOL:
            raise NotResonantError(
                f"terminal {t.label!r} field {t.field!r} is not on the resonance "
                f"eigenvalue {lam!r}"
            )
    _warn_if_strong(c, _adjacent_gap(decomp, idx), "resonant model")
    gs, gd = g[0, idx], g[1, idx]
    h = np.zeros((3, 3), dtype=complex)
    np.fill_diagonal(h, lam)
    h[0, 1] = c[0] * gs
    h[1, 0] = np.conj(h[0, 1])
    h[1, 2] = c[1] * gd
    h[2, 1] = np.conj(h[1, 2])
    labels = (spec.terminals[0].label, f"mode{idx}", spec.terminals[1].label)
    return EffectiveHamiltonian(h, labels, "resonant", 1, resonance_mode=idx)


def sw_generator(
    spec: SystemSpec,
    *,
    detuning_floor: float = DETUNING_FLOOR,
    decomposition: SpectralDecomposition | None = None,
) -> SWGenerator:
    """Generator coefficients that cancel the first-order terminal-mode coupling.

    Solving ``V + i[S, H0] = 0`` element by element gives
    ``s[a, k] = i g[a, k] / (lambda_k - omega_a)``; every denominator must
    clear the detuning floor.
    """
    decomp, g, _, omega = _mode_data(spec, decomposition)
    _require_detuned(spec, decomp, detuning_floor)
    denom = decomp.eigenvalues[np.newaxis, :] - omega[:, np.newaxis]
    return SWGenerator(
        coefficients=1j * g / denom,
        terminal_labels=tuple(t.label for t in spec.terminals),
        eigenvalues=decomp.eigenvalues.copy(),
    )


def sw_condition_residual(
    spec: SystemSpec,
    generator: SWGenerator,
    *,
    decomposition: SpectralDecomposition | None = None,
) -> float:
    """Max-norm of ``V + i[S, H0]`` in the terminal-plus-eigenmode basis."""
    decomp, g, c, omega = _mode_data(spec, decomposition)
    m, n = g.shape
    h0 = np.diag(np.concatenate([omega, decomp.eigenvalues]).astype(complex))
    v = np.zeros((m + n, m + n), dtype=complex)
    s = np.zeros((m + n, m + n), dtype=complex)
    v[:m, m:] = c[:, np.newaxis] * g
    s[:m, m:] = c[:, np.newaxis] * generator.coefficients
    v[m:, :m] = v[:m, m:].conj().T
    s[m:, :m] = s[:m, m:].conj().T
    residual = v + 1j * (s @ h0 - h0 @ s)
    return float(np.max(np.abs(residual)))


def effective_multiuser(
    spec: SystemSpec,
    *,
    detuning_floor: float = DETUNING_FLOOR,
    decomposition: SpectralDecomposition | None = None,
) -> EffectiveHamiltonian:
    """Second-order model on the terminals after eliminating the network.

    Diagonal entries carry the level-repulsion (Lamb-shift) correction;
    each off-diagonal pair is coupled through virtual transitions via every
    network mode.  The matrix is built for whatever fields are given, which
    is exactly how crosstalk between detuned users is analyzed.
    """
    if spec.terminal_count < 1:
        raise ValueError("multiuser model needs at least 1 terminal")
    decomp, g, c, omega = _mode_data(spec, decomposition)
    _require_detuned(spec, decomp, detuning_floor)
    w = decomp.eigenvalues
    inv = 1.0 / (w[np.newaxis, :] - omega[:, np.newaxis])  # inv[a, k] = 1/(lam_k - omega_a)
    m = spec.terminal_count
    h = np.zeros((m, m), dtype=complex)
    for a in range(m):
        h[a, a] = omega[a] - abs(c[a]) ** 2 * np.sum(np.abs(g[a]) ** 2 * inv[a])
        for b in range(a + 1, m):
            overlap = g[a] * g[b].conj()
            h[a, b] = -0.5 * c[a] * np.conj(c[b]) * np.sum(overlap * (inv[a] + inv[b]))
            h[b, a] = np.conj(h[a, b])
    labels = tuple(t.label for t in spec.terminals)
    return EffectiveHamiltonian(h, labels, "nonresonant", 2)


def effective_nonresonant(
    spec: SystemSpec,
    *,
    detuning_floor: float = DETUNING_FLOOR,
    decomposition: SpectralDecomposition | None = None,
) -> EffectiveHamiltonian:
    """Second-order two-level model on the terminal pair ``{s, d}``."""
    if spec.terminal_count != 2:
        raise ValueError(
            f"non-resonant pair model needs exactly 2 terminals, got {spec.terminal_count}"
        )
    return effective_multiuser(
        spec, detuning_floor=detuning_floor, decomposition=decomposition
    )


def effective_resonant_multiuser(
    spec: SystemSpec,
    mode_value: float,
    *,
    decomposition: SpectralDecomposition | None = None,
) -> EffectiveHamiltonian:
    """First-order star model: one simple mode coupled to every terminal.

    All terminal fields must sit on the eigenvalue.  The basis is the
    terminals in declaration order followed by the mode; there are no
    direct terminal-terminal entries.  A terminal whose mode amplitude
    vanishes stays in the basis but is unreachable.
    """
    if spec.terminal_count < 1:
        raise ValueError("resonant star model needs at least 1 terminal")
    decomp, g, c, omega = _mode_data(spec, decomposition)
    idx, lam = _resolve_simple_mode(decomp, mode_value)
    for t in spec.terminals:
        if abs(t.field - lam) > RESONANCE_TOL:
            raise NotResonantError(
                f"terminal {t.label!r} field {t.field!r} is not on the resonance "
                f"eigenvalue {lam!r}"
            )
    _warn_if_strong(c, _adjacent_gap(decomp, idx), "resonant star model")
    m = spec.terminal_count
    h = np.zeros((m + 1, m + 1), dtype=complex)
    np.fill_diagonal(h, lam)
    for a in range(m):
        h[a, m] = c[a] * g[a, idx]
        h[m, a] = np.conj(h[a, m])
    labels = tuple(t.label for t in spec.terminals) + (f"mode{idx}",)
    return EffectiveHamiltonian(h, labels, "resonant", 1, resonance_mode=idx)


def transfer_time_estimate(h: EffectiveHamiltonian) -> float:
    """Transfer time implied by a calibrated effective model.

    Resonant 3x3 with common bond magnitude ``b``: the three-level chain
    completes the transfer at ``pi / (sqrt(2) b)``.  Non-resonant 2x2 with
    equal diagonals and off-diagonal magnitude ``b``: exact Rabi half
    period ``pi / (2 b)``.
    """
    n = h.matrix.shape[0]
    if h.regime == "resonant" and n == 3:
        b1 = abs(h.matrix[0, 1])
        b2 = abs(h.matrix[1, 2])
        top = max(b1, b2)
        if top == 0.0:
            raise NoChannelError("both effective bonds vanish; no transfer channel")
        if abs(b1 - b2) > 0.01 * top:
            raise NotCalibratedError(
                f"resonant bonds differ beyond 1%: |{b1:.6e}| vs |{b2:.6e}|; "
                "calibrate the couplings first"
            )
        return float(np.pi / (np.sqrt(2.0) * 0.5 * (b1 + b2)))
    if h.regime == "nonresonant" and n == 2:
        b = abs(h.matrix[0, 1])
        if b == 0.0:
            raise NoChannelError("effective coupling vanishes; no transfer channel")
        return float(np.pi / (2.0 * b))
    raise ValueError(
        f"no transfer-time formula for a {n}x{n} {h.regime} model"
    )
