"""Hermitian eigendecompositions, degeneracy bookkeeping, and mode overlaps.

The transfer machinery is built on the spectrum of the network block: the
eigenvalues set the available communication frequencies and each terminal
couples into mode ``lambda`` with amplitude ``g = <attach_node|lambda>``.
Everything here is deterministic: eigenvector phases are fixed by making
the first component of largest modulus real and positive, so repeated runs
produce bit-identical results.

Closed-form spectra for paths and cycles double as independent oracles for
the numeric eigensolver:

* path with ``N`` nodes:  ``lambda_k = 2 cos(pi k / (N+1))`` with
  components ``sqrt(2/(N+1)) sin(pi k n / (N+1))``, ``k = 1..N``;
* ``N``-cycle: ``lambda_k = 2 cos(2 pi k / N)``, all eigenvalues doubly
  degenerate except ``2`` (and ``-2`` for even ``N``); degenerate pairs are
  returned in a real sine/cosine basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, SpectralError
from .network import SpinNetwork, Terminal

__all__ = [
    "SpectralDecomposition",
    "CouplingProfile",
    "PerronReport",
    "eigendecompose",
    "chain_spectrum_closed_form",
    "cycle_spectrum_closed_form",
    "degeneracy_class_of",
    "perron_check",
    "coupling_profile",
]

HERMITICITY_TOL = 1e-12

_PHASE_TIE_REL = 1e-12


def _default_tolerance(eigenvalues: np.ndarray) -> float:
    radius = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    return 1e-8 * max(1.0, radius)


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its first largest-modulus component is real > 0.

    The pivot is the first index whose modulus is within a relative
    ``1e-12`` of the maximum, which keeps the choice stable when symmetry
    makes several components equal in magnitude.
    """
    out = vectors.copy()
    for j in range(out.shape[1]):
        mags = np.abs(out[:, j])
        pivot = int(np.argmax(mags >= mags.max() * (1.0 - _PHASE_TIE_REL)))
        p = out[pivot, j]
        if p != 0:
            out[:, j] = out[:, j] * (np.conj(p) / abs(p))
    if np.isrealobj(vectors):
        return out.real if np.iscomplexobj(out) else out
    return out


def _group_classes(eigenvalues: np.ndarray, tolerance: float) -> tuple[tuple[int, ...], ...]:
    classes: list[list[int]] = []
    for idx, lam in enumerate(eigenvalues):
        if classes and lam - eigenvalues[classes[-1][-1]] < tolerance:
            classes[-1].append(idx)
        else:
            classes.append([idx])
    return tuple(tuple(c) for c in classes)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending), orthonormal eigenvectors, and degeneracy classes.

    ``degeneracy_classes`` partitions column indices by eigenvalue equality
    within ``tolerance``.  Eigenvector columns are aligned with
    ``eigenvalues`` and phase-fixed deterministically.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degeneracy_classes: tuple[tuple[int, ...], ...]
    source_dimension: int
    tolerance: float

    def __post_init__(self) -> None:
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    def class_containing(self, index: int) -> tuple[int, ...]:
        for c in self.degeneracy_classes:
            if index in c:
                return c
        raise SpectralError(f"index {index} outside 0..{self.source_dimension - 1}")

    def is_simple(self, index: int) -> bool:
        return len(self.class_containing(index)) == 1

    def projector(self, indices) -> np.ndarray:
        """Orthogonal projector onto the span of the given columns."""
        v = self.eigenvectors[:, list(indices)]
        return v @ v.conj().T


@dataclass(frozen=True)
class CouplingProfile:
    """Per-mode coupling amplitudes of one terminal.

    ``amplitudes[k]`` is the attachment-node component of eigenvector ``k``;
    completeness of the eigenbasis at one node forces
    ``sum |amplitudes|^2 == 1``.
    """

    terminal_label: str
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes.setflags(write=False)
        total = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(total - 1.0) > 1e-10:
            raise SpectralError(
                f"coupling profile of {self.terminal_label!r} is not complete: "
                f"sum |g|^2 = {total!r}"
            )


@dataclass(frozen=True)
class PerronReport:
    top_eigenvalue: float
    simple: bool
    strictly_positive: bool


def eigendecompose(a: np.ndarray, degeneracy_tolerance: float | None = None) -> SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix with verified contract.

    The input must be Hermitian within ``1e-12`` (checked, not assumed).
    Output invariants: eigenvalues ascending, eigenvectors orthonormal and
    deterministically phase-fixed, degeneracy classes grouped within the
    tolerance (default ``1e-8 * max(1, spectral radius)``).
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if asym > HERMITICITY_TOL:
        raise SpectralError(f"matrix is not Hermitian: max |A - A^dagger| = {asym:.3e}")
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigensolver failed to converge on a {a.shape[0]}x{a.shape[0]} matrix: {exc}") from exc
    tol = degeneracy_tolerance if degeneracy_tolerance is not None else _default_tolerance(eigenvalues)
    return SpectralDecomposition(
        eigenvalues=eigenvalues,
        eigenvectors=_fix_phases(eigenvectors),
        degeneracy_classes=_group_classes(eigenvalues, tol),
        source_dimension=a.shape[0],
        tolerance=tol,
    )


def chain_spectrum_closed_form(n: int) -> SpectralDecomposition:
    """Analytic spectrum of the unit-weight path with ``n`` nodes."""
    if n < 1:
        raise ConstructionError(f"chain size must be >= 1, got {n}")
    # k = n..1 puts the eigenvalues 2cos(pi k/(n+1)) in ascending order.
    ks = np.arange(n, 0, -1)
    eigenvalues = 2.0 * np.cos(np.pi * ks / (n + 1))
    nodes = np.arange(1, n + 1)
    vectors = math.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(nodes, ks) / (n + 1))
    tol = _default_tolerance(eigenvalues)
    return SpectralDecomposition(
        eigenvalues=eigenvalues,
        eigenvectors=_fix_phases(vectors),
        degeneracy_classes=_group_classes(eigenvalues, tol),
        source_dimension=n,
        tolerance=tol,
    )


def cycle_spectrum_closed_form(n: int) -> SpectralDecomposition:
    """Analytic spectrum of the ``n``-cycle, degenerate pairs in a real basis."""
    if n < 3:
        raise ConstructionError(f"cycle size must be >= 3, got {n}")
    nodes = np.arange(1, n + 1)
    columns: list[tuple[float, np.ndarray]] = []
    columns.append((2.0, np.full(n, 1.0 / math.sqrt(n))))
    if n % 2 == 0:
        columns.append((-2.0, np.cos(np.pi * nodes) / math.sqrt(n)))
    for k in range(1, (n - 1) // 2 + 1):
        lam = 2.0 * math.cos(2.0 * math.pi * k / n)
        theta = 2.0 * math.pi * k * nodes / n
        columns.append((lam, math.sqrt(2.0 / n) * np.cos(theta)))
        columns.append((lam, math.sqrt(2.0 / n) * np.sin(theta)))
    columns.sort(key=lambda item: item[0])  # stable: cos before sin in each pair
    eigenvalues = np.array([lam for lam, _ in columns])
    vectors = np.column_stack([v for _, v in columns])
    tol = _default_tolerance(eigenvalues)
    return SpectralDecomposition(
        eigenvalues=eigenvalues,
        eigenvectors=_fix_phases(vectors),
        degeneracy_classes=_group_classes(eigenvalues, tol),
        source_dimension=n,
        tolerance=tol,
    )


def degeneracy_class_of(
    decomp: SpectralDecomposition, value: float, tolerance: float | None = None
) -> tuple[int, ...]:
    """Indices of all eigenvalues within ``tolerance`` of ``value``."""
    tol = tolerance if tolerance is not None else decomp.tolerance
    hits = np.nonzero(np.abs(decomp.eigenvalues - value) <= tol)[0]
    if hits.size == 0:
        nearest = float(decomp.eigenvalues[np.argmin(np.abs(decomp.eigenvalues - value))])
        raise SpectralError(
            f"{value!r} is not an eigenvalue within tolerance {tol:.3e} "
            f"(nearest is {nearest!r})"
        )
    return tuple(int(i) for i in hits)


def perron_check(network: SpinNetwork) -> PerronReport:
    """Check the top adjacency eigenvalue against the Perron-Frobenius picture.

    A connected graph with nonnegative real weights has a simple largest
    eigenvalue whose (phase-fixed) eigenvector is strictly positive, which
    makes that mode a universal communication channel between any two nodes.
    """
    decomp = eigendecompose(network.adjacency_matrix())
    top_class = decomp.degeneracy_classes[-1]
    top_vector = decomp.eigenvectors[:, -1]
    return PerronReport(
        top_eigenvalue=float(decomp.eigenvalues[-1]),
        simple=len(top_class) == 1,
        strictly_positive=bool(np.all(top_vector.real > 1e-10) and np.max(np.abs(top_vector.imag)) < 1e-10)
        if np.iscomplexobj(top_vector)
        else bool(np.all(top_vector > 1e-10)),
    )


def coupling_profile(decomp: SpectralDecomposition, terminal: Terminal) -> CouplingProfile:
    """Amplitudes ``g_k = <attach_node|eigenvector_k>`` for one terminal."""
    if terminal.attach_node > decomp.source_dimension:
        raise ConstructionError(
            f"terminal {terminal.label!r} attaches to node {terminal.attach_node}, "
            f"but the decomposition has dimension {decomp.source_dimension}"
        )
    return CouplingProfile(
        terminal_label=terminal.label,
        amplitudes=decomp.eigenvectors[terminal.attach_node - 1, :].copy(),
    )
