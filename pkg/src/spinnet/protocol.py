"""Transfer calibration, frequency routing, and entanglement protocols.

Perfect transfer needs a symmetric effective model: in the resonant regime
the two bonds of the three-level chain must have equal magnitude, which
fixes the coupling ratio ``xi_d / xi_s = g_s / g_d``; in the non-resonant
regime the two Lamb-shifted diagonals must be equal, which fixes one local
field (or, for routing, one coupling magnitude).  Protocol timing uses the
numerically located transfer peak; the analytic estimates only seed the
search windows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .dynamics import basis_state, evolve, peak_transfer, trajectory
from .effective import (
    DETUNING_FLOOR,
    WEAK_COUPLING_FACTOR,
    EffectiveHamiltonian,
    WeakCouplingWarning,
    _adjacent_gap,
    _mode_data,
    _resolve_simple_mode,
    effective_multiuser,
    effective_nonresonant,
    effective_resonant,
)
from .errors import (
    CalibrationError,
    NoChannelError,
    NotCalibratedError,
    PlanningError,
)
from .network import SpinNetwork, SystemSpec, full_hamiltonian
from .spectral import SpectralDecomposition, eigendecompose

__all__ = [
    "ChannelWitness",
    "ChannelReport",
    "CalibrationResult",
    "FrequencyPlan",
    "EntanglementReport",
    "channel_exists",
    "calibrate_resonant",
    "calibrate_nonresonant",
    "route",
    "frequency_plan",
    "bell_protocol",
    "w_nonresonant_protocol",
    "w_resonant_protocol",
]

ZERO_AMPLITUDE = 1e-12
W_POPULATION_TOL = 0.02


@dataclass(frozen=True)
class ChannelWitness:
    """One degeneracy class whose subspace overlaps both endpoints."""

    mode_index: int
    eigenvalue: float
    strength: float


@dataclass(frozen=True)
class ChannelReport:
    exists: bool
    witness_modes: tuple[ChannelWitness, ...]


@dataclass(frozen=True)
class CalibrationResult:
    """A spec adjusted to the perfect-transfer condition, plus diagnostics.

    ``diagnostics`` holds the effective off-diagonal magnitudes, the
    residual diagonal mismatch, and regime-specific extras (detunings,
    rescale factors).  Warnings raised while building the effective model
    are captured as strings.
    """

    adjusted_spec: SystemSpec
    regime: str
    resonance_mode: int | None
    predicted_time: float
    diagnostics: dict
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class FrequencyPlan:
    """Frequency assignment for a set of users sharing one network."""

    assignments: dict[str, float]
    user_nodes: tuple[int, ...]
    min_eigenvalue_separation: float
    min_mutual_separation: float
    worst_predicted_time: float
    predicted_times: dict[str, float]


@dataclass(frozen=True)
class EntanglementReport:
    """Outcome of an entanglement-generation protocol.

    ``optimal_phases`` are the relative phases (first terminal as
    reference) that maximize the overlap with the target family; they can
    be removed afterwards by local single-qubit operations, so the
    fidelity is reported against the phase-optimized target.
    """

    protocol: str
    target_times: tuple[float, ...]
    achieved_fidelity: float
    optimal_phases: tuple[float, ...]
    terminal_populations: tuple[float, ...]
    succeeded: bool

    def __post_init__(self) -> None:
        if not -1e-9 <= self.achieved_fidelity <= 1.0 + 1e-9:
            raise ValueError(f"fidelity {self.achieved_fidelity!r} outside [0, 1]")
        object.__setattr__(
            self, "achieved_fidelity", float(min(max(self.achieved_fidelity, 0.0), 1.0))
        )


def channel_exists(
    network: SpinNetwork,
    n_s: int,
    n_d: int,
    tolerance: float = 1e-10,
    *,
    decomposition: SpectralDecomposition | None = None,
) -> ChannelReport:
    """Find eigenmodes overlapping both nodes.

    Two nodes can communicate only through modes with non-zero amplitude
    at both; for degenerate classes the basis-invariant strength
    ``|<n_s| P_class |n_d>|`` is used.  On a connected network the top
    (Perron) mode always qualifies.
    """
    decomp = decomposition if decomposition is not None else eigendecompose(
        network.adjacency_matrix()
    )
    for node in (n_s, n_d):
        if not 1 <= node <= network.node_count:
            raise CalibrationError(f"node {node} outside 1..{network.node_count}")
    v = decomp.eigenvectors
    witnesses = []
    for cls in decomp.degeneracy_classes:
        cols = list(cls)
        strength = abs(np.sum(v[n_s - 1, cols] * np.conj(v[n_d - 1, cols])))
        if strength > tolerance:
            witnesses.append(
                ChannelWitness(
                    mode_index=cls[0],
                    eigenvalue=float(decomp.eigenvalues[cls[0]]),
                    strength=float(strength),
                )
            )
    return ChannelReport(exists=bool(witnesses), witness_modes=tuple(witnesses))


def _capture_weak_warnings(fn, *args, **kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", WeakCouplingWarning)
        value = fn(*args, **kwargs)
    return value, tuple(str(w.message) for w in caught if issubclass(w.category, WeakCouplingWarning))


def calibrate_resonant(
    spec: SystemSpec,
    mode_value: float,
    *,
    decomposition: SpectralDecomposition | None = None,
) -> CalibrationResult:
    """Tune a two-terminal system to perfect resonant transfer.

    Sets both fields exactly on the chosen simple eigenvalue and rescales
    the destination coupling so that ``c_s g_s = c_d g_d``.  If the smaller
    resulting coupling magnitude exceeds the weak-coupling threshold
    (0.2 x adjacent gap), both couplings are scaled down together to
    preserve the ratio.
    """
    if spec.terminal_count != 2:
        raise CalibrationError(
            f"resonant calibration needs exactly 2 terminals, got {spec.terminal_count}"
        )
    decomp, g, c, _ = _mode_data(spec, decomposition)
    idx, lam = _resolve_simple_mode(decomp, mode_value)
    gs, gd = g[0, idx], g[1, idx]
    for amp, t in ((gs, spec.terminals[0]), (gd, spec.terminals[1])):
        if abs(amp) <= ZERO_AMPLITUDE:
            raise NoChannelError(
                f"mode {idx} (eigenvalue {lam!r}) has zero amplitude at the "
                f"attachment node of terminal {t.label!r}; it is not a channel"
            )
    c_s = c[0]
    c_d = c_s * gs / gd
    threshold = WEAK_COUPLING_FACTOR * _adjacent_gap(decomp, idx)
    smaller = min(abs(c_s), abs(c_d))
    rescale = threshold / smaller if smaller > threshold else 1.0
    c_s, c_d = c_s * rescale, c_d * rescale
    adjusted = SystemSpec(
        spec.network,
        (
            replace(spec.terminals[0], coupling=c_s, field=lam),
            replace(spec.terminals[1], coupling=c_d, field=lam),
        ),
    )
    h3, caught = _capture_weak_warnings(
        effective_resonant, adjusted, lam, decomposition=decomp
    )
    b1, b2 = abs(h3.matrix[0, 1]), abs(h3.matrix[1, 2])
    b = 0.5 * (b1 + b2)
    return CalibrationResult(
        adjusted_spec=adjusted,
        regime="resonant",
        resonance_mode=idx,
        predicted_time=float(np.pi / (np.sqrt(2.0) * b)),
        diagnostics={
            "off_diagonal_magnitudes": (b1, b2),
            "diagonal_residual": 0.0,
            "coupling_ratio": abs(c_d) / abs(c_s),
            "rescale_factor": rescale,
            "weakness_threshold": threshold,
        },
        warnings=caught,
    )


def _lamb_diag(omega: float, coupling: complex, g_sq: np.ndarray, w: np.ndarray) -> float:
    return omega - abs(coupling) ** 2 * float(np.sum(g_sq / (w - omega)))


def calibrate_nonresonant(
    spec: SystemSpec,
    free_terminal: str | None = None,
    *,
    detuning_floor: float = DETUNING_FLOOR,
    decomposition: SpectralDecomposition | None = None,
) -> CalibrationResult:
    """Equalize the Lamb-shifted diagonals by adjusting one local field.

    The free terminal's field is solved from ``diag_free(omega) ==
    diag_fixed`` by bracketed root finding; the bracket spans ten times the
    Lamb-shift scale around the fixed terminal's field and the root is
    located to ``1e-12``.  Fails if the effective coupling vanishes (no
    non-resonant channel) or the bracket contains no sign change.
    """
    if spec.terminal_count != 2:
        raise CalibrationError(
            f"non-resonant calibration needs exactly 2 terminals, got {spec.terminal_count}"
        )
    free_idx = 0 if free_terminal is None else spec.terminal_index(free_terminal)
    fixed_idx = 1 - free_idx
    decomp, g, c, omega = _mode_data(spec, decomposition)
    from .effective import _require_detuned

    _require_detuned(spec, decomp, detuning_floor)
    w = decomp.eigenvalues
    g_free_sq = np.abs(g[free_idx]) ** 2
    g_fixed_sq = np.abs(g[fixed_idx]) ** 2
    omega_fixed = omega[fixed_idx]
    target = _lamb_diag(omega_fixed, c[fixed_idx], g_fixed_sq, w)

    def mismatch(om: float) -> float:
        return _lamb_diag(om, c[free_idx], g_free_sq, w) - target

    scale = abs(c[free_idx]) ** 2 * float(np.sum(g_free_sq / np.abs(w - omega_fixed)))
    scale += abs(c[fixed_idx]) ** 2 * float(np.sum(g_fixed_sq / np.abs(w - omega_fixed)))
    lo, hi = omega_fixed - 10.0 * scale, omega_fixed + 10.0 * scale
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo == 0.0:
        root = lo
    elif f_hi == 0.0:
        root = hi
    elif np.sign(f_lo) == np.sign(f_hi):
        raise CalibrationError(
            f"diagonal-matching root not bracketed in [{lo!r}, {hi!r}]"
        )
    else:
        root = float(optimize.brentq(mismatch, lo, hi, xtol=1e-12))
    if float(np.min(np.abs(w - root))) <= detuning_floor:
        raise CalibrationError(
            f"calibrated field {root!r} lands within the detuning floor of the spectrum"
        )
    terminals = list(spec.terminals)
    terminals[free_idx] = replace(terminals[free_idx], field=root)
    adjusted = SystemSpec(spec.network, tuple(terminals))
    h2, caught = _capture_weak_warnings(
        effective_nonresonant, adjusted, detuning_floor=detuning_floor, decomposition=decomp
    )
    b = abs(h2.matrix[0, 1])
    if b <= 1e-15:
        raise NoChannelError(
            "no non-resonant channel between the terminals: the effective "
            "coupling vanishes although the diagonals were equalized"
        )
    residual = abs(h2.matrix[0, 0] - h2.matrix[1, 1])
    return CalibrationResult(
        adjusted_spec=adjusted,
        regime="nonresonant",
        resonance_mode=None,
        predicted_time=float(np.pi / (2.0 * b)),
        diagnostics={
            "off_diagonal_magnitudes": (b,),
            "diagonal_residual": float(residual),
            "field_shift": float(root - omega[free_idx]),
        },
        warnings=caught,
    )


def route(
    spec: SystemSpec,
    target: str | int,
    *,
    detuning_floor: float = DETUNING_FLOOR,
    decomposition: SpectralDecomposition | None = None,
) -> CalibrationResult:
    """Point the source at one user by frequency matching.

    The first terminal is the source; the remaining terminals are users
    with pairwise-distinct fields.  The source field is set equal to the
    target's and the source coupling magnitude is rescaled so the two
    Lamb-shifted diagonals match (the equalization is exactly solvable
    because both shifts are evaluated at the common field).  Diagnostics
    report the minimum detuning to rival users and to the spectrum; a
    routing-ambiguity warning is attached when a rival sits closer than
    five effective couplings away.
    """
    if spec.terminal_count < 2:
        raise CalibrationError("routing needs a source and at least one user")
    source = spec.terminals[0]
    users = spec.terminals[1:]
    fields = [u.field for u in users]
    if len(set(fields)) != len(fields):
        raise CalibrationError(f"user fields must be pairwise distinct, got {fields}")
    if isinstance(target, int):
        if not 1 <= target <= len(users):
            raise CalibrationError(f"target index {target} outside 1..{len(users)}")
        target_terminal = users[target - 1]
    else:
        target_terminal = spec.terminal(target)
        if target_terminal is source:
            raise CalibrationError("the source cannot be its own target")
    decomp, g, c, _ = _mode_data(spec, decomposition)
    w = decomp.eigenvalues
    omega = target_terminal.field
    if float(np.min(np.abs(w - omega))) <= detuning_floor:
        raise CalibrationError(
            f"target field {omega!r} violates the detuning floor against the spectrum"
        )
    t_idx = spec.terminal_index(target_terminal.label)
    sum_source = float(np.sum(np.abs(g[0]) ** 2 / (w - omega)))
    sum_target = float(np.sum(np.abs(g[t_idx]) ** 2 / (w - omega)))
    if sum_source == 0.0 or sum_target / sum_source <= 0.0:
        raise CalibrationError(
            "cannot equalize the diagonals by rescaling the source coupling: "
            f"Lamb-shift sums have incompatible signs ({sum_source!r} vs {sum_target!r})"
        )
    magnitude = abs(c[t_idx]) * math.sqrt(sum_target / sum_source)
    new_source = replace(
        source, coupling=source.coupling * (magnitude / abs(source.coupling)), field=omega
    )
    adjusted = SystemSpec(spec.network, (new_source,) + users)
    h_multi, caught = _capture_weak_warnings(
        effective_multiuser, adjusted, detuning_floor=detuning_floor, decomposition=decomp
    )
    b_target = abs(h_multi.matrix[0, t_idx])
    if b_target <= 1e-15:
        raise NoChannelError(
            f"no non-resonant channel from {source.label!r} to {target_terminal.label!r}"
        )
    warn_list = list(caught)
    rival_detunings = {}
    for k, u in enumerate(users, start=1):
        if u.label == target_terminal.label:
            continue
        delta = abs(omega - u.field)
        rival_detunings[u.label] = delta
        b_rival = abs(h_multi.matrix[0, k])
        if delta < 5.0 * b_rival:
            warn_list.append(
                f"routing ambiguity: user {u.label!r} is detuned by {delta:.3e}, "
                f"below 5x its effective coupling {b_rival:.3e}; "
                "expect the excitation to entangle with that user"
            )
    diag = h_multi.matrix.diagonal().real
    residual = abs(diag[0] - diag[t_idx])
    return CalibrationResult(
        adjusted_spec=adjusted,
        regime="nonresonant",
        resonance_mode=None,
        predicted_time=float(np.pi / (2.0 * b_target)),
        diagnostics={
            "target": target_terminal.label,
            "off_diagonal_magnitudes": (float(b_target),),
            "diagonal_residual": float(residual),
            "min_user_detuning": min(rival_detunings.values()) if rival_detunings else math.inf,
            "min_spectrum_detuning": float(np.min(np.abs(w - omega))),
            "user_detunings": rival_detunings,
        },
        warnings=tuple(warn_list),
    )


def _plan_candidates(
    distinct: np.ndarray, sep: float, mutual: float, slots: int
) -> list[float]:
    candidates = []
    for j in range(slots + 1):
        candidates.append(float(distinct[-1] + sep + j * mutual))
        candidates.append(float(distinct[0] - sep - j * mutual))
    for a, b in zip(distinct[:-1], distinct[1:]):
        if b - a >= 2.0 * sep:
            candidates.append(float(a + sep))
            candidates.append(float(b - sep))
            candidates.append(float(0.5 * (a + b)))
    return sorted(set(candidates))


def frequency_plan(
    network: SpinNetwork,
    attach_nodes,
    *,
    min_mutual_sep: float,
    min_spectrum_sep: float,
    max_time: float | None = None,
    coupling: float = 0.1,
    decomposition: SpectralDecomposition | None = None,
) -> FrequencyPlan:
    """Assign communication frequencies to users on one network.

    ``attach_nodes[0]`` is the source node, the rest are users (labelled
    ``u1, u2, ...`` in order).  Frequencies close to the spectrum give fast
    transfer but poor selectivity, so each user gets the fastest candidate
    frequency that keeps ``min_spectrum_sep`` from every eigenvalue and
    ``min_mutual_sep`` from every already-assigned user: a greedy,
    time-ordered assignment over a finite, deterministic candidate set
    (admissible-interval endpoints, gap midpoints, and shifted copies of
    assigned frequencies).
    """
    nodes = list(attach_nodes)
    if len(nodes) < 2:
        raise PlanningError("need a source node and at least one user node")
    if not (min_mutual_sep > 0 and min_spectrum_sep > 0):
        raise PlanningError("separation minima must be positive")
    decomp = decomposition if decomposition is not None else eigendecompose(
        network.adjacency_matrix()
    )
    w = decomp.eigenvalues
    distinct = np.array([w[cls[0]] for cls in decomp.degeneracy_classes])
    source, users = nodes[0], nodes[1:]
    for node in nodes:
        if not 1 <= node <= network.node_count:
            raise PlanningError(f"node {node} outside 1..{network.node_count}")
    g_source = decomp.eigenvectors[source - 1, :]
    slack = 1e-12

    def spectrum_ok(x: float) -> bool:
        return float(np.min(np.abs(w - x))) >= min_spectrum_sep - slack

    def predicted_time(user_node: int, x: float) -> float:
        g_user = decomp.eigenvectors[user_node - 1, :]
        b = coupling**2 * abs(np.sum(g_source * np.conj(g_user) / (w - x)))
        return math.inf if b <= 1e-300 else float(np.pi / (2.0 * b))

    base = _plan_candidates(distinct, min_spectrum_sep, min_mutual_sep, len(users))
    assignments: dict[str, float] = {}
    times: dict[str, float] = {}
    for k, user_node in enumerate(users, start=1):
        label = f"u{k}"
        pool = list(base)
        for assigned in assignments.values():
            pool.extend((assigned + min_mutual_sep, assigned - min_mutual_sep))
        feasible = [
            x
            for x in sorted(set(pool))
            if spectrum_ok(x)
            and all(abs(x - a) >= min_mutual_sep - slack for a in assignments.values())
        ]
        if not feasible:
            binding = "min_mutual_sep" if any(spectrum_ok(x) for x in pool) else "min_spectrum_sep"
            raise PlanningError(
                f"no admissible frequency for user {label} at node {user_node}: "
                f"binding constraint is {binding}"
            )
        best_time, best_x = min((predicted_time(user_node, x), x) for x in feasible)
        if not math.isfinite(best_time):
            raise PlanningError(
                f"user {label} at node {user_node} has no channel from node {source} "
                "at any admissible frequency"
            )
        if max_time is not None and best_time > max_time:
            raise PlanningError(
                f"user {label} at node {user_node}: fastest admissible transfer takes "
                f"{best_time:.6g}, exceeding max_time={max_time:.6g}; "
                "binding constraint is max_time"
            )
        assignments[label] = best_x
        times[label] = best_time
    values = list(assignments.values())
    mutual = (
        min(abs(a - b) for i, a in enumerate(values) for b in values[i + 1 :])
        if len(values) > 1
        else math.inf
    )
    return FrequencyPlan(
        assignments=assignments,
        user_nodes=tuple(users),
        min_eigenvalue_separation=float(min(np.min(np.abs(w - x)) for x in values)),
        min_mutual_separation=float(mutual),
        worst_predicted_time=max(times.values()),
        predicted_times=times,
    )


def _phases_relative_to_first(amplitudes: np.ndarray) -> tuple[float, ...]:
    reference = float(np.angle(amplitudes[0]))
    phases = np.angle(amplitudes) - reference
    return tuple(float(np.angle(np.exp(1j * p))) for p in phases)


def bell_protocol(spec: SystemSpec, *, coarse_points: int = 2000) -> EntanglementReport:
    """Maximally entangle the two terminals by stopping at half transfer.

    Requires a calibrated two-terminal system (resonant bonds equal within
    1%, or non-resonant diagonals matched to a tenth of the effective
    coupling).  The transfer time is located numerically; at half that
    time the state is ``(|s> + e^{i phi}|d>)/sqrt(2)`` up to residuals, and
    the reported fidelity is maximized over the Bell-family phase:
    ``max_phi |<Bell(phi)|psi>|^2 = (|psi_s| + |psi_d|)^2 / 2``.
    """
    if spec.terminal_count != 2:
        raise CalibrationError("the Bell protocol needs exactly 2 terminals")
    decomp = eigendecompose(spec.network.adjacency_matrix())
    omega_s = spec.terminals[0].field
    resonant = float(np.min(np.abs(decomp.eigenvalues - omega_s))) <= 1e-9
    if resonant:
        h_eff, _ = _capture_weak_warnings(
            effective_resonant, spec, omega_s, decomposition=decomp
        )
        b1, b2 = abs(h_eff.matrix[0, 1]), abs(h_eff.matrix[1, 2])
        if b1 == 0.0 or b2 == 0.0 or abs(b1 - b2) > 0.01 * max(b1, b2):
            raise NotCalibratedError(
                f"resonant bonds are not calibrated: |{b1:.6e}| vs |{b2:.6e}|"
            )
        t_estimate = float(np.pi / (np.sqrt(2.0) * 0.5 * (b1 + b2)))
    else:
        h_eff, _ = _capture_weak_warnings(
            effective_nonresonant, spec, decomposition=decomp
        )
        b = abs(h_eff.matrix[0, 1])
        if b <= 1e-15:
            raise NoChannelError("no effective coupling between the terminals")
        mismatch = abs(h_eff.matrix[0, 0] - h_eff.matrix[1, 1])
        if mismatch > 0.1 * b:
            raise NotCalibratedError(
                f"diagonal mismatch {mismatch:.3e} exceeds 10% of the effective "
                f"coupling {b:.3e}; calibrate the fields first"
            )
        t_estimate = float(np.pi / (2.0 * b))
    s_label = spec.terminals[0].label
    d_label = spec.terminals[1].label
    t_transfer, _ = peak_transfer(spec, s_label, d_label, 1.5 * t_estimate, coarse_points)
    half = 0.5 * t_transfer
    psi = evolve(full_hamiltonian(spec), basis_state(spec, s_label), half)
    pair = psi[:2]
    fidelity = float((abs(pair[0]) + abs(pair[1])) ** 2 / 2.0)
    return EntanglementReport(
        protocol="bell",
        target_times=(half,),
        achieved_fidelity=fidelity,
        optimal_phases=_phases_relative_to_first(pair),
        terminal_populations=tuple(float(abs(a) ** 2) for a in pair),
        succeeded=True,
    )


def w_nonresonant_protocol(
    spec: SystemSpec,
    *,
    t_max: float | None = None,
    n_points: int = 8001,
    tolerance: float = W_POPULATION_TOL,
) -> EntanglementReport:
    """Three-user W state from free evolution at a common frequency.

    All three terminals must share one non-resonant field.  Starting from
    the first terminal, the trajectory is scanned for times where all
    three terminal populations sit within ``tolerance`` of 1/3; among
    those, the time maximizing the W-family fidelity
    ``(sum_j |psi_j|)^2 / 3`` is refined and reported.  If no qualifying
    time exists in the window the report is returned with
    ``succeeded=False`` (best near-miss included) rather than raising.
    """
    if spec.terminal_count != 3:
        raise CalibrationError("the non-resonant W protocol needs exactly 3 terminals")
    fields = [t.field for t in spec.terminals]
    if max(fields) - min(fields) > 1e-9:
        raise NotCalibratedError(f"terminal fields must be equal, got {fields}")
    h_eff, _ = _capture_weak_warnings(effective_multiuser, spec)
    bonds = h_eff.off_diagonal_magnitudes()
    b_min = min(bonds)
    if b_min <= 1e-15:
        raise NoChannelError(f"an effective coupling vanishes: bond magnitudes {bonds}")
    if t_max is None:
        t_max = 2.0 * (2.0 * np.pi / b_min)
    h = full_hamiltonian(spec)
    traj = trajectory(spec, spec.terminals[0].label, t_max, n_points)
    terminal_pops = traj.populations[:, :3]
    deviation = np.max(np.abs(terminal_pops - 1.0 / 3.0), axis=1)
    amplitudes = traj.states[:, :3]
    fidelities = np.sum(np.abs(amplitudes), axis=1) ** 2 / 3.0
    psi0 = basis_state(spec, spec.terminals[0].label)

    def fidelity_at(t: float) -> float:
        a = evolve(h, psi0, t)[:3]
        return float(np.sum(np.abs(a)) ** 2 / 3.0)

    qualifying = np.nonzero(deviation <= tolerance)[0]
    succeeded = qualifying.size > 0
    if succeeded:
        best = int(qualifying[np.argmax(fidelities[qualifying])])
    else:
        best = int(np.argmin(deviation))
    dt = traj.time_grid[1] - traj.time_grid[0]
    t_best = float(traj.time_grid[best])
    result = optimize.minimize_scalar(
        lambda t: -fidelity_at(t),
        bounds=(max(t_best - dt, 0.0), min(t_best + dt, t_max)),
        method="bounded",
        options={"xatol": 1e-9 * t_max},
    )
    t_refined = float(result.x)
    psi = evolve(h, psi0, t_refined)[:3]
    pops = np.abs(psi) ** 2
    if succeeded and float(np.max(np.abs(pops - 1.0 / 3.0))) > tolerance:
        t_refined = t_best
        psi = evolve(h, psi0, t_refined)[:3]
        pops = np.abs(psi) ** 2
    return EntanglementReport(
        protocol="w_nonresonant",
        target_times=(t_refined,),
        achieved_fidelity=float(np.sum(np.abs(psi)) ** 2 / 3.0),
        optimal_phases=_phases_relative_to_first(psi),
        terminal_populations=tuple(float(p) for p in pops),
        succeeded=succeeded,
    )


def _stage_time_search(h_stage1, h_full, psi0, m, t1_grid, t2_grid):
    """Deterministic grid search for the stage durations that minimize the
    worst terminal-population deviation from 1/m after stage 2."""
    from .dynamics import _propagator_parts

    w1, v1 = _propagator_parts(h_stage1)
    w2, v2 = _propagator_parts(h_full)
    a1 = v1.conj().T @ psi0
    best = (math.inf, t1_grid[0], t2_grid[0])
    for t1 in t1_grid:
        psi_mid = v1 @ (np.exp(-1j * w1 * t1) * a1)
        a2 = v2.conj().T @ psi_mid
        finals = (v2 @ (np.exp(-1j * np.outer(w2, t2_grid)) * a2[:, np.newaxis]))[:m, :]
        deviations = np.max(np.abs(np.abs(finals) ** 2 - 1.0 / m), axis=0)
        k = int(np.argmin(deviations))
        if deviations[k] < best[0]:
            best = (float(deviations[k]), float(t1), float(t2_grid[k]))
    return best


def w_resonant_protocol(
    spec: SystemSpec,
    mode_value: float,
    *,
    refine: bool = True,
    decomposition: SpectralDecomposition | None = None,
) -> EntanglementReport:
    """Two-stage W state over ``m`` users through one simple mode.

    Stage 1: only the first terminal is coupled; the excitation transfers
    into the chosen eigenmode (two-level transfer, duration
    ``pi / (2 |c_1 g_1|)``).  Stage 2: all terminals couple with products
    ``c_i g_i`` equalized; the mode maps onto the symmetric (bright)
    combination of the terminals in ``pi / (2 b sqrt(m))``.  The switch is
    instantaneous (piecewise-constant Hamiltonian) and the whole schedule
    is simulated with exact dynamics.

    Two calibration steps keep the higher-order physics from spoiling the
    target populations: each terminal field is offset by its calculable
    second-order level shift (so the dressed level, not the bare one, sits
    on the mode), and when ``refine`` is set the analytic durations seed a
    deterministic two-stage grid search that minimizes the worst deviation
    of the final terminal populations from ``1/m``.
    """
    m = spec.terminal_count
    if m < 1:
        raise CalibrationError("the resonant W protocol needs at least 1 terminal")
    decomp, g, c, _ = _mode_data(spec, decomposition)
    idx, lam = _resolve_simple_mode(decomp, mode_value)
    for k, t in enumerate(spec.terminals):
        if abs(g[k, idx]) <= ZERO_AMPLITUDE:
            raise NoChannelError(
                f"terminal {t.label!r} is unreachable: zero amplitude at mode {idx}"
            )
    g1 = g[0, idx]
    others = np.ones(decomp.source_dimension, dtype=bool)
    others[idx] = False
    shift_denominator = lam - decomp.eigenvalues[others]
    terminals = []
    for k in range(m):
        coupling = (
            spec.terminals[0].coupling
            if k == 0
            else spec.terminals[0].coupling * g1 / g[k, idx]
        )
        level_shift = abs(coupling) ** 2 * float(
            np.sum(np.abs(g[k, others]) ** 2 / shift_denominator)
        )
        terminals.append(
            replace(spec.terminals[k], coupling=coupling, field=lam - level_shift)
        )
    adjusted = SystemSpec(spec.network, tuple(terminals))
    h_full = full_hamiltonian(adjusted).astype(complex)
    h_stage1 = h_full.copy()
    for k in range(1, m):
        col = m + terminals[k].attach_node - 1
        h_stage1[k, col] = 0.0
        h_stage1[col, k] = 0.0
    b = abs(terminals[0].coupling * g1)
    t1 = float(np.pi / (2.0 * b))
    t2 = float(np.pi / (2.0 * b * math.sqrt(m)))
    psi0 = np.zeros(adjusted.dimension, dtype=complex)
    psi0[0] = 1.0
    if refine:
        _, t1, t2 = _stage_time_search(
            h_stage1, h_full, psi0, m,
            np.linspace(0.85 * t1, 1.15 * t1, 41),
            np.linspace(0.8 * t2, 1.2 * t2, 41),
        )
        span1 = 0.3 * t1 / 40.0
        span2 = 0.4 * t2 / 40.0
        _, t1, t2 = _stage_time_search(
            h_stage1, h_full, psi0, m,
            np.linspace(t1 - span1, t1 + span1, 21),
            np.linspace(t2 - span2, t2 + span2, 21),
        )
    psi_final = evolve(h_full, evolve(h_stage1, psi0, t1), t2)[:m]
    pops = np.abs(psi_final) ** 2
    return EntanglementReport(
        protocol="w_resonant",
        target_times=(t1, t2),
        achieved_fidelity=float(np.sum(np.abs(psi_final)) ** 2 / m),
        optimal_phases=_phases_relative_to_first(psi_final),
        terminal_populations=tuple(float(p) for p in pops),
        succeeded=bool(np.max(np.abs(pops - 1.0 / m)) <= W_POPULATION_TOL),
    )
