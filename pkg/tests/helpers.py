"""Shared helpers for the test suite."""

import numpy as np

from spinnet import SpinNetwork, Terminal, from_edge_list, is_connected


def random_connected_network(rng, n_min=3, n_max=15, edge_prob=0.4) -> SpinNetwork:
    """Erdos-Renyi-style connected graph with unit weights (rejection sampled)."""
    while True:
        n = int(rng.integers(n_min, n_max + 1))
        edges = [
            (i, j)
            for i in range(1, n + 1)
            for j in range(i + 1, n + 1)
            if rng.random() < edge_prob
        ]
        if not edges:
            continue
        net = from_edge_list(n, edges)
        if is_connected(net):
            return net


def detuned_terminal(rng, label, node, eigenvalues, coupling=0.05, margin=0.1) -> Terminal:
    """Terminal whose field sits outside the spectrum by at least ``margin``."""
    if rng.random() < 0.5:
        field = float(eigenvalues[-1]) + margin + float(rng.random())
    else:
        field = float(eigenvalues[0]) - margin - float(rng.random())
    return Terminal(label, node, coupling, field)


def energy_drift(traj, h) -> float:
    """Max deviation of <psi|H|psi> from its initial value over the grid."""
    energies = np.einsum("ti,ij,tj->t", traj.states.conj(), h, traj.states).real
    return float(np.max(np.abs(energies - energies[0])))


def norm_drift(traj) -> float:
    return float(np.max(np.abs(np.sum(traj.populations, axis=1) - 1.0)))
