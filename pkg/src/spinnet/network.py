"""Spin networks, terminal spins, and the single-excitation Hamiltonian.

A network of spins coupled by uniform XX interactions conserves the total
excitation number, so with a single excitation the Hamiltonian restricted
to that sector is just a matrix indexed by sites.  The network block equals
the weighted adjacency matrix of the interaction graph; each terminal spin
adds one row/column with its local field on the diagonal and its coupling
to the attachment node off the diagonal.

Node indices are 1-based in every user-facing interface; arrays are
0-based internally.  All types are immutable after construction and safe
to share across workers.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError

__all__ = [
    "SpinNetwork",
    "Terminal",
    "SystemSpec",
    "chain",
    "cycle",
    "from_edge_list",
    "is_connected",
    "full_hamiltonian",
]


@dataclass(frozen=True)
class SpinNetwork:
    """Undirected weighted graph of network spins.

    ``edges`` holds ``(i, j, weight)`` triples with ``1 <= i < j <= node_count``.
    Weights are real couplings in the common energy unit (default 1.0).
    """

    node_count: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.node_count, int) or self.node_count < 1:
            raise ConstructionError(f"node_count must be a positive integer, got {self.node_count!r}")
        normalized = []
        seen: set[tuple[int, int]] = set()
        for edge in self.edges:
            if len(edge) == 2:
                i, j = edge
                w = 1.0
            else:
                i, j, w = edge
            if not (isinstance(i, int) and isinstance(j, int)):
                raise ConstructionError(f"edge endpoints must be integers, got {edge!r}")
            if i == j:
                raise ConstructionError(f"self-loop at node {i} is not allowed")
            if not (1 <= i <= self.node_count and 1 <= j <= self.node_count):
                raise ConstructionError(
                    f"edge {edge!r} has an endpoint outside 1..{self.node_count}"
                )
            w = float(w)
            if not math.isfinite(w):
                raise ConstructionError(f"edge {edge!r} has a non-finite weight")
            if i > j:
                i, j = j, i
            if (i, j) in seen:
                raise ConstructionError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            normalized.append((i, j, w))
        normalized.sort(key=lambda e: (e[0], e[1]))
        object.__setattr__(self, "edges", tuple(normalized))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def adjacency_matrix(self) -> np.ndarray:
        """Symmetric weighted adjacency matrix (float64, shape N x N)."""
        a = np.zeros((self.node_count, self.node_count))
        for i, j, w in self.edges:
            a[i - 1, j - 1] = w
            a[j - 1, i - 1] = w
        return a

    def neighbors(self, node: int) -> tuple[int, ...]:
        """Nodes adjacent to ``node`` (1-based)."""
        if not 1 <= node <= self.node_count:
            raise ConstructionError(f"node {node} outside 1..{self.node_count}")
        out = [j for i, j, _ in self.edges if i == node]
        out += [i for i, j, _ in self.edges if j == node]
        return tuple(sorted(out))


def chain(n: int) -> SpinNetwork:
    """Path graph with ``n`` nodes and ``n - 1`` unit-weight edges."""
    if n < 1:
        raise ConstructionError(f"chain size must be >= 1, got {n}")
    return SpinNetwork(n, tuple((k, k + 1, 1.0) for k in range(1, n)))


def cycle(n: int) -> SpinNetwork:
    """Ring with ``n`` nodes and ``n`` unit-weight edges."""
    if n < 3:
        raise ConstructionError(f"cycle size must be >= 3, got {n}")
    edges = [(k, k + 1, 1.0) for k in range(1, n)]
    edges.append((1, n, 1.0))
    return SpinNetwork(n, tuple(edges))


def from_edge_list(n: int, edges) -> SpinNetwork:
    """Validated network from an iterable of ``(i, j)`` or ``(i, j, weight)``."""
    return SpinNetwork(n, tuple(tuple(e) for e in edges))


def is_connected(network: SpinNetwork) -> bool:
    """True iff the graph is connected (breadth-first traversal)."""
    n = network.node_count
    adj: list[list[int]] = [[] for _ in range(n + 1)]
    for i, j, _ in network.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {1}
    frontier = [1]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == n


@dataclass(frozen=True)
class Terminal:
    """A user spin weakly coupled to one network node.

    ``coupling`` stores the full product epsilon*xi as one complex value;
    the bookkeeping split is recoverable through ``epsilon`` and ``xi``.
    ``field`` is the local magnetic field (diagonal energy) of the spin.
    """

    label: str
    attach_node: int
    coupling: complex
    field: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self) -> None:
        if not self.label:
            raise ConstructionError("terminal label must be a non-empty string")
        if not isinstance(self.attach_node, int) or self.attach_node < 1:
            raise ConstructionError(
                f"terminal {self.label!r}: attach_node must be a positive integer"
            )
        c = complex(self.coupling)
        if c == 0:
            raise ConstructionError(
                f"terminal {self.label!r}: zero coupling would leave the spin disconnected"
            )
        if not (cmath.isfinite(c) and math.isfinite(float(self.field))):
            raise ConstructionError(f"terminal {self.label!r}: non-finite parameter")
        if not self.epsilon > 0:
            raise ConstructionError(f"terminal {self.label!r}: epsilon must be positive")
        object.__setattr__(self, "coupling", c)
        object.__setattr__(self, "field", float(self.field))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def xi(self) -> complex:
        return self.coupling / self.epsilon


@dataclass(frozen=True)
class SystemSpec:
    """A network plus an ordered list of terminals.

    The single-excitation basis is fixed as: terminals in declaration
    order, then network nodes ``1..N``.
    """

    network: SpinNetwork
    terminals: tuple[Terminal, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "terminals", tuple(self.terminals))
        labels = [t.label for t in self.terminals]
        if len(set(labels)) != len(labels):
            raise ConstructionError(f"terminal labels must be unique, got {labels}")
        for t in self.terminals:
            if t.attach_node > self.network.node_count:
                raise ConstructionError(
                    f"terminal {t.label!r} attaches to node {t.attach_node}, "
                    f"but the network has only {self.network.node_count} nodes"
                )

    @property
    def terminal_count(self) -> int:
        return len(self.terminals)

    @property
    def dimension(self) -> int:
        return self.terminal_count + self.network.node_count

    def basis_labels(self) -> tuple[str, ...]:
        """Basis-state labels: terminal labels, then ``node1..nodeN``."""
        return tuple(t.label for t in self.terminals) + tuple(
            f"node{k}" for k in range(1, self.network.node_count + 1)
        )

    def terminal_index(self, label: str) -> int:
        """Basis index of the terminal with the given label."""
        for k, t in enumerate(self.terminals):
            if t.label == label:
                return k
        raise ConstructionError(f"unknown terminal label {label!r}")

    def terminal(self, label: str) -> Terminal:
        return self.terminals[self.terminal_index(label)]


def full_hamiltonian(spec: SystemSpec) -> np.ndarray:
    """Single-excitation Hamiltonian of the whole system.

    In the fixed basis ordering the network block is the adjacency matrix
    of the graph; terminal ``a`` contributes a diagonal entry ``field`` and
    an off-diagonal entry ``coupling`` between itself and its attachment
    node (conjugated on the transpose).  Entries are assigned symmetrically
    so the matrix equals its conjugate transpose exactly.
    """
    m = spec.terminal_count
    n = spec.network.node_count
    dtype = complex if any(t.coupling.imag != 0.0 for t in spec.terminals) else float
    h = np.zeros((m + n, m + n), dtype=dtype)
    h[m:, m:] = spec.network.adjacency_matrix()
    for k, t in enumerate(spec.terminals):
        col = m + t.attach_node - 1
        c = t.coupling if dtype is complex else t.coupling.real
        h[k, k] = t.field
        h[k, col] = c
        h[col, k] = np.conj(c)
    return h
