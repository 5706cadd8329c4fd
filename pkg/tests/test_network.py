import numpy as np
import pytest

from spinnet import (
    ConstructionError,
    SpinNetwork,
    SystemSpec,
    Terminal,
    chain,
    cycle,
    from_edge_list,
    full_hamiltonian,
    is_connected,
)


def edge_pairs(net):
    return {(i, j) for i, j, _ in net.edges}


class TestConstructors:
    def test_chain_2(self):
        assert edge_pairs(chain(2)) == {(1, 2)}

    def test_chain_3(self):
        net = chain(3)
        assert edge_pairs(net) == {(1, 2), (2, 3)}
        assert all(w == 1.0 for _, _, w in net.edges)

    def test_chain_30(self):
        assert chain(30).edge_count == 29

    def test_chain_1_has_no_edges(self):
        assert chain(1).edges == ()

    def test_chain_0_rejected(self):
        with pytest.raises(ConstructionError):
            chain(0)

    def test_cycle_3(self):
        assert edge_pairs(cycle(3)) == {(1, 2), (2, 3), (1, 3)}

    def test_cycle_4(self):
        assert edge_pairs(cycle(4)) == {(1, 2), (2, 3), (3, 4), (1, 4)}

    def test_cycle_21(self):
        assert cycle(21).edge_count == 21

    def test_cycle_too_small(self):
        with pytest.raises(ConstructionError):
            cycle(2)

    def test_edge_list_disconnected_is_valid(self):
        net = from_edge_list(4, [(1, 2), (3, 4)])
        assert net.edge_count == 2
        assert not is_connected(net)

    def test_edge_list_self_loop(self):
        with pytest.raises(ConstructionError, match="self-loop"):
            from_edge_list(3, [(1, 1)])

    def test_edge_list_duplicate(self):
        with pytest.raises(ConstructionError, match="duplicate"):
            from_edge_list(3, [(1, 2), (2, 1)])

    def test_edge_list_out_of_range(self):
        with pytest.raises(ConstructionError):
            from_edge_list(3, [(1, 4)])

    def test_star_graph(self):
        net = from_edge_list(5, [(1, k) for k in range(2, 6)])
        assert is_connected(net)
        assert net.neighbors(1) == (2, 3, 4, 5)

    def test_weights_kept(self):
        net = from_edge_list(2, [(1, 2, 0.5)])
        assert net.adjacency_matrix()[0, 1] == 0.5

    def test_non_finite_weight_rejected(self):
        with pytest.raises(ConstructionError):
            from_edge_list(2, [(1, 2, np.inf)])


class TestConnectivity:
    def test_chain_connected(self):
        assert is_connected(chain(30))

    def test_cycle_connected(self):
        assert is_connected(cycle(21))

    def test_single_node_connected(self):
        assert is_connected(chain(1))


class TestTerminal:
    def test_zero_coupling_rejected(self):
        with pytest.raises(ConstructionError, match="disconnected"):
            Terminal("s", 1, 0.0)

    def test_xi_split(self):
        t = Terminal("s", 2, 0.01, field=1.5, epsilon=0.01)
        assert t.xi == pytest.approx(1.0)
        assert t.coupling == pytest.approx(0.01)

    def test_complex_coupling(self):
        t = Terminal("s", 1, 0.1j)
        assert t.coupling == 0.1j


class TestSystemSpec:
    def test_duplicate_labels_rejected(self):
        with pytest.raises(ConstructionError, match="unique"):
            SystemSpec(chain(3), (Terminal("s", 1, 0.1), Terminal("s", 2, 0.1)))

    def test_attach_out_of_range(self):
        with pytest.raises(ConstructionError, match="only 3 nodes"):
            SystemSpec(chain(3), (Terminal("s", 4, 0.1),))

    def test_basis_order(self):
        spec = SystemSpec(chain(2), (Terminal("a", 1, 0.1), Terminal("b", 2, 0.1)))
        assert spec.basis_labels() == ("a", "b", "node1", "node2")
        assert spec.terminal_index("b") == 1


class TestFullHamiltonian:
    def test_single_node_with_terminal(self):
        spec = SystemSpec(chain(1), (Terminal("s", 1, 0.1, field=0.5),))
        assert np.allclose(full_hamiltonian(spec), [[0.5, 0.1], [0.1, 0.0]])

    def test_bare_chain_2(self):
        spec = SystemSpec(chain(2))
        assert np.array_equal(full_hamiltonian(spec), [[0.0, 1.0], [1.0, 0.0]])

    def test_fig1_coupling_entry(self):
        lam5 = 2 * np.cos(5 * np.pi / 31)
        spec = SystemSpec(
            chain(30),
            (Terminal("s", 2, 0.01, lam5), Terminal("d", 13, 0.01, lam5)),
        )
        h = full_hamiltonian(spec)
        assert h.shape == (32, 32)
        assert h[0, 2 + 2 - 1] == 0.01  # s row, node 2 column
        assert h[1, 2 + 13 - 1] == 0.01

    def test_exactly_hermitian(self):
        spec = SystemSpec(
            cycle(5),
            (Terminal("s", 1, 0.1 + 0.05j, field=0.3), Terminal("d", 4, 0.2, field=-0.1)),
        )
        h = full_hamiltonian(spec)
        assert np.array_equal(h, h.conj().T)

    def test_diagonal_carries_fields(self):
        spec = SystemSpec(chain(2), (Terminal("s", 1, 0.1, field=-0.7),))
        assert full_hamiltonian(spec)[0, 0] == -0.7

    def test_terminal_permutation_permutes_matrix(self):
        a = Terminal("a", 1, 0.1, field=0.2)
        b = Terminal("b", 3, 0.05, field=-0.4)
        net = chain(3)
        h_ab = full_hamiltonian(SystemSpec(net, (a, b)))
        h_ba = full_hamiltonian(SystemSpec(net, (b, a)))
        perm = [1, 0, 2, 3, 4]  # swap the two terminal rows/columns
        assert np.array_equal(h_ab[np.ix_(perm, perm)], h_ba)

    def test_real_inputs_give_real_matrix(self):
        spec = SystemSpec(chain(2), (Terminal("s", 1, 0.1),))
        assert full_hamiltonian(spec).dtype == np.float64
