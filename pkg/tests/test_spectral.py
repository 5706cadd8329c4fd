import math

import numpy as np
import pytest

from helpers import random_connected_network
from spinnet import (
    ConstructionError,
    SpectralError,
    Terminal,
    chain,
    chain_spectrum_closed_form,
    coupling_profile,
    cycle,
    cycle_spectrum_closed_form,
    degeneracy_class_of,
    eigendecompose,
    from_edge_list,
    perron_check,
)


class TestEigendecompose:
    def test_chain3_eigenvalues(self):
        d = eigendecompose(chain(3).adjacency_matrix())
        assert np.allclose(d.eigenvalues, [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-12)

    def test_chain2_eigenvalues(self):
        d = eigendecompose(chain(2).adjacency_matrix())
        assert np.allclose(d.eigenvalues, [-1.0, 1.0], atol=1e-12)

    def test_cycle21_degeneracies(self):
        d = eigendecompose(cycle(21).adjacency_matrix())
        sizes = [len(c) for c in d.degeneracy_classes]
        assert sizes == [2] * 10 + [1]
        assert d.eigenvalues[-1] == pytest.approx(2.0, abs=1e-12)

    def test_orthonormality_and_reconstruction(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
        a = a + a.conj().T
        d = eigendecompose(a)
        v = d.eigenvectors
        gram = v.conj().T @ v
        assert np.max(np.abs(gram - np.eye(12))) < 1e-10
        recon = (v * d.eigenvalues) @ v.conj().T
        radius = float(np.max(np.abs(d.eigenvalues)))
        assert np.max(np.abs(a - recon)) < 1e-9 * (1.0 + radius)

    def test_non_hermitian_rejected(self):
        with pytest.raises(SpectralError, match="Hermitian"):
            eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_deterministic_phases(self):
        a = cycle(8).adjacency_matrix()
        d1 = eigendecompose(a)
        d2 = eigendecompose(a)
        assert np.array_equal(d1.eigenvectors, d2.eigenvectors)


class TestClosedForms:
    def test_chain_lambda5(self):
        d = chain_spectrum_closed_form(30)
        # paper-style index k counts from the largest eigenvalue
        lam5 = 2 * math.cos(5 * math.pi / 31)
        assert d.eigenvalues[30 - 5] == pytest.approx(lam5, abs=1e-14)

    def test_chain3_middle_vector(self):
        d = chain_spectrum_closed_form(3)
        k = int(np.argmin(np.abs(d.eigenvalues)))
        assert d.eigenvalues[k] == pytest.approx(0.0, abs=1e-14)
        v = d.eigenvectors[:, k]
        expected = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
        assert min(np.max(np.abs(v - expected)), np.max(np.abs(v + expected))) < 1e-12

    def test_chain1(self):
        d = chain_spectrum_closed_form(1)
        assert d.eigenvalues[0] == pytest.approx(0.0, abs=1e-15)

    def test_cycle21_top_uniform(self):
        d = cycle_spectrum_closed_form(21)
        assert d.eigenvalues[-1] == pytest.approx(2.0)
        assert np.allclose(d.eigenvectors[:, -1], 1.0 / math.sqrt(21), atol=1e-12)

    def test_cycle_even_bottom_simple(self):
        d = cycle_spectrum_closed_form(10)
        assert d.eigenvalues[0] == pytest.approx(-2.0)
        assert len(d.degeneracy_classes[0]) == 1

    def test_cycle4_eigenvalues(self):
        d = cycle_spectrum_closed_form(4)
        assert np.allclose(d.eigenvalues, [-2.0, 0.0, 0.0, 2.0], atol=1e-14)

    @pytest.mark.parametrize("n", range(2, 21))
    def test_chain_matches_numeric(self, n):
        numeric = eigendecompose(chain(n).adjacency_matrix())
        closed = chain_spectrum_closed_form(n)
        assert np.max(np.abs(numeric.eigenvalues - closed.eigenvalues)) < 1e-9
        for k in range(n):
            vn, vc = numeric.eigenvectors[:, k], closed.eigenvectors[:, k]
            assert min(np.max(np.abs(vn - vc)), np.max(np.abs(vn + vc))) < 1e-8

    @pytest.mark.parametrize("n", range(3, 21))
    def test_cycle_matches_numeric_by_projector(self, n):
        numeric = eigendecompose(cycle(n).adjacency_matrix())
        closed = cycle_spectrum_closed_form(n)
        assert np.max(np.abs(numeric.eigenvalues - closed.eigenvalues)) < 1e-9
        assert len(numeric.degeneracy_classes) == len(closed.degeneracy_classes)
        for cn, cc in zip(numeric.degeneracy_classes, closed.degeneracy_classes):
            assert np.max(np.abs(numeric.projector(cn) - closed.projector(cc))) < 1e-8


class TestDegeneracyClasses:
    def test_cycle21_simple_top(self):
        d = eigendecompose(cycle(21).adjacency_matrix())
        assert degeneracy_class_of(d, 2.0) == (20,)

    def test_cycle21_pair(self):
        d = eigendecompose(cycle(21).adjacency_matrix())
        assert len(degeneracy_class_of(d, 2 * math.cos(2 * math.pi / 21))) == 2

    def test_chain30_simple(self):
        d = eigendecompose(chain(30).adjacency_matrix())
        assert len(degeneracy_class_of(d, 2 * math.cos(5 * math.pi / 31))) == 1

    def test_not_an_eigenvalue(self):
        d = eigendecompose(chain(3).adjacency_matrix())
        with pytest.raises(SpectralError, match="not an eigenvalue"):
            degeneracy_class_of(d, 0.5)


class TestPerron:
    def test_chain30(self):
        report = perron_check(chain(30))
        assert report.simple and report.strictly_positive

    def test_cycle21(self):
        report = perron_check(cycle(21))
        assert report.top_eigenvalue == pytest.approx(2.0)
        assert report.simple and report.strictly_positive

    def test_disconnected_degenerate_top(self):
        report = perron_check(from_edge_list(4, [(1, 2), (3, 4)]))
        assert report.top_eigenvalue == pytest.approx(1.0)
        assert not report.simple

    def test_random_connected_graphs(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            report = perron_check(random_connected_network(rng, n_max=20))
            assert report.simple and report.strictly_positive


class TestCouplingProfile:
    def test_chain30_node2_mode5(self):
        d = chain_spectrum_closed_form(30)
        profile = coupling_profile(d, Terminal("s", 2, 0.01))
        expected = math.sqrt(2 / 31) * math.sin(10 * math.pi / 31)
        assert abs(profile.amplitudes[30 - 5]) == pytest.approx(expected, abs=1e-12)

    def test_chain30_node13_mode5(self):
        d = chain_spectrum_closed_form(30)
        profile = coupling_profile(d, Terminal("d", 13, 0.01))
        expected = math.sqrt(2 / 31) * abs(math.sin(65 * math.pi / 31))
        assert abs(profile.amplitudes[30 - 5]) == pytest.approx(expected, abs=1e-12)

    def test_cycle_top_mode_uniform(self):
        d = eigendecompose(cycle(21).adjacency_matrix())
        for node in (1, 8, 20):
            profile = coupling_profile(d, Terminal("u", node, 0.1))
            assert abs(profile.amplitudes[-1]) == pytest.approx(1 / math.sqrt(21), abs=1e-10)

    def test_completeness(self):
        rng = np.random.default_rng(3)
        net = random_connected_network(rng)
        d = eigendecompose(net.adjacency_matrix())
        profile = coupling_profile(d, Terminal("s", 1, 0.1))
        assert np.sum(np.abs(profile.amplitudes) ** 2) == pytest.approx(1.0, abs=1e-10)

    def test_out_of_range_node(self):
        d = eigendecompose(chain(3).adjacency_matrix())
        with pytest.raises(ConstructionError):
            coupling_profile(d, Terminal("s", 5, 0.1))
