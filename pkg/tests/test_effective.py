import math

import numpy as np
import pytest

from helpers import detuned_terminal, random_connected_network
from spinnet import (
    DegenerateModeError,
    NotCalibratedError,
    NotResonantError,
    ResonantCollisionError,
    SystemSpec,
    Terminal,
    WeakCouplingWarning,
    chain,
    cycle,
    cycle_spectrum_closed_form,
    effective_multiuser,
    effective_nonresonant,
    effective_resonant,
    effective_resonant_multiuser,
    eigendecompose,
    peak_transfer,
    sw_condition_residual,
    sw_generator,
    transfer_time_estimate,
)
from spinnet.dynamics import trajectory

LAM5 = 2 * math.cos(5 * math.pi / 31)


def fig1_spec(coupling_s=0.01, coupling_d=0.01):
    return SystemSpec(
        chain(30),
        (Terminal("s", 2, coupling_s, LAM5), Terminal("d", 13, coupling_d, LAM5)),
    )


class TestResonant:
    def test_fig1_bond_values(self):
        h = effective_resonant(fig1_spec(), LAM5)
        gs = math.sqrt(2 / 31) * math.sin(10 * math.pi / 31)
        gd = math.sqrt(2 / 31) * math.sin(65 * math.pi / 31)
        assert h.matrix[0, 1] == pytest.approx(0.01 * gs, abs=1e-12)
        assert abs(h.matrix[1, 2]) == pytest.approx(0.01 * abs(gd), abs=1e-12)
        assert np.allclose(np.diag(h.matrix), LAM5, atol=1e-12)
        assert h.matrix[0, 2] == 0.0
        assert h.order_in_epsilon == 1 and h.regime == "resonant"
        assert h.basis_labels[0] == "s" and h.basis_labels[2] == "d"

    def test_degenerate_mode_rejected(self):
        lam = 2 * math.cos(2 * math.pi / 21)
        spec = SystemSpec(
            cycle(21), (Terminal("s", 3, 0.01, lam), Terminal("d", 18, 0.01, lam))
        )
        with pytest.raises(DegenerateModeError):
            effective_resonant(spec, lam)

    def test_field_mismatch_rejected(self):
        spec = SystemSpec(
            chain(30), (Terminal("s", 2, 0.01, LAM5), Terminal("d", 13, 0.01, 0.0))
        )
        with pytest.raises(NotResonantError):
            effective_resonant(spec, LAM5)

    def test_zero_amplitude_bond_is_valid(self):
        # chain(5): the eigenvector of 2cos(2pi/6) = 1 vanishes at node 3
        spec = SystemSpec(
            chain(5), (Terminal("s", 1, 0.01, 1.0), Terminal("d", 3, 0.01, 1.0))
        )
        h = effective_resonant(spec, 1.0)
        assert abs(h.matrix[0, 1]) > 1e-3 * 0.01
        assert abs(h.matrix[1, 2]) < 1e-12

    def test_mirror_symmetry_gives_equal_bonds(self):
        lam1 = 2 * math.cos(math.pi / 5)
        spec = SystemSpec(
            chain(4), (Terminal("s", 1, 0.01, lam1), Terminal("d", 4, 0.01, lam1))
        )
        h = effective_resonant(spec, lam1)
        assert abs(h.matrix[0, 1]) == pytest.approx(abs(h.matrix[1, 2]), abs=1e-15)

    def test_strong_coupling_warns(self):
        with pytest.warns(WeakCouplingWarning):
            effective_resonant(fig1_spec(coupling_d=0.05), LAM5)


class TestSWGenerator:
    def test_single_node_closed_form(self):
        # two-level system: H0 = diag(w, 0), V coupling b; the commutator
        # condition solved by hand gives s = i b / (0 - w) up to the factored
        # coupling, i.e. coefficient i / (0 - w).
        w = 3.0
        spec = SystemSpec(chain(1), (Terminal("s", 1, 0.1, w),))
        gen = sw_generator(spec)
        assert gen.coefficients[0, 0] == pytest.approx(1j / (0.0 - w), abs=1e-15)
        assert sw_condition_residual(spec, gen) < 1e-12

    def test_far_field_magnitude_bound(self):
        spec = SystemSpec(chain(5), (Terminal("s", 2, 0.1, 100.0),))
        gen = sw_generator(spec)
        # |lam| <= 2 so every denominator is at least 98
        assert np.max(np.abs(gen.coefficients)) < 1.0 / 98.0

    def test_fig2_fields_pass_with_proximity_warning(self):
        spec = SystemSpec(
            cycle(21),
            (Terminal("s", 3, 0.1, -0.9), Terminal("d", 18, 0.1, -0.9)),
        )
        gen = sw_generator(spec)
        assert sw_condition_residual(spec, gen) < 1e-12
        with pytest.warns(WeakCouplingWarning):
            effective_nonresonant(spec)

    def test_resonant_collision_names_mode(self):
        spec = SystemSpec(chain(3), (Terminal("s", 1, 0.1, 0.0),))
        with pytest.raises(ResonantCollisionError, match="mode"):
            sw_generator(spec)

    def test_keystone_on_random_systems(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            net = random_connected_network(rng)
            decomp = eigendecompose(net.adjacency_matrix())
            spec = SystemSpec(
                net,
                (
                    detuned_terminal(rng, "s", int(rng.integers(1, net.node_count + 1)), decomp.eigenvalues),
                    detuned_terminal(rng, "d", int(rng.integers(1, net.node_count + 1)), decomp.eigenvalues),
                ),
            )
            gen = sw_generator(spec, decomposition=decomp)
            assert sw_condition_residual(spec, gen, decomposition=decomp) < 1e-12


class TestNonResonant:
    def test_single_node_exact_model(self):
        # Exactly solvable: both terminals on one network node at field w.
        # Dressed levels give diagonal w + b^2/w and coupling b^2/w.
        w, b = 3.0, 0.01
        spec = SystemSpec(chain(1), (Terminal("s", 1, b, w), Terminal("d", 1, b, w)))
        h = effective_nonresonant(spec)
        assert h.matrix[0, 0].real == pytest.approx(w + b**2 / w, abs=1e-14)
        assert h.matrix[0, 1].real == pytest.approx(b**2 / w, abs=1e-14)
        # the predicted Rabi half period matches exact dynamics to O(b^2)
        t_est = transfer_time_estimate(h)
        t_peak, p_peak = peak_transfer(spec, "s", "d", 1.5 * t_est)
        assert p_peak > 0.9999
        assert t_peak == pytest.approx(t_est, rel=0.01)

    def test_symmetric_chain_equal_diagonals(self):
        spec = SystemSpec(chain(4), (Terminal("s", 1, 0.01), Terminal("d", 4, 0.01)))
        h = effective_nonresonant(spec)
        assert h.matrix[0, 0] == pytest.approx(h.matrix[1, 1], abs=1e-15)
        assert abs(h.matrix[0, 1]) > 0
        assert h.order_in_epsilon == 2 and h.regime == "nonresonant"

    def test_odd_chain_zero_field_rejected(self):
        spec = SystemSpec(chain(5), (Terminal("s", 1, 0.01), Terminal("d", 5, 0.01)))
        with pytest.raises(ResonantCollisionError):
            effective_nonresonant(spec)

    def test_fig2_pair_magnitude_against_closed_form(self):
        spec = SystemSpec(
            cycle(21), (Terminal("s", 3, 0.1, -0.9), Terminal("d", 18, 0.1, -0.9))
        )
        with pytest.warns(WeakCouplingWarning):
            h = effective_nonresonant(spec)
        closed = cycle_spectrum_closed_form(21)
        g_s = closed.eigenvectors[2, :]
        g_d = closed.eigenvectors[17, :]
        total = np.sum(g_s * g_d / (closed.eigenvalues + 0.9))
        expected = 0.1**2 * abs(total)
        assert abs(h.matrix[0, 1]) == pytest.approx(expected, rel=1e-10)
        assert h.matrix[0, 0] == pytest.approx(h.matrix[1, 1], abs=1e-12)


class TestMultiuser:
    def test_two_users_equal_pair_model(self):
        spec = SystemSpec(
            cycle(21), (Terminal("s", 3, 0.1, -0.9), Terminal("d", 18, 0.1, -0.9))
        )
        with pytest.warns(WeakCouplingWarning):
            pair = effective_nonresonant(spec)
            multi = effective_multiuser(spec)
        assert np.max(np.abs(pair.matrix - multi.matrix)) < 1e-14

    def test_fig3_equal_diagonals(self):
        spec = SystemSpec(
            cycle(21),
            (
                Terminal("s1", 3, 0.1, -0.9),
                Terminal("s2", 12, 0.1, -0.9),
                Terminal("s3", 15, 0.1, -0.9),
            ),
        )
        with pytest.warns(WeakCouplingWarning):
            h = effective_multiuser(spec)
        diag = np.diag(h.matrix)
        assert np.max(np.abs(diag - diag[0])) < 1e-12

    def test_real_couplings_give_real_symmetric_matrix(self):
        spec = SystemSpec(
            chain(8),
            (
                Terminal("a", 1, 0.01, 3.0),
                Terminal("b", 4, 0.02, 3.0),
                Terminal("c", 8, 0.015, 3.0),
            ),
        )
        h = effective_multiuser(spec)
        assert np.max(np.abs(h.matrix.imag)) < 1e-15
        assert np.array_equal(h.matrix, h.matrix.T.conj())


class TestResonantStar:
    def test_single_user_two_level_model(self):
        spec = SystemSpec(cycle(21), (Terminal("s1", 3, 0.05, 2.0),))
        h = effective_resonant_multiuser(spec, 2.0)
        assert h.matrix.shape == (2, 2)
        assert np.allclose(np.diag(h.matrix), 2.0, atol=1e-9)
        assert abs(h.matrix[0, 1]) == pytest.approx(0.05 / math.sqrt(21), abs=1e-12)

    def test_four_users_uniform_couplings(self):
        terminals = tuple(
            Terminal(f"s{i+1}", node, 0.05, 2.0) for i, node in enumerate((3, 8, 13, 18))
        )
        spec = SystemSpec(cycle(21), terminals)
        h = effective_resonant_multiuser(spec, 2.0)
        assert h.matrix.shape == (5, 5)
        bonds = [abs(h.matrix[k, 4]) for k in range(4)]
        assert np.allclose(bonds, 0.05 / math.sqrt(21), atol=1e-12)
        assert np.max(np.abs(h.matrix[:4, :4] - 2.0 * np.eye(4))) < 1e-12

    def test_unreachable_user_keeps_basis(self):
        spec = SystemSpec(
            chain(5), (Terminal("s1", 1, 0.01, 1.0), Terminal("s2", 3, 0.01, 1.0))
        )
        h = effective_resonant_multiuser(spec, 1.0)
        assert abs(h.matrix[1, 2]) < 1e-12
        assert len(h.basis_labels) == 3


class TestTransferTimeEstimate:
    def test_fig1_scale(self):
        b = 2.1563e-3
        h = effective_resonant(fig1_spec(coupling_d=0.01 * math.sin(10 * math.pi / 31) / math.sin(3 * math.pi / 31)), LAM5)
        t = transfer_time_estimate(h)
        assert t == pytest.approx(math.pi / (math.sqrt(2) * b), rel=1e-3)

    def test_two_level_rabi_half_period(self):
        from spinnet.effective import EffectiveHamiltonian

        b = 0.02
        h = EffectiveHamiltonian(
            np.array([[0.5, b], [b, 0.5]], dtype=complex), ("s", "d"), "nonresonant", 2
        )
        assert transfer_time_estimate(h) == pytest.approx(math.pi / (2 * b))

    def test_doubling_bond_halves_time(self):
        from spinnet.effective import EffectiveHamiltonian

        def t_for(b):
            h = EffectiveHamiltonian(
                np.array([[0.0, b], [b, 0.0]], dtype=complex), ("s", "d"), "nonresonant", 2
            )
            return transfer_time_estimate(h)

        assert t_for(0.02) == pytest.approx(0.5 * t_for(0.01))

    def test_uncalibrated_bonds_rejected(self):
        h = effective_resonant(fig1_spec(), LAM5)
        with pytest.raises(NotCalibratedError):
            transfer_time_estimate(h)


class TestEffectiveVsExact:
    @staticmethod
    def pair_population_error(spec, h, t_max, n_points=1001):
        exact = trajectory(spec, spec.terminals[0].label, t_max, n_points)
        model = trajectory(h.matrix, np.array([1.0, 0.0], dtype=complex), t_max, n_points)
        return max(
            float(np.max(np.abs(exact.population("s") - model.populations[:, 0]))),
            float(np.max(np.abs(exact.population("d") - model.populations[:, 1]))),
        )

    def test_error_bound_and_scaling(self):
        # frozen constant: discrepancy <= C * max coupling, C = 5
        errors = []
        for coupling in (0.02, 0.01, 0.005):
            spec = SystemSpec(
                chain(4), (Terminal("s", 1, coupling), Terminal("d", 4, coupling))
            )
            h = effective_nonresonant(spec)
            err = self.pair_population_error(spec, h, 1.5 * transfer_time_estimate(h))
            errors.append(err)
            assert err <= 5.0 * coupling
        assert errors[0] / errors[1] >= 1.8
        assert errors[1] / errors[2] >= 1.8

    def test_asymmetric_spec_error_bound(self):
        spec = SystemSpec(
            chain(6),
            (Terminal("s", 1, 0.01, 2.6), Terminal("d", 3, 0.012, 2.6)),
        )
        from spinnet import calibrate_nonresonant

        cal = calibrate_nonresonant(spec, "s")
        h = effective_nonresonant(cal.adjusted_spec)
        err = self.pair_population_error(
            cal.adjusted_spec, h, 1.5 * transfer_time_estimate(h)
        )
        assert err <= 5.0 * 0.012

    def test_resonant_populations_scale_with_coupling(self):
        import warnings

        from spinnet import calibrate_resonant

        errors = []
        for coupling in (0.01, 0.005):
            spec = fig1_spec(coupling_s=coupling, coupling_d=coupling)
            cal = calibrate_resonant(spec, LAM5)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", WeakCouplingWarning)
                h = effective_resonant(cal.adjusted_spec, LAM5)
            t_period = transfer_time_estimate(h)
            exact = trajectory(cal.adjusted_spec, "s", t_period, 1001)
            model = trajectory(h.matrix, np.array([1.0, 0.0, 0.0], dtype=complex), t_period, 1001)
            err = max(
                float(np.max(np.abs(exact.population("s") - model.populations[:, 0]))),
                float(np.max(np.abs(exact.population("d") - model.populations[:, 2]))),
            )
            errors.append(err)
        assert errors[0] / errors[1] >= 1.8
