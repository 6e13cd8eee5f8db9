"""
Tests for fiberheom.heom module.

Tests the hierarchy layout, the generator, RK4 stepping, pulse handling in
the integrator and full trajectories against the pure-dephasing oracle.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from fiberheom.analysis import dephasing_oracle, distance_to_threshold, oracle_for_model
from fiberheom.control import ScheduleError, build_sequence, control_operator
from fiberheom.heom import (
    NO_NEIGHBOR,
    HEOMGenerator,
    HierarchyState,
    IntegratorConfig,
    NumericalBlowupError,
    convergence_check,
    enumerate_hierarchy,
    evolve,
    heom_rhs,
    integrate,
    sample_times,
    step_rk4,
)
from fiberheom.linalg import IDENTITY_2, SIGMA_Z, anticommutator, commutator, kron
from fiberheom.model import (
    BathSpec,
    bell_state,
    build_baths,
    build_system_hamiltonian,
    derive_params,
)

ZI = kron(SIGMA_Z, IDENTITY_2)


def random_density_matrix(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def silent_generator() -> HEOMGenerator:
    """H = 0 and a single uncoupled mode at N_c = 0: only control acts."""
    bath = BathSpec(coupling=ZI, exponents=((0.0, 1.0),))
    return HEOMGenerator(enumerate_hierarchy(1, 0), np.zeros((4, 4)), [bath])


class TestHierarchyLayout:
    """Test multi-index enumeration and neighbor tables."""

    def test_graded_descending_order(self):
        """Test level-by-level order, descending lexicographic within a level."""
        layout = enumerate_hierarchy(2, 2)
        assert layout.indices == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

    @pytest.mark.parametrize(
        "n_modes,max_depth,expected",
        [(1, 0, 1), (1, 5, 6), (2, 10, 66), (3, 10, 286), (2, 20, 231)],
    )
    def test_count(self, n_modes, max_depth, expected):
        """Test the count C(N_c + K, K)."""
        assert len(enumerate_hierarchy(n_modes, max_depth)) == expected
        assert expected == math.comb(max_depth + n_modes, n_modes)

    def test_neighbors(self):
        """Test raise and lower neighbor positions."""
        layout = enumerate_hierarchy(2, 2)

        assert layout.neighbor_up[0, 0] == layout.position((1, 0))
        assert layout.neighbor_up[0, 1] == layout.position((0, 1))
        assert layout.neighbor_down[layout.position((1, 1)), 1] == layout.position((1, 0))
        assert layout.neighbor_down[0, 0] == NO_NEIGHBOR
        assert layout.neighbor_up[layout.position((2, 0)), 0] == NO_NEIGHBOR

    def test_position_missing(self):
        """Test that a truncated index raises KeyError."""
        with pytest.raises(KeyError):
            enumerate_hierarchy(2, 2).position((3, 0))

    def test_occupations(self):
        """Test the occupation array shape and content."""
        occupations = enumerate_hierarchy(2, 2).occupations
        assert occupations.shape == (6, 2)
        np.testing.assert_array_equal(occupations.sum(axis=1), [0, 1, 1, 2, 2, 2])

    def test_invalid_arguments(self):
        """Test that n_modes < 1 or max_depth < 0 is rejected."""
        with pytest.raises(ValueError):
            enumerate_hierarchy(0, 3)
        with pytest.raises(ValueError):
            enumerate_hierarchy(2, -1)


class TestHierarchyState:
    """Test HierarchyState construction."""

    def test_initial(self):
        """Test that only the physical ADM is populated."""
        layout = enumerate_hierarchy(2, 3)
        state = HierarchyState.initial(layout, bell_state("phi_plus"))

        np.testing.assert_array_equal(state.rdm, bell_state("phi_plus"))
        assert not np.any(state.adms[1:])
        assert state.t == 0.0

    def test_shape_mismatch(self):
        """Test that ADM arrays must match the layout."""
        with pytest.raises(ValueError, match="does not match"):
            HierarchyState(enumerate_hierarchy(2, 2), np.zeros((5, 4, 4), dtype=complex))


class TestIntegratorConfig:
    """Test integrator settings and sampling."""

    def test_defaults(self):
        """Test dt = 1e-3 and N_c = 10."""
        icfg = IntegratorConfig()
        assert icfg.dt == 1e-3
        assert icfg.max_depth == 10
        assert icfg.sample_every is None

    def test_substep_above_dt_rejected(self):
        """Test that pulse_substep > dt is rejected."""
        with pytest.raises(ValueError, match="pulse_substep"):
            IntegratorConfig(dt=1e-3, pulse_substep=2e-3)

    def test_resolved_values(self):
        """Test the derived sample stride and finite-pulse substep."""
        icfg = IntegratorConfig()
        assert icfg.resolved_sample_every(25.0) == 100
        assert icfg.resolved_pulse_substep(1e-3) == pytest.approx(1e-5)
        assert IntegratorConfig(sample_every=7).resolved_sample_every(25.0) == 7

    def test_sample_times(self):
        """Test 251 samples including t = 0 and t = T for a 25 us run."""
        times = sample_times(IntegratorConfig(), 25.0)

        assert times.size == 251
        assert times[0] == 0.0
        assert times[-1] == 25.0
        assert np.all(np.diff(times) > 0)


class TestGenerator:
    """Test the hierarchy right-hand side."""

    def test_depth_zero_is_von_neumann(self, anchor_model):
        """Test that N_c = 0 reduces to -i[H, rho]."""
        h = build_system_hamiltonian(anchor_model)
        layout = enumerate_hierarchy(2, 0)
        rho = random_density_matrix(0)

        rhs = heom_rhs(layout, h, build_baths(anchor_model), HierarchyState.initial(layout, rho))

        np.testing.assert_allclose(rhs[0], -1j * commutator(h, rho), atol=1e-12)

    def test_lowering_term_complex_amplitude(self):
        """Test -i n (Re c [Q, rho] + i Im c {Q, rho}) feeding the first tier."""
        c, nu = complex(0.3, -0.2), complex(1.5, 0.4)
        bath = BathSpec(coupling=ZI, exponents=((c, nu),))
        layout = enumerate_hierarchy(1, 1)
        rho = random_density_matrix(1)

        rhs = heom_rhs(layout, np.zeros((4, 4)), [bath], HierarchyState.initial(layout, rho))

        expected = -1j * (c.real * commutator(ZI, rho) + 1j * c.imag * anticommutator(ZI, rho))
        np.testing.assert_allclose(rhs[1], expected, atol=1e-14)
        np.testing.assert_allclose(rhs[0], np.zeros((4, 4)), atol=1e-14)

    def test_raising_and_damping_terms(self):
        """Test -n nu rho_n and -i[Q, rho_{n+1}] contributions."""
        nu = 2.5
        bath = BathSpec(coupling=ZI, exponents=((0.0, nu),))
        layout = enumerate_hierarchy(1, 1)
        adms = np.zeros((2, 4, 4), dtype=complex)
        adms[1] = random_density_matrix(2)

        rhs = heom_rhs(layout, np.zeros((4, 4)), [bath], HierarchyState(layout, adms))

        np.testing.assert_allclose(rhs[0], -1j * commutator(ZI, adms[1]), atol=1e-14)
        np.testing.assert_allclose(rhs[1], -nu * adms[1], atol=1e-14)

    def test_trace_preserved(self, anchor_model):
        """Test that the physical ADM derivative is traceless."""
        baths = build_baths(anchor_model)
        layout = enumerate_hierarchy(2, 3)
        rng = np.random.default_rng(3)
        adms = rng.standard_normal((len(layout), 4, 4)) + 1j * rng.standard_normal(
            (len(layout), 4, 4)
        )
        state = HierarchyState(layout, adms)

        rhs = heom_rhs(layout, build_system_hamiltonian(anchor_model), baths, state)

        assert abs(np.trace(rhs[0])) <= 1e-12

    def test_mode_count_mismatch(self, anchor_model):
        """Test that baths must supply one exponent per layout mode."""
        with pytest.raises(ValueError, match="modes"):
            HEOMGenerator(
                enumerate_hierarchy(3, 2),
                build_system_hamiltonian(anchor_model),
                build_baths(anchor_model),
            )

    def test_non_hermitian_hamiltonian(self, anchor_model):
        """Test that a non-Hermitian Hamiltonian is rejected."""
        h = np.zeros((4, 4), dtype=complex)
        h[0, 1] = 1.0
        with pytest.raises(ValueError, match="Hermitian"):
            HEOMGenerator(enumerate_hierarchy(2, 1), h, build_baths(anchor_model))

    def test_state_layout_mismatch(self, anchor_model):
        """Test that heom_rhs rejects a state from another layout."""
        state = HierarchyState.initial(enumerate_hierarchy(2, 1), bell_state("phi_plus"))
        with pytest.raises(ValueError, match="does not match"):
            heom_rhs(
                enumerate_hierarchy(2, 2),
                build_system_hamiltonian(anchor_model),
                build_baths(anchor_model),
                state,
            )

    def test_control_matrix_cached(self):
        """Test that generator matrices are cached per amplitude."""
        generator = silent_generator()
        assert generator.matrix(0.5) is generator.matrix(0.5)
        assert generator.matrix(0.0) is generator.static

    def test_control_term(self):
        """Test that the control adds amplitude * (-i [XX, rho])."""
        generator = silent_generator()
        rho = random_density_matrix(4)

        derivative = generator.apply(rho[np.newaxis], amplitude=2.0)[0]

        np.testing.assert_allclose(
            derivative, -2j * commutator(control_operator(), rho), atol=1e-14
        )


class TestStepping:
    """Test RK4 steps and integration."""

    def test_rk4_polynomial(self):
        """Test that one step of y' = -y gives the degree-4 Taylor polynomial."""
        layout = enumerate_hierarchy(1, 0)
        state = HierarchyState.initial(layout, np.eye(4) / 4)
        h = 0.1

        stepped = step_rk4(lambda _t, y: -y, state, h)

        factor = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
        np.testing.assert_allclose(stepped.rdm, factor * np.eye(4) / 4, rtol=1e-14)
        assert stepped.t == pytest.approx(h)

    def test_nonpositive_dt(self):
        """Test that dt <= 0 is rejected."""
        state = HierarchyState.initial(enumerate_hierarchy(1, 0), np.eye(4) / 4)
        with pytest.raises(ValueError, match="dt"):
            step_rk4(lambda _t, y: -y, state, 0.0)

    def test_blowup_detected(self):
        """Test that a NaN derivative raises NumericalBlowupError naming the time."""
        state = HierarchyState.initial(enumerate_hierarchy(1, 0), np.eye(4) / 4)
        with pytest.raises(NumericalBlowupError, match="t = "):
            step_rk4(lambda _t, y: np.full_like(y, np.nan), state, 1e-3)

    def test_integrate_matches_matrix_exponential(self, anchor_model):
        """Test fixed-step integration against expm of the generator."""
        baths = build_baths(anchor_model)
        layout = enumerate_hierarchy(2, 2)
        generator = HEOMGenerator(layout, build_system_hamiltonian(anchor_model), baths)
        start = HierarchyState.initial(layout, bell_state("phi_plus"))
        t_end = 0.5

        final = integrate(generator, start, t_end, IntegratorConfig())

        exact = expm(generator.static.toarray() * t_end) @ start.adms.reshape(-1)
        np.testing.assert_allclose(final.adms.reshape(-1), exact, atol=1e-6)
        assert final.t == t_end

    def test_on_sample_called(self, anchor_model):
        """Test that samples are reported at the requested times."""
        baths = build_baths(anchor_model)
        layout = enumerate_hierarchy(2, 1)
        generator = HEOMGenerator(layout, build_system_hamiltonian(anchor_model), baths)
        seen = []

        integrate(
            generator,
            HierarchyState.initial(layout, bell_state("phi_plus")),
            0.1,
            IntegratorConfig(),
            sample_times=[0.0, 0.05, 0.1],
            on_sample=lambda s: seen.append(s.t),
        )

        assert seen == pytest.approx([0.0, 0.05, 0.1])


class TestPulses:
    """Test pulses inside the integrator."""

    def test_finite_pulse_matches_ideal(self):
        """Test that a finite pi pulse equals XX conjugation to 1e-6."""
        generator = silent_generator()
        rho = random_density_matrix(5)
        seq = build_sequence("cpmg", 1, 1.0, mode="finite", width=1e-3)

        final = integrate(
            generator, HierarchyState.initial(generator.layout, rho), 1.0, IntegratorConfig(), seq
        )

        xx = control_operator()
        assert np.max(np.abs(final.rdm - xx @ rho @ xx)) <= 1e-6

    def test_ideal_pulse_exact(self):
        """Test that an ideal pulse in the integrator is exact XX conjugation."""
        generator = silent_generator()
        rho = random_density_matrix(6)
        seq = build_sequence("cpmg", 1, 1.0)

        final = integrate(
            generator, HierarchyState.initial(generator.layout, rho), 1.0, IntegratorConfig(), seq
        )

        xx = control_operator()
        assert np.max(np.abs(final.rdm - xx @ rho @ xx)) <= 1e-14

    def test_pulse_before_coinciding_sample(self):
        """Test that an ideal pulse at a sample time is visible in that sample."""
        generator = silent_generator()
        rho = np.zeros((4, 4), dtype=complex)
        rho[1, 1] = 1.0
        seq = build_sequence("cpmg", 1, 1.0)
        seen = []

        integrate(
            generator,
            HierarchyState.initial(generator.layout, rho),
            1.0,
            IntegratorConfig(),
            seq,
            sample_times=[0.5],
            on_sample=lambda s: seen.append(s.rdm[2, 2]),
        )

        assert seen == [1.0]

    @pytest.mark.parametrize("n_pulses", [1, 2, 5])
    def test_quasistatic_echo(self, model_factory, n_pulses):
        """Test that CPMG refocuses nearly static noise (gamma ~ 1e-3)."""
        cfg = model_factory(0.01, 200.0)
        assert derive_params(cfg.fiber).gamma == pytest.approx(1e-3, rel=1e-3)
        total_time = 2.5

        free = evolve(cfg, IntegratorConfig(), total_time)
        echo = evolve(
            cfg, IntegratorConfig(), total_time, build_sequence("cpmg", n_pulses, total_time)
        )

        assert free.final_concurrence < 0.85
        assert echo.final_concurrence >= 0.99
        assert echo.pulses_applied[-1] == n_pulses


class TestEvolve:
    """Test full trajectories."""

    def test_rejects_nonpositive_time(self, anchor_model):
        """Test that T <= 0 is rejected."""
        with pytest.raises(ValueError, match="total_time"):
            evolve(anchor_model, IntegratorConfig(max_depth=1), 0.0)

    def test_rejects_long_schedule(self, anchor_model):
        """Test that a schedule longer than the run is rejected."""
        seq = build_sequence("cpmg", 4, 2.0)
        with pytest.raises(ScheduleError):
            evolve(anchor_model, IntegratorConfig(max_depth=1), 1.0, seq)

    def test_trajectory_fields(self, anchor_model):
        """Test sample times, distances and stored RDMs."""
        icfg = IntegratorConfig(max_depth=3, sample_every=100)
        traj = evolve(anchor_model, icfg, 1.0)
        v_f = derive_params(anchor_model.fiber).v_f

        assert len(traj) == 11
        assert traj.times[0] == 0.0
        assert traj.times[-1] == 1.0
        assert traj.concurrences[0] == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(traj.distances, v_f * traj.times)
        assert traj.rdms.shape == (11, 4, 4)
        assert traj.pulses_applied is None

    def test_noiseless_fiber_keeps_entanglement(self, model_factory):
        """Test that eta = 0 leaves the concurrence at 1."""
        traj = evolve(model_factory(0.0, 0.1), IntegratorConfig(max_depth=2), 1.0)
        assert np.max(np.abs(traj.concurrences - 1.0)) <= 1e-6

    def test_decoherence_free_subspace(self, model_factory):
        """Test that Psi+ under a collective bath keeps concurrence 1."""
        cfg = model_factory(0.1, 0.1, topology="collective", initial_state="psi_plus")
        traj = evolve(cfg, IntegratorConfig(max_depth=4), 2.0)
        assert np.max(np.abs(traj.concurrences - 1.0)) <= 1e-10

    def test_collective_phi_matches_oracle(self, model_factory):
        """Test the collective Phi+ decay (K = 16) on a short run."""
        cfg = model_factory(0.1, 0.1, topology="collective")
        traj = evolve(cfg, IntegratorConfig(max_depth=10), 2.0)
        assert np.max(np.abs(traj.concurrences - oracle_for_model(cfg, traj.times))) <= 1e-4

    def test_step_halving(self, anchor_model):
        """Test that halving dt changes the trajectory by less than 1e-6."""
        coarse = evolve(anchor_model, IntegratorConfig(max_depth=4, dt=1e-3), 2.0)
        fine = evolve(anchor_model, IntegratorConfig(max_depth=4, dt=5e-4), 2.0)

        np.testing.assert_allclose(coarse.times, fine.times)
        assert np.max(np.abs(coarse.concurrences - fine.concurrences)) <= 1e-6

    def test_convergence_report(self, anchor_model):
        """Test the N_c vs N_c + 2 report fields."""
        report = convergence_check(anchor_model, IntegratorConfig(max_depth=2), 1.0)

        assert report.max_depth == 2
        assert report.reference_depth == 4
        assert report.max_difference >= 0.0
        assert 0.0 <= report.final_concurrence <= 1.0


ORACLE_GRID = [
    (0.01, 0.01, 10),
    (0.01, 0.1, 10),
    (0.01, 1.0, 10),
    (0.1, 0.01, 10),
    (0.1, 0.1, 10),
    (0.1, 1.0, 20),
]


@pytest.mark.slow
class TestOracleAgreement:
    """Test full 25 us trajectories against the pure-dephasing oracle."""

    @pytest.mark.parametrize("eta,lc_km,max_depth", ORACLE_GRID)
    def test_oracle_and_conservation(self, model_factory, eta, lc_km, max_depth):
        """Test max |C - C_oracle| <= 1e-3 and physicality at every sample."""
        cfg = model_factory(eta, lc_km)
        traj = evolve(cfg, IntegratorConfig(max_depth=max_depth), 25.0)

        assert np.max(np.abs(traj.concurrences - oracle_for_model(cfg, traj.times))) <= 1e-3
        for rho in traj.rdms:
            assert abs(np.trace(rho) - 1.0) <= 1e-8
            assert np.max(np.abs(rho - rho.conj().T)) <= 1e-8
            assert np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) >= -1e-6
        assert np.all((traj.concurrences >= 0.0) & (traj.concurrences <= 1.0))

    @pytest.mark.parametrize("eta,lc_km", [(0.01, 0.01), (0.01, 0.1), (0.1, 0.01), (0.1, 0.1)])
    def test_hierarchy_converged(self, model_factory, eta, lc_km):
        """Test that N_c = 10 and N_c = 12 agree to 1e-6."""
        report = convergence_check(model_factory(eta, lc_km), IntegratorConfig(), 25.0)
        assert report.max_difference <= 1e-6


@pytest.mark.slow
class TestDecouplingAnchors:
    """Test decay and decoupling at eta = 0.1, L_c = 100 m over 5 km."""

    def test_no_control_decay(self, anchor_model):
        """Test C(5 km) <= 0.05 and distance to 0.1 within [1, 4] km."""
        total_time = 5.0 / derive_params(anchor_model.fiber).v_f
        traj = evolve(anchor_model, IntegratorConfig(), total_time)

        assert traj.final_concurrence <= 0.05
        assert 1.0 <= distance_to_threshold(traj, 0.1) <= 4.0

    def test_cpmg_and_udd(self, anchor_model):
        """Test CPMG keeps C >= 0.8 and UDD crosses below CPMG during the run."""
        v_f = derive_params(anchor_model.fiber).v_f
        total_time = 5.0 / v_f
        cpmg = evolve(
            anchor_model, IntegratorConfig(), total_time, build_sequence("cpmg", 100, total_time)
        )
        udd = evolve(
            anchor_model, IntegratorConfig(), total_time, build_sequence("udd", 100, total_time)
        )

        assert cpmg.final_concurrence >= 0.8
        difference = udd.concurrences - cpmg.concurrences
        early = (cpmg.distances > 0) & (cpmg.distances < 1.0)
        assert np.any(difference[early] > 0)
        assert difference[-1] < 0
        assert cpmg.pulses_applied[-1] == 100
        assert udd.pulses_applied[-1] == 100

    def test_dephasing_oracle_consistency(self, anchor_model):
        """Test that the oracle used above agrees with the scalar formula."""
        derived = derive_params(anchor_model.fiber)
        t = np.array([1.0, 5.0])
        np.testing.assert_allclose(
            oracle_for_model(anchor_model, t), dephasing_oracle(derived.eta, derived.gamma, t)
        )
