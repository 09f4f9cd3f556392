"""
Tests for the Maxwell-Bloch memory solver.
"""
import math
import unittest

import numpy as np

from core import (MHZ, RB87_D1, SIGNAL_KIND, AtomEnsemble, ComplexEnvelope, ConfigError,
                  ExcitedLevel, Grid1D, SingularEliminationError, UndefinedResultError,
                  ValidationError, dft, gaussian_profile, uniform_profile)
from mb_solver import (CouplingDrive, GradientSchedule, MemoryState, StepRabi,
                       absorption_factor, adiabatic_optical_coherences, conservation_residual,
                       find_pulses, gem_cycle, make_config, phase_matching_scan,
                       power_broadening, pulse_train, run_memory, step_rotation, time_grid)
from reference_oracle import overlap_integral, rk4_memory, sinc_amplitude


def uniform_ensemble(length, nz, od):
    grid = Grid1D.centered(length, nz)
    return AtomEnsemble.from_od(grid, uniform_profile(grid), od)


def readout_run(ens, coupling, detuning, dt, steps, rho0=1e-3, **kwargs):
    grid = Grid1D(0.0, dt, steps)
    silent = ComplexEnvelope(grid, np.zeros(steps), SIGNAL_KIND)
    cfg = make_config(ens, grid, detuning, **kwargs)
    state = MemoryState.from_values(ens.grid, np.full(ens.grid.count, rho0, dtype=complex))
    return cfg, silent, state


class TestBuildingBlocks(unittest.TestCase):
    """Test cases for the local building blocks."""

    def test_rotation_is_unitary(self):
        """Test that the exchange rotation preserves |u_at|^2 + |u_ph|^2 on a million samples."""
        rng = np.random.default_rng(3)
        size = 10 ** 6
        u_at = rng.normal(size=size) + 1j * rng.normal(size=size)
        u_ph = rng.normal(size=size) + 1j * rng.normal(size=size)
        a, b = step_rotation(u_at, u_ph, rng.uniform(0, 0.1, size))
        np.testing.assert_allclose(np.abs(a) ** 2 + np.abs(b) ** 2,
                                   np.abs(u_at) ** 2 + np.abs(u_ph) ** 2, rtol=1e-12)

    def test_zero_detuning_elimination(self):
        """Test that elimination at zero detuning is refused."""
        with self.assertRaises(SingularEliminationError):
            adiabatic_optical_coherences(0.0, 1.0, 1.0, 0.0, RB87_D1.gamma)

    def test_gradient_schedule(self):
        """Test segment lookup and ordering."""
        schedule = GradientSchedule(((0.0, -2.0), (5.0, 2.0)))
        np.testing.assert_allclose(schedule.beta_at(np.array([-1.0, 0.0, 4.9, 5.0])),
                                   [0.0, -2.0, -2.0, 2.0])
        with self.assertRaises(ValidationError):
            GradientSchedule(((5.0, 1.0), (1.0, 1.0)))

    def test_step_rabi(self):
        """Test a piecewise-constant coupling."""
        drive = StepRabi([(0.0, 1.0, 3.0)])
        np.testing.assert_allclose(drive(np.array([-0.5, 0.5, 1.0])), [0.0, 3.0, 0.0])

    def test_find_pulses(self):
        """Test peak detection on two separated pulses."""
        t = np.linspace(0.0, 10.0, 1001)
        trace = np.exp(-(t - 3.0) ** 2) + 0.5 * np.exp(-(t - 7.0) ** 2)
        times, heights = find_pulses(trace, t)
        np.testing.assert_allclose(times, [3.0, 7.0])
        self.assertAlmostEqual(heights[1] / heights[0], 0.25, places=6)


class TestConfiguration(unittest.TestCase):
    """Test cases for the configuration checks."""

    def setUp(self):
        """Set up test fixtures."""
        self.ens = uniform_ensemble(1e-2, 32, 1.0)

    def test_detuning_below_ten_gamma(self):
        """Test that a near-resonant detuning is refused."""
        cfg, silent, state = readout_run(self.ens, 1.0 * MHZ, 30.0 * MHZ, 1e-8, 10)
        with self.assertRaises(ConfigError):
            run_memory(self.ens, RB87_D1, CouplingDrive.constant(1.0 * MHZ), silent, cfg, state)

    def test_cell_angle_bound(self):
        """Test that an oversized cell rotation is refused."""
        ens = uniform_ensemble(1e-2, 4, 5000.0)
        cfg, silent, state = readout_run(ens, 200.0 * MHZ, 100.0 * MHZ, 1e-6, 10)
        with self.assertRaises(ConfigError):
            run_memory(ens, RB87_D1, CouplingDrive.constant(200.0 * MHZ), silent, cfg, state)

    def test_time_step_must_match_signal(self):
        """Test that dt must equal the input grid step."""
        grid = Grid1D(0.0, 1e-8, 10)
        silent = ComplexEnvelope(grid, np.zeros(10), SIGNAL_KIND)
        cfg = make_config(self.ens, Grid1D(0.0, 2e-8, 10), 100.0 * MHZ)
        with self.assertRaises(ConfigError):
            run_memory(self.ens, RB87_D1, CouplingDrive.constant(MHZ), silent, cfg,
                       MemoryState.empty(self.ens.grid))

    def test_coherence_above_one(self):
        """Test that a state with |rho| > 1 is refused."""
        with self.assertRaises(ValidationError):
            MemoryState.from_values(self.ens.grid, np.full(32, 1.5))


class TestDynamics(unittest.TestCase):
    """Test cases for the integrated dynamics."""

    def test_power_broadened_decay(self):
        """Test that a stored coherence decays as exp(-2 gamma t) at negligible OD."""
        ens = uniform_ensemble(1e-2, 32, 1e-3)
        coupling = 10.0 * MHZ
        detuning = 100.0 * MHZ
        cfg, silent, state = readout_run(ens, coupling, detuning, 1e-8, 1000)
        traj = run_memory(ens, RB87_D1, CouplingDrive.constant(coupling), silent, cfg, state)
        rate = float(power_broadening(cfg.excited_levels(), coupling, RB87_D1.gamma))
        expected = math.exp(-2.0 * rate * 1000 * 1e-8)
        ratio = traj.atom_excitation[-1] / traj.initial_atoms
        self.assertAlmostEqual(ratio / expected, 1.0, delta=0.01)

    def test_absorption_law(self):
        """Test the transmitted amplitude without coupling against the closed form."""
        gamma = RB87_D1.gamma
        grid = time_grid(1e-6, 1e-8)
        signal = pulse_train(grid, [0.5e-6], 0.1e-6, [1.0], 0.005 * MHZ)
        for od in (1.0, 5.0, 20.0):
            for ratio in (10.0, 50.0):
                ens = uniform_ensemble(1e-2, 32, od)
                cfg = make_config(ens, grid, ratio * gamma)
                traj = run_memory(ens, RB87_D1, CouplingDrive.constant(0.0), signal, cfg,
                                  MemoryState.empty(ens.grid))
                got = abs(traj.output_signal.values[50]) / abs(signal.values[50])
                expected = absorption_factor(od, ratio * gamma, gamma)
                self.assertAlmostEqual(got / expected, 1.0, delta=0.01)

    def test_lossless_conservation(self):
        """Test that atoms plus photons are conserved without spontaneous loss."""
        ens = uniform_ensemble(1e-2, 64, 20.0)
        grid = time_grid(4e-6, 1e-8)
        signal = pulse_train(grid, [1.5e-6], 0.3e-6, [1.0], 0.005 * MHZ)
        cfg = make_config(ens, grid, 100.0 * MHZ, include_spont_loss=False)
        traj = run_memory(ens, RB87_D1, CouplingDrive.constant(5.0 * MHZ), signal, cfg,
                          MemoryState.empty(ens.grid))
        self.assertLess(conservation_residual(traj), 1e-9)

    def test_full_cycle_conservation(self):
        """Test conservation over write, gradient flip and readout on two resolutions."""
        for nz, dt in ((64, 1e-8), (128, 5e-9)):
            ens = uniform_ensemble(1e-2, nz, 20.0)
            grid = time_grid(8e-6, dt)
            signal = pulse_train(grid, [2e-6], 0.3e-6, [1.0], 0.005 * MHZ)
            result = gem_cycle(ens, RB87_D1, 5.0 * MHZ, 100.0 * MHZ, 2.0 * MHZ / 1e-2, 4e-6,
                               signal, [2e-6], [1.0], include_spont_loss=False)
            self.assertGreater(result.efficiency, 0.0)
            self.assertLess(conservation_residual(result.trajectory), 1e-9)

    def test_coupling_wavevector_sets_kspace_peak(self):
        """Test that a coupling carrying exp(i W z) writes a spin wave peaked at K = W."""
        length = 1e-2
        ens = uniform_ensemble(length, 128, 1.0)
        grid = time_grid(4e-6, 1e-8)
        signal = pulse_train(grid, [1.5e-6], 0.3e-6, [1.0], 0.005 * MHZ)
        wavevector = 20 * 2 * math.pi / length
        drive = CouplingDrive.constant(5.0 * MHZ, wavevector=wavevector)
        traj = run_memory(ens, RB87_D1, drive, signal, make_config(ens, grid, 100.0 * MHZ),
                          MemoryState.empty(ens.grid))
        spectrum = dft(traj.final_state.coherence)
        peak = spectrum.grid.points()[int(np.argmax(np.abs(spectrum.values)))]
        self.assertAlmostEqual(peak, wavevector, delta=0.5 * spectrum.grid.step)

    def test_excited_levels_add_in_first_step(self):
        """Test that two excited levels write the sum of their single-level coherences."""
        ens = uniform_ensemble(1e-2, 4, 1e-3)
        grid = Grid1D(0.0, 1e-9, 4)
        signal = ComplexEnvelope(grid, np.full(4, 0.005 * MHZ), SIGNAL_KIND)
        drive = CouplingDrive.constant(MHZ)
        first = ExcitedLevel(100.0 * MHZ)
        second = ExcitedLevel(-150.0 * MHZ, 0.7)

        def first_row(levels):
            cfg = make_config(ens, grid, 100.0 * MHZ, levels=levels, snapshot_every=1)
            traj = run_memory(ens, RB87_D1, drive, signal, cfg, MemoryState.empty(ens.grid))
            return traj.snapshots[0]

        both = first_row((first, second))
        summed = first_row((first,)) + first_row((second,))
        self.assertLess(abs(both[0] - summed[0]), 1e-10 * abs(both[0]))
        self.assertLess(float(np.max(np.abs(both - summed) / np.abs(both))), 1e-4)

    def test_conservation_needs_lossless_run(self):
        """Test that the conservation diagnostic refuses a lossy run."""
        ens = uniform_ensemble(1e-2, 16, 1.0)
        cfg, silent, state = readout_run(ens, MHZ, 100.0 * MHZ, 1e-8, 20)
        traj = run_memory(ens, RB87_D1, CouplingDrive.constant(MHZ), silent, cfg, state)
        with self.assertRaises(UndefinedResultError):
            conservation_residual(traj)
        with self.assertRaises(UndefinedResultError):
            traj.efficiency()

    def test_matches_refined_reference(self):
        """Test readout energy and final coherence against the refined RK4 reference."""
        ens = uniform_ensemble(1e-2, 16, 2.0)
        coupling = 10.0 * MHZ
        cfg, silent, state = readout_run(ens, coupling, 100.0 * MHZ, 2e-8, 100)
        drive = CouplingDrive.constant(coupling)
        traj = run_memory(ens, RB87_D1, drive, silent, cfg, state)
        ref_out, ref_rho = rk4_memory(ens, RB87_D1, drive, silent, cfg, state)
        energy = float(np.sum(np.abs(traj.output_signal.values) ** 2))
        ref_energy = float(np.sum(np.abs(ref_out) ** 2))
        self.assertGreater(ref_energy, 0.0)
        self.assertAlmostEqual(energy / ref_energy, 1.0, delta=0.02)
        final = traj.final_state.coherence.values
        error = np.linalg.norm(final - ref_rho) / np.linalg.norm(ref_rho)
        self.assertLess(error, 0.02)


class TestGradientEcho(unittest.TestCase):
    """Test cases for the gradient-echo cycle."""

    def test_three_pulse_train_is_time_reversed(self):
        """Test K-space mapping and reversed readout of a three-pulse train."""
        ens = uniform_ensemble(2e-2, 256, 600.0)
        grid = time_grid(50e-6, 1e-8)
        centers = [6e-6, 12e-6, 18e-6]
        amplitudes = [1.0, 0.75, 0.5]
        signal = pulse_train(grid, centers, 0.6e-6, amplitudes, 0.005 * MHZ)
        result = gem_cycle(ens, RB87_D1, 0.75 * MHZ, 70.0 * MHZ, 1.25 * MHZ / 1e-2, 25e-6,
                           signal, centers, amplitudes)
        self.assertGreaterEqual(result.kspace_correlation, 0.95)
        self.assertTrue(result.time_reversed)
        self.assertEqual(result.readout_peaks.size, 3)
        self.assertGreater(result.efficiency, 0.0)
        self.assertLess(result.efficiency, 1.0)


class TestPhaseMatching(unittest.TestCase):
    """Test cases for the phase-matching scan."""

    def test_uniform_cloud_follows_sinc(self):
        """Test that the readout amplitude follows |sinc(dk L / 2)| at low OD."""
        length = 1e-2
        ens = uniform_ensemble(length, 128, 0.1)
        dkl = np.linspace(-20.0, 20.0, 41)
        solver, quadrature = phase_matching_scan(ens, RB87_D1, 10.0 * MHZ, 100.0 * MHZ,
                                                 dkl / length, 2e-6, 400)
        sinc = np.array([sinc_amplitude(x / length, length) for x in dkl])
        self.assertGreaterEqual(np.corrcoef(solver, sinc)[0, 1], 0.99)
        np.testing.assert_allclose(quadrature, sinc, atol=0.01)
        self.assertAlmostEqual(solver[20], 1.0, places=9)

    def test_gaussian_cloud_readout_law(self):
        """Test the readout of a Gaussian cloud against exp(-dk^2 L^2) with L = sigma / sqrt 2."""
        sigma = 2.5e-3
        grid = Grid1D.centered(2e-2, 128)
        ens = AtomEnsemble.from_od(grid, gaussian_profile(grid, sigma), 0.01)
        dks = np.linspace(0.0, 3.0 / sigma, 13)
        solver, quadrature = phase_matching_scan(ens, RB87_D1, 10.0 * MHZ, 100.0 * MHZ, dks,
                                                 2e-6, 400)
        expected = np.exp(-(dks * sigma / math.sqrt(2)) ** 2)
        z = grid.points()
        oracle = np.array([abs(overlap_integral(ens.density, z, dk)) for dk in dks])
        np.testing.assert_allclose(oracle / oracle[0], expected, atol=1e-3)
        np.testing.assert_allclose(quadrature, expected, atol=1e-3)
        np.testing.assert_allclose(solver, expected, atol=0.02)

    def test_amplitude_count_must_match(self):
        """Test that precomputed amplitudes must cover every dk."""
        ens = uniform_ensemble(1e-2, 16, 0.1)
        with self.assertRaises(ValidationError):
            phase_matching_scan(ens, RB87_D1, MHZ, 100.0 * MHZ, [0.0, 100.0], 1e-6, 10,
                                amplitudes=[1.0])


if __name__ == '__main__':
    unittest.main()
