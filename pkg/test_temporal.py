"""
Tests for Wigner maps, ray transforms and the far-field spectrometer.
"""
import math
import unittest

import numpy as np
from scipy.signal import find_peaks

from core import (COHERENCE_KIND, MHZ, RB87_D1, SIGNAL_KIND, AtomEnsemble, ComplexEnvelope,
                  Grid1D, ResolutionError, UndefinedResultError, ValidationError,
                  gaussian_envelope, uniform_profile)
from mb_solver import (CouplingDrive, MemoryState, gem_cycle, make_config, pulse_train,
                       run_memory, time_grid)
from temporal import (DEFAULT_CHIRP, RayTransform, SpectrometerDesign, apply_quadratic_phase,
                      compose, design_report, efficiency_map, fit_lifetime, fringe_frequency,
                      fwhm, gem_efficiency, lens, memory_efficiency, predicted_fringe_frequency,
                      propagation, resample_wigner, run_spectrometer, spectral_efficiency,
                      wigner)


class TestWigner(unittest.TestCase):
    """Test cases for Wigner maps."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = Grid1D(-25.6, 0.1, 512)
        self.env = gaussian_envelope(self.grid, 0.0, 1.0, kind=COHERENCE_KIND)

    def test_axes_and_marginal(self):
        """Test the k axis and the position marginal."""
        w = wigner(self.env)
        self.assertAlmostEqual(w.dk, math.pi / (512 * 0.1))
        self.assertAlmostEqual(float(w.k.max()), math.pi / (2 * 0.1), delta=1.5 * w.dk)
        density = self.env.intensity() / self.env.norm() ** 2
        np.testing.assert_allclose(w.x_marginal(), density, atol=1e-10)
        self.assertEqual(w.axis_kind, 'space')

    def test_zero_envelope(self):
        """Test that a zero envelope has no Wigner map."""
        with self.assertRaises(UndefinedResultError):
            wigner(ComplexEnvelope(self.grid, np.zeros(512)))

    def test_momentum_marginal(self):
        """Test the k marginal against |A~(k)|^2 of a chirped, displaced Gaussian."""
        x = self.grid.points()
        chirp = np.exp(1j * (0.3 * (x - 1.0) ** 2 + 2.0 * x))
        env = ComplexEnvelope(self.grid, self.env.values * chirp, COHERENCE_KIND)
        w = wigner(env)
        a = env.values / env.norm()
        spectrum = self.grid.step / math.sqrt(2 * math.pi) * (np.exp(-1j * np.outer(w.k, x)) @ a)
        np.testing.assert_allclose(w.k_marginal(), np.abs(spectrum) ** 2, atol=1e-8)

    def test_superposition_fringes(self):
        """Test the interference fringes and negative values between two separated Gaussians."""
        x = self.grid.points()
        pair = np.exp(-(x - 5.0) ** 2 / 2.0) + np.exp(-(x + 5.0) ** 2 / 2.0)
        w = wigner(ComplexEnvelope(self.grid, pair, COHERENCE_KIND))
        self.assertLess(float(w.values.min()), -0.5 * float(w.values.max()))
        middle = w.values[int(np.argmin(np.abs(x)))]
        peaks, _ = find_peaks(middle, height=0.01 * middle.max())
        self.assertGreaterEqual(peaks.size, 5)
        spacing = float(np.mean(np.diff(w.k[peaks])))
        self.assertAlmostEqual(spacing, 2 * math.pi / 10.0, delta=w.dk)

    def test_resampling_matches_direct_lens(self):
        """Test that shearing the map equals the map of the lensed envelope."""
        focal = 4.0
        sheared = resample_wigner(wigner(self.env), lens(focal), carrier=1.0)
        direct = wigner(apply_quadratic_phase(self.env, 'lens', focal, carrier=1.0)).values
        rms = math.sqrt(float(np.mean((sheared - direct) ** 2)))
        self.assertLess(rms / math.sqrt(float(np.mean(direct ** 2))), 0.01)


class TestRayTransforms(unittest.TestCase):
    """Test cases for ABCD transforms."""

    def test_determinant_must_be_one(self):
        """Test that non-symplectic matrices are refused."""
        with self.assertRaises(ValidationError):
            RayTransform(2.0, 0.0, 0.0, 1.0)
        with self.assertRaises(ValidationError):
            lens(0.0)

    def test_two_f_imaging(self):
        """Test that 2f-lens-2f images with magnification -1."""
        f = 3.0
        system = compose(propagation(2 * f), compose(lens(f), propagation(2 * f)))
        np.testing.assert_allclose(system.matrix(), [[-1.0, 0.0], [-1.0 / f, -1.0]], atol=1e-12)

    def test_lens_propagation_lens(self):
        """Test lens(f) . propagation(f) . lens(f) = [[0, f], [-1/f, 0]] over random f."""
        rng = np.random.default_rng(5)
        for f in rng.uniform(0.1, 100.0, 100) * rng.choice([-1.0, 1.0], 100):
            system = compose(lens(f), compose(propagation(f), lens(f)))
            np.testing.assert_allclose(system.matrix(), [[0.0, f], [-1.0 / f, 0.0]],
                                       rtol=1e-12, atol=1e-12)

    def test_inverse(self):
        """Test that a transform composed with its inverse is the identity."""
        t = compose(lens(2.0), propagation(5.0))
        np.testing.assert_allclose(compose(t, t.inverse()).matrix(), np.eye(2), atol=1e-12)


class TestQuadraticPhase(unittest.TestCase):
    """Test cases for time lenses and dispersion."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = Grid1D(-102.4, 0.05, 4096)

    def test_far_field_fringe_spacing(self):
        """Test that two pulses 8 apart give fringes 2 pi f / 8 apart in the focal plane."""
        x = self.grid.points()
        pair = np.exp(-(x - 4.0) ** 2 / 2.0) + np.exp(-(x + 4.0) ** 2 / 2.0)
        env = ComplexEnvelope(self.grid, pair)
        focal = 5.0
        out = apply_quadratic_phase(apply_quadratic_phase(env, 'lens', focal, 1.0),
                                    'propagation', focal, 1.0)
        intensity = out.intensity()
        minima, _ = find_peaks(-intensity)
        inner = minima[np.argsort(np.abs(x[minima]))[:2]]
        spacing = abs(x[inner[0]] - x[inner[1]])
        self.assertAlmostEqual(spacing, 2 * math.pi * focal / 8.0, delta=self.grid.step)

    def test_propagation_is_unitary(self):
        """Test that dispersion preserves the norm."""
        env = gaussian_envelope(self.grid, 0.0, 1.0)
        moved = apply_quadratic_phase(env, 'propagation', 3.0, 1.0)
        self.assertAlmostEqual(moved.norm(), env.norm(), places=10)

    def test_aliasing_lens(self):
        """Test that an undersampled lens phase is refused."""
        env = gaussian_envelope(self.grid, 0.0, 1.0)
        with self.assertRaises(ResolutionError):
            apply_quadratic_phase(env, 'lens', 0.01, 1.0)

    def test_flat_lens_and_unknown_kind(self):
        """Test the infinite-focus shortcut and unknown kinds."""
        env = gaussian_envelope(self.grid, 0.0, 1.0)
        self.assertIs(apply_quadratic_phase(env, 'lens', math.inf, 1.0), env)
        with self.assertRaises(ValidationError):
            apply_quadratic_phase(env, 'prism', 1.0, 1.0)


class TestSpectrometerDesign(unittest.TestCase):
    """Test cases for the spectrometer figures of merit."""

    def setUp(self):
        """Set up test fixtures."""
        self.design = SpectrometerDesign.operating_point()
        self.report = design_report(self.design)

    def test_operating_point(self):
        """Test bandwidth, lifetime and focal length of the operating point."""
        self.assertAlmostEqual(self.report['bandwidth'] / (2 * math.pi * 1.7e6), 1.0, places=9)
        self.assertAlmostEqual(self.report['tau'] / 23.5e-6, 1.0, delta=0.01)
        self.assertAlmostEqual(self.report['focal'] / 9.6e3, 1.0, delta=0.03)
        self.assertEqual(self.report['resolution_crossover'], 1.0)
        self.assertGreater(self.report['resolution'], 1.0 / self.report['tau'])

    def test_memory_efficiency(self):
        """Test the bandwidth-limited efficiency and its validation."""
        self.assertAlmostEqual(memory_efficiency(10.0, 2 * math.pi * 10.0), (1 - math.exp(-1)) ** 2)
        with self.assertRaises(ValidationError):
            memory_efficiency(10.0, 0.0)

    def test_memory_efficiency_worked_example(self):
        """Test eta0 at OD 70 and tau B = 2 pi 13, and its dependence on OD / tau B only."""
        self.assertAlmostEqual(memory_efficiency(70.0, 2 * math.pi * 13.0), 0.9909, delta=1e-4)
        self.assertAlmostEqual(memory_efficiency(140.0, 4 * math.pi * 13.0),
                               memory_efficiency(70.0, 2 * math.pi * 13.0), places=12)
        for od, tb in ((10.0, 30.0), (70.0, 2 * math.pi * 40.0)):
            self.assertAlmostEqual(gem_efficiency(4 * od, tb), memory_efficiency(od, tb), places=12)
        with self.assertRaises(ValidationError):
            gem_efficiency(10.0, -1.0)

    def test_uniform_cloud_is_flat(self):
        """Test that a uniform cloud has the flat efficiency everywhere."""
        grid = Grid1D.centered(1e-2, 64)
        omegas, eta = spectral_efficiency(self.design, np.ones(64), grid)
        pixels = self.design.lifetime() * abs(self.design.beta) * 1e-2
        np.testing.assert_allclose(eta, memory_efficiency(self.design.od, pixels))
        self.assertTrue(np.all(np.diff(omegas) > 0))

    def test_fwhm(self):
        """Test the half-maximum width of a Gaussian."""
        x = np.linspace(-10.0, 10.0, 4001)
        self.assertAlmostEqual(fwhm(x, np.exp(-x ** 2 / 2)), 2 * math.sqrt(2 * math.log(2)),
                               places=4)

    def test_efficiency_map_depends_on_product(self):
        """Test that the mean efficiency depends only on tau B and falls as tau B grows."""
        grid = efficiency_map([1.0 * MHZ, 2.0 * MHZ], [1e4, 2e4], od=70.0, count=256)
        self.assertAlmostEqual(grid[0, 0], grid[1, 1], places=9)
        self.assertTrue(np.all((grid > 0) & (grid < 1)))
        # Raising 1/tau at fixed bandwidth lowers tau B, and eta0 falls with tau B
        self.assertLess(grid[0, 0], grid[0, 1])
        self.assertLess(grid[1, 0], grid[0, 0])


class TestFringes(unittest.TestCase):
    """Test cases for fringe and lifetime estimators."""

    def test_fringe_frequency(self):
        """Test the FFT estimate of a clean cosine."""
        t = np.arange(5000) * 2e-8
        trace = 1.0 + np.cos(2 * math.pi * 1e5 * t)
        self.assertAlmostEqual(fringe_frequency(trace, t) / 1e5, 1.0, delta=0.01)

    def test_predicted_fringe_frequency(self):
        """Test chirp times separation over 2 pi."""
        self.assertAlmostEqual(predicted_fringe_frequency(5e-6, DEFAULT_CHIRP), 2e5)

    def test_fit_lifetime(self):
        """Test the exponential lifetime fit and its failure modes."""
        delays = np.linspace(0.0, 50e-6, 6)
        self.assertAlmostEqual(fit_lifetime(np.exp(-delays / 23.5e-6), delays) / 23.5e-6, 1.0,
                               places=9)
        with self.assertRaises(UndefinedResultError):
            fit_lifetime(np.exp(delays / 1e-5), delays)
        with self.assertRaises(ValidationError):
            fit_lifetime([1.0, 0.5], [0.0, 1.0])


    def test_fit_lifetime_with_noise(self):
        """Test the fit on 20 delays with 5% multiplicative noise over 100 seeds."""
        tau = 23.5e-6
        delays = np.linspace(0.0, 50e-6, 20)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            energies = np.exp(-delays / tau) * (1.0 + 0.05 * rng.normal(size=delays.size))
            self.assertAlmostEqual(fit_lifetime(energies, delays) / tau, 1.0, delta=0.1)

    def test_fit_lifetime_of_solver_decay(self):
        """Test that the fitted decay of a stored coherence is 4 Delta^2 / (Gamma Omega^2)."""
        zgrid = Grid1D.centered(1e-2, 32)
        ens = AtomEnsemble.from_od(zgrid, uniform_profile(zgrid), 1e-3)
        coupling = 10.0 * MHZ
        detuning = 100.0 * MHZ
        grid = Grid1D(0.0, 1e-8, 1000)
        silent = ComplexEnvelope(grid, np.zeros(grid.count), SIGNAL_KIND)
        state = MemoryState.from_values(zgrid, np.full(32, 1e-3, dtype=complex))
        traj = run_memory(ens, RB87_D1, CouplingDrive.constant(coupling), silent,
                          make_config(ens, grid, detuning), state)
        picked = np.arange(0, grid.count, 50)
        fitted = fit_lifetime(traj.atom_excitation[picked], traj.times[picked])
        expected = 4 * detuning ** 2 / (RB87_D1.gamma * coupling ** 2)
        self.assertAlmostEqual(fitted / expected, 1.0, delta=0.05)



class TestGradientEchoLaw(unittest.TestCase):
    """Test cases for the simulated gradient-echo efficiency."""

    def test_uniform_cloud_matches_closed_form(self):
        """Test lossless echoes at OD 70 for tau B = 2 pi x 5, 13 and 40."""
        zgrid = Grid1D.centered(1e-2, 128)
        ens = AtomEnsemble.from_od(zgrid, uniform_profile(zgrid), 70.0)
        bandwidth = 2.0 * MHZ
        detuning = 100.0 * MHZ
        grid = time_grid(10e-6, 1e-8)
        signal = pulse_train(grid, [2.5e-6], 0.5e-6, [1.0], 0.005 * MHZ)
        for cycles in (5.0, 13.0, 40.0):
            tau = 2 * math.pi * cycles / bandwidth
            rabi = math.sqrt(4 * detuning ** 2 / (RB87_D1.gamma * tau))
            result = gem_cycle(ens, RB87_D1, rabi, detuning, bandwidth / 1e-2, 5e-6, signal,
                               [2.5e-6], [1.0], include_spont_loss=False,
                               compensate_light_shift=True)
            expected = gem_efficiency(70.0, tau * bandwidth)
            self.assertAlmostEqual(result.efficiency, expected, delta=0.05)
        self.assertLess(gem_efficiency(70.0, 2 * math.pi * 40.0),
                        gem_efficiency(70.0, 2 * math.pi * 5.0))


class TestSpectrometerRun(unittest.TestCase):
    """Test cases for the full three-stage spectrometer."""

    @classmethod
    def setUpClass(cls):
        cls.design = SpectrometerDesign.operating_point()
        zgrid = Grid1D.centered(1e-2, 512)
        cls.ens = AtomEnsemble.from_od(zgrid, uniform_profile(zgrid), cls.design.od)
        cls.grid = time_grid(75e-6, 2e-8)

    def run_pulses(self, centers):
        signal = pulse_train(self.grid, centers, 0.25e-6, [1.0] * len(centers), 0.005 * MHZ)
        return run_spectrometer(self.design, signal, self.ens, RB87_D1, 25e-6, 3e-6,
                                reference_time=12e-6)

    def test_pulse_pair_fringes(self):
        """Test that pulse pairs map onto fringes at chirp * separation / 2 pi."""
        report = design_report(self.design)
        for separation in (4e-6, 5e-6, 6e-6, 7e-6, 8e-6):
            result = self.run_pulses([12e-6 - separation / 2, 12e-6 + separation / 2])
            tau, power = result.output_trace(25e-6)
            predicted = predicted_fringe_frequency(separation, self.design.chirp)
            measured = fringe_frequency(power, tau, min_frequency=0.5 * predicted)
            self.assertAlmostEqual(measured / predicted, 1.0, delta=0.05)
            # Below the lossless gradient-echo ceiling, which the 23.5 us lifetime lowers further
            self.assertGreaterEqual(result.efficiency, 0.03)
            self.assertLessEqual(result.efficiency, min(0.10, report['eta0_solver']))

    def test_single_pulse_gives_one_peak(self):
        """Test that one input pulse gives a single smooth spectral peak."""
        result = self.run_pulses([12e-6])
        tau, power = result.output_trace(25e-6)
        peaks, _ = find_peaks(power, prominence=0.1 * power.max())
        self.assertEqual(peaks.size, 1)
        self.assertLess(abs(tau[peaks[0]]), 21e-6)


if __name__ == '__main__':
    unittest.main()
