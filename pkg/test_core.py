"""
Unit tests for grids, envelopes, ensembles and the Fourier helpers.
"""
import math
import unittest

import numpy as np

from core import (COHERENCE_KIND, RB87_D1, SIGNAL_KIND, AtomEnsemble, ComplexEnvelope,
                  DimensionError, Grid1D, InvalidGridError, PhysConsts, Transition,
                  ValidationError, dft, excitation_counts, gaussian_envelope, idft,
                  od_prefactor, photon_factor, uniform_profile)


class TestGrid1D(unittest.TestCase):
    """Test cases for Grid1D."""

    def test_rejects_short_or_flat_grids(self):
        """Test that degenerate grids are refused."""
        with self.assertRaises(InvalidGridError):
            Grid1D(0.0, 1.0, 1)
        with self.assertRaises(InvalidGridError):
            Grid1D(0.0, 0.0, 10)

    def test_centered_grid(self):
        """Test that a centered grid is symmetric about zero."""
        grid = Grid1D.centered(2e-2, 64)
        z = grid.points()
        self.assertAlmostEqual(z.mean(), 0.0, places=15)
        self.assertAlmostEqual(grid.span, 2e-2)

    def test_conjugate_grid(self):
        """Test the conjugate grid step and zero position."""
        grid = Grid1D(0.0, 0.1, 64)
        kgrid = grid.conjugate()
        self.assertAlmostEqual(kgrid.step, 2 * math.pi / 6.4)
        self.assertAlmostEqual(kgrid.points()[32], 0.0)


class TestTransforms(unittest.TestCase):
    """Test cases for dft and idft."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = Grid1D(-3.2, 0.05, 128)

    def test_parseval(self):
        """Test that the transform preserves the norm."""
        env = gaussian_envelope(self.grid, 0.3, 0.4)
        self.assertAlmostEqual(dft(env).norm(), env.norm(), places=10)

    def test_linear_phase_peaks_at_positive_k(self):
        """Test that exp(i K x) peaks at +K."""
        kstep = self.grid.conjugate().step
        wave = ComplexEnvelope(self.grid, np.exp(1j * 5 * kstep * self.grid.points()))
        spectrum = dft(wave)
        peak = spectrum.grid.points()[int(np.argmax(np.abs(spectrum.values)))]
        self.assertAlmostEqual(peak, 5 * kstep)

    def test_inverse(self):
        """Test that idft undoes dft and restores the kind."""
        env = gaussian_envelope(self.grid, -0.5, 0.3, amplitude=1j, kind=COHERENCE_KIND)
        back = idft(dft(env), self.grid)
        np.testing.assert_allclose(back.values, env.values, atol=1e-12)
        self.assertEqual(back.kind, COHERENCE_KIND)

    def test_inverse_rejects_foreign_grid(self):
        """Test that a spectrum is only inverted onto its own grid."""
        spectrum = dft(gaussian_envelope(self.grid, 0.0, 0.3))
        with self.assertRaises(DimensionError):
            idft(spectrum, Grid1D(0.0, 0.1, 128))


class TestEnsemble(unittest.TestCase):
    """Test cases for AtomEnsemble and the transition constants."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = Grid1D.centered(2e-2, 128)

    def test_od_prefactor_and_photon_factor(self):
        """Test the D1 line constants."""
        self.assertAlmostEqual(od_prefactor(RB87_D1) / 2.89e-13, 1.0, delta=0.01)
        self.assertAlmostEqual(photon_factor(RB87_D1) / 9.18e4, 1.0, delta=0.01)

    def test_from_od(self):
        """Test that the scaled density reproduces the requested OD."""
        ens = AtomEnsemble.from_od(self.grid, uniform_profile(self.grid), 70.0)
        self.assertAlmostEqual(ens.computed_od(), 70.0, places=9)
        self.assertAlmostEqual(float(np.sum(ens.cell_od())), 70.0, places=9)

    def test_stored_od_must_match_density(self):
        """Test that an inconsistent OD is refused."""
        ens = AtomEnsemble.from_od(self.grid, uniform_profile(self.grid), 10.0)
        with self.assertRaises(ValidationError):
            AtomEnsemble(self.grid, ens.density, ens.length, 11.0)

    def test_density_shape(self):
        """Test that a density of the wrong length is refused."""
        with self.assertRaises(DimensionError):
            AtomEnsemble.from_od(self.grid, np.ones(10), 10.0)

    def test_with_od(self):
        """Test rescaling to another OD keeps the shape."""
        ens = AtomEnsemble.from_od(self.grid, uniform_profile(self.grid), 10.0).with_od(20.0)
        self.assertAlmostEqual(ens.od, 20.0, places=9)

    def test_excitation_counts_kinds(self):
        """Test that counts check envelope kinds and grids."""
        ens = AtomEnsemble.from_od(self.grid, uniform_profile(self.grid), 10.0)
        rho = ComplexEnvelope(self.grid, np.full(128, 1e-3), COHERENCE_KIND)
        sig = ComplexEnvelope(Grid1D(0.0, 1e-8, 10), np.zeros(10), SIGNAL_KIND)
        n_at, n_ph = excitation_counts(rho, sig, ens, RB87_D1)
        self.assertAlmostEqual(n_at / (ens.atom_number() * 1e-6), 1.0, places=9)
        self.assertEqual(n_ph, 0.0)
        with self.assertRaises(DimensionError):
            excitation_counts(sig, sig, ens, RB87_D1)


class TestValidation(unittest.TestCase):
    """Test cases for constant and transition validation."""

    def test_bad_constants(self):
        """Test that non-positive constants are refused."""
        with self.assertRaises(ValidationError):
            PhysConsts(hbar=-1.0)

    def test_transition_consistency(self):
        """Test that k0 must equal omega0 / c."""
        with self.assertRaises(ValidationError):
            Transition(dipole=1e-29, gamma=1e7, k0=1.0, omega0=1e15)
        with self.assertRaises(ValidationError):
            RB87_D1.with_gamma(0.0)

    def test_envelope_kind(self):
        """Test that unknown envelope kinds are refused."""
        with self.assertRaises(ValidationError):
            ComplexEnvelope(Grid1D(0.0, 1.0, 4), np.zeros(4), 'banana')


if __name__ == '__main__':
    unittest.main()
