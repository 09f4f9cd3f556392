"""
Core module with physical constants, grids, envelope containers and
discrete Fourier helpers shared by every simulation module.

All frequencies, detunings, Rabi frequencies and decay rates are angular
(rad/s). Scenario files use MHz meaning 2*pi*1e6 rad/s.
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


__version__ = '1.0.0'

MHZ = 2.0 * math.pi * 1e6
GHZ = 2.0 * math.pi * 1e9

SIGNAL_KIND = 'signal-in-time'
SIGNAL_Z_KIND = 'signal-in-z'
COHERENCE_KIND = 'coherence-in-z'
ENVELOPE_KINDS = (SIGNAL_KIND, SIGNAL_Z_KIND, COHERENCE_KIND)

# Beam of 0.1 mm diameter
DEFAULT_CROSS_SECTION = math.pi * (0.05e-3) ** 2


class LabError(Exception):
    """Base error of the simulation lab; carries the CLI exit code."""

    exit_code = 4
    code_name = 'lab-error'


class ParseError(LabError):
    """Scenario text could not be parsed."""

    exit_code = 2
    code_name = 'parse-error'


class ValidationError(LabError):
    """Parameters are missing or outside their validated range."""

    exit_code = 3
    code_name = 'validation-error'


class ConfigError(ValidationError):
    """Solver configuration violates a stability or step bound."""

    code_name = 'config-error'


class InvalidGridError(ValidationError):
    """Grid with fewer than two points or a non-positive step."""

    code_name = 'invalid-grid'


class DimensionError(ValidationError):
    """Arrays or grids that should line up do not."""

    code_name = 'dimension-error'


class SingularEliminationError(ValidationError):
    """Adiabatic elimination asked for at zero single-photon detuning."""

    code_name = 'singular-elimination'


class ResolutionError(ValidationError):
    """A phase or fringe pattern is too fine for the sampling grid."""

    code_name = 'resolution-error'


class NumericError(LabError):
    """A computation produced non-finite values."""

    exit_code = 4
    code_name = 'numeric-failure'


class UndefinedResultError(LabError):
    """A metric is undefined for the given input (zero norm, empty image...)."""

    exit_code = 4
    code_name = 'undefined-result'


@dataclass(frozen=True)
class PhysConsts:
    """CODATA constants in SI units."""

    hbar: float = 1.054571817e-34
    eps0: float = 8.8541878128e-12
    c: float = 299792458.0
    muB: float = 9.2740100783e-24
    kB: float = 1.380649e-23
    rb87_mass: float = 1.443160648e-25

    def __post_init__(self):
        for name in ('hbar', 'eps0', 'c', 'muB', 'kB', 'rb87_mass'):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"constant {name} must be positive, got {value}")


CONSTS = PhysConsts()


@dataclass(frozen=True)
class Transition:
    """
    Optical transition of the reference Lambda system.

    Args:
        dipole: Dipole moment in C*m
        gamma: Excited-state decay rate in rad/s
        k0: Carrier wavenumber in rad/m
        omega0: Carrier angular frequency in rad/s
    """

    dipole: float
    gamma: float
    k0: float
    omega0: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"transition gamma must be positive, got {self.gamma}")
        if not self.dipole > 0:
            raise ValidationError(f"transition dipole must be positive, got {self.dipole}")
        expected = self.omega0 / CONSTS.c
        if abs(self.k0 - expected) > 1e-12 * abs(expected):
            raise ValidationError("transition k0 must equal omega0/c")

    @classmethod
    def from_wavelength(cls, wavelength: float, dipole: float, gamma: float) -> 'Transition':
        """Build a transition from its vacuum wavelength in metres."""
        omega0 = 2.0 * math.pi * CONSTS.c / wavelength
        return cls(dipole=dipole, gamma=gamma, k0=omega0 / CONSTS.c, omega0=omega0)

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi / self.k0

    def with_gamma(self, gamma: float) -> 'Transition':
        return Transition(dipole=self.dipole, gamma=gamma, k0=self.k0, omega0=self.omega0)


# Rb-87 D1 and D2 lines, gamma rounded to 2*pi*6 MHz
RB87_D1 = Transition.from_wavelength(794.979e-9, 2.537e-29, 6.0 * MHZ)
RB87_D2 = Transition.from_wavelength(780.241e-9, 3.584e-29, 6.0 * MHZ)


@dataclass(frozen=True)
class ExcitedLevel:
    """
    One excited level reachable from both ground states.

    Args:
        detuning: Single-photon detuning in rad/s
        dipole_ratio: Dipole moment relative to the reference transition
    """

    detuning: float
    dipole_ratio: float = 1.0

    @property
    def weight(self) -> float:
        """Relative coupling strength, the squared dipole ratio."""
        return self.dipole_ratio ** 2


@dataclass(frozen=True)
class Grid1D:
    """Uniform one-dimensional grid."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 2:
            raise InvalidGridError(f"grid needs at least 2 points, got {self.count}")
        if not self.step > 0:
            raise InvalidGridError(f"grid step must be positive, got {self.step}")

    @classmethod
    def centered(cls, length: float, count: int) -> 'Grid1D':
        """Cell-centred grid covering [-length/2, length/2]."""
        step = length / count
        return cls(start=-length / 2.0 + step / 2.0, step=step, count=count)

    @classmethod
    def spanning(cls, start: float, duration: float, count: int) -> 'Grid1D':
        """Grid of `count` samples starting at `start` with step duration/count."""
        return cls(start=start, step=duration / count, count=count)

    def points(self) -> np.ndarray:
        """Sample positions start + step * i."""
        return self.start + self.step * np.arange(self.count)

    @property
    def span(self) -> float:
        """Length covered by the samples, step * count."""
        return self.step * self.count

    def conjugate(self) -> 'Grid1D':
        """Fourier grid in fftshift order, zero frequency at index count//2."""
        kstep = 2.0 * math.pi / (self.count * self.step)
        return Grid1D(start=-(self.count // 2) * kstep, step=kstep, count=self.count)

    def same_as(self, other: 'Grid1D', rtol: float = 1e-9) -> bool:
        """Same count, with step and start equal up to `rtol`."""
        return (self.count == other.count
                and abs(self.step - other.step) <= rtol * self.step
                and abs(self.start - other.start) <= rtol * max(abs(self.start), self.step))


def uniform_profile(grid: Grid1D, length: Optional[float] = None) -> np.ndarray:
    """Flat unit profile over |z| <= length/2 (the whole grid by default)."""
    z = grid.points()
    if length is None:
        return np.ones(grid.count)
    center = z.mean()
    return (np.abs(z - center) <= length / 2.0 + 1e-12 * grid.step).astype(float)


def gaussian_profile(grid: Grid1D, sigma: float, center: float = 0.0) -> np.ndarray:
    """exp(-(z - center)^2 / (2 sigma^2)) over the grid."""
    z = grid.points()
    return np.exp(-(z - center) ** 2 / (2.0 * sigma ** 2))


def super_gaussian_profile(grid: Grid1D, sigma: float, center: float = 0.0) -> np.ndarray:
    """exp(-z^4 / (4 sigma^4)), the default cloud shape of the spectrometer."""
    z = grid.points()
    return np.exp(-(z - center) ** 4 / (4.0 * sigma ** 4))


def od_prefactor(tr: Transition) -> float:
    """Optical depth per unit column density, 2 k0 d^2 / (hbar eps0 Gamma)."""
    return 2.0 * tr.k0 * tr.dipole ** 2 / (CONSTS.hbar * CONSTS.eps0 * tr.gamma)


@dataclass(frozen=True, eq=False)
class AtomEnsemble:
    """
    Atomic medium read by every solver.

    Args:
        grid: Grid over z
        density: Atom density n(z) in atoms/m^3
        length: Operational length of the cloud in m
        od: Optical depth over the support
        transition: Reference transition the OD is defined on
        temperature: Cloud temperature in K
        cross_section: Beam cross-section in m^2 used for absolute counts
    """

    grid: Grid1D
    density: np.ndarray
    length: float
    od: float
    transition: Transition = RB87_D1
    temperature: float = 20e-6
    cross_section: float = DEFAULT_CROSS_SECTION

    def __post_init__(self):
        density = np.asarray(self.density, dtype=float)
        object.__setattr__(self, 'density', density)
        density.setflags(write=False)
        if density.shape != (self.grid.count,):
            raise DimensionError("density must have one value per grid point")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ValidationError("density must be finite and non-negative")
        recomputed = self.computed_od()
        if abs(recomputed - self.od) > 1e-9 * max(abs(self.od), 1e-300):
            raise ValidationError(
                f"stored od {self.od} does not match density ({recomputed})")

    @classmethod
    def from_od(cls, grid: Grid1D, profile: np.ndarray, od: float,
                transition: Transition = RB87_D1, length: Optional[float] = None,
                temperature: float = 20e-6,
                cross_section: float = DEFAULT_CROSS_SECTION) -> 'AtomEnsemble':
        """Scale a density shape so that the ensemble has the requested OD."""
        profile = np.asarray(profile, dtype=float)
        column = float(np.sum(profile)) * grid.step
        if od > 0 and column <= 0:
            raise ValidationError("density profile is empty")
        scale = od / (od_prefactor(transition) * column) if od > 0 else 0.0
        density = profile * scale
        # Store the OD recomputed from the scaled density so both agree to rounding
        stored = od_prefactor(transition) * float(np.sum(density)) * grid.step
        return cls(grid=grid, density=density, length=length or grid.span,
                   od=stored, transition=transition, temperature=temperature,
                   cross_section=cross_section)

    def column_density(self) -> float:
        """Integral of n(z) dz in atoms/m^2."""
        return float(np.sum(self.density)) * self.grid.step

    def computed_od(self) -> float:
        return od_prefactor(self.transition) * self.column_density()

    def atom_number(self) -> float:
        """Atoms inside the beam cross-section."""
        return self.cross_section * self.column_density()

    def cell_od(self) -> np.ndarray:
        """Optical depth carried by each grid cell (dOD)."""
        return od_prefactor(self.transition) * self.density * self.grid.step

    def with_od(self, od: float) -> 'AtomEnsemble':
        return AtomEnsemble.from_od(self.grid, self.density, od, self.transition,
                                    self.length, self.temperature, self.cross_section)


@dataclass(frozen=True, eq=False)
class ComplexEnvelope:
    """Complex slowly-varying envelope sampled on a uniform grid."""

    grid: Grid1D
    values: np.ndarray
    kind: str = SIGNAL_KIND

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        if values.shape != (self.grid.count,):
            raise DimensionError(
                f"envelope has {values.size} samples for a grid of {self.grid.count}")
        if self.kind not in ENVELOPE_KINDS and not self.kind.startswith('spectrum'):
            raise ValidationError(f"unknown envelope kind '{self.kind}'")

    def intensity(self) -> np.ndarray:
        """|values|^2 per sample."""
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        """L2 norm sqrt(sum |values|^2 step)."""
        return float(np.sqrt(np.sum(self.intensity()) * self.grid.step))


def gaussian_envelope(grid: Grid1D, center: float, sigma: float,
                      amplitude: complex = 1.0, kind: str = SIGNAL_KIND) -> ComplexEnvelope:
    """Gaussian amplitude exp(-(x-center)^2 / (2 sigma^2)) scaled by `amplitude`."""
    x = grid.points()
    return ComplexEnvelope(grid, amplitude * np.exp(-(x - center) ** 2 / (2.0 * sigma ** 2)), kind)


def _spectrum_kind(kind: str) -> str:
    return kind if kind.startswith('spectrum') else f"spectrum:{kind}"


def dft(env: ComplexEnvelope) -> ComplexEnvelope:
    """
    Unitary forward transform with kernel exp(-i k x).

    The origin of the phase is the first grid sample's position, so a
    linear phase exp(i K x) maps to a peak at +K. The result lives on the
    conjugate grid (zero frequency at index count//2).

    Args:
        env: Envelope on a uniform grid

    Returns:
        Transformed envelope on the conjugate grid
    """
    grid = env.grid
    if grid.count < 2:
        raise InvalidGridError("dft needs at least 2 samples")
    kgrid = grid.conjugate()
    spectrum = np.fft.fftshift(np.fft.fft(env.values))
    # exp(-i k x0) for the grid offset keeps the transform shift-consistent
    phase = np.exp(-1j * kgrid.points() * grid.start)
    scale = grid.step / math.sqrt(2.0 * math.pi)
    return ComplexEnvelope(kgrid, spectrum * phase * scale, _spectrum_kind(env.kind))


def idft(env: ComplexEnvelope, grid: Grid1D, kind: Optional[str] = None) -> ComplexEnvelope:
    """Inverse of `dft` back onto the direct-space grid `grid`."""
    kgrid = grid.conjugate()
    if env.grid.count != grid.count or abs(env.grid.step - kgrid.step) > 1e-9 * kgrid.step:
        raise DimensionError("spectrum grid is not conjugate to the target grid")
    phase = np.exp(1j * kgrid.points() * grid.start)
    scale = grid.step / math.sqrt(2.0 * math.pi)
    values = np.fft.ifft(np.fft.ifftshift(env.values * phase / scale))
    if kind is None:
        kind = env.kind.split(':', 1)[1] if ':' in env.kind else SIGNAL_KIND
    return ComplexEnvelope(grid, values, kind)


def photon_factor(tr: Transition) -> float:
    """Photons per (rad/s)^2 * s * m^2 of Rabi-frequency flux: eps0 hbar c / (2 omega0 d^2)."""
    return CONSTS.eps0 * CONSTS.hbar * CONSTS.c / (2.0 * tr.omega0 * tr.dipole ** 2)


def excitation_counts(rho: ComplexEnvelope, sig: ComplexEnvelope, ens: AtomEnsemble,
                      tr: Transition) -> Tuple[float, float]:
    """
    Count atomic excitations stored in rho and photons carried by sig.

    n_at = S * sum(n |rho|^2 dz) and n_ph = S * eps0/(2 hbar omega0) *
    sum(|A|^2 c dt) with A = hbar Omega_s / d and S the beam cross-section.

    Args:
        rho: Coherence over z on the ensemble grid
        sig: Signal Rabi frequency over time
        ens: Atomic ensemble
        tr: Transition of the signal

    Returns:
        Tuple (n_at, n_ph)
    """
    if rho.kind != COHERENCE_KIND:
        raise DimensionError(f"rho must be a coherence-in-z envelope, got {rho.kind}")
    if sig.kind != SIGNAL_KIND:
        raise DimensionError(f"sig must be a signal-in-time envelope, got {sig.kind}")
    if not rho.grid.same_as(ens.grid):
        raise DimensionError("coherence grid does not match the ensemble grid")
    n_at = ens.cross_section * float(np.sum(ens.density * np.abs(rho.values) ** 2)) * ens.grid.step
    n_ph = ens.cross_section * photon_factor(tr) * float(np.sum(np.abs(sig.values) ** 2)) * sig.grid.step
    return n_at, n_ph
