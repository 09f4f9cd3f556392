"""
Wavevector bookkeeping, fictitious magnetic field and Larmor-precession
signals of spin-wave fragments (collapse and revival).
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from core import CONSTS, GHZ, ValidationError

# Refractive-index offset between the 780 nm and 795 nm beams, 0.045 mm^-1
LAMBDA_OFFSET = 45.0
READOUT_TILT_RATIO = 795.0 / 780.0

# Calibration point of the vector light shift: 2*pi*30 GHz, 160 mW/cm^2 -> 20 mG
CALIBRATION_DETUNING = 30.0 * GHZ
CALIBRATION_INTENSITY = 160e-3 / 1e-4
CALIBRATION_FIELD = 20e-3 * 1e-4
DEFAULT_GF = 0.5


def calibrate_kappa(field_tesla: float = CALIBRATION_FIELD,
                    detuning_s: float = CALIBRATION_DETUNING,
                    intensity: float = CALIBRATION_INTENSITY,
                    gF: float = DEFAULT_GF) -> float:
    """Polarizability constant kappa that maps (detuning, intensity) onto `field_tesla`."""
    return field_tesla * gF * CONSTS.muB * detuning_s * 2.0 * CONSTS.hbar * CONSTS.eps0 * CONSTS.c / intensity


KAPPA = calibrate_kappa()


@dataclass(frozen=True)
class WaveVector3:
    kx: float
    ky: float
    kz: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.kx, self.ky, self.kz)):
            raise ValidationError("wavevector components must be finite")

    @classmethod
    def tilted(cls, magnitude: float, theta: float) -> 'WaveVector3':
        """Wavevector of given magnitude tilted by theta from z in the x-z plane."""
        return cls(magnitude * math.sin(theta), 0.0, magnitude * math.cos(theta))

    def __add__(self, other: 'WaveVector3') -> 'WaveVector3':
        return WaveVector3(self.kx + other.kx, self.ky + other.ky, self.kz + other.kz)

    def __sub__(self, other: 'WaveVector3') -> 'WaveVector3':
        return WaveVector3(self.kx - other.kx, self.ky - other.ky, self.kz - other.kz)

    def magnitude(self) -> float:
        return math.sqrt(self.kx ** 2 + self.ky ** 2 + self.kz ** 2)

    def transverse(self) -> float:
        return math.hypot(self.kx, self.ky)


@dataclass(frozen=True)
class FictitiousFieldParams:
    """
    Parameters of the vector ac-Stark shift seen as a magnetic field.

    Args:
        q: Circular polarisation handedness, +1 or -1
        kappa: Polarizability constant (tesla-producing units)
        detuning_s: Stark-beam detuning in rad/s
        intensity: Stark-beam intensity in W/m^2
        gF: Lande factor of the hyperfine level
    """

    q: int = 1
    kappa: float = KAPPA
    detuning_s: float = CALIBRATION_DETUNING
    intensity: float = CALIBRATION_INTENSITY
    gF: float = DEFAULT_GF

    def __post_init__(self):
        if self.q not in (1, -1):
            raise ValidationError(f"q must be +1 or -1, got {self.q}")
        if self.detuning_s == 0:
            raise ValidationError("Stark-beam detuning must be nonzero")
        if self.intensity < 0:
            raise ValidationError("intensity must be non-negative")


def fictitious_field(p: FictitiousFieldParams) -> float:
    """Fictitious magnetic field in tesla along the Stark beam."""
    if p.gF == 0:
        raise ValidationError("undefined field: gF is zero")
    return p.q * (p.kappa / (p.gF * CONSTS.muB * p.detuning_s)) * p.intensity / (
        2.0 * CONSTS.hbar * CONSTS.eps0 * CONSTS.c)


def larmor_frequency(B_external, B_f: float, gF: float) -> float:
    """
    Larmor frequency of the spins in the total field.

    Args:
        B_external: External field vector in tesla (3 components)
        B_f: Fictitious field in tesla along the external-field axis
        gF: Lande factor

    Returns:
        Angular Larmor frequency in rad/s
    """
    b = np.asarray(B_external, dtype=float).reshape(3)
    norm = float(np.linalg.norm(b))
    axis = b / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    effective = b + B_f * axis
    return gF * CONSTS.muB * float(np.linalg.norm(effective)) / CONSTS.hbar


def larmor_from_intensity(intensity, B_external, detuning_s: float = CALIBRATION_DETUNING,
                          gF: float = DEFAULT_GF, q: int = 1, kappa: float = KAPPA) -> np.ndarray:
    """Larmor-frequency profile produced by a Stark intensity profile."""
    values = []
    for value in np.atleast_1d(np.asarray(intensity, dtype=float)):
        b_f = fictitious_field(FictitiousFieldParams(q, kappa, detuning_s, float(value), gF))
        values.append(larmor_frequency(B_external, b_f, gF))
    return np.array(values)


@dataclass(frozen=True, eq=False)
class PrecessionScene:
    """Atom density and Larmor frequency over z, plus an imprinted phase."""

    density_profile: np.ndarray
    larmor_profile: np.ndarray
    dz: float = 1.0
    phase_offset: Optional[np.ndarray] = None

    def __post_init__(self):
        density = np.asarray(self.density_profile, dtype=float)
        larmor = np.asarray(self.larmor_profile, dtype=float)
        if density.shape != larmor.shape:
            raise ValidationError("density and Larmor profiles must have the same length")
        if np.any(density < 0):
            raise ValidationError("density must be non-negative")
        offset = np.zeros(density.shape) if self.phase_offset is None else np.asarray(
            self.phase_offset, dtype=float)
        if offset.shape != density.shape:
            raise ValidationError("phase offset must match the profiles")
        object.__setattr__(self, 'density_profile', density)
        object.__setattr__(self, 'larmor_profile', larmor)
        object.__setattr__(self, 'phase_offset', offset)


def staircase_scene(populations: Sequence[float], larmor_steps: Sequence[float],
                    points_per_step: int = 1) -> PrecessionScene:
    """J-step staircase: group j holds populations[j] atoms at Larmor frequency larmor_steps[j]."""
    if len(populations) != len(larmor_steps):
        raise ValidationError("one population per Larmor step is required")
    density = np.repeat(np.asarray(populations, dtype=float) / points_per_step, points_per_step)
    larmor = np.repeat(np.asarray(larmor_steps, dtype=float), points_per_step)
    return PrecessionScene(density, larmor, dz=1.0)


def apply_phase_profile(scene: PrecessionScene, phase) -> PrecessionScene:
    """Add a spin-wave phase profile to the scene."""
    return PrecessionScene(scene.density_profile, scene.larmor_profile, scene.dz,
                           scene.phase_offset + np.asarray(phase, dtype=float))


def precession_signal(scene: PrecessionScene, times) -> np.ndarray:
    """S(t) = sum n(z) exp(i (omega_L(z) t + phase(z))) dz."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    weights = scene.density_profile * np.exp(1j * scene.phase_offset) * scene.dz
    return np.exp(1j * np.outer(t, scene.larmor_profile)) @ weights


def collapse_revival_metrics(signal: np.ndarray, times: np.ndarray,
                             revival_time: float) -> Dict[str, float]:
    """Minimum of |S| before the revival and |S| at the revival, relative to |S(0)|."""
    magnitude = np.abs(signal)
    initial = magnitude[0]
    if initial == 0:
        raise ValidationError("signal is zero at t = 0")
    before = times < revival_time
    index_min = int(np.argmin(np.where(before, magnitude, np.inf)))
    index_rev = int(np.argmin(np.abs(times - revival_time)))
    return {
        'collapse_ratio': float(magnitude[index_min] / initial),
        'collapse_time': float(times[index_min]),
        'revival_ratio': float(magnitude[index_rev] / initial),
        'revival_time': float(times[index_rev]),
    }


def delta_kz(theta: float, k_write_mag: float, k_read_mag: float,
             lambda_offset: float = LAMBDA_OFFSET) -> float:
    """Longitudinal phase mismatch (1 - cos theta)(|k_r| + |k_in|) - offset, in rad/m."""
    return (1.0 - math.cos(theta)) * (k_read_mag + k_write_mag) - lambda_offset


def delta_kz_quadratic(theta: float, k_write_mag: float, k_read_mag: float,
                       lambda_offset: float = LAMBDA_OFFSET) -> float:
    """Small-angle form (|k_r| + |k_in|) theta^2 / 2 - offset."""
    return (k_read_mag + k_write_mag) * theta ** 2 / 2.0 - lambda_offset


def readout_angle_for_axis(theta_write: float, ratio: float = READOUT_TILT_RATIO) -> float:
    """Read-beam tilt that sends the retrieved photon along the axis."""
    return ratio * theta_write


def readout_geometry(theta_write: float, write_wavelength: float = 795e-9,
                     scattered_wavelength: float = 780e-9,
                     read_wavelength: float = 795e-9) -> Tuple[WaveVector3, ...]:
    """
    Wavevectors (k_w, k_in, k_r, k_out) of the write/readout sequence.

    The write beam runs along z, the scattered photon leaves at theta_write
    and the read beam is tilted by `readout_angle_for_axis`.
    """
    k_w = WaveVector3(0.0, 0.0, 2.0 * math.pi / write_wavelength)
    k_in = WaveVector3.tilted(2.0 * math.pi / scattered_wavelength, theta_write)
    ratio = read_wavelength / scattered_wavelength
    k_r = WaveVector3.tilted(2.0 * math.pi / read_wavelength,
                             readout_angle_for_axis(theta_write, ratio))
    k_out = k_w - k_in + k_r
    return k_w, k_in, k_r, k_out
