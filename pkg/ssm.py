"""
Spatial spin-wave modulator.

Imprints ac-Stark phase masks on a stored coherence, models the readout
loss caused by intensity noise on the mask, the far-field focusing of the
retrieved beam and the interferometric (off-axis) measurement of the
spin-wave phase.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import windows

from core import (ComplexEnvelope, DimensionError, UndefinedResultError,
                  ValidationError)
from mb_solver import MemoryState

logger = logging.getLogger(__name__)

FIDELITY_THRESHOLD = 0.02
MIN_FRINGE_PERIODS = 4.0
# Share of the sideband square energy allowed in its outer half before the
# sidebands are considered overlapping
SIDEBAND_TAIL_LIMIT = 0.25
MC_CHUNKS = 8


@dataclass(frozen=True, eq=False)
class StarkMask:
    """
    Intensity pattern of the Stark beam over (y, z).

    Args:
        intensity: 2D array in W/m^2, rows along y and columns along z
        duration: Exposure time T in s
        phase_per_intensity: Imprinted phase per unit intensity and time, rad/(W/m^2 s)
        noise_rel_sigma: Relative pixelwise intensity noise sigma_I / I_0
    """

    intensity: np.ndarray
    duration: float
    phase_per_intensity: float
    noise_rel_sigma: float = 0.0

    def __post_init__(self):
        intensity = np.atleast_2d(np.asarray(self.intensity, dtype=float))
        if np.any(intensity < 0):
            raise ValidationError("Stark intensity must be non-negative")
        if self.duration < 0:
            raise ValidationError("exposure duration must be non-negative")
        if self.noise_rel_sigma < 0:
            raise ValidationError("noise_rel_sigma must be non-negative")
        object.__setattr__(self, 'intensity', intensity)

    def phase(self) -> np.ndarray:
        return self.phase_per_intensity * self.duration * self.intensity


@dataclass(frozen=True, eq=False)
class FringeImage:
    """
    Camera frame of the retrieved beam interfering with a tilted reference.

    Rows run along y and columns along x; the carrier is in rad/pixel.
    """

    intensity: np.ndarray
    carrier: Tuple[float, float]
    reference_amp: float

    def __post_init__(self):
        intensity = np.asarray(self.intensity, dtype=float)
        if intensity.ndim != 2:
            raise DimensionError("fringe image must be two-dimensional")
        if np.any(intensity < -1e-12 * max(1.0, float(np.max(np.abs(intensity))))):
            raise ValidationError("fringe intensity must be non-negative")
        object.__setattr__(self, 'intensity', np.clip(intensity, 0.0, None))
        object.__setattr__(self, 'carrier', (float(self.carrier[0]), float(self.carrier[1])))


def phase_mask_from_phase(phase, duration: float, phase_per_intensity: float,
                          noise_rel_sigma: float = 0.0) -> StarkMask:
    """Stark mask that imprints `phase` (wrapped into [0, 2 pi))."""
    scale = phase_per_intensity * duration
    if scale <= 0:
        raise ValidationError("phase_per_intensity * duration must be positive")
    wrapped = np.mod(np.atleast_2d(np.asarray(phase, dtype=float)), 2.0 * math.pi)
    return StarkMask(wrapped / scale, duration, phase_per_intensity, noise_rel_sigma)


def fresnel_ramp(z: np.ndarray, slope: float) -> np.ndarray:
    """Sawtooth (2 pi teeth) linear phase slope * z."""
    return np.mod(slope * np.asarray(z, dtype=float), 2.0 * math.pi)


def fresnel_lens(z: np.ndarray, curvature: float) -> np.ndarray:
    """Wrapped quadratic phase curvature * z^2."""
    return np.mod(curvature * np.asarray(z, dtype=float) ** 2, 2.0 * math.pi)


def imprint_phase(state: MemoryState, mask: StarkMask, y_index: int = 0,
                  rng: Optional[np.random.Generator] = None) -> MemoryState:
    """
    Multiply the stored coherence by exp(i phi) taken from one mask row.

    Args:
        state: Stored coherence over z
        mask: Stark mask whose row `y_index` matches the coherence grid
        y_index: Row of the mask that overlaps the stored spin wave
        rng: Generator for the pixel noise; required when noise_rel_sigma > 0

    Returns:
        New memory state
    """
    row = mask.intensity[y_index]
    coherence = state.coherence
    if row.size != coherence.grid.count:
        raise DimensionError(
            f"mask row has {row.size} pixels, coherence grid has {coherence.grid.count}")
    if mask.noise_rel_sigma > 0:
        if rng is None:
            raise ValidationError("noisy imprint needs a seeded generator")
        row = row * (1.0 + mask.noise_rel_sigma * rng.standard_normal(row.size))
    phi = mask.phase_per_intensity * mask.duration * row
    values = coherence.values * np.exp(1j * phi)
    return MemoryState(ComplexEnvelope(coherence.grid, values, coherence.kind), state.time)


def dephasing_envelope(mask: StarkMask, phi0) -> np.ndarray:
    """Readout intensity factor exp(-sigma^2 phi0^2) for noise sigma = noise_rel_sigma."""
    gamma = mask.noise_rel_sigma ** 2
    return np.exp(-gamma * np.asarray(phi0, dtype=float) ** 2)


def monte_carlo_dephasing(phi0: Sequence[float], sigma: float, draws: int,
                          seed: int) -> np.ndarray:
    """
    |<exp(i phi0 (1 + xi))>|^2 with xi ~ N(0, sigma^2), estimated from `draws` samples.

    Draws are split in fixed chunks with sub-seeds spawned from `seed`, so the
    estimate does not depend on how chunks are scheduled.
    """
    children = np.random.SeedSequence(seed).spawn(MC_CHUNKS)
    sizes = [draws // MC_CHUNKS + (1 if i < draws % MC_CHUNKS else 0) for i in range(MC_CHUNKS)]
    noise = np.concatenate([
        sigma * np.random.default_rng(child).standard_normal(size)
        for child, size in zip(children, sizes)
    ])
    phi = np.asarray(phi0, dtype=float)
    means = np.array([np.mean(np.exp(1j * p * noise)) for p in phi])
    return np.abs(means) ** 2


def fit_dephasing_rate(phi0, envelope) -> float:
    """Least-squares slope of -log(envelope) against phi0^2."""
    env = np.asarray(envelope, dtype=float)
    if np.any(env <= 0):
        raise ValidationError("envelope samples must be positive")
    slope, _ = np.polyfit(np.asarray(phi0, dtype=float) ** 2, np.log(env), 1)
    return float(-slope)


def threshold_image(image: np.ndarray, rel: float = FIDELITY_THRESHOLD) -> np.ndarray:
    """Zero every pixel below `rel` times the image maximum."""
    image = np.asarray(image, dtype=float)
    peak = float(np.max(image)) if image.size else 0.0
    return np.where(image >= rel * peak, image, 0.0)


def fidelity(i_d: np.ndarray, i_a: np.ndarray, threshold: float = FIDELITY_THRESHOLD) -> float:
    """
    Shape fidelity F = <sqrt(I_d) sqrt(I_a)> / sqrt(<I_d><I_a>) of two intensity images.

    Args:
        i_d: Desired (reference) image, background-subtracted
        i_a: Acquired image, background-subtracted
        threshold: Relative level under which pixels are set to zero

    Returns:
        Fidelity in [0, 1]
    """
    i_d = np.asarray(i_d, dtype=float)
    i_a = np.asarray(i_a, dtype=float)
    if i_d.shape != i_a.shape:
        raise DimensionError(f"image shapes differ: {i_d.shape} vs {i_a.shape}")
    d = threshold_image(np.clip(i_d, 0.0, None), threshold)
    a = threshold_image(np.clip(i_a, 0.0, None), threshold)
    mean_d = float(np.mean(d))
    mean_a = float(np.mean(a))
    if mean_d <= 0 or mean_a <= 0:
        raise UndefinedResultError("undefined fidelity: image is zero everywhere")
    value = float(np.mean(np.sqrt(d) * np.sqrt(a))) / math.sqrt(mean_d * mean_a)
    return min(1.0, value)


def _pixel_phase(shape: Tuple[int, int], carrier: Tuple[float, float]) -> np.ndarray:
    ny, nx = shape
    y, x = np.mgrid[0:ny, 0:nx]
    return carrier[0] * x + carrier[1] * y


def synthesize_fringes(signal: np.ndarray, reference_amp: float,
                       carrier: Tuple[float, float]) -> FringeImage:
    """Interference |h + A0 exp(i K0 r)|^2 of the retrieved field with a tilted reference."""
    h = np.asarray(signal, dtype=complex)
    if h.ndim != 2:
        raise DimensionError("signal must be a 2D field")
    if reference_amp <= 0:
        raise ValidationError("reference amplitude must be positive")
    ny, nx = h.shape
    periods = math.hypot(carrier[0] * nx, carrier[1] * ny) / (2.0 * math.pi)
    if periods < MIN_FRINGE_PERIODS:
        raise ValidationError(
            f"carrier gives {periods:.2f} fringe periods, at least {MIN_FRINGE_PERIODS:g} needed")
    reference = reference_amp * np.exp(1j * _pixel_phase(h.shape, carrier))
    return FringeImage(np.abs(h + reference) ** 2, carrier, reference_amp)


def _sideband_taper(n: int, center: float, std: float) -> np.ndarray:
    """Gaussian of `std` (rad/pixel) over the fftfreq axis, peaked at the bin nearest `center`."""
    step = 2.0 * math.pi / n
    taper = np.fft.ifftshift(windows.gaussian(n, std / step, sym=bool(n % 2)))
    return np.roll(taper, int(round(center / step)))


def demodulate(img: FringeImage, window: str = 'gaussian') -> np.ndarray:
    """
    Recover the complex field h from a fringe image.

    The +K0 sideband is selected in the square of half-width |K0|/2 around
    the carrier, transformed back and divided by the reference wave. The
    default window is a Gaussian of standard deviation |K0|/4 centred on the
    carrier, which puts the DC term at 4 sigma; window='rect' keeps the hard
    square cut.

    Raises:
        UndefinedResultError: Overlapping or empty sidebands
    """
    if window not in ('gaussian', 'rect'):
        raise ValidationError(f"window must be 'gaussian' or 'rect', got '{window}'")
    ny, nx = img.intensity.shape
    kx0, ky0 = img.carrier
    half = math.hypot(kx0, ky0) / 2.0
    if abs(kx0) + half > math.pi or abs(ky0) + half > math.pi:
        raise UndefinedResultError("demodulation ambiguity: sideband window crosses the Nyquist limit")
    spectrum = np.fft.fft2(img.intensity)
    kx = 2.0 * math.pi * np.fft.fftfreq(nx)
    ky = 2.0 * math.pi * np.fft.fftfreq(ny)
    dkx = np.abs(kx[None, :] - kx0)
    dky = np.abs(ky[:, None] - ky0)
    distance = np.maximum(dkx, dky)
    region = distance <= half
    power = np.abs(spectrum) ** 2
    in_region = float(np.sum(power[region]))
    if in_region <= 0:
        raise UndefinedResultError("demodulation ambiguity: empty sideband")
    tail = float(np.sum(power[region & (distance > half / 2.0)]))
    if tail / in_region > SIDEBAND_TAIL_LIMIT:
        raise UndefinedResultError(
            f"demodulation ambiguity: {tail / in_region:.0%} of the sideband sits at the window edge")
    if window == 'rect':
        weights = region.astype(float)
    else:
        std = half / 2.0
        weights = np.outer(_sideband_taper(ny, ky0, std), _sideband_taper(nx, kx0, std))
    sideband = np.fft.ifft2(spectrum * weights)
    carrier = np.exp(1j * _pixel_phase((ny, nx), img.carrier))
    return np.conj(sideband / (img.reference_amp * carrier))


def fit_focal_length(phase: np.ndarray, y: np.ndarray, wavelength: float) -> float:
    """Focal length f of a lens phase -k y^2 / (2 f) from an unwrapped quadratic fit."""
    unwrapped = np.unwrap(np.asarray(phase, dtype=float))
    a2, _, _ = np.polyfit(np.asarray(y, dtype=float), unwrapped, 2)
    if a2 == 0:
        raise UndefinedResultError("phase profile has no curvature")
    return float(-(2.0 * math.pi / wavelength) / (2.0 * a2))


def farfield_waist(phase_lens_power: float, stark_lens_power: float, cloud_waist: float,
                   wavelength: float, fourier_focal: float = 0.25) -> float:
    """
    1/e^2 radius in the Fourier plane of a Gaussian spin wave with a net lens phase.

    Args:
        phase_lens_power: Power 1/f of the fixed cylindrical lens in 1/m
        stark_lens_power: Power of the imprinted Stark lens in 1/m
        cloud_waist: Spin-wave amplitude radius w (amplitude exp(-y^2/w^2)) in m
        wavelength: Optical wavelength in m
        fourier_focal: Focal length of the Fourier lens in m

    Returns:
        Far-field waist in m
    """
    if cloud_waist <= 0 or wavelength <= 0 or fourier_focal <= 0:
        raise ValidationError("waist, wavelength and focal length must be positive")
    k = 2.0 * math.pi / wavelength
    net = phase_lens_power + stark_lens_power
    limit = wavelength * fourier_focal / (math.pi * cloud_waist)
    return limit * math.sqrt(1.0 + (k * net * cloud_waist ** 2 / 2.0) ** 2)


def farfield_sweep(stark_powers: Sequence[float], phase_lens_power: float, cloud_waist: float,
                   wavelength: float, fourier_focal: float = 0.25) -> np.ndarray:
    """Far-field waist over a sweep of Stark-lens powers."""
    return np.array([farfield_waist(phase_lens_power, p, cloud_waist, wavelength, fourier_focal)
                     for p in stark_powers])
