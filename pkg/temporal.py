"""
Temporal-mode optics.

Wigner functions of envelopes, ABCD (ray) transforms acting on
(time, frequency / carrier) phase space, quadratic-phase lenses and
propagation, and the gradient-echo far-field spectrometer built on top of
the Maxwell-Bloch solver.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator

from core import (MHZ, RB87_D1, ComplexEnvelope, ExcitedLevel, Grid1D, ResolutionError,
                  Transition, UndefinedResultError, ValidationError, dft, idft)
from mb_solver import (CouplingDrive, GradientSchedule, MemoryState, StepRabi,
                       light_shift, make_config, run_memory)
from ssm import imprint_phase, phase_mask_from_phase

logger = logging.getLogger(__name__)

# Fraction of the peak above which an envelope sample counts as support
SUPPORT_LEVEL = 1e-6
MIN_POINTS_PER_FRINGE = 4.0
RECTANGULAR_RESOLUTION = 0.89

# Chirp of the coupling beam at the reference operating point (see DESIGN.md)
DEFAULT_CHIRP = 2.0 * math.pi * 0.04e6 / 1e-6


@dataclass(frozen=True, eq=False)
class WignerMap:
    """
    Wigner quasi-distribution sampled on (x, k).

    Args:
        values: Real array, rows over x and columns over k
        axis_kind: 'space' or 'time'
        x: Direct-space sample points
        k: Conjugate sample points
    """

    values: np.ndarray
    axis_kind: str
    x: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        if self.axis_kind not in ('space', 'time'):
            raise ValidationError(f"axis_kind must be 'space' or 'time', got {self.axis_kind}")
        if self.values.shape != (self.x.size, self.k.size):
            raise ValidationError("Wigner values do not match the axes")
        total = self.total()
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"Wigner map integrates to {total:.9f}, not 1")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dk(self) -> float:
        return float(self.k[1] - self.k[0])

    def total(self) -> float:
        return float(np.sum(self.values)) * self.dx * self.dk

    def x_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=1) * self.dk

    def k_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=0) * self.dx


def wigner(env: ComplexEnvelope) -> WignerMap:
    """
    W(x, k) = (1/2pi) int A(x + y/2) A*(x - y/2) exp(-i k y) dy.

    The envelope is normalised first. Lags y run over even multiples of the
    grid step, so the k axis spans +-pi/(2 dx) with step pi/(N dx).
    """
    norm = env.norm()
    if norm == 0:
        raise UndefinedResultError("zero-norm envelope has no Wigner function")
    a = env.values / norm
    n = env.grid.count
    dx = env.grid.step
    lags = np.fft.ifftshift(np.arange(-(n // 2), n - n // 2))
    index = np.arange(n)[:, None]
    plus = index + lags[None, :]
    minus = index - lags[None, :]
    valid = (plus >= 0) & (plus < n) & (minus >= 0) & (minus < n)
    # The unpaired most negative lag would break Hermitian symmetry
    valid &= lags[None, :] != -(n // 2)
    products = np.where(valid, a[np.clip(plus, 0, n - 1)] * np.conj(a[np.clip(minus, 0, n - 1)]), 0.0)
    values = np.fft.fftshift(np.fft.fft(products, axis=1), axes=1).real * dx / math.pi
    k = math.pi / (n * dx) * np.arange(-(n // 2), n - n // 2)
    kind = 'time' if env.kind.endswith('signal-in-time') else 'space'
    return WignerMap(values, kind, env.grid.points(), k)


@dataclass(frozen=True)
class RayTransform:
    """2x2 symplectic matrix acting on (x, k / carrier)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        scale = max(1.0, abs(self.a * self.d), abs(self.b * self.c))
        if abs(det - 1.0) > 1e-12 * scale:
            raise ValidationError(f"ray transform determinant is {det}, not 1")

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def determinant(self) -> float:
        return self.a * self.d - self.b * self.c

    def apply(self, x, w):
        """Image (x', w') of phase-space points (x, w)."""
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return self.a * x + self.b * w, self.c * x + self.d * w

    def inverse(self) -> 'RayTransform':
        return RayTransform(self.d, -self.b, -self.c, self.a)


def compose(t1: RayTransform, t2: RayTransform) -> RayTransform:
    """Matrix product t1 . t2 (t2 acts first)."""
    m = t1.matrix() @ t2.matrix()
    return RayTransform(*(float(v) for v in m.ravel()))


def lens(f: float) -> RayTransform:
    if f == 0:
        raise ValidationError("focal length must be nonzero")
    return RayTransform(1.0, 0.0, -1.0 / f, 1.0)


def propagation(d: float) -> RayTransform:
    return RayTransform(1.0, d, 0.0, 1.0)


def resample_wigner(w: WignerMap, transform: RayTransform, carrier: float) -> np.ndarray:
    """W'(x, k) = W(T^-1 (x, k / carrier)) evaluated on the same grid."""
    interpolator = RegularGridInterpolator((w.x, w.k), w.values, bounds_error=False,
                                           fill_value=0.0)
    xx, kk = np.meshgrid(w.x, w.k, indexing='ij')
    src_x, src_w = transform.inverse().apply(xx, kk / carrier)
    points = np.stack([src_x.ravel(), (src_w * carrier).ravel()], axis=-1)
    return interpolator(points).reshape(xx.shape)


def _support_edge(values: np.ndarray, coords: np.ndarray) -> float:
    magnitude = np.abs(values)
    peak = float(np.max(magnitude)) if magnitude.size else 0.0
    if peak == 0:
        return 0.0
    return float(np.max(np.abs(coords[magnitude >= SUPPORT_LEVEL * peak])))


def apply_quadratic_phase(env: ComplexEnvelope, kind: str, value: float,
                          carrier: float) -> ComplexEnvelope:
    """
    Apply a lens (kind='lens', value=f) or a propagation (kind='propagation', value=d).

    A lens multiplies exp(-i carrier x^2 / (2 f)) in direct space; a
    propagation multiplies exp(-i d k^2 / (2 carrier)) in transform space.
    The phase must keep at least four samples per fringe at the edge of
    the envelope support.
    """
    if carrier == 0:
        raise ValidationError("carrier must be nonzero")
    grid = env.grid
    if kind == 'lens':
        if value == 0:
            raise ValidationError("focal length must be nonzero")
        if math.isinf(value):
            return env
        x = grid.points()
        local = abs(carrier / value) * _support_edge(env.values, x)
        if local > 2.0 * math.pi / (MIN_POINTS_PER_FRINGE * grid.step):
            raise ResolutionError(
                f"lens phase aliases: {local:.3g} rad per unit exceeds the sampling bound")
        return ComplexEnvelope(grid, env.values * np.exp(-1j * carrier * x ** 2 / (2.0 * value)),
                               env.kind)
    if kind == 'propagation':
        if value == 0:
            return env
        spectrum = dft(env)
        k = spectrum.grid.points()
        local = abs(value / carrier) * _support_edge(spectrum.values, k)
        if local > 2.0 * math.pi / (MIN_POINTS_PER_FRINGE * spectrum.grid.step):
            raise ResolutionError(
                f"propagation phase aliases: shift {local:.3g} exceeds the sampling bound")
        moved = ComplexEnvelope(spectrum.grid,
                                spectrum.values * np.exp(-1j * value * k ** 2 / (2.0 * carrier)),
                                spectrum.kind)
        return idft(moved, grid, env.kind)
    raise ValidationError(f"unknown quadratic phase kind '{kind}'")


@dataclass(frozen=True)
class SpectrometerDesign:
    """
    Gradient-echo spectrometer parameters.

    Args:
        beta: Zeeman-shift gradient in rad/s per m
        cloud_length: Cloud length L in m
        chirp: Coupling chirp alpha in rad/s^2
        coupling_rabi: Coupling Rabi frequency in rad/s
        detuning: Single-photon detuning in rad/s
        gamma: Excited-state decay rate in rad/s
        od: Optical depth
        transition: Signal transition (sets omega0 for the focal length)
    """

    beta: float
    cloud_length: float
    chirp: float
    coupling_rabi: float
    detuning: float
    gamma: float
    od: float
    transition: Transition = RB87_D1

    def __post_init__(self):
        if self.beta == 0:
            raise ValidationError("gradient beta must be nonzero")
        if self.chirp == 0:
            raise ValidationError("chirp must be nonzero")
        if self.cloud_length <= 0 or self.gamma <= 0 or self.od < 0:
            raise ValidationError("cloud length and gamma must be positive, od non-negative")

    @classmethod
    def operating_point(cls) -> 'SpectrometerDesign':
        """Operating point of the spectrometer experiment."""
        return cls(beta=2.0 * math.pi * 1.7e6 / 1e-2, cloud_length=1e-2, chirp=DEFAULT_CHIRP,
                   coupling_rabi=4.7 * MHZ, detuning=70.0 * MHZ, gamma=RB87_D1.gamma, od=76.0)

    def bandwidth(self) -> float:
        return abs(self.beta) * self.cloud_length

    def lifetime(self) -> float:
        return 4.0 * self.detuning ** 2 / (self.gamma * self.coupling_rabi ** 2)


def memory_efficiency(od: float, time_bandwidth: float) -> float:
    """eta0 = (1 - exp(-2 pi OD / (tau B)))^2."""
    if time_bandwidth <= 0:
        raise ValidationError("time-bandwidth product must be positive")
    return (1.0 - math.exp(-2.0 * math.pi * od / time_bandwidth)) ** 2


def gem_efficiency(od: float, time_bandwidth: float) -> float:
    """
    Lossless gradient-echo efficiency (1 - exp(-pi OD / (2 tau B)))^2.

    This is the law the Maxwell-Bloch solver obeys, with OD the resonant
    intensity optical depth and tau = 4 Delta^2 / (Gamma Omega_c^2) setting
    the Raman coupling. The exponent is a quarter of the one in
    `memory_efficiency`, so gem_efficiency(4 OD, tb) == memory_efficiency(OD, tb).
    """
    if time_bandwidth <= 0:
        raise ValidationError("time-bandwidth product must be positive")
    return (1.0 - math.exp(-0.5 * math.pi * od / time_bandwidth)) ** 2


def design_report(d: SpectrometerDesign) -> Dict[str, float]:
    """
    Derived figures of merit of a spectrometer design.

    Returns:
        Dict with bandwidth, tau, tau_max, resolution, focal, pixels, eta0,
        the solver-convention eta0_solver and a crossover flag (1.0 when tau
        and tau_max are within a factor 2)
    """
    bandwidth = d.bandwidth()
    tau = d.lifetime()
    tau_max = bandwidth / abs(d.chirp)
    resolution = max(2.0 * math.pi * RECTANGULAR_RESOLUTION / tau_max, 1.0 / tau)
    crossover = 0.5 <= tau / tau_max <= 2.0
    pixels = tau * bandwidth
    return {
        'bandwidth': bandwidth,
        'tau': tau,
        'tau_max': tau_max,
        'resolution': resolution,
        'resolution_crossover': float(crossover),
        'focal': d.transition.omega0 / abs(d.chirp),
        'pixels': pixels,
        'eta0': memory_efficiency(d.od, pixels),
        'eta0_solver': gem_efficiency(d.od, pixels),
    }


def spectral_efficiency(design: SpectrometerDesign, density: np.ndarray, grid: Grid1D):
    """
    eta0(omega) of a non-uniform cloud from the local OD per unit bandwidth.

    The frequency omega is stored at z = omega / beta; a uniform cloud of
    length L gives the flat value of `memory_efficiency`.

    Returns:
        Tuple (omegas, eta)
    """
    density = np.asarray(density, dtype=float)
    column = float(np.sum(density)) * grid.step
    if column <= 0:
        raise ValidationError("density profile is empty")
    local = design.od * density / column
    tau = design.lifetime()
    eta = (1.0 - np.exp(-2.0 * math.pi * local / (tau * abs(design.beta)))) ** 2
    omegas = design.beta * grid.points()
    order = np.argsort(omegas)
    return omegas[order], eta[order]


def fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum with linear interpolation of the crossings."""
    half = float(np.max(y)) / 2.0
    above = np.where(y >= half)[0]
    if above.size == 0 or half <= 0:
        raise UndefinedResultError("curve has no half-maximum crossing")
    lo, hi = above[0], above[-1]
    left = x[lo] if lo == 0 else np.interp(half, [y[lo - 1], y[lo]], [x[lo - 1], x[lo]])
    right = x[hi] if hi == y.size - 1 else np.interp(half, [y[hi + 1], y[hi]], [x[hi + 1], x[hi]])
    return float(right - left)


def mean_efficiency(omegas: np.ndarray, eta: np.ndarray) -> float:
    """(1/B) int eta(omega) d omega with B the FWHM of eta."""
    width = fwhm(omegas, eta)
    if width <= 0:
        raise UndefinedResultError("efficiency curve has zero width")
    return float(trapezoid(eta, omegas)) / width


def _map_cell(args) -> float:
    bandwidth, inverse_tau, od, length, sigma, count = args
    grid = Grid1D.centered(2.0 * length, count)
    density = np.exp(-grid.points() ** 4 / (4.0 * sigma ** 4))
    gamma = RB87_D1.gamma
    detuning = 70.0 * MHZ
    rabi = math.sqrt(4.0 * detuning ** 2 * inverse_tau / gamma)
    design = SpectrometerDesign(beta=bandwidth / length, cloud_length=length, chirp=DEFAULT_CHIRP,
                                coupling_rabi=rabi, detuning=detuning, gamma=gamma, od=od)
    return mean_efficiency(*spectral_efficiency(design, density, grid))


def efficiency_map(bandwidths: Sequence[float], inverse_taus: Sequence[float], od: float,
                   length: float = 1e-2, sigma: Optional[float] = None, count: int = 512,
                   jobs: int = 1) -> np.ndarray:
    """
    Mean efficiency over a (bandwidth, 1/tau) grid for a super-Gaussian cloud.

    Args:
        bandwidths: Nominal bandwidths beta * L in rad/s
        inverse_taus: Spin-wave decay rates 1/tau in 1/s
        od: Optical depth
        length: Cloud FWHM length in m
        sigma: Super-Gaussian width; defaults to the value whose FWHM is `length`
        count: Grid points across twice the cloud length
        jobs: Worker processes

    Returns:
        Array with rows over bandwidths and columns over 1/tau
    """
    if sigma is None:
        sigma = length / (2.0 * (4.0 * math.log(2.0)) ** 0.25)
    cells = [(b, it, od, length, sigma, count) for b in bandwidths for it in inverse_taus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_map_cell, cells))
    else:
        values = [_map_cell(cell) for cell in cells]
    return np.array(values).reshape(len(bandwidths), len(inverse_taus))


def fringe_frequency(trace: np.ndarray, times: np.ndarray, min_frequency: Optional[float] = None,
                     padding: int = 8) -> float:
    """
    Dominant fringe frequency (Hz) of a real trace.

    FFT of the mean-subtracted trace, zero-padded, with a parabolic fit
    around the highest bin above `min_frequency`.
    """
    trace = np.asarray(trace, dtype=float)
    dt = float(times[1] - times[0])
    window = dt * trace.size
    if min_frequency is None:
        min_frequency = 1.5 / window
    n = padding * trace.size
    power = np.abs(np.fft.rfft(trace - trace.mean(), n=n)) ** 2
    freqs = np.fft.rfftfreq(n, dt)
    allowed = np.where(freqs >= min_frequency)[0]
    if allowed.size < 3:
        raise UndefinedResultError("trace too short for a fringe estimate")
    i = int(allowed[np.argmax(power[allowed])])
    if 0 < i < power.size - 1:
        y0, y1, y2 = power[i - 1], power[i], power[i + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    return float((i + shift) * (freqs[1] - freqs[0]))


def predicted_fringe_frequency(delta_t: float, chirp: float) -> float:
    """Output fringe frequency |alpha| delta_t / (2 pi) for two pulses delta_t apart."""
    return abs(chirp) * delta_t / (2.0 * math.pi)


def fit_lifetime(energies, delays) -> float:
    """
    Exponential decay time from a least-squares fit of log(E) against delay.

    Args:
        energies: Positive retrieved energies
        delays: Storage times in s

    Returns:
        Decay time in s
    """
    energies = np.asarray(energies, dtype=float)
    delays = np.asarray(delays, dtype=float)
    if energies.size < 3 or energies.size != delays.size:
        raise ValidationError("at least 3 (energy, delay) samples are required")
    if np.any(energies <= 0):
        raise ValidationError("energies must be positive")
    slope, _ = np.polyfit(delays, np.log(energies), 1)
    if slope >= 0:
        raise UndefinedResultError("energies do not decay")
    return float(-1.0 / slope)


@dataclass(eq=False)
class SpectrometerResult:
    readout: ComplexEnvelope
    kspace_history: np.ndarray
    kspace_times: np.ndarray
    efficiency: float
    report: Dict[str, float] = field(default_factory=dict)

    def output_trace(self, flip_time: float):
        """(tau', |readout|^2) after the flip with tau' = t - 2 T."""
        times = self.readout.grid.points()
        mask = times >= flip_time
        return times[mask] - 2.0 * flip_time, np.abs(self.readout.values[mask]) ** 2


def _kspace_rows(snapshots: np.ndarray) -> np.ndarray:
    return np.abs(np.fft.fftshift(np.fft.fft(snapshots, axis=1), axes=1))


def run_spectrometer(design: SpectrometerDesign, input_signal: ComplexEnvelope, ens,
                     tr: Transition, flip_time: float, stage2_duration: float = 3e-6,
                     reference_time: Optional[float] = None) -> SpectrometerResult:
    """
    Three-stage far-field spectrometer.

    (1) Write under gradient -beta with the coupling detuning swept at
    `design.chirp`, (2) coupling off, Fresnel spin-wave phase
    -beta^2 z^2 / (2 alpha) imprinted and gradient flipped to +beta,
    (3) unchirped readout. The output around t = 2T is the spectrum of
    the input, |out(t - 2T)| = |A~(alpha (t - 2T))|.

    Args:
        design: Spectrometer parameters
        input_signal: Signal Rabi frequency over the whole run
        ens: Atomic ensemble on a z grid centred on the cloud
        tr: Signal transition
        flip_time: End of the write stage T in s
        stage2_duration: Dark time between the flip and the readout in s
        reference_time: Centre of the time lens; defaults to the input centroid

    Returns:
        SpectrometerResult with the readout over the full run
    """
    grid = input_signal.grid
    split = int(round(flip_time / grid.step))
    if not 1 < split < grid.count - 1:
        raise ValidationError("flip time must lie inside the signal grid")
    times = grid.points()
    if reference_time is None:
        weights = np.abs(input_signal.values[:split]) ** 2
        if weights.sum() <= 0:
            raise UndefinedResultError("input signal is empty before the flip")
        reference_time = float(np.sum(times[:split] * weights) / weights.sum())
    write_grid = Grid1D(0.0, grid.step, split)
    read_grid = Grid1D(0.0, grid.step, grid.count - split)
    write_in = ComplexEnvelope(write_grid, input_signal.values[:split], input_signal.kind)
    read_in = ComplexEnvelope(read_grid, np.zeros(read_grid.count), input_signal.kind)

    shift = float(light_shift((ExcitedLevel(design.detuning),),
                              design.coupling_rabi, tr.gamma))
    write_drive = CouplingDrive.constant(design.coupling_rabi, chirp=design.chirp,
                                         two_photon_detuning=design.chirp * reference_time + shift)
    write_cfg = make_config(ens, write_grid, design.detuning,
                            zeeman_gradient=GradientSchedule(((0.0, -design.beta),)))
    written = run_memory(ens, tr, write_drive, write_in, write_cfg, MemoryState.empty(ens.grid))

    z = ens.grid.points()
    fresnel = -design.beta ** 2 * z ** 2 / (2.0 * design.chirp)
    mask = phase_mask_from_phase(fresnel[None, :], duration=stage2_duration,
                                 phase_per_intensity=1.0)
    stored = imprint_phase(written.final_state, mask, 0)

    read_drive = CouplingDrive(StepRabi(((stage2_duration, math.inf, design.coupling_rabi),)),
                               two_photon_detuning=shift)
    read_cfg = make_config(ens, read_grid, design.detuning,
                           zeeman_gradient=GradientSchedule(((0.0, design.beta),)))
    read = run_memory(ens, tr, read_drive, read_in, read_cfg, stored)

    output = np.concatenate([written.output_signal.values, read.output_signal.values])
    readout = ComplexEnvelope(grid, output, input_signal.kind)
    history = np.vstack([_kspace_rows(written.snapshots), _kspace_rows(read.snapshots)])
    history_times = np.concatenate([written.snapshot_times, read.snapshot_times + flip_time])
    total_in = float(np.sum(np.abs(input_signal.values) ** 2))
    if total_in <= 0:
        raise UndefinedResultError("no input photons")
    efficiency = float(np.sum(np.abs(read.output_signal.values) ** 2)) / total_in
    logger.info("spectrometer run: efficiency %.3f, lens centre %.3g s", efficiency, reference_time)
    return SpectrometerResult(readout, history, history_times, efficiency, design_report(design))
