"""
Maxwell-Bloch integrator for the off-resonant Raman Lambda memory in the
co-moving frame.

The coherence rho_gh evolves in time and the signal Rabi frequency evolves
in z. Each (dt, dz) cell applies, in order, the local two-photon phase and
gradient phase, the power-broadening decay, the exchange rotation between
atoms and photons, and the single-photon dispersion/absorption of the field.
Cells on one anti-diagonal (i + j = const) are independent, so the grid is
swept one wavefront at a time.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from core import (
    CONSTS, COHERENCE_KIND, SIGNAL_KIND, AtomEnsemble, ComplexEnvelope,
    ConfigError, DimensionError, ExcitedLevel, Grid1D, NumericError,
    SingularEliminationError, Transition, UndefinedResultError,
    ValidationError, dft, photon_factor,
)

logger = logging.getLogger(__name__)

MAX_CELL_ANGLE = 0.1
WEAK_EXCITATION_LIMIT = 0.1
TRANSFER_WARNING = 0.1


class StepRabi:
    """
    Piecewise-constant coupling Rabi frequency.

    Args:
        windows: Sequence of (t_start, t_end, rabi) with rabi in rad/s
    """

    def __init__(self, windows: Sequence[Tuple[float, float, complex]]):
        self.windows = [(float(a), float(b), complex(v)) for a, b, v in windows]

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for start, end, value in self.windows:
            out[(t >= start) & (t < end)] = value
        return out


class ConstantRabi:
    """Coupling Rabi frequency constant in time."""

    def __init__(self, rabi: complex):
        self.rabi = complex(rabi)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return np.full(np.shape(t), self.rabi, dtype=complex)


@dataclass(frozen=True)
class CouplingDrive:
    """
    Coupling beam seen by the memory.

    The two-photon detuning is delta(t) = two_photon_detuning - chirp * t,
    i.e. a coupling carrier swept as omega_S(t) = omega_0S + chirp * t.
    The coupling carries exp(i * wavevector * z) along the cloud.
    """

    rabi: Callable[[np.ndarray], np.ndarray]
    chirp: float = 0.0
    two_photon_detuning: float = 0.0
    wavevector: float = 0.0

    @classmethod
    def constant(cls, rabi: complex, **kwargs) -> 'CouplingDrive':
        return cls(rabi=ConstantRabi(rabi), **kwargs)

    def rabi_at(self, t: np.ndarray) -> np.ndarray:
        values = np.asarray(self.rabi(np.asarray(t, dtype=float)), dtype=complex)
        values = np.broadcast_to(values, np.shape(t)).astype(complex)
        if not np.all(np.isfinite(values)):
            raise ValidationError("coupling Rabi frequency must be finite")
        return values

    def detuning_at(self, t: np.ndarray) -> np.ndarray:
        return self.two_photon_detuning - self.chirp * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class GradientSchedule:
    """Zeeman-shift gradient beta(t) in rad/s per m; delta(z) = beta * z."""

    segments: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        segments = tuple((float(t0), float(beta)) for t0, beta in self.segments)
        object.__setattr__(self, 'segments', segments)
        starts = [t0 for t0, _ in segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("gradient segments must be strictly time-ordered")

    def beta_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not self.segments:
            return np.zeros(t.shape)
        starts = np.array([s for s, _ in self.segments])
        betas = np.array([b for _, b in self.segments])
        index = np.searchsorted(starts, t, side='right') - 1
        return np.where(index >= 0, betas[np.clip(index, 0, None)], 0.0)


@dataclass(frozen=True)
class SolverConfig:
    """
    Numerical and physical settings of one memory run.

    Args:
        detuning: Single-photon detuning in rad/s
        dt: Time step in s
        dz: Space step in m
        t_span: Simulated duration in s
        include_spont_loss: Keep Gamma in the loss channels
        zeeman_gradient: Optional gradient schedule
        levels: Excited levels; defaults to one level at `detuning`
        strang: Symmetrise the local phase/decay around the exchange
        snapshot_every: Record the coherence every n slices (0 = ~100 snapshots)
        snapshot_times: Extra times at which the coherence is recorded
    """

    detuning: float
    dt: float
    dz: float
    t_span: float
    include_spont_loss: bool = True
    zeeman_gradient: Optional[GradientSchedule] = None
    levels: Optional[Tuple[ExcitedLevel, ...]] = None
    strang: bool = False
    snapshot_every: int = 0
    snapshot_times: Tuple[float, ...] = ()

    def excited_levels(self) -> Tuple[ExcitedLevel, ...]:
        if self.levels:
            return tuple(self.levels)
        return (ExcitedLevel(self.detuning, 1.0),)


@dataclass(frozen=True, eq=False)
class MemoryState:
    """Stored coherence rho_gh over z at a given time."""

    coherence: ComplexEnvelope
    time: float = 0.0

    def __post_init__(self):
        if self.coherence.kind != COHERENCE_KIND:
            raise DimensionError("memory state needs a coherence-in-z envelope")
        peak = float(np.max(np.abs(self.coherence.values)))
        if peak > 1.0:
            raise ValidationError(f"|rho_gh| = {peak:.3g} exceeds 1")
        if peak > WEAK_EXCITATION_LIMIT:
            logger.warning("coherence %.3g is past the weak-excitation regime", peak)

    @classmethod
    def empty(cls, grid: Grid1D) -> 'MemoryState':
        return cls(ComplexEnvelope(grid, np.zeros(grid.count), COHERENCE_KIND))

    @classmethod
    def from_values(cls, grid: Grid1D, values: np.ndarray, time: float = 0.0) -> 'MemoryState':
        return cls(ComplexEnvelope(grid, values, COHERENCE_KIND), time)


@dataclass(eq=False)
class Trajectory:
    """Result of `run_memory`."""

    times: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    output_signal: ComplexEnvelope
    input_signal: ComplexEnvelope
    atom_excitation: np.ndarray
    photons_in: np.ndarray
    photons_out: np.ndarray
    initial_atoms: float
    lossless: bool
    final_state: MemoryState
    max_coherence: float
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def total_excitation(self) -> np.ndarray:
        """Atoms + photons already emitted + photons still to be injected, per slice."""
        pending = self.photons_in[-1] - self.photons_in
        return self.atom_excitation + self.photons_out + pending

    def snapshot_at(self, t: float) -> ComplexEnvelope:
        index = int(np.argmin(np.abs(self.snapshot_times - t)))
        grid = self.final_state.coherence.grid
        return ComplexEnvelope(grid, self.snapshots[index], COHERENCE_KIND)

    def efficiency(self, after: float = -math.inf) -> float:
        """Photons leaving after `after` divided by all injected photons."""
        if self.photons_in[-1] <= 0:
            raise UndefinedResultError("no input photons")
        out = np.abs(self.output_signal.values) ** 2
        mask = self.times >= after
        total_out = float(np.sum(out[mask]))
        total_in = float(np.sum(np.abs(self.input_signal.values) ** 2))
        return total_out / total_in


def adiabatic_optical_coherences(rho_gh: complex, omega_s: complex, omega_c: complex,
                                 delta: float, gamma: float) -> Tuple[complex, complex]:
    """
    Optical coherences after adiabatic elimination of the excited state.

    Args:
        rho_gh: Ground-state coherence
        omega_s: Signal Rabi frequency
        omega_c: Coupling Rabi frequency
        delta: Single-photon detuning in rad/s
        gamma: Excited-state decay rate in rad/s

    Returns:
        Tuple (rho_ge, rho_he)
    """
    if delta == 0:
        raise SingularEliminationError("adiabatic elimination needs a nonzero detuning")
    if abs(delta) < 10.0 * gamma:
        logger.warning("detuning %.3g is below 10 Gamma, elimination is approximate", delta)
    denominator = 2.0 * delta - 1j * gamma
    rho_ge = 1j * (np.conj(omega_s) + np.conj(omega_c) * rho_gh) / denominator
    rho_he = 1j * np.conj(omega_s) * np.conj(rho_gh) / denominator
    return rho_ge, rho_he


def step_rotation(u_at, u_ph, alpha):
    """Exchange rotation between rescaled atomic and photonic amplitudes."""
    cos_a = np.cos(alpha)
    sin_a = np.sin(alpha)
    return cos_a * u_at + sin_a * u_ph, -sin_a * u_at + cos_a * u_ph


def exchange_coefficient(levels: Sequence[ExcitedLevel]) -> float:
    """Sum of w_l / (4 Delta_l); the exchange angle is |Omega_c| times this times the cell scale."""
    return float(sum(level.weight / (4.0 * level.detuning) for level in levels))


def light_shift(levels: Sequence[ExcitedLevel], rabi_abs, gamma: float):
    """Coupling-induced ac-Stark shift delta_acS = -sum w Delta |Omega_c|^2 / (Gamma^2 + 4 Delta^2)."""
    rabi_sq = np.abs(rabi_abs) ** 2
    return -sum(level.weight * level.detuning * rabi_sq / (gamma ** 2 + 4.0 * level.detuning ** 2)
                for level in levels)


def power_broadening(levels: Sequence[ExcitedLevel], rabi_abs, gamma: float):
    """Coherence decay rate gamma = sum w (Gamma/2) |Omega_c|^2 / (Gamma^2 + 4 Delta^2)."""
    rabi_sq = np.abs(rabi_abs) ** 2
    return sum(level.weight * 0.5 * gamma * rabi_sq / (gamma ** 2 + 4.0 * level.detuning ** 2)
               for level in levels)


def field_self_rate(levels: Sequence[ExcitedLevel], gamma: float) -> complex:
    """sum w / (2 Delta + i Gamma) multiplying -i g n on the field side."""
    return complex(sum(level.weight / (2.0 * level.detuning + 1j * gamma) for level in levels))


def coherence_source(levels: Sequence[ExcitedLevel], omega_s, omega_c, gamma: float):
    """Two-photon source (i/2) Omega_s* Omega_c sum w / (2 Delta - i Gamma)."""
    total = sum(level.weight / (2.0 * level.detuning - 1j * gamma) for level in levels)
    return 0.5j * np.conj(omega_s) * omega_c * total


def absorption_factor(od: float, delta: float, gamma: float) -> float:
    """Transmitted amplitude exp(-Gamma^2 OD / (2 Gamma^2 + 8 Delta^2))."""
    return math.exp(-gamma ** 2 * od / (2.0 * gamma ** 2 + 8.0 * delta ** 2))


def max_cell_angle(ens: AtomEnsemble, tr: Transition, drive: CouplingDrive,
                   cfg: SolverConfig, times: np.ndarray) -> float:
    """Largest per-cell exchange angle over the run."""
    rabi_max = float(np.max(np.abs(drive.rabi_at(times)))) if times.size else 0.0
    cell_scale = np.sqrt(ens.density * ens.grid.step * cfg.dt / photon_factor(tr))
    return rabi_max * abs(exchange_coefficient(cfg.excited_levels())) * float(np.max(cell_scale))


def _check_config(ens: AtomEnsemble, tr: Transition, input_signal: ComplexEnvelope,
                  cfg: SolverConfig, initial: MemoryState):
    if input_signal.kind != SIGNAL_KIND:
        raise DimensionError("input signal must be a signal-in-time envelope")
    tgrid = input_signal.grid
    if abs(cfg.dt - tgrid.step) > 1e-9 * tgrid.step:
        raise ConfigError(f"dt {cfg.dt} does not match the input grid step {tgrid.step}")
    if abs(cfg.t_span - tgrid.span) > 1e-6 * tgrid.span:
        raise ConfigError("input signal is not defined on the t_span grid")
    if abs(cfg.dz - ens.grid.step) > 1e-9 * ens.grid.step:
        raise ConfigError(f"dz {cfg.dz} does not match the ensemble grid step {ens.grid.step}")
    if not initial.coherence.grid.same_as(ens.grid):
        raise DimensionError("initial coherence grid does not match the ensemble grid")
    for level in cfg.excited_levels():
        if level.detuning == 0:
            raise SingularEliminationError("excited-level detuning is zero")
        if abs(level.detuning) < 10.0 * tr.gamma:
            raise ConfigError(
                f"|detuning| {abs(level.detuning):.3g} rad/s is below 10 Gamma")


def _snapshot_rows(cfg: SolverConfig, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    nt = times.size
    every = cfg.snapshot_every or max(1, nt // 100)
    picked = set(range(every - 1, nt, every))
    picked.add(nt - 1)
    for t in cfg.snapshot_times:
        picked.add(int(np.clip(np.argmin(np.abs(times - t)), 0, nt - 1)))
    ordered = np.array(sorted(picked), dtype=int)
    rows = np.full(nt, -1, dtype=int)
    rows[ordered] = np.arange(ordered.size)
    return rows, ordered


def run_memory(ens: AtomEnsemble, tr: Transition, drive: CouplingDrive,
               input_signal: ComplexEnvelope, cfg: SolverConfig,
               initial: MemoryState) -> Trajectory:
    """
    March the Maxwell-Bloch system over the full (t, z) grid.

    Args:
        ens: Atomic ensemble (defines the z grid)
        tr: Signal transition
        drive: Coupling beam
        input_signal: Signal Rabi frequency at the cloud entrance (defines the t grid)
        cfg: Solver configuration
        initial: Coherence at the first time slice

    Returns:
        Trajectory with coherence snapshots, output signal and diagnostics
    """
    _check_config(ens, tr, input_signal, cfg, initial)
    times = input_signal.grid.points()
    angle = max_cell_angle(ens, tr, drive, cfg, times)
    if angle > MAX_CELL_ANGLE:
        raise ConfigError(
            f"per-cell rotation angle {angle:.3g} rad exceeds {MAX_CELL_ANGLE} rad")

    levels = cfg.excited_levels()
    gamma = tr.gamma if cfg.include_spont_loss else 0.0
    nz, nt = ens.grid.count, times.size
    z = ens.grid.points()
    dt, dz = cfg.dt, cfg.dz
    logger.debug("memory run on %d x %d cells, max cell angle %.3g", nz, nt, angle)

    # Rescaled amplitudes: u_at = c_at * rho, u_ph = c_ph * conj(Omega_s)
    pf = photon_factor(tr)
    c_at = np.exp(-0.25j * math.pi) * np.sqrt(ens.density * dz)
    c_ph = np.exp(0.25j * math.pi) * math.sqrt(pf * dt)
    has_atoms = ens.density > 0
    safe_c_at = np.where(has_atoms, c_at, 1.0)
    cell_scale = np.sqrt(ens.density * dz * dt / pf)
    exch = exchange_coefficient(levels)
    coupling_strength = tr.k0 * tr.dipole ** 2 / (CONSTS.hbar * CONSTS.eps0)
    self_factor = np.exp(-1j * coupling_strength * ens.density * dz * field_self_rate(levels, gamma))

    rabi_t = drive.rabi_at(times)
    rabi_abs = np.abs(rabi_t)
    rabi_phase = np.angle(rabi_t)
    stark_t = light_shift(levels, rabi_abs, gamma)
    decay_t = power_broadening(levels, rabi_abs, gamma) * np.ones(nt)
    detuning_t = drive.detuning_at(times)
    beta_t = cfg.zeeman_gradient.beta_at(times) if cfg.zeeman_gradient else np.zeros(nt)
    local_scale = 0.5 if cfg.strang else 1.0

    rho = np.array(initial.coherence.values, dtype=complex)
    carry = np.zeros(nz + 1, dtype=complex)
    signal_in = np.asarray(input_signal.values)
    output = np.zeros(nt, dtype=complex)
    atom_sum = np.zeros(nt)
    snap_rows, snap_index = _snapshot_rows(cfg, times)
    snapshots = np.zeros((snap_index.size, nz), dtype=complex)
    peak = float(np.max(np.abs(rho)))
    area = ens.cross_section
    initial_atoms = area * float(np.sum(np.abs(c_at * rho) ** 2))

    for s in range(nt + nz - 1):
        i_lo = max(0, s - nt + 1)
        i_hi = min(nz - 1, s)
        cells = slice(i_lo, i_hi + 1)
        js = s - np.arange(i_lo, i_hi + 1)
        if i_lo == 0:
            carry[0] = signal_in[s]
        omega_s = carry[i_lo:i_hi + 1].copy()
        r = rho[cells]
        zc = z[cells]

        exponent = (-1j * (detuning_t[js] + beta_t[js] * zc - stark_t[js]) - decay_t[js]) * dt
        local = np.exp(local_scale * exponent)
        r = r * local

        # Exchange, with the coupling phase moved onto the photon amplitude
        phase = np.exp(1j * (rabi_phase[js] + drive.wavevector * zc))
        u_at = c_at[cells] * r
        u_ph = phase * c_ph * np.conj(omega_s)
        alpha = rabi_abs[js] * exch * cell_scale[cells]
        u_at, u_ph = step_rotation(u_at, u_ph, alpha)
        r = np.where(has_atoms[cells], u_at / safe_c_at[cells], r)
        omega_s = np.conj(u_ph / (phase * c_ph)) * self_factor[cells]

        if cfg.strang:
            r = r * local
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(omega_s))):
            raise NumericError(
                f"non-finite values at t index {int(js[0])}; last valid slice {s - nz}")

        rho[cells] = r
        carry[i_lo + 1:i_hi + 2] = omega_s
        atom_sum[js] += area * np.abs(c_at[cells] * r) ** 2
        peak = max(peak, float(np.max(np.abs(r))))
        rows = snap_rows[js]
        keep = rows >= 0
        if np.any(keep):
            snapshots[rows[keep], np.arange(i_lo, i_hi + 1)[keep]] = r[keep]
        if i_hi == nz - 1:
            output[s - nz + 1] = carry[nz]

    if peak > 1.0:
        raise NumericError(f"coherence reached {peak:.3g}, outside the weak-excitation model")
    if peak > WEAK_EXCITATION_LIMIT:
        logger.warning("peak coherence %.3g is past the weak-excitation regime", peak)

    photon_step = area * pf * dt
    photons_in = np.cumsum(np.abs(signal_in) ** 2) * photon_step
    photons_out = np.cumsum(np.abs(output) ** 2) * photon_step
    atom_number = ens.atom_number()
    if atom_number > 0 and np.max(atom_sum, initial=0.0) / atom_number > TRANSFER_WARNING:
        logger.warning("population transfer exceeds %.0f%% of the atoms", 100 * TRANSFER_WARNING)

    final = MemoryState(ComplexEnvelope(ens.grid, rho, COHERENCE_KIND), times[-1] + dt)
    out_env = ComplexEnvelope(input_signal.grid, output, SIGNAL_KIND)
    return Trajectory(
        times=times,
        snapshot_times=times[snap_index] + dt,
        snapshots=snapshots,
        output_signal=out_env,
        input_signal=input_signal,
        atom_excitation=atom_sum,
        photons_in=photons_in,
        photons_out=photons_out,
        initial_atoms=initial_atoms,
        lossless=not cfg.include_spont_loss,
        final_state=final,
        max_coherence=peak,
        diagnostics={'max_cell_angle': angle, 'cells': float(nz * nt)},
    )


def conservation_residual(traj: Trajectory) -> float:
    """
    Maximum relative drift of the total excitation number over the run.

    Args:
        traj: Trajectory computed without spontaneous-emission loss

    Returns:
        max |total(t) - total(0)| / total(0)
    """
    if not traj.lossless:
        raise UndefinedResultError("invalid diagnostic: trajectory includes spontaneous loss")
    reference = traj.initial_atoms + traj.photons_in[-1]
    if reference <= 0:
        return 0.0
    return float(np.max(np.abs(traj.total_excitation() - reference)) / reference)


def time_grid(t_span: float, dt: float) -> Grid1D:
    count = int(round(t_span / dt))
    return Grid1D(start=0.0, step=dt, count=count)


def make_config(ens: AtomEnsemble, t_grid: Grid1D, detuning: float, **kwargs) -> SolverConfig:
    """SolverConfig whose steps match the ensemble and time grids."""
    return SolverConfig(detuning=detuning, dt=t_grid.step, dz=ens.grid.step,
                        t_span=t_grid.span, **kwargs)


def pulse_train(grid: Grid1D, centers: Sequence[float], sigma: float,
                amplitudes: Sequence[float], peak_rabi: float) -> ComplexEnvelope:
    """Sum of Gaussian signal pulses with relative amplitudes."""
    t = grid.points()
    values = np.zeros(grid.count, dtype=complex)
    for center, amp in zip(centers, amplitudes):
        values += amp * np.exp(-(t - center) ** 2 / (2.0 * sigma ** 2))
    return ComplexEnvelope(grid, peak_rabi * values, SIGNAL_KIND)


def find_pulses(trace: np.ndarray, times: np.ndarray, start: float = -math.inf,
                rel_prominence: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """Peak times and heights of |trace|^2 after `start`."""
    power = np.abs(trace) ** 2
    mask = times >= start
    window = power[mask]
    if window.size == 0 or window.max() <= 0:
        return np.array([]), np.array([])
    peaks, _ = find_peaks(window, prominence=rel_prominence * window.max())
    return times[mask][peaks], window[peaks]


def kspace_correlation(coherence: ComplexEnvelope, signal: ComplexEnvelope,
                       flip_time: float, write_beta: float, max_lag: int = 8) -> float:
    """
    Peak normalised cross-correlation between |rho~(K)| and |A(t)| mapped by t = T + K/beta.

    Args:
        coherence: Coherence over z at the flip time
        signal: Written signal
        flip_time: Time T of the gradient flip
        write_beta: Gradient during the write in rad/s per m
        max_lag: Largest lag in K bins searched

    Returns:
        Correlation in [0, 1]
    """
    spectrum = dft(coherence)
    k = spectrum.grid.points()
    mapped_t = flip_time + k / write_beta
    profile = np.interp(mapped_t, signal.grid.points(), np.abs(signal.values), left=0.0, right=0.0)
    image = np.abs(spectrum.values)
    norm = math.sqrt(float(np.sum(image ** 2)) * float(np.sum(profile ** 2)))
    if norm == 0:
        raise UndefinedResultError("empty coherence or signal")
    best = 0.0
    for lag in range(-max_lag, max_lag + 1):
        shifted = np.roll(profile, lag)
        if lag > 0:
            shifted[:lag] = 0.0
        elif lag < 0:
            shifted[lag:] = 0.0
        best = max(best, float(np.sum(image * shifted)) / norm)
    return best


@dataclass
class GemResult:
    """
    Outcome of one gradient-echo cycle.

    Args:
        trajectory: Full solver run over write, flip and readout
        kspace_correlation: Match between |rho~(K)| at the flip and the written pulses
        input_peaks: Written pulse centres in s
        readout_peaks: Echo times found after the flip
        readout_heights: Echo peak powers
        time_reversed: Echoes sit at 2T - t_in in reversed amplitude order
        efficiency: Photons out after the flip over photons in
    """

    trajectory: Trajectory
    kspace_correlation: float
    input_peaks: np.ndarray
    readout_peaks: np.ndarray
    readout_heights: np.ndarray
    time_reversed: bool
    efficiency: float


def gem_cycle(ens: AtomEnsemble, tr: Transition, coupling_rabi: float, detuning: float,
              beta: float, flip_time: float, signal: ComplexEnvelope,
              pulse_centers: Sequence[float], pulse_amplitudes: Sequence[float],
              include_spont_loss: bool = True,
              compensate_light_shift: bool = False) -> GemResult:
    """
    Gradient-echo write, gradient flip and readout under constant coupling.

    The write runs at gradient -beta and the readout at +beta after
    `flip_time`. Readout peaks are time-reversed when they come out in the
    reverse order of the written pulses. With `compensate_light_shift` the
    two-photon detuning cancels the coupling ac-Stark shift, which keeps the
    absorption band centred on the signal carrier.
    """
    grid = signal.grid
    cfg = make_config(ens, grid, detuning,
                      zeeman_gradient=GradientSchedule(((0.0, -beta), (flip_time, beta))),
                      snapshot_times=(flip_time - grid.step,),
                      include_spont_loss=include_spont_loss)
    shift = 0.0
    if compensate_light_shift:
        gamma = tr.gamma if include_spont_loss else 0.0
        shift = float(light_shift(cfg.excited_levels(), abs(coupling_rabi), gamma))
    drive = CouplingDrive.constant(coupling_rabi, two_photon_detuning=shift)
    traj = run_memory(ens, tr, drive, signal, cfg, MemoryState.empty(ens.grid))
    flip = traj.snapshot_at(flip_time)
    corr = kspace_correlation(flip, signal, flip_time, -beta)
    peak_times, heights = find_pulses(traj.output_signal.values, traj.times, start=flip_time)
    order_in = np.argsort(np.argsort(-np.asarray(pulse_amplitudes)))
    reversed_ok = False
    if peak_times.size == len(pulse_centers):
        order_out = np.argsort(np.argsort(-heights))
        expected = [2.0 * flip_time - c for c in pulse_centers]
        timing_ok = np.allclose(np.sort(peak_times), np.sort(expected), atol=2.0e-6)
        reversed_ok = bool(timing_ok and np.array_equal(order_out, order_in[::-1]))
    logger.info("GEM cycle: %d readout peaks, K-space correlation %.3f",
                peak_times.size, corr)
    return GemResult(
        trajectory=traj,
        kspace_correlation=corr,
        input_peaks=np.asarray(pulse_centers, dtype=float),
        readout_peaks=peak_times,
        readout_heights=heights,
        time_reversed=reversed_ok,
        efficiency=traj.efficiency(after=flip_time),
    )


def readout_amplitude(ens: AtomEnsemble, tr: Transition, coupling_rabi: float,
                      detuning: float, delta_k: float, duration: float, steps: int,
                      rho0: float = 1e-3) -> float:
    """|sum of the output field| when reading rho0 * exp(i delta_k z) with a constant coupling."""
    grid = Grid1D(0.0, duration / steps, steps)
    z = ens.grid.points()
    silent = ComplexEnvelope(grid, np.zeros(steps), SIGNAL_KIND)
    cfg = make_config(ens, grid, detuning)
    drive = CouplingDrive.constant(coupling_rabi)
    state = MemoryState.from_values(ens.grid, rho0 * np.exp(1j * delta_k * z))
    traj = run_memory(ens, tr, drive, silent, cfg, state)
    return float(abs(np.sum(traj.output_signal.values)))


def phase_matching_scan(ens: AtomEnsemble, tr: Transition, coupling_rabi: float,
                        detuning: float, delta_ks: Sequence[float], duration: float,
                        steps: int, rho0: float = 1e-3,
                        amplitudes: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Readout amplitude for rho0 * exp(i dk z) over a list of dk.

    Args:
        amplitudes: Precomputed `readout_amplitude` values, one per dk

    Returns:
        Tuple (solver_amplitudes, quadrature_amplitudes), both normalised
        to their value at dk = 0 of the direct source-term integral.
    """
    z = ens.grid.points()
    if amplitudes is None:
        amplitudes = [readout_amplitude(ens, tr, coupling_rabi, detuning, dk, duration, steps, rho0)
                      for dk in delta_ks]
    solver = np.asarray(amplitudes, dtype=float)
    if solver.size != len(delta_ks):
        raise DimensionError("one readout amplitude per dk is required")
    quadrature = np.array([abs(np.sum(ens.density * np.exp(1j * dk * z))) for dk in delta_ks])
    zero = abs(np.sum(ens.density))
    nearest = int(np.argmin(np.abs(np.asarray(delta_ks))))
    ref = solver[nearest] / (quadrature[nearest] / zero)
    if ref <= 0:
        raise UndefinedResultError("no readout at the phase-matched point")
    return solver / ref, quadrature / zero
