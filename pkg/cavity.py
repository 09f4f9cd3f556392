"""
Ring-cavity readout of a stored spin wave.

A lumped cavity field Omega_cav(t), uniform over the cloud, is coupled to
the z-resolved coherence rho(z, t). Only the density-weighted uniform
mode of sqrt(n) rho talks to the cavity; every other mode just decays
under the readout beam. The module also carries the loss budget used to
choose the operating point (absorption inside the cavity, power
broadening, thermal motion).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import qr

from core import (CONSTS, GHZ, MHZ, RB87_D1, AtomEnsemble, ComplexEnvelope,
                  ConfigError, DimensionError, ExcitedLevel, Grid1D, NumericError, Transition,
                  ValidationError, COHERENCE_KIND, SIGNAL_KIND, uniform_profile)
from mb_solver import (CouplingDrive, MemoryState, make_config, run_memory,
                       time_grid)

logger = logging.getLogger(__name__)

HYPERFINE_SPLITTING = 814.0 * MHZ
E_LEVEL_RATIO = -1.0 / math.sqrt(3.0)
STEP_BOUND = 0.1
DEFAULT_STEP_FRACTION = 0.02
POLYNOMIAL_LIMIT = 12

# Thermal-motion anchor: 1 degree at 20 uK loses the spin wave in 80 us
THERMAL_ANCHOR = (math.radians(1.0), 20e-6, 80e-6)


def thermal_velocity(temperature: float) -> float:
    """One-dimensional thermal velocity sqrt(kB T / m) of Rb-87 in m/s."""
    if temperature < 0:
        raise ValidationError("temperature must be non-negative")
    return math.sqrt(CONSTS.kB * temperature / CONSTS.rb87_mass)


def _thermal_calibration(write_k: float) -> float:
    theta, temperature, tau = THERMAL_ANCHOR
    return tau * theta * write_k * thermal_velocity(temperature)


@dataclass(frozen=True)
class CavityModel:
    """
    Ring cavity around the cloud.

    Args:
        length: Round-trip length L in m
        mirror_T: Output-coupler transmission T
        readout_rabi: Readout Rabi frequency Omega_r in rad/s
        levels: Excited levels seen by the readout (detuning, dipole ratio)
        lock_to_atoms: Cavity locked on the atom-pulled resonance; the
            dispersive self-term of the cloud is then absent
        include_loss: Keep the Gamma loss channels (False gives the closed system)
        gamma: Optional override of the excited-state decay rate
        cross_section: Mode cross-section in m^2 for photon counts
    """

    length: float = 0.3
    mirror_T: float = 0.01
    readout_rabi: float = 30.0 * MHZ
    levels: Tuple[ExcitedLevel, ...] = ()
    lock_to_atoms: bool = True
    include_loss: bool = True
    gamma: Optional[float] = None
    cross_section: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.mirror_T < 1.0:
            raise ValidationError(f"mirror_T must be in (0, 1), got {self.mirror_T}")
        if not self.length > 0:
            raise ValidationError("cavity length must be positive")
        if not self.levels:
            raise ValidationError("at least one excited level is required")
        for level in self.levels:
            if level.detuning == 0:
                raise ValidationError("excited-level detuning must be nonzero")

    @classmethod
    def operating_point(cls, delta_f: float = 1.0 * GHZ, **kwargs) -> 'CavityModel':
        """30 cm cavity, T = 1 %, readout 2 pi 30 MHz detuned by delta_f from F'=1."""
        return cls(levels=hyperfine_levels(delta_f), **kwargs)

    def with_delta_f(self, delta_f: float) -> 'CavityModel':
        return replace(self, levels=hyperfine_levels(delta_f))

    def decay_rate(self) -> float:
        """Amplitude decay Tc/(2L) through the output coupler."""
        return self.mirror_T * CONSTS.c / (2.0 * self.length)

    def cavity_lifetime(self) -> float:
        return self.length / (CONSTS.c * self.mirror_T)


def hyperfine_levels(delta_f: float) -> Tuple[ExcitedLevel, ExcitedLevel]:
    """Readout levels: F' at delta_f and the second line 814 MHz away with ratio -1/sqrt(3)."""
    return (ExcitedLevel(delta_f, 1.0),
            ExcitedLevel(delta_f + HYPERFINE_SPLITTING, E_LEVEL_RATIO))


@dataclass(eq=False)
class CavityState:
    """Cavity field, stored coherence and photons already emitted."""

    omega_cav: complex
    coherence: ComplexEnvelope
    emitted_photons: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        if self.coherence.kind != COHERENCE_KIND:
            raise DimensionError("cavity state needs a coherence-in-z envelope")
        if self.emitted_photons < 0:
            raise ValidationError("emitted photon count must be non-negative")


@dataclass(eq=False)
class ModeAmplitudes:
    """
    Expansion sqrt(n) rho = sum c_j u_j(z) in an orthonormal basis.

    Args:
        c: Complex mode amplitudes
        basis: Real array, column j holds u_j over the grid
        residual: int n |rho|^2 dz - sum |c_j|^2
    """

    c: np.ndarray
    basis: np.ndarray
    residual: float
    step: float

    def __post_init__(self):
        gram = self.basis.T @ self.basis * self.step
        error = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
        if error > 1e-10:
            raise ValidationError(f"mode basis is not orthonormal (error {error:.2e})")

    def total(self) -> float:
        return float(np.sum(np.abs(self.c) ** 2))

    def matched_fraction(self) -> float:
        total = self.total() + max(self.residual, 0.0)
        return float(abs(self.c[0]) ** 2 / total) if total > 0 else 0.0


def mode_basis(ens: AtomEnsemble, basis_size: int) -> np.ndarray:
    """
    Orthonormal family u_j with u_0 = sqrt(n)/sqrt(N).

    The first columns orthonormalise sqrt(n) z^m; the family is completed
    to the full grid by the same Householder factorisation.
    """
    count = ens.grid.count
    if basis_size < 1 or basis_size > count:
        raise DimensionError(f"basis size {basis_size} outside 1..{count}")
    root = np.sqrt(ens.density)
    if not np.any(root > 0):
        raise ValidationError("density is zero everywhere")
    z = ens.grid.points()
    scaled = (z - z.mean()) / max(float(np.max(np.abs(z - z.mean()))), ens.grid.step)
    degree = min(basis_size, POLYNOMIAL_LIMIT, int(np.count_nonzero(root)))
    columns = np.stack([root * scaled ** m for m in range(degree)], axis=1)
    q, _ = qr(columns * math.sqrt(ens.grid.step), mode='full')
    basis = q[:, :basis_size] / math.sqrt(ens.grid.step)
    if np.dot(basis[:, 0], root) < 0:
        basis[:, 0] = -basis[:, 0]
    return basis


def mode_decompose(rho: ComplexEnvelope, ens: AtomEnsemble, basis_size: int) -> ModeAmplitudes:
    """Project sqrt(n) rho on the first `basis_size` modes."""
    if not rho.grid.same_as(ens.grid):
        raise DimensionError("coherence grid does not match the ensemble grid")
    basis = mode_basis(ens, basis_size)
    weighted = np.sqrt(ens.density) * rho.values
    step = ens.grid.step
    c = basis.T @ weighted * step
    total = float(np.sum(np.abs(weighted) ** 2)) * step
    return ModeAmplitudes(c, basis, total - float(np.sum(np.abs(c) ** 2)), step)


def _transition(model: CavityModel, tr: Transition) -> Transition:
    return tr.with_gamma(model.gamma) if model.gamma else tr


def _cross_section(model: CavityModel, ens: AtomEnsemble) -> float:
    return model.cross_section or ens.cross_section


def _sums(model: CavityModel, gamma: float) -> Tuple[complex, complex, float]:
    """(field-side sum w/(2D+iG), atom-side sum w/(2D-iG), amplitude loss of rho)."""
    if model.include_loss:
        field_sum = sum(l.weight / (2.0 * l.detuning + 1j * gamma) for l in model.levels)
        atom_sum = sum(l.weight / (2.0 * l.detuning - 1j * gamma) for l in model.levels)
        loss = sum(l.weight * gamma * model.readout_rabi ** 2 / (2.0 * gamma ** 2 + 8.0 * l.detuning ** 2)
                   for l in model.levels)
    else:
        field_sum = atom_sum = complex(sum(l.weight / (2.0 * l.detuning) for l in model.levels))
        loss = 0.0
    return complex(field_sum), complex(atom_sum), float(loss)


def _cloud_rate(ens: AtomEnsemble, tr: Transition, length: float) -> float:
    """c Gamma OD / (2 L) = c k0 d^2 N / (L hbar eps0) on the reference dipole."""
    column = ens.column_density()
    return CONSTS.c * tr.k0 * tr.dipole ** 2 * column / (length * CONSTS.hbar * CONSTS.eps0)


def photon_scale(model: CavityModel, ens: AtomEnsemble, tr: Transition) -> float:
    """Cavity photons per (rad/s)^2 of |Omega_cav|^2: eps0 hbar L S / (2 d^2 omega0)."""
    return (CONSTS.eps0 * CONSTS.hbar * model.length * _cross_section(model, ens)
            / (2.0 * tr.dipole ** 2 * tr.omega0))


def cavity_photons(state: CavityState, model: CavityModel, ens: AtomEnsemble,
                   tr: Transition) -> float:
    return photon_scale(model, ens, _transition(model, tr)) * abs(state.omega_cav) ** 2


def atom_excitations(state: CavityState, model: CavityModel, ens: AtomEnsemble) -> float:
    return (_cross_section(model, ens) * float(np.sum(ens.density * np.abs(state.coherence.values) ** 2))
            * ens.grid.step)


def fastest_rate(model: CavityModel, ens: AtomEnsemble, tr: Transition) -> float:
    """Largest rate that the integrator must resolve."""
    tr = _transition(model, tr)
    field_sum, atom_sum, loss = _sums(model, tr.gamma)
    cloud = _cloud_rate(ens, tr, model.length)
    rates = [model.decay_rate(), cloud * abs(field_sum.imag), loss,
             abs(model.readout_rabi * abs(atom_sum)) * math.sqrt(cloud / 2.0)]
    if not model.lock_to_atoms:
        rates.append(cloud * abs(field_sum.real))
    return max(rates)


def max_step(model: CavityModel, ens: AtomEnsemble, tr: Transition) -> float:
    return STEP_BOUND / fastest_rate(model, ens, tr)


def _derivatives(model: CavityModel, ens: AtomEnsemble, tr: Transition,
                 omega_cav: complex, rho: np.ndarray):
    field_sum, atom_sum, loss = _sums(model, tr.gamma)
    cloud = _cloud_rate(ens, tr, model.length)
    self_coeff = -1j * cloud * field_sum
    if model.lock_to_atoms:
        self_coeff = complex(self_coeff.real, 0.0)
    d_field = (self_coeff - model.decay_rate()) * omega_cav
    column = ens.column_density()
    if column > 0:
        overlap = np.sum(ens.density * np.conj(rho)) * ens.grid.step
        d_field += -1j * (cloud / column) * field_sum * model.readout_rabi * overlap
    d_rho = 0.5j * np.conj(omega_cav) * model.readout_rabi * atom_sum - loss * rho
    return d_field, d_rho


def evolve_cavity(model: CavityModel, state: CavityState, ens: AtomEnsemble, tr: Transition,
                  dt: float) -> CavityState:
    """
    One fourth-order Runge-Kutta step of the coupled cavity-field / coherence system.

    Args:
        model: Cavity and readout parameters
        state: Current state
        ens: Atomic ensemble
        tr: Signal transition (reference dipole of the OD)
        dt: Time step in s; must satisfy dt <= 0.1 / fastest rate

    Returns:
        State after dt, with the mirror outflux added to emitted_photons
    """
    tr = _transition(model, tr)
    limit = max_step(model, ens, tr)
    if dt > limit * (1.0 + 1e-9):
        raise ConfigError(f"cavity step {dt:.3g} s exceeds the bound {limit:.3g} s")
    if not state.coherence.grid.same_as(ens.grid):
        raise DimensionError("coherence grid does not match the ensemble grid")
    outflux = 2.0 * model.decay_rate() * photon_scale(model, ens, tr)
    f0 = state.omega_cav
    r0 = np.asarray(state.coherence.values, dtype=complex)

    k1f, k1r = _derivatives(model, ens, tr, f0, r0)
    k2f, k2r = _derivatives(model, ens, tr, f0 + 0.5 * dt * k1f, r0 + 0.5 * dt * k1r)
    k3f, k3r = _derivatives(model, ens, tr, f0 + 0.5 * dt * k2f, r0 + 0.5 * dt * k2r)
    k4f, k4r = _derivatives(model, ens, tr, f0 + dt * k3f, r0 + dt * k3r)
    f_mid = [f0, f0 + 0.5 * dt * k1f, f0 + 0.5 * dt * k2f, f0 + dt * k3f]
    emitted = outflux * dt / 6.0 * (abs(f_mid[0]) ** 2 + 2.0 * abs(f_mid[1]) ** 2
                                    + 2.0 * abs(f_mid[2]) ** 2 + abs(f_mid[3]) ** 2)
    new_field = f0 + dt / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
    new_rho = r0 + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    if not (np.isfinite(new_field) and np.all(np.isfinite(new_rho))):
        raise NumericError(f"cavity integration diverged at t = {state.time:.3g} s")
    coherence = ComplexEnvelope(ens.grid, new_rho, COHERENCE_KIND)
    return CavityState(complex(new_field), coherence, state.emitted_photons + emitted,
                       state.time + dt)


def absorption_probability(model: CavityModel, ens: AtomEnsemble, delta_f: float,
                           tr: Transition = RB87_D1) -> float:
    """
    Probability that a cavity photon is absorbed before it leaks out.

    p_ab = tau_cav / (tau_at + tau_cav) with 1/tau_at = c Gamma OD / L *
    sum w Gamma / (Gamma^2 + 4 Delta^2) over both lines.
    """
    tr = _transition(model, tr)
    if ens.od == 0:
        return 0.0
    gamma = tr.gamma
    levels = hyperfine_levels(delta_f)
    rate_at = (CONSTS.c * gamma * ens.od / model.length
               * sum(l.weight * gamma / (gamma ** 2 + 4.0 * l.detuning ** 2) for l in levels))
    rate_cav = 1.0 / model.cavity_lifetime()
    return rate_at / (rate_at + rate_cav)


def absorption_curve(model: CavityModel, ens: AtomEnsemble, detunings: Sequence[float],
                     tr: Transition = RB87_D1) -> np.ndarray:
    return np.array([absorption_probability(model, ens, d, tr) for d in detunings])


def broadening_lifetime(model: CavityModel, tr: Transition = RB87_D1) -> float:
    """Excitation-number lifetime 1 / (2 sum w Gamma |Omega_r|^2 / (2 Gamma^2 + 8 Delta^2))."""
    gamma = _transition(model, tr).gamma
    rate = sum(l.weight * gamma * model.readout_rabi ** 2 / (2.0 * gamma ** 2 + 8.0 * l.detuning ** 2)
               for l in model.levels)
    return math.inf if rate == 0 else 1.0 / (2.0 * rate)


def lifetime_budget(model: CavityModel, theta: float, ens: AtomEnsemble,
                    tr: Transition = RB87_D1) -> Dict[str, float]:
    """
    Spin-wave lifetimes set by power broadening and thermal motion.

    Args:
        model: Cavity and readout parameters
        theta: Angle between the write beam and the scattered photon in rad
        ens: Ensemble (its temperature enters the thermal term)

    Returns:
        Dict with tau_broadening and tau_thermal in s
    """
    if theta == 0:
        raise ValidationError("theta must be nonzero")
    write_k = 2.0 * math.pi / tr.wavelength
    velocity = thermal_velocity(ens.temperature)
    tau_thermal = (math.inf if velocity == 0
                   else _thermal_calibration(write_k) / (abs(theta) * write_k * velocity))
    return {'tau_broadening': broadening_lifetime(model, tr), 'tau_thermal': tau_thermal}


def selectivity_ratio(matched_converted: float, offmatched_converted: float) -> float:
    if offmatched_converted <= 0:
        return math.inf
    return matched_converted / offmatched_converted


def default_ensemble(od: float = 70.0, count: int = 128, length: float = 1e-2,
                    transition: Transition = RB87_D1) -> AtomEnsemble:
    grid = Grid1D.centered(length, count)
    return AtomEnsemble.from_od(grid, uniform_profile(grid), od, transition, length)


@dataclass(eq=False)
class ReadoutResult:
    efficiency: float
    survival_offmatched: float
    times: np.ndarray
    cavity_photons: np.ndarray
    atom_excitations: np.ndarray
    emitted_photons: np.ndarray
    final_state: CavityState
    diagnostics: Dict[str, float] = field(default_factory=dict)


def run_readout(model: CavityModel, initial_c0: complex, pulse_duration: float,
                ens: Optional[AtomEnsemble] = None, tr: Transition = RB87_D1,
                dt: Optional[float] = None, initial_rho: Optional[np.ndarray] = None) -> ReadoutResult:
    """
    Read a stored spin wave into the cavity with a square readout pulse.

    Args:
        model: Cavity and readout parameters
        initial_c0: Amplitude of the phase-matched mode (per unit area)
        pulse_duration: Readout length in s
        ens: Atomic ensemble; defaults to the uniform OD-70 cloud
        tr: Signal transition
        dt: Step; defaults to a fiftieth of the fastest rate's period
        initial_rho: Full initial coherence; overrides `initial_c0` when given

    Returns:
        ReadoutResult with efficiency = emitted photons / initial excitations
    """
    ens = ens or default_ensemble()
    tr = _transition(model, tr)
    if pulse_duration < 0:
        raise ValidationError("pulse duration must be non-negative")
    if initial_rho is None:
        # sqrt(n) rho = c0 u0 with u0 = sqrt(n)/sqrt(N)
        rho0 = np.where(ens.density > 0, initial_c0 / math.sqrt(ens.column_density()), 0.0)
    else:
        rho0 = np.asarray(initial_rho, dtype=complex)
    if float(np.max(np.abs(rho0))) > 1.0:
        raise ValidationError("initial coherence exceeds 1; lower initial_c0")
    step = dt or DEFAULT_STEP_FRACTION / fastest_rate(model, ens, tr)
    steps = int(math.ceil(pulse_duration / step)) if pulse_duration > 0 else 0
    step = pulse_duration / steps if steps else step
    state = CavityState(0j, ComplexEnvelope(ens.grid, rho0, COHERENCE_KIND))
    initial = atom_excitations(state, model, ens)
    cav = np.zeros(steps + 1)
    atoms = np.zeros(steps + 1)
    emitted = np.zeros(steps + 1)
    atoms[0] = initial
    for i in range(steps):
        state = evolve_cavity(model, state, ens, tr, step)
        cav[i + 1] = cavity_photons(state, model, ens, tr)
        atoms[i + 1] = atom_excitations(state, model, ens)
        emitted[i + 1] = state.emitted_photons
    efficiency = state.emitted_photons / initial if initial > 0 else 0.0
    tau = broadening_lifetime(model, tr)
    survival = math.exp(-pulse_duration / tau) if math.isfinite(tau) else 1.0
    logger.info("cavity readout: efficiency %.4f over %d steps of %.3g s",
                efficiency, steps, step)
    return ReadoutResult(efficiency, survival, np.arange(steps + 1) * step, cav, atoms,
                         emitted, state, {'step': step, 'tau_broadening': tau})


def offmatched_destruction_full(model: CavityModel, ens: AtomEnsemble, delta_k: float,
                                duration: float, tr: Transition = RB87_D1,
                                dt: float = 2e-9, rho0: float = 1e-3) -> float:
    """
    Loss of an off-phase-matched spin wave under the readout beam in free space.

    Runs the Maxwell-Bloch solver on rho0 exp(i delta_k z) with the readout
    beam on the two excited levels and returns 1 - n_at(end)/n_at(0).
    """
    tr = _transition(model, tr)
    grid = time_grid(duration, dt)
    cfg = make_config(ens, grid, model.levels[0].detuning, levels=tuple(model.levels))
    drive = CouplingDrive.constant(model.readout_rabi)
    z = ens.grid.points()
    state = MemoryState.from_values(ens.grid, rho0 * np.exp(1j * delta_k * z))
    silent = ComplexEnvelope(grid, np.zeros(grid.count), SIGNAL_KIND)
    traj = run_memory(ens, tr, drive, silent, cfg, state)
    return float(1.0 - traj.atom_excitation[-1] / traj.initial_atoms)
