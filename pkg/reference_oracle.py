"""
Brute-force reference solutions used to check the production solvers.

`rk4_memory` integrates the semi-discrete Maxwell-Bloch system with a
fixed-step classical Runge-Kutta scheme in time on a grid refined four
times in both z and t; the field is swept cell by cell with the exact
solution of its linear z-equation. The quadrature helpers evaluate the
closed-form overlap integrals quoted by the tests.
"""
import math
from typing import Tuple

import numpy as np
from scipy.integrate import simpson

from core import CONSTS, AtomEnsemble, ComplexEnvelope, Transition, photon_factor
from mb_solver import (CouplingDrive, MemoryState, SolverConfig, exchange_coefficient,
                       field_self_rate, light_shift, power_broadening)

REFINE = 4


def _interp_complex(x_new: np.ndarray, x: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.interp(x_new, x, values.real) + 1j * np.interp(x_new, x, values.imag)


def rk4_memory(ens: AtomEnsemble, tr: Transition, drive: CouplingDrive,
               input_signal: ComplexEnvelope, cfg: SolverConfig, initial: MemoryState,
               refine: int = REFINE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reference run of the memory equations.

    Args:
        ens, tr, drive, input_signal, cfg, initial: As for `run_memory`
        refine: Refinement factor in z and t

    Returns:
        Tuple (output field at the coarse times, final coherence on the coarse z grid)
    """
    levels = cfg.excited_levels()
    gamma = tr.gamma if cfg.include_spont_loss else 0.0
    nz = ens.grid.count
    dz = ens.grid.step / refine
    z = ens.grid.start - ens.grid.step / 2.0 + dz * (np.arange(nz * refine) + 0.5)
    density = np.repeat(ens.density, refine)
    rho = np.repeat(np.asarray(initial.coherence.values, dtype=complex), refine)

    coarse_t = input_signal.grid.points()
    dt = input_signal.grid.step / refine
    steps = coarse_t.size * refine
    fine_t = coarse_t[0] + dt * np.arange(steps + 1)
    signal = _interp_complex(fine_t, coarse_t, np.asarray(input_signal.values))

    pf = photon_factor(tr)
    exch = exchange_coefficient(levels)
    g = tr.k0 * tr.dipole ** 2 / (CONSTS.hbar * CONSTS.eps0)
    a = -1j * g * density * field_self_rate(levels, gamma)
    decay = np.exp(a * dz)
    # (exp(a dz) - 1) / a, with the a -> 0 limit dz
    gain = np.where(np.abs(a) > 0, (decay - 1.0) / np.where(np.abs(a) > 0, a, 1.0), dz)
    zeeman = cfg.zeeman_gradient

    def rates(t: float, rho_now: np.ndarray, field_in: complex):
        rabi = complex(drive.rabi_at(np.array([t]))[0])
        coupling = rabi * np.exp(1j * drive.wavevector * z)
        source = -1j * (density / pf) * exch * coupling * np.conj(rho_now)
        field = np.empty(z.size + 1, dtype=complex)
        field[0] = field_in
        for j in range(z.size):
            field[j + 1] = decay[j] * field[j] + gain[j] * source[j]
        average = 0.5 * (field[:-1] + field[1:])
        beta = float(zeeman.beta_at(np.array([t]))[0]) if zeeman else 0.0
        detuning = float(drive.detuning_at(np.array([t]))[0])
        stark = float(light_shift(levels, abs(rabi), gamma))
        loss = float(power_broadening(levels, abs(rabi), gamma))
        d_rho = (-1j * (detuning + beta * z - stark) - loss) * rho_now + 1j * exch * coupling * np.conj(average)
        return d_rho, field[-1]

    output = np.zeros(steps, dtype=complex)
    for n in range(steps):
        t = fine_t[n]
        mid_in = 0.5 * (signal[n] + signal[n + 1])
        k1, out = rates(t, rho, signal[n])
        k2, _ = rates(t + 0.5 * dt, rho + 0.5 * dt * k1, mid_in)
        k3, _ = rates(t + 0.5 * dt, rho + 0.5 * dt * k2, mid_in)
        k4, _ = rates(t + dt, rho + dt * k3, signal[n + 1])
        rho = rho + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        output[n] = out
    coarse_out = output.reshape(-1, refine).mean(axis=1)
    coarse_rho = rho.reshape(nz, refine).mean(axis=1)
    return coarse_out, coarse_rho


def overlap_integral(density: np.ndarray, z: np.ndarray, delta_k: float) -> complex:
    """int n(z) exp(i delta_k z) dz by Simpson's rule."""
    weight = np.asarray(density, dtype=float)
    return complex(simpson(weight * np.cos(delta_k * z), x=z)
                   + 1j * simpson(weight * np.sin(delta_k * z), x=z))


def sinc_amplitude(delta_k: float, length: float) -> float:
    """|sinc(delta_k L / 2)| of a uniform cloud."""
    x = delta_k * length / 2.0
    return 1.0 if x == 0 else abs(math.sin(x) / x)


def gaussian_overlap_fidelity(offset: float, sigma: float) -> float:
    """Fidelity of two exp(-y^2/sigma^2) intensity profiles shifted by `offset`."""
    return math.exp(-offset ** 2 / (4.0 * sigma ** 2))


def four_step_signal(times: np.ndarray, spacing: float) -> np.ndarray:
    """Direct sum of four equal groups at Larmor frequencies 0, w, 2w, 3w."""
    return sum(np.exp(1j * j * spacing * np.asarray(times)) for j in range(4))
