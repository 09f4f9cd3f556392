"""
Scenario files, their validation and one runner per scenario kind.

A scenario is a dotenv-style `key=value` file. Every physical key carries
its unit in the name (`coupling_rabi_MHz`, `flip_time_us`, ...); values
are converted to SI on load and nothing is inferred. Each kind declares
the keys it accepts, so a typo or a wrong unit suffix is a validation
error rather than a silently ignored value.
"""
import io
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values

import cavity
import mb_solver
import phase_match
import ssm
import temporal
from artifact_writer import ArtifactWriter
from core import (GHZ, MHZ, RB87_D1, RB87_D2, AtomEnsemble, Grid1D, ParseError,
                  ValidationError, dft, uniform_profile)
from report_generator import ReportGenerator
from run_cache import RunCache

logger = logging.getLogger(__name__)

SCENARIO_EXTENSION = '.scenario'
META_KEYS = ('kind', 'seed', 'description', 'reproduces', 'output_dir')
REQUIRED_META = ('kind', 'seed', 'description', 'reproduces')
MAX_SEED = 2 ** 64

# Key suffix -> factor to SI; matched longest first
UNIT_SUFFIXES = {
    '_MHz_per_cm': MHZ / 1e-2,
    '_MHz_per_us': MHZ / 1e-6,
    '_mW_per_cm2': 1e-3 / 1e-4,
    '_per_us': 1e6,
    '_per_cm': 1e2,
    '_per_m': 1.0,
    '_GHz': GHZ,
    '_MHz': MHZ,
    '_kHz': 2.0 * math.pi * 1e3,
    '_ms': 1e-3,
    '_us': 1e-6,
    '_ns': 1e-9,
    '_cm': 1e-2,
    '_mm': 1e-3,
    '_um': 1e-6,
    '_nm': 1e-9,
    '_uK': 1e-6,
    '_mG': 1e-7,
    '_deg': math.pi / 180.0,
    '_rad': 1.0,
}
_SUFFIX_ORDER = sorted(UNIT_SUFFIXES, key=len, reverse=True)

_LINE_PATTERN = re.compile(r'^\s*(?:export\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$')
TRUE_VALUES = ('true', '1', 'yes')
FALSE_VALUES = ('false', '0', 'no')

REQUIRED = object()


def split_unit(key: str) -> Tuple[str, float]:
    """SI parameter name and conversion factor of a unit-suffixed key."""
    for suffix in _SUFFIX_ORDER:
        if key.endswith(suffix) and len(key) > len(suffix):
            return key[:-len(suffix)], UNIT_SUFFIXES[suffix]
    return key, 1.0


@dataclass(frozen=True)
class Param:
    """
    One accepted scenario key.

    Args:
        key: Key as written in the file, unit suffix included
        type: 'float', 'int', 'bool' or 'list' (comma-separated floats)
        default: Default in the key's own units; REQUIRED when mandatory
        positive: Values must be > 0
        minimum: Inclusive lower bound in the key's own units
        maximum: Inclusive upper bound in the key's own units
    """

    key: str
    type: str = 'float'
    default: Any = REQUIRED
    positive: bool = False
    minimum: Optional[float] = None
    maximum: Optional[float] = None

    @property
    def name(self) -> str:
        return split_unit(self.key)[0]

    @property
    def factor(self) -> float:
        return split_unit(self.key)[1]


@dataclass(frozen=True)
class Scenario:
    """A parsed and validated scenario."""

    name: str
    kind: str
    seed: int
    description: str
    reproduces: str
    params: Dict[str, Any]
    raw: Dict[str, str]
    text: str
    path: Optional[str] = None
    output_dir: Optional[str] = None

    def with_seed(self, seed: int) -> 'Scenario':
        _check_seed(seed)
        return replace(self, seed=seed)


@dataclass
class KindResult:
    """What a kind runner hands back for writing."""

    summary: Dict[str, Any]
    traces: List[Tuple[str, list, str]] = field(default_factory=list)
    images: List[Tuple[str, np.ndarray]] = field(default_factory=list)


@dataclass
class RunOutcome:
    run_dir: str
    summary: Dict[str, Any]
    cached: bool = False


@dataclass(frozen=True)
class KindSpec:
    params: Tuple[Param, ...]
    run: Callable[[Dict[str, Any], int, int], KindResult]
    check: Optional[Callable[[Dict[str, Any]], None]] = None


# ---------------------------------------------------------------------------
# parsing


def _check_seed(seed: int):
    if not 0 <= seed < MAX_SEED:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")


def _scan_lines(text: str):
    seen = set()
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        match = _LINE_PATTERN.match(line)
        if not match:
            raise ParseError(f"line {number}: expected key=value, got '{stripped[:40]}'")
        key = match.group(1)
        if key in seen:
            raise ParseError(f"line {number}: duplicate key '{key}'")
        seen.add(key)


def _convert(param: Param, text: str) -> Any:
    text = text.strip()
    try:
        if param.type == 'bool':
            lowered = text.lower()
            if lowered in TRUE_VALUES:
                return True
            if lowered in FALSE_VALUES:
                return False
            raise ValueError(f"not a boolean: '{text}'")
        if param.type == 'int':
            return int(text)
        if param.type == 'list':
            items = [item for item in text.split(',') if item.strip()]
            if not items:
                raise ValueError("empty list")
            return [float(item) for item in items]
        return float(text)
    except ValueError as e:
        raise ParseError(f"{param.key}: {e}") from e


def _in_range(param: Param, value: Any):
    values = value if isinstance(value, list) else [value]
    for v in values:
        if isinstance(v, bool):
            continue
        if not math.isfinite(v):
            raise ValidationError(f"{param.key} must be finite")
        if param.positive and not v > 0:
            raise ValidationError(f"{param.key} must be positive, got {v}")
        if param.minimum is not None and v < param.minimum:
            raise ValidationError(f"{param.key} must be >= {param.minimum}, got {v}")
        if param.maximum is not None and v > param.maximum:
            raise ValidationError(f"{param.key} must be <= {param.maximum}, got {v}")


def _to_si(param: Param, value: Any) -> Any:
    if param.type in ('bool', 'int'):
        return value
    if param.type == 'list':
        return [v * param.factor for v in value]
    return value * param.factor


def parse_scenario(text: str, name: str = 'scenario', path: Optional[str] = None) -> Scenario:
    """
    Parse and validate scenario text.

    Args:
        text: File content
        name: Scenario name (file stem)
        path: Source path, for messages

    Returns:
        Scenario with parameters in SI units

    Raises:
        ParseError: Malformed lines or values that are not numbers
        ValidationError: Missing, unknown or out-of-range keys
    """
    _scan_lines(text)
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    for key in REQUIRED_META:
        if not values.get(key):
            raise ValidationError(f"missing required key '{key}'")
    kind = values['kind'].strip()
    if kind not in KINDS:
        raise ValidationError(f"unknown scenario kind '{kind}'")
    try:
        seed = int(values['seed'].strip(), 0)
    except ValueError as e:
        raise ParseError(f"seed: {e}") from e
    _check_seed(seed)

    entry = KINDS[kind]
    accepted = {p.key: p for p in entry.params}
    for key in values:
        if key not in META_KEYS and key not in accepted:
            raise ValidationError(f"unknown key '{key}' for kind '{kind}'")

    params: Dict[str, Any] = {}
    raw: Dict[str, str] = {}
    for param in entry.params:
        if values.get(param.key) not in (None, ''):
            value = _convert(param, values[param.key])
            raw[param.key] = values[param.key].strip()
        elif param.default is REQUIRED:
            raise ValidationError(f"missing required key '{param.key}' for kind '{kind}'")
        else:
            value = param.default
            if value is not None:
                raw[param.key] = str(value)
        if value is not None:
            _in_range(param, value)
            value = _to_si(param, value)
        params[param.name] = value
    if entry.check:
        entry.check(params)
    return Scenario(name=name, kind=kind, seed=seed,
                    description=values['description'].strip(),
                    reproduces=values['reproduces'].strip(),
                    params=params, raw=raw, text=text, path=path,
                    output_dir=(values.get('output_dir') or '').strip() or None)


def load_scenario(path: str) -> Scenario:
    """Read and parse a scenario file."""
    if not os.path.isfile(path):
        raise ParseError(f"scenario file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario(text, name, path)


def scenario_files(directory: str) -> List[str]:
    """Scenario files of a directory in stable (sorted) order."""
    if not os.path.isdir(directory):
        return []
    return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                  if f.endswith(SCENARIO_EXTENSION))


def list_scenarios(directory: str) -> List[Dict[str, str]]:
    """Catalog entries (name, kind, description, reproduces) of the bundled scenarios."""
    entries = []
    for path in scenario_files(directory):
        scenario = load_scenario(path)
        entries.append({
            'name': scenario.name,
            'kind': scenario.kind,
            'description': scenario.description,
            'reproduces': scenario.reproduces,
        })
    return entries


def format_catalog(entries: Sequence[Dict[str, str]]) -> str:
    """Plain-text catalog, one scenario per line."""
    width = max((len(e['name']) for e in entries), default=0)
    lines = [f"{e['name']:<{width}}  [{e['kind']}] {e['description']} ({e['reproduces']})"
             for e in entries]
    return '\n'.join(lines) + ('\n' if lines else '')


# ---------------------------------------------------------------------------
# shared helpers


def _ensemble(params: Dict[str, Any], length_key: str = 'cloud_length',
              transition=RB87_D1) -> AtomEnsemble:
    length = params[length_key]
    grid = Grid1D.centered(length, params['nz'])
    temperature = params.get('temperature', 20e-6)
    return AtomEnsemble.from_od(grid, uniform_profile(grid), params['od'], transition, length,
                                temperature=temperature)


def _map(function: Callable, items: Sequence, jobs: int) -> list:
    """Evaluate `function` over `items`, in worker processes when jobs > 1."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(function, items))
    return [function(item) for item in items]


def _correlation(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.std(a) == 0 or np.std(b) == 0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _range(params: Dict[str, Any], prefix: str) -> np.ndarray:
    return np.linspace(params[f'{prefix}_min'], params[f'{prefix}_max'], params[f'{prefix}_points'])


def _range_check(*prefixes: str) -> Callable[[Dict[str, Any]], None]:
    def check(params: Dict[str, Any]):
        for prefix in prefixes:
            if params[f'{prefix}_max'] < params[f'{prefix}_min']:
                raise ValidationError(f"{prefix}_max must not be below {prefix}_min")
    return check


# ---------------------------------------------------------------------------
# memory-cycle


MEMORY_PARAMS = (
    Param('coupling_rabi_MHz', positive=True),
    Param('detuning_MHz', positive=True),
    Param('gradient_MHz_per_cm', positive=True),
    Param('flip_time_us', positive=True),
    Param('od', minimum=0.0),
    Param('cloud_length_cm', positive=True),
    Param('nz', 'int', minimum=2),
    Param('dt_ns', positive=True),
    Param('t_span_us', positive=True),
    Param('pulse_centers_us', 'list', minimum=0.0),
    Param('pulse_sigma_us', positive=True),
    Param('pulse_amplitudes', 'list', positive=True),
    Param('signal_rabi_MHz', default=0.005, positive=True),
    Param('include_spont_loss', 'bool', default=True),
)


def _check_memory(params: Dict[str, Any]):
    if len(params['pulse_centers']) != len(params['pulse_amplitudes']):
        raise ValidationError("pulse_centers_us and pulse_amplitudes need the same length")
    if params['flip_time'] >= params['t_span']:
        raise ValidationError("flip_time_us must be inside t_span_us")
    if max(params['pulse_centers']) >= params['flip_time']:
        raise ValidationError("all pulses must arrive before the gradient flip")


def run_memory_cycle(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Gradient-echo write, flip and readout of a pulse train."""
    ens = _ensemble(params)
    tr = RB87_D1
    grid = mb_solver.time_grid(params['t_span'], params['dt'])
    signal = mb_solver.pulse_train(grid, params['pulse_centers'], params['pulse_sigma'],
                                   params['pulse_amplitudes'], params['signal_rabi'])
    result = mb_solver.gem_cycle(ens, tr, params['coupling_rabi'], params['detuning'],
                                 params['gradient'], params['flip_time'], signal,
                                 params['pulse_centers'], params['pulse_amplitudes'],
                                 include_spont_loss=params['include_spont_loss'])
    traj = result.trajectory
    summary = {
        'efficiency': result.efficiency,
        'kspace_correlation': result.kspace_correlation,
        'time_reversed': result.time_reversed,
        'readout_peaks_us': [t * 1e6 for t in result.readout_peaks],
        'input_peaks_us': [t * 1e6 for t in result.input_peaks],
        'max_coherence': traj.max_coherence,
        'max_cell_angle': traj.diagnostics['max_cell_angle'],
    }
    if traj.lossless:
        summary['conservation_drift'] = mb_solver.conservation_residual(traj)
    flip = traj.snapshot_at(params['flip_time'])
    spectrum = dft(flip)
    k = spectrum.grid.points()
    traces = [
        ('signal', [('t', 's', traj.times),
                    ('input Omega_s', 'rad/s', signal.values),
                    ('output Omega_s', 'rad/s', traj.output_signal.values)],
         'signal Rabi frequency at the cloud entrance and exit'),
        ('excitation', [('t', 's', traj.times),
                        ('atoms', 'excitations', traj.atom_excitation),
                        ('photons in', 'photons', traj.photons_in),
                        ('photons out', 'photons', traj.photons_out)],
         'excitation bookkeeping'),
        ('kspace_at_flip', [('K', 'rad/m', k),
                            ('|rho~|', 'arb', np.abs(spectrum.values)),
                            ('mapped t', 's', params['flip_time'] - k / params['gradient'])],
         'spin-wave spectrum at the gradient flip'),
    ]
    return KindResult(summary, traces)


# ---------------------------------------------------------------------------
# collapse-revival


COLLAPSE_PARAMS = (
    Param('populations', 'list', minimum=0.0),
    Param('larmor_offsets_kHz', 'list', default=None),
    Param('stark_intensities_mW_per_cm2', 'list', default=None, minimum=0.0),
    Param('bias_field_mG', default=0.0),
    Param('stark_detuning_GHz', default=30.0),
    Param('samples', 'int', default=2001, minimum=3),
    Param('revival_time_us', default=None, positive=True),
    Param('points_per_step', 'int', default=1, minimum=1),
)


def _check_collapse(params: Dict[str, Any]):
    offsets = params['larmor_offsets']
    intensities = params['stark_intensities']
    if (offsets is None) == (intensities is None):
        raise ValidationError("give exactly one of larmor_offsets_kHz and stark_intensities_mW_per_cm2")
    count = len(offsets if offsets is not None else intensities)
    if count != len(params['populations']):
        raise ValidationError("one population per Larmor step is required")
    if count < 2:
        raise ValidationError("at least two Larmor steps are required")


def _larmor_steps(params: Dict[str, Any]) -> np.ndarray:
    if params['larmor_offsets'] is not None:
        return np.asarray(params['larmor_offsets'], dtype=float)
    bias = (0.0, 0.0, params['bias_field'])
    return phase_match.larmor_from_intensity(params['stark_intensities'], bias,
                                             detuning_s=params['stark_detuning'])


def run_collapse_revival(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Precession signal of a staircase of Larmor frequencies."""
    larmor = _larmor_steps(params)
    revival = params['revival_time']
    if revival is None:
        spacings = np.diff(np.sort(larmor))
        if np.any(spacings <= 0) or np.ptp(spacings) > 1e-6 * np.max(spacings):
            raise ValidationError("unequal Larmor spacings: revival_time_us is required")
        revival = 2.0 * math.pi / float(spacings[0])
    scene = phase_match.staircase_scene(params['populations'], larmor, params['points_per_step'])
    times = np.linspace(0.0, revival, params['samples'])
    signal = phase_match.precession_signal(scene, times)
    metrics = phase_match.collapse_revival_metrics(signal, times, revival)
    summary = dict(metrics)
    summary['larmor_steps_kHz'] = [w / (2.0 * math.pi * 1e3) for w in larmor]
    traces = [('precession', [('t', 's', times), ('S', 'atoms', signal),
                              ('|S|', 'atoms', np.abs(signal))],
               'Larmor precession signal of the staircase')]
    return KindResult(summary, traces)


# ---------------------------------------------------------------------------
# ssm-compensation


SSM_PARAMS = (
    Param('noise_rel_sigma', 'list', positive=True, maximum=1.0),
    Param('phi0_max_rad', positive=True),
    Param('phi0_points', 'int', default=21, minimum=3),
    Param('draws', 'int', default=100000, minimum=100),
    Param('image_size', 'int', default=512, minimum=64),
    Param('carrier_period_px', default=8.0, minimum=2.0),
    Param('pixel_um', default=10.0, positive=True),
    Param('wavelength_nm', default=795.0, positive=True),
    Param('lens_focal_cm', default=200.0),
    Param('beam_waist_px', default=80.0, positive=True),
    Param('signal_amplitude', default=0.5, positive=True),
    Param('phase_lens_focal_cm', default=-200.0),
    Param('cloud_waist_um', default=500.0, positive=True),
    Param('fourier_focal_cm', default=25.0, positive=True),
    Param('stark_power_min_per_m', default=-1.0),
    Param('stark_power_max_per_m', default=2.0),
    Param('stark_power_points', 'int', default=61, minimum=2),
)


def _check_ssm(params: Dict[str, Any]):
    _range_check('stark_power')(params)
    if params['lens_focal'] == 0 or params['phase_lens_focal'] == 0:
        raise ValidationError("focal lengths must be nonzero")


def run_ssm_compensation(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Dephasing from mask noise, fringe phase retrieval and far-field lens compensation."""
    phi0 = np.linspace(0.0, params['phi0_max'], params['phi0_points'])
    columns = [('phi0', 'rad', phi0)]
    rates = []
    for index, sigma in enumerate(params['noise_rel_sigma']):
        envelope = ssm.monte_carlo_dephasing(phi0, sigma, params['draws'], seed + index)
        rates.append(ssm.fit_dephasing_rate(phi0, envelope))
        columns.append((f"envelope sigma={sigma:g}", '1', envelope))
        columns.append((f"exp(-sigma^2 phi0^2) sigma={sigma:g}", '1', np.exp(-sigma ** 2 * phi0 ** 2)))
    expected = [s ** 2 for s in params['noise_rel_sigma']]
    rate_errors = [abs(r - e) / e for r, e in zip(rates, expected)]

    n = params['image_size']
    pitch = params['pixel']
    k = 2.0 * math.pi / params['wavelength']
    y = (np.arange(n) - n / 2.0) * pitch
    x = np.arange(n) - n / 2.0
    amplitude = params['signal_amplitude'] * np.exp(-x ** 2 / params['beam_waist_px'] ** 2)
    lens_phase = -k * y ** 2 / (2.0 * params['lens_focal'])
    field_in = amplitude[None, :] * np.exp(1j * lens_phase)[:, None]
    carrier = (2.0 * math.pi / params['carrier_period_px'], 0.0)
    image = ssm.synthesize_fringes(field_in, 1.0, carrier)
    recovered = ssm.demodulate(image)
    centre = n // 2
    keep = slice(n // 10, n - n // 10)
    profile = np.angle(recovered[:, centre])
    focal = ssm.fit_focal_length(profile[keep], y[keep], params['wavelength'])
    fid = ssm.fidelity(np.abs(field_in) ** 2, np.abs(recovered) ** 2)

    powers = np.linspace(params['stark_power_min'], params['stark_power_max'],
                         params['stark_power_points'])
    waists = ssm.farfield_sweep(powers, 1.0 / params['phase_lens_focal'], params['cloud_waist'],
                                params['wavelength'], params['fourier_focal'])
    best = int(np.argmin(waists))

    summary = {
        'dephasing_rates': rates,
        'expected_rates': expected,
        'max_rate_error': max(rate_errors),
        'focal_length_fit_m': focal,
        'focal_length_error': abs(focal - params['lens_focal']) / abs(params['lens_focal']),
        'fidelity': fid,
        'best_stark_power_per_m': float(powers[best]),
        'min_farfield_waist_m': float(waists[best]),
    }
    traces = [
        ('dephasing', columns, 'Monte-Carlo readout envelope against the Gaussian law'),
        ('phase_profile', [('y', 'm', y[keep]), ('recovered phase', 'rad', np.unwrap(profile[keep])),
                           ('applied phase', 'rad', lens_phase[keep])],
         'phase along y through the beam centre'),
        ('farfield', [('Stark lens power', '1/m', powers), ('waist', 'm', waists)],
         'far-field waist against imprinted lens power'),
    ]
    return KindResult(summary, traces, [('fringes', image.intensity)])


# ---------------------------------------------------------------------------
# spectrometer


SPECTROMETER_PARAMS = (
    Param('gradient_MHz_per_cm', positive=True),
    Param('cloud_length_cm', positive=True),
    Param('chirp_MHz_per_us', positive=True),
    Param('coupling_rabi_MHz', positive=True),
    Param('detuning_MHz', positive=True),
    Param('od', minimum=0.0),
    Param('nz', 'int', minimum=2),
    Param('dt_ns', positive=True),
    Param('flip_time_us', positive=True),
    Param('t_span_us', positive=True),
    Param('stage2_us', default=3.0, minimum=0.0),
    Param('pulse_center_us', positive=True),
    Param('pulse_sigma_us', positive=True),
    Param('pulse_separations_us', 'list', positive=True),
    Param('signal_rabi_MHz', default=0.005, positive=True),
)


def _check_spectrometer(params: Dict[str, Any]):
    if params['flip_time'] + params['stage2'] >= params['t_span']:
        raise ValidationError("readout window is empty: flip_time_us + stage2_us >= t_span_us")
    latest = params['pulse_center'] + max(params['pulse_separations']) / 2.0
    if latest >= params['flip_time']:
        raise ValidationError("all pulses must arrive before the gradient flip")


def _spectrometer_design(params: Dict[str, Any]) -> temporal.SpectrometerDesign:
    return temporal.SpectrometerDesign(
        beta=params['gradient'], cloud_length=params['cloud_length'], chirp=params['chirp'],
        coupling_rabi=params['coupling_rabi'], detuning=params['detuning'],
        gamma=RB87_D1.gamma, od=params['od'])


def _spectrometer_point(params: Dict[str, Any], separation: float):
    design = _spectrometer_design(params)
    ens = _ensemble(params)
    grid = mb_solver.time_grid(params['t_span'], params['dt'])
    centre = params['pulse_center']
    signal = mb_solver.pulse_train(grid, [centre - separation / 2.0, centre + separation / 2.0],
                                   params['pulse_sigma'], [1.0, 1.0], params['signal_rabi'])
    result = temporal.run_spectrometer(design, signal, ens, RB87_D1, params['flip_time'],
                                       params['stage2'], reference_time=centre)
    tau, power = result.output_trace(params['flip_time'])
    predicted = temporal.predicted_fringe_frequency(separation, params['chirp'])
    measured = temporal.fringe_frequency(power, tau, min_frequency=0.5 * predicted)
    return tau, power, measured, predicted, result.efficiency


def run_spectrometer_scan(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Far-field spectrometer fed with pulse pairs of increasing separation."""
    report = temporal.design_report(_spectrometer_design(params))
    points = _map(partial(_spectrometer_point, params), list(params['pulse_separations']), jobs)
    measured = [p[2] for p in points]
    predicted = [p[3] for p in points]
    errors = [abs(m - p) / p for m, p in zip(measured, predicted)]
    summary = dict(report)
    summary.update({
        'pulse_separations_us': [s * 1e6 for s in params['pulse_separations']],
        'fringe_frequency_hz': measured,
        'predicted_fringe_frequency_hz': predicted,
        'max_fringe_error': max(errors),
        'efficiency': points[0][4],
        'efficiencies': [p[4] for p in points],
    })
    traces = []
    for separation, (tau, power, _, _, _) in zip(params['pulse_separations'], points):
        label = f"output_dt_{separation * 1e6:g}us"
        traces.append((label, [("tau'", 's', tau), ('|Omega_out|^2', '(rad/s)^2', power)],
                       f"readout around 2T for pulses {separation * 1e6:g} us apart"))
    return KindResult(summary, traces)


# ---------------------------------------------------------------------------
# efficiency-map


EFFICIENCY_PARAMS = (
    Param('bandwidth_min_MHz', positive=True),
    Param('bandwidth_max_MHz', positive=True),
    Param('bandwidth_points', 'int', minimum=2),
    Param('inverse_tau_min_per_us', positive=True),
    Param('inverse_tau_max_per_us', positive=True),
    Param('inverse_tau_points', 'int', minimum=2),
    Param('od', positive=True),
    Param('cloud_length_cm', positive=True),
    Param('count', 'int', default=512, minimum=16),
    Param('time_bandwidth_products', 'list', default=None, positive=True),
)


def run_efficiency_map(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Mean efficiency over (bandwidth, 1/tau) for a super-Gaussian cloud."""
    bandwidths = _range(params, 'bandwidth')
    inverse_taus = _range(params, 'inverse_tau')
    grid = temporal.efficiency_map(bandwidths, inverse_taus, params['od'], params['cloud_length'],
                                   count=params['count'], jobs=jobs)
    best = np.unravel_index(int(np.argmax(grid)), grid.shape)
    summary = {
        'best_mean_efficiency': float(grid[best]),
        'best_bandwidth_MHz': float(bandwidths[best[0]] / MHZ),
        'best_inverse_tau_per_us': float(inverse_taus[best[1]] / 1e6),
    }
    products = params['time_bandwidth_products']
    if products:
        eta = [temporal.memory_efficiency(params['od'], tb) for tb in products]
        doubled = [temporal.memory_efficiency(2.0 * params['od'], 2.0 * tb) for tb in products]
        summary['eta0'] = eta
        summary['ratio_invariance_error'] = max(abs(a - b) for a, b in zip(eta, doubled))
    b_col, t_col = np.meshgrid(bandwidths, inverse_taus, indexing='ij')
    traces = [('efficiency_map', [('bandwidth', 'rad/s', b_col.ravel()),
                                  ('1/tau', '1/s', t_col.ravel()),
                                  ('mean efficiency', '1', grid.ravel())],
               'rows run over bandwidth, then 1/tau')]
    return KindResult(summary, traces)


# ---------------------------------------------------------------------------
# cavity-readout


CAVITY_PARAMS = (
    Param('delta_f_GHz', default=1.0),
    Param('readout_rabi_MHz', default=30.0, positive=True),
    Param('cavity_length_cm', default=30.0, positive=True),
    Param('mirror_T', default=0.01, positive=True, maximum=0.999),
    Param('od', default=70.0, minimum=0.0),
    Param('nz', 'int', default=128, minimum=2),
    Param('cloud_length_cm', default=1.0, positive=True),
    Param('pulse_us', default=1.0, minimum=0.0),
    Param('initial_c0_rel', default=1e-3, positive=True, maximum=1.0),
    Param('lock_to_atoms', 'bool', default=True),
    Param('include_loss', 'bool', default=True),
    Param('theta_deg', default=1.0, positive=True),
    Param('temperature_uK', default=20.0, minimum=0.0),
    Param('offmatched_dk_L', default=10.0, positive=True),
    Param('delta_f_sweep_GHz', 'list', default=None),
    Param('full_solver', 'bool', default=False),
    Param('dt_ns', default=0.0, minimum=0.0),
)


def _check_cavity(params: Dict[str, Any]):
    if params['delta_f'] == 0:
        raise ValidationError("delta_f_GHz must be nonzero")
    sweep = params['delta_f_sweep']
    if sweep and any(d == 0 for d in sweep):
        raise ValidationError("delta_f_sweep_GHz must not contain 0")


def _cavity_model(params: Dict[str, Any], delta_f: float) -> cavity.CavityModel:
    return cavity.CavityModel(length=params['cavity_length'], mirror_T=params['mirror_T'],
                              readout_rabi=params['readout_rabi'],
                              levels=cavity.hyperfine_levels(delta_f),
                              lock_to_atoms=params['lock_to_atoms'],
                              include_loss=params['include_loss'])


def _readout_point(params: Dict[str, Any], delta_f: float) -> float:
    ens = _ensemble(params)
    c0 = params['initial_c0_rel'] * math.sqrt(ens.column_density())
    result = cavity.run_readout(_cavity_model(params, delta_f), c0, params['pulse'], ens,
                                dt=params['dt'] or None)
    return result.efficiency


def run_cavity_readout(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Cavity-enhanced readout at one operating point plus its loss budget."""
    ens = _ensemble(params)
    model = _cavity_model(params, params['delta_f'])
    c0 = params['initial_c0_rel'] * math.sqrt(ens.column_density())
    result = cavity.run_readout(model, c0, params['pulse'], ens, dt=params['dt'] or None)
    budget = cavity.lifetime_budget(model, params['theta'], ens)
    delta_k = params['offmatched_dk_L'] / params['cloud_length']
    offmatched_rho = params['initial_c0_rel'] * np.exp(1j * delta_k * ens.grid.points())
    off = cavity.run_readout(model, 0.0, params['pulse'], ens, dt=params['dt'] or None,
                             initial_rho=offmatched_rho)
    summary = {
        'efficiency': result.efficiency,
        'offmatched_destruction': 1.0 - result.survival_offmatched,
        'tau_broadening_us': budget['tau_broadening'] * 1e6,
        'tau_thermal_us': budget['tau_thermal'] * 1e6,
        'absorption_probability': cavity.absorption_probability(model, ens, params['delta_f']),
        'cavity_lifetime_ns': model.cavity_lifetime() * 1e9,
        'offmatched_efficiency': off.efficiency,
        'selectivity': cavity.selectivity_ratio(result.efficiency, off.efficiency),
        'step_s': result.diagnostics['step'],
    }
    if params['full_solver']:
        summary['offmatched_destruction_full'] = cavity.offmatched_destruction_full(
            model, ens, delta_k, params['pulse'])
    initial = result.atom_excitations[0]
    traces = [('readout', [('t', 's', result.times),
                           ('cavity photons', 'photons', result.cavity_photons),
                           ('atom excitations', 'excitations', result.atom_excitations),
                           ('emitted photons', 'photons', result.emitted_photons),
                           ('emitted fraction', '1', result.emitted_photons / initial)],
               'cavity readout of the phase-matched spin wave')]
    sweep = params['delta_f_sweep']
    if sweep:
        efficiencies = _map(partial(_readout_point, params), list(sweep), jobs)
        absorption = cavity.absorption_curve(model, ens, sweep)
        summary['sweep_efficiency'] = efficiencies
        summary['sweep_best_delta_f_GHz'] = float(sweep[int(np.argmax(efficiencies))] / GHZ)
        traces.append(('delta_f_sweep', [('delta_f', 'rad/s', np.asarray(sweep)),
                                         ('efficiency', '1', np.asarray(efficiencies)),
                                         ('p_absorption', '1', absorption)],
                       'readout efficiency and intracavity absorption against delta_f'))
    return KindResult(summary, traces)


# ---------------------------------------------------------------------------
# phase-match-sweep


PHASE_MATCH_PARAMS = (
    Param('od', default=0.1, minimum=0.0),
    Param('nz', 'int', default=128, minimum=2),
    Param('cloud_length_cm', default=1.0, positive=True),
    Param('coupling_rabi_MHz', positive=True),
    Param('detuning_MHz', positive=True),
    Param('duration_us', positive=True),
    Param('steps', 'int', minimum=2),
    Param('dk_L_min', default=-20.0),
    Param('dk_L_max', default=20.0),
    Param('dk_L_points', 'int', default=41, minimum=3),
    Param('theta_max_deg', default=3.0, positive=True),
    Param('theta_points', 'int', default=31, minimum=2),
)


def _check_phase_match(params: Dict[str, Any]):
    _range_check('dk_L')(params)


def _amplitude_point(params: Dict[str, Any], delta_k: float) -> float:
    ens = _ensemble(params)
    return mb_solver.readout_amplitude(ens, RB87_D1, params['coupling_rabi'], params['detuning'],
                                       delta_k, params['duration'], params['steps'])


def run_phase_match_sweep(params: Dict[str, Any], seed: int, jobs: int = 1) -> KindResult:
    """Readout amplitude against longitudinal mismatch, plus the angle geometry."""
    ens = _ensemble(params)
    length = params['cloud_length']
    dk_l = _range(params, 'dk_L')
    delta_ks = list(dk_l / length)
    amplitudes = _map(partial(_amplitude_point, params), delta_ks, jobs)
    solver, quadrature = mb_solver.phase_matching_scan(
        ens, RB87_D1, params['coupling_rabi'], params['detuning'], delta_ks,
        params['duration'], params['steps'], amplitudes=amplitudes)
    sinc = np.abs(np.sinc(dk_l / (2.0 * math.pi)))

    thetas = np.linspace(0.0, params['theta_max'], params['theta_points'])
    k_write = 2.0 * math.pi / RB87_D1.wavelength
    k_read = 2.0 * math.pi / RB87_D2.wavelength
    exact = np.array([phase_match.delta_kz(t, k_write, k_read) for t in thetas])
    quadratic = np.array([phase_match.delta_kz_quadratic(t, k_write, k_read) for t in thetas])
    transverse = np.array([phase_match.readout_geometry(t)[3].transverse() for t in thetas])
    matched = int(np.argmin(np.abs(exact)))
    summary = {
        'sinc_correlation': _correlation(solver, sinc),
        'quadrature_correlation': _correlation(quadrature, sinc),
        'phase_matched_theta_deg': float(math.degrees(thetas[matched])),
        'max_output_transverse_k': float(np.max(transverse)),
    }
    traces = [
        ('phase_match', [('dk L', '1', dk_l), ('solver amplitude', '1', solver),
                         ('overlap integral', '1', quadrature), ('|sinc(dk L/2)|', '1', sinc)],
         'normalised readout amplitude against dk L'),
        ('geometry', [('theta', 'rad', thetas), ('dk_z exact', 'rad/m', exact),
                      ('dk_z small angle', 'rad/m', quadratic),
                      ('|k_out transverse|', 'rad/m', transverse)],
         'longitudinal mismatch against the write angle'),
    ]
    return KindResult(summary, traces)


KINDS: Dict[str, KindSpec] = {
    'memory-cycle': KindSpec(MEMORY_PARAMS, run_memory_cycle, _check_memory),
    'collapse-revival': KindSpec(COLLAPSE_PARAMS, run_collapse_revival, _check_collapse),
    'ssm-compensation': KindSpec(SSM_PARAMS, run_ssm_compensation, _check_ssm),
    'spectrometer': KindSpec(SPECTROMETER_PARAMS, run_spectrometer_scan, _check_spectrometer),
    'efficiency-map': KindSpec(EFFICIENCY_PARAMS, run_efficiency_map,
                               _range_check('bandwidth', 'inverse_tau')),
    'cavity-readout': KindSpec(CAVITY_PARAMS, run_cavity_readout, _check_cavity),
    'phase-match-sweep': KindSpec(PHASE_MATCH_PARAMS, run_phase_match_sweep, _check_phase_match),
}


# ---------------------------------------------------------------------------
# running


def manifest_for(scenario: Scenario) -> Dict[str, Any]:
    """Every resolved parameter, in SI and as written, plus the run metadata."""
    return {
        'scenario': scenario.name,
        'kind': scenario.kind,
        'seed': scenario.seed,
        'description': scenario.description,
        'reproduces': scenario.reproduces,
        'parameters_si': scenario.params,
        'parameters_as_written': scenario.raw,
    }


def run_scenario(scenario: Scenario, output_dir: str, jobs: int = 1,
                 cache: Optional[RunCache] = None) -> RunOutcome:
    """
    Run one scenario and write its artifacts.

    Args:
        scenario: Validated scenario
        output_dir: Root folder for run folders
        jobs: Worker processes for sweep points
        cache: Optional run cache; a hit skips the computation

    Returns:
        RunOutcome with the run folder and the headline metrics
    """
    if cache is not None:
        hit = cache.get_cached_run(scenario.text, scenario.seed)
        if hit is not None:
            logger.info("cache hit for %s (seed %d)", scenario.name, scenario.seed)
            return RunOutcome(hit['run_dir'], hit['summary'], cached=True)

    entry = KINDS[scenario.kind]
    writer = ArtifactWriter(output_dir, scenario.name, scenario.text, scenario.seed)
    try:
        result = entry.run(scenario.params, scenario.seed, jobs)
        files = []
        for name, columns, comment in result.traces:
            files.append(os.path.basename(writer.save_trace(name, columns, comment)))
        for name, array in result.images:
            files.append(os.path.basename(writer.save_image(name, array)))
        writer.save_manifest(manifest_for(scenario))
        writer.save_summary(result.summary)
        report = ReportGenerator().generate_run_report(
            scenario.name, scenario.kind, scenario.description, result.summary,
            scenario.params, files)
        writer.save_report(report)
        run_dir = writer.commit()
    except BaseException:
        writer.discard()
        raise
    if cache is not None:
        cache.cache_run(scenario.text, scenario.seed, run_dir, result.summary)
    return RunOutcome(run_dir, result.summary)
