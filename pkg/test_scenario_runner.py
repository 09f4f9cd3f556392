"""
Unit tests for scenario parsing, validation and running.
"""
import json
import math
import os
import shutil
import tempfile
import unittest

from core import MHZ, ParseError, ValidationError
from run_cache import RunCache
from scenario_runner import (format_catalog, list_scenarios, load_scenario, manifest_for,
                             parse_scenario, run_scenario, scenario_files, split_unit)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')

STAIRCASE = """# two fragments
kind=collapse-revival
seed=3
description="Two equal fragments"
reproduces="collapse and revival"
populations=1,1
larmor_offsets_kHz=0,10
samples=401
"""


class TestParsing(unittest.TestCase):
    """Test cases for parse_scenario."""

    def test_split_unit(self):
        """Test suffix matching, longest first."""
        self.assertEqual(split_unit('gradient_MHz_per_cm'), ('gradient', MHZ / 1e-2))
        self.assertEqual(split_unit('coupling_rabi_MHz'), ('coupling_rabi', MHZ))
        self.assertEqual(split_unit('od'), ('od', 1.0))
        self.assertEqual(split_unit('_us'), ('_us', 1.0))

    def test_units_converted_to_si(self):
        """Test that values are stored in SI units under the bare name."""
        scenario = parse_scenario(STAIRCASE, 'pair')
        self.assertEqual(scenario.kind, 'collapse-revival')
        self.assertEqual(scenario.seed, 3)
        self.assertEqual(scenario.params['populations'], [1.0, 1.0])
        self.assertAlmostEqual(scenario.params['larmor_offsets'][1], 2 * math.pi * 1e4)
        self.assertEqual(scenario.raw['larmor_offsets_kHz'], '0,10')
        self.assertIsNone(scenario.params['revival_time'])

    def test_duplicate_key(self):
        """Test that a repeated key is a parse error."""
        with self.assertRaises(ParseError):
            parse_scenario(STAIRCASE + "samples=501\n")

    def test_malformed_line(self):
        """Test that a line without '=' is a parse error."""
        with self.assertRaises(ParseError):
            parse_scenario(STAIRCASE + "samples 501\n")

    def test_non_numeric_value(self):
        """Test that a non-number is a parse error."""
        with self.assertRaises(ParseError):
            parse_scenario(STAIRCASE.replace('samples=401', 'samples=many'))

    def test_unknown_key(self):
        """Test that a key with a wrong unit suffix is a validation error."""
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE + "bias_field_G=0.2\n")

    def test_missing_meta_key(self):
        """Test that the reproduces line is mandatory."""
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE.replace('reproduces="collapse and revival"\n', ''))

    def test_unknown_kind(self):
        """Test that an unknown kind is a validation error."""
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE.replace('collapse-revival', 'time-machine'))

    def test_out_of_range(self):
        """Test bounds and cross-key checks."""
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE.replace('samples=401', 'samples=2'))
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE.replace('populations=1,1', 'populations=1,1,1'))

    def test_seed_range(self):
        """Test that seeds must fit in 64 unsigned bits."""
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE.replace('seed=3', 'seed=-1'))
        with self.assertRaises(ValidationError):
            parse_scenario(STAIRCASE).with_seed(2 ** 64)

    def test_missing_file(self):
        """Test that a missing scenario file is a parse error."""
        with self.assertRaises(ParseError):
            load_scenario(os.path.join(SCENARIO_DIR, 'missing.scenario'))


class TestBundledScenarios(unittest.TestCase):
    """Test cases for the bundled scenario catalog."""

    def test_all_bundled_scenarios_validate(self):
        """Test that every bundled scenario parses."""
        paths = scenario_files(SCENARIO_DIR)
        self.assertGreaterEqual(len(paths), 8)
        for path in paths:
            scenario = load_scenario(path)
            self.assertTrue(scenario.description)
            self.assertTrue(scenario.reproduces)

    def test_catalog_is_stable(self):
        """Test that the catalog is sorted and byte-identical across calls."""
        first = format_catalog(list_scenarios(SCENARIO_DIR))
        second = format_catalog(list_scenarios(SCENARIO_DIR))
        self.assertEqual(first, second)
        names = [line.split()[0] for line in first.splitlines()]
        self.assertEqual(names, sorted(names))
        self.assertIn('gem_pulse_train', names)

    def test_empty_directory(self):
        """Test the catalog of a missing folder."""
        self.assertEqual(format_catalog(list_scenarios('/nonexistent/scenarios')), '')


class TestRunScenario(unittest.TestCase):
    """Test cases for run_scenario."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test files."""
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_collapse_revival_run(self):
        """Test the artifacts and metrics of the bundled staircase."""
        scenario = load_scenario(os.path.join(SCENARIO_DIR, 'collapse_revival_staircase.scenario'))
        outcome = run_scenario(scenario, self.temp_dir)
        self.assertFalse(outcome.cached)
        for name in ('manifest.json', 'summary.json', 'report.md', 'precession.dat'):
            self.assertTrue(os.path.exists(os.path.join(outcome.run_dir, name)))
        self.assertAlmostEqual(outcome.summary['revival_ratio'], 1.0, places=6)
        self.assertLess(outcome.summary['collapse_ratio'], 0.05)
        self.assertAlmostEqual(outcome.summary['revival_time'], 1e-4)
        with open(os.path.join(outcome.run_dir, 'manifest.json'), 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        self.assertEqual(manifest['seed'], 34)
        self.assertEqual(manifest['kind'], 'collapse-revival')
        self.assertEqual(manifest['parameters_as_written']['larmor_offsets_kHz'], '0,10,20,30')
        staged = [d for d in os.listdir(self.temp_dir) if d.startswith('.staging_')]
        self.assertEqual(staged, [])

    def test_cavity_reference_run(self):
        """Test that the selectivity is the ratio of two simulated readouts."""
        scenario = load_scenario(os.path.join(SCENARIO_DIR, 'cavity_reference.scenario'))
        summary = run_scenario(scenario, self.temp_dir).summary
        self.assertGreater(summary['efficiency'], 0.90)
        self.assertGreater(summary['offmatched_efficiency'], 0.0)
        self.assertAlmostEqual(summary['selectivity'],
                               summary['efficiency'] / summary['offmatched_efficiency'], places=6)
        self.assertAlmostEqual(summary['selectivity'] / (5.0 / math.sin(5.0)) ** 2, 1.0, delta=0.1)
        self.assertLessEqual(summary['offmatched_destruction_full'], 0.02)

    def test_rerun_is_identical(self):
        """Test that the same scenario and seed write the same summary."""
        scenario = parse_scenario(STAIRCASE, 'pair')
        first = run_scenario(scenario, self.temp_dir)
        with open(os.path.join(first.run_dir, 'summary.json'), 'rb') as f:
            before = f.read()
        second = run_scenario(scenario, self.temp_dir)
        self.assertEqual(first.run_dir, second.run_dir)
        with open(os.path.join(second.run_dir, 'summary.json'), 'rb') as f:
            self.assertEqual(f.read(), before)

    def test_cache_hit(self):
        """Test that a cached run is returned without recomputing."""
        scenario = parse_scenario(STAIRCASE, 'pair')
        cache = RunCache(self.temp_dir)
        first = run_scenario(scenario, self.temp_dir, cache=cache)
        second = run_scenario(scenario, self.temp_dir, cache=cache)
        self.assertTrue(second.cached)
        self.assertEqual(second.run_dir, first.run_dir)
        self.assertEqual(second.summary, first.summary)
        other = run_scenario(scenario.with_seed(4), self.temp_dir, cache=cache)
        self.assertFalse(other.cached)

    def test_unequal_spacing_needs_revival_time(self):
        """Test that unequal Larmor steps require an explicit revival time."""
        text = (STAIRCASE.replace('populations=1,1', 'populations=1,1,1')
                .replace('larmor_offsets_kHz=0,10', 'larmor_offsets_kHz=0,10,25'))
        scenario = parse_scenario(text, 'uneven')
        with self.assertRaises(ValidationError):
            run_scenario(scenario, self.temp_dir)
        self.assertEqual(os.listdir(self.temp_dir), [])

    def test_manifest_for(self):
        """Test that the manifest carries SI and as-written parameters."""
        manifest = manifest_for(parse_scenario(STAIRCASE, 'pair'))
        self.assertEqual(manifest['scenario'], 'pair')
        self.assertIn('larmor_offsets', manifest['parameters_si'])
        self.assertIn('larmor_offsets_kHz', manifest['parameters_as_written'])


if __name__ == '__main__':
    unittest.main()
