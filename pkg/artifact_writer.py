"""
Artifact output for scenario runs.

Each run gets its own folder holding the manifest, one columnar text file
per trace, the JSON summary and a markdown report. Files are written to a
staging folder first and moved into place by `commit`, so a failed run
leaves nothing behind.
"""
import hashlib
import json
import math
import os
import shutil
import tempfile
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from core import __version__
from image_io import save_image

TRACE_FORMAT = '%.10e'
STAGING_PREFIX = '.staging_'

# (header, unit, values); complex values are split into re/im columns
Column = Tuple[str, str, Any]


def generate_run_id(scenario_text: str, seed: int) -> str:
    """
    Short, stable run identifier md5(scenario text + seed)[:12].

    MD5 only names folders here; collisions between scenario files are not
    a concern.
    """
    content = f"{scenario_text}{seed}"
    return hashlib.md5(content.encode('utf-8')).hexdigest()[:12]


def sanitize_filename(text: str, max_length: int = 50) -> str:
    """
    Sanitize text for use as filename.

    Args:
        text: Text to sanitize
        max_length: Maximum filename length

    Returns:
        Sanitized filename
    """
    invalid_chars = '<>:"/\\|?* '
    for char in invalid_chars:
        text = text.replace(char, '_')
    text = text.strip('. ')
    if len(text) > max_length:
        text = text[:max_length]
    if not text:
        text = 'untitled'
    return text


def to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if isinstance(value, (np.complexfloating, complex)):
        return {'re': to_builtin(value.real), 'im': to_builtin(value.imag)}
    return value


def dump_json(data: Dict[str, Any], filepath: str):
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(to_builtin(data), f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write('\n')


def format_trace(columns: Sequence[Column], comment: Optional[str] = None) -> str:
    """
    Render columns as `#`-headed text, one row per sample.

    Args:
        columns: (header, unit, values) triples of equal length
        comment: Optional first header line

    Returns:
        File content
    """
    names = []
    data = []
    for header, unit, values in columns:
        values = np.asarray(values)
        if np.iscomplexobj(values):
            names += [f"Re {header} [{unit}]", f"Im {header} [{unit}]"]
            data += [values.real, values.imag]
        else:
            names.append(f"{header} [{unit}]")
            data.append(values.astype(float))
    lengths = {d.size for d in data}
    if len(lengths) > 1:
        raise ValueError(f"trace columns differ in length: {sorted(lengths)}")
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append('# ' + '\t'.join(names))
    table = np.column_stack(data) if data else np.empty((0, 0))
    for row in table:
        lines.append('\t'.join(TRACE_FORMAT % x for x in row))
    return '\n'.join(lines) + '\n'


class ArtifactWriter:
    """Writes the artifacts of one scenario run."""

    def __init__(self, output_dir: str, scenario_name: str, scenario_text: str, seed: int):
        """
        Initialize the writer and its staging folder.

        Args:
            output_dir: Root folder for all runs
            scenario_name: Scenario name (file stem)
            scenario_text: Raw scenario text, used for the run id
            seed: Seed of the run
        """
        self.output_dir = output_dir
        self.run_id = generate_run_id(scenario_text, seed)
        self.run_name = f"{self.run_id}_{sanitize_filename(scenario_name)}"
        self.final_dir = os.path.join(output_dir, self.run_name)
        os.makedirs(output_dir, exist_ok=True)
        self.staging_dir = tempfile.mkdtemp(prefix=STAGING_PREFIX, dir=output_dir)
        self.files = []

    def _path(self, filename: str) -> str:
        self.files.append(filename)
        return os.path.join(self.staging_dir, filename)

    def save_trace(self, name: str, columns: Sequence[Column],
                   comment: Optional[str] = None) -> str:
        """
        Save a columnar trace as `<name>.dat`.

        Returns:
            Staged file path
        """
        filepath = self._path(f"{sanitize_filename(name)}.dat")
        with open(filepath, 'w', encoding='utf-8') as f:
            f.write(format_trace(columns, comment))
        return filepath

    def save_image(self, name: str, array: np.ndarray, bits: int = 16) -> str:
        """Save a 2D array as a grayscale `<name>.png`."""
        filepath = self._path(f"{sanitize_filename(name)}.png")
        return save_image(filepath, array, bits)

    def save_manifest(self, manifest: Dict[str, Any]) -> str:
        """Save every resolved parameter plus run metadata as manifest.json."""
        data = dict(manifest)
        data.setdefault('run_id', self.run_id)
        data.setdefault('version', __version__)
        filepath = self._path('manifest.json')
        dump_json(data, filepath)
        return filepath

    def save_summary(self, summary: Dict[str, Any]) -> str:
        filepath = self._path('summary.json')
        dump_json(summary, filepath)
        return filepath

    def save_report(self, content: str) -> str:
        filepath = self._path('report.md')
        with open(filepath, 'w', encoding='utf-8') as f:
            f.write(content)
        return filepath

    def commit(self) -> str:
        """
        Move the staged run into `<output_dir>/<run_id>_<name>/`.

        An existing folder of the same run is replaced.

        Returns:
            Final run folder
        """
        if os.path.isdir(self.final_dir):
            shutil.rmtree(self.final_dir)
        os.replace(self.staging_dir, self.final_dir)
        return self.final_dir

    def discard(self):
        """Drop everything staged so far."""
        shutil.rmtree(self.staging_dir, ignore_errors=True)
