"""
Markdown reports: the per-run report.md and the scenario catalog.
"""
import math
from typing import Any, Dict, List, Sequence


class ReportGenerator:
    """Generator for markdown tables of scenarios and run results."""

    def __init__(self, include_reproduces: bool = True):
        """
        Initialize the report generator.

        Args:
            include_reproduces: Whether the catalog lists what each scenario reproduces
        """
        self.include_reproduces = include_reproduces
        self.headers = ['Scenario', 'Kind', 'Description']
        if include_reproduces:
            self.headers.append('Reproduces')

    def escape_markdown(self, text: str) -> str:
        """
        Escape special markdown characters in text.

        Args:
            text: Text to escape

        Returns:
            Escaped text
        """
        text = str(text).replace('|', '\\|')
        text = text.replace('\n', ' ')
        return ' '.join(text.split())

    def truncate_text(self, text: str, max_length: int = 120) -> str:
        """
        Truncate text to a maximum length.

        Args:
            text: Text to truncate
            max_length: Maximum length

        Returns:
            Truncated text with ellipsis if needed
        """
        if len(text) > max_length:
            return text[:max_length - 3] + '...'
        return text

    def format_value(self, value: Any) -> str:
        """Numbers with 6 significant digits, everything else as text."""
        if isinstance(value, bool):
            return 'true' if value else 'false'
        if isinstance(value, float):
            if math.isnan(value) or math.isinf(value):
                return str(value)
            return f"{value:.6g}"
        if isinstance(value, (list, tuple)):
            return ', '.join(self.format_value(v) for v in value)
        return self.escape_markdown(str(value))

    def generate_table(self, entries: Sequence[Dict[str, str]]) -> str:
        """
        Generate the catalog table.

        Args:
            entries: Dicts with name, kind, description and reproduces

        Returns:
            Markdown formatted table
        """
        lines = ['| ' + ' | '.join(self.headers) + ' |',
                 '|' + '|'.join(['---' for _ in self.headers]) + '|']
        for entry in entries:
            cells = [
                f"`{self.escape_markdown(entry.get('name', ''))}`",
                self.escape_markdown(entry.get('kind', '')),
                self.escape_markdown(self.truncate_text(entry.get('description', ''))),
            ]
            if self.include_reproduces:
                cells.append(self.escape_markdown(entry.get('reproduces', 'N/A')))
            lines.append('| ' + ' | '.join(cells) + ' |')
        return '\n'.join(lines)

    def generate_catalog(self, entries: Sequence[Dict[str, str]],
                         title: str = "Bundled Scenarios") -> str:
        """Complete catalog document."""
        return '\n'.join([
            f"# {title}",
            "",
            f"Total scenarios: {len(entries)}",
            "",
            self.generate_table(entries),
            "",
        ])

    def generate_run_report(self, name: str, kind: str, description: str,
                            summary: Dict[str, Any], parameters: Dict[str, Any],
                            files: List[str]) -> str:
        """
        Human-readable summary of one run.

        Args:
            name: Scenario name
            kind: Scenario kind
            description: One-line description
            summary: Headline metrics
            parameters: Resolved parameters in SI units
            files: Trace files written for the run

        Returns:
            Markdown document
        """
        parts = [
            f"# {name}",
            "",
            f"**Kind:** {kind}",
            "",
            self.escape_markdown(description),
            "",
            "## Results",
            "",
            "| Metric | Value |",
            "|---|---|",
        ]
        for key in sorted(summary):
            parts.append(f"| {key} | {self.format_value(summary[key])} |")
        parts += ["", "## Parameters (SI)", "", "| Key | Value |", "|---|---|"]
        for key in sorted(parameters):
            parts.append(f"| {key} | {self.format_value(parameters[key])} |")
        if files:
            parts += ["", "## Traces", ""]
            parts += [f"- `{f}`" for f in files]
        parts.append("")
        return '\n'.join(parts)
