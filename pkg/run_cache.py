"""
Cache of completed scenario runs, keyed by scenario text and seed.
"""
import hashlib
import json
import os
from typing import Any, Dict, Optional

CACHE_FILENAME = '.run_cache.json'


def run_key(scenario_text: str, seed: int) -> str:
    """Cache key md5(scenario text):seed."""
    digest = hashlib.md5(scenario_text.encode('utf-8')).hexdigest()
    return f"{digest}:{seed}"


class RunCache:
    """Maps scenario text and seed to the folder and summary of a finished run."""

    def __init__(self, cache_dir: str = './results'):
        """
        Initialize cache manager.

        Args:
            cache_dir: Output root holding the cache file
        """
        self.cache_dir = cache_dir
        self.cache_file = os.path.join(cache_dir, CACHE_FILENAME)
        self.cache = self._load_cache()

    def _load_cache(self) -> dict:
        """Load cache from file."""
        if os.path.exists(self.cache_file):
            try:
                with open(self.cache_file, 'r', encoding='utf-8') as f:
                    return json.load(f)
            except Exception as e:
                print(f"  Warning: Could not load run cache: {e}")
                return {}
        return {}

    def _save_cache(self):
        """Save cache to file."""
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            with open(self.cache_file, 'w', encoding='utf-8') as f:
                json.dump(self.cache, f, indent=2, ensure_ascii=False, sort_keys=True)
        except Exception as e:
            print(f"  Warning: Could not save run cache: {e}")

    def get_cached_run(self, scenario_text: str, seed: int) -> Optional[Dict[str, Any]]:
        """
        Look up a finished run.

        Args:
            scenario_text: Raw scenario file text
            seed: Seed the run used

        Returns:
            Dict with 'run_dir' and 'summary', or None when missing or the
            run folder no longer exists
        """
        entry = self.cache.get(run_key(scenario_text, seed))
        if not isinstance(entry, dict) or 'run_dir' not in entry:
            return None
        if not os.path.isdir(entry['run_dir']):
            return None
        return entry

    def cache_run(self, scenario_text: str, seed: int, run_dir: str, summary: Dict[str, Any]):
        """
        Record a finished run.

        Args:
            scenario_text: Raw scenario file text
            seed: Seed the run used
            run_dir: Folder holding the run's artifacts
            summary: Headline metrics of the run
        """
        self.cache[run_key(scenario_text, seed)] = {
            'run_dir': run_dir,
            'summary': summary,
        }
        self._save_cache()

    def clear_cache(self):
        """Clear all cached runs."""
        self.cache = {}
        self._save_cache()

    def get_cache_stats(self) -> Dict[str, int]:
        """Number of cached entries and how many still point at an existing folder."""
        live = sum(1 for entry in self.cache.values()
                   if isinstance(entry, dict) and os.path.isdir(entry.get('run_dir', '')))
        return {'entries': len(self.cache), 'live': live}
