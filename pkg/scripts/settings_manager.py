import json
import os
import tempfile

from scripts.common import (
    MANIFOLD_TOL, PROJECTION_MAX_ITER, PROJECTION_TOL, SYMMETRY_TOL, LssError,
)
from utils.console import log_error


class SettingsError(LssError):
    pass


class SettingsManager:
    def __init__(self, app_dir=None):
        self.temp_dir = tempfile.gettempdir()
        self.app_dir = app_dir or os.path.join(self.temp_dir, '.lss-tools')
        os.makedirs(self.app_dir, exist_ok=True)
        self.settings_file = os.path.join(self.app_dir, 'settings.json')
        self.default_settings = {
            'tol_rank': 1e-10,  # rank cut-off factor on sigma_max * max(rows, cols)
            'tol_img': None,  # None: same factor as tol_rank
            'manifold_tol': MANIFOLD_TOL,
            'projection_tol': PROJECTION_TOL,
            'projection_max_iter': PROJECTION_MAX_ITER,
            'symmetry_tol': SYMMETRY_TOL,
            'sample_count': 200,  # quasi-random points per check
            'sample_seed': 2004,
            't1': 10.0,
            'dt': 1e-3,
        }
        self.settings = self.load_settings()

    def load_settings(self):
        try:
            if os.path.exists(self.settings_file):
                with open(self.settings_file, 'r') as f:
                    loaded = json.load(f)
                    # Merge settings, but ensure new keys are added
                    merged = self.default_settings.copy()
                    for key, value in loaded.items():
                        if key in merged:
                            merged[key] = value
                    return merged
            return self.default_settings.copy()
        except Exception as e:
            log_error(f"Error loading settings: {e}", tag="Settings")
            return self.default_settings.copy()

    def save_settings(self):
        try:
            with open(self.settings_file, 'w') as f:
                json.dump(self.settings, f, indent=4, sort_keys=True)
        except Exception as e:
            log_error(f"Error saving settings: {e}", tag="Settings")

    def get(self, key, default=None):
        return self.settings.get(key, default)

    def set(self, key, value):
        if key not in self.default_settings:
            raise SettingsError(f"unknown setting '{key}' (known: {', '.join(sorted(self.default_settings))})")
        self.settings[key] = self.coerce(key, value)
        self.save_settings()

    def coerce(self, key, value):
        """Convert command-line text to the type of the built-in default."""
        if not isinstance(value, str):
            return value
        default = self.default_settings[key]
        if value.lower() in ('none', 'null', ''):
            if default is None or key == 'tol_img':
                return None
            raise SettingsError(f"setting '{key}' cannot be empty")
        try:
            if isinstance(default, int) and not isinstance(default, bool):
                return int(value)
            return float(value)
        except ValueError:
            raise SettingsError(f"setting '{key}' needs a number, got '{value}'") from None

    def resolve(self, key, override=None):
        """Command-line value if given, else the stored setting."""
        return self.coerce(key, override) if override is not None else self.get(key)
