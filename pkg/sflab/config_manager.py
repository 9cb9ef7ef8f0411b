"""Configuration file handling for sflab"""

from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from rich.console import Console

from .errors import InvalidInputError

console = Console(stderr=True)

CONFIG_DIR = Path.home() / ".config" / "sflab"
CONFIG_FILE = CONFIG_DIR / "config.yaml"

# Keys a user-level defaults file may set
USER_KEYS = ("threads", "mc_samples")


def config_exists() -> bool:
    """Check if the user defaults file exists"""
    return CONFIG_FILE.exists()


def load_config() -> Dict[str, Any]:
    """Load user defaults from file"""
    if not CONFIG_FILE.exists():
        return {}

    try:
        with open(CONFIG_FILE, 'r') as f:
            config = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        console.print(f"[yellow]Warning: Could not load config: {e}[/yellow]")
        return {}

    if not isinstance(config, dict):
        console.print(f"[yellow]Warning: Ignoring {CONFIG_FILE}: not a mapping[/yellow]")
        return {}
    return {key: config[key] for key in USER_KEYS if key in config}


def save_config(config: Dict[str, Any]) -> bool:
    """Save user defaults to file"""
    try:
        CONFIG_DIR.mkdir(parents=True, exist_ok=True)
        with open(CONFIG_FILE, 'w') as f:
            yaml.safe_dump(config, f, default_flow_style=False)
        return True
    except OSError as e:
        console.print(f"[red]Error saving config: {e}[/red]")
        return False


def get_configured_threads(default: int = 1) -> int:
    """Worker cap from user defaults (default: single worker)"""
    threads = load_config().get('threads', default)
    if not isinstance(threads, int) or threads < 1:
        console.print(f"[yellow]Warning: Invalid threads value {threads!r}, using {default}[/yellow]")
        return default
    return threads


def get_configured_mc_samples(default: int) -> int:
    """Monte-Carlo sample count from user defaults"""
    samples = load_config().get('mc_samples', default)
    if not isinstance(samples, int) or samples < 1:
        console.print(f"[yellow]Warning: Invalid mc_samples value {samples!r}, using {default}[/yellow]")
        return default
    return samples


def load_experiment_file(path: Path) -> Dict[str, Any]:
    """Load an experiment config document (YAML, or JSON as a YAML subset)"""
    try:
        with open(path, 'r') as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise InvalidInputError(f"Could not parse config {path}: {e}") from e

    if document is None:
        return {}
    if not isinstance(document, dict):
        raise InvalidInputError(f"Config {path} must be a mapping of keys to values")
    return document


def merge_overrides(base: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Overlay command-line values on file values, skipping unset flags"""
    merged = dict(base)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return merged
