import logging
import os
from pathlib import Path
from typing import Dict, Optional

import yaml
from dotenv import load_dotenv

from spinsplat.exceptions import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = 'SPINSPLAT_THREADS'
DEFAULT_MAX_THREADS = 4


def load_config(path: Optional[str] = None) -> Dict:
    """Load the YAML config; a missing path yields an empty config"""
    load_dotenv()

    if path is None:
        return {}

    config_path = Path(path)
    if not config_path.exists():
        logger.warning(f'Config file {config_path} not found, using defaults')
        return {}

    try:
        with open(config_path, 'r') as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f'Unable to parse config {config_path}: {e}') from e

    if not isinstance(config, dict):
        raise ConfigError(f'Config {config_path} must be a mapping of sections')

    logger.info(f'Loaded config sections: {sorted(config)}')
    return config


def section(config: Dict, name: str) -> Dict:
    """Return one named section, rejecting non-mapping values"""
    value = config.get(name, {}) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Config section '{name}' must be a mapping")
    return value


def worker_threads() -> int:
    """Worker cap for parallel rendering and sweep jobs"""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == '':
        return min(DEFAULT_MAX_THREADS, os.cpu_count() or 1)

    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigError(f'{THREADS_ENV_VAR} must be an integer, got {raw!r}') from e

    return max(1, threads)
