"""Platoon control under lossy, delayed V2V links with a learned dynamic
communication topology."""
from .config import Config, ConfigError, default_config, load_config, save_config

__version__ = "0.1.0"

__all__ = ["Config", "ConfigError", "default_config", "load_config", "save_config"]
