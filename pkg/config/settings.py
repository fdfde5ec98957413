"""
Centralized configuration management for the TriDet detector.

This module handles environment settings (read through python-dotenv),
logging setup, and validation of the values with fallbacks.
"""

import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional
from dotenv import load_dotenv
from loguru import logger

# Load environment variables
load_dotenv()


class ConfigError(Exception):
    """Custom exception for environment configuration errors."""
    pass


class Settings:
    """
    Centralized settings management with validation and fallbacks.

    Handles environment-based configuration with validation and fallback
    values; run hyperparameters live in ``config.train_config`` instead.
    """

    def __init__(self):
        """Initialize settings and configure logging."""
        self._validate_environment()
        self._setup_logging()

    def _validate_environment(self) -> None:
        """Validate environment variables that must parse when present."""
        raw_seed = os.getenv("TRIDET_SEED")
        if raw_seed is not None and raw_seed.strip() != "":
            try:
                int(raw_seed)
            except ValueError:
                raise ConfigError(f"TRIDET_SEED must be an integer, got {raw_seed!r}")

    def _setup_logging(self) -> None:
        """Configure logging based on environment settings."""
        # Remove default logger
        logger.remove()

        logger.add(
            sys.stderr,
            level=self.LOG_LEVEL,
            format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
                   "<level>{level: <8}</level> | "
                   "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
                   "<level>{message}</level>"
        )

        if self.LOG_FILE:
            logger.add(
                self.LOG_FILE,
                rotation="1 day",
                retention="7 days",
                level="DEBUG" if self.DEBUG_MODE else "INFO",
                format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
            )

    @property
    def LOG_LEVEL(self) -> str:
        """Logging level for the console sink."""
        return os.getenv("TRIDET_LOG_LEVEL", "INFO").upper()

    @property
    def LOG_FILE(self) -> Optional[str]:
        """Optional log file path; file logging is off when unset."""
        return os.getenv("TRIDET_LOG_FILE") or None

    @property
    def DEBUG_MODE(self) -> bool:
        """Debug mode flag."""
        return os.getenv("TRIDET_DEBUG", "False").lower() == "true"

    @property
    def SEED(self) -> Optional[int]:
        """Seed override applied on top of any run configuration."""
        raw = os.getenv("TRIDET_SEED")
        if raw is None or raw.strip() == "":
            return None
        try:
            return int(raw)
        except ValueError:
            logger.warning(f"Invalid TRIDET_SEED value {raw!r}, ignoring")
            return None

    @property
    def DATA_DIRECTORY(self) -> Path:
        """Default directory for generated datasets and run outputs."""
        return Path(os.getenv("TRIDET_DATA_DIR", "./data"))

    @property
    def GRADCHECK_TOLERANCE(self) -> float:
        """Worst relative error accepted by the gradient-check suite."""
        try:
            return float(os.getenv("TRIDET_GRADCHECK_TOL", "1e-4"))
        except ValueError:
            logger.warning("Invalid TRIDET_GRADCHECK_TOL value, using default: 1e-4")
            return 1e-4

    def get_config_dict(self) -> Dict[str, Any]:
        """Get all configuration as a dictionary."""
        return {
            "log_level": self.LOG_LEVEL,
            "log_file": self.LOG_FILE,
            "debug_mode": self.DEBUG_MODE,
            "seed": self.SEED,
            "data_directory": str(self.DATA_DIRECTORY),
            "gradcheck_tolerance": self.GRADCHECK_TOLERANCE,
        }


# Global settings instance
try:
    settings = Settings()
    logger.debug("Configuration loaded successfully")
except ConfigError as e:
    logger.error(f"Configuration error: {e}")
    sys.exit(1)


def get_settings() -> Settings:
    """Get the global settings instance."""
    return settings
