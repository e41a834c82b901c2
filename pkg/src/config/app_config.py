"""
Application configuration module

This module contains the toolkit-wide defaults (read from the environment
and an optional .env file) and the run record written next to outputs.
"""
import json
import logging
import os
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from src import __version__
from src.utils.error_handlers import ConfigError

# Set up logging
logger = logging.getLogger(__name__)

ENV_PREFIX = "SPINEKIT_"


class AppConfig(BaseModel):
    """Defaults shared by all subcommands; CLI flags override them."""
    log_level: str = Field("INFO", description="Root log level")
    workers: int = Field(1, ge=1, description="Parallelism limit for patch and cutout predictions")
    exchange_dir: Optional[str] = Field(None, description="Scratch directory of external predictors")
    predictor_timeout: float = Field(600.0, gt=0.0, description="Seconds before an external predictor is killed")

    @classmethod
    def from_env(cls, env_file=None):
        """
        Build the config from SPINEKIT_* environment variables.

        A .env file (the given one, or one found from the working
        directory) is loaded first without overriding the environment.

        Raises:
            ConfigError: If a variable does not validate
        """
        load_dotenv(dotenv_path=env_file, override=False)
        values = {}
        for name in cls.model_fields:
            raw = os.environ.get(ENV_PREFIX + name.upper())
            if raw is not None and raw != "":
                values[name] = raw
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid {ENV_PREFIX}* environment settings: {e}") from e


def resolve_seed(seed=None):
    """Return the seed, or fresh 64-bit entropy when none was given."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])


def write_run_record(out_dir, command, config, seed=None):
    """
    Write run.json with the subcommand, resolved config, seed and toolkit version.

    Args:
        out_dir: Output directory of the run
        command: Subcommand name
        config (dict): Fully resolved parameters
        seed: Seed used by the run, if any

    Returns:
        str: Path of the written record
    """
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)

    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
    }
    path = os.path.join(out_dir, "run.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=4, default=str)
    logger.debug(f"Wrote run record to {path}")
    return path
