"""
Unit tests for the application configuration module.
"""
import json
import os
import tempfile
import unittest
from unittest.mock import patch

from src import __version__
from src.config.app_config import AppConfig, resolve_seed, write_run_record
from src.utils.error_handlers import ConfigError


class TestAppConfig(unittest.TestCase):
    """Test cases for AppConfig and the run record."""

    @patch.dict(os.environ, {"SPINEKIT_WORKERS": "4", "SPINEKIT_LOG_LEVEL": "DEBUG"}, clear=True)
    def test_from_env(self):
        config = AppConfig.from_env(env_file=os.devnull)
        self.assertEqual(config.workers, 4)
        self.assertEqual(config.log_level, "DEBUG")
        self.assertEqual(config.predictor_timeout, 600.0)

    @patch.dict(os.environ, {"SPINEKIT_WORKERS": "0"}, clear=True)
    def test_invalid_env(self):
        with self.assertRaises(ConfigError):
            AppConfig.from_env(env_file=os.devnull)

    @patch.dict(os.environ, {}, clear=True)
    def test_env_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, ".env")
            with open(path, "w", encoding="utf-8") as f:
                f.write("SPINEKIT_PREDICTOR_TIMEOUT=12.5\n")
            self.assertEqual(AppConfig.from_env(env_file=path).predictor_timeout, 12.5)

    def test_resolve_seed(self):
        self.assertEqual(resolve_seed(42), 42)
        seed = resolve_seed()
        self.assertIsInstance(seed, int)
        self.assertTrue(0 <= seed < 2 ** 64)

    def test_write_run_record(self):
        with tempfile.TemporaryDirectory() as tmp:
            out_dir = os.path.join(tmp, "run")
            path = write_run_record(out_dir, "phantom", {"n_vertebrae": 5}, seed=9)
            with open(path, "r", encoding="utf-8") as f:
                record = json.load(f)
        self.assertEqual(record, {"command": "phantom", "version": __version__, "seed": 9,
                                  "config": {"n_vertebrae": 5}})


if __name__ == "__main__":
    unittest.main()
