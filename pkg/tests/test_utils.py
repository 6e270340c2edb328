"""
Unit tests for the utils module: errors, validation results, configuration
and the shared helpers.
"""

import gzip
import json
import os
from unittest.mock import patch

import numpy as np
import pytest

from utils import (
    ArgumentError,
    CommscapeError,
    ConfigurationManager,
    DataError,
    ErrorHandler,
    ParseError,
    PruningBoundViolation,
    UnknownNodeError,
    UsageError,
    ValidationResult,
    WalkCountOverflowError,
    chunk_bounds,
    derive_seed,
    dumps_report,
    open_binary,
    parallel_map,
    write_report,
)


class TestErrors:
    """Test cases for the exception hierarchy."""

    def test_usage_error_names_flag(self):
        """Test usage errors name their flag."""
        error = UsageError("input file is required", flag="--edges")
        assert str(error) == "--edges: input file is required"
        assert error.flag == "--edges"

    def test_parse_error_line_prefix(self):
        """Test the parse error line prefix."""
        error = ParseError("expected 2 tokens", line=7)
        assert str(error) == "line 7: expected 2 tokens"
        assert error.line == 7

    def test_parse_error_location(self):
        """Test the parse error location."""
        error = ParseError("missing value", location="line 3, column 'x'")
        assert str(error).startswith("line 3, column 'x': ")

    def test_unknown_node_message(self):
        """Test the unknown node message."""
        error = UnknownNodeError(42)
        assert str(error) == "unknown node id: 42"
        assert isinstance(error, KeyError)

    def test_hierarchy(self):
        """Test the exception hierarchy."""
        assert issubclass(ArgumentError, ValueError)
        assert issubclass(ParseError, DataError)
        assert issubclass(WalkCountOverflowError, ArithmeticError)
        assert issubclass(PruningBoundViolation, AssertionError)
        for cls in (ArgumentError, UsageError, DataError, UnknownNodeError, PruningBoundViolation):
            assert issubclass(cls, CommscapeError)


class TestValidationResult:
    """Test cases for ValidationResult."""

    def test_first_error(self):
        """Test the first error of a failed result."""
        result = ValidationResult(is_valid=False, errors=["a", "b"])
        assert result.first_error == "a"
        assert result.warnings == []

    def test_no_error(self):
        """Test a passing result."""
        assert ValidationResult(is_valid=True, errors=[]).first_error is None


class TestHelpers:
    """Test cases for parallel and IO helpers."""

    def test_parallel_map_preserves_order(self):
        """Test ordered results from parallel_map."""
        items = list(range(50))
        assert parallel_map(lambda x: x * x, items, threads=8) == [x * x for x in items]

    def test_parallel_map_single_thread(self):
        """Test parallel_map on one thread."""
        assert parallel_map(str, [3, 1, 2], threads=1) == ["3", "1", "2"]

    def test_chunk_bounds(self):
        """Test chunk boundaries."""
        bounds = chunk_bounds(10, 4)
        assert [(r.start, r.stop) for r in bounds] == [(0, 4), (4, 8), (8, 10)]
        assert chunk_bounds(0, 4) == []

    def test_chunk_bounds_rejects_zero(self):
        """Test a zero chunk size."""
        with pytest.raises(ArgumentError):
            chunk_bounds(5, 0)

    def test_derive_seed_reproducible(self):
        """Test seed derivation."""
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
        assert derive_seed(7, 1) != derive_seed(7, 2)
        assert derive_seed(7, 1) != derive_seed(8, 1)

    def test_open_binary_gzip(self, tmp_path):
        """Test reading gzip input."""
        path = tmp_path / "edges.txt.gz"
        with gzip.open(path, "wb") as stream:
            stream.write(b"0\t1\n")
        with open_binary(path) as stream:
            assert stream.read() == b"0\t1\n"

    def test_dumps_report_canonical(self):
        """Test canonical report JSON."""
        text = dumps_report({"b": np.int64(2), "a": (1.5, np.float64(0.25))})
        assert text.endswith("\n")
        assert list(json.loads(text)) == ["a", "b"]
        assert json.loads(text) == {"a": [1.5, 0.25], "b": 2}

    def test_dumps_report_rejects_nan(self):
        """Test rejection of NaN in reports."""
        with pytest.raises(ValueError):
            dumps_report({"x": float("nan")})

    def test_write_report_stdout(self, capsys):
        """Test writing a report to standard output."""
        write_report({"k": 1}, "-")
        assert json.loads(capsys.readouterr().out) == {"k": 1}

    def test_write_report_file(self, tmp_path):
        """Test writing a report file."""
        target = tmp_path / "nested" / "report.json"
        write_report({"k": 1}, target)
        assert json.loads(target.read_text()) == {"k": 1}


class TestConfigurationManager:
    """Test cases for ConfigurationManager."""

    def test_defaults(self):
        """Test default configuration values."""
        with patch.dict(os.environ, {}, clear=True):
            config = ConfigurationManager(load_env_file=False)
        assert config.environment() == "development"
        assert config.walk_block_size() == 256
        assert config.assign_chunk_size() == 4096
        assert config.csv_chunk_size() == 10000
        assert config.validate_configuration().is_valid

    def test_threads_from_environment(self):
        """Test the thread count from the environment."""
        with patch.dict(os.environ, {"COMMSCAPE_THREADS": "3"}, clear=True):
            config = ConfigurationManager(load_env_file=False)
        assert config.default_threads() == 3

    def test_threads_fall_back_to_cpu_count(self):
        """Test the CPU count fallback."""
        with patch.dict(os.environ, {}, clear=True), patch("os.cpu_count", return_value=6):
            config = ConfigurationManager(load_env_file=False)
            assert config.default_threads() == 6

    def test_invalid_values(self):
        """Test validation of invalid values."""
        env = {"WALK_BLOCK_SIZE": "zero", "COMMSCAPE_THREADS": "0", "LOG_LEVEL": "LOUD"}
        with patch.dict(os.environ, env, clear=True):
            config = ConfigurationManager(load_env_file=False)
        result = config.validate_configuration()
        assert not result.is_valid
        assert "WALK_BLOCK_SIZE must be a valid integer" in result.errors
        assert "COMMSCAPE_THREADS must be >= 1" in result.errors
        assert any("LOG_LEVEL" in error for error in result.errors)

    def test_unknown_environment_warns(self):
        """Test the warning for an unknown APP_ENV."""
        with patch.dict(os.environ, {"APP_ENV": "staging"}, clear=True):
            config = ConfigurationManager(load_env_file=False)
        result = config.validate_configuration()
        assert result.is_valid
        assert "staging" in result.warnings[0]

    def test_typed_getters(self):
        """Test typed configuration getters."""
        with patch.dict(os.environ, {"CSV_CHUNK_SIZE": "12"}, clear=True):
            config = ConfigurationManager(load_env_file=False)
        assert config.get_int_config("CSV_CHUNK_SIZE") == 12
        assert config.get_int_config("LOG_DIR", default=7) == 7
        assert config.get_safe_config_summary()["LOG_DIR"] == "Not set"


class TestErrorHandler:
    """Test cases for ErrorHandler."""

    @pytest.fixture
    def handler(self):
        return ErrorHandler(ConfigurationManager(load_env_file=False))

    @pytest.mark.parametrize("error, code", [
        (UsageError("bad", flag="--k"), 2),
        (ArgumentError("k out of range"), 2),
        (ParseError("bad line", line=1), 1),
        (WalkCountOverflowError("too many walks"), 1),
        (FileNotFoundError(2, "No such file", "missing.txt"), 1),
    ])
    def test_exit_codes(self, handler, error, code):
        """Test exit codes per error type."""
        assert handler.exit_code_for(error) == code

    def test_describe(self, handler):
        """Test error descriptions."""
        assert handler.describe(ParseError("x", line=2)) == "parse error: line 2: x"
        assert handler.describe(UnknownNodeError(9)) == "lookup error: unknown node id: 9"
        assert handler.describe(FileNotFoundError(2, "No such file", "a.txt")) == "file not found: a.txt"

    def test_handle_writes_stderr(self, handler, capsys):
        """Test error messages go to standard error."""
        code = handler.handle(UsageError("must be >= 1", flag="--threads"), "cli")
        assert code == 2
        assert capsys.readouterr().err == "usage error: --threads: must be >= 1\n"

    def test_handle_validation_error(self, handler):
        """Test handling of a failed validation."""
        result = ValidationResult(is_valid=False, errors=["a", "b"], warnings=["w"])
        assert handler.handle_validation_error(result, "config") == "config: a; b\nwarning: w"
        assert handler.handle_validation_error(ValidationResult(True, [])) == ""
