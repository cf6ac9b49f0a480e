"""Defines exception classes for the adssm package."""
from typing import Sequence

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_MALFORMED_INPUT = 4


class AdssmError(Exception):
    """Base error for all adssm exceptions."""

    exit_code = EXIT_FAILURE


class ExitException(AdssmError):
    """Exception to exit a command with a code."""

    def __init__(self, code: int, message: str = ''):
        self.exit_code = code
        super().__init__(message)


class SignalError(AdssmError):
    """Raised when a waveform or a preprocessing request is invalid."""


class UnusableChunkError(SignalError):
    """Raised when a chunk does not contain enough peaks to segment."""

    def __init__(self, count: int, chunk_id: str = ''):
        self.count = count
        self.chunk_id = chunk_id
        where = f' in chunk {chunk_id}' if chunk_id else ''
        super().__init__(
            f'Need at least 2 peaks to segment intervals, found {count}{where}.')


class AlignmentError(SignalError):
    """Raised when PP and RR intervals cannot be paired."""


class ConfigError(AdssmError):
    """Raised for unknown keys or malformed configuration content."""

    exit_code = EXIT_MALFORMED_INPUT

    def __init__(self, message: str, line: int = 0):
        self.line = line
        if line:
            message = f'line {line}: {message}'
        super().__init__(message)


class UnknownConfigKeyError(ConfigError):
    """Raised when a configuration key is not recognized."""

    def __init__(self, key: str, valid: Sequence[str], line: int = 0):
        self.key = key
        self.valid = tuple(valid)
        super().__init__(
            f'Unknown config key {key!r}; valid keys: {", ".join(valid)}.',
            line=line)


class MalformedCsvError(AdssmError):
    """Raised when a CSV input does not follow its documented format."""

    exit_code = EXIT_MALFORMED_INPUT

    def __init__(self, path: str, message: str, line: int = 0):
        self.path = path
        self.line = line
        where = f'{path}:{line}' if line else path
        super().__init__(f'{where}: {message}')


class CheckpointError(AdssmError):
    """Raised when a checkpoint file cannot be decoded."""

    exit_code = EXIT_MALFORMED_INPUT


class NonFiniteError(AdssmError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, chunk_id: str = '', name: str = ''):
        self.chunk_id = chunk_id
        self.name = name
        super().__init__(message)


class InsufficientDrawsError(AdssmError):
    """Raised when too few Monte Carlo draws back an uncertainty band."""

    def __init__(self, draws: int, minimum: int):
        self.draws = draws
        self.minimum = minimum
        super().__init__(
            f'Uncertainty bands need at least {minimum} draws, got {draws}.')


class ShapeMismatchError(AdssmError):
    """Raised when paired arrays disagree on their shapes."""


class InvalidArgumentError(AdssmError):
    """Raised when a numeric argument lies outside its valid range."""


class UndefinedMetricError(AdssmError):
    """Raised when a metric is undefined for its inputs, like a constant trace."""
