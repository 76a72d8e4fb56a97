"""
Exception Hierarchy
Every error carries the process exit code the CLI reports for it
"""
from typing import Optional


class CourseRecError(Exception):
    """Base error for the course recommendation toolkit"""

    exit_code: int = 1


class ConfigError(CourseRecError):
    """Invalid configuration key, value or hyperparameter"""

    exit_code = 2


class DataError(CourseRecError):
    """Problem with input data or stored models"""

    exit_code = 3


class TranscriptParseError(DataError):
    """Malformed transcript row"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownGradeError(TranscriptParseError):
    """Grade letter outside the 11-letter alphabet"""

    def __init__(self, line: int, letter: str):
        self.letter = letter
        super().__init__(line, f"unknown grade letter {letter!r}")


class MissingFileError(DataError):
    """Referenced input file does not exist"""

    def __init__(self, path):
        self.path = path
        super().__init__(f"file not found: {path}")


class VocabularyMismatchError(DataError):
    """Stored model does not match the corpus course table"""


class ModelFormatError(DataError):
    """Model container is corrupt or has an unsupported version"""


class EmptyProfileError(DataError):
    """No context course is known to the model"""


class RecommendationError(DataError):
    """Recommendation query violates its preconditions"""


class NumericError(CourseRecError):
    """Numeric failure during fitting"""

    exit_code = 4


class TrainingDivergenceError(NumericError):
    """Parameters became non-finite"""

    def __init__(self, epoch: int, step: Optional[int] = None, model: str = "model"):
        self.epoch = epoch
        self.step = step
        where = f"epoch {epoch}" if step is None else f"epoch {epoch}, step {step}"
        super().__init__(f"{model} diverged at {where}")
