"""
Pipeline Errors
Purpose: One exception hierarchy for every stage of the human perception pipeline
Functions:
- Name the failure modes of geometry, anchors, fusion, tracking, filtering,
  re-identification, evaluation and file I/O
- Carry the CLI exit code (2 for bad input, 3 for stage failures)
"""

from typing import Optional


class PipelineError(Exception):
    """Base class for all pipeline errors"""
    exit_code = 3


# Input / file errors

class InputError(PipelineError):
    """Malformed or missing input"""
    exit_code = 2


class ParseError(InputError):
    """A line of an input file could not be parsed"""

    def __init__(self, line: int, message: str = "", path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line}: {message}" if message else f"{where}{line}")


class SchemaError(InputError):
    """A record parsed but violates its schema"""

    def __init__(self, field: str, message: str = "", line: Optional[int] = None):
        self.field = field
        self.line = line
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"invalid field '{field}'{location}: {message}")


# Geometry

class GeometryError(PipelineError):
    pass


class PointBehindCamera(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class DegenerateBaseline(GeometryError):
    pass


class ParallelRays(GeometryError):
    pass


# Detector support

class EmptyConfig(PipelineError):
    pass


class TooFewSamples(PipelineError):
    pass


class DomainError(PipelineError, ValueError):
    pass


# Fusion / tracking / filtering

class OutsideImage(PipelineError):
    pass


class NonMonotonicFrame(PipelineError):
    pass


class DegenerateWeights(PipelineError):
    """All particle likelihoods underflowed; the filter has diverged"""
    pass


# Re-identification

class EmptyForeground(PipelineError):
    pass


class LayoutMismatch(PipelineError):
    pass


# Evaluation

class EmptyGroundTruth(PipelineError):
    pass


class StageError(PipelineError):
    """A pipeline stage failed; partial outputs of earlier stages are kept"""
    exit_code = 3

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
