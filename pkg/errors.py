"""
Exception hierarchy for the viloc localization pipeline

Every error carries the process exit code the CLI reports for it:
- 1: usage error (argparse / invalid configuration)
- 2: data error (malformed input, degenerate geometry, empty data)
- 3: training divergence
"""

from typing import Optional


class VilocError(Exception):
    """Base class for all pipeline errors"""

    exit_code: int = 2


class DataError(VilocError):
    """Input data cannot be processed"""

    exit_code = 2


class MalformedRecord(DataError):
    """A JSONL line failed to parse or validate"""

    def __init__(self, line: int, reason: str, path: Optional[str] = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"Malformed record at {where}: {reason}")


class CheckpointError(DataError):
    """Checkpoint file is unreadable or from an incompatible version"""


class PointBehindCamera(DataError):
    """A point has camera-frame depth z <= 0"""


class DegenerateConfiguration(DataError):
    """P3P input points are collinear or their bearing rays coincide"""


class NoRealSolution(DataError):
    """The P3P quartic yielded no physically valid solution"""


class AllSubsetsDegenerate(DataError):
    """No 4-point subset of the reference points produced a usable pose"""


class CameraSeesNothing(DataError):
    """No pedestrian ever entered the camera field of view"""


class EmptyInput(DataError):
    """A statistic was requested over an empty sample"""


class NoCameraDetections(DataError):
    """Self-training found no window with a camera detection to associate with"""


class BatchTooSmall(DataError):
    """Batch normalization in training mode needs at least two samples"""


class DivergenceDetected(VilocError):
    """A training loss became non-finite"""

    exit_code = 3

    def __init__(self, epoch: int, losses: dict):
        self.epoch = epoch
        self.losses = losses
        super().__init__(f"Training diverged at epoch {epoch}: {losses}")
