"""
Exception hierarchy shared by every flowdistill module.

The CLI maps ConfigError and UsageError to exit code 1 and every other
FlowDistillError to exit code 2.
"""


class FlowDistillError(Exception):
    """Base class for all flowdistill errors."""


class ConfigError(FlowDistillError):
    """Malformed, unknown-key, wrong-version or invalid configuration."""


class UsageError(FlowDistillError):
    """Bad command-line usage or a missing input path."""


class ShapeError(FlowDistillError, ValueError):
    """Operand shapes or aligned lengths do not agree."""


class EmptyCloudError(FlowDistillError, ValueError):
    """An operation received (or would produce) an empty point cloud."""


class ConfigMismatchError(FlowDistillError):
    """A model's configuration does not match the data it is applied to."""


class FormatError(FlowDistillError):
    """A binary artifact has a bad magic, version or length."""


class DivergenceError(FlowDistillError):
    """An optimization produced a non-finite loss."""

    def __init__(self, message: str, iteration: int = None, epoch: int = None, batch: int = None):
        self.iteration = iteration
        self.epoch = epoch
        self.batch = batch
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        suffix = f" (at {', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class StageError(FlowDistillError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"Stage '{stage}' failed: {message}")


class CacheCorruptionError(FlowDistillError):
    """A cached artifact no longer matches its recorded checksum."""


class SeedFailureError(FlowDistillError):
    """Training for one seed of a multi-seed report failed."""

    def __init__(self, seed: int, message: str):
        self.seed = seed
        super().__init__(f"Training for seed {seed} failed: {message}")
