"""
Exception hierarchy for the navigation pipeline.
Every error raised on purpose by the package derives from NavMemError.
"""


class NavMemError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(NavMemError):
    """Unknown configuration key, bad value or bad preset."""


class SceneGenerationError(NavMemError):
    """Scene parameters could not produce a connected layout."""


class InvalidPoseError(NavMemError):
    """A pose lies inside a wall or outside the scene."""


class EpisodeDoneError(NavMemError):
    """An action was applied to an episode that already ended."""


class ShapeError(NavMemError):
    """Operands of a tensor op have incompatible shapes."""


class NonFiniteError(NavMemError):
    """A tensor op produced NaN or Inf while debug checks were on."""


class DatasetError(NavMemError):
    """A dataset cannot be built or does not match its contract."""


class MemoryScopeError(NavMemError):
    """An operation was applied to a memory buffer of the wrong scope."""


class EmptyMemoryError(NavMemError):
    """Attention was asked to attend over a fully masked memory."""


class TrainingDivergedError(NavMemError):
    """A loss became NaN or infinite during training."""


class WorkerError(NavMemError):
    """A rollout worker failed."""

    def __init__(self, worker_id: int, episode, cause: BaseException):
        self.worker_id = worker_id
        self.episode = episode
        self.cause = cause
        super().__init__(f"worker {worker_id} failed on episode {episode}: {cause}")


class StorageError(NavMemError):
    """An archive or artifact file is malformed or unsupported."""
