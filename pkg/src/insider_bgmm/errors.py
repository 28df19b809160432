"""Exception hierarchy shared by every stage."""

from __future__ import annotations


class InsiderBGMMError(Exception):
    """Base class for all package errors."""


class SchemaError(InsiderBGMMError):
    """A CSV header is missing a required column."""

    def __init__(self, column: str, path: object = None) -> None:
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing required column {column!r}{where}")
        self.column = column


class RowError(InsiderBGMMError):
    """A data row could not be parsed."""

    def __init__(self, line: int, message: str, path: object = None) -> None:
        where = f"{path}:" if path is not None else "line "
        super().__init__(f"{where}{line}: {message}")
        self.line = line


class VocabularyError(InsiderBGMMError):
    """An activity string outside the closed token vocabulary."""


class MissingVocabularyError(InsiderBGMMError):
    """A token has no vector in an embedding table."""

    def __init__(self, token: object) -> None:
        super().__init__(f"token {token!s} has no vector in the embedding table")
        self.token = token


class ConfigError(InsiderBGMMError, ValueError):
    """Invalid configuration value."""


class FitError(InsiderBGMMError):
    """A mixture fit could not proceed (too few points, singular covariance)."""


class DimensionError(InsiderBGMMError, ValueError):
    """Vector dimension does not match the model."""


class StageError(InsiderBGMMError):
    """A pipeline stage failed; carries the stage name and user id."""

    def __init__(self, stage: str, user: str | None, cause: BaseException) -> None:
        who = f" (user {user})" if user is not None else ""
        super().__init__(f"stage {stage!r} failed{who}: {cause}")
        self.stage = stage
        self.user = user
        self.cause = cause
