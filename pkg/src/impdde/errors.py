"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value.

    ``time`` records where on the time axis the offending value appeared,
    when that is known.
    """

    def __init__(self, message: str, time: float | None = None):
        if time is not None:
            message = f"{message} (t = {time:.17g})"
        super().__init__(message)
        self.time = time
