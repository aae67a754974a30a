"""Exception hierarchy; ``category`` drives CLI exit codes and messages."""


class OwdetError(Exception):
    category = "error"
    exit_code = 1


class ParseError(OwdetError):
    category = "parse"
    exit_code = 3


class ValidationError(OwdetError, ValueError):
    category = "validation"
    exit_code = 4


class InvariantError(OwdetError):
    """An internal pipeline invariant was violated (an upstream bug)."""

    category = "invariant"
    exit_code = 5
