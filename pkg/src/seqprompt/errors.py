"""Exception types shared across the package."""


class SeqPromptError(Exception):
    """Base class for all package errors."""


class DimensionError(SeqPromptError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SeqPromptError, RuntimeError):
    """A precondition of an operation was violated."""


class ConfigError(SeqPromptError, ValueError):
    """A configuration value is invalid."""


class NumericError(SeqPromptError, ArithmeticError):
    """NaN input or an unsolvable linear system."""


class ProtocolError(SeqPromptError, RuntimeError):
    """The class-incremental session protocol was broken."""


class ParseError(SeqPromptError, ValueError):
    """A serialized file is malformed or truncated."""
